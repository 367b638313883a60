use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{validate_plan, DeploymentPlan, Variant};
use crate::sim::{measure_peak_throughput, peak, CurvePoint, Scenario, SimError};

/// Fields to overwrite on the previous step's plan. Unset fields carry over.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlanDelta {
    pub variant: Option<Variant>,
    pub f: Option<u32>,
    pub num_proposers: Option<u32>,
    pub num_proxy_leaders: Option<u32>,
    pub grid_rows: Option<u32>,
    pub grid_cols: Option<u32>,
    pub num_replicas: Option<u32>,
    pub batching_enabled: Option<bool>,
    pub batch_size: Option<u32>,
}

impl PlanDelta {
    pub fn apply(&self, plan: &DeploymentPlan) -> DeploymentPlan {
        let mut p = plan.clone();
        macro_rules! set {
            ($($field:ident),*) => { $( if let Some(v) = self.$field { p.$field = v; } )* };
        }
        set!(variant, f, num_proposers, num_proxy_leaders, grid_rows, grid_cols, num_replicas, batching_enabled, batch_size);
        p
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationStep {
    pub name: String,
    #[serde(flatten)]
    pub delta: PlanDelta,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub step: usize,
    pub name: String,
    pub plan: DeploymentPlan,
    pub peak: CurvePoint,
    pub curve: Vec<CurvePoint>,
}

#[derive(Clone, Debug, PartialEq, Error)]
#[error("step {step}: {source}")]
pub struct AblationError {
    pub step: usize,
    pub source: SimError,
}

/// Applies each step cumulatively to the base plan and measures its peak.
/// Every step plan is validated before anything runs.
pub fn run_ablation(base: &Scenario, steps: &[AblationStep], client_counts: &[u32]) -> Result<Vec<AblationRow>, AblationError> {
    let mut plans = Vec::with_capacity(steps.len());
    let mut plan = base.plan.clone();
    for (step, s) in steps.iter().enumerate() {
        plan = s.delta.apply(&plan);
        validate_plan(plan.clone()).map_err(|e| AblationError { step, source: e.into() })?;
        plans.push(plan.clone());
    }
    let mut rows = Vec::with_capacity(steps.len());
    for (step, (s, plan)) in steps.iter().zip(plans).enumerate() {
        let mut sc = base.clone();
        sc.plan = plan.clone();
        let curve = measure_peak_throughput(&sc, client_counts).map_err(|source| AblationError { step, source })?;
        let best = peak(&curve).ok_or(AblationError { step, source: SimError::Net(String::from("no client counts")) })?;
        rows.push(AblationRow { step, name: s.name.clone(), plan, peak: best, curve });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::PlanError;
    use alloc::vec;

    #[test]
    fn deltas_accumulate() {
        let a = PlanDelta { num_proxy_leaders: Some(3), ..PlanDelta::default() };
        let b = PlanDelta { num_replicas: Some(5), ..PlanDelta::default() };
        let p = b.apply(&a.apply(&DeploymentPlan::default()));
        assert_eq!((p.num_proxy_leaders, p.num_replicas, p.grid_rows), (3, 5, 2));
    }

    #[test]
    fn invalid_step_aborts_with_its_index() {
        let steps = vec![
            AblationStep { name: String::from("ok"), delta: PlanDelta::default() },
            AblationStep { name: String::from("bad"), delta: PlanDelta { num_replicas: Some(1), ..PlanDelta::default() } },
        ];
        let err = run_ablation(&Scenario::default(), &steps, &[1]).unwrap_err();
        assert_eq!(err.step, 1);
        assert!(matches!(err.source, SimError::Plan(PlanError::ReplicasBelowMinimum { .. })));
    }
}
