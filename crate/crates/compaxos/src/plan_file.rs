use std::fs;
use std::path::Path;

use compaxos_core::config::{validate_plan, DeploymentPlan, PlanError, Selection};
use compaxos_core::eval::WorkloadSpec;
use compaxos_core::sim::{CapacityModel, Fault, NetModel, Scenario, TimerConfig};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// On-disk experiment description: plan fields at the top level, everything
/// else in named sections. Missing fields take their defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlanFile {
    #[serde(flatten)]
    pub plan: DeploymentPlan,
    pub workload: WorkloadSpec,
    pub net: NetModel,
    pub capacity: CapacityModel,
    pub timers: TimerConfig,
    pub faults: Vec<Fault>,
    pub selection: Selection,
    pub seed: u64,
    pub duration: u64,
    pub warmup: u64,
}

impl Default for PlanFile {
    fn default() -> Self {
        PlanFile::from_scenario(&Scenario::default())
    }
}

#[derive(Debug, Error)]
pub enum PlanFileError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Parse { path: String, source: serde_json::Error },
    #[error(transparent)]
    Plan(#[from] PlanError),
}

impl PlanFile {
    pub fn from_scenario(sc: &Scenario) -> Self {
        PlanFile {
            plan: sc.plan.clone(),
            workload: sc.workload.clone(),
            net: sc.net.clone(),
            capacity: sc.capacity.clone(),
            timers: sc.timers.clone(),
            faults: sc.faults.clone(),
            selection: sc.selection,
            seed: sc.seed,
            duration: sc.duration,
            warmup: sc.warmup,
        }
    }

    pub fn parse(text: &str, path: &str) -> Result<Self, PlanFileError> {
        let pf: PlanFile = serde_json::from_str(text).map_err(|source| PlanFileError::Parse { path: path.into(), source })?;
        validate_plan(pf.plan.clone())?;
        Ok(pf)
    }

    /// Reads and validates a plan file.
    pub fn load(path: &Path) -> Result<Self, PlanFileError> {
        let p = path.display().to_string();
        let text = fs::read_to_string(path).map_err(|source| PlanFileError::Io { path: p.clone(), source })?;
        Self::parse(&text, &p)
    }

    pub fn scenario(&self) -> Scenario {
        Scenario {
            plan: self.plan.clone(),
            workload: self.workload.clone(),
            net: self.net.clone(),
            capacity: self.capacity.clone(),
            timers: self.timers.clone(),
            faults: self.faults.clone(),
            selection: self.selection,
            seed: self.seed,
            duration: self.duration,
            warmup: self.warmup,
            record_trace: true,
        }
    }
}
