use std::io::Write;

use compaxos_core::config::{DeploymentPlan, Variant};
use compaxos_core::eval::AblationRow;
use compaxos_core::sim::{Metrics, Scenario};
use serde::Serialize;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsRow {
    pub variant: &'static str,
    pub clients: u32,
    pub readfrac: f64,
    pub replicas: u32,
    pub rows: u32,
    pub cols: u32,
    pub proxies: u32,
    /// 1 when batching is off.
    pub batch: u32,
    pub throughput: f64,
    pub p50: u64,
    pub p99: u64,
}

fn variant_name(v: Variant) -> &'static str {
    match v {
        Variant::Coupled => "coupled",
        Variant::Compartmentalized => "compartmentalized",
    }
}

impl MetricsRow {
    pub fn new(plan: &DeploymentPlan, sc: &Scenario, throughput: f64, p50: u64, p99: u64) -> Self {
        MetricsRow {
            variant: variant_name(plan.variant),
            clients: sc.workload.num_clients,
            readfrac: sc.workload.read_fraction,
            replicas: plan.num_replicas,
            rows: plan.grid_rows,
            cols: plan.grid_cols,
            proxies: plan.proxy_count(),
            batch: if plan.batching_enabled { plan.batch_size } else { 1 },
            throughput,
            p50,
            p99,
        }
    }

    pub fn from_run(sc: &Scenario, m: &Metrics) -> Self {
        Self::new(&sc.plan, sc, m.throughput, m.p50, m.p99)
    }
}

pub fn write_metrics<W: Write>(w: W, rows: &[MetricsRow]) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

/// One row per step at its peak client count.
pub fn write_ablation<W: Write>(w: W, base: &Scenario, rows: &[AblationRow]) -> csv::Result<()> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    out.write_record([
        "step", "name", "variant", "clients", "readfrac", "replicas", "rows", "cols", "proxies", "batch", "throughput", "p50", "p99",
    ])?;
    for r in rows {
        let mut sc = base.clone();
        sc.workload.num_clients = r.peak.clients;
        let metrics = MetricsRow::new(&r.plan, &sc, r.peak.throughput, r.peak.p50, r.peak.p99);
        out.serialize((r.step, &r.name, metrics))?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_is_fixed() {
        let sc = Scenario::default();
        let mut buf = Vec::new();
        write_metrics(&mut buf, &[MetricsRow::from_run(&sc, &Metrics { throughput: 0.5, p50: 3, p99: 9, ..Metrics::default() })]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("variant,clients,readfrac,replicas,rows,cols,proxies,batch,throughput,p50,p99"));
        assert_eq!(lines.next(), Some("compartmentalized,5,0.0,4,2,2,10,1,0.5,3,9"));
    }
}
