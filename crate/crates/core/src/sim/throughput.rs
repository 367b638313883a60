use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{run_simulation, Scenario, SimError};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub clients: u32,
    pub throughput: f64,
    pub p50: u64,
    pub p99: u64,
}

/// Closed-loop throughput and latency at each client count.
pub fn measure_peak_throughput(base: &Scenario, client_counts: &[u32]) -> Result<Vec<CurvePoint>, SimError> {
    client_counts
        .iter()
        .map(|&clients| {
            let mut sc = base.clone();
            sc.workload.num_clients = clients;
            sc.record_trace = false;
            let out = run_simulation(&sc)?;
            Ok(CurvePoint { clients, throughput: out.metrics.throughput, p50: out.metrics.p50, p99: out.metrics.p99 })
        })
        .collect()
}

/// Highest throughput point of a curve.
pub fn peak(curve: &[CurvePoint]) -> Option<CurvePoint> {
    curve.iter().copied().max_by(|a, b| a.throughput.total_cmp(&b.throughput))
}
