//! Workloads, the closed-form read-scaling model, and the ablation driver.

pub mod ablation;
pub mod model;
pub mod workload;

pub use ablation::{run_ablation, AblationError, AblationRow, AblationStep, PlanDelta};
pub use model::{analytical_peak_throughput, throughput_limit, ModelError, ModelParams, ThroughputLimit};
pub use workload::{generate_ops, OpGenerator, OpSource, WorkloadError, WorkloadSpec};
