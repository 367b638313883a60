//! File formats, the experiment CLI plumbing, and a loopback socket
//! deployment for `compaxos-core`.

pub mod drive;
pub mod frame;
pub mod history_io;
pub mod metrics_csv;
pub mod plan_file;
pub mod serve;

pub use plan_file::{PlanFile, PlanFileError};
