//! Linearizability and sequential-consistency checking of client
//! histories, plus trace audits of simulated runs.

mod audit;
mod history;
mod search;

pub use audit::{audit_trace, AuditCheck, AuditReport};
pub use history::{EventKind, History, HistoryEvent, HistoryOp, MalformedHistory, Operation};
pub use search::{
    check_history, check_linearizable, check_sequential, describe, CheckError, CheckMode, OpRef, Verdict,
    DEFAULT_OP_BOUND,
};
