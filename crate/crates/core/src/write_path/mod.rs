//! Leader, proxy leader, and acceptor state machines: Phase 1, Phase 2, and
//! chosen-value dissemination.
//!
//! Every handler is deterministic given its inputs and the role's seeded
//! generator. Handlers write sends, timer requests, and trace observations
//! into an [`Outbox`](crate::message::Outbox).

mod acceptor;
mod leader;
mod proxy;

pub use acceptor::AcceptorState;
pub use leader::{recover_log, LeaderConfig, LeaderError, LeaderState, Phase, Phase1Progress, Submit};
pub use proxy::{PendingPhase2, ProxyLeaderState, RetryOutcome};
