//! Shared vocabulary: log slots, ballots, commands, and the deployment plan.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quorums::{GridQuorumSystem, MajorityQuorumSystem, QuorumSystem};

/// A position in the replicated log.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Slot(pub u64);

impl Slot {
    pub fn next(self) -> Slot {
        Slot(self.0 + 1)
    }
}

impl fmt::Display for Slot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// The largest slot some process has seen (voted in, executed, observed).
/// `-1` means none.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Watermark(pub i64);

impl Watermark {
    pub const NONE: Watermark = Watermark(-1);

    pub fn at(slot: Slot) -> Watermark {
        Watermark(slot.0 as i64)
    }

    /// True if every slot up to and including `slot` is below the mark.
    pub fn covers(self, slot: Slot) -> bool {
        self.0 >= slot.0 as i64
    }

    pub fn covers_mark(self, other: Watermark) -> bool {
        self.0 >= other.0
    }

    /// The first slot above the mark.
    pub fn next_slot(self) -> Slot {
        Slot((self.0 + 1) as u64)
    }

    pub fn slot(self) -> Option<Slot> {
        (self.0 >= 0).then_some(Slot(self.0 as u64))
    }
}

impl Default for Watermark {
    fn default() -> Self {
        Watermark::NONE
    }
}

impl fmt::Display for Watermark {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Proposal round identifier. Ordered by `(round, proposer)`; proposers own
/// disjoint ballots so no coordination is needed to pick a fresh one.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Ballot {
    pub round: u64,
    pub proposer: u32,
}

impl Ballot {
    pub fn new(round: u64, proposer: u32) -> Self {
        Ballot { round, proposer }
    }

    /// The smallest ballot owned by `proposer` that is above `self`.
    pub fn successor_for(self, proposer: u32) -> Ballot {
        if proposer > self.proposer {
            Ballot::new(self.round, proposer)
        } else {
            Ballot::new(self.round + 1, proposer)
        }
    }
}

impl fmt::Display for Ballot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.round, self.proposer)
    }
}

pub fn ballot_compare(a: &Ballot, b: &Ballot) -> Ordering {
    a.cmp(b)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClientId(pub u32);

impl fmt::Display for ClientId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "c{}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Op {
    Write { key: String, value: String },
    Read { key: String },
    Noop,
}

impl Op {
    pub fn is_read(&self) -> bool {
        matches!(self, Op::Read { .. })
    }

    pub fn key(&self) -> Option<&str> {
        match self {
            Op::Write { key, .. } | Op::Read { key } => Some(key),
            Op::Noop => None,
        }
    }
}

/// A client operation. `(client, seq)` is unique across a run.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Command {
    pub client: ClientId,
    pub seq: u64,
    pub op: Op,
}

impl Command {
    pub fn write(client: u32, seq: u64, key: impl Into<String>, value: impl Into<String>) -> Self {
        Command {
            client: ClientId(client),
            seq,
            op: Op::Write { key: key.into(), value: value.into() },
        }
    }

    pub fn read(client: u32, seq: u64, key: impl Into<String>) -> Self {
        Command { client: ClientId(client), seq, op: Op::Read { key: key.into() } }
    }

    pub fn noop() -> Self {
        Command { client: ClientId(u32::MAX), seq: 0, op: Op::Noop }
    }

    pub fn is_noop(&self) -> bool {
        matches!(self.op, Op::Noop)
    }
}

/// The unit chosen in a log slot.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Batch {
    pub commands: Vec<Command>,
}

impl Batch {
    pub fn new(commands: Vec<Command>) -> Self {
        Batch { commands }
    }

    pub fn single(command: Command) -> Self {
        Batch { commands: vec![command] }
    }

    pub fn noop() -> Self {
        Batch::single(Command::noop())
    }

    pub fn len(&self) -> usize {
        self.commands.len()
    }

    pub fn is_empty(&self) -> bool {
        self.commands.is_empty()
    }

    pub fn is_noop(&self) -> bool {
        self.commands.iter().all(Command::is_noop)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Classic MultiPaxos: the leader broadcasts, 2f+1 acceptors, majority quorums.
    Coupled,
    #[default]
    Compartmentalized,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Coupled => "coupled",
            Variant::Compartmentalized => "compartmentalized",
        })
    }
}

/// How a role picks one of several equivalent targets (proxy leader, row,
/// replica, unbatcher).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// Uniform draws from the role's seeded generator.
    #[default]
    Random,
    RoundRobin,
}

impl Selection {
    /// Picks an index in `0..n`. `cursor` advances on every call.
    pub fn pick<R: Rng + ?Sized>(&self, n: u32, cursor: &mut u64, rng: &mut R) -> u32 {
        assert!(n > 0, "nothing to pick from");
        let i = match self {
            Selection::Random => rng.gen_range(0..n),
            Selection::RoundRobin => (*cursor % u64::from(n)) as u32,
        };
        *cursor = cursor.wrapping_add(1);
        i
    }
}

/// Counts and topology of every role.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeploymentPlan {
    pub f: u32,
    pub num_proposers: u32,
    pub num_proxy_leaders: u32,
    pub grid_rows: u32,
    pub grid_cols: u32,
    pub num_replicas: u32,
    pub num_batchers: u32,
    pub num_unbatchers: u32,
    pub batching_enabled: bool,
    pub batch_size: u32,
    pub batch_timeout: u64,
    pub variant: Variant,
}

impl Default for DeploymentPlan {
    fn default() -> Self {
        DeploymentPlan {
            f: 1,
            num_proposers: 2,
            num_proxy_leaders: 10,
            grid_rows: 2,
            grid_cols: 2,
            num_replicas: 4,
            num_batchers: 2,
            num_unbatchers: 2,
            batching_enabled: false,
            batch_size: 10,
            batch_timeout: 10,
            variant: Variant::Compartmentalized,
        }
    }
}

impl DeploymentPlan {
    /// The coupled MultiPaxos baseline with `2f+1` of everything.
    pub fn coupled(f: u32) -> Self {
        DeploymentPlan {
            f,
            num_proposers: f + 1,
            num_proxy_leaders: 0,
            grid_rows: 0,
            grid_cols: 0,
            num_replicas: 2 * f + 1,
            num_batchers: 0,
            num_unbatchers: 0,
            batching_enabled: false,
            variant: Variant::Coupled,
            ..DeploymentPlan::default()
        }
    }

    /// A compartmentalized deployment at the minimum role counts for `f`.
    pub fn minimal(f: u32) -> Self {
        DeploymentPlan {
            f,
            num_proposers: f + 1,
            num_proxy_leaders: f + 1,
            grid_rows: f + 1,
            grid_cols: f + 1,
            num_replicas: f + 1,
            num_batchers: f + 1,
            num_unbatchers: f + 1,
            ..DeploymentPlan::default()
        }
    }

    pub fn num_acceptors(&self) -> u32 {
        match self.variant {
            Variant::Coupled => 2 * self.f + 1,
            Variant::Compartmentalized => self.grid_rows * self.grid_cols,
        }
    }

    /// Proxy leaders actually deployed. The coupled leader does its own broadcasting.
    pub fn proxy_count(&self) -> u32 {
        match self.variant {
            Variant::Coupled => 0,
            Variant::Compartmentalized => self.num_proxy_leaders,
        }
    }

    pub fn batcher_count(&self) -> u32 {
        if self.uses_batching() { self.num_batchers } else { 0 }
    }

    pub fn unbatcher_count(&self) -> u32 {
        if self.uses_batching() { self.num_unbatchers } else { 0 }
    }

    pub fn uses_batching(&self) -> bool {
        self.batching_enabled && self.variant == Variant::Compartmentalized
    }

    pub fn quorum_system(&self) -> QuorumSystem {
        match self.variant {
            Variant::Coupled => QuorumSystem::Majority(MajorityQuorumSystem::new(self.f)),
            Variant::Compartmentalized => {
                QuorumSystem::Grid(GridQuorumSystem::new(self.grid_rows, self.grid_cols))
            }
        }
    }

    /// Every bound this plan violates, in field order.
    pub fn violations(&self) -> Vec<PlanError> {
        let mut out = Vec::new();
        let f = self.f;
        if f < 1 {
            out.push(PlanError::FaultToleranceBelowMinimum { got: f, min: 1 });
        }
        let min = f + 1;
        if self.num_proposers < min {
            out.push(PlanError::ProposersBelowMinimum { got: self.num_proposers, min });
        }
        if self.variant == Variant::Compartmentalized {
            if self.num_proxy_leaders < min {
                out.push(PlanError::ProxyLeadersBelowMinimum { got: self.num_proxy_leaders, min });
            }
            if self.grid_rows < min {
                out.push(PlanError::GridRowsBelowMinimum { got: self.grid_rows, min });
            }
            if self.grid_cols < min {
                out.push(PlanError::GridColsBelowMinimum { got: self.grid_cols, min });
            }
        }
        if self.num_replicas < min {
            out.push(PlanError::ReplicasBelowMinimum { got: self.num_replicas, min });
        }
        if self.batching_enabled {
            if self.variant == Variant::Coupled {
                out.push(PlanError::BatchingUnsupported);
            } else {
                if self.num_batchers < min {
                    out.push(PlanError::BatchersBelowMinimum { got: self.num_batchers, min });
                }
                if self.num_unbatchers < min {
                    out.push(PlanError::UnbatchersBelowMinimum { got: self.num_unbatchers, min });
                }
                if self.batch_size == 0 {
                    out.push(PlanError::BatchSizeZero);
                }
            }
        }
        out
    }
}

/// A violated deployment bound. The `Display` form starts with the variant
/// name and names the offending plan field.
#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum PlanError {
    #[error("FaultToleranceBelowMinimum: f = {got}, need at least {min}")]
    FaultToleranceBelowMinimum { got: u32, min: u32 },
    #[error("ProposersBelowMinimum: num_proposers = {got}, need at least {min}")]
    ProposersBelowMinimum { got: u32, min: u32 },
    #[error("ProxyLeadersBelowMinimum: num_proxy_leaders = {got}, need at least {min}")]
    ProxyLeadersBelowMinimum { got: u32, min: u32 },
    #[error("GridRowsBelowMinimum: grid_rows = {got}, need at least {min}")]
    GridRowsBelowMinimum { got: u32, min: u32 },
    #[error("GridColsBelowMinimum: grid_cols = {got}, need at least {min}")]
    GridColsBelowMinimum { got: u32, min: u32 },
    #[error("ReplicasBelowMinimum: num_replicas = {got}, need at least {min}")]
    ReplicasBelowMinimum { got: u32, min: u32 },
    #[error("BatchersBelowMinimum: num_batchers = {got}, need at least {min}")]
    BatchersBelowMinimum { got: u32, min: u32 },
    #[error("UnbatchersBelowMinimum: num_unbatchers = {got}, need at least {min}")]
    UnbatchersBelowMinimum { got: u32, min: u32 },
    #[error("BatchSizeZero: batch_size must be at least 1 when batching_enabled")]
    BatchSizeZero,
    #[error("BatchingUnsupported: batching_enabled requires variant = compartmentalized")]
    BatchingUnsupported,
}

impl PlanError {
    pub fn field(&self) -> &'static str {
        match self {
            PlanError::FaultToleranceBelowMinimum { .. } => "f",
            PlanError::ProposersBelowMinimum { .. } => "num_proposers",
            PlanError::ProxyLeadersBelowMinimum { .. } => "num_proxy_leaders",
            PlanError::GridRowsBelowMinimum { .. } => "grid_rows",
            PlanError::GridColsBelowMinimum { .. } => "grid_cols",
            PlanError::ReplicasBelowMinimum { .. } => "num_replicas",
            PlanError::BatchersBelowMinimum { .. } => "num_batchers",
            PlanError::UnbatchersBelowMinimum { .. } => "num_unbatchers",
            PlanError::BatchSizeZero => "batch_size",
            PlanError::BatchingUnsupported => "batching_enabled",
        }
    }
}

/// Returns the plan unchanged if every bound holds, else the first violation.
pub fn validate_plan(plan: DeploymentPlan) -> Result<DeploymentPlan, PlanError> {
    match plan.violations().into_iter().next() {
        Some(err) => Err(err),
        None => Ok(plan),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eval_deployment() -> DeploymentPlan {
        DeploymentPlan {
            f: 1,
            num_proposers: 2,
            num_proxy_leaders: 10,
            grid_rows: 2,
            grid_cols: 2,
            num_replicas: 4,
            ..DeploymentPlan::default()
        }
    }

    #[test]
    fn evaluation_deployment_is_valid() {
        assert_eq!(validate_plan(eval_deployment()), Ok(eval_deployment()));
    }

    #[test]
    fn one_row_grid_is_rejected() {
        let plan = DeploymentPlan { grid_rows: 1, grid_cols: 3, ..eval_deployment() };
        let err = validate_plan(plan).unwrap_err();
        assert_eq!(err, PlanError::GridRowsBelowMinimum { got: 1, min: 2 });
        assert_eq!(err.field(), "grid_rows");
    }

    #[test]
    fn exact_minimums_for_f2() {
        let plan = DeploymentPlan {
            f: 2,
            num_proposers: 3,
            num_proxy_leaders: 3,
            grid_rows: 3,
            grid_cols: 3,
            num_replicas: 3,
            ..DeploymentPlan::default()
        };
        assert!(validate_plan(plan).is_ok());
    }

    #[test]
    fn coupled_ignores_grid_and_proxies() {
        let plan = DeploymentPlan::coupled(1);
        assert!(validate_plan(plan.clone()).is_ok());
        assert_eq!(plan.num_acceptors(), 3);
        let batched = DeploymentPlan { batching_enabled: true, ..plan };
        assert_eq!(validate_plan(batched), Err(PlanError::BatchingUnsupported));
    }

    #[test]
    fn acceptance_matches_bounds_exhaustively() {
        for f in 1..=3u32 {
            for proposers in 0..=f + 2 {
                for rows in 0..=f + 2 {
                    for cols in 0..=f + 2 {
                        for replicas in [f, f + 1] {
                            for (batching, batchers) in [(false, 0), (true, f), (true, f + 1)] {
                                let plan = DeploymentPlan {
                                    f,
                                    num_proposers: proposers,
                                    num_proxy_leaders: f + 1,
                                    grid_rows: rows,
                                    grid_cols: cols,
                                    num_replicas: replicas,
                                    num_batchers: batchers,
                                    num_unbatchers: f + 1,
                                    batching_enabled: batching,
                                    ..DeploymentPlan::default()
                                };
                                let expected = proposers > f
                                    && rows > f
                                    && cols > f
                                    && replicas > f
                                    && (!batching || batchers > f);
                                assert_eq!(validate_plan(plan).is_ok(), expected);
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn ballot_ordering_examples() {
        assert_eq!(ballot_compare(&Ballot::new(0, 0), &Ballot::new(0, 0)), Ordering::Equal);
        assert_eq!(ballot_compare(&Ballot::new(1, 0), &Ballot::new(0, 5)), Ordering::Greater);
        assert_eq!(ballot_compare(&Ballot::new(2, 1), &Ballot::new(2, 3)), Ordering::Less);
    }

    #[test]
    fn successor_is_strictly_greater() {
        let b = Ballot::new(3, 2);
        assert!(b.successor_for(1) > b);
        assert!(b.successor_for(2) > b);
        assert!(b.successor_for(5) > b);
        assert_eq!(b.successor_for(5), Ballot::new(3, 5));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn ballot() -> impl Strategy<Value = Ballot> {
            (0u64..6, 0u32..4).prop_map(|(r, p)| Ballot::new(r, p))
        }

        proptest! {
            #[test]
            fn ballot_order_is_total(a in ballot(), b in ballot(), c in ballot()) {
                let ab = ballot_compare(&a, &b);
                prop_assert_eq!(ab, ballot_compare(&b, &a).reverse());
                if ab == Ordering::Equal {
                    prop_assert_eq!(a, b);
                }
                if ab != Ordering::Greater && ballot_compare(&b, &c) != Ordering::Greater {
                    prop_assert_ne!(ballot_compare(&a, &c), Ordering::Greater);
                }
                prop_assert_eq!(ab, (a.round, a.proposer).cmp(&(b.round, b.proposer)));
            }
        }
    }
}
