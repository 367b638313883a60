//! Seeded discrete-event simulation of a whole deployment.
//!
//! Events run in `(time, insertion order)` order, every node owns a
//! ChaCha8 stream derived from the run seed, and all maps are ordered, so a
//! run is a pure function of its [`Scenario`].

mod engine;
mod throughput;

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checker::History;
use crate::config::{Batch, ClientId, DeploymentPlan, PlanError, Selection, Slot, Watermark};
use crate::eval::workload::{WorkloadError, WorkloadSpec};
use crate::message::{MessageKind, NodeId, RoleKind};
use crate::read_path::ReadConsistency;

pub use engine::run_simulation;
pub use throughput::{measure_peak_throughput, peak, CurvePoint};

/// Drop probability override for messages from one role class to another.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkDrop {
    pub from: RoleKind,
    pub to: RoleKind,
    pub drop: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetModel {
    pub delay_min: u64,
    pub delay_max: u64,
    pub drop: f64,
    pub links: Vec<LinkDrop>,
    pub duplicate: f64,
    /// When off, each directed link delivers in send order.
    pub reorder: bool,
}

impl Default for NetModel {
    fn default() -> Self {
        NetModel { delay_min: 1, delay_max: 5, drop: 0.0, links: Vec::new(), duplicate: 0.0, reorder: true }
    }
}

impl NetModel {
    pub fn drop_for(&self, from: RoleKind, to: RoleKind) -> f64 {
        self.links.iter().rev().find(|l| l.from == from && l.to == to).map_or(self.drop, |l| l.drop)
    }

    pub fn is_lossless(&self) -> bool {
        self.drop == 0.0 && self.duplicate == 0.0 && self.links.iter().all(|l| l.drop == 0.0)
    }
}

/// Service time charged to a node's machine for one handler run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RoleCost {
    pub per_message: u64,
    pub per_command: u64,
    pub per_send: u64,
}

/// Every machine is a single FIFO server. Zero costs everywhere means
/// throughput is bounded only by latency.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CapacityModel {
    pub proposer: RoleCost,
    pub proxy_leader: RoleCost,
    pub acceptor: RoleCost,
    pub replica: RoleCost,
    pub batcher: RoleCost,
    pub unbatcher: RoleCost,
    pub client: RoleCost,
}

impl CapacityModel {
    pub fn cost(&self, role: RoleKind) -> RoleCost {
        match role {
            RoleKind::Proposer => self.proposer,
            RoleKind::ProxyLeader => self.proxy_leader,
            RoleKind::Acceptor => self.acceptor,
            RoleKind::Replica => self.replica,
            RoleKind::Batcher => self.batcher,
            RoleKind::Unbatcher => self.unbatcher,
            RoleKind::Client => self.client,
        }
    }
}

/// Protocol timeouts in ticks. `None` disables a timer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TimerConfig {
    pub client_retry: Option<u64>,
    pub proxy_retry: Option<u64>,
    pub phase1_retry: Option<u64>,
    pub replica_recover: Option<u64>,
    pub read_retry: Option<u64>,
}

impl Default for TimerConfig {
    fn default() -> Self {
        TimerConfig {
            client_retry: Some(400),
            proxy_retry: Some(100),
            phase1_retry: Some(100),
            replica_recover: Some(200),
            read_retry: Some(100),
        }
    }
}

impl TimerConfig {
    pub fn disabled() -> Self {
        TimerConfig { client_retry: None, proxy_retry: None, phase1_retry: None, replica_recover: None, read_retry: None }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FaultKind {
    /// Crash-stop: the node never handles another event.
    Crash { node: NodeId },
    /// Nodes listed in different groups cannot talk. Unlisted nodes reach everyone.
    Partition { groups: Vec<Vec<NodeId>> },
    Heal,
    /// Crashes the current leader and elects `standby` (default: the lowest
    /// live proposer).
    LeaderFailover {
        #[serde(default)]
        standby: Option<u32>,
    },
    /// Starts Phase 1 on `proposer` without crashing anyone.
    Elect { proposer: u32 },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fault {
    pub at: u64,
    #[serde(flatten)]
    pub kind: FaultKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Scenario {
    pub plan: DeploymentPlan,
    pub workload: WorkloadSpec,
    pub net: NetModel,
    pub capacity: CapacityModel,
    pub timers: TimerConfig,
    pub faults: Vec<Fault>,
    pub selection: Selection,
    pub seed: u64,
    pub duration: u64,
    /// Completions before this time are excluded from throughput and latency.
    pub warmup: u64,
    /// Keep per-event observations for auditing.
    pub record_trace: bool,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            plan: DeploymentPlan::default(),
            workload: WorkloadSpec::default(),
            net: NetModel::default(),
            capacity: CapacityModel::default(),
            timers: TimerConfig::default(),
            faults: Vec::new(),
            selection: Selection::Random,
            seed: 0,
            duration: 1_000_000,
            warmup: 0,
            record_trace: true,
        }
    }
}

/// Schedules a crash of the current leader at `at`, followed by Phase 1 on a standby.
pub fn inject_leader_failover(scenario: &mut Scenario, at: u64) {
    scenario.faults.push(Fault { at, kind: FaultKind::LeaderFailover { standby: None } });
}

#[derive(Clone, Debug, PartialEq, Error)]
pub enum SimError {
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error("net: {0}")]
    Net(String),
    #[error("failover needs at least 2 proposers")]
    FailoverWithoutStandby,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeCounters {
    pub messages_in: u64,
    pub messages_out: u64,
    pub commands_in: u64,
    pub in_by_kind: BTreeMap<MessageKind, u64>,
    pub out_by_kind: BTreeMap<MessageKind, u64>,
}

impl NodeCounters {
    pub fn kind_in(&self, k: MessageKind) -> u64 {
        self.in_by_kind.get(&k).copied().unwrap_or(0)
    }

    pub fn kind_out(&self, k: MessageKind) -> u64 {
        self.out_by_kind.get(&k).copied().unwrap_or(0)
    }

    /// Messages in plus out, excluding leader election traffic.
    pub fn steady_state_total(&self) -> u64 {
        let election = |m: &BTreeMap<MessageKind, u64>| m.iter().filter(|(k, _)| k.is_election()).map(|(_, v)| v).sum::<u64>();
        self.messages_in + self.messages_out - election(&self.in_by_kind) - election(&self.out_by_kind)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceCounters {
    pub nodes: BTreeMap<NodeId, NodeCounters>,
    pub sent: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub duplicated: u64,
    pub events: u64,
}

impl TraceCounters {
    pub fn node(&self, id: NodeId) -> NodeCounters {
        self.nodes.get(&id).cloned().unwrap_or_default()
    }
}

/// A trace-relevant fact with the time and node it happened at.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceEvent {
    pub t: u64,
    pub node: NodeId,
    pub obs: crate::message::Observation,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub completed: u64,
    pub window_completed: u64,
    /// Completions per tick inside the measurement window.
    pub throughput: f64,
    pub p50: u64,
    pub p99: u64,
    pub end_time: u64,
    pub zero_throughput: bool,
    pub incomplete_clients: u32,
    pub buffered_reads: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Conflict {
    pub slot: Slot,
    pub first: Batch,
    pub second: Batch,
}

/// Final replica state, kept for audits.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReplicaSummary {
    pub index: u32,
    pub executed: Watermark,
    pub crashed: bool,
}

#[derive(Clone, Debug)]
pub struct SimOutput {
    pub history: History,
    pub counters: TraceCounters,
    pub metrics: Metrics,
    /// First certified value per slot.
    pub chosen: BTreeMap<Slot, Batch>,
    pub conflicts: Vec<Conflict>,
    pub trace: Vec<TraceEvent>,
    pub replicas: Vec<ReplicaSummary>,
    /// Per client, slot indices carried by its completed replies, in order.
    pub observed_slots: BTreeMap<ClientId, Vec<Watermark>>,
    pub plan: DeploymentPlan,
    pub faults_injected: bool,
    pub lossless: bool,
    pub read_consistency: ReadConsistency,
}
