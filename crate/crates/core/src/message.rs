//! Node addresses, the wire vocabulary, and the effect sink every role writes into.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::config::{Ballot, Batch, ClientId, Command, Op, Slot, Watermark};
use crate::quorums::AcceptorId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeId {
    Proposer(u32),
    ProxyLeader(u32),
    Acceptor(u32),
    Replica(u32),
    Batcher(u32),
    Unbatcher(u32),
    Client(u32),
}

impl NodeId {
    pub fn role(&self) -> RoleKind {
        match self {
            NodeId::Proposer(_) => RoleKind::Proposer,
            NodeId::ProxyLeader(_) => RoleKind::ProxyLeader,
            NodeId::Acceptor(_) => RoleKind::Acceptor,
            NodeId::Replica(_) => RoleKind::Replica,
            NodeId::Batcher(_) => RoleKind::Batcher,
            NodeId::Unbatcher(_) => RoleKind::Unbatcher,
            NodeId::Client(_) => RoleKind::Client,
        }
    }

    pub fn index(&self) -> u32 {
        match *self {
            NodeId::Proposer(i)
            | NodeId::ProxyLeader(i)
            | NodeId::Acceptor(i)
            | NodeId::Replica(i)
            | NodeId::Batcher(i)
            | NodeId::Unbatcher(i)
            | NodeId::Client(i) => i,
        }
    }

    pub fn acceptor(id: AcceptorId) -> NodeId {
        NodeId::Acceptor(id.0)
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.role().as_str(), self.index())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoleKind {
    Proposer,
    ProxyLeader,
    Acceptor,
    Replica,
    Batcher,
    Unbatcher,
    Client,
}

impl RoleKind {
    pub const ALL: [RoleKind; 7] = [
        RoleKind::Proposer,
        RoleKind::ProxyLeader,
        RoleKind::Acceptor,
        RoleKind::Replica,
        RoleKind::Batcher,
        RoleKind::Unbatcher,
        RoleKind::Client,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            RoleKind::Proposer => "proposer",
            RoleKind::ProxyLeader => "proxy_leader",
            RoleKind::Acceptor => "acceptor",
            RoleKind::Replica => "replica",
            RoleKind::Batcher => "batcher",
            RoleKind::Unbatcher => "unbatcher",
            RoleKind::Client => "client",
        }
    }
}

/// One acceptor vote as reported in Phase1b.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vote {
    pub slot: Slot,
    pub ballot: Ballot,
    pub value: Batch,
}

/// Identifies one PreRead round of one reader.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ReadId {
    pub seq: u64,
    pub round: u32,
}

/// One executed command's result, as carried in replies and result batches.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResultEntry {
    pub client: ClientId,
    pub seq: u64,
    pub out: Option<String>,
    /// Log slot the write was executed in, or the replica's executed
    /// watermark when a read was served.
    pub slot: Watermark,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Message {
    ClientRequest { command: Command },
    ProposeBatch { batch: Batch },
    ClientReply { entry: ResultEntry },
    Phase1a { ballot: Ballot, from_slot: Slot },
    Phase1b { ballot: Ballot, acceptor: AcceptorId, votes: Vec<Vote> },
    Phase2a { slot: Slot, ballot: Ballot, value: Batch },
    Phase2b { slot: Slot, ballot: Ballot, acceptor: AcceptorId },
    /// `rejected` lost to `promised`. `slot` is set when a Phase2a was refused.
    Nack { promised: Ballot, rejected: Ballot, slot: Option<Slot> },
    Chosen { slot: Slot, value: Batch },
    /// A proxy leader exhausted its write quorums for this slot.
    Phase2aUnavailable { slot: Slot, ballot: Ballot },
    /// A replica is stalled behind `slot`.
    Recover { slot: Slot },
    LeaderInfo { ballot: Ballot, leader: u32 },
    PreRead { read_id: ReadId },
    PreReadAck { read_id: ReadId, acceptor: AcceptorId, vote_watermark: Watermark },
    Read { commands: Vec<Command>, required: Watermark, batched: bool },
    ResultBatch { entries: Vec<ResultEntry> },
}

impl Message {
    pub fn kind(&self) -> MessageKind {
        match self {
            Message::ClientRequest { .. } => MessageKind::ClientRequest,
            Message::ProposeBatch { .. } => MessageKind::ProposeBatch,
            Message::ClientReply { .. } => MessageKind::ClientReply,
            Message::Phase1a { .. } => MessageKind::Phase1a,
            Message::Phase1b { .. } => MessageKind::Phase1b,
            Message::Phase2a { .. } => MessageKind::Phase2a,
            Message::Phase2b { .. } => MessageKind::Phase2b,
            Message::Nack { .. } => MessageKind::Nack,
            Message::Chosen { .. } => MessageKind::Chosen,
            Message::Phase2aUnavailable { .. } => MessageKind::Phase2aUnavailable,
            Message::Recover { .. } => MessageKind::Recover,
            Message::LeaderInfo { .. } => MessageKind::LeaderInfo,
            Message::PreRead { .. } => MessageKind::PreRead,
            Message::PreReadAck { .. } => MessageKind::PreReadAck,
            Message::Read { .. } => MessageKind::Read,
            Message::ResultBatch { .. } => MessageKind::ResultBatch,
        }
    }

    /// Number of client commands carried, used to charge per-command work.
    pub fn command_count(&self) -> usize {
        match self {
            Message::ClientRequest { .. } | Message::ClientReply { .. } => 1,
            Message::ProposeBatch { batch: b }
            | Message::Phase2a { value: b, .. }
            | Message::Chosen { value: b, .. } => b.len(),
            Message::Read { commands, .. } => commands.len(),
            Message::ResultBatch { entries } => entries.len(),
            _ => 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    ClientRequest,
    ProposeBatch,
    ClientReply,
    Phase1a,
    Phase1b,
    Phase2a,
    Phase2b,
    Nack,
    Chosen,
    Phase2aUnavailable,
    Recover,
    LeaderInfo,
    PreRead,
    PreReadAck,
    Read,
    ResultBatch,
}

impl MessageKind {
    /// Leader-election traffic, excluded from steady-state load accounting.
    pub fn is_election(&self) -> bool {
        matches!(
            self,
            MessageKind::Phase1a | MessageKind::Phase1b | MessageKind::LeaderInfo | MessageKind::Nack
        )
    }

    /// Traffic that only exists to repair losses.
    pub fn is_repair(&self) -> bool {
        matches!(self, MessageKind::Phase2aUnavailable | MessageKind::Recover)
    }
}

/// Timers a role can arm. The owner is implied by who armed it; handlers
/// ignore fires that no longer match their state.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Timer {
    ProxyRetry { slot: Slot, ballot: Ballot },
    Phase1Retry { ballot: Ballot },
    ClientStart,
    ClientRetry { seq: u64, attempt: u32 },
    FlushWrites { epoch: u64 },
    FlushReads { epoch: u64 },
    BatchReadRetry { seq: u64, round: u32 },
    ReplicaRecover,
}

/// Trace-only facts emitted by roles. They never influence protocol state.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Observation {
    Invoked { client: ClientId, seq: u64, op: Op },
    Completed { client: ClientId, seq: u64, op: Op, out: Option<String>, slot: Watermark },
    Certified { slot: Slot, ballot: Ballot, value: Batch },
    Executed { replica: u32, slot: Slot },
    Responded { replica: u32, slot: Slot },
    ReadServed {
        replica: u32,
        client: ClientId,
        seq: u64,
        key: String,
        out: Option<String>,
        required: Watermark,
        at: Watermark,
    },
    GaveUp { slot: Slot, ballot: Ballot },
    AgreementViolation { replica: u32, slot: Slot },
    ProtocolError { detail: String },
}

/// Collects everything one handler invocation produces.
#[derive(Debug, Default)]
pub struct Outbox {
    pub sends: Vec<(NodeId, Message)>,
    pub timers: Vec<(u64, Timer)>,
    pub observations: Vec<Observation>,
}

impl Outbox {
    pub fn new() -> Self {
        Outbox::default()
    }

    pub fn send(&mut self, to: NodeId, msg: Message) {
        self.sends.push((to, msg));
    }

    pub fn broadcast(&mut self, to: impl IntoIterator<Item = NodeId>, msg: &Message) {
        for node in to {
            self.sends.push((node, msg.clone()));
        }
    }

    pub fn set_timer(&mut self, delay: u64, timer: Timer) {
        self.timers.push((delay, timer));
    }

    pub fn observe(&mut self, o: Observation) {
        self.observations.push(o);
    }

    pub fn clear(&mut self) {
        self.sends.clear();
        self.timers.clear();
        self.observations.clear();
    }

    pub fn is_empty(&self) -> bool {
        self.sends.is_empty() && self.timers.is_empty() && self.observations.is_empty()
    }
}
