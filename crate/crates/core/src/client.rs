//! Closed-loop client session: one outstanding operation at a time.

use rand::Rng;

use crate::config::{ClientId, Command, Op, Selection, Watermark};
use crate::eval::workload::OpSource;
use crate::message::{Message, NodeId, Observation, Outbox, ReadId, ResultEntry, Timer};
use crate::quorums::{AcceptorId, QuorumSystem};
use crate::read_path::{ClientReadState, ReadConsistency};

#[derive(Clone, Debug)]
pub struct ClientConfig {
    pub id: u32,
    pub level: ReadConsistency,
    pub quorums: QuorumSystem,
    pub num_proposers: u32,
    pub num_replicas: u32,
    /// Batcher this client talks to, when batching is on.
    pub batcher: Option<u32>,
    pub selection: Selection,
    pub retry_timeout: Option<u64>,
}

#[derive(Clone, Debug)]
struct Outstanding {
    command: Command,
    attempt: u32,
}

#[derive(Clone, Debug)]
pub struct ClientSession {
    cfg: ClientConfig,
    ops: OpSource,
    next_seq: u64,
    current: Option<Outstanding>,
    reads: ClientReadState,
    replica_cursor: u64,
    completed: u64,
}

impl ClientSession {
    pub fn new(cfg: ClientConfig, ops: impl IntoIterator<Item = Op>) -> Self {
        ClientSession::with_source(cfg, ops.into_iter().collect())
    }

    pub fn with_source(cfg: ClientConfig, ops: OpSource) -> Self {
        let reads = ClientReadState::new(cfg.level);
        ClientSession {
            cfg,
            ops,
            next_seq: 0,
            current: None,
            reads,
            replica_cursor: 0,
            completed: 0,
        }
    }

    pub fn id(&self) -> ClientId {
        ClientId(self.cfg.id)
    }

    pub fn is_done(&self) -> bool {
        self.current.is_none() && self.ops.is_exhausted()
    }

    pub fn completed(&self) -> u64 {
        self.completed
    }

    /// Ops not yet completed, or `None` for an unbounded stream.
    pub fn remaining(&self) -> Option<u64> {
        self.ops.remaining().map(|r| r + u64::from(self.current.is_some()))
    }

    pub fn seq_watermark(&self) -> Watermark {
        self.reads.seq_watermark()
    }

    /// Issues the next operation if none is outstanding.
    pub fn start<R: Rng + ?Sized>(&mut self, rng: &mut R, out: &mut Outbox) {
        if self.current.is_some() {
            return;
        }
        let Some(op) = self.ops.next_op() else { return };
        let seq = self.next_seq;
        self.next_seq += 1;
        let command = Command { client: self.id(), seq, op };
        out.observe(Observation::Invoked { client: self.id(), seq, op: command.op.clone() });
        self.current = Some(Outstanding { command, attempt: 0 });
        self.transmit(rng, out);
    }

    fn pick_replica<R: Rng + ?Sized>(&mut self, rng: &mut R) -> NodeId {
        NodeId::Replica(self.cfg.selection.pick(self.cfg.num_replicas, &mut self.replica_cursor, rng))
    }

    /// Sends the outstanding command. First attempts follow the normal path;
    /// retries go straight to every proposer, or restart the read.
    fn transmit<R: Rng + ?Sized>(&mut self, rng: &mut R, out: &mut Outbox) {
        let Some(cur) = &self.current else { return };
        let (command, attempt) = (cur.command.clone(), cur.attempt);
        let seq = command.seq;
        if command.op.is_read() {
            match self.cfg.level {
                ReadConsistency::Linearizable => match self.cfg.batcher {
                    Some(b) if attempt == 0 => out.send(NodeId::Batcher(b), Message::ClientRequest { command }),
                    _ => self.reads.begin_linearizable(ReadId { seq, round: attempt }, &self.cfg.quorums, rng, out),
                },
                ReadConsistency::Sequential | ReadConsistency::Eventual => {
                    let to = self.pick_replica(rng);
                    let required = self.reads.direct_read_watermark();
                    out.send(to, Message::Read { commands: alloc::vec![command], required, batched: false });
                }
            }
        } else {
            match (self.cfg.batcher, attempt) {
                (Some(b), 0) => out.send(NodeId::Batcher(b), Message::ClientRequest { command }),
                (None, 0) => out.send(NodeId::Proposer(0), Message::ClientRequest { command }),
                _ => {
                    let msg = Message::ClientRequest { command };
                    out.broadcast((0..self.cfg.num_proposers).map(NodeId::Proposer), &msg);
                }
            }
        }
        if let Some(delay) = self.cfg.retry_timeout {
            out.set_timer(delay, Timer::ClientRetry { seq, attempt });
        }
    }

    pub fn on_preread_ack<R: Rng + ?Sized>(
        &mut self,
        read_id: ReadId,
        acceptor: AcceptorId,
        watermark: Watermark,
        rng: &mut R,
        out: &mut Outbox,
    ) {
        let Some(cur) = &self.current else { return };
        if cur.command.seq != read_id.seq {
            return;
        }
        let command = cur.command.clone();
        if let Some(i) = self.reads.on_preread_ack(&self.cfg.quorums, read_id, acceptor, watermark) {
            let to = self.pick_replica(rng);
            out.send(to, Message::Read { commands: alloc::vec![command], required: i, batched: false });
        }
    }

    /// Completes the outstanding op on its first reply and issues the next.
    pub fn on_reply<R: Rng + ?Sized>(&mut self, entry: ResultEntry, rng: &mut R, out: &mut Outbox) -> bool {
        let matches = self.current.as_ref().is_some_and(|c| c.command.seq == entry.seq && entry.client == self.id());
        if !matches {
            return false;
        }
        let cur = self.current.take().expect("matched");
        self.reads.observe(entry.slot);
        self.completed += 1;
        out.observe(Observation::Completed {
            client: self.id(),
            seq: entry.seq,
            op: cur.command.op,
            out: entry.out,
            slot: entry.slot,
        });
        self.start(rng, out);
        true
    }

    pub fn on_timer<R: Rng + ?Sized>(&mut self, timer: &Timer, rng: &mut R, out: &mut Outbox) {
        match *timer {
            Timer::ClientStart => self.start(rng, out),
            Timer::ClientRetry { seq, attempt } => {
                let Some(cur) = &mut self.current else { return };
                if cur.command.seq == seq && cur.attempt == attempt {
                    cur.attempt += 1;
                    self.transmit(rng, out);
                }
            }
            _ => {}
        }
    }

    pub fn on_message<R: Rng + ?Sized>(&mut self, msg: Message, rng: &mut R, out: &mut Outbox) {
        match msg {
            Message::ClientReply { entry } => {
                self.on_reply(entry, rng, out);
            }
            Message::PreReadAck { read_id, acceptor, vote_watermark } => {
                self.on_preread_ack(read_id, acceptor, vote_watermark, rng, out);
            }
            _ => {}
        }
    }
}
