use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use rand::Rng;

use crate::config::{Ballot, Batch, Slot};
use crate::message::{Message, NodeId, Observation, Outbox, Timer};
use crate::quorums::{AcceptorId, AcceptorSet, QuorumSystem};

#[derive(Clone, Debug)]
pub struct PendingPhase2 {
    pub value: Batch,
    pub leader: NodeId,
    pub contacted: AcceptorSet,
    pub acks: AcceptorSet,
    pub tried: BTreeSet<usize>,
    pub retries_used: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RetryOutcome {
    /// Phase2a resent to the write quorum with this index.
    Retried(usize),
    /// Every write quorum failed; the leader was told.
    GaveUp,
    /// Nothing pending under that key.
    Stale,
}

/// Relays Phase2a to one write quorum, collects Phase2b, and announces
/// chosen values to every replica.
///
/// The coupled baseline embeds one of these inside the leader.
#[derive(Clone, Debug)]
pub struct ProxyLeaderState {
    quorums: QuorumSystem,
    write_quorums: Vec<AcceptorSet>,
    num_replicas: u32,
    retry_timeout: Option<u64>,
    pending: BTreeMap<(Slot, Ballot), PendingPhase2>,
}

impl ProxyLeaderState {
    pub fn new(quorums: QuorumSystem, num_replicas: u32, retry_timeout: Option<u64>) -> Self {
        ProxyLeaderState {
            write_quorums: quorums.write_quorums(),
            quorums,
            num_replicas,
            retry_timeout,
            pending: BTreeMap::new(),
        }
    }

    pub fn pending(&self, slot: Slot, ballot: Ballot) -> Option<&PendingPhase2> {
        self.pending.get(&(slot, ballot))
    }

    pub fn num_pending(&self) -> usize {
        self.pending.len()
    }

    /// Retries allowed before giving up: one per write quorum.
    pub fn max_retries(&self) -> u32 {
        self.write_quorums.len() as u32
    }

    fn send_to_quorum(&self, q: usize, slot: Slot, ballot: Ballot, entry: &PendingPhase2, out: &mut Outbox) {
        let msg = Message::Phase2a { slot, ballot, value: entry.value.clone() };
        let targets = self.write_quorums[q].iter().filter(|a| !entry.acks.contains(a)).map(|a| NodeId::Acceptor(a.0));
        out.broadcast(targets, &msg);
        if let Some(delay) = self.retry_timeout {
            out.set_timer(delay, Timer::ProxyRetry { slot, ballot });
        }
    }

    /// Thrifty relay: one uniformly drawn write quorum. Duplicates of a
    /// pending `(slot, ballot)` are ignored.
    pub fn on_phase2a<R: Rng + ?Sized>(
        &mut self,
        leader: NodeId,
        slot: Slot,
        ballot: Ballot,
        value: Batch,
        rng: &mut R,
        out: &mut Outbox,
    ) -> Option<usize> {
        if self.pending.contains_key(&(slot, ballot)) {
            return None;
        }
        let q = rng.gen_range(0..self.write_quorums.len());
        let entry = PendingPhase2 {
            value,
            leader,
            contacted: self.write_quorums[q].clone(),
            acks: AcceptorSet::new(),
            tried: BTreeSet::from([q]),
            retries_used: 0,
        };
        self.send_to_quorum(q, slot, ballot, &entry, out);
        self.pending.insert((slot, ballot), entry);
        Some(q)
    }

    /// Returns the slot once the acks cover a write quorum.
    pub fn on_phase2b(&mut self, slot: Slot, ballot: Ballot, acceptor: AcceptorId, out: &mut Outbox) -> Option<Slot> {
        let entry = self.pending.get_mut(&(slot, ballot))?;
        if !entry.contacted.contains(&acceptor) || !entry.acks.insert(acceptor) {
            return None;
        }
        if !self.quorums.is_write_quorum(&entry.acks) {
            return None;
        }
        let entry = self.pending.remove(&(slot, ballot)).expect("entry present");
        out.observe(Observation::Certified { slot, ballot, value: entry.value.clone() });
        let chosen = Message::Chosen { slot, value: entry.value };
        out.broadcast((0..self.num_replicas).map(NodeId::Replica), &chosen);
        Some(slot)
    }

    /// A higher ballot exists: abandon the slot and tell the leader.
    pub fn on_nack(&mut self, promised: Ballot, rejected: Ballot, slot: Option<Slot>, out: &mut Outbox) {
        let Some(slot) = slot else { return };
        if let Some(entry) = self.pending.remove(&(slot, rejected)) {
            out.send(entry.leader, Message::Nack { promised, rejected, slot: Some(slot) });
        }
    }

    pub fn on_timeout<R: Rng + ?Sized>(&mut self, slot: Slot, ballot: Ballot, rng: &mut R, out: &mut Outbox) -> RetryOutcome {
        let max = self.max_retries();
        let Some(entry) = self.pending.get_mut(&(slot, ballot)) else {
            return RetryOutcome::Stale;
        };
        if entry.retries_used >= max {
            let entry = self.pending.remove(&(slot, ballot)).expect("entry present");
            out.observe(Observation::GaveUp { slot, ballot });
            out.send(entry.leader, Message::Phase2aUnavailable { slot, ballot });
            return RetryOutcome::GaveUp;
        }
        let untried: Vec<usize> = (0..self.write_quorums.len()).filter(|q| !entry.tried.contains(q)).collect();
        let q = if untried.is_empty() {
            rng.gen_range(0..self.write_quorums.len())
        } else {
            untried[rng.gen_range(0..untried.len())]
        };
        entry.retries_used += 1;
        entry.tried.insert(q);
        entry.contacted.extend(self.write_quorums[q].iter().copied());
        let entry = entry.clone();
        self.send_to_quorum(q, slot, ballot, &entry, out);
        RetryOutcome::Retried(q)
    }

    pub fn on_timer<R: Rng + ?Sized>(&mut self, timer: &Timer, rng: &mut R, out: &mut Outbox) {
        if let Timer::ProxyRetry { slot, ballot } = *timer {
            self.on_timeout(slot, ballot, rng, out);
        }
    }

    pub fn on_message<R: Rng + ?Sized>(&mut self, from: NodeId, msg: Message, rng: &mut R, out: &mut Outbox) {
        match msg {
            Message::Phase2a { slot, ballot, value } => {
                self.on_phase2a(from, slot, ballot, value, rng, out);
            }
            Message::Phase2b { slot, ballot, acceptor } => {
                self.on_phase2b(slot, ballot, acceptor, out);
            }
            Message::Nack { promised, rejected, slot } => self.on_nack(promised, rejected, slot, out),
            _ => {}
        }
    }
}
