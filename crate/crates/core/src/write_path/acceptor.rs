use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::config::{Ballot, Batch, Slot, Watermark};
use crate::message::{Message, ReadId, Vote};
use crate::quorums::AcceptorId;

/// Promise, votes, and the vote watermark of one acceptor.
#[derive(Clone, Debug)]
pub struct AcceptorState {
    id: AcceptorId,
    promised: Option<Ballot>,
    votes: BTreeMap<Slot, (Ballot, Batch)>,
    vote_watermark: Watermark,
}

impl AcceptorState {
    pub fn new(id: AcceptorId) -> Self {
        AcceptorState { id, promised: None, votes: BTreeMap::new(), vote_watermark: Watermark::NONE }
    }

    pub fn id(&self) -> AcceptorId {
        self.id
    }

    pub fn promised(&self) -> Option<Ballot> {
        self.promised
    }

    pub fn vote_watermark(&self) -> Watermark {
        self.vote_watermark
    }

    pub fn vote(&self, slot: Slot) -> Option<&(Ballot, Batch)> {
        self.votes.get(&slot)
    }

    pub fn votes(&self) -> impl Iterator<Item = (Slot, &Ballot, &Batch)> {
        self.votes.iter().map(|(s, (b, v))| (*s, b, v))
    }

    fn admits(&self, ballot: Ballot) -> bool {
        self.promised.is_none_or(|p| ballot >= p)
    }

    fn nack(&self, rejected: Ballot, slot: Option<Slot>) -> Message {
        Message::Nack { promised: self.promised.unwrap_or_default(), rejected, slot }
    }

    /// Promises `ballot` and reports every vote at or above `from_slot`.
    ///
    /// A repeat Phase1a at the already-promised ballot is answered again so
    /// a leader can retransmit after loss.
    pub fn on_phase1a(&mut self, ballot: Ballot, from_slot: Slot) -> Message {
        if !self.admits(ballot) {
            return self.nack(ballot, None);
        }
        self.promised = Some(ballot);
        let votes: Vec<Vote> = self
            .votes
            .range(from_slot..)
            .map(|(slot, (b, value))| Vote { slot: *slot, ballot: *b, value: value.clone() })
            .collect();
        Message::Phase1b { ballot, acceptor: self.id, votes }
    }

    pub fn on_phase2a(&mut self, slot: Slot, ballot: Ballot, value: Batch) -> Message {
        if !self.admits(ballot) {
            return self.nack(ballot, Some(slot));
        }
        self.promised = Some(ballot);
        self.votes.insert(slot, (ballot, value));
        if !self.vote_watermark.covers(slot) {
            self.vote_watermark = Watermark::at(slot);
        }
        Message::Phase2b { slot, ballot, acceptor: self.id }
    }

    /// Read-only: reports the vote watermark.
    pub fn on_preread(&self, read_id: ReadId) -> Message {
        Message::PreReadAck { read_id, acceptor: self.id, vote_watermark: self.vote_watermark }
    }

    pub fn on_message(&mut self, msg: Message) -> Option<Message> {
        match msg {
            Message::Phase1a { ballot, from_slot } => Some(self.on_phase1a(ballot, from_slot)),
            Message::Phase2a { slot, ballot, value } => Some(self.on_phase2a(slot, ballot, value)),
            Message::PreRead { read_id } => Some(self.on_preread(read_id)),
            _ => None,
        }
    }
}
