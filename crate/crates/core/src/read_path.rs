//! Reads that bypass the leader.
//!
//! Linearizable reads ask one read quorum for vote watermarks, take the
//! maximum `i`, and have any replica serve the read once slot `i` is
//! executed. Sequential reads carry the reader's own watermark instead, and
//! eventual reads carry none.

use alloc::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::Watermark;
use crate::message::{Message, NodeId, Outbox, ReadId};
use crate::quorums::{AcceptorId, AcceptorSet, QuorumSystem};
use crate::write_path::AcceptorState;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReadConsistency {
    #[default]
    Linearizable,
    Sequential,
    Eventual,
}

pub fn acceptor_on_preread(state: &AcceptorState, read_id: ReadId) -> Message {
    state.on_preread(read_id)
}

/// Max vote watermark over the acks, provided they cover a read quorum.
pub fn compute_read_watermark(quorums: &QuorumSystem, acks: &BTreeMap<AcceptorId, Watermark>) -> Option<Watermark> {
    let responded: AcceptorSet = acks.keys().copied().collect();
    quorums
        .is_read_quorum(&responded)
        .then(|| acks.values().copied().max().unwrap_or(Watermark::NONE))
}

/// One PreRead round against one read quorum.
#[derive(Clone, Debug)]
pub struct ReadRound {
    pub id: ReadId,
    pub row: AcceptorSet,
    acks: BTreeMap<AcceptorId, Watermark>,
}

impl ReadRound {
    /// Picks a read quorum uniformly and sends it PreReads.
    pub fn start<R: Rng + ?Sized>(id: ReadId, quorums: &QuorumSystem, rng: &mut R, out: &mut Outbox) -> Self {
        let rows = quorums.read_quorums();
        let row = rows[rng.gen_range(0..rows.len())].clone();
        out.broadcast(row.iter().map(|a| NodeId::Acceptor(a.0)), &Message::PreRead { read_id: id });
        ReadRound { id, row, acks: BTreeMap::new() }
    }

    /// Returns the read index once every row member has answered.
    pub fn on_ack(&mut self, quorums: &QuorumSystem, acceptor: AcceptorId, watermark: Watermark) -> Option<Watermark> {
        if !self.row.contains(&acceptor) {
            return None;
        }
        self.acks.insert(acceptor, watermark);
        compute_read_watermark(quorums, &self.acks)
    }
}

/// Per-reader bookkeeping for all three consistency levels.
#[derive(Clone, Debug)]
pub struct ClientReadState {
    level: ReadConsistency,
    seq_watermark: Watermark,
    outstanding: BTreeMap<ReadId, ReadRound>,
}

impl ClientReadState {
    pub fn new(level: ReadConsistency) -> Self {
        ClientReadState { level, seq_watermark: Watermark::NONE, outstanding: BTreeMap::new() }
    }

    pub fn level(&self) -> ReadConsistency {
        self.level
    }

    pub fn seq_watermark(&self) -> Watermark {
        self.seq_watermark
    }

    /// Starts a PreRead round, discarding every earlier round of the same read.
    pub fn begin_linearizable<R: Rng + ?Sized>(
        &mut self,
        id: ReadId,
        quorums: &QuorumSystem,
        rng: &mut R,
        out: &mut Outbox,
    ) {
        self.outstanding.retain(|k, _| k.seq != id.seq);
        self.outstanding.insert(id, ReadRound::start(id, quorums, rng, out));
    }

    /// Returns the read index when `id`'s row is complete. Acks for
    /// superseded rounds are dropped.
    pub fn on_preread_ack(
        &mut self,
        quorums: &QuorumSystem,
        id: ReadId,
        acceptor: AcceptorId,
        watermark: Watermark,
    ) -> Option<Watermark> {
        let round = self.outstanding.get_mut(&id)?;
        let i = round.on_ack(quorums, acceptor, watermark)?;
        self.outstanding.remove(&id);
        Some(i)
    }

    pub fn is_outstanding(&self, id: ReadId) -> bool {
        self.outstanding.contains_key(&id)
    }

    /// Watermark a direct (non-PreRead) read must carry.
    pub fn direct_read_watermark(&self) -> Watermark {
        match self.level {
            ReadConsistency::Sequential => self.seq_watermark,
            ReadConsistency::Linearizable | ReadConsistency::Eventual => Watermark::NONE,
        }
    }

    /// Folds in the slot `j` returned with any reply.
    pub fn observe(&mut self, j: Watermark) {
        self.seq_watermark = self.seq_watermark.max(j);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{Ballot, Batch, Command, Slot};
    use crate::quorums::GridQuorumSystem;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn grid(r: u32, w: u32) -> QuorumSystem {
        QuorumSystem::Grid(GridQuorumSystem::new(r, w))
    }

    fn acks(pairs: &[(u32, i64)]) -> BTreeMap<AcceptorId, Watermark> {
        pairs.iter().map(|&(a, w)| (AcceptorId(a), Watermark(w))).collect()
    }

    #[test]
    fn watermark_is_max_over_full_row() {
        let g = grid(2, 3);
        assert_eq!(compute_read_watermark(&g, &acks(&[(0, 3), (1, 7), (2, 5)])), Some(Watermark(7)));
        assert_eq!(compute_read_watermark(&grid(2, 2), &acks(&[(0, -1), (1, -1)])), Some(Watermark::NONE));
        assert_eq!(compute_read_watermark(&grid(2, 2), &acks(&[(0, 4), (1, 9)])), Some(Watermark(9)));
    }

    #[test]
    fn incomplete_row_yields_nothing() {
        assert_eq!(compute_read_watermark(&grid(2, 3), &acks(&[(0, 3), (1, 7)])), None);
        assert_eq!(compute_read_watermark(&grid(2, 2), &acks(&[(0, 3), (2, 7)])), None);
    }

    #[test]
    fn preread_targets_one_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = GridQuorumSystem::new(2, 2);
        let mut out = Outbox::new();
        let round = ReadRound::start(ReadId { seq: 0, round: 0 }, &QuorumSystem::Grid(g), &mut rng, &mut out);
        assert_eq!(out.sends.len(), 2);
        assert!(g.is_read_quorum(&round.row));
    }

    #[test]
    fn every_row_sees_every_chosen_slot() {
        // Brute force over every grid shape, column, and row: a value voted
        // by a whole column at slot 9 is visible to whichever row is asked.
        for r in 2..=4 {
            for w in 2..=4 {
                let g = GridQuorumSystem::new(r, w);
                for col in 0..w {
                    let mut accs: alloc::vec::Vec<AcceptorState> = (0..r * w).map(|i| AcceptorState::new(AcceptorId(i))).collect();
                    let value = Batch::single(Command::write(0, 0, "k", "v"));
                    for a in g.column(col) {
                        accs[a.0 as usize].on_phase2a(Slot(9), Ballot::default(), value.clone());
                    }
                    for row in 0..r {
                        let mut state = ClientReadState::new(ReadConsistency::Linearizable);
                        let id = ReadId { seq: 0, round: 0 };
                        let qs = QuorumSystem::Grid(g);
                        state.outstanding.insert(id, ReadRound { id, row: g.row(row), acks: BTreeMap::new() });
                        let mut i = None;
                        for a in g.row(row) {
                            let Message::PreReadAck { vote_watermark, .. } = acceptor_on_preread(&accs[a.0 as usize], id) else {
                                unreachable!()
                            };
                            i = state.on_preread_ack(&qs, id, a, vote_watermark).or(i);
                        }
                        assert!(i.unwrap() >= Watermark(9));
                    }
                }
            }
        }
    }

    #[test]
    fn stale_round_acks_are_discarded() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let g = grid(2, 2);
        let mut s = ClientReadState::new(ReadConsistency::Linearizable);
        let mut out = Outbox::new();
        let old = ReadId { seq: 5, round: 0 };
        let new = ReadId { seq: 5, round: 1 };
        s.begin_linearizable(old, &g, &mut rng, &mut out);
        s.begin_linearizable(new, &g, &mut rng, &mut out);
        assert!(!s.is_outstanding(old));
        assert_eq!(s.on_preread_ack(&g, old, AcceptorId(0), Watermark(3)), None);
    }

    #[test]
    fn sequential_watermark_tracks_max_seen() {
        let mut s = ClientReadState::new(ReadConsistency::Sequential);
        assert_eq!(s.direct_read_watermark(), Watermark::NONE);
        s.observe(Watermark(5));
        assert_eq!(s.direct_read_watermark(), Watermark(5));
        s.observe(Watermark(8));
        assert_eq!(s.seq_watermark(), Watermark(8));
        s.observe(Watermark(2));
        assert_eq!(s.seq_watermark(), Watermark(8));
    }

    #[test]
    fn eventual_reads_carry_no_watermark() {
        let mut s = ClientReadState::new(ReadConsistency::Eventual);
        s.observe(Watermark(10));
        assert_eq!(s.direct_read_watermark(), Watermark::NONE);
    }
}
