use alloc::collections::{BTreeMap, VecDeque};
use alloc::vec::Vec;

use rand::Rng;
use thiserror::Error;

use super::proxy::ProxyLeaderState;
use crate::config::{Ballot, Batch, Selection, Slot};
use crate::message::{Message, NodeId, Outbox, Timer, Vote};
use crate::quorums::{AcceptorId, AcceptorSet, QuorumSystem};

#[derive(Clone, Debug)]
pub struct LeaderConfig {
    pub id: u32,
    pub quorums: QuorumSystem,
    /// Zero means the coupled baseline: the leader relays Phase2a itself.
    pub num_proxies: u32,
    pub num_replicas: u32,
    pub num_batchers: u32,
    pub selection: Selection,
    pub phase1_retry: Option<u64>,
    pub proxy_retry: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Phase {
    /// Standby or deposed; requests are dropped.
    Inactive,
    Phase1 { responses: BTreeMap<AcceptorId, Vec<Vote>> },
    Phase2,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Submit {
    Assigned(Slot),
    Buffered,
    Ignored,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase1Progress {
    Waiting,
    /// Phase 1 finished; `recovered` slots were re-proposed.
    Completed { recovered: u64 },
    Ignored,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Error)]
pub enum LeaderError {
    #[error("ballot {requested} is not above current ballot {current}")]
    BallotNotHigher { current: Ballot, requested: Ballot },
}

/// Sequencer: assigns slots densely from 0 and hands each Phase2a to a proxy
/// leader (or, in the coupled baseline, broadcasts it itself).
#[derive(Clone, Debug)]
pub struct LeaderState {
    cfg: LeaderConfig,
    ballot: Ballot,
    phase: Phase,
    next_slot: Slot,
    proposals: BTreeMap<Slot, Batch>,
    buffered: VecDeque<Batch>,
    proxy_cursor: u64,
    embedded: Option<ProxyLeaderState>,
}

impl LeaderState {
    /// A standby proposer at ballot `(0, id)`, waiting for an election.
    pub fn standby(cfg: LeaderConfig) -> Self {
        let embedded = (cfg.num_proxies == 0)
            .then(|| ProxyLeaderState::new(cfg.quorums, cfg.num_replicas, cfg.proxy_retry));
        LeaderState {
            ballot: Ballot::new(0, cfg.id),
            phase: Phase::Inactive,
            next_slot: Slot(0),
            proposals: BTreeMap::new(),
            buffered: VecDeque::new(),
            proxy_cursor: 0,
            embedded,
            cfg,
        }
    }

    /// The initial leader. Ballot `(0, 0)` is the smallest ballot there is,
    /// so no acceptor can hold an earlier vote and Phase 1 is skipped.
    pub fn initial(cfg: LeaderConfig) -> Self {
        assert_eq!(cfg.id, 0, "only proposer 0 owns ballot (0,0)");
        let mut leader = LeaderState::standby(cfg);
        leader.phase = Phase::Phase2;
        leader
    }

    pub fn id(&self) -> u32 {
        self.cfg.id
    }

    pub fn node(&self) -> NodeId {
        NodeId::Proposer(self.cfg.id)
    }

    pub fn ballot(&self) -> Ballot {
        self.ballot
    }

    pub fn phase(&self) -> &Phase {
        &self.phase
    }

    pub fn is_active(&self) -> bool {
        self.phase == Phase::Phase2
    }

    pub fn next_slot(&self) -> Slot {
        self.next_slot
    }

    pub fn proposal(&self, slot: Slot) -> Option<&Batch> {
        self.proposals.get(&slot)
    }

    pub fn embedded_proxy(&self) -> Option<&ProxyLeaderState> {
        self.embedded.as_ref()
    }

    fn dispatch<R: Rng + ?Sized>(&mut self, slot: Slot, rng: &mut R, out: &mut Outbox) {
        let value = self.proposals[&slot].clone();
        let me = self.node();
        match &mut self.embedded {
            Some(proxy) => {
                proxy.on_phase2a(me, slot, self.ballot, value, rng, out);
            }
            None => {
                let k = self.cfg.selection.pick(self.cfg.num_proxies, &mut self.proxy_cursor, rng);
                out.send(NodeId::ProxyLeader(k), Message::Phase2a { slot, ballot: self.ballot, value });
            }
        }
    }

    /// Assigns the next slot to `batch`.
    pub fn on_client_request<R: Rng + ?Sized>(&mut self, batch: Batch, rng: &mut R, out: &mut Outbox) -> Submit {
        match self.phase {
            Phase::Inactive => Submit::Ignored,
            Phase::Phase1 { .. } => {
                self.buffered.push_back(batch);
                Submit::Buffered
            }
            Phase::Phase2 => {
                let slot = self.next_slot;
                self.next_slot = slot.next();
                self.proposals.insert(slot, batch);
                self.dispatch(slot, rng, out);
                Submit::Assigned(slot)
            }
        }
    }

    fn send_phase1a<R: Rng + ?Sized>(&mut self, rng: &mut R, out: &mut Outbox) {
        let rows = self.cfg.quorums.read_quorums();
        let row = &rows[rng.gen_range(0..rows.len())];
        let responded: AcceptorSet = match &self.phase {
            Phase::Phase1 { responses } => responses.keys().copied().collect(),
            _ => AcceptorSet::new(),
        };
        let msg = Message::Phase1a { ballot: self.ballot, from_slot: Slot(0) };
        out.broadcast(row.iter().filter(|a| !responded.contains(a)).map(|a| NodeId::Acceptor(a.0)), &msg);
        if let Some(delay) = self.cfg.phase1_retry {
            out.set_timer(delay, Timer::Phase1Retry { ballot: self.ballot });
        }
    }

    /// Starts Phase 1 at `ballot` against one read quorum, recovering from slot 0.
    pub fn leader_elect<R: Rng + ?Sized>(&mut self, ballot: Ballot, rng: &mut R, out: &mut Outbox) -> Result<(), LeaderError> {
        if ballot <= self.ballot {
            return Err(LeaderError::BallotNotHigher { current: self.ballot, requested: ballot });
        }
        self.ballot = ballot;
        self.phase = Phase::Phase1 { responses: BTreeMap::new() };
        self.send_phase1a(rng, out);
        Ok(())
    }

    pub fn on_phase1b<R: Rng + ?Sized>(
        &mut self,
        ballot: Ballot,
        acceptor: AcceptorId,
        votes: Vec<Vote>,
        rng: &mut R,
        out: &mut Outbox,
    ) -> Phase1Progress {
        let Phase::Phase1 { responses } = &mut self.phase else {
            return Phase1Progress::Ignored;
        };
        if ballot != self.ballot {
            return Phase1Progress::Ignored;
        }
        responses.insert(acceptor, votes);
        let responded: AcceptorSet = responses.keys().copied().collect();
        let Some(row) = self.cfg.quorums.read_quorums().into_iter().find(|q| q.is_subset(&responded)) else {
            return Phase1Progress::Waiting;
        };
        let Phase::Phase1 { responses } = core::mem::replace(&mut self.phase, Phase::Phase2) else {
            unreachable!()
        };
        let recovered = recover_log(row.iter().filter_map(|a| responses.get(a)).flatten());
        let count = recovered.len() as u64;
        self.proposals.clear();
        self.next_slot = Slot(count);
        for (slot, value) in recovered.into_iter().enumerate() {
            let slot = Slot(slot as u64);
            self.proposals.insert(slot, value);
            self.dispatch(slot, rng, out);
        }
        let info = Message::LeaderInfo { ballot: self.ballot, leader: self.cfg.id };
        out.broadcast((0..self.cfg.num_batchers).map(NodeId::Batcher), &info);
        while let Some(batch) = self.buffered.pop_front() {
            self.on_client_request(batch, rng, out);
        }
        Phase1Progress::Completed { recovered: count }
    }

    pub fn on_nack(&mut self, promised: Ballot) {
        if promised > self.ballot {
            self.phase = Phase::Inactive;
            self.buffered.clear();
        }
    }

    /// Re-dispatches an assigned slot whose value got stuck.
    pub fn redispatch<R: Rng + ?Sized>(&mut self, slot: Slot, rng: &mut R, out: &mut Outbox) -> bool {
        if self.phase != Phase::Phase2 || !self.proposals.contains_key(&slot) {
            return false;
        }
        self.dispatch(slot, rng, out);
        true
    }

    /// A replica is stuck behind `slot`. Slots this leader never assigned
    /// are filled with noops so reads waiting on a stray vote can finish.
    pub fn on_recover<R: Rng + ?Sized>(&mut self, slot: Slot, rng: &mut R, out: &mut Outbox) {
        if self.phase != Phase::Phase2 {
            return;
        }
        if slot < self.next_slot {
            self.redispatch(slot, rng, out);
            return;
        }
        while self.next_slot <= slot {
            self.on_client_request(Batch::noop(), rng, out);
        }
    }

    pub fn on_timer<R: Rng + ?Sized>(&mut self, timer: &Timer, rng: &mut R, out: &mut Outbox) {
        match *timer {
            Timer::Phase1Retry { ballot } if ballot == self.ballot && matches!(self.phase, Phase::Phase1 { .. }) => {
                self.send_phase1a(rng, out);
            }
            Timer::ProxyRetry { .. } => {
                if let Some(proxy) = &mut self.embedded {
                    proxy.on_timer(timer, rng, out);
                }
            }
            _ => {}
        }
    }

    pub fn on_message<R: Rng + ?Sized>(&mut self, msg: Message, rng: &mut R, out: &mut Outbox) {
        match msg {
            Message::ClientRequest { command } => {
                self.on_client_request(Batch::single(command), rng, out);
            }
            Message::ProposeBatch { batch } => {
                if !batch.is_empty() {
                    self.on_client_request(batch, rng, out);
                }
            }
            Message::Phase1b { ballot, acceptor, votes } => {
                self.on_phase1b(ballot, acceptor, votes, rng, out);
            }
            Message::Nack { promised, rejected, slot } => {
                if let (Some(proxy), Some(_)) = (&mut self.embedded, slot) {
                    let mut scratch = Outbox::new();
                    proxy.on_nack(promised, rejected, slot, &mut scratch);
                }
                self.on_nack(promised);
            }
            Message::Phase2b { slot, ballot, acceptor } => {
                if let Some(proxy) = &mut self.embedded {
                    proxy.on_phase2b(slot, ballot, acceptor, out);
                }
            }
            Message::Phase2aUnavailable { slot, ballot } if ballot == self.ballot => {
                self.redispatch(slot, rng, out);
            }
            Message::Recover { slot } => {
                self.on_recover(slot, rng, out);
            }
            _ => {}
        }
    }
}

/// Per-slot max-ballot scan over Phase1b votes. Slots up to the largest
/// reported slot with no vote become noops.
pub fn recover_log<'a>(votes: impl IntoIterator<Item = &'a Vote>) -> Vec<Batch> {
    let mut best: BTreeMap<Slot, (Ballot, &'a Batch)> = BTreeMap::new();
    for v in votes {
        let replace = best.get(&v.slot).is_none_or(|(b, _)| v.ballot > *b);
        if replace {
            best.insert(v.slot, (v.ballot, &v.value));
        }
    }
    let Some((&last, _)) = best.iter().next_back() else {
        return Vec::new();
    };
    (0..=last.0).map(|s| best.get(&Slot(s)).map_or_else(Batch::noop, |(_, v)| (*v).clone())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use crate::config::Command;
    use crate::quorums::GridQuorumSystem;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(id: u32, rows: u32, cols: u32) -> LeaderConfig {
        LeaderConfig {
            id,
            quorums: QuorumSystem::Grid(GridQuorumSystem::new(rows, cols)),
            num_proxies: 3,
            num_replicas: 2,
            num_batchers: 0,
            selection: Selection::Random,
            phase1_retry: None,
            proxy_retry: None,
        }
    }

    fn cmd(seq: u64) -> Batch {
        Batch::single(Command::write(0, seq, "k", "v"))
    }

    #[test]
    fn slots_are_assigned_densely() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut leader = LeaderState::initial(cfg(0, 2, 2));
        let mut out = Outbox::new();
        assert_eq!(leader.on_client_request(cmd(0), &mut rng, &mut out), Submit::Assigned(Slot(0)));
        assert_eq!(leader.on_client_request(cmd(1), &mut rng, &mut out), Submit::Assigned(Slot(1)));
        leader.on_client_request(cmd(2), &mut rng, &mut out);
        assert_eq!(leader.next_slot(), Slot(3));
        // one Phase2a per command, each to a proxy leader
        assert_eq!(out.sends.len(), 3);
        assert!(out.sends.iter().all(|(to, m)| matches!(to, NodeId::ProxyLeader(_)) && matches!(m, Message::Phase2a { .. })));
    }

    #[test]
    fn round_robin_proxy_selection() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut leader = LeaderState::initial(LeaderConfig { selection: Selection::RoundRobin, ..cfg(0, 2, 2) });
        let mut out = Outbox::new();
        for s in 0..6 {
            leader.on_client_request(cmd(s), &mut rng, &mut out);
        }
        let targets: Vec<u32> = out.sends.iter().map(|(to, _)| to.index()).collect();
        assert_eq!(targets, [0, 1, 2, 0, 1, 2]);
    }

    #[test]
    fn election_contacts_one_full_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for ((r, w), expected) in [((2, 3), 3), ((2, 2), 2)] {
            let mut leader = LeaderState::standby(cfg(1, r, w));
            let mut out = Outbox::new();
            leader.leader_elect(Ballot::new(1, 1), &mut rng, &mut out).unwrap();
            assert_eq!(out.sends.len(), expected);
            let ids: AcceptorSet = out.sends.iter().map(|(to, _)| AcceptorId(to.index())).collect();
            assert!(GridQuorumSystem::new(r, w).is_read_quorum(&ids));
        }
    }

    #[test]
    fn election_requires_higher_ballot() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut leader = LeaderState::standby(cfg(1, 2, 2));
        let mut out = Outbox::new();
        leader.leader_elect(Ballot::new(2, 1), &mut rng, &mut out).unwrap();
        let err = leader.leader_elect(Ballot::new(1, 1), &mut rng, &mut out).unwrap_err();
        assert_eq!(err, LeaderError::BallotNotHigher { current: Ballot::new(2, 1), requested: Ballot::new(1, 1) });
    }

    fn elect_with(leader: &mut LeaderState, reports: Vec<(u32, Vec<Vote>)>, out: &mut Outbox) -> Phase1Progress {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let ballot = leader.ballot().successor_for(leader.id());
        leader.leader_elect(ballot, &mut rng, out).unwrap();
        out.clear();
        let mut last = Phase1Progress::Waiting;
        for (a, votes) in reports {
            last = leader.on_phase1b(ballot, AcceptorId(a), votes, &mut rng, out);
        }
        last
    }

    #[test]
    fn empty_row_enters_phase2_at_zero() {
        let mut leader = LeaderState::standby(cfg(1, 2, 2));
        let mut out = Outbox::new();
        // row {a0, a1}
        let p = elect_with(&mut leader, vec![(0, vec![]), (1, vec![])], &mut out);
        assert_eq!(p, Phase1Progress::Completed { recovered: 0 });
        assert!(leader.is_active());
        assert_eq!(leader.next_slot(), Slot(0));
        assert!(out.sends.is_empty());
    }

    #[test]
    fn holes_become_noops() {
        let v = cmd(7);
        let mut leader = LeaderState::standby(cfg(1, 2, 2));
        let mut out = Outbox::new();
        let votes = vec![Vote { slot: Slot(2), ballot: Ballot::new(0, 0), value: v.clone() }];
        let p = elect_with(&mut leader, vec![(2, votes), (3, vec![])], &mut out);
        assert_eq!(p, Phase1Progress::Completed { recovered: 3 });
        assert_eq!(leader.next_slot(), Slot(3));
        let proposed: Vec<(Slot, Batch)> = out
            .sends
            .iter()
            .filter_map(|(_, m)| match m {
                Message::Phase2a { slot, value, ballot } => {
                    assert_eq!(*ballot, leader.ballot());
                    Some((*slot, value.clone()))
                }
                _ => None,
            })
            .collect();
        assert_eq!(proposed, [(Slot(0), Batch::noop()), (Slot(1), Batch::noop()), (Slot(2), v)]);
    }

    #[test]
    fn highest_ballot_vote_wins() {
        let old = cmd(1);
        let newer = cmd(2);
        let reports = vec![
            (0, vec![Vote { slot: Slot(4), ballot: Ballot::new(0, 0), value: old.clone() }]),
            (1, vec![Vote { slot: Slot(4), ballot: Ballot::new(1, 1), value: newer.clone() }]),
        ];
        // oracle: brute-force max by ballot over all reported votes for slot 4
        let expected = reports
            .iter()
            .flat_map(|(_, vs)| vs.iter())
            .filter(|v| v.slot == Slot(4))
            .max_by_key(|v| v.ballot)
            .map(|v| v.value.clone())
            .unwrap();
        assert_eq!(expected, newer);
        let mut leader = LeaderState::standby(cfg(2, 2, 2));
        let mut out = Outbox::new();
        elect_with(&mut leader, reports, &mut out);
        assert_eq!(leader.proposal(Slot(4)), Some(&expected));
        assert_eq!(leader.proposal(Slot(3)), Some(&Batch::noop()));
    }

    #[test]
    fn requests_buffer_during_phase1() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut leader = LeaderState::standby(cfg(1, 2, 2));
        let mut out = Outbox::new();
        assert_eq!(leader.on_client_request(cmd(0), &mut rng, &mut out), Submit::Ignored);
        leader.leader_elect(Ballot::new(1, 1), &mut rng, &mut out).unwrap();
        assert_eq!(leader.on_client_request(cmd(0), &mut rng, &mut out), Submit::Buffered);
        out.clear();
        leader.on_phase1b(Ballot::new(1, 1), AcceptorId(0), vec![], &mut rng, &mut out);
        leader.on_phase1b(Ballot::new(1, 1), AcceptorId(1), vec![], &mut rng, &mut out);
        assert_eq!(leader.next_slot(), Slot(1));
        assert_eq!(out.sends.iter().filter(|(_, m)| matches!(m, Message::Phase2a { .. })).count(), 1);
    }

    #[test]
    fn phase1b_at_wrong_ballot_is_ignored() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut leader = LeaderState::standby(cfg(1, 2, 2));
        let mut out = Outbox::new();
        leader.leader_elect(Ballot::new(1, 1), &mut rng, &mut out).unwrap();
        let p = leader.on_phase1b(Ballot::new(0, 1), AcceptorId(0), vec![], &mut rng, &mut out);
        assert_eq!(p, Phase1Progress::Ignored);
    }

    #[test]
    fn higher_nack_deposes() {
        let mut leader = LeaderState::initial(cfg(0, 2, 2));
        leader.on_nack(Ballot::new(0, 0));
        assert!(leader.is_active());
        leader.on_nack(Ballot::new(1, 1));
        assert!(!leader.is_active());
    }

    #[test]
    fn coupled_leader_relays_to_a_majority() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c = LeaderConfig {
            quorums: QuorumSystem::Majority(crate::quorums::MajorityQuorumSystem::new(1)),
            num_proxies: 0,
            num_replicas: 3,
            ..cfg(0, 2, 2)
        };
        let mut leader = LeaderState::initial(c);
        let mut out = Outbox::new();
        leader.on_client_request(cmd(0), &mut rng, &mut out);
        assert_eq!(out.sends.len(), 2);
        let acceptors: Vec<u32> = out.sends.iter().map(|(to, _)| to.index()).collect();
        out.clear();
        for a in acceptors {
            leader.on_message(
                Message::Phase2b { slot: Slot(0), ballot: Ballot::new(0, 0), acceptor: AcceptorId(a) },
                &mut rng,
                &mut out,
            );
        }
        assert_eq!(out.sends.len(), 3);
        assert!(out.sends.iter().all(|(_, m)| matches!(m, Message::Chosen { .. })));
    }

    #[test]
    fn recover_past_next_slot_fills_noops() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut leader = LeaderState::initial(cfg(0, 2, 2));
        let mut out = Outbox::new();
        leader.on_client_request(cmd(0), &mut rng, &mut out);
        out.clear();
        leader.on_message(Message::Recover { slot: Slot(2) }, &mut rng, &mut out);
        assert_eq!(leader.next_slot(), Slot(3));
        assert!(leader.proposal(Slot(1)).unwrap().is_noop());
        assert!(leader.proposal(Slot(2)).unwrap().is_noop());
        assert_eq!(out.sends.len(), 2);
        out.clear();
        leader.on_message(Message::Recover { slot: Slot(0) }, &mut rng, &mut out);
        assert!(matches!(&out.sends[..], [(_, Message::Phase2a { slot: Slot(0), value, .. })] if *value == cmd(0)));
    }
}
