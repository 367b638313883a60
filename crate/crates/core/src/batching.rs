//! Batchers collect client commands into write batches for the leader and
//! read batches served through one PreRead round. Unbatchers fan result
//! batches back out to clients.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use crate::config::{Ballot, Batch, Command, Selection, Watermark};
use crate::message::{Message, NodeId, Observation, Outbox, ReadId, ResultEntry, Timer};
use crate::quorums::{AcceptorId, QuorumSystem};
use crate::read_path::ReadRound;

#[derive(Clone, Debug)]
pub struct BatcherConfig {
    pub index: u32,
    pub batch_size: u32,
    /// `None` disables the timeout flush.
    pub batch_timeout: Option<u64>,
    pub quorums: QuorumSystem,
    pub num_replicas: u32,
    pub selection: Selection,
    pub read_retry: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Flush {
    None,
    Writes(usize),
    Reads(usize),
}

#[derive(Clone, Debug)]
struct ReadBatch {
    round: ReadRound,
    commands: Vec<Command>,
}

#[derive(Clone, Debug)]
pub struct BatcherState {
    cfg: BatcherConfig,
    leader: u32,
    leader_ballot: Ballot,
    pending_writes: Vec<Command>,
    pending_reads: Vec<Command>,
    write_epoch: u64,
    read_epoch: u64,
    next_read: u64,
    in_flight: BTreeMap<u64, ReadBatch>,
    replica_cursor: u64,
}

impl BatcherState {
    pub fn new(cfg: BatcherConfig) -> Self {
        BatcherState {
            cfg,
            leader: 0,
            leader_ballot: Ballot::default(),
            pending_writes: Vec::new(),
            pending_reads: Vec::new(),
            write_epoch: 0,
            read_epoch: 0,
            next_read: 0,
            in_flight: BTreeMap::new(),
            replica_cursor: 0,
        }
    }

    pub fn leader(&self) -> u32 {
        self.leader
    }

    pub fn pending_writes(&self) -> &[Command] {
        &self.pending_writes
    }

    pub fn pending_reads(&self) -> &[Command] {
        &self.pending_reads
    }

    pub fn reads_in_flight(&self) -> usize {
        self.in_flight.len()
    }

    pub fn on_command<R: Rng + ?Sized>(&mut self, cmd: Command, rng: &mut R, out: &mut Outbox) -> Flush {
        let is_read = cmd.op.is_read();
        let (list, epoch) = if is_read {
            (&mut self.pending_reads, self.read_epoch)
        } else {
            (&mut self.pending_writes, self.write_epoch)
        };
        list.push(cmd);
        if list.len() == 1 {
            if let Some(delay) = self.cfg.batch_timeout {
                let timer = if is_read { Timer::FlushReads { epoch } } else { Timer::FlushWrites { epoch } };
                out.set_timer(delay, timer);
            }
        }
        if list.len() < self.cfg.batch_size as usize {
            return Flush::None;
        }
        if is_read {
            Flush::Reads(self.flush_reads(rng, out))
        } else {
            Flush::Writes(self.flush_writes(out))
        }
    }

    fn flush_writes(&mut self, out: &mut Outbox) -> usize {
        self.write_epoch += 1;
        let batch = Batch::new(core::mem::take(&mut self.pending_writes));
        let n = batch.len();
        if n > 0 {
            out.send(NodeId::Proposer(self.leader), Message::ProposeBatch { batch });
        }
        n
    }

    fn flush_reads<R: Rng + ?Sized>(&mut self, rng: &mut R, out: &mut Outbox) -> usize {
        self.read_epoch += 1;
        let commands = core::mem::take(&mut self.pending_reads);
        let n = commands.len();
        if n > 0 {
            let seq = self.next_read;
            self.next_read += 1;
            self.start_round(seq, 0, commands, rng, out);
        }
        n
    }

    fn start_round<R: Rng + ?Sized>(&mut self, seq: u64, round: u32, commands: Vec<Command>, rng: &mut R, out: &mut Outbox) {
        let id = ReadId { seq, round };
        let round_state = ReadRound::start(id, &self.cfg.quorums, rng, out);
        if let Some(delay) = self.cfg.read_retry {
            out.set_timer(delay, Timer::BatchReadRetry { seq, round });
        }
        self.in_flight.insert(seq, ReadBatch { round: round_state, commands });
    }

    pub fn on_preread_ack<R: Rng + ?Sized>(
        &mut self,
        read_id: ReadId,
        acceptor: AcceptorId,
        watermark: Watermark,
        rng: &mut R,
        out: &mut Outbox,
    ) {
        let Some(batch) = self.in_flight.get_mut(&read_id.seq) else { return };
        if batch.round.id != read_id {
            return;
        }
        let Some(i) = batch.round.on_ack(&self.cfg.quorums, acceptor, watermark) else { return };
        let batch = self.in_flight.remove(&read_id.seq).expect("present");
        let r = self.cfg.selection.pick(self.cfg.num_replicas, &mut self.replica_cursor, rng);
        out.send(NodeId::Replica(r), Message::Read { commands: batch.commands, required: i, batched: true });
    }

    pub fn on_leader_info(&mut self, ballot: Ballot, leader: u32) {
        if ballot > self.leader_ballot {
            self.leader_ballot = ballot;
            self.leader = leader;
        }
    }

    pub fn on_timer<R: Rng + ?Sized>(&mut self, timer: &Timer, rng: &mut R, out: &mut Outbox) {
        match *timer {
            Timer::FlushWrites { epoch } if epoch == self.write_epoch => {
                self.flush_writes(out);
            }
            Timer::FlushReads { epoch } if epoch == self.read_epoch => {
                self.flush_reads(rng, out);
            }
            Timer::BatchReadRetry { seq, round } => {
                let current = self.in_flight.get(&seq).is_some_and(|b| b.round.id.round == round);
                if current {
                    let batch = self.in_flight.remove(&seq).expect("present");
                    self.start_round(seq, round + 1, batch.commands, rng, out);
                }
            }
            _ => {}
        }
    }

    pub fn on_message<R: Rng + ?Sized>(&mut self, msg: Message, rng: &mut R, out: &mut Outbox) {
        match msg {
            Message::ClientRequest { command } => {
                self.on_command(command, rng, out);
            }
            Message::PreReadAck { read_id, acceptor, vote_watermark } => {
                self.on_preread_ack(read_id, acceptor, vote_watermark, rng, out);
            }
            Message::LeaderInfo { ballot, leader } => self.on_leader_info(ballot, leader),
            _ => {}
        }
    }
}

/// Stateless apart from counters.
#[derive(Clone, Debug, Default)]
pub struct UnbatcherState {
    pub batches: u64,
    pub replies: u64,
}

impl UnbatcherState {
    pub fn new() -> Self {
        UnbatcherState::default()
    }

    /// One ClientReply per entry. An empty batch is reported, not forwarded.
    pub fn on_result_batch(&mut self, entries: Vec<ResultEntry>, out: &mut Outbox) -> usize {
        if entries.is_empty() {
            out.observe(Observation::ProtocolError { detail: String::from("empty result batch at unbatcher") });
            return 0;
        }
        self.batches += 1;
        let n = entries.len();
        self.replies += n as u64;
        for entry in entries {
            out.send(NodeId::Client(entry.client.0), Message::ClientReply { entry });
        }
        n
    }

    pub fn on_message(&mut self, msg: Message, out: &mut Outbox) {
        if let Message::ResultBatch { entries } = msg {
            self.on_result_batch(entries, out);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ClientId;
    use crate::quorums::GridQuorumSystem;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(b: u32) -> BatcherConfig {
        BatcherConfig {
            index: 0,
            batch_size: b,
            batch_timeout: Some(10),
            quorums: QuorumSystem::Grid(GridQuorumSystem::new(2, 2)),
            num_replicas: 2,
            selection: Selection::Random,
            read_retry: None,
        }
    }

    fn proposals(out: &Outbox) -> Vec<&Batch> {
        out.sends
            .iter()
            .filter_map(|(to, m)| match m {
                Message::ProposeBatch { batch } if *to == NodeId::Proposer(0) => Some(batch),
                _ => None,
            })
            .collect()
    }

    #[test]
    fn full_batch_goes_to_leader() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut b = BatcherState::new(cfg(3));
        let mut out = Outbox::new();
        assert_eq!(b.on_command(Command::write(0, 0, "a", "1"), &mut rng, &mut out), Flush::None);
        assert_eq!(b.on_command(Command::write(1, 0, "b", "1"), &mut rng, &mut out), Flush::None);
        assert_eq!(b.on_command(Command::write(2, 0, "c", "1"), &mut rng, &mut out), Flush::Writes(3));
        let sent = proposals(&out);
        assert_eq!(sent.len(), 1);
        let clients: Vec<u32> = sent[0].commands.iter().map(|c| c.client.0).collect();
        assert_eq!(clients, [0, 1, 2], "arrival order kept");
    }

    #[test]
    fn timeout_flushes_a_partial_batch() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut b = BatcherState::new(cfg(3));
        let mut out = Outbox::new();
        b.on_command(Command::write(0, 0, "a", "1"), &mut rng, &mut out);
        assert_eq!(out.timers, [(10, Timer::FlushWrites { epoch: 0 })]);
        b.on_timer(&Timer::FlushWrites { epoch: 0 }, &mut rng, &mut out);
        assert_eq!(proposals(&out).len(), 1);
        assert_eq!(proposals(&out)[0].len(), 1);
    }

    #[test]
    fn stale_timer_after_size_flush_is_ignored() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut b = BatcherState::new(cfg(2));
        let mut out = Outbox::new();
        b.on_command(Command::write(0, 0, "a", "1"), &mut rng, &mut out);
        b.on_command(Command::write(1, 0, "a", "1"), &mut rng, &mut out);
        b.on_command(Command::write(2, 0, "a", "1"), &mut rng, &mut out);
        b.on_timer(&Timer::FlushWrites { epoch: 0 }, &mut rng, &mut out);
        assert_eq!(proposals(&out).len(), 1);
        assert_eq!(b.pending_writes().len(), 1);
    }

    #[test]
    fn reads_and_writes_batch_separately() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut b = BatcherState::new(cfg(100));
        let mut out = Outbox::new();
        let cmds: Vec<Command> = (0..20)
            .map(|i| if i % 3 == 0 { Command::read(i, 0, "k") } else { Command::write(i, 0, "k", "v") })
            .collect();
        for c in cmds.clone() {
            b.on_command(c, &mut rng, &mut out);
        }
        let (reads, writes): (Vec<_>, Vec<_>) = cmds.into_iter().partition(|c| c.op.is_read());
        assert_eq!(b.pending_reads(), &reads[..]);
        assert_eq!(b.pending_writes(), &writes[..]);
    }

    #[test]
    fn read_batch_uses_one_preread_round_and_one_read() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut b = BatcherState::new(cfg(5));
        let mut out = Outbox::new();
        for c in 0..5 {
            b.on_command(Command::read(c, 0, "k"), &mut rng, &mut out);
        }
        let prereads: Vec<(NodeId, ReadId)> = out
            .sends
            .iter()
            .filter_map(|(to, m)| match m {
                Message::PreRead { read_id } => Some((*to, *read_id)),
                _ => None,
            })
            .collect();
        assert_eq!(prereads.len(), 2);
        out.clear();
        let wms = [4, 9];
        for ((to, id), wm) in prereads.iter().zip(wms) {
            b.on_preread_ack(*id, AcceptorId(to.index()), Watermark(wm), &mut rng, &mut out);
        }
        assert_eq!(out.sends.len(), 1);
        let (to, Message::Read { commands, required, batched }) = &out.sends[0] else { panic!() };
        assert_eq!(to.role(), crate::message::RoleKind::Replica);
        assert_eq!(commands.len(), 5);
        assert_eq!(*required, Watermark(9));
        assert!(*batched);
    }

    #[test]
    fn read_retry_discards_old_round() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut b = BatcherState::new(BatcherConfig { read_retry: Some(50), ..cfg(1) });
        let mut out = Outbox::new();
        b.on_command(Command::read(0, 0, "k"), &mut rng, &mut out);
        b.on_timer(&Timer::BatchReadRetry { seq: 0, round: 0 }, &mut rng, &mut out);
        out.clear();
        let old = ReadId { seq: 0, round: 0 };
        for a in 0..4 {
            b.on_preread_ack(old, AcceptorId(a), Watermark(1), &mut rng, &mut out);
        }
        assert!(out.sends.is_empty());
        assert_eq!(b.reads_in_flight(), 1);
    }

    #[test]
    fn leader_info_redirects_writes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut b = BatcherState::new(cfg(1));
        b.on_leader_info(Ballot::new(1, 1), 1);
        b.on_leader_info(Ballot::new(0, 0), 0);
        let mut out = Outbox::new();
        b.on_command(Command::write(0, 0, "a", "1"), &mut rng, &mut out);
        assert!(matches!(out.sends[0], (NodeId::Proposer(1), Message::ProposeBatch { .. })));
    }

    fn entry(client: u32, seq: u64) -> ResultEntry {
        ResultEntry { client: ClientId(client), seq, out: Some("OK".into()), slot: Watermark(0) }
    }

    #[test]
    fn unbatcher_fans_out_one_reply_per_entry() {
        let mut u = UnbatcherState::new();
        let mut out = Outbox::new();
        let entries = alloc::vec![entry(0, 0), entry(1, 0), entry(2, 3), entry(1, 1)];
        assert_eq!(u.on_result_batch(entries.clone(), &mut out), 4);
        for (e, (to, m)) in entries.iter().zip(&out.sends) {
            assert_eq!(*to, NodeId::Client(e.client.0));
            assert_eq!(*m, Message::ClientReply { entry: e.clone() });
        }
    }

    #[test]
    fn empty_result_batch_is_a_protocol_error() {
        let mut u = UnbatcherState::new();
        let mut out = Outbox::new();
        assert_eq!(u.on_result_batch(Vec::new(), &mut out), 0);
        assert!(out.sends.is_empty());
        assert!(matches!(out.observations[..], [Observation::ProtocolError { .. }]));
    }
}
