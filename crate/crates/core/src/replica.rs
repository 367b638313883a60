//! Replica state machine: the chosen log, contiguous execution against a
//! key-value store, round-robin replies, and watermark-gated reads.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use thiserror::Error;

use crate::config::{Batch, ClientId, Command, Op, Selection, Slot, Watermark};
use crate::message::{Message, NodeId, Observation, Outbox, ResultEntry, Timer};

pub type KvStore = BTreeMap<String, String>;

pub const WRITE_OK: &str = "OK";

/// Result of applying one command.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Output {
    Ok,
    /// A read; `None` is the absent marker.
    Value(Option<String>),
    Nothing,
}

impl Output {
    pub fn into_out(self) -> Option<String> {
        match self {
            Output::Ok => Some(String::from(WRITE_OK)),
            Output::Value(v) => v,
            Output::Nothing => None,
        }
    }
}

pub fn replica_apply(kv: &mut KvStore, cmd: &Command) -> Output {
    match &cmd.op {
        Op::Write { key, value } => {
            kv.insert(key.clone(), value.clone());
            Output::Ok
        }
        Op::Read { key } => Output::Value(kv.get(key).cloned()),
        Op::Noop => Output::Nothing,
    }
}

#[derive(Clone, Debug)]
pub struct ReplicaConfig {
    pub index: u32,
    pub num_replicas: u32,
    pub num_unbatchers: u32,
    pub num_proposers: u32,
    pub selection: Selection,
    pub recover_timeout: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("agreement violated at slot {slot}: replica {replica} holds a different value")]
pub struct AgreementViolation {
    pub replica: u32,
    pub slot: Slot,
    pub stored: Batch,
    pub incoming: Batch,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReadOutcome {
    Served,
    Buffered,
}

#[derive(Clone, Debug)]
struct PendingRead {
    commands: Vec<Command>,
    required: Watermark,
    batched: bool,
}

#[derive(Clone, Debug)]
pub struct ReplicaState {
    cfg: ReplicaConfig,
    log: BTreeMap<Slot, Batch>,
    executed: Watermark,
    kv: KvStore,
    pending_reads: Vec<PendingRead>,
    /// Highest executed seq per client and the reply it produced.
    client_table: BTreeMap<ClientId, ResultEntry>,
    highest_chosen: Watermark,
    recover_armed: bool,
    /// Executed watermark when the recover timer was armed.
    recover_mark: Watermark,
    cursor: u64,
}

impl ReplicaState {
    pub fn new(cfg: ReplicaConfig) -> Self {
        ReplicaState {
            cfg,
            log: BTreeMap::new(),
            executed: Watermark::NONE,
            kv: KvStore::new(),
            pending_reads: Vec::new(),
            client_table: BTreeMap::new(),
            highest_chosen: Watermark::NONE,
            recover_armed: false,
            recover_mark: Watermark::NONE,
            cursor: 0,
        }
    }

    pub fn index(&self) -> u32 {
        self.cfg.index
    }

    pub fn executed_watermark(&self) -> Watermark {
        self.executed
    }

    pub fn kv(&self) -> &KvStore {
        &self.kv
    }

    pub fn log(&self) -> &BTreeMap<Slot, Batch> {
        &self.log
    }

    pub fn pending_reads(&self) -> usize {
        self.pending_reads.iter().map(|r| r.commands.len()).sum()
    }

    fn is_responder(&self, slot: Slot) -> bool {
        slot.0 % u64::from(self.cfg.num_replicas) == u64::from(self.cfg.index)
    }

    fn deliver<R: Rng + ?Sized>(&mut self, entries: Vec<ResultEntry>, via_unbatcher: bool, rng: &mut R, out: &mut Outbox) {
        if entries.is_empty() {
            return;
        }
        if via_unbatcher && self.cfg.num_unbatchers > 0 {
            let u = self.cfg.selection.pick(self.cfg.num_unbatchers, &mut self.cursor, rng);
            out.send(NodeId::Unbatcher(u), Message::ResultBatch { entries });
        } else {
            for entry in entries {
                out.send(NodeId::Client(entry.client.0), Message::ClientReply { entry });
            }
        }
    }

    fn execute<R: Rng + ?Sized>(&mut self, slot: Slot, rng: &mut R, out: &mut Outbox) {
        let batch = self.log[&slot].clone();
        let mut replies = Vec::new();
        for cmd in &batch.commands {
            if cmd.is_noop() {
                continue;
            }
            match self.client_table.get(&cmd.client) {
                Some(prev) if prev.seq > cmd.seq => continue,
                Some(prev) if prev.seq == cmd.seq => {
                    replies.push(prev.clone());
                    continue;
                }
                _ => {}
            }
            let out = replica_apply(&mut self.kv, cmd).into_out();
            let entry = ResultEntry { client: cmd.client, seq: cmd.seq, out, slot: Watermark::at(slot) };
            self.client_table.insert(cmd.client, entry.clone());
            replies.push(entry);
        }
        self.executed = Watermark::at(slot);
        out.observe(Observation::Executed { replica: self.cfg.index, slot });
        if self.is_responder(slot) && !batch.is_noop() {
            out.observe(Observation::Responded { replica: self.cfg.index, slot });
            self.deliver(replies, true, rng, out);
        }
    }

    fn serve<R: Rng + ?Sized>(&mut self, read: PendingRead, rng: &mut R, out: &mut Outbox) {
        let mut entries = Vec::with_capacity(read.commands.len());
        for cmd in read.commands {
            let Op::Read { key } = &cmd.op else { continue };
            let value = self.kv.get(key).cloned();
            out.observe(Observation::ReadServed {
                replica: self.cfg.index,
                client: cmd.client,
                seq: cmd.seq,
                key: key.clone(),
                out: value.clone(),
                required: read.required,
                at: self.executed,
            });
            entries.push(ResultEntry { client: cmd.client, seq: cmd.seq, out: value, slot: self.executed });
        }
        self.deliver(entries, read.batched, rng, out);
    }

    fn stalled(&self) -> bool {
        self.highest_chosen > self.executed || !self.pending_reads.is_empty()
    }

    fn arm_recover(&mut self, out: &mut Outbox) {
        if let Some(delay) = self.cfg.recover_timeout {
            if !self.recover_armed && self.stalled() {
                self.recover_armed = true;
                self.recover_mark = self.executed;
                out.set_timer(delay, Timer::ReplicaRecover);
            }
        }
    }

    /// Stores the chosen batch and executes the contiguous prefix. Returns the
    /// slots executed by this call.
    pub fn on_chosen<R: Rng + ?Sized>(
        &mut self,
        slot: Slot,
        value: Batch,
        rng: &mut R,
        out: &mut Outbox,
    ) -> Result<Vec<Slot>, AgreementViolation> {
        if let Some(stored) = self.log.get(&slot) {
            if *stored != value {
                out.observe(Observation::AgreementViolation { replica: self.cfg.index, slot });
                return Err(AgreementViolation { replica: self.cfg.index, slot, stored: stored.clone(), incoming: value });
            }
            return Ok(Vec::new());
        }
        self.log.insert(slot, value);
        self.highest_chosen = self.highest_chosen.max(Watermark::at(slot));
        let mut executed = Vec::new();
        while self.log.contains_key(&self.executed.next_slot()) {
            let next = self.executed.next_slot();
            self.execute(next, rng, out);
            executed.push(next);
        }
        if !executed.is_empty() && !self.pending_reads.is_empty() {
            let (ready, waiting): (Vec<_>, Vec<_>) =
                core::mem::take(&mut self.pending_reads).into_iter().partition(|r| self.executed.covers_mark(r.required));
            self.pending_reads = waiting;
            for read in ready {
                self.serve(read, rng, out);
            }
        }
        self.arm_recover(out);
        Ok(executed)
    }

    /// Serves the reads once everything up to `required` is executed.
    ///
    /// The log may already be past `required`; reads then see the newer state.
    pub fn on_read<R: Rng + ?Sized>(
        &mut self,
        commands: Vec<Command>,
        required: Watermark,
        batched: bool,
        rng: &mut R,
        out: &mut Outbox,
    ) -> ReadOutcome {
        let read = PendingRead { commands, required, batched };
        if self.executed.covers_mark(required) {
            self.serve(read, rng, out);
            ReadOutcome::Served
        } else {
            self.pending_reads.push(read);
            self.arm_recover(out);
            ReadOutcome::Buffered
        }
    }

    pub fn on_timer(&mut self, timer: &Timer, out: &mut Outbox) {
        if *timer != Timer::ReplicaRecover {
            return;
        }
        self.recover_armed = false;
        // Only a replica that made no progress over a whole timeout asks.
        if self.stalled() && self.executed == self.recover_mark {
            let msg = Message::Recover { slot: self.executed.next_slot() };
            out.broadcast((0..self.cfg.num_proposers).map(NodeId::Proposer), &msg);
        }
        self.arm_recover(out);
    }

    pub fn on_message<R: Rng + ?Sized>(&mut self, msg: Message, rng: &mut R, out: &mut Outbox) -> Result<(), AgreementViolation> {
        match msg {
            Message::Chosen { slot, value } => {
                self.on_chosen(slot, value, rng, out)?;
            }
            Message::Read { commands, required, batched } => {
                self.on_read(commands, required, batched, rng, out);
            }
            _ => {}
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(index: u32, n: u32) -> ReplicaConfig {
        ReplicaConfig {
            index,
            num_replicas: n,
            num_unbatchers: 0,
            num_proposers: 2,
            selection: Selection::Random,
            recover_timeout: None,
        }
    }

    fn w(client: u32, seq: u64, k: &str, v: &str) -> Batch {
        Batch::single(Command::write(client, seq, k, v))
    }

    fn replies(out: &Outbox) -> Vec<ResultEntry> {
        out.sends
            .iter()
            .filter_map(|(_, m)| match m {
                Message::ClientReply { entry } => Some(entry.clone()),
                _ => None,
            })
            .collect()
    }

    #[test]
    fn executes_in_log_order_despite_arrival_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut r = ReplicaState::new(cfg(0, 1));
        let mut out = Outbox::new();
        assert_eq!(r.on_chosen(Slot(0), w(0, 0, "x", "1"), &mut rng, &mut out).unwrap(), [Slot(0)]);
        assert!(r.on_chosen(Slot(2), w(0, 2, "z", "3"), &mut rng, &mut out).unwrap().is_empty());
        assert_eq!(r.executed_watermark(), Watermark(0));
        assert_eq!(r.on_chosen(Slot(1), w(0, 1, "y", "2"), &mut rng, &mut out).unwrap(), [Slot(1), Slot(2)]);
        assert_eq!(r.executed_watermark(), Watermark(2));
        let executed: Vec<Slot> = out
            .observations
            .iter()
            .filter_map(|o| match o {
                Observation::Executed { slot, .. } => Some(*slot),
                _ => None,
            })
            .collect();
        assert_eq!(executed, [Slot(0), Slot(1), Slot(2)]);
    }

    #[test]
    fn only_the_round_robin_owner_replies() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut reps: Vec<ReplicaState> = (0..3).map(|i| ReplicaState::new(cfg(i, 3))).collect();
        for s in 0..5u64 {
            let mut outs: Vec<Outbox> = (0..3).map(|_| Outbox::new()).collect();
            for (r, out) in reps.iter_mut().zip(outs.iter_mut()) {
                r.on_chosen(Slot(s), w(9, s, "k", "v"), &mut rng, out).unwrap();
            }
            let responders: Vec<u32> = (0..3).filter(|&i| !replies(&outs[i as usize]).is_empty()).collect();
            assert_eq!(responders, [(s % 3) as u32]);
        }
    }

    #[test]
    fn duplicate_chosen_does_not_reexecute() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut r = ReplicaState::new(cfg(0, 1));
        let mut out = Outbox::new();
        r.on_chosen(Slot(0), w(0, 0, "k", "v"), &mut rng, &mut out).unwrap();
        out.clear();
        assert!(r.on_chosen(Slot(0), w(0, 0, "k", "v"), &mut rng, &mut out).unwrap().is_empty());
        assert!(out.is_empty());
    }

    #[test]
    fn conflicting_chosen_is_an_agreement_violation() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut r = ReplicaState::new(cfg(0, 1));
        let mut out = Outbox::new();
        r.on_chosen(Slot(3), w(0, 0, "k", "a"), &mut rng, &mut out).unwrap();
        let err = r.on_chosen(Slot(3), w(0, 0, "k", "b"), &mut rng, &mut out).unwrap_err();
        assert_eq!(err.slot, Slot(3));
    }

    #[test]
    fn retried_command_executes_once() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut r = ReplicaState::new(cfg(0, 1));
        let mut out = Outbox::new();
        r.on_chosen(Slot(0), w(4, 1, "k", "first"), &mut rng, &mut out).unwrap();
        r.on_chosen(Slot(1), w(5, 0, "k", "other"), &mut rng, &mut out).unwrap();
        out.clear();
        // the same (client, seq) lands again in slot 2
        r.on_chosen(Slot(2), w(4, 1, "k", "first"), &mut rng, &mut out).unwrap();
        assert_eq!(r.kv()["k"], "other");
        let rep = replies(&out);
        assert_eq!(rep.len(), 1);
        assert_eq!(rep[0].slot, Watermark(0), "cached reply keeps the original slot");
    }

    #[test]
    fn reads_wait_for_their_slot() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut r = ReplicaState::new(cfg(0, 1));
        let mut out = Outbox::new();
        for s in 0..=3 {
            r.on_chosen(Slot(s), w(0, s, "k", &alloc::format!("{s}")), &mut rng, &mut out).unwrap();
        }
        out.clear();
        let read = Command::read(1, 0, "k");
        assert_eq!(r.on_read(alloc::vec![read.clone()], Watermark(7), false, &mut rng, &mut out), ReadOutcome::Buffered);
        assert!(replies(&out).is_empty());
        for s in 4..=7 {
            r.on_chosen(Slot(s), w(0, s, "k", &alloc::format!("{s}")), &mut rng, &mut out).unwrap();
        }
        let rep: Vec<_> = replies(&out).into_iter().filter(|e| e.client == ClientId(1)).collect();
        assert_eq!(rep.len(), 1);
        assert_eq!(rep[0].out.as_deref(), Some("7"));
        assert_eq!(r.pending_reads(), 0);
    }

    #[test]
    fn reads_below_watermark_are_immediate() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut r = ReplicaState::new(cfg(0, 1));
        let mut out = Outbox::new();
        for s in 0..=10 {
            r.on_chosen(Slot(s), w(0, s, "k", "v"), &mut rng, &mut out).unwrap();
        }
        let read = alloc::vec![Command::read(1, 0, "k")];
        assert_eq!(r.on_read(read.clone(), Watermark(7), false, &mut rng, &mut out), ReadOutcome::Served);
        let mut fresh = ReplicaState::new(cfg(0, 1));
        out.clear();
        assert_eq!(fresh.on_read(read, Watermark::NONE, false, &mut rng, &mut out), ReadOutcome::Served);
        assert_eq!(replies(&out)[0].out, None);
    }

    #[test]
    fn apply_semantics() {
        let mut kv = KvStore::new();
        assert_eq!(replica_apply(&mut kv, &Command::read(0, 0, "k")), Output::Value(None));
        assert_eq!(replica_apply(&mut kv, &Command::write(0, 1, "k", "1")), Output::Ok);
        assert_eq!(replica_apply(&mut kv, &Command::read(0, 2, "k")), Output::Value(Some("1".into())));
        let before = kv.clone();
        assert_eq!(replica_apply(&mut kv, &Command::noop()), Output::Nothing);
        assert_eq!(kv, before);
    }

    #[test]
    fn replies_route_through_unbatchers_as_one_batch() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut r = ReplicaState::new(ReplicaConfig { num_unbatchers: 2, ..cfg(0, 1) });
        let mut out = Outbox::new();
        let batch = Batch::new((0..4).map(|c| Command::write(c, 0, "k", "v")).collect());
        r.on_chosen(Slot(0), batch, &mut rng, &mut out).unwrap();
        assert_eq!(out.sends.len(), 1);
        assert!(matches!(&out.sends[0], (NodeId::Unbatcher(_), Message::ResultBatch { entries }) if entries.len() == 4));
    }

    #[test]
    fn stalled_replica_asks_proposers_to_recover() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut r = ReplicaState::new(ReplicaConfig { recover_timeout: Some(100), ..cfg(0, 1) });
        let mut out = Outbox::new();
        r.on_chosen(Slot(1), w(0, 1, "k", "v"), &mut rng, &mut out).unwrap();
        assert_eq!(out.timers, [(100, Timer::ReplicaRecover)]);
        out.clear();
        r.on_timer(&Timer::ReplicaRecover, &mut out);
        let recovers: Vec<_> = out.sends.iter().filter(|(_, m)| *m == Message::Recover { slot: Slot(0) }).collect();
        assert_eq!(recovers.len(), 2);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn any_delivery_order_converges(perm in Just((0u64..12).collect::<Vec<_>>()).prop_shuffle()) {
                let mut rng = ChaCha8Rng::seed_from_u64(1);
                let values: Vec<Batch> = (0..12).map(|s| w((s % 3) as u32, s, &alloc::format!("k{}", s % 4), &alloc::format!("{s}"))).collect();
                let mut a = ReplicaState::new(cfg(0, 2));
                let mut b = ReplicaState::new(cfg(1, 2));
                let mut out = Outbox::new();
                for s in 0..12u64 {
                    a.on_chosen(Slot(s), values[s as usize].clone(), &mut rng, &mut out).unwrap();
                }
                for &s in &perm {
                    b.on_chosen(Slot(s), values[s as usize].clone(), &mut rng, &mut out).unwrap();
                }
                prop_assert_eq!(a.kv(), b.kv());
                prop_assert_eq!(a.executed_watermark(), b.executed_watermark());
            }
        }
    }
}
