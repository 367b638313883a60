use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::config::{ClientId, Slot, Variant, Watermark};
use crate::message::{MessageKind, NodeId, Observation};
use crate::read_path::ReadConsistency;
use crate::replica::{replica_apply, KvStore};
use crate::sim::SimOutput;

use super::history::EventKind;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AuditCheck {
    pub name: &'static str,
    pub failures: Vec<String>,
}

impl AuditCheck {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AuditReport {
    pub checks: Vec<AuditCheck>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(AuditCheck::passed)
    }

    pub fn check(&self, name: &str) -> Option<&AuditCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn failures(&self) -> impl Iterator<Item = (&'static str, &String)> {
        self.checks.iter().flat_map(|c| c.failures.iter().map(move |f| (c.name, f)))
    }
}

fn agreement(out: &SimOutput) -> Vec<String> {
    let mut f: Vec<String> = out.conflicts.iter().map(|c| format!("slot {}: two values certified", c.slot.0)).collect();
    for e in &out.trace {
        if let Observation::AgreementViolation { replica, slot } = e.obs {
            f.push(format!("slot {}: replica {} received a conflicting value", slot.0, replica));
        }
    }
    f
}

fn exactly_one_responder(out: &SimOutput) -> Vec<String> {
    let n = u64::from(out.plan.num_replicas);
    let mut executed: BTreeMap<u32, BTreeSet<Slot>> = BTreeMap::new();
    let mut responders: BTreeMap<Slot, Vec<u32>> = BTreeMap::new();
    for e in &out.trace {
        match e.obs {
            Observation::Executed { replica, slot } => {
                executed.entry(replica).or_default().insert(slot);
            }
            Observation::Responded { replica, slot } => responders.entry(slot).or_default().push(replica),
            _ => {}
        }
    }
    let mut f = Vec::new();
    for (slot, value) in &out.chosen {
        if value.is_noop() {
            continue;
        }
        let owner = (slot.0 % n) as u32;
        let got = responders.get(slot).cloned().unwrap_or_default();
        let owner_executed = executed.get(&owner).is_some_and(|s| s.contains(slot));
        let want: &[u32] = if owner_executed { &[owner] } else { &[] };
        if got != want {
            f.push(format!("slot {}: responders {:?}, expected {:?}", slot.0, got, want));
        }
    }
    f
}

fn acceptor_load(out: &SimOutput) -> Vec<String> {
    out.counters
        .nodes
        .iter()
        .filter(|(id, _)| matches!(id, NodeId::Acceptor(_)))
        .filter(|(_, c)| c.messages_in != c.messages_out)
        .map(|(id, c)| format!("{id}: {} in, {} out", c.messages_in, c.messages_out))
        .collect()
}

fn leader_load(out: &SimOutput) -> Vec<String> {
    if out.plan.variant != Variant::Compartmentalized || !out.lossless || out.faults_injected {
        return Vec::new();
    }
    let c = out.counters.node(NodeId::Proposer(0));
    let repairs = c.kind_in(MessageKind::Recover) + c.kind_in(MessageKind::Phase2aUnavailable);
    if repairs == 0 && c.messages_in != c.messages_out {
        return alloc::vec![format!("proposer0: {} in, {} out", c.messages_in, c.messages_out)];
    }
    Vec::new()
}

/// Maps (client, seq) of completed writes to their slot.
fn write_slots(out: &SimOutput) -> BTreeMap<(ClientId, u64), Watermark> {
    out.trace
        .iter()
        .filter_map(|e| match &e.obs {
            Observation::Completed { client, seq, op, slot, .. } if !op.is_read() => Some(((*client, *seq), *slot)),
            _ => None,
        })
        .collect()
}

fn read_watermark(out: &SimOutput) -> Vec<String> {
    if out.read_consistency != ReadConsistency::Linearizable {
        return Vec::new();
    }
    let slots = write_slots(out);
    let mut bound: BTreeMap<(u32, u64), Watermark> = BTreeMap::new();
    let mut max_done = Watermark::NONE;
    for e in &out.history.events {
        match e.kind {
            EventKind::Res if !e.op.is_read() => {
                if let Some(s) = slots.get(&(ClientId(e.client), e.seq)) {
                    max_done = max_done.max(*s);
                }
            }
            EventKind::Inv if e.op.is_read() => {
                bound.insert((e.client, e.seq), max_done);
            }
            _ => {}
        }
    }
    let mut f = Vec::new();
    for e in &out.trace {
        if let Observation::ReadServed { client, seq, required, at, .. } = &e.obs {
            let want = bound.get(&(client.0, *seq)).copied().unwrap_or(Watermark::NONE);
            if *required < want {
                f.push(format!("c{} #{}: read index {} below completed write slot {}", client.0, seq, required.0, want.0));
            }
            if at < required {
                f.push(format!("c{} #{}: served at {} before index {}", client.0, seq, at.0, required.0));
            }
        }
    }
    f
}

/// Every read must see exactly the state after the prefix it was served at.
fn prefix_reads(out: &SimOutput) -> Vec<String> {
    let mut reads: Vec<(Watermark, ClientId, u64, &str, Option<&String>)> = Vec::new();
    for e in &out.trace {
        if let Observation::ReadServed { client, seq, key, out: value, at, .. } = &e.obs {
            reads.push((*at, *client, *seq, key.as_str(), value.as_ref()));
        }
    }
    reads.sort_by_key(|r| r.0);
    let mut kv = KvStore::new();
    let mut table: BTreeMap<ClientId, u64> = BTreeMap::new();
    let mut next = Slot(0);
    let mut f = Vec::new();
    for (at, client, seq, key, value) in reads {
        while Watermark::at(next) <= at {
            let Some(batch) = out.chosen.get(&next) else {
                f.push(format!("slot {} executed but never certified", next.0));
                return f;
            };
            for cmd in &batch.commands {
                if cmd.is_noop() || table.get(&cmd.client).is_some_and(|&s| s >= cmd.seq) {
                    continue;
                }
                table.insert(cmd.client, cmd.seq);
                replica_apply(&mut kv, cmd);
            }
            next = next.next();
        }
        if kv.get(key) != value {
            f.push(format!("c{} #{}: read {:?} at prefix {}, prefix holds {:?}", client.0, seq, value, at.0, kv.get(key)));
        }
    }
    f
}

fn monotone_slots(out: &SimOutput) -> Vec<String> {
    if out.read_consistency == ReadConsistency::Eventual {
        return Vec::new();
    }
    let mut f = Vec::new();
    for (client, slots) in &out.observed_slots {
        if let Some(w) = slots.windows(2).position(|w| w[1] < w[0]) {
            f.push(format!("c{}: slot {} after {}", client.0, slots[w + 1].0, slots[w].0));
        }
    }
    f
}

fn protocol_errors(out: &SimOutput) -> Vec<String> {
    out.trace
        .iter()
        .filter_map(|e| match &e.obs {
            Observation::ProtocolError { detail } => Some(format!("{}: {detail}", e.node)),
            _ => None,
        })
        .collect()
}

/// Runs every trace check. Checks that need recorded observations pass
/// vacuously when the trace was not kept.
pub fn audit_trace(out: &SimOutput) -> AuditReport {
    let checks = [
        ("agreement", agreement(out)),
        ("exactly_one_responder", exactly_one_responder(out)),
        ("acceptor_load", acceptor_load(out)),
        ("leader_load", leader_load(out)),
        ("read_watermark", read_watermark(out)),
        ("prefix_reads", prefix_reads(out)),
        ("monotone_slots", monotone_slots(out)),
        ("protocol_errors", protocol_errors(out)),
    ];
    AuditReport { checks: checks.into_iter().map(|(name, failures)| AuditCheck { name, failures }).collect() }
}
