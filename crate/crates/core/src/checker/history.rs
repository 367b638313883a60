use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::config::Op;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Inv,
    Res,
}

/// The operation part of a history line. Noops never appear in histories.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum HistoryOp {
    Read { key: String },
    Write { key: String, value: String },
}

impl HistoryOp {
    pub fn from_op(op: &Op) -> Option<HistoryOp> {
        match op {
            Op::Read { key } => Some(HistoryOp::Read { key: key.clone() }),
            Op::Write { key, value } => Some(HistoryOp::Write { key: key.clone(), value: value.clone() }),
            Op::Noop => None,
        }
    }

    pub fn key(&self) -> &str {
        match self {
            HistoryOp::Read { key } | HistoryOp::Write { key, .. } => key,
        }
    }

    pub fn is_read(&self) -> bool {
        matches!(self, HistoryOp::Read { .. })
    }
}

/// One line of a history file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryEvent {
    pub t: u64,
    pub kind: EventKind,
    pub client: u32,
    pub seq: u64,
    pub op: HistoryOp,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<String>,
}

/// Invocations and responses in the order they happened. Position in the
/// list, not `t`, decides real-time precedence.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct History {
    pub events: Vec<HistoryEvent>,
}

/// A paired invocation and (maybe) response.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Operation {
    pub client: u32,
    pub seq: u64,
    pub op: HistoryOp,
    pub inv: usize,
    /// Index of the response event; `None` while pending.
    pub res: Option<usize>,
    pub out: Option<String>,
}

impl Operation {
    pub fn is_pending(&self) -> bool {
        self.res.is_none()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum MalformedHistory {
    #[error("response for client {client} seq {seq} at event {index} has no invocation")]
    ResponseWithoutInvocation { client: u32, seq: u64, index: usize },
    #[error("client {client} invoked seq {seq} at event {index} while seq {pending} was pending")]
    OverlappingInvocations { client: u32, seq: u64, pending: u64, index: usize },
    #[error("client {client} seq {seq} invoked twice (event {index})")]
    DuplicateInvocation { client: u32, seq: u64, index: usize },
}

impl History {
    pub fn new() -> Self {
        History::default()
    }

    pub fn push(&mut self, event: HistoryEvent) {
        self.events.push(event);
    }

    pub fn invoke(&mut self, t: u64, client: u32, seq: u64, op: HistoryOp) {
        self.events.push(HistoryEvent { t, kind: EventKind::Inv, client, seq, op, out: None });
    }

    pub fn respond(&mut self, t: u64, client: u32, seq: u64, op: HistoryOp, out: Option<String>) {
        self.events.push(HistoryEvent { t, kind: EventKind::Res, client, seq, op, out });
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Pairs events into operations, in invocation order.
    pub fn operations(&self) -> Result<Vec<Operation>, MalformedHistory> {
        let mut ops: Vec<Operation> = Vec::new();
        let mut by_id: BTreeMap<(u32, u64), usize> = BTreeMap::new();
        let mut pending: BTreeMap<u32, u64> = BTreeMap::new();
        for (index, e) in self.events.iter().enumerate() {
            match e.kind {
                EventKind::Inv => {
                    if by_id.contains_key(&(e.client, e.seq)) {
                        return Err(MalformedHistory::DuplicateInvocation { client: e.client, seq: e.seq, index });
                    }
                    if let Some(&p) = pending.get(&e.client) {
                        return Err(MalformedHistory::OverlappingInvocations {
                            client: e.client,
                            seq: e.seq,
                            pending: p,
                            index,
                        });
                    }
                    pending.insert(e.client, e.seq);
                    by_id.insert((e.client, e.seq), ops.len());
                    ops.push(Operation {
                        client: e.client,
                        seq: e.seq,
                        op: e.op.clone(),
                        inv: index,
                        res: None,
                        out: None,
                    });
                }
                EventKind::Res => {
                    let slot = by_id.get(&(e.client, e.seq)).copied();
                    let open = pending.get(&e.client) == Some(&e.seq);
                    match slot {
                        Some(i) if open => {
                            pending.remove(&e.client);
                            ops[i].res = Some(index);
                            ops[i].out = e.out.clone();
                        }
                        _ => {
                            return Err(MalformedHistory::ResponseWithoutInvocation {
                                client: e.client,
                                seq: e.seq,
                                index,
                            })
                        }
                    }
                }
            }
        }
        Ok(ops)
    }

    /// The history restricted to the given `(client, seq)` operations.
    pub fn restrict(&self, keep: &[(u32, u64)]) -> History {
        History {
            events: self.events.iter().filter(|e| keep.contains(&(e.client, e.seq))).cloned().collect(),
        }
    }
}
