use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::history::{History, HistoryOp, MalformedHistory, Operation};

pub const DEFAULT_OP_BOUND: usize = 400;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckMode {
    #[default]
    Linearizable,
    Sequential,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct OpRef {
    pub client: u32,
    pub seq: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Verdict {
    /// `witness` is a legal sequential order of every included operation.
    Ok { witness: Vec<OpRef> },
    /// A 1-minimal set of operations that is already not checkable: dropping
    /// any one of them yields an acceptable history.
    Violation { ops: Vec<OpRef> },
}

impl Verdict {
    pub fn is_ok(&self) -> bool {
        matches!(self, Verdict::Ok { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum CheckError {
    #[error("history has {ops} operations, more than the exhaustive bound of {bound}")]
    CapacityExceeded { ops: usize, bound: usize },
    #[error("malformed history: {0}")]
    Malformed(#[from] MalformedHistory),
}

struct Prepared {
    id: OpRef,
    client: usize,
    key: usize,
    /// Value id written, or for reads the expected value id (0 = absent).
    value: u32,
    is_read: bool,
    inv: usize,
    res: Option<usize>,
}

/// Ops the search must place (completed) or may place (pending writes).
/// Pending reads impose nothing and are dropped.
fn prepare(ops: &[Operation]) -> Vec<Prepared> {
    let mut keys: BTreeMap<&str, usize> = BTreeMap::new();
    let mut values: BTreeMap<&str, u32> = BTreeMap::new();
    let mut clients: BTreeMap<u32, usize> = BTreeMap::new();
    let mut out = Vec::new();
    for o in ops {
        if o.is_pending() && o.op.is_read() {
            continue;
        }
        let nk = keys.len();
        let key = *keys.entry(o.op.key()).or_insert(nk);
        let nc = clients.len();
        let client = *clients.entry(o.client).or_insert(nc);
        let (value, is_read) = match &o.op {
            HistoryOp::Write { value, .. } => {
                let nv = values.len() as u32 + 1;
                (*values.entry(value.as_str()).or_insert(nv), false)
            }
            HistoryOp::Read { .. } => match &o.out {
                None => (0, true),
                Some(v) => {
                    let nv = values.len() as u32 + 1;
                    (*values.entry(v.as_str()).or_insert(nv), true)
                }
            },
        };
        out.push(Prepared { id: OpRef { client: o.client, seq: o.seq }, client, key, value, is_read, inv: o.inv, res: o.res });
    }
    out
}

struct Search<'a> {
    ops: &'a [Prepared],
    mode: CheckMode,
    /// Per client, its op indices in program order.
    programs: Vec<Vec<usize>>,
    seen: BTreeSet<(Vec<u64>, Vec<u32>)>,
    path: Vec<usize>,
}

impl<'a> Search<'a> {
    fn new(ops: &'a [Prepared], mode: CheckMode) -> Self {
        let nclients = ops.iter().map(|o| o.client + 1).max().unwrap_or(0);
        let mut programs = vec![Vec::new(); nclients];
        for (i, o) in ops.iter().enumerate() {
            programs[o.client].push(i);
        }
        Search { ops, mode, programs, seen: BTreeSet::new(), path: Vec::new() }
    }

    fn candidates(&self, done: &[u64]) -> Vec<usize> {
        let is_done = |i: usize| done[i / 64] >> (i % 64) & 1 == 1;
        match self.mode {
            CheckMode::Linearizable => {
                let min_res = (0..self.ops.len())
                    .filter(|&i| !is_done(i))
                    .filter_map(|i| self.ops[i].res)
                    .min()
                    .unwrap_or(usize::MAX);
                (0..self.ops.len()).filter(|&i| !is_done(i) && self.ops[i].inv < min_res).collect()
            }
            CheckMode::Sequential => {
                self.programs.iter().filter_map(|p| p.iter().copied().find(|&i| !is_done(i))).collect()
            }
        }
    }

    fn dfs(&mut self, state: &mut Vec<u32>, done: &mut Vec<u64>, remaining: usize) -> bool {
        if remaining == 0 {
            return true;
        }
        if !self.seen.insert((done.clone(), state.clone())) {
            return false;
        }
        for i in self.candidates(done) {
            let op = &self.ops[i];
            if op.is_read && state[op.key] != op.value {
                continue;
            }
            let prev = state[op.key];
            if !op.is_read {
                state[op.key] = op.value;
            }
            done[i / 64] |= 1 << (i % 64);
            self.path.push(i);
            let left = remaining - usize::from(op.res.is_some());
            if self.dfs(state, done, left) {
                return true;
            }
            self.path.pop();
            done[i / 64] &= !(1 << (i % 64));
            state[op.key] = prev;
        }
        false
    }
}

fn search(ops: &[Prepared], mode: CheckMode) -> Option<Vec<OpRef>> {
    let nkeys = ops.iter().map(|o| o.key + 1).max().unwrap_or(0);
    let mut s = Search::new(ops, mode);
    let mut state = vec![0u32; nkeys];
    let mut done = vec![0u64; ops.len().div_ceil(64)];
    let remaining = ops.iter().filter(|o| o.res.is_some()).count();
    s.dfs(&mut state, &mut done, remaining).then(|| s.path.iter().map(|&i| ops[i].id).collect())
}

fn accepts(h: &History, mode: CheckMode) -> Result<Option<Vec<OpRef>>, CheckError> {
    let ops = h.operations()?;
    Ok(search(&prepare(&ops), mode))
}

/// Runs the exhaustive check with an explicit operation bound.
pub fn check_history(h: &History, mode: CheckMode, bound: usize) -> Result<Verdict, CheckError> {
    let ops = h.operations()?;
    if ops.len() > bound {
        return Err(CheckError::CapacityExceeded { ops: ops.len(), bound });
    }
    if let Some(witness) = search(&prepare(&ops), mode) {
        return Ok(Verdict::Ok { witness });
    }
    // Greedy deletion down to a 1-minimal failing subset.
    let mut keep: Vec<(u32, u64)> = ops.iter().map(|o| (o.client, o.seq)).collect();
    let mut i = 0;
    while i < keep.len() {
        let mut trial = keep.clone();
        trial.remove(i);
        if accepts(&h.restrict(&trial), mode)?.is_none() {
            keep = trial;
        } else {
            i += 1;
        }
    }
    Ok(Verdict::Violation { ops: keep.into_iter().map(|(client, seq)| OpRef { client, seq }).collect() })
}

pub fn check_linearizable(h: &History) -> Result<Verdict, CheckError> {
    check_history(h, CheckMode::Linearizable, DEFAULT_OP_BOUND)
}

pub fn check_sequential(h: &History) -> Result<Verdict, CheckError> {
    check_history(h, CheckMode::Sequential, DEFAULT_OP_BOUND)
}

/// Human-readable one-line description of a violation subset.
pub fn describe(h: &History, ops: &[OpRef]) -> String {
    use core::fmt::Write;
    let mut s = String::new();
    for e in &h.events {
        if ops.contains(&OpRef { client: e.client, seq: e.seq }) {
            let _ = write!(s, "[t={} {:?} c{} #{} {:?} out={:?}] ", e.t, e.kind, e.client, e.seq, e.op, e.out);
        }
    }
    s.trim_end().into()
}
