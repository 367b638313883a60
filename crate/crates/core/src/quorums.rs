//! Read/write quorum systems over acceptors.
//!
//! A [`GridQuorumSystem`] lays `r·w` acceptors out row-major: acceptor
//! `row·w + col`. Rows are read quorums (Phase 1, PreRead) and columns are
//! write quorums (Phase 2). Any row and any column share exactly one acceptor,
//! which is the only property the protocol relies on.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AcceptorId(pub u32);

impl fmt::Display for AcceptorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "a{}", self.0)
    }
}

pub type AcceptorSet = BTreeSet<AcceptorId>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridQuorumSystem {
    rows: u32,
    cols: u32,
}

impl GridQuorumSystem {
    pub fn new(rows: u32, cols: u32) -> Self {
        assert!(rows > 0 && cols > 0, "grid must be non-empty");
        GridQuorumSystem { rows, cols }
    }

    pub fn rows(&self) -> u32 {
        self.rows
    }

    pub fn cols(&self) -> u32 {
        self.cols
    }

    pub fn id(&self, row: u32, col: u32) -> AcceptorId {
        AcceptorId(row * self.cols + col)
    }

    /// Row-major id matrix.
    pub fn acceptor_ids(&self) -> Vec<Vec<AcceptorId>> {
        (0..self.rows).map(|r| (0..self.cols).map(|c| self.id(r, c)).collect()).collect()
    }

    pub fn row(&self, row: u32) -> AcceptorSet {
        (0..self.cols).map(|c| self.id(row, c)).collect()
    }

    pub fn column(&self, col: u32) -> AcceptorSet {
        (0..self.rows).map(|r| self.id(r, col)).collect()
    }

    pub fn read_quorums(&self) -> Vec<AcceptorSet> {
        (0..self.rows).map(|r| self.row(r)).collect()
    }

    pub fn write_quorums(&self) -> Vec<AcceptorSet> {
        (0..self.cols).map(|c| self.column(c)).collect()
    }

    pub fn is_write_quorum(&self, set: &AcceptorSet) -> bool {
        (0..self.cols).any(|c| (0..self.rows).all(|r| set.contains(&self.id(r, c))))
    }

    pub fn is_read_quorum(&self, set: &AcceptorSet) -> bool {
        (0..self.rows).any(|r| (0..self.cols).all(|c| set.contains(&self.id(r, c))))
    }
}

/// `2f+1` acceptors; every `f+1`-subset is both a read and a write quorum.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MajorityQuorumSystem {
    f: u32,
}

impl MajorityQuorumSystem {
    pub fn new(f: u32) -> Self {
        MajorityQuorumSystem { f }
    }

    pub fn size(&self) -> u32 {
        2 * self.f + 1
    }

    pub fn quorum_size(&self) -> u32 {
        self.f + 1
    }

    /// All `f+1`-subsets in lexicographic order.
    pub fn quorums(&self) -> Vec<AcceptorSet> {
        let n = self.size();
        let k = self.quorum_size() as usize;
        let mut out = Vec::new();
        let mut pick: Vec<u32> = (0..k as u32).collect();
        loop {
            out.push(pick.iter().map(|&i| AcceptorId(i)).collect());
            // advance to the next combination
            let mut i = k;
            loop {
                if i == 0 {
                    return out;
                }
                i -= 1;
                if pick[i] < n - (k - i) as u32 {
                    break;
                }
            }
            pick[i] += 1;
            for j in i + 1..k {
                pick[j] = pick[j - 1] + 1;
            }
        }
    }

    pub fn is_quorum(&self, set: &AcceptorSet) -> bool {
        set.iter().filter(|a| a.0 < self.size()).count() as u32 >= self.quorum_size()
    }
}

/// Either supported quorum system, with a uniform interface for the roles.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum QuorumSystem {
    Grid(GridQuorumSystem),
    Majority(MajorityQuorumSystem),
}

impl QuorumSystem {
    pub fn num_acceptors(&self) -> u32 {
        match self {
            QuorumSystem::Grid(g) => g.rows * g.cols,
            QuorumSystem::Majority(m) => m.size(),
        }
    }

    pub fn read_quorums(&self) -> Vec<AcceptorSet> {
        match self {
            QuorumSystem::Grid(g) => g.read_quorums(),
            QuorumSystem::Majority(m) => m.quorums(),
        }
    }

    pub fn write_quorums(&self) -> Vec<AcceptorSet> {
        match self {
            QuorumSystem::Grid(g) => g.write_quorums(),
            QuorumSystem::Majority(m) => m.quorums(),
        }
    }

    pub fn is_write_quorum(&self, set: &AcceptorSet) -> bool {
        match self {
            QuorumSystem::Grid(g) => g.is_write_quorum(set),
            QuorumSystem::Majority(m) => m.is_quorum(set),
        }
    }

    pub fn is_read_quorum(&self, set: &AcceptorSet) -> bool {
        match self {
            QuorumSystem::Grid(g) => g.is_read_quorum(set),
            QuorumSystem::Majority(m) => m.is_quorum(set),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(ids: &[u32]) -> AcceptorSet {
        ids.iter().map(|&i| AcceptorId(i)).collect()
    }

    #[test]
    fn two_by_three_rows_and_columns() {
        // a1..a6 in row-major order are ids 0..5.
        let g = GridQuorumSystem::new(2, 3);
        assert_eq!(g.read_quorums(), [set(&[0, 1, 2]), set(&[3, 4, 5])]);
        assert_eq!(g.write_quorums(), [set(&[0, 3]), set(&[1, 4]), set(&[2, 5])]);
    }

    #[test]
    fn two_by_two_rows_and_columns() {
        let g = GridQuorumSystem::new(2, 2);
        assert_eq!(g.read_quorums(), [set(&[0, 1]), set(&[2, 3])]);
        assert_eq!(g.write_quorums(), [set(&[0, 2]), set(&[1, 3])]);
    }

    #[test]
    fn three_by_two_shapes() {
        let g = GridQuorumSystem::new(3, 2);
        let rows = g.read_quorums();
        assert_eq!(rows.len(), 3);
        assert!(rows.iter().all(|r| r.len() == 2));
        let cols = g.write_quorums();
        assert_eq!(cols.len(), 2);
        assert!(cols.iter().all(|c| c.len() == 3));
    }

    #[test]
    fn write_quorum_membership() {
        let g = GridQuorumSystem::new(2, 3);
        assert!(g.is_write_quorum(&set(&[0, 3])));
        assert!(!g.is_write_quorum(&set(&[0, 1])));
        assert!(g.is_write_quorum(&set(&[0, 1, 3])));
        assert!(g.is_read_quorum(&set(&[3, 4, 5])));
        assert!(!g.is_read_quorum(&set(&[0, 3])));
    }

    #[test]
    fn ids_are_unique_and_dense() {
        for r in 1..=5 {
            for w in 1..=5 {
                let g = GridQuorumSystem::new(r, w);
                let mut all: Vec<u32> = g.acceptor_ids().concat().iter().map(|a| a.0).collect();
                all.sort_unstable();
                assert_eq!(all, (0..r * w).collect::<Vec<_>>());
            }
        }
    }

    #[test]
    fn majority_quorums_do_intersect() {
        for f in 1..=3 {
            let m = MajorityQuorumSystem::new(f);
            let qs = m.quorums();
            // C(2f+1, f+1)
            let expected = [0usize, 3, 10, 35][f as usize];
            assert_eq!(qs.len(), expected);
            for a in &qs {
                assert_eq!(a.len() as u32, f + 1);
                for b in &qs {
                    assert!(a.intersection(b).next().is_some());
                }
            }
        }
    }

    #[test]
    fn majority_membership_counts_members() {
        let m = MajorityQuorumSystem::new(1);
        assert!(m.is_quorum(&set(&[0, 2])));
        assert!(!m.is_quorum(&set(&[1])));
        assert!(!m.is_quorum(&set(&[1, 7])));
    }
}
