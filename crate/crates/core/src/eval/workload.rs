use alloc::collections::VecDeque;
use alloc::format;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::Op;
use crate::read_path::ReadConsistency;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorkloadSpec {
    pub num_clients: u32,
    pub read_fraction: f64,
    /// Probability an op targets the hot key 0.
    pub skew_p: f64,
    pub keyspace: u64,
    /// `None` keeps every client busy until the run ends.
    pub ops_per_client: Option<u64>,
    pub read_consistency: ReadConsistency,
    pub rng_seed: u64,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        WorkloadSpec {
            num_clients: 5,
            read_fraction: 0.0,
            skew_p: 0.0,
            keyspace: 10_000,
            ops_per_client: Some(100),
            read_consistency: ReadConsistency::Linearizable,
            rng_seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Error)]
pub enum WorkloadError {
    #[error("read_fraction {0} is not a probability")]
    ReadFraction(f64),
    #[error("skew_p {0} is not a probability")]
    Skew(f64),
    #[error("keyspace {0} is below 2")]
    Keyspace(u64),
    #[error("num_clients is 0")]
    NoClients,
}

fn probability(p: f64) -> bool {
    (0.0..=1.0).contains(&p)
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        if !probability(self.read_fraction) {
            return Err(WorkloadError::ReadFraction(self.read_fraction));
        }
        if !probability(self.skew_p) {
            return Err(WorkloadError::Skew(self.skew_p));
        }
        if self.keyspace < 2 {
            return Err(WorkloadError::Keyspace(self.keyspace));
        }
        if self.num_clients == 0 {
            return Err(WorkloadError::NoClients);
        }
        Ok(())
    }

    pub fn write_fraction(&self) -> f64 {
        1.0 - self.read_fraction
    }
}

/// One client's op stream. Op kind and key come from separate generators,
/// so changing `skew_p` never changes which ops are reads.
#[derive(Clone, Debug)]
pub struct OpGenerator {
    client: u32,
    kind_rng: ChaCha8Rng,
    key_rng: ChaCha8Rng,
    read_fraction: f64,
    skew_p: f64,
    keyspace: u64,
    remaining: Option<u64>,
    issued: u64,
}

impl OpGenerator {
    pub fn new(spec: &WorkloadSpec, client: u32) -> Self {
        let stream = |s: u64| {
            let mut r = ChaCha8Rng::seed_from_u64(spec.rng_seed);
            r.set_stream(s);
            r
        };
        OpGenerator {
            client,
            kind_rng: stream(2 * u64::from(client)),
            key_rng: stream(2 * u64::from(client) + 1),
            read_fraction: spec.read_fraction,
            skew_p: spec.skew_p,
            keyspace: spec.keyspace,
            remaining: spec.ops_per_client,
            issued: 0,
        }
    }

    pub fn is_exhausted(&self) -> bool {
        self.remaining == Some(0)
    }
}

impl Iterator for OpGenerator {
    type Item = Op;

    fn next(&mut self) -> Option<Op> {
        if let Some(r) = &mut self.remaining {
            if *r == 0 {
                return None;
            }
            *r -= 1;
        }
        let read = self.kind_rng.gen::<f64>() < self.read_fraction;
        let hot = self.key_rng.gen::<f64>() < self.skew_p;
        let other = self.key_rng.gen_range(2..=self.keyspace);
        let key = format!("{}", if hot { 0 } else { other });
        let n = self.issued;
        self.issued += 1;
        Some(if read {
            Op::Read { key }
        } else {
            Op::Write { key, value: format!("{}.{}", self.client, n) }
        })
    }
}

/// Where a client session draws its operations from.
#[derive(Clone, Debug)]
#[allow(clippy::large_enum_variant)]
pub enum OpSource {
    Fixed(VecDeque<Op>),
    Generated(OpGenerator),
}

impl OpSource {
    pub fn next_op(&mut self) -> Option<Op> {
        match self {
            OpSource::Fixed(q) => q.pop_front(),
            OpSource::Generated(g) => g.next(),
        }
    }

    pub fn is_exhausted(&self) -> bool {
        match self {
            OpSource::Fixed(q) => q.is_empty(),
            OpSource::Generated(g) => g.is_exhausted(),
        }
    }

    /// Ops left, or `None` if unbounded.
    pub fn remaining(&self) -> Option<u64> {
        match self {
            OpSource::Fixed(q) => Some(q.len() as u64),
            OpSource::Generated(g) => g.remaining,
        }
    }
}

impl FromIterator<Op> for OpSource {
    fn from_iter<I: IntoIterator<Item = Op>>(iter: I) -> Self {
        OpSource::Fixed(iter.into_iter().collect())
    }
}

/// One generator per client.
pub fn generate_ops(spec: &WorkloadSpec) -> Vec<OpGenerator> {
    (0..spec.num_clients).map(|c| OpGenerator::new(spec, c)).collect()
}
