//! Role instances behind one dispatch surface, shared by the simulator and
//! any real transport.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::batching::{BatcherConfig, BatcherState, UnbatcherState};
use crate::client::{ClientConfig, ClientSession};
use crate::config::{Ballot, DeploymentPlan, Selection};
use crate::eval::workload::{OpGenerator, OpSource, WorkloadSpec};
use crate::message::{Message, NodeId, Outbox, RoleKind, Timer};
use crate::quorums::AcceptorId;
use crate::replica::{ReplicaConfig, ReplicaState};
use crate::sim::TimerConfig;
use crate::write_path::{AcceptorState, LeaderConfig, LeaderState, ProxyLeaderState};

#[allow(clippy::large_enum_variant)]
pub enum RoleInstance {
    Proposer(LeaderState),
    Proxy(ProxyLeaderState),
    Acceptor(AcceptorState),
    Replica(ReplicaState),
    Batcher(BatcherState),
    Unbatcher(UnbatcherState),
    Client(ClientSession),
}

pub enum Input {
    Message { from: NodeId, msg: Message },
    Timer(Timer),
    /// Start Phase 1 at this ballot. Only proposers react.
    Elect(Ballot),
}

impl RoleInstance {
    pub fn handle<R: Rng + ?Sized>(&mut self, input: Input, rng: &mut R, out: &mut Outbox) {
        match (self, input) {
            (RoleInstance::Proposer(l), Input::Message { msg, .. }) => l.on_message(msg, rng, out),
            (RoleInstance::Proposer(l), Input::Timer(t)) => l.on_timer(&t, rng, out),
            (RoleInstance::Proposer(l), Input::Elect(b)) => {
                let _ = l.leader_elect(b, rng, out);
            }
            (RoleInstance::Proxy(p), Input::Message { from, msg }) => p.on_message(from, msg, rng, out),
            (RoleInstance::Proxy(p), Input::Timer(t)) => p.on_timer(&t, rng, out),
            (RoleInstance::Acceptor(a), Input::Message { from, msg }) => {
                if let Some(reply) = a.on_message(msg) {
                    out.send(from, reply);
                }
            }
            (RoleInstance::Replica(r), Input::Message { msg, .. }) => {
                let _ = r.on_message(msg, rng, out);
            }
            (RoleInstance::Replica(r), Input::Timer(t)) => r.on_timer(&t, out),
            (RoleInstance::Batcher(b), Input::Message { msg, .. }) => b.on_message(msg, rng, out),
            (RoleInstance::Batcher(b), Input::Timer(t)) => b.on_timer(&t, rng, out),
            (RoleInstance::Unbatcher(u), Input::Message { msg, .. }) => u.on_message(msg, out),
            (RoleInstance::Client(c), Input::Message { msg, .. }) => c.on_message(msg, rng, out),
            (RoleInstance::Client(c), Input::Timer(t)) => c.on_timer(&t, rng, out),
            _ => {}
        }
    }
}

fn node_stream(id: NodeId) -> u64 {
    let role = RoleKind::ALL.iter().position(|r| *r == id.role()).expect("known role") as u64;
    (role << 32) | u64::from(id.index())
}

/// Per-node generator: seeded by the run seed, one stream per node.
pub fn node_rng(seed: u64, id: NodeId) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(node_stream(id));
    r
}

/// Client `c` of the workload against `plan`. The plan must be valid.
pub fn client_session(plan: &DeploymentPlan, timers: &TimerConfig, selection: Selection, workload: &WorkloadSpec, c: u32) -> ClientSession {
    let nb = plan.batcher_count();
    let cfg = ClientConfig {
        id: c,
        level: workload.read_consistency,
        quorums: plan.quorum_system(),
        num_proposers: plan.num_proposers,
        num_replicas: plan.num_replicas,
        batcher: (nb > 0).then(|| c % nb),
        selection,
        retry_timeout: timers.client_retry,
    };
    ClientSession::with_source(cfg, OpSource::Generated(OpGenerator::new(workload, c)))
}

/// Every server role of a valid plan, proposer 0 as the initial leader.
pub fn server_roles(plan: &DeploymentPlan, timers: &TimerConfig, selection: Selection) -> Vec<(NodeId, RoleInstance)> {
    let quorums = plan.quorum_system();
    let n = plan.num_replicas;
    let t = timers;
    let mut roles = Vec::new();
    for id in 0..plan.num_proposers {
        let cfg = LeaderConfig {
            id,
            quorums,
            num_proxies: plan.proxy_count(),
            num_replicas: n,
            num_batchers: plan.batcher_count(),
            selection,
            phase1_retry: t.phase1_retry,
            proxy_retry: t.proxy_retry,
        };
        let leader = if id == 0 { LeaderState::initial(cfg) } else { LeaderState::standby(cfg) };
        roles.push((NodeId::Proposer(id), RoleInstance::Proposer(leader)));
    }
    for i in 0..plan.proxy_count() {
        roles.push((NodeId::ProxyLeader(i), RoleInstance::Proxy(ProxyLeaderState::new(quorums, n, t.proxy_retry))));
    }
    for i in 0..plan.num_acceptors() {
        roles.push((NodeId::Acceptor(i), RoleInstance::Acceptor(AcceptorState::new(AcceptorId(i)))));
    }
    for index in 0..n {
        let cfg = ReplicaConfig {
            index,
            num_replicas: n,
            num_unbatchers: plan.unbatcher_count(),
            num_proposers: plan.num_proposers,
            selection,
            recover_timeout: t.replica_recover,
        };
        roles.push((NodeId::Replica(index), RoleInstance::Replica(ReplicaState::new(cfg))));
    }
    for index in 0..plan.batcher_count() {
        let cfg = BatcherConfig {
            index,
            batch_size: plan.batch_size,
            batch_timeout: (plan.batch_timeout > 0).then_some(plan.batch_timeout),
            quorums,
            num_replicas: n,
            selection,
            read_retry: t.read_retry,
        };
        roles.push((NodeId::Batcher(index), RoleInstance::Batcher(BatcherState::new(cfg))));
    }
    for i in 0..plan.unbatcher_count() {
        roles.push((NodeId::Unbatcher(i), RoleInstance::Unbatcher(UnbatcherState::new())));
    }
    roles
}
