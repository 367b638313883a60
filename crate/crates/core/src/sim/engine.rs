use alloc::collections::{BTreeMap, BTreeSet, BinaryHeap, VecDeque};
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::{Ordering, Reverse};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    Conflict, FaultKind, Metrics, ReplicaSummary, Scenario, SimError, SimOutput, TraceCounters, TraceEvent,
};
use crate::checker::{History, HistoryOp};
use crate::config::{validate_plan, Batch, ClientId, DeploymentPlan, Slot, Variant, Watermark};
use crate::message::{Message, NodeId, Observation, Outbox, RoleKind, Timer};
use crate::node::{client_session, node_rng, server_roles, Input, RoleInstance};
use crate::write_path::LeaderState;

struct Node {
    role: RoleInstance,
    rng: ChaCha8Rng,
    alive: bool,
    machine: usize,
}

enum Event {
    Deliver { from: NodeId, to: NodeId, msg: Message },
    Timer { node: NodeId, timer: Timer },
    Fault(FaultKind),
    /// The machine finished its current job.
    Drain { machine: usize },
}

struct Scheduled {
    time: u64,
    seq: u64,
    event: Event,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        (self.time, self.seq) == (other.time, other.seq)
    }
}

impl Eq for Scheduled {}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.time, self.seq).cmp(&(other.time, other.seq))
    }
}

struct Engine<'a> {
    sc: &'a Scenario,
    now: u64,
    seq: u64,
    queue: BinaryHeap<Reverse<Scheduled>>,
    nodes: BTreeMap<NodeId, Node>,
    busy: Vec<bool>,
    backlog: Vec<VecDeque<(NodeId, Input)>>,
    net_rng: ChaCha8Rng,
    link_last: BTreeMap<(NodeId, NodeId), u64>,
    partition: Option<Vec<BTreeSet<NodeId>>>,
    counters: TraceCounters,
    history: History,
    trace: Vec<TraceEvent>,
    chosen: BTreeMap<Slot, Batch>,
    conflicts: Vec<Conflict>,
    invoked_at: BTreeMap<(ClientId, u64), u64>,
    latencies: Vec<u64>,
    completed: u64,
    window_completed: u64,
    last_completion: u64,
    observed_slots: BTreeMap<ClientId, Vec<Watermark>>,
}

fn build_nodes(sc: &Scenario, plan: &DeploymentPlan) -> (BTreeMap<NodeId, Node>, usize) {
    let n = plan.num_replicas;
    let mut roles = server_roles(plan, &sc.timers, sc.selection);
    for c in 0..sc.workload.num_clients {
        let session = client_session(plan, &sc.timers, sc.selection, &sc.workload, c);
        roles.push((NodeId::Client(c), RoleInstance::Client(session)));
    }

    // Coupled: proposer i, acceptor i and replica i share machine i.
    let mut machines = 0usize;
    let mut nodes = BTreeMap::new();
    let coupled = plan.variant == Variant::Coupled;
    let shared = 2 * plan.f as usize + 1;
    if coupled {
        machines = shared.max(plan.num_proposers as usize).max(n as usize);
    }
    for (id, role) in roles {
        let machine = match id {
            NodeId::Proposer(i) | NodeId::Acceptor(i) | NodeId::Replica(i) if coupled => i as usize,
            _ => {
                machines += 1;
                machines - 1
            }
        };
        nodes.insert(id, Node { role, rng: node_rng(sc.seed, id), alive: true, machine });
    }
    (nodes, machines)
}

impl<'a> Engine<'a> {
    fn new(sc: &'a Scenario, plan: &DeploymentPlan) -> Self {
        let (nodes, machines) = build_nodes(sc, plan);
        let mut net_rng = ChaCha8Rng::seed_from_u64(sc.seed);
        net_rng.set_stream(u64::MAX);
        Engine {
            sc,
            now: 0,
            seq: 0,
            queue: BinaryHeap::new(),
            nodes,
            busy: alloc::vec![false; machines],
            backlog: (0..machines).map(|_| VecDeque::new()).collect(),
            net_rng,
            link_last: BTreeMap::new(),
            partition: None,
            counters: TraceCounters::default(),
            history: History::new(),
            trace: Vec::new(),
            chosen: BTreeMap::new(),
            conflicts: Vec::new(),
            invoked_at: BTreeMap::new(),
            latencies: Vec::new(),
            completed: 0,
            window_completed: 0,
            last_completion: 0,
            observed_slots: BTreeMap::new(),
        }
    }

    fn schedule(&mut self, time: u64, event: Event) {
        let seq = self.seq;
        self.seq += 1;
        self.queue.push(Reverse(Scheduled { time, seq, event }));
    }

    fn separated(&self, a: NodeId, b: NodeId) -> bool {
        let Some(groups) = &self.partition else { return false };
        let ga = groups.iter().position(|g| g.contains(&a));
        let gb = groups.iter().position(|g| g.contains(&b));
        matches!((ga, gb), (Some(x), Some(y)) if x != y)
    }

    fn transmit(&mut self, from: NodeId, to: NodeId, msg: Message, at: u64) {
        let net = &self.sc.net;
        self.counters.sent += 1;
        let p = net.drop_for(from.role(), to.role());
        if p > 0.0 && self.net_rng.gen_bool(p) {
            self.counters.dropped += 1;
            return;
        }
        let copies = if net.duplicate > 0.0 && self.net_rng.gen_bool(net.duplicate) {
            self.counters.duplicated += 1;
            2
        } else {
            1
        };
        for _ in 0..copies {
            let mut t = at + self.net_rng.gen_range(net.delay_min..=net.delay_max);
            if !net.reorder {
                let last = self.link_last.entry((from, to)).or_insert(0);
                t = t.max(*last);
                *last = t;
            }
            self.schedule(t, Event::Deliver { from, to, msg: msg.clone() });
        }
    }

    fn record(&mut self, node: NodeId, t: u64, obs: Observation) {
        match &obs {
            Observation::Invoked { client, seq, op } => {
                if let Some(op) = HistoryOp::from_op(op) {
                    self.history.invoke(t, client.0, *seq, op);
                }
                self.invoked_at.insert((*client, *seq), t);
            }
            Observation::Completed { client, seq, op, out, slot } => {
                if let Some(op) = HistoryOp::from_op(op) {
                    self.history.respond(t, client.0, *seq, op, out.clone());
                }
                self.completed += 1;
                self.last_completion = t;
                self.observed_slots.entry(*client).or_default().push(*slot);
                if t >= self.sc.warmup && t <= self.sc.duration {
                    self.window_completed += 1;
                    if let Some(start) = self.invoked_at.remove(&(*client, *seq)) {
                        self.latencies.push(t - start);
                    }
                } else {
                    self.invoked_at.remove(&(*client, *seq));
                }
            }
            Observation::Certified { slot, value, .. } => match self.chosen.get(slot) {
                None => {
                    self.chosen.insert(*slot, value.clone());
                }
                Some(first) if first != value => {
                    let first = first.clone();
                    self.conflicts.push(Conflict { slot: *slot, first, second: value.clone() });
                }
                Some(_) => {}
            },
            _ => {}
        }
        if self.sc.record_trace {
            self.trace.push(TraceEvent { t, node, obs });
        }
    }

    /// Runs the input now if its machine is idle, else queues it behind the current job.
    fn handle(&mut self, id: NodeId, input: Input) {
        let Some(node) = self.nodes.get(&id) else { return };
        let m = node.machine;
        if self.busy[m] {
            self.backlog[m].push_back((id, input));
        } else {
            self.process(id, input);
        }
    }

    fn drain(&mut self, m: usize) {
        self.busy[m] = false;
        while !self.busy[m] {
            let Some((id, input)) = self.backlog[m].pop_front() else { break };
            self.process(id, input);
        }
    }

    fn process(&mut self, id: NodeId, input: Input) {
        let Some(node) = self.nodes.get_mut(&id) else { return };
        if !node.alive {
            return;
        }
        let mut out = Outbox::new();
        let mut commands = 0u64;
        let mut is_message = false;
        if let Input::Message { msg, .. } = &input {
            is_message = true;
            commands = msg.command_count() as u64;
            let c = self.counters.nodes.entry(id).or_default();
            c.messages_in += 1;
            c.commands_in += commands;
            *c.in_by_kind.entry(msg.kind()).or_default() += 1;
            self.counters.delivered += 1;
        }
        node.role.handle(input, &mut node.rng, &mut out);
        let machine = node.machine;
        let cost = self.sc.capacity.cost(id.role());
        let service = if is_message { cost.per_message + cost.per_command * commands } else { 0 }
            + cost.per_send * out.sends.len() as u64;
        let finish = self.now + service;
        if service > 0 {
            self.busy[machine] = true;
            self.schedule(finish, Event::Drain { machine });
        }
        self.emit(id, out, finish);
    }

    fn emit(&mut self, id: NodeId, out: Outbox, at: u64) {
        for (to, msg) in out.sends {
            let c = self.counters.nodes.entry(id).or_default();
            c.messages_out += 1;
            *c.out_by_kind.entry(msg.kind()).or_default() += 1;
            self.transmit(id, to, msg, at);
        }
        for (delay, timer) in out.timers {
            self.schedule(at + delay, Event::Timer { node: id, timer });
        }
        for obs in out.observations {
            self.record(id, at, obs);
        }
    }

    fn proposers(&self) -> impl Iterator<Item = (u32, &LeaderState, bool)> {
        self.nodes.iter().filter_map(|(id, n)| match &n.role {
            RoleInstance::Proposer(l) => Some((id.index(), l, n.alive)),
            _ => None,
        })
    }

    fn elect(&mut self, proposer: u32) {
        let Some(max) = self.proposers().map(|(_, l, _)| l.ballot()).max() else { return };
        self.handle(NodeId::Proposer(proposer), Input::Elect(max.successor_for(proposer)));
    }

    fn fault(&mut self, kind: FaultKind) {
        match kind {
            FaultKind::Crash { node } => {
                if let Some(n) = self.nodes.get_mut(&node) {
                    n.alive = false;
                }
            }
            FaultKind::Partition { groups } => {
                self.partition = Some(groups.into_iter().map(|g| g.into_iter().collect()).collect());
            }
            FaultKind::Heal => self.partition = None,
            FaultKind::LeaderFailover { standby } => {
                let leader = self
                    .proposers()
                    .filter(|(_, l, alive)| *alive && l.is_active())
                    .max_by_key(|(_, l, _)| l.ballot())
                    .map(|(i, _, _)| i);
                if let Some(i) = leader {
                    self.nodes.get_mut(&NodeId::Proposer(i)).expect("exists").alive = false;
                }
                let next = standby.or_else(|| self.proposers().find(|(_, _, alive)| *alive).map(|(i, _, _)| i));
                if let Some(p) = next {
                    self.elect(p);
                }
            }
            FaultKind::Elect { proposer } => self.elect(proposer),
        }
    }

    fn run(mut self, plan: DeploymentPlan) -> SimOutput {
        let clients: Vec<NodeId> = self.nodes.keys().copied().filter(|id| id.role() == RoleKind::Client).collect();
        for c in clients {
            self.schedule(0, Event::Timer { node: c, timer: Timer::ClientStart });
        }
        for f in &self.sc.faults {
            self.schedule(f.at, Event::Fault(f.kind.clone()));
        }
        while let Some(Reverse(ev)) = self.queue.pop() {
            if ev.time > self.sc.duration {
                break;
            }
            self.now = ev.time;
            self.counters.events += 1;
            match ev.event {
                Event::Deliver { from, to, msg } => {
                    if self.separated(from, to) {
                        self.counters.dropped += 1;
                        continue;
                    }
                    self.handle(to, Input::Message { from, msg });
                }
                Event::Timer { node, timer } => self.handle(node, Input::Timer(timer)),
                Event::Fault(kind) => self.fault(kind),
                Event::Drain { machine } => self.drain(machine),
            }
        }
        self.finish(plan)
    }

    fn finish(mut self, plan: DeploymentPlan) -> SimOutput {
        let mut incomplete = 0;
        let mut buffered = 0;
        let mut replicas = Vec::new();
        for (id, n) in &self.nodes {
            match &n.role {
                RoleInstance::Client(c) if !c.is_done() => incomplete += 1,
                RoleInstance::Replica(r) => {
                    buffered += r.pending_reads() as u64;
                    replicas.push(ReplicaSummary { index: id.index(), executed: r.executed_watermark(), crashed: !n.alive });
                }
                _ => {}
            }
        }
        let end = if incomplete == 0 { self.last_completion.min(self.sc.duration) } else { self.sc.duration };
        let window = end.saturating_sub(self.sc.warmup);
        let throughput = if window == 0 { 0.0 } else { self.window_completed as f64 / window as f64 };
        self.latencies.sort_unstable();
        let pct = |q: f64| -> u64 {
            if self.latencies.is_empty() {
                return 0;
            }
            let rank = ceil(q * self.latencies.len() as f64) as usize;
            self.latencies[rank.clamp(1, self.latencies.len()) - 1]
        };
        let metrics = Metrics {
            completed: self.completed,
            window_completed: self.window_completed,
            throughput,
            p50: pct(0.50),
            p99: pct(0.99),
            end_time: end,
            zero_throughput: self.window_completed == 0,
            incomplete_clients: incomplete,
            buffered_reads: buffered,
        };
        // Counters exist for every node, even silent ones.
        for id in self.nodes.keys() {
            self.counters.nodes.entry(*id).or_default();
        }
        SimOutput {
            history: self.history,
            counters: self.counters,
            metrics,
            chosen: self.chosen,
            conflicts: self.conflicts,
            trace: self.trace,
            replicas,
            observed_slots: self.observed_slots,
            faults_injected: !self.sc.faults.is_empty(),
            lossless: self.sc.net.is_lossless(),
            read_consistency: self.sc.workload.read_consistency,
            plan,
        }
    }
}

fn ceil(x: f64) -> f64 {
    let t = x as i64 as f64;
    if t < x { t + 1.0 } else { t }
}

fn check_net(sc: &Scenario) -> Result<(), SimError> {
    let net = &sc.net;
    let prob = |p: f64| (0.0..=1.0).contains(&p);
    if !prob(net.drop) || !prob(net.duplicate) || !net.links.iter().all(|l| prob(l.drop)) {
        return Err(SimError::Net(String::from("probabilities must lie in [0, 1]")));
    }
    if net.delay_min > net.delay_max {
        return Err(SimError::Net(String::from("delay_min exceeds delay_max")));
    }
    Ok(())
}

/// Runs one deterministic simulation.
pub fn run_simulation(sc: &Scenario) -> Result<SimOutput, SimError> {
    let plan = validate_plan(sc.plan.clone())?;
    sc.workload.validate()?;
    check_net(sc)?;
    let failover = sc.faults.iter().any(|f| matches!(f.kind, FaultKind::LeaderFailover { .. }));
    if failover && plan.num_proposers < 2 {
        return Err(SimError::FailoverWithoutStandby);
    }
    Ok(Engine::new(sc, &plan).run(plan))
}
