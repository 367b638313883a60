//! Hosts every server role of a plan in one process. Each role instance
//! runs on its own thread and handles one input at a time; clients connect
//! over TCP and speak the frame format. Timer ticks are milliseconds.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::io::{self, BufReader};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use compaxos_core::message::{Message, NodeId, Observation, Outbox, Timer};
use compaxos_core::node::{node_rng, server_roles, Input, RoleInstance};

use crate::frame::{read_frame, write_frame, Envelope};
use crate::plan_file::PlanFile;

const POLL: Duration = Duration::from_millis(20);

struct Router {
    roles: BTreeMap<NodeId, Sender<Input>>,
    clients: Mutex<BTreeMap<u32, TcpStream>>,
}

impl Router {
    fn route(&self, from: NodeId, to: NodeId, msg: Message) {
        if let NodeId::Client(c) = to {
            let mut clients = self.clients.lock().expect("client table poisoned");
            if let Some(stream) = clients.get_mut(&c) {
                if write_frame(stream, &Envelope::new(from, to, msg)).is_err() {
                    clients.remove(&c);
                }
            }
        } else if let Some(tx) = self.roles.get(&to) {
            let _ = tx.send(Input::Message { from, msg });
        }
    }

    fn register(&self, client: u32, stream: &TcpStream) -> io::Result<()> {
        let mut clients = self.clients.lock().expect("client table poisoned");
        if let std::collections::btree_map::Entry::Vacant(slot) = clients.entry(client) {
            slot.insert(stream.try_clone()?);
        }
        Ok(())
    }
}

pub struct Deployment {
    listener: TcpListener,
    plan: PlanFile,
}

/// Binds the client listener without starting any role.
pub fn bind(plan: &PlanFile, addr: impl ToSocketAddrs) -> io::Result<Deployment> {
    let listener = TcpListener::bind(addr)?;
    listener.set_nonblocking(true)?;
    Ok(Deployment { listener, plan: plan.clone() })
}

fn role_loop(id: NodeId, mut role: RoleInstance, rx: Receiver<Input>, router: Arc<Router>, stop: Arc<AtomicBool>, seed: u64) {
    let mut rng = node_rng(seed, id);
    let epoch = Instant::now();
    let mut timers: BinaryHeap<Reverse<(u64, u64, Timer)>> = BinaryHeap::new();
    let mut armed = 0u64;
    let mut step = |role: &mut RoleInstance, input: Input, timers: &mut BinaryHeap<Reverse<(u64, u64, Timer)>>| {
        let mut out = Outbox::new();
        role.handle(input, &mut rng, &mut out);
        let now = epoch.elapsed().as_millis() as u64;
        for (to, msg) in out.sends {
            router.route(id, to, msg);
        }
        for (delay, timer) in out.timers {
            timers.push(Reverse((now + delay, armed, timer)));
            armed += 1;
        }
        for obs in out.observations {
            match obs {
                Observation::ProtocolError { detail } => eprintln!("{id}: protocol error: {detail}"),
                Observation::AgreementViolation { slot, .. } => eprintln!("{id}: agreement violated at slot {}", slot.0),
                _ => {}
            }
        }
    };
    while !stop.load(Ordering::Relaxed) {
        let now = epoch.elapsed().as_millis() as u64;
        while timers.peek().is_some_and(|Reverse((at, _, _))| *at <= now) {
            let Reverse((_, _, timer)) = timers.pop().expect("peeked");
            step(&mut role, Input::Timer(timer), &mut timers);
        }
        let wait = timers.peek().map_or(POLL, |Reverse((at, _, _))| Duration::from_millis(at.saturating_sub(now)).min(POLL));
        match rx.recv_timeout(wait) {
            Ok(input) => step(&mut role, input, &mut timers),
            Err(RecvTimeoutError::Timeout) => {}
            Err(RecvTimeoutError::Disconnected) => return,
        }
    }
}

fn serve_connection(stream: TcpStream, router: Arc<Router>) {
    let peer = stream.peer_addr().map_or_else(|_| String::from("?"), |a| a.to_string());
    let mut reader = match stream.try_clone() {
        Ok(s) => BufReader::new(s),
        Err(_) => return,
    };
    loop {
        match read_frame(&mut reader) {
            Ok(Some(env)) => {
                let NodeId::Client(c) = env.from else {
                    eprintln!("dropping connection from {peer}: sender {} is not a client", env.from);
                    break;
                };
                if router.register(c, &stream).is_err() {
                    break;
                }
                router.route(env.from, env.to, env.body);
            }
            Ok(None) => break,
            Err(e) => {
                eprintln!("dropping connection from {peer}: {e}");
                break;
            }
        }
    }
    let _ = stream.shutdown(Shutdown::Both);
}

impl Deployment {
    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    /// Serves until `stop` is set, then joins the role threads.
    pub fn run(self, stop: Arc<AtomicBool>) -> io::Result<()> {
        let mut inboxes = Vec::new();
        let mut senders = BTreeMap::new();
        for (id, role) in server_roles(&self.plan.plan, &self.plan.timers, self.plan.selection) {
            let (tx, rx) = mpsc::channel();
            senders.insert(id, tx);
            inboxes.push((id, role, rx));
        }
        let router = Arc::new(Router { roles: senders, clients: Mutex::new(BTreeMap::new()) });
        let mut workers = Vec::new();
        for (id, role, rx) in inboxes {
            let (router, stop) = (Arc::clone(&router), Arc::clone(&stop));
            let seed = self.plan.seed;
            workers.push(thread::Builder::new().name(id.to_string()).spawn(move || role_loop(id, role, rx, router, stop, seed))?);
        }
        while !stop.load(Ordering::Relaxed) {
            match self.listener.accept() {
                Ok((stream, _)) => {
                    stream.set_nonblocking(false)?;
                    let _ = stream.set_nodelay(true);
                    let router = Arc::clone(&router);
                    thread::spawn(move || serve_connection(stream, router));
                }
                Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(POLL),
                Err(e) => eprintln!("accept: {e}"),
            }
        }
        for w in workers {
            let _ = w.join();
        }
        Ok(())
    }
}
