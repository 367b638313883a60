//! Closed-loop clients against a `serve` deployment.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::io::{self, BufReader};
use std::net::{SocketAddr, TcpStream};
use std::sync::mpsc::{self, RecvTimeoutError};
use std::thread;
use std::time::{Duration, Instant};

use compaxos_core::checker::{EventKind, History, HistoryEvent, HistoryOp};
use compaxos_core::message::{NodeId, Observation, Outbox, Timer};
use compaxos_core::node::{client_session, node_rng, Input, RoleInstance};
use compaxos_core::replica::WRITE_OK;

use crate::frame::{read_frame, write_frame, Envelope};
use crate::plan_file::PlanFile;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DriveReport {
    pub completed: u64,
    pub ok_writes: u64,
    /// Events ordered by local wall-clock microseconds.
    pub history: History,
}

fn run_client(addr: SocketAddr, plan: &PlanFile, c: u32, epoch: Instant, idle: Duration) -> io::Result<Vec<HistoryEvent>> {
    let mut stream = TcpStream::connect(addr)?;
    let _ = stream.set_nodelay(true);
    let (tx, rx) = mpsc::channel();
    let mut reader = BufReader::new(stream.try_clone()?);
    thread::spawn(move || {
        while let Ok(Some(env)) = read_frame(&mut reader) {
            if tx.send(env).is_err() {
                break;
            }
        }
    });
    let id = NodeId::Client(c);
    let mut role = RoleInstance::Client(client_session(&plan.plan, &plan.timers, plan.selection, &plan.workload, c));
    let mut rng = node_rng(plan.seed, id);
    let start = Instant::now();
    let mut timers: BinaryHeap<Reverse<(u64, u64, Timer)>> = BinaryHeap::new();
    let mut armed = 0;
    let mut events = Vec::new();
    let mut input = Some(Input::Timer(Timer::ClientStart));
    let mut last_progress = Instant::now();
    loop {
        if let Some(inp) = input.take() {
            let mut out = Outbox::new();
            role.handle(inp, &mut rng, &mut out);
            let now = start.elapsed().as_millis() as u64;
            for (to, msg) in out.sends {
                write_frame(&mut stream, &Envelope::new(id, to, msg))?;
            }
            for (delay, t) in out.timers {
                timers.push(Reverse((now + delay, armed, t)));
                armed += 1;
            }
            let t = epoch.elapsed().as_micros() as u64;
            for obs in out.observations {
                match obs {
                    Observation::Invoked { client, seq, op } => {
                        if let Some(op) = HistoryOp::from_op(&op) {
                            events.push(HistoryEvent { t, kind: EventKind::Inv, client: client.0, seq, op, out: None });
                        }
                    }
                    Observation::Completed { client, seq, op, out, .. } => {
                        last_progress = Instant::now();
                        if let Some(op) = HistoryOp::from_op(&op) {
                            events.push(HistoryEvent { t, kind: EventKind::Res, client: client.0, seq, op, out });
                        }
                    }
                    _ => {}
                }
            }
        }
        let RoleInstance::Client(session) = &role else { unreachable!() };
        if session.is_done() {
            return Ok(events);
        }
        if last_progress.elapsed() > idle {
            return Err(io::Error::new(io::ErrorKind::TimedOut, format!("client {c} made no progress")));
        }
        let now = start.elapsed().as_millis() as u64;
        if let Some(Reverse((at, _, _))) = timers.peek() {
            if *at <= now {
                let Reverse((_, _, t)) = timers.pop().expect("peeked");
                input = Some(Input::Timer(t));
                continue;
            }
        }
        let wait = timers.peek().map_or(Duration::from_millis(50), |Reverse((at, _, _))| Duration::from_millis(at - now)).min(Duration::from_millis(50));
        match rx.recv_timeout(wait) {
            Ok(env) => input = Some(Input::Message { from: env.from, msg: env.body }),
            Err(RecvTimeoutError::Timeout) => {}
            Err(RecvTimeoutError::Disconnected) => return Err(io::Error::new(io::ErrorKind::ConnectionAborted, "server closed")),
        }
    }
}

/// Runs `plan.workload.num_clients` clients to completion. Fails if any
/// client goes `idle` without a completion.
pub fn drive(addr: SocketAddr, plan: &PlanFile, idle: Duration) -> io::Result<DriveReport> {
    let epoch = Instant::now();
    let handles: Vec<_> = (0..plan.workload.num_clients)
        .map(|c| {
            let plan = plan.clone();
            thread::spawn(move || run_client(addr, &plan, c, epoch, idle))
        })
        .collect();
    let mut events = Vec::new();
    for h in handles {
        events.extend(h.join().map_err(|_| io::Error::other("client thread panicked"))??);
    }
    events.sort_by_key(|e| (e.t, e.kind == EventKind::Inv));
    let history = History { events };
    let res = history.events.iter().filter(|e| e.kind == EventKind::Res);
    let completed = res.clone().count() as u64;
    let ok_writes = res.filter(|e| !e.op.is_read() && e.out.as_deref() == Some(WRITE_OK)).count() as u64;
    Ok(DriveReport { completed, ok_writes, history })
}
