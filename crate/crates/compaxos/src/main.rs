use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};
use compaxos::history_io::{read_history, write_history};
use compaxos::metrics_csv::{write_ablation, write_metrics, MetricsRow};
use compaxos::{drive, serve, PlanFile};
use compaxos_core::checker::{audit_trace, check_history, describe, CheckError, CheckMode, Verdict, DEFAULT_OP_BOUND};
use compaxos_core::eval::{analytical_peak_throughput, run_ablation, throughput_limit, AblationStep, ModelParams, ThroughputLimit};
use compaxos_core::sim::run_simulation;

const CONFIG: u8 = 2;
const AUDIT: u8 = 3;
const VIOLATION: u8 = 4;
const CAPACITY: u8 = 5;

#[derive(Parser)]
#[command(name = "compaxos", version, about = "Compartmentalized MultiPaxos simulator and checker")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Linearizable,
    Sequential,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate a plan, write its history and metrics, and audit the trace.
    Run {
        #[arg(long)]
        plan: PathBuf,
        /// Overrides the plan's network and workload seeds.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        duration: Option<u64>,
        #[arg(long)]
        out_history: PathBuf,
        #[arg(long)]
        out_metrics: PathBuf,
    },
    /// Check a JSONL history.
    Check {
        #[arg(long)]
        history: PathBuf,
        #[arg(long, value_enum, default_value = "linearizable")]
        mode: Mode,
        #[arg(long, default_value_t = DEFAULT_OP_BOUND)]
        bound: usize,
    },
    /// Closed-form peak throughput and its limit as replicas grow.
    Model {
        #[arg(long)]
        n: u32,
        #[arg(long)]
        alpha: f64,
        #[arg(long)]
        write_frac: f64,
    },
    /// Peak throughput of each cumulative plan step.
    Ablation {
        #[arg(long)]
        plan: PathBuf,
        /// JSON array of steps: `{"name": ..., <plan fields>}`.
        #[arg(long)]
        steps: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "5,10,20,40")]
        clients: Vec<u32>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Host every server role of a plan behind a TCP listener.
    Serve {
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        listen: String,
    },
    /// Run the plan's workload against a `serve` deployment.
    Drive {
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        connect: std::net::SocketAddr,
        #[arg(long, default_value_t = 10_000)]
        idle_ms: u64,
    },
}

fn fail(code: u8, msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("{msg}");
    ExitCode::from(code)
}

fn load(path: &Path) -> Result<PlanFile, ExitCode> {
    PlanFile::load(path).map_err(|e| fail(CONFIG, e))
}

fn create(path: &Path) -> Result<BufWriter<File>, ExitCode> {
    File::create(path).map(BufWriter::new).map_err(|e| fail(CONFIG, format!("{}: {e}", path.display())))
}

fn cmd_run(plan: PathBuf, seed: Option<u64>, duration: Option<u64>, out_history: PathBuf, out_metrics: PathBuf) -> Result<ExitCode, ExitCode> {
    let pf = load(&plan)?;
    let mut sc = pf.scenario();
    if let Some(s) = seed {
        sc.seed = s;
        sc.workload.rng_seed = s;
    }
    if let Some(d) = duration {
        sc.duration = d;
    }
    let out = run_simulation(&sc).map_err(|e| fail(CONFIG, e))?;
    let io_err = |e: io::Error| fail(CONFIG, e);
    write_history(create(&out_history)?, &out.history).map_err(io_err)?;
    write_metrics(create(&out_metrics)?, &[MetricsRow::from_run(&sc, &out.metrics)]).map_err(|e| fail(CONFIG, e))?;
    let report = audit_trace(&out);
    if !report.passed() {
        for (check, f) in report.failures() {
            eprintln!("{check}: {f}");
        }
        return Err(ExitCode::from(AUDIT));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_check(history: PathBuf, mode: Mode, bound: usize) -> Result<ExitCode, ExitCode> {
    let file = File::open(&history).map_err(|e| fail(CONFIG, format!("{}: {e}", history.display())))?;
    let h = read_history(BufReader::new(file)).map_err(|e| fail(CONFIG, e))?;
    let mode = match mode {
        Mode::Linearizable => CheckMode::Linearizable,
        Mode::Sequential => CheckMode::Sequential,
    };
    match check_history(&h, mode, bound) {
        Ok(Verdict::Ok { witness }) => {
            println!("OK {}", witness.len());
            Ok(ExitCode::SUCCESS)
        }
        Ok(Verdict::Violation { ops }) => {
            println!("VIOLATION");
            print!("{}", describe(&h, &ops));
            Err(ExitCode::from(VIOLATION))
        }
        Err(e @ CheckError::CapacityExceeded { .. }) => Err(fail(CAPACITY, e)),
        Err(e) => Err(fail(CONFIG, e)),
    }
}

fn cmd_model(n: u32, alpha: f64, write_frac: f64) -> Result<ExitCode, ExitCode> {
    let m = ModelParams { n, alpha, f_w: write_frac };
    let t = analytical_peak_throughput(&m).map_err(|e| fail(CONFIG, e))?;
    let limit = throughput_limit(&m).map_err(|e| fail(CONFIG, e))?;
    println!("throughput {t}");
    match limit {
        ThroughputLimit::Finite(l) => println!("limit {l}"),
        ThroughputLimit::Unbounded => println!("limit unbounded"),
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_ablation(plan: PathBuf, steps: PathBuf, clients: Vec<u32>, out: PathBuf) -> Result<ExitCode, ExitCode> {
    let pf = load(&plan)?;
    let text = std::fs::read_to_string(&steps).map_err(|e| fail(CONFIG, format!("{}: {e}", steps.display())))?;
    let steps: Vec<AblationStep> = serde_json::from_str(&text).map_err(|e| fail(CONFIG, format!("{}: {e}", steps.display())))?;
    let mut base = pf.scenario();
    base.record_trace = false;
    let rows = run_ablation(&base, &steps, &clients).map_err(|e| fail(CONFIG, e))?;
    write_ablation(create(&out)?, &base, &rows).map_err(|e| fail(CONFIG, e))?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_serve(plan: PathBuf, listen: String) -> Result<ExitCode, ExitCode> {
    let pf = load(&plan)?;
    let dep = serve::bind(&pf, listen.as_str()).map_err(|e| fail(CONFIG, format!("bind {listen}: {e}")))?;
    let addr = dep.local_addr().map_err(|e| fail(CONFIG, e))?;
    let stop = Arc::new(AtomicBool::new(false));
    let flag = Arc::clone(&stop);
    ctrlc::set_handler(move || flag.store(true, Ordering::Relaxed)).map_err(|e| fail(CONFIG, e))?;
    println!("listening {addr}");
    let _ = io::stdout().flush();
    dep.run(stop).map_err(|e| fail(1, e))?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_drive(plan: PathBuf, connect: std::net::SocketAddr, idle_ms: u64) -> Result<ExitCode, ExitCode> {
    let pf = load(&plan)?;
    let report = drive::drive(connect, &pf, Duration::from_millis(idle_ms)).map_err(|e| fail(1, e))?;
    println!("completed {} ok {}", report.completed, report.ok_writes);
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let r = match cli.cmd {
        Cmd::Run { plan, seed, duration, out_history, out_metrics } => cmd_run(plan, seed, duration, out_history, out_metrics),
        Cmd::Check { history, mode, bound } => cmd_check(history, mode, bound),
        Cmd::Model { n, alpha, write_frac } => cmd_model(n, alpha, write_frac),
        Cmd::Ablation { plan, steps, clients, out } => cmd_ablation(plan, steps, clients, out),
        Cmd::Serve { plan, listen } => cmd_serve(plan, listen),
        Cmd::Drive { plan, connect, idle_ms } => cmd_drive(plan, connect, idle_ms),
    };
    r.unwrap_or_else(|code| code)
}
