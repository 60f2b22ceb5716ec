use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;
use msim_core::sweep::{run_many, seed_batch};
use msim_core::{load_config, write_outputs, Error, LbPolicy, Micros, QueuePolicy, SimConfig, SimOutput};

/// Deterministic discrete-event simulator for microservice applications.
#[derive(Debug, Parser)]
#[command(name = "msim", version)]
struct Cli {
    /// JSON config file; absent keys take their defaults.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master seed for every random stream.
    #[arg(long)]
    seed: Option<u64>,
    /// Arrival cutoff, e.g. 3600s, 1h, 500ms or plain microseconds.
    #[arg(long, value_name = "DUR")]
    end_time: Option<Micros>,
    /// Load balancer: rr, lc or greedy.
    #[arg(long, value_name = "POLICY")]
    lb: Option<LbPolicy>,
    /// Queue policy: fcfs, sf, fs, ed-eds or ed-exds.
    #[arg(long, value_name = "POLICY")]
    queue: Option<QueuePolicy>,
    /// Output directory.
    #[arg(long, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    /// Replay this trace instead of sampling a workload.
    #[arg(long, value_name = "PATH")]
    trace_in: Option<PathBuf>,
    /// Write the workload as a trace file.
    #[arg(long, value_name = "PATH")]
    trace_out: Option<PathBuf>,
    /// Also write stage-slowdown, wait and total-time ECDFs.
    #[arg(long)]
    emit_ecdf: bool,
    /// Independent runs with consecutive seeds, executed concurrently.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    runs: u64,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_usage_error() {
            Failure::Usage(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

fn resolve(cli: &Cli) -> Result<SimConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(path) => load_config(path).map_err(|e| Failure::from(Error::from(e)))?,
        None => SimConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(end) = cli.end_time {
        cfg.end_time = end;
    }
    if let Some(lb) = cli.lb {
        cfg.lb_policy = lb;
    }
    if let Some(queue) = cli.queue {
        cfg.queue_policy = queue;
    }
    if cli.trace_in.is_some() {
        cfg.trace_in = cli.trace_in.clone();
    }
    if cli.trace_out.is_some() {
        cfg.trace_out = cli.trace_out.clone();
    }
    cfg.validate().map_err(|e| Failure::from(Error::from(e)))?;
    if cli.runs > 1 && cfg.trace_out.is_some() {
        return Err(Failure::Usage("--trace-out writes a single trace and cannot be combined with --runs".into()));
    }
    Ok(cfg)
}

fn summarize(dir: &Path, cfg: &SimConfig, out: &SimOutput) {
    let report = &out.run.report;
    let p99 = report.client.as_ref().map_or(f64::NAN, |c| c.p99_slowdown);
    println!(
        "seed={} lb={} queue={} clients={} stages={} p99_slowdown={:.3} drain_us={} -> {}",
        cfg.seed,
        report.lb_policy,
        report.queue_policy,
        report.client_requests,
        report.stage_requests,
        p99,
        report.drain_us,
        dir.display()
    );
}

fn execute(cli: &Cli) -> Result<(), Failure> {
    let cfg = resolve(cli)?;
    let configs = seed_batch(&cfg, cli.runs);
    let results = run_many(&configs);
    for (run_cfg, result) in configs.iter().zip(results) {
        let out = result?;
        let dir = if cli.runs > 1 {
            cli.out.join(format!("seed-{}", run_cfg.seed))
        } else {
            cli.out.clone()
        };
        write_outputs(&dir, &out, cli.emit_ecdf)?;
        summarize(&dir, run_cfg, &out);
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("msim: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("msim: {msg}");
            ExitCode::from(2)
        }
    }
}
