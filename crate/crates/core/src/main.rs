use std::fs::File;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};

use leashed::dynamics::{
    fixed_point, n_t_closed, n_t_recurrence, simulate_events, DynamicsParams, ServiceDistribution,
};
use leashed::harness::verify::{verify_suite, StressConfig};
use leashed::harness::{
    run_experiment, sweep, Arch, DatasetSpec, Experiment, RunReport, SeedPolicy, SweepResult,
    EXIT_ERROR,
};
use leashed::optimizers::{Algo, OptimizerConfig, Persistence};

#[derive(Parser)]
#[command(
    name = "leashed",
    version,
    about = "Parallel SGD benchmark: sequential, lock-based, Hogwild! and Leashed-SGD"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train once and write summary, updates, progress and memory CSVs.
    Run(RunArgs),
    /// Repeat runs over a grid of algorithms, thread counts and persistence bounds.
    Sweep(SweepArgs),
    /// Iterate or simulate the retry-loop occupancy model.
    Dynamics(DynamicsArgs),
    /// Run the concurrency stress and invariant suite.
    Verify(VerifyArgs),
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Step size.
    #[arg(long, default_value_t = 0.005)]
    step_size: f32,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    /// Targets as fractions of the initial loss, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "0.5")]
    epsilon: Vec<f64>,
    /// mlp, cnn, tiny or tiny:HIDDEN.
    #[arg(long, default_value = "mlp")]
    arch: Arch,
    /// mnist:DIR, mnist:IMAGES,LABELS[,TEST_IMAGES,TEST_LABELS], blobs or
    /// blobs:classes=K,dims=D,per_class=N,spread=S,seed=X.
    #[arg(long, default_value = "blobs:dims=784")]
    dataset: DatasetSpec,
    /// Number of MNIST training images to load (0 for all).
    #[arg(long, default_value_t = 10_000)]
    train_limit: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Wall-clock budget per run, in seconds.
    #[arg(long, default_value_t = 120.0)]
    time_budget: f64,
    /// Stop after this many published updates.
    #[arg(long)]
    max_updates: Option<u64>,
    /// Convergence check period, in milliseconds.
    #[arg(long, default_value_t = 250)]
    monitor_interval_ms: u64,
    /// Memory census period, in milliseconds.
    #[arg(long, default_value_t = 50)]
    memory_interval_ms: u64,
    /// Evaluate every K-th published version instead of on a timer.
    #[arg(long)]
    eval_every: Option<u64>,
    /// Staleness distribution window, in milliseconds.
    #[arg(long, default_value_t = 1000)]
    staleness_window_ms: u64,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    #[arg(long, default_value_t = false, action = clap::ArgAction::Set)]
    pin_cores: bool,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, default_value = "leashed")]
    algo: Algo,
    /// Worker threads (defaults to the number of logical cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Failed publication attempts tolerated before a gradient is dropped: N or inf.
    #[arg(long, default_value = "inf")]
    persistence: Persistence,
    #[arg(long)]
    run_id: Option<String>,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "seq,async,hogwild,leashed"
    )]
    algo: Vec<Algo>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
    threads: Vec<usize>,
    /// Persistence bounds tried for Leashed-SGD.
    #[arg(long, value_delimiter = ',', default_value = "inf")]
    persistence: Vec<Persistence>,
    #[arg(long, default_value_t = 11)]
    repeats: usize,
    #[arg(long, value_enum, default_value_t = Seeds::Distinct)]
    seeds: Seeds,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum Seeds {
    Fixed,
    Distinct,
}

#[derive(Clone, Copy, ValueEnum)]
enum Simulate {
    None,
    Det,
    Exp,
}

#[derive(Args)]
struct DynamicsArgs {
    #[arg(long)]
    m: f64,
    #[arg(long)]
    tc: f64,
    #[arg(long)]
    tu: f64,
    #[arg(long, default_value_t = 0.0)]
    gamma: f64,
    #[arg(long, default_value_t = 0.0)]
    n0: f64,
    #[arg(long, default_value_t = 100)]
    steps: usize,
    #[arg(long, value_enum, default_value_t = Simulate::None)]
    simulate: Simulate,
    /// Phase transitions processed by the simulation.
    #[arg(long, default_value_t = 1_000_000)]
    events: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = 4)]
    readers: usize,
    #[arg(long, default_value_t = 2)]
    writers: usize,
    /// acquire_latest calls per reader.
    #[arg(long, default_value_t = 250_000)]
    acquires: u64,
    #[arg(long, default_value_t = 64)]
    dim: usize,
    /// Workers in the training runs.
    #[arg(long, default_value_t = 4)]
    threads: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Dynamics(args) => cmd_dynamics(args),
        Command::Verify(args) => cmd_verify(args),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_ERROR as u8)
        }
    }
}

type CliResult = Result<i32, Box<dyn std::error::Error>>;

fn experiment(algo: Algo, threads: usize, persistence: Persistence, c: &CommonArgs) -> Experiment {
    let mut dataset = c.dataset.clone();
    if let DatasetSpec::Mnist { train_limit, .. } = &mut dataset {
        *train_limit = (c.train_limit > 0).then_some(c.train_limit);
    }
    let optimizer = OptimizerConfig {
        algo,
        threads: if algo == Algo::Seq { 1 } else { threads },
        eta: c.step_size,
        persistence,
        batch_size: c.batch_size,
        seed: c.seed,
        time_budget: Duration::from_secs_f64(c.time_budget),
        epsilons: c.epsilon.clone(),
        max_updates: c.max_updates,
        monitor_interval: Duration::from_millis(c.monitor_interval_ms),
        memory_interval: Duration::from_millis(c.memory_interval_ms),
        pin_cores: c.pin_cores,
        record_trajectory: false,
        eval_every: c.eval_every,
    };
    let mut exp = Experiment::new(optimizer, c.arch, dataset);
    exp.staleness_window = Duration::from_millis(c.staleness_window_ms);
    exp
}

fn default_threads() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn print_report(r: &RunReport) {
    println!("run {}: {} (f0 = {:.4})", r.run_id, r.status, r.f0);
    for h in &r.epsilon_hits {
        match (h.wall_ns, h.iters) {
            (Some(t), Some(i)) => println!(
                "  eps {:<6} reached after {:.3} s, {i} updates",
                h.eps,
                t as f64 / 1e9
            ),
            _ => println!("  eps {:<6} not reached", h.eps),
        }
    }
    let tau_s: f64 = r
        .updates
        .iter()
        .filter(|u| !u.abandoned)
        .map(|u| u.tau_s as f64)
        .sum::<f64>()
        / r.published.max(1) as f64;
    let tau_c: f64 = r
        .updates
        .iter()
        .filter(|u| !u.abandoned)
        .map(|u| u.tau_c as f64)
        .sum::<f64>()
        / r.published.max(1) as f64;
    println!(
        "  {} published, {} abandoned, mean tau_c {tau_c:.2}, mean tau_s {tau_s:.2}",
        r.published, r.abandoned
    );
    if let Some(ns) = r.mean_iter_ns {
        println!(
            "  {:.1} us per update per thread, {:.1} us wall per update",
            ns as f64 / 1e3,
            r.wall_per_update_ns.unwrap_or(0) as f64 / 1e3
        );
    }
    println!(
        "  peak {} live parameter vectors ({} allocated)",
        r.census.max_live_payloads, r.census.allocations
    );
}

fn cmd_run(args: RunArgs) -> CliResult {
    let threads = args.threads.unwrap_or_else(default_threads);
    let mut exp = experiment(args.algo, threads, args.persistence, &args.common);
    if let Some(id) = args.run_id {
        exp.run_id = id;
    }
    let report = run_experiment(&exp, Some(&args.common.out_dir))?;
    print_report(&report);
    println!("  csv written to {}", args.common.out_dir.display());
    Ok(report.exit_code())
}

fn print_sweep(r: &SweepResult) {
    println!(
        "{}: {} converged, {} diverged, {} crashed, {} errors",
        r.label,
        r.converged,
        r.diverged,
        r.crashed,
        r.errors.len()
    );
    for e in &r.errors {
        println!("  error: {e}");
    }
    for e in &r.eps {
        match e.time_ns {
            Some(q) => println!(
                "  eps {:<6} {}/{} reached, seconds min {:.3} q1 {:.3} median {:.3} q3 {:.3} max {:.3}",
                e.eps,
                e.reached,
                r.repeats,
                q.min / 1e9,
                q.q1 / 1e9,
                q.median / 1e9,
                q.q3 / 1e9,
                q.max / 1e9
            ),
            None => println!("  eps {:<6} never reached", e.eps),
        }
    }
}

fn cmd_sweep(args: SweepArgs) -> CliResult {
    let mut settings = Vec::new();
    for &algo in &args.algo {
        let threads: &[usize] = if algo == Algo::Seq {
            &[1]
        } else {
            &args.threads
        };
        let bounds: &[Persistence] = if algo == Algo::Leashed {
            &args.persistence
        } else {
            &[Persistence::Unbounded]
        };
        for &m in threads {
            for &tp in bounds {
                settings.push(experiment(algo, m, tp, &args.common));
            }
        }
    }
    let policy = match args.seeds {
        Seeds::Fixed => SeedPolicy::Fixed,
        Seeds::Distinct => SeedPolicy::Distinct,
    };
    let results = sweep(&settings, args.repeats, policy, Some(&args.common.out_dir))?;
    for r in &results {
        print_sweep(r);
    }
    println!("csv written to {}", args.common.out_dir.display());
    Ok(0)
}

fn cmd_dynamics(args: DynamicsArgs) -> CliResult {
    let p = DynamicsParams::new(args.m, args.tc, args.tu, args.gamma, args.n0, args.steps)?;
    let recurrence = n_t_recurrence(&p);
    let sim = match args.simulate {
        Simulate::None => None,
        Simulate::Det => Some(simulate_events(
            &p,
            args.seed,
            ServiceDistribution::Deterministic,
            args.events,
        )?),
        Simulate::Exp => Some(simulate_events(
            &p,
            args.seed,
            ServiceDistribution::Exponential,
            args.events,
        )?),
    };
    let out: Box<dyn Write> = match &args.out {
        Some(path) => Box::new(File::create(path)?),
        None => Box::new(io::stdout().lock()),
    };
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "n_recurrence", "n_closed", "n_simulated"])?;
    for (t, n) in recurrence.iter().enumerate() {
        let closed = if p.gamma == 0.0 {
            n_t_closed(&p, t as u32)?.value.to_string()
        } else {
            String::new()
        };
        let simulated = sim
            .as_ref()
            .and_then(|s| s.trajectory.get(t))
            .map_or(String::new(), |n| n.to_string());
        w.write_record([t.to_string(), n.to_string(), closed, simulated])?;
    }
    w.flush()?;
    drop(w);
    eprintln!(
        "fixed point {:.6}, contraction {:.6} ({})",
        fixed_point(&p),
        p.contraction(),
        if p.is_stable() { "stable" } else { "unstable" }
    );
    if let Some(s) = sim {
        eprintln!(
            "simulated time-average occupancy {:.6} over {} events ({:.1} time units)",
            s.time_average, s.events, s.end_time
        );
    }
    Ok(0)
}

fn cmd_verify(args: VerifyArgs) -> CliResult {
    let stress = StressConfig {
        readers: args.readers,
        writers: args.writers,
        acquires_per_reader: args.acquires,
        dim: args.dim,
    };
    let checks = verify_suite(stress, args.threads);
    let mut failed = 0;
    for c in &checks {
        println!(
            "{} {}: {}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.detail
        );
        failed += usize::from(!c.passed);
    }
    println!("{} checks, {failed} failed", checks.len());
    Ok(if failed == 0 { 0 } else { EXIT_ERROR })
}
