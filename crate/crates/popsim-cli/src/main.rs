//! `popsim` — run, sweep, verify, and aggregate workflows for the pairwise
//! population protocol simulator.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error, 3 verifier
//! property failure. Summary lines go to stdout, diagnostics and the echoed
//! effective configuration to stderr. Every run is seeded: without `--seed`
//! one is drawn from system entropy and echoed, so any run can be reproduced
//! after the fact.

use std::fmt;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use popsim_core::engine::{default_max_steps, run_with_trace};
use popsim_core::experiments::{
    aggregate, auto_m, read_records_csv_file, run_sweep, write_aggregates_csv,
    write_aggregates_csv_file, write_records_csv_file, MPolicy, MaxStepsPolicy, SweepPlan,
};
use popsim_core::protocol::{Baseline, LeaderMinion, ProtocolKind, ProtocolParams};
use popsim_core::verifier::{
    build_reachability, check_always_one_contender, check_single_contender_absorbing,
    ReachabilityGraph, Verdict,
};

const THREADS_ENV: &str = "POPSIM_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "popsim",
    version,
    about = "Population protocol leader election: simulator, verifier, and sweep harness"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a single run until one contender remains.
    Run(RunArgs),
    /// Run a Monte Carlo sweep over network sizes and write a records CSV.
    Sweep(SweepArgs),
    /// Exhaustively check the election safety properties on a small instance.
    Verify(VerifyArgs),
    /// Aggregate a records CSV into per-size statistics.
    Aggregate(AggregateArgs),
}

/// Value ceiling argument: a positive integer or `auto` (= `ceil(log2 n)^3`).
#[derive(Debug, Clone, Copy)]
enum MArg {
    Auto,
    Explicit(u32),
}

impl FromStr for MArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "auto" {
            return Ok(MArg::Auto);
        }
        s.parse::<u32>()
            .map(MArg::Explicit)
            .map_err(|_| format!("expected a positive integer or \"auto\", got {s:?}"))
    }
}

impl MArg {
    fn resolve(self, n: usize) -> u32 {
        match self {
            MArg::Auto => auto_m(n),
            MArg::Explicit(m) => m,
        }
    }

    fn policy(self) -> MPolicy {
        match self {
            MArg::Auto => MPolicy::Auto,
            MArg::Explicit(m) => MPolicy::Explicit(m),
        }
    }
}

impl fmt::Display for MArg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MArg::Auto => f.write_str("auto"),
            MArg::Explicit(m) => write!(f, "{m}"),
        }
    }
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Protocol to simulate.
    #[arg(long, default_value = "lm")]
    protocol: ProtocolKind,
    /// Population size.
    #[arg(long, default_value_t = 1024)]
    n: usize,
    /// Value ceiling, or `auto` for ceil(log2 n)^3.
    #[arg(long, default_value = "auto")]
    m: MArg,
    /// Scheduler seed; drawn from system entropy when absent.
    #[arg(long)]
    seed: Option<u64>,
    /// Step cap; defaults to 200 * n * ceil(log2 n)^3.
    #[arg(long)]
    max_steps: Option<u64>,
    /// Emit one line per interaction to stdout.
    #[arg(long)]
    trace: bool,
}

#[derive(Debug, Args)]
struct SweepArgs {
    /// Protocol to sweep.
    #[arg(long, default_value = "lm")]
    protocol: ProtocolKind,
    /// Comma-separated population sizes.
    #[arg(
        long = "n-list",
        value_delimiter = ',',
        default_value = "32,64,128,256,512,1024,2048,4096,8192,16384,32768,65536,131072"
    )]
    n_list: Vec<usize>,
    /// Value ceiling, or `auto` for ceil(log2 n)^3 per size.
    #[arg(long, default_value = "auto")]
    m: MArg,
    /// Trials per network size.
    #[arg(long, default_value_t = 100)]
    trials: u32,
    /// Base seed; per-trial seeds are derived from (base, n, trial).
    #[arg(long)]
    seed: Option<u64>,
    /// Step cap applied to every size; defaults to 200 * n * ceil(log2 n)^3.
    #[arg(long)]
    max_steps: Option<u64>,
    /// Records CSV output path.
    #[arg(long, default_value = "records.csv")]
    out: PathBuf,
    /// Worker threads (0 = all available); overrides POPSIM_THREADS.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    /// Protocol to verify.
    #[arg(long, default_value = "lm")]
    protocol: ProtocolKind,
    /// Population size of the checked instance.
    #[arg(long, default_value_t = 4)]
    n: usize,
    /// Value ceiling, or `auto` for ceil(log2 n)^3.
    #[arg(long, default_value = "2")]
    m: MArg,
    /// Abort if the reachable configuration count exceeds this.
    #[arg(long, default_value_t = 10_000_000)]
    node_cap: usize,
}

#[derive(Debug, Args)]
struct AggregateArgs {
    /// Records CSV to aggregate.
    #[arg(long, default_value = "records.csv")]
    input: PathBuf,
    /// Aggregate CSV output path, or `-` for stdout.
    #[arg(long, default_value = "-")]
    out: String,
}

/// Failure with its exit code: usage errors exit 2, runtime failures 1, and
/// verifier property failures 3 so CI can tell them apart.
enum Failure {
    Usage(String),
    Runtime(String),
    Property,
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Runtime(_) => 1,
            Failure::Property => 3,
        }
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn runtime(err: impl fmt::Display) -> Failure {
    Failure::Runtime(err.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            match &failure {
                Failure::Usage(msg) => eprintln!("popsim: usage error: {msg}"),
                Failure::Runtime(msg) => eprintln!("popsim: {msg}"),
                Failure::Property => eprintln!("popsim: a verified property failed"),
            }
            ExitCode::from(failure.code())
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Verify(args) => cmd_verify(args),
        Command::Aggregate(args) => cmd_aggregate(args),
    }
}

fn validate_size(protocol: ProtocolKind, n: usize, flag: &str) -> Result<(), Failure> {
    protocol
        .validate_population(n)
        .map_err(|e| usage(format!("{flag}: {e}")))
}

fn validate_m(m: MArg, n: usize) -> Result<u32, Failure> {
    let resolved = m.resolve(n);
    if resolved < 1 {
        return Err(usage("--m: must be at least 1"));
    }
    Ok(resolved)
}

fn entropy_seed() -> u64 {
    rand::random::<u64>()
}

fn resolve_threads(flag: Option<usize>) -> Result<usize, Failure> {
    if let Some(t) = flag {
        return Ok(t);
    }
    match std::env::var(THREADS_ENV) {
        Ok(value) => value
            .parse::<usize>()
            .map_err(|_| usage(format!("{THREADS_ENV}: expected an integer, got {value:?}"))),
        Err(_) => Ok(0),
    }
}

fn cmd_run(args: RunArgs) -> Result<(), Failure> {
    validate_size(args.protocol, args.n, "--n")?;
    let m = validate_m(args.m, args.n)?;
    let seed = args.seed.unwrap_or_else(entropy_seed);
    let max_steps = args.max_steps.unwrap_or_else(|| default_max_steps(args.n));
    eprintln!(
        "popsim: config: run protocol={} n={} m={} seed={} max-steps={} trace={}",
        args.protocol, args.n, m, seed, max_steps, args.trace
    );

    let params = ProtocolParams::new(args.protocol, args.n, m).map_err(runtime)?;
    let stdout = std::io::stdout();
    let mut trace_handle;
    let trace: Option<&mut dyn Write> = if args.trace {
        trace_handle = stdout.lock();
        Some(&mut trace_handle)
    } else {
        None
    };
    let outcome = match args.protocol {
        ProtocolKind::Lm => {
            let protocol = LeaderMinion::new(m).map_err(runtime)?;
            run_with_trace(&protocol, params, seed, max_steps, trace)
        }
        ProtocolKind::Baseline => run_with_trace(&Baseline, params, seed, max_steps, trace),
    }
    .map_err(runtime)?;

    println!(
        "RUN protocol={} n={} m={} seed={} converged={} steps={} parallel_time={:.6} \
         max_abs_value={} backup_triggered={}",
        outcome.protocol,
        outcome.n,
        outcome.m,
        outcome.seed,
        outcome.converged,
        outcome.steps,
        outcome.parallel_time(),
        outcome.max_abs_value,
        outcome.backup_triggered
    );
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<(), Failure> {
    if args.n_list.is_empty() {
        return Err(usage("--n-list: needs at least one size"));
    }
    for &n in &args.n_list {
        validate_size(args.protocol, n, "--n-list")?;
        validate_m(args.m, n)?;
    }
    if args.trials == 0 {
        return Err(usage("--trials: must be at least 1"));
    }
    let threads = resolve_threads(args.threads)?;
    let base_seed = args.seed.unwrap_or_else(entropy_seed);
    let max_steps = args
        .max_steps
        .map(MaxStepsPolicy::Explicit)
        .unwrap_or(MaxStepsPolicy::Default);
    eprintln!(
        "popsim: config: sweep protocol={} n-list={} m={} trials={} seed={} threads={} out={}",
        args.protocol,
        args.n_list
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join(","),
        args.m,
        args.trials,
        base_seed,
        threads,
        args.out.display()
    );

    let plan = SweepPlan {
        protocol: args.protocol,
        n_list: args.n_list,
        m_policy: args.m.policy(),
        trials_per_n: args.trials,
        base_seed,
        max_steps,
        threads,
    };
    let output = run_sweep(&plan).map_err(runtime)?;
    for failure in &output.failures {
        eprintln!(
            "popsim: trial failed: n={} m={} trial={} seed={}: {}",
            failure.n, failure.m, failure.trial, failure.seed, failure.error
        );
    }
    write_records_csv_file(&args.out, &output.records).map_err(runtime)?;
    println!(
        "SWEEP protocol={} sizes={} trials={} records={} failures={} out={}",
        plan.protocol,
        plan.n_list.len(),
        plan.trials_per_n,
        output.records.len(),
        output.failures.len(),
        args.out.display()
    );
    if output.failures.is_empty() {
        Ok(())
    } else {
        Err(Failure::Runtime(format!(
            "{} trial(s) failed; successful records were written",
            output.failures.len()
        )))
    }
}

fn print_verdict<S: Copy + fmt::Display>(
    graph: &ReachabilityGraph<S>,
    property: &str,
    verdict: &Verdict,
) {
    println!(
        "VERIFY protocol={} n={} m={} property={} result={} nodes={}",
        graph.protocol_name(),
        graph.params().n,
        graph.params().m,
        property,
        if verdict.holds() { "holds" } else { "fails" },
        graph.node_count()
    );
    if let Verdict::Fails { witness, .. } = verdict {
        for (depth, &id) in witness.iter().enumerate() {
            println!("WITNESS depth={} config={}", depth, graph.format_config(id));
        }
    }
}

fn cmd_verify(args: VerifyArgs) -> Result<(), Failure> {
    validate_size(args.protocol, args.n, "--n")?;
    let m = validate_m(args.m, args.n)?;
    eprintln!(
        "popsim: config: verify protocol={} n={} m={} node-cap={}",
        args.protocol, args.n, m, args.node_cap
    );
    let params = ProtocolParams::new(args.protocol, args.n, m).map_err(runtime)?;

    let verdicts = match args.protocol {
        ProtocolKind::Lm => {
            let protocol = LeaderMinion::new(m).map_err(runtime)?;
            let graph = build_reachability(&protocol, params, args.node_cap).map_err(runtime)?;
            let always = check_always_one_contender(&graph);
            let absorbing = check_single_contender_absorbing(&graph);
            print_verdict(&graph, "always-one-contender", &always);
            print_verdict(&graph, "single-contender-absorbing", &absorbing);
            [always.holds(), absorbing.holds()]
        }
        ProtocolKind::Baseline => {
            let graph = build_reachability(&Baseline, params, args.node_cap).map_err(runtime)?;
            let always = check_always_one_contender(&graph);
            let absorbing = check_single_contender_absorbing(&graph);
            print_verdict(&graph, "always-one-contender", &always);
            print_verdict(&graph, "single-contender-absorbing", &absorbing);
            [always.holds(), absorbing.holds()]
        }
    };
    if verdicts.iter().all(|&h| h) {
        Ok(())
    } else {
        Err(Failure::Property)
    }
}

fn cmd_aggregate(args: AggregateArgs) -> Result<(), Failure> {
    eprintln!(
        "popsim: config: aggregate input={} out={}",
        args.input.display(),
        args.out
    );
    let records = read_records_csv_file(&args.input).map_err(runtime)?;
    let rows = aggregate(&records).map_err(runtime)?;
    if args.out == "-" {
        let stdout = std::io::stdout();
        let mut handle = stdout.lock();
        write_aggregates_csv(&mut handle, &rows).map_err(runtime)?;
    } else {
        let path = PathBuf::from(&args.out);
        write_aggregates_csv_file(&path, &rows).map_err(runtime)?;
        println!("AGGREGATE rows={} out={}", rows.len(), args.out);
    }
    Ok(())
}
