//! Monte Carlo sweeps over network sizes with reproducible per-trial seeds.
//!
//! A trial's seed depends only on `(base_seed, n, trial)`, never on execution
//! order, so a sweep produces identical records on one thread or many and any
//! single record can be reproduced in isolation. With the `parallel` feature
//! (default) trials are dispatched to a rayon pool; without it the sweep
//! runner falls back to a sequential loop with the same results.
//!
//! Records and aggregates are written as CSV with a fixed schema (see
//! [`RECORDS_CSV_HEADER`] and [`AGGREGATE_CSV_HEADER`]); parallel times carry
//! exactly six decimal places and booleans are `true`/`false`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::engine::{ceil_log2, default_max_steps, run_trial, EngineError, SimulationOutcome};
use crate::protocol::ProtocolKind;
use crate::rng::splitmix64;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("sweep plan has an empty n list")]
    EmptyNList,
    #[error("sweep plan needs at least one trial per network size")]
    ZeroTrials,
    #[error("no records to aggregate")]
    EmptyRecords,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {message}")]
    MalformedCsv {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[cfg(feature = "parallel")]
    #[error("could not build worker pool: {0}")]
    ThreadPool(String),
}

/// Value ceiling as a function of the network size: `ceil(log2 n)^3`.
/// `auto_m(100_000) = 17^3 = 4913`.
pub fn auto_m(n: usize) -> u32 {
    assert!(n >= 2, "auto m needs n >= 2 (got {n})");
    ceil_log2(n).pow(3)
}

/// How the value ceiling is chosen for each network size in a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MPolicy {
    /// `auto_m(n)` per size.
    Auto,
    Explicit(u32),
}

impl MPolicy {
    /// Sizes too small to simulate resolve to a placeholder; the trial
    /// itself reports the population error.
    pub fn resolve(self, n: usize) -> u32 {
        match self {
            MPolicy::Auto if n >= 2 => auto_m(n),
            MPolicy::Auto => 1,
            MPolicy::Explicit(m) => m,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaxStepsPolicy {
    /// `default_max_steps(n)` per size.
    Default,
    Explicit(u64),
}

impl MaxStepsPolicy {
    pub fn resolve(self, n: usize) -> u64 {
        match self {
            MaxStepsPolicy::Default if n >= 2 => default_max_steps(n),
            MaxStepsPolicy::Default => 1,
            MaxStepsPolicy::Explicit(cap) => cap,
        }
    }
}

/// A Monte Carlo sweep: `trials_per_n` runs for every size in `n_list`.
#[derive(Debug, Clone)]
pub struct SweepPlan {
    pub protocol: ProtocolKind,
    pub n_list: Vec<usize>,
    pub m_policy: MPolicy,
    pub trials_per_n: u32,
    pub base_seed: u64,
    pub max_steps: MaxStepsPolicy,
    /// Worker threads for trial dispatch; 0 means all available. Ignored by
    /// sequential builds and irrelevant to the results either way.
    pub threads: usize,
}

/// One simulation outcome plus its trial index within the sweep.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExperimentRecord {
    pub trial: u32,
    pub outcome: SimulationOutcome,
}

/// A trial that could not run at all (e.g. a size below the protocol's
/// minimum). The rest of the sweep is unaffected.
#[derive(Debug)]
pub struct TrialFailure {
    pub n: usize,
    pub m: u32,
    pub trial: u32,
    pub seed: u64,
    pub error: EngineError,
}

#[derive(Debug)]
pub struct SweepOutput {
    /// Sorted by `(n, trial)`.
    pub records: Vec<ExperimentRecord>,
    pub failures: Vec<TrialFailure>,
}

/// Deterministic per-trial seed: `base_seed ^ mix(n, trial)`, independent of
/// every other trial and of execution order.
pub fn trial_seed(base_seed: u64, n: usize, trial: u32) -> u64 {
    let mut state = n as u64;
    let mixed_n = splitmix64(&mut state);
    let mut state = mixed_n ^ u64::from(trial);
    base_seed ^ splitmix64(&mut state)
}

#[derive(Debug, Clone, Copy)]
struct TrialCell {
    n: usize,
    m: u32,
    trial: u32,
    seed: u64,
    max_steps: u64,
}

fn plan_cells(plan: &SweepPlan) -> Result<Vec<TrialCell>, ExperimentError> {
    if plan.n_list.is_empty() {
        return Err(ExperimentError::EmptyNList);
    }
    if plan.trials_per_n == 0 {
        return Err(ExperimentError::ZeroTrials);
    }
    let mut cells = Vec::with_capacity(plan.n_list.len() * plan.trials_per_n as usize);
    for &n in &plan.n_list {
        let m = plan.m_policy.resolve(n);
        let max_steps = plan.max_steps.resolve(n);
        for trial in 0..plan.trials_per_n {
            cells.push(TrialCell {
                n,
                m,
                trial,
                seed: trial_seed(plan.base_seed, n, trial),
                max_steps,
            });
        }
    }
    Ok(cells)
}

fn run_cell(protocol: ProtocolKind, cell: TrialCell) -> Result<ExperimentRecord, TrialFailure> {
    match run_trial(protocol, cell.n, cell.m, cell.seed, cell.max_steps) {
        Ok(outcome) => Ok(ExperimentRecord {
            trial: cell.trial,
            outcome,
        }),
        Err(error) => Err(TrialFailure {
            n: cell.n,
            m: cell.m,
            trial: cell.trial,
            seed: cell.seed,
            error,
        }),
    }
}

fn collect_output(results: Vec<Result<ExperimentRecord, TrialFailure>>) -> SweepOutput {
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(rec) => records.push(rec),
            Err(fail) => failures.push(fail),
        }
    }
    records.sort_by_key(|r| (r.outcome.n, r.trial));
    failures.sort_by_key(|f| (f.n, f.trial));
    SweepOutput { records, failures }
}

/// Run every trial of the plan sequentially on the calling thread.
pub fn run_sweep_serial(plan: &SweepPlan) -> Result<SweepOutput, ExperimentError> {
    let cells = plan_cells(plan)?;
    let results = cells
        .into_iter()
        .map(|cell| run_cell(plan.protocol, cell))
        .collect();
    Ok(collect_output(results))
}

/// Run every trial of the plan, dispatching to a rayon pool of
/// `plan.threads` workers (0 = all available). Failing trials are surfaced
/// per record without aborting the sweep. Results are canonically sorted, so
/// the output is identical for any thread count and for the sequential
/// runner.
#[cfg(feature = "parallel")]
pub fn run_sweep(plan: &SweepPlan) -> Result<SweepOutput, ExperimentError> {
    if plan.threads == 1 {
        return run_sweep_serial(plan);
    }
    let cells = plan_cells(plan)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(plan.threads)
        .build()
        .map_err(|e| ExperimentError::ThreadPool(e.to_string()))?;
    let protocol = plan.protocol;
    let results = pool.install(|| {
        cells
            .into_par_iter()
            .map(|cell| run_cell(protocol, cell))
            .collect()
    });
    Ok(collect_output(results))
}

/// Sequential-build fallback: identical contract and results, one thread.
#[cfg(not(feature = "parallel"))]
pub fn run_sweep(plan: &SweepPlan) -> Result<SweepOutput, ExperimentError> {
    run_sweep_serial(plan)
}

/// Per-size statistics. Time statistics cover converged trials only; capped
/// trials are never dropped silently — they show up in `frac_converged`.
/// When no trial converged the four time columns are NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub n: usize,
    pub trials: u32,
    pub mean_parallel_time: f64,
    pub min_parallel_time: f64,
    pub max_parallel_time: f64,
    pub stddev_parallel_time: f64,
    pub frac_backup: f64,
    pub frac_converged: f64,
}

/// Group records by `n` and compute the per-size statistics.
pub fn aggregate(records: &[ExperimentRecord]) -> Result<Vec<AggregateRow>, ExperimentError> {
    if records.is_empty() {
        return Err(ExperimentError::EmptyRecords);
    }
    let mut by_n: BTreeMap<usize, Vec<&ExperimentRecord>> = BTreeMap::new();
    for rec in records {
        by_n.entry(rec.outcome.n).or_default().push(rec);
    }
    let rows = by_n
        .into_iter()
        .map(|(n, group)| {
            let trials = group.len() as u32;
            let backup = group.iter().filter(|r| r.outcome.backup_triggered).count();
            let times: Vec<f64> = group
                .iter()
                .filter(|r| r.outcome.converged)
                .map(|r| r.outcome.parallel_time())
                .collect();
            let converged = times.len();
            let (mean, min, max, stddev) = if times.is_empty() {
                (f64::NAN, f64::NAN, f64::NAN, f64::NAN)
            } else {
                let mean = times.iter().sum::<f64>() / converged as f64;
                let min = times.iter().copied().fold(f64::INFINITY, f64::min);
                let max = times.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                // sample standard deviation; 0 for a single observation
                let stddev = if converged > 1 {
                    let var = times.iter().map(|t| (t - mean).powi(2)).sum::<f64>()
                        / (converged as f64 - 1.0);
                    var.sqrt()
                } else {
                    0.0
                };
                (mean, min, max, stddev)
            };
            AggregateRow {
                n,
                trials,
                mean_parallel_time: mean,
                min_parallel_time: min,
                max_parallel_time: max,
                stddev_parallel_time: stddev,
                frac_backup: backup as f64 / trials as f64,
                frac_converged: converged as f64 / trials as f64,
            }
        })
        .collect();
    Ok(rows)
}

pub const RECORDS_CSV_HEADER: &str =
    "protocol,n,m,trial,seed,steps,parallel_time,max_abs_value,backup_triggered,converged";

pub const AGGREGATE_CSV_HEADER: &str = "n,trials,mean_parallel_time,min_parallel_time,\
max_parallel_time,stddev_parallel_time,frac_backup,frac_converged";

fn record_line(rec: &ExperimentRecord) -> String {
    let o = &rec.outcome;
    format!(
        "{},{},{},{},{},{},{:.6},{},{},{}",
        o.protocol,
        o.n,
        o.m,
        rec.trial,
        o.seed,
        o.steps,
        o.parallel_time(),
        o.max_abs_value,
        o.backup_triggered,
        o.converged
    )
}

pub fn write_records_csv<W: Write>(w: &mut W, records: &[ExperimentRecord]) -> io::Result<()> {
    writeln!(w, "{RECORDS_CSV_HEADER}")?;
    for rec in records {
        writeln!(w, "{}", record_line(rec))?;
    }
    Ok(())
}

pub fn write_records_csv_file(
    path: &Path,
    records: &[ExperimentRecord],
) -> Result<(), ExperimentError> {
    let io_err = |source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::create(path).map_err(io_err)?;
    let mut w = BufWriter::new(file);
    write_records_csv(&mut w, records).map_err(io_err)?;
    w.flush().map_err(io_err)
}

pub fn write_aggregates_csv<W: Write>(w: &mut W, rows: &[AggregateRow]) -> io::Result<()> {
    writeln!(w, "{AGGREGATE_CSV_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            r.n,
            r.trials,
            r.mean_parallel_time,
            r.min_parallel_time,
            r.max_parallel_time,
            r.stddev_parallel_time,
            r.frac_backup,
            r.frac_converged
        )?;
    }
    Ok(())
}

pub fn write_aggregates_csv_file(
    path: &Path,
    rows: &[AggregateRow],
) -> Result<(), ExperimentError> {
    let io_err = |source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::create(path).map_err(io_err)?;
    let mut w = BufWriter::new(file);
    write_aggregates_csv(&mut w, rows).map_err(io_err)?;
    w.flush().map_err(io_err)
}

/// Parse a records CSV produced by [`write_records_csv`]. The
/// `parallel_time` column is derived from `steps / n` and is validated as a
/// float but not stored; every stored field round-trips exactly.
pub fn read_records_csv_file(path: &Path) -> Result<Vec<ExperimentRecord>, ExperimentError> {
    let file = File::open(path).map_err(|source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let reader = BufReader::new(file);
    let malformed = |line: usize, message: String| ExperimentError::MalformedCsv {
        path: path.to_path_buf(),
        line,
        message,
    };

    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| ExperimentError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let lineno = idx + 1;
        if idx == 0 {
            if line != RECORDS_CSV_HEADER {
                return Err(malformed(lineno, format!("unexpected header {line:?}")));
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 10 {
            return Err(malformed(
                lineno,
                format!("expected 10 fields, found {}", fields.len()),
            ));
        }
        macro_rules! parse {
            ($i:expr, $ty:ty, $name:expr) => {
                fields[$i].parse::<$ty>().map_err(|e| {
                    malformed(lineno, format!("bad {} {:?}: {e}", $name, fields[$i]))
                })?
            };
        }
        let n = parse!(1, usize, "n");
        let _parallel_time = parse!(6, f64, "parallel_time");
        records.push(ExperimentRecord {
            trial: parse!(3, u32, "trial"),
            outcome: SimulationOutcome {
                protocol: fields[0].to_string(),
                n,
                m: parse!(2, u32, "m"),
                seed: parse!(4, u64, "seed"),
                steps: parse!(5, u64, "steps"),
                max_abs_value: parse!(7, u32, "max_abs_value"),
                backup_triggered: parse!(8, bool, "backup_triggered"),
                converged: parse!(9, bool, "converged"),
            },
        });
    }
    Ok(records)
}
