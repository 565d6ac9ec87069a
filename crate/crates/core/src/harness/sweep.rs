//! Repeated runs of several settings with quantile aggregation.

use std::path::Path;

use serde::Serialize;

use super::tables::{write_rows, Row, Tables};
use super::{run_prepared, Experiment, HarnessError, Prepared, Quantiles, RunReport};
use crate::optimizers::RunStatus;

pub const SWEEP_CSV: &str = "sweep.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeedPolicy {
    /// Every repeat uses the experiment's seed.
    Fixed,
    /// Repeat `r` uses the experiment's seed plus `r`.
    Distinct,
}

/// Targets reached by the runs of one setting. Runs that never reached the
/// target are left out of the quantiles.
#[derive(Debug, Clone, PartialEq)]
pub struct EpsAggregate {
    pub eps: f64,
    pub reached: usize,
    pub time_ns: Option<Quantiles>,
    pub iters: Option<Quantiles>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub label: String,
    pub repeats: usize,
    pub converged: usize,
    pub diverged: usize,
    pub crashed: usize,
    /// Runs that could not be carried out, with the reason.
    pub errors: Vec<String>,
    pub eps: Vec<EpsAggregate>,
    pub mean_iter_ns: Option<Quantiles>,
    pub reports: Vec<RunReport>,
}

/// Runs every experiment `repeats` times. A failing run is recorded in
/// [`SweepResult::errors`] and the sweep carries on. With `out_dir`, every
/// run's tables are appended to the CSV files there and the aggregate goes
/// to `sweep.csv`.
pub fn sweep(
    experiments: &[Experiment],
    repeats: usize,
    seeds: SeedPolicy,
    out_dir: Option<&Path>,
) -> Result<Vec<SweepResult>, HarnessError> {
    if repeats == 0 {
        return Err(HarnessError::Config(
            "a sweep needs at least one repeat".into(),
        ));
    }
    if let Some(dir) = out_dir {
        Tables::default().write(dir, false)?;
    }
    let mut results = Vec::with_capacity(experiments.len());
    for exp in experiments {
        let mut result = SweepResult {
            label: exp.run_id.clone(),
            repeats,
            converged: 0,
            diverged: 0,
            crashed: 0,
            errors: Vec::new(),
            eps: Vec::new(),
            mean_iter_ns: None,
            reports: Vec::new(),
        };
        match Prepared::new(exp) {
            Err(e) => result.errors = vec![e.to_string(); repeats],
            Ok(prepared) => {
                for r in 0..repeats {
                    let mut run = exp.clone();
                    if seeds == SeedPolicy::Distinct {
                        run.optimizer.seed = exp.optimizer.seed.wrapping_add(r as u64);
                    }
                    run.run_id = format!("{}-r{r}", exp.run_id);
                    match run_prepared(&run, &prepared) {
                        Ok(report) => {
                            if let Some(dir) = out_dir {
                                if let Err(e) = report.tables().write(dir, true) {
                                    result.errors.push(format!("{}: {e}", run.run_id));
                                }
                            }
                            result.reports.push(report);
                        }
                        Err(e) => result.errors.push(format!("{}: {e}", run.run_id)),
                    }
                }
            }
        }
        aggregate(exp, &mut result);
        results.push(result);
    }
    if let Some(dir) = out_dir {
        write_sweep_csv(&dir.join(SWEEP_CSV), &results)?;
    }
    Ok(results)
}

fn aggregate(exp: &Experiment, result: &mut SweepResult) {
    for r in &result.reports {
        match r.status {
            RunStatus::Converged => result.converged += 1,
            RunStatus::Diverge => result.diverged += 1,
            RunStatus::Crash => result.crashed += 1,
        }
    }
    result.eps = exp
        .optimizer
        .epsilons
        .iter()
        .enumerate()
        .map(|(i, &eps)| {
            let hits: Vec<_> = result
                .reports
                .iter()
                .filter_map(|r| r.epsilon_hits.get(i))
                .filter(|h| h.wall_ns.is_some())
                .collect();
            let times: Vec<u64> = hits.iter().filter_map(|h| h.wall_ns).collect();
            let iters: Vec<u64> = hits.iter().filter_map(|h| h.iters).collect();
            EpsAggregate {
                eps,
                reached: hits.len(),
                time_ns: Quantiles::of_u64(&times),
                iters: Quantiles::of_u64(&iters),
            }
        })
        .collect();
    let iter_ns: Vec<u64> = result
        .reports
        .iter()
        .filter_map(|r| r.mean_iter_ns)
        .collect();
    result.mean_iter_ns = Quantiles::of_u64(&iter_ns);
}

#[derive(Debug, Serialize, serde::Deserialize)]
struct SweepRow {
    label: String,
    eps: f64,
    repeats: usize,
    reached: usize,
    converged: usize,
    diverged: usize,
    crashed: usize,
    errors: usize,
    time_min: Option<f64>,
    time_q1: Option<f64>,
    time_median: Option<f64>,
    time_q3: Option<f64>,
    time_max: Option<f64>,
    iters_median: Option<f64>,
}

impl Row for SweepRow {
    const HEADER: &'static [&'static str] = &[
        "label",
        "eps",
        "repeats",
        "reached",
        "converged",
        "diverged",
        "crashed",
        "errors",
        "time_min",
        "time_q1",
        "time_median",
        "time_q3",
        "time_max",
        "iters_median",
    ];
}

/// One row per setting and target: counts plus time-to-target quantiles.
pub fn write_sweep_csv(path: &Path, results: &[SweepResult]) -> Result<(), HarnessError> {
    let rows: Vec<SweepRow> = results
        .iter()
        .flat_map(|r| {
            r.eps.iter().map(move |e| SweepRow {
                label: r.label.clone(),
                eps: e.eps,
                repeats: r.repeats,
                reached: e.reached,
                converged: r.converged,
                diverged: r.diverged,
                crashed: r.crashed,
                errors: r.errors.len(),
                time_min: e.time_ns.map(|q| q.min),
                time_q1: e.time_ns.map(|q| q.q1),
                time_median: e.time_ns.map(|q| q.median),
                time_q3: e.time_ns.map(|q| q.q3),
                time_max: e.time_ns.map(|q| q.max),
                iters_median: e.iters.map(|q| q.median),
            })
        })
        .collect();
    write_rows(path, &rows, false)
}
