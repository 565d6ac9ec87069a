//! Concurrency stress tests and invariant checks over run telemetry.

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::thread;
use std::time::Duration;

use super::{run_prepared, Arch, DatasetSpec, Experiment, Prepared};
use crate::optimizers::{Algo, OptimizerConfig, Persistence, UpdateRecord};
use crate::param_vector::{ParameterVector, PayloadPool, PublishOutcome, VersionSlot};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StressConfig {
    pub readers: usize,
    pub writers: usize,
    pub acquires_per_reader: u64,
    pub dim: usize,
}

impl Default for StressConfig {
    fn default() -> Self {
        StressConfig {
            readers: 4,
            writers: 2,
            acquires_per_reader: 250_000,
            dim: 64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StressReport {
    pub acquires: u64,
    pub publishes: u64,
    pub failed_publishes: u64,
    /// Reads that saw a smaller sequence number than the same thread's
    /// previous read.
    pub non_monotone: u64,
    /// Reads whose payload did not hold the version's sequence number in
    /// every component.
    pub inconsistent: u64,
    pub read_after_reclaim: u64,
    pub reclaimed_twice: u64,
    pub leaked: u64,
    pub max_live_payloads: usize,
}

impl StressReport {
    pub fn clean(&self) -> bool {
        self.non_monotone == 0
            && self.inconsistent == 0
            && self.read_after_reclaim == 0
            && self.reclaimed_twice == 0
            && self.leaked == 0
    }
}

/// Hammers `acquire_latest` while writers publish versions whose payload is
/// filled with their own sequence number.
pub fn stress_acquire(cfg: StressConfig) -> StressReport {
    assert!(cfg.readers > 0 && cfg.writers > 0 && cfg.dim > 0);
    let pool = PayloadPool::new(cfg.dim).expect("positive dimension");
    let mut slot = VersionSlot::new(ParameterVector::with_pool(&pool));
    let done = AtomicBool::new(false);
    let publishes = AtomicU64::new(0);
    let failed = AtomicU64::new(0);
    let non_monotone = AtomicU64::new(0);
    let inconsistent = AtomicU64::new(0);
    let acquires = AtomicU64::new(0);

    thread::scope(|s| {
        for _ in 0..cfg.writers {
            s.spawn(|| {
                let mut fill = vec![0.0f32; cfg.dim];
                while !done.load(Ordering::Relaxed) {
                    let latest = slot.acquire_latest();
                    let next = latest.seq() + 1;
                    let expected = latest.id();
                    drop(latest);
                    fill.fill(next as f32);
                    let mut candidate = Box::new(ParameterVector::with_pool_uninit(&pool));
                    candidate.copy_from(&fill, next).expect("same dimension");
                    match slot.try_publish(expected, candidate) {
                        PublishOutcome::Published { .. } => {
                            publishes.fetch_add(1, Ordering::Relaxed)
                        }
                        PublishOutcome::Rejected(_) => failed.fetch_add(1, Ordering::Relaxed),
                    };
                }
            });
        }
        let readers: Vec<_> = (0..cfg.readers)
            .map(|_| {
                s.spawn(|| {
                    let mut last = 0;
                    for _ in 0..cfg.acquires_per_reader {
                        let guard = slot.acquire_latest();
                        let t = guard.seq();
                        if t < last {
                            non_monotone.fetch_add(1, Ordering::Relaxed);
                        }
                        last = t;
                        let want = t as f32;
                        if guard.theta().iter().any(|&x| x != want) {
                            inconsistent.fetch_add(1, Ordering::Relaxed);
                        }
                        acquires.fetch_add(1, Ordering::Relaxed);
                    }
                })
            })
            .collect();
        for r in readers {
            r.join().expect("reader panicked");
        }
        done.store(true, Ordering::Relaxed);
    });

    let mut report = StressReport {
        acquires: acquires.into_inner(),
        publishes: publishes.into_inner(),
        failed_publishes: failed.into_inner(),
        non_monotone: non_monotone.into_inner(),
        inconsistent: inconsistent.into_inner(),
        read_after_reclaim: pool.read_after_reclaim_events(),
        max_live_payloads: pool.max_live_payloads(),
        ..StressReport::default()
    };
    slot.for_each_version(|pv| match pv.reclaim_count() {
        0 if pv.is_stale() => report.leaked += 1,
        0 | 1 => {}
        _ => report.reclaimed_twice += 1,
    });
    report
}

/// Checks that published sequence numbers are exactly `1..=N`.
pub fn check_seq_complete(records: &[UpdateRecord]) -> Result<(), String> {
    let mut seqs: Vec<u64> = records
        .iter()
        .filter(|r| !r.abandoned)
        .map(|r| r.seq)
        .collect();
    seqs.sort_unstable();
    for (i, &s) in seqs.iter().enumerate() {
        let want = i as u64 + 1;
        if s != want {
            return Err(if s < want {
                format!("sequence number {s} published twice")
            } else {
                format!("sequence number {want} missing")
            });
        }
    }
    Ok(())
}

/// Every failed publication attempt implies another update was published in
/// the meantime, so an update that needed `tries` attempts has seen the
/// latest version advance at least `tries - 1` times. Returns the records
/// that violate this.
pub fn lock_freedom_violations(records: &[UpdateRecord]) -> Vec<UpdateRecord> {
    records
        .iter()
        .filter(|r| r.tau_s < u64::from(r.tries.saturating_sub(1)))
        .copied()
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Check {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

/// The concurrency invariant suite: the acquire/reclaim stress test plus
/// short Leashed-SGD and lock-based runs checked for sequence completeness,
/// lock-freedom, exactly-once reclamation and the memory bound.
pub fn verify_suite(stress: StressConfig, threads: usize) -> Vec<Check> {
    let mut checks = Vec::new();
    let r = stress_acquire(stress);
    checks.push(Check::new(
        "acquire stress",
        r.clean(),
        format!(
            "{} acquires, {} publishes ({} failed CAS), {} non-monotone, {} inconsistent, {} read-after-reclaim, {} reclaimed twice, {} leaked",
            r.acquires, r.publishes, r.failed_publishes, r.non_monotone, r.inconsistent, r.read_after_reclaim, r.reclaimed_twice, r.leaked
        ),
    ));

    let dataset = DatasetSpec::Blobs {
        classes: 4,
        dims: 16,
        per_class: 100,
        spread: 0.5,
        seed: 3,
    };
    for (algo, tp) in [
        (Algo::Leashed, Persistence::Unbounded),
        (Algo::Leashed, Persistence::Bounded(1)),
        (Algo::Leashed, Persistence::Bounded(0)),
        (Algo::Async, Persistence::Unbounded),
        (Algo::Hogwild, Persistence::Unbounded),
    ] {
        let cfg = OptimizerConfig {
            algo,
            threads,
            persistence: tp,
            eta: 0.01,
            batch_size: 4,
            epsilons: vec![1e-9],
            max_updates: Some(5_000),
            time_budget: Duration::from_secs(60),
            monitor_interval: Duration::from_millis(50),
            memory_interval: Duration::from_millis(2),
            ..OptimizerConfig::default()
        };
        let exp = Experiment::new(cfg, Arch::Tiny { hidden: 8 }, dataset.clone());
        let name = exp.run_id.clone();
        let report = match Prepared::new(&exp).and_then(|p| run_prepared(&exp, &p)) {
            Ok(r) => r,
            Err(e) => {
                checks.push(Check::new(name, false, e.to_string()));
                continue;
            }
        };
        checks.push(match check_seq_complete(&report.updates) {
            Ok(()) => Check::new(
                format!("{name}: total order"),
                true,
                format!("{} published", report.published),
            ),
            Err(e) => Check::new(format!("{name}: total order"), false, e),
        });
        if algo != Algo::Leashed {
            continue;
        }
        let v = lock_freedom_violations(&report.updates);
        let failed: u64 = report
            .updates
            .iter()
            .map(|r| u64::from(r.tries) - u64::from(!r.abandoned))
            .sum();
        checks.push(Check::new(
            format!("{name}: lock-freedom witness"),
            v.is_empty(),
            format!("{failed} failed attempts, {} unexplained", v.len()),
        ));
        if tp == Persistence::Bounded(0) {
            let nonzero = report.updates.iter().filter(|r| r.tau_s != 0).count();
            checks.push(Check::new(
                format!("{name}: no scheduling staleness"),
                nonzero == 0,
                format!("{nonzero} updates with tau_s > 0"),
            ));
        }
        let audit = report.reclaim_audit.unwrap_or_default();
        checks.push(Check::new(
            format!("{name}: reclaim exactly once"),
            audit.reclaimed_more_than_once == 0
                && audit.leaked == 0
                && report.read_after_reclaim == 0,
            format!(
                "{audit:?}, {} read-after-reclaim",
                report.read_after_reclaim
            ),
        ));
        let bound = 3 * threads;
        let sampled = report.max_sampled_payloads();
        let honest = report
            .memory
            .iter()
            .all(|s| s.census.allocations - s.census.reclamations == s.census.live_payloads as u64);
        checks.push(Check::new(
            format!("{name}: memory bound"),
            sampled <= bound && honest,
            format!(
                "max sampled {sampled} <= {bound}, peak {}",
                report.census.max_live_payloads
            ),
        ));
    }
    checks
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(seq: u64, tau_s: u64, tries: u32, abandoned: bool) -> UpdateRecord {
        UpdateRecord {
            thread_id: 0,
            seq,
            wall_ns: 0,
            tau_c: 0,
            tau_s,
            tries,
            abandoned,
        }
    }

    #[test]
    fn seq_completeness_detects_gaps_and_duplicates() {
        assert!(check_seq_complete(&[
            rec(2, 0, 1, false),
            rec(1, 0, 1, false),
            rec(0, 0, 1, true)
        ])
        .is_ok());
        assert!(check_seq_complete(&[rec(1, 0, 1, false), rec(3, 0, 1, false)]).is_err());
        assert!(check_seq_complete(&[rec(1, 0, 1, false), rec(1, 0, 1, false)]).is_err());
    }

    #[test]
    fn witness_flags_unexplained_failures() {
        assert!(lock_freedom_violations(&[rec(1, 2, 3, false)]).is_empty());
        assert_eq!(lock_freedom_violations(&[rec(1, 1, 3, false)]).len(), 1);
    }

    #[test]
    fn small_stress_is_clean() {
        let r = stress_acquire(StressConfig {
            readers: 2,
            writers: 2,
            acquires_per_reader: 20_000,
            dim: 8,
        });
        assert!(r.clean(), "{r:?}");
        assert_eq!(r.acquires, 40_000);
    }
}
