use std::thread;
use std::time::Instant;

use super::monitor::{run_monitor, Control, Tracker};
use super::{
    assemble, pin_current_thread, setup, theta_hash, GradientWorker, OptimizerConfig,
    OptimizerError, Problem, ReclaimAudit, RunOutcome, UpdateRecord, WorkerLog,
};
use crate::param_vector::{ParameterVector, PublishOutcome, VersionSlot};

/// Lock-free consistent SGD.
///
/// Workers compute a gradient from a validated read of the latest version,
/// then repeatedly build a candidate (copy of the latest version plus the
/// update) and try to install it with a single compare-and-swap. After more
/// than `persistence` failed attempts the gradient is dropped. Replaced
/// versions are recycled once their last reader leaves.
pub fn run_leashed(
    config: &OptimizerConfig,
    problem: Problem<'_>,
) -> Result<RunOutcome, OptimizerError> {
    let (pool, param, f0) = setup(config, &problem)?;
    let mut slot = VersionSlot::new(param);
    let ctl = Control::new(config.max_updates);
    let tracker = Tracker::new(config, f0);
    let m = config.threads;

    let (memory, logs) = thread::scope(|s| {
        let handles: Vec<_> = (0..m)
            .map(|id| {
                let (slot, ctl, pool, tracker) = (&slot, &ctl, &pool, &tracker);
                s.spawn(move || {
                    pin_current_thread(config.pin_cores, id);
                    let mut grad_worker = GradientWorker::new(problem, config, id);
                    let mut local_grad = ParameterVector::with_pool(pool);
                    let mut log = WorkerLog::default();
                    let mut since = Instant::now();
                    while !ctl.should_stop() {
                        let (t_g, loss) = {
                            let latest = slot.acquire_latest();
                            let loss = grad_worker.gradient(latest.theta(), local_grad.theta_mut());
                            (latest.seq(), loss)
                        };
                        if !loss.is_finite() {
                            ctl.crash();
                            break;
                        }

                        let mut candidate = Box::new(ParameterVector::with_pool_uninit(pool));
                        let mut tries = 0u32;
                        let mut t_e = None;
                        loop {
                            let latest = slot.acquire_latest();
                            let t = latest.seq();
                            let t_e = *t_e.get_or_insert(t);
                            candidate
                                .copy_from(latest.theta(), t)
                                .expect("same dimension");
                            let expected = latest.id();
                            drop(latest);
                            candidate
                                .update(local_grad.theta_exclusive(), config.eta)
                                .expect("gradient has the parameter dimension");
                            let hash = config
                                .record_trajectory
                                .then(|| theta_hash(candidate.theta_exclusive()));
                            let eval = grad_worker
                                .evaluates(t + 1)
                                .then(|| grad_worker.evaluate(candidate.theta_exclusive()));
                            tries += 1;
                            match slot.try_publish(expected, candidate) {
                                PublishOutcome::Published { seq, .. } => {
                                    if let Some(h) = hash {
                                        log.trajectory.push((seq, h));
                                    }
                                    log.publish(
                                        UpdateRecord {
                                            thread_id: id as u32,
                                            seq,
                                            wall_ns: ctl.elapsed_ns(),
                                            tau_c: t_e - t_g,
                                            tau_s: seq - 1 - t_e,
                                            tries,
                                            abandoned: false,
                                        },
                                        &mut since,
                                    );
                                    ctl.note_published();
                                    if let Some(loss) = eval {
                                        tracker.record(ctl, seq, loss);
                                    }
                                    break;
                                }
                                PublishOutcome::Rejected(back) => {
                                    candidate = back;
                                    if config.persistence.exceeded(tries) {
                                        candidate.discard();
                                        log.abandon(UpdateRecord {
                                            thread_id: id as u32,
                                            seq: 0,
                                            wall_ns: ctl.elapsed_ns(),
                                            tau_c: t_e - t_g,
                                            tau_s: t - t_e,
                                            tries,
                                            abandoned: true,
                                        });
                                        break;
                                    }
                                }
                            }
                        }
                    }
                    ctl.worker_done();
                    log
                })
            })
            .collect();
        let memory = run_monitor(&ctl, config, &problem, &tracker, &pool, m, |dst| {
            slot.snapshot_into(dst)
        });
        let logs: Vec<_> = handles
            .into_iter()
            .map(|h| h.join().expect("worker panicked"))
            .collect();
        (memory, logs)
    });

    let mut final_theta = Vec::new();
    slot.snapshot_into(&mut final_theta);
    let mut audit = ReclaimAudit::default();
    slot.for_each_version(|pv| {
        audit.versions += 1;
        match pv.reclaim_count() {
            0 if pv.is_stale() => audit.leaked += 1,
            0 => {}
            1 => audit.reclaimed_once += 1,
            _ => audit.reclaimed_more_than_once += 1,
        }
    });
    let report = tracker.finish(&ctl, memory);
    Ok(assemble(
        &ctl,
        report,
        logs,
        &pool,
        f0,
        final_theta,
        Some(audit),
    ))
}
