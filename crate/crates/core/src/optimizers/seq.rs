use std::sync::RwLock;
use std::thread;
use std::time::Instant;

use super::monitor::{run_monitor, Control, Tracker};
use super::{
    assemble, pin_current_thread, setup, theta_hash, GradientWorker, OptimizerConfig,
    OptimizerError, Problem, RunOutcome, UpdateRecord, WorkerLog,
};
use crate::param_vector::ParameterVector;

/// Plain sequential SGD on one worker thread.
///
/// The parameters sit behind a read-write lock only so the monitor can take
/// snapshots; the worker computes gradients under a read lock and applies
/// them under a write lock.
pub fn run_seq(
    config: &OptimizerConfig,
    problem: Problem<'_>,
) -> Result<RunOutcome, OptimizerError> {
    if config.threads != 1 {
        return Err(OptimizerError::Config(format!(
            "sequential SGD runs one thread, got {}",
            config.threads
        )));
    }
    let (pool, param, f0) = setup(config, &problem)?;
    let shared = RwLock::new(param);
    let ctl = Control::new(config.max_updates);
    let tracker = Tracker::new(config, f0);

    let (memory, log) = thread::scope(|s| {
        let worker = s.spawn(|| {
            pin_current_thread(config.pin_cores, 0);
            let mut grad_worker = GradientWorker::new(problem, config, 0);
            let mut local_grad = ParameterVector::with_pool(&pool);
            let mut log = WorkerLog::default();
            let mut since = Instant::now();
            while !ctl.should_stop() {
                let (t_g, loss) = {
                    let p = shared.read().unwrap_or_else(|e| e.into_inner());
                    // SAFETY: writers are excluded by the read lock.
                    let theta = unsafe { p.theta_unchecked() };
                    (p.seq(), grad_worker.gradient(theta, local_grad.theta_mut()))
                };
                if !loss.is_finite() {
                    ctl.crash();
                    break;
                }
                let mut p = shared.write().unwrap_or_else(|e| e.into_inner());
                let seq = p
                    .update(local_grad.theta_exclusive(), config.eta)
                    .expect("gradient has the parameter dimension");
                if config.record_trajectory {
                    log.trajectory.push((seq, theta_hash(p.theta_exclusive())));
                }
                let eval = grad_worker
                    .evaluates(seq)
                    .then(|| grad_worker.evaluate(p.theta_exclusive()));
                drop(p);
                log.publish(
                    UpdateRecord {
                        thread_id: 0,
                        seq,
                        wall_ns: ctl.elapsed_ns(),
                        tau_c: seq - 1 - t_g,
                        tau_s: 0,
                        tries: 1,
                        abandoned: false,
                    },
                    &mut since,
                );
                ctl.note_published();
                if let Some(loss) = eval {
                    tracker.record(&ctl, seq, loss);
                }
            }
            ctl.worker_done();
            log
        });
        let memory = run_monitor(&ctl, config, &problem, &tracker, &pool, 1, |dst| {
            let p = shared.read().unwrap_or_else(|e| e.into_inner());
            dst.clear();
            // SAFETY: writers are excluded by the read lock.
            dst.extend_from_slice(unsafe { p.theta_unchecked() });
            p.seq()
        });
        (memory, worker.join().expect("worker panicked"))
    });

    let mut param = shared.into_inner().unwrap_or_else(|e| e.into_inner());
    let final_theta = param.theta_exclusive().to_vec();
    let report = tracker.finish(&ctl, memory);
    Ok(assemble(
        &ctl,
        report,
        vec![log],
        &pool,
        f0,
        final_theta,
        None,
    ))
}
