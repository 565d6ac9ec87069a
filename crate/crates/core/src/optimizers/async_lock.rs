use std::sync::Mutex;
use std::thread;
use std::time::Instant;

use super::monitor::{run_monitor, Control, Tracker};
use super::{
    assemble, pin_current_thread, setup, theta_hash, GradientWorker, OptimizerConfig,
    OptimizerError, Problem, RunOutcome, UpdateRecord, WorkerLog,
};
use crate::param_vector::ParameterVector;

/// Asynchronous SGD with one lock around the shared parameters.
///
/// Workers copy the parameters under the lock, compute a gradient on the
/// copy without it, and apply the gradient under the lock again.
pub fn run_async_lock(
    config: &OptimizerConfig,
    problem: Problem<'_>,
) -> Result<RunOutcome, OptimizerError> {
    let (pool, param, f0) = setup(config, &problem)?;
    let shared = Mutex::new(param);
    let ctl = Control::new(config.max_updates);
    let tracker = Tracker::new(config, f0);
    let m = config.threads;

    let (memory, logs) = thread::scope(|s| {
        let handles: Vec<_> = (0..m)
            .map(|id| {
                let (shared, ctl, pool, tracker) = (&shared, &ctl, &pool, &tracker);
                s.spawn(move || {
                    pin_current_thread(config.pin_cores, id);
                    let mut grad_worker = GradientWorker::new(problem, config, id);
                    let mut local_param = ParameterVector::with_pool(pool);
                    let mut local_grad = ParameterVector::with_pool(pool);
                    let mut log = WorkerLog::default();
                    let mut since = Instant::now();
                    while !ctl.should_stop() {
                        let t_g = {
                            let mut p = shared.lock().unwrap_or_else(|e| e.into_inner());
                            let t = p.seq();
                            local_param
                                .copy_from(p.theta_exclusive(), t)
                                .expect("same dimension");
                            t
                        };
                        let loss = grad_worker
                            .gradient(local_param.theta_exclusive(), local_grad.theta_mut());
                        if !loss.is_finite() {
                            ctl.crash();
                            break;
                        }
                        let (t_e, t_p, eval) = {
                            let mut p = shared.lock().unwrap_or_else(|e| e.into_inner());
                            let t_e = p.seq();
                            let t_p = p
                                .update(local_grad.theta_exclusive(), config.eta)
                                .expect("gradient has the parameter dimension");
                            if config.record_trajectory {
                                log.trajectory.push((t_p, theta_hash(p.theta_exclusive())));
                            }
                            let eval = grad_worker
                                .evaluates(t_p)
                                .then(|| grad_worker.evaluate(p.theta_exclusive()));
                            (t_e, t_p, eval)
                        };
                        log.publish(
                            UpdateRecord {
                                thread_id: id as u32,
                                seq: t_p,
                                wall_ns: ctl.elapsed_ns(),
                                tau_c: t_e - t_g,
                                tau_s: t_p - 1 - t_e,
                                tries: 1,
                                abandoned: false,
                            },
                            &mut since,
                        );
                        ctl.note_published();
                        if let Some(loss) = eval {
                            tracker.record(ctl, t_p, loss);
                        }
                    }
                    ctl.worker_done();
                    log
                })
            })
            .collect();
        let memory = run_monitor(&ctl, config, &problem, &tracker, &pool, m, |dst| {
            let mut p = shared.lock().unwrap_or_else(|e| e.into_inner());
            dst.clear();
            let t = p.seq();
            dst.extend_from_slice(p.theta_exclusive());
            t
        });
        let logs: Vec<_> = handles
            .into_iter()
            .map(|h| h.join().expect("worker panicked"))
            .collect();
        (memory, logs)
    });

    let mut param = shared.into_inner().unwrap_or_else(|e| e.into_inner());
    let final_theta = param.theta_exclusive().to_vec();
    let report = tracker.finish(&ctl, memory);
    Ok(assemble(&ctl, report, logs, &pool, f0, final_theta, None))
}
