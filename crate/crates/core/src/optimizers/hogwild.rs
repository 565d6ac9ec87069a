use std::thread;
use std::time::Instant;

use super::monitor::{run_monitor, Control, Tracker};
use super::{
    assemble, pin_current_thread, setup, theta_hash, GradientWorker, OptimizerConfig,
    OptimizerError, Problem, RunOutcome, UpdateRecord, WorkerLog,
};
use crate::param_vector::{ParameterVector, RacyParams};

/// Lock-free SGD without consistency: reads and updates of the shared
/// parameters race component by component.
///
/// An update's sequence number is claimed with a fetch-and-add before its
/// components are written, so `tau_c` counts the claims that happened since
/// the gradient's source read and `tau_s` is always 0.
pub fn run_hogwild(
    config: &OptimizerConfig,
    problem: Problem<'_>,
) -> Result<RunOutcome, OptimizerError> {
    let (pool, param, f0) = setup(config, &problem)?;
    let shared = RacyParams::new(param);
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
                    let mut scratch = Vec::new();
                    let mut log = WorkerLog::default();
                    let mut since = Instant::now();
                    while !ctl.should_stop() {
                        let t_g = shared
                            .read_into(local_param.theta_mut())
                            .expect("same dimension");
                        let loss = grad_worker
                            .gradient(local_param.theta_exclusive(), local_grad.theta_mut());
                        if !loss.is_finite() {
                            ctl.crash();
                            break;
                        }
                        let t_p = shared
                            .update(local_grad.theta_exclusive(), config.eta)
                            .expect("gradient has the parameter dimension");
                        if config.record_trajectory {
                            shared.copy_into(&mut scratch);
                            log.trajectory.push((t_p, theta_hash(&scratch)));
                        }
                        log.publish(
                            UpdateRecord {
                                thread_id: id as u32,
                                seq: t_p,
                                wall_ns: ctl.elapsed_ns(),
                                tau_c: (t_p - 1).saturating_sub(t_g),
                                tau_s: 0,
                                tries: 1,
                                abandoned: false,
                            },
                            &mut since,
                        );
                        ctl.note_published();
                        if grad_worker.evaluates(t_p) {
                            shared.copy_into(&mut scratch);
                            let loss = grad_worker.evaluate(&scratch);
                            tracker.record(ctl, t_p, loss);
                        }
                    }
                    ctl.worker_done();
                    log
                })
            })
            .collect();
        let memory = run_monitor(&ctl, config, &problem, &tracker, &pool, m, |dst| {
            shared.copy_into(dst)
        });
        let logs: Vec<_> = handles
            .into_iter()
            .map(|h| h.join().expect("worker panicked"))
            .collect();
        (memory, logs)
    });

    let mut param = shared.into_inner();
    let final_theta = param.theta_exclusive().to_vec();
    let report = tracker.finish(&ctl, memory);
    Ok(assemble(&ctl, report, logs, &pool, f0, final_theta, None))
}
