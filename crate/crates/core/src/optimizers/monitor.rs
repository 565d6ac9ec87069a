//! Run control shared by workers and the convergence monitor.

use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use super::{EpsilonHit, MemorySample, OptimizerConfig, Problem, ProgressSample, RunStatus};
use crate::nn::Workspace;
use crate::param_vector::PayloadPool;

/// Longest the monitor sleeps before re-checking whether workers finished.
const POLL: Duration = Duration::from_millis(5);

pub(super) struct Control {
    start: Instant,
    stop: AtomicBool,
    crashed: AtomicBool,
    published: AtomicU64,
    workers_done: AtomicUsize,
    max_updates: Option<u64>,
}

impl Control {
    pub(super) fn new(max_updates: Option<u64>) -> Self {
        Control {
            start: Instant::now(),
            stop: AtomicBool::new(false),
            crashed: AtomicBool::new(false),
            published: AtomicU64::new(0),
            workers_done: AtomicUsize::new(0),
            max_updates,
        }
    }

    pub(super) fn elapsed_ns(&self) -> u64 {
        self.start.elapsed().as_nanos() as u64
    }

    pub(super) fn should_stop(&self) -> bool {
        self.stop.load(Ordering::Relaxed)
    }

    pub(super) fn request_stop(&self) {
        self.stop.store(true, Ordering::Relaxed);
    }

    pub(super) fn note_published(&self) {
        let n = self.published.fetch_add(1, Ordering::Relaxed) + 1;
        if self.max_updates.is_some_and(|max| n >= max) {
            self.request_stop();
        }
    }

    pub(super) fn crash(&self) {
        self.crashed.store(true, Ordering::Relaxed);
        self.request_stop();
    }

    pub(super) fn crashed(&self) -> bool {
        self.crashed.load(Ordering::Relaxed)
    }

    pub(super) fn worker_done(&self) {
        self.workers_done.fetch_add(1, Ordering::AcqRel);
    }

    fn all_done(&self, workers: usize) -> bool {
        self.workers_done.load(Ordering::Acquire) >= workers
    }
}

pub(super) struct MonitorReport {
    pub status: RunStatus,
    pub epsilon_hits: Vec<EpsilonHit>,
    pub progress: Vec<ProgressSample>,
    pub memory: Vec<MemorySample>,
}

/// Loss on the evaluation set.
pub(super) fn eval_loss(problem: &Problem<'_>, theta: &[f32], ws: &mut Workspace<f32>) -> f64 {
    problem
        .network
        .loss(theta, problem.eval, ws)
        .expect("shapes checked before the run")
}

struct TrackerState {
    hits: Vec<EpsilonHit>,
    progress: Vec<ProgressSample>,
    converged: bool,
}

/// Collects evaluation samples from the monitor and, in update-count
/// evaluation mode, from workers.
pub(super) struct Tracker {
    f0: f64,
    state: Mutex<TrackerState>,
}

impl Tracker {
    pub(super) fn new(cfg: &OptimizerConfig, f0: f64) -> Self {
        let hits = cfg
            .epsilons
            .iter()
            .map(|&eps| EpsilonHit {
                eps,
                wall_ns: None,
                iters: None,
            })
            .collect();
        Tracker {
            f0,
            state: Mutex::new(TrackerState {
                hits,
                progress: vec![ProgressSample {
                    wall_ns: 0,
                    seq: 0,
                    loss: f0,
                }],
                converged: false,
            }),
        }
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, TrackerState> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Records the evaluation loss of the parameters at sequence number `seq`.
    pub(super) fn record(&self, ctl: &Control, seq: u64, loss: f64) {
        let wall_ns = ctl.elapsed_ns();
        let mut st = self.lock();
        st.progress.push(ProgressSample { wall_ns, seq, loss });
        if !loss.is_finite() {
            drop(st);
            ctl.crash();
            return;
        }
        let f0 = self.f0;
        for h in st.hits.iter_mut() {
            let better = h.iters.is_none_or(|i| seq < i);
            if loss <= h.eps * f0 && better {
                h.wall_ns = Some(wall_ns);
                h.iters = Some(seq);
            }
        }
        if !st.converged && st.hits.iter().all(|h| h.wall_ns.is_some()) {
            st.converged = true;
            drop(st);
            ctl.request_stop();
        }
    }

    fn converged(&self) -> bool {
        self.lock().converged
    }

    fn last_seq(&self) -> u64 {
        self.lock()
            .progress
            .iter()
            .map(|p| p.seq)
            .max()
            .unwrap_or(0)
    }

    pub(super) fn finish(self, ctl: &Control, memory: Vec<MemorySample>) -> MonitorReport {
        let mut st = self.state.into_inner().unwrap_or_else(|e| e.into_inner());
        st.progress.sort_by_key(|p| (p.wall_ns, p.seq));
        let status = if ctl.crashed() {
            RunStatus::Crash
        } else if st.converged {
            RunStatus::Converged
        } else {
            RunStatus::Diverge
        };
        MonitorReport {
            status,
            epsilon_hits: st.hits,
            progress: st.progress,
            memory,
        }
    }
}

/// Samples memory and, unless workers evaluate on an update-count cadence,
/// periodically evaluates a snapshot of the parameters. Returns once the
/// targets are met, the budget runs out, or every worker has exited.
///
/// `snapshot` copies the current parameters into its argument and returns
/// the sequence number they correspond to.
pub(super) fn run_monitor(
    ctl: &Control,
    cfg: &OptimizerConfig,
    problem: &Problem<'_>,
    tracker: &Tracker,
    pool: &PayloadPool,
    workers: usize,
    mut snapshot: impl FnMut(&mut Vec<f32>) -> u64,
) -> Vec<MemorySample> {
    let mut memory = vec![MemorySample {
        wall_ns: 0,
        census: pool.census(),
    }];
    let mut ws = Workspace::new();
    let mut theta = Vec::with_capacity(problem.network.dim());

    let periodic = cfg.eval_every.is_none();
    let budget = cfg.time_budget.as_nanos() as u64;
    let eval_every = cfg.monitor_interval.as_nanos() as u64;
    let mem_every = cfg.memory_interval.as_nanos().max(1) as u64;
    let mut next_eval = if periodic { eval_every } else { u64::MAX };
    let mut next_mem = if cfg.memory_interval.is_zero() {
        u64::MAX
    } else {
        mem_every
    };

    loop {
        let now = ctl.elapsed_ns();
        if now >= next_mem {
            memory.push(MemorySample {
                wall_ns: now,
                census: pool.census(),
            });
            while next_mem <= now {
                next_mem += mem_every;
            }
        }
        let finished = ctl.all_done(workers) || ctl.should_stop();
        let out_of_time = now >= budget;
        if finished || out_of_time {
            ctl.request_stop();
            // Workers may still be finishing their last update; the final
            // evaluation happens after they exit.
            while !ctl.all_done(workers) {
                thread::sleep(POLL / 5);
            }
            if !tracker.converged() && !ctl.crashed() {
                let seq = snapshot(&mut theta);
                if seq != tracker.last_seq() {
                    tracker.record(ctl, seq, eval_loss(problem, &theta, &mut ws));
                }
            }
            break;
        }
        if now >= next_eval {
            let seq = snapshot(&mut theta);
            tracker.record(ctl, seq, eval_loss(problem, &theta, &mut ws));
            while next_eval <= now {
                next_eval += eval_every;
            }
            continue;
        }
        let nap = Duration::from_nanos(next_eval.min(next_mem).saturating_sub(now)).min(POLL);
        thread::sleep(nap);
    }

    memory
}
