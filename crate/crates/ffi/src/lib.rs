//! C ABI over the leashed SGD engine.
//!
//! Objects are opaque handles created by `*_new` functions and released by
//! the matching `*_free`. Every fallible function returns a
//! [`LeashedStatus`]; on failure, [`leashed_last_error`] describes the cause
//! for the calling thread. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::sync::Arc;
use std::time::Duration;

use leashed::dynamics::{
    fixed_point, n_t_recurrence, simulate_events, DynamicsParams, ServiceDistribution,
};
use leashed::harness::{
    run_experiment, Arch, DatasetSpec, Experiment, HarnessError, Prepared, RunReport,
};
use leashed::optimizers::{Algo, OptimizerConfig, Persistence, RunStatus};
use leashed::param_vector::{ParameterVector, PayloadPool, PublishOutcome, VersionSlot};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LeashedStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Data = 4,
    /// A caller-provided buffer has the wrong length.
    BufferSize = 5,
    /// The run could not be carried out.
    RunFailed = 6,
    Panic = 7,
}

/// Outcome of a finished training run.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LeashedRunStatus {
    Converged = 0,
    Diverge = 2,
    Crash = 3,
}

/// One update as recorded by a run. `seq` is 0 for abandoned gradients.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LeashedUpdate {
    pub thread_id: u32,
    pub tries: u32,
    pub seq: u64,
    pub wall_ns: u64,
    pub tau_c: u64,
    pub tau_s: u64,
    pub abandoned: bool,
}

/// Payload allocation counters.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LeashedCensus {
    pub allocations: u64,
    pub reclamations: u64,
    pub live_payloads: usize,
    pub max_live_payloads: usize,
}

/// Training configuration.
pub struct LeashedExperiment(Experiment);

/// Result of one training run.
pub struct LeashedReport(RunReport);

/// Shared, lock-free published parameter vector. All functions taking a
/// `const LeashedSlot *` may be called concurrently.
pub struct LeashedSlot {
    slot: VersionSlot,
    pool: Arc<PayloadPool>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

fn fail(status: LeashedStatus, msg: impl Into<String>) -> LeashedStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> LeashedStatus) -> LeashedStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(LeashedStatus::Panic, msg)
        }
    }
}

fn harness_status(e: &HarnessError) -> LeashedStatus {
    match e {
        HarnessError::Io { .. } | HarnessError::Csv { .. } | HarnessError::Schema { .. } => {
            LeashedStatus::Io
        }
        HarnessError::Data(_) => LeashedStatus::Data,
        HarnessError::Config(_) => LeashedStatus::InvalidArgument,
        _ => LeashedStatus::RunFailed,
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, LeashedStatus> {
    if p.is_null() {
        return Err(fail(LeashedStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        fail(
            LeashedStatus::InvalidArgument,
            format!("{what} is not UTF-8"),
        )
    })
}

fn parse<T: std::str::FromStr>(s: &str, what: &str) -> Result<T, LeashedStatus>
where
    T::Err: std::fmt::Display,
{
    s.parse()
        .map_err(|e| fail(LeashedStatus::InvalidArgument, format!("{what}: {e}")))
}

macro_rules! tri {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(s) => return s,
        }
    };
}

macro_rules! deref {
    ($p:expr) => {
        match $p.as_ref() {
            Some(v) => v,
            None => {
                return fail(
                    LeashedStatus::NullPointer,
                    concat!(stringify!($p), " is null"),
                )
            }
        }
    };
}

macro_rules! deref_mut {
    ($p:expr) => {
        match $p.as_mut() {
            Some(v) => v,
            None => {
                return fail(
                    LeashedStatus::NullPointer,
                    concat!(stringify!($p), " is null"),
                )
            }
        }
    };
}

/// Message describing the last failure on this thread. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn leashed_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn leashed_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Creates an experiment. `algo` is one of `seq`, `async`, `hogwild`,
/// `leashed`; `arch` is `mlp`, `cnn`, `tiny` or `tiny:HIDDEN`; `dataset` is
/// `mnist:DIR` or `blobs[:key=value,...]`. Other settings take their
/// defaults and can be changed with the setters.
///
/// # Safety
/// String arguments must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn leashed_experiment_new(
    algo: *const c_char,
    threads: usize,
    arch: *const c_char,
    dataset: *const c_char,
    out: *mut *mut LeashedExperiment,
) -> LeashedStatus {
    guard(|| {
        let out = deref_mut!(out);
        *out = ptr::null_mut();
        let algo: Algo = tri!(parse(tri!(str_arg(algo, "algo")), "algo"));
        let arch: Arch = tri!(parse(tri!(str_arg(arch, "arch")), "arch"));
        let dataset: DatasetSpec = tri!(parse(tri!(str_arg(dataset, "dataset")), "dataset"));
        let cfg = OptimizerConfig {
            algo,
            threads,
            ..OptimizerConfig::default()
        };
        if let Err(e) = cfg.validate() {
            return fail(LeashedStatus::InvalidArgument, e.to_string());
        }
        *out = Box::into_raw(Box::new(LeashedExperiment(Experiment::new(
            cfg, arch, dataset,
        ))));
        LeashedStatus::Ok
    })
}

/// # Safety
/// `exp` must come from [`leashed_experiment_new`] or be null.
#[no_mangle]
pub unsafe extern "C" fn leashed_experiment_free(exp: *mut LeashedExperiment) {
    if !exp.is_null() {
        drop(Box::from_raw(exp));
    }
}

fn with_config(
    exp: *mut LeashedExperiment,
    f: impl FnOnce(&mut OptimizerConfig) -> Result<(), String>,
) -> LeashedStatus {
    guard(|| {
        let exp = unsafe { deref_mut!(exp) };
        let mut cfg = exp.0.optimizer.clone();
        if let Err(e) = f(&mut cfg).and_then(|()| cfg.validate().map_err(|e| e.to_string())) {
            return fail(LeashedStatus::InvalidArgument, e);
        }
        exp.0.optimizer = cfg;
        exp.0.run_id = exp.0.default_run_id();
        LeashedStatus::Ok
    })
}

/// # Safety
/// `exp` must be a live experiment handle.
#[no_mangle]
pub unsafe extern "C" fn leashed_experiment_set_step_size(
    exp: *mut LeashedExperiment,
    eta: f32,
) -> LeashedStatus {
    with_config(exp, |c| {
        c.eta = eta;
        Ok(())
    })
}

/// # Safety
/// `exp` must be a live experiment handle.
#[no_mangle]
pub unsafe extern "C" fn leashed_experiment_set_batch_size(
    exp: *mut LeashedExperiment,
    batch: usize,
) -> LeashedStatus {
    with_config(exp, |c| {
        c.batch_size = batch;
        Ok(())
    })
}

/// Sets the persistence bound; a negative value means unbounded.
///
/// # Safety
/// `exp` must be a live experiment handle.
#[no_mangle]
pub unsafe extern "C" fn leashed_experiment_set_persistence(
    exp: *mut LeashedExperiment,
    tp: i64,
) -> LeashedStatus {
    with_config(exp, |c| {
        c.persistence = if tp < 0 {
            Persistence::Unbounded
        } else {
            Persistence::Bounded(
                u32::try_from(tp).map_err(|_| format!("persistence {tp} too large"))?,
            )
        };
        Ok(())
    })
}

/// # Safety
/// `exp` must be a live experiment handle.
#[no_mangle]
pub unsafe extern "C" fn leashed_experiment_set_seed(
    exp: *mut LeashedExperiment,
    seed: u64,
) -> LeashedStatus {
    with_config(exp, |c| {
        c.seed = seed;
        Ok(())
    })
}

/// # Safety
/// `exp` must be a live experiment handle.
#[no_mangle]
pub unsafe extern "C" fn leashed_experiment_set_time_budget(
    exp: *mut LeashedExperiment,
    seconds: f64,
) -> LeashedStatus {
    with_config(exp, |c| {
        c.time_budget =
            Duration::try_from_secs_f64(seconds).map_err(|e| format!("time budget: {e}"))?;
        Ok(())
    })
}

/// Stops after `n` published updates; 0 removes the limit.
///
/// # Safety
/// `exp` must be a live experiment handle.
#[no_mangle]
pub unsafe extern "C" fn leashed_experiment_set_max_updates(
    exp: *mut LeashedExperiment,
    n: u64,
) -> LeashedStatus {
    with_config(exp, |c| {
        c.max_updates = (n > 0).then_some(n);
        Ok(())
    })
}

/// Evaluates every `k`-th published version instead of on a timer; 0
/// restores timer-based evaluation.
///
/// # Safety
/// `exp` must be a live experiment handle.
#[no_mangle]
pub unsafe extern "C" fn leashed_experiment_set_eval_every(
    exp: *mut LeashedExperiment,
    k: u64,
) -> LeashedStatus {
    with_config(exp, |c| {
        c.eval_every = (k > 0).then_some(k);
        Ok(())
    })
}

/// Sets the loss targets, as fractions of the initial loss.
///
/// # Safety
/// `exp` must be a live experiment handle and `eps` must point to `n`
/// readable doubles.
#[no_mangle]
pub unsafe extern "C" fn leashed_experiment_set_epsilons(
    exp: *mut LeashedExperiment,
    eps: *const f64,
    n: usize,
) -> LeashedStatus {
    if eps.is_null() {
        return fail(LeashedStatus::NullPointer, "eps is null");
    }
    let eps = std::slice::from_raw_parts(eps, n).to_vec();
    with_config(exp, |c| {
        c.epsilons = eps;
        Ok(())
    })
}

/// Number of model parameters for this experiment. Loads the dataset.
///
/// # Safety
/// `exp` must be a live experiment handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn leashed_experiment_param_count(
    exp: *const LeashedExperiment,
    out: *mut usize,
) -> LeashedStatus {
    guard(|| {
        let exp = deref!(exp);
        let out = deref_mut!(out);
        match Prepared::new(&exp.0) {
            Ok(p) => {
                *out = p.network.dim();
                LeashedStatus::Ok
            }
            Err(e) => fail(harness_status(&e), e.to_string()),
        }
    })
}

/// Trains to completion. When `out_dir` is not null the run's CSV tables
/// are written there.
///
/// # Safety
/// `exp` must be a live experiment handle, `out_dir` null or
/// NUL-terminated, and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn leashed_run(
    exp: *const LeashedExperiment,
    out_dir: *const c_char,
    out: *mut *mut LeashedReport,
) -> LeashedStatus {
    guard(|| {
        let exp = deref!(exp);
        let out = deref_mut!(out);
        *out = ptr::null_mut();
        let dir = if out_dir.is_null() {
            None
        } else {
            Some(Path::new(tri!(str_arg(out_dir, "out_dir"))))
        };
        match run_experiment(&exp.0, dir) {
            Ok(r) => {
                *out = Box::into_raw(Box::new(LeashedReport(r)));
                LeashedStatus::Ok
            }
            Err(e) => fail(harness_status(&e), e.to_string()),
        }
    })
}

/// # Safety
/// `report` must come from [`leashed_run`] or be null.
#[no_mangle]
pub unsafe extern "C" fn leashed_report_free(report: *mut LeashedReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// # Safety
/// `report` must be a live report handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn leashed_report_status(
    report: *const LeashedReport,
    out: *mut LeashedRunStatus,
) -> LeashedStatus {
    guard(|| {
        *deref_mut!(out) = match deref!(report).0.status {
            RunStatus::Converged => LeashedRunStatus::Converged,
            RunStatus::Diverge => LeashedRunStatus::Diverge,
            RunStatus::Crash => LeashedRunStatus::Crash,
        };
        LeashedStatus::Ok
    })
}

/// Headline numbers of a run. Any output pointer may be null.
/// `mean_iter_ns` is 0 when nothing was published.
///
/// # Safety
/// `report` must be a live report handle; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn leashed_report_summary(
    report: *const LeashedReport,
    f0: *mut f64,
    final_loss: *mut f64,
    published: *mut u64,
    abandoned: *mut u64,
    wall_ns: *mut u64,
    mean_iter_ns: *mut u64,
) -> LeashedStatus {
    guard(|| {
        let r = &deref!(report).0;
        let last = r.progress.last().map_or(r.f0, |p| p.loss);
        for (p, v) in [(f0, r.f0), (final_loss, last)] {
            if let Some(p) = p.as_mut() {
                *p = v;
            }
        }
        for (p, v) in [
            (published, r.published),
            (abandoned, r.abandoned),
            (wall_ns, r.wall_ns),
            (mean_iter_ns, r.mean_iter_ns.unwrap_or(0)),
        ] {
            if let Some(p) = p.as_mut() {
                *p = v;
            }
        }
        LeashedStatus::Ok
    })
}

/// Time and published-update count at which target `index` was first
/// reached. `reached` is false when it never was.
///
/// # Safety
/// `report` must be a live report handle; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn leashed_report_epsilon(
    report: *const LeashedReport,
    index: usize,
    reached: *mut bool,
    wall_ns: *mut u64,
    iters: *mut u64,
) -> LeashedStatus {
    guard(|| {
        let r = &deref!(report).0;
        let (reached, wall_ns, iters) =
            (deref_mut!(reached), deref_mut!(wall_ns), deref_mut!(iters));
        let Some(h) = r.epsilon_hits.get(index) else {
            return fail(
                LeashedStatus::InvalidArgument,
                format!(
                    "target {index} out of range ({} targets)",
                    r.epsilon_hits.len()
                ),
            );
        };
        *reached = h.wall_ns.is_some();
        *wall_ns = h.wall_ns.unwrap_or(0);
        *iters = h.iters.unwrap_or(0);
        LeashedStatus::Ok
    })
}

/// Copies the update log into `buf`. Call with `buf` null to learn the
/// length through `len`; otherwise `*len` must equal the log length.
///
/// # Safety
/// `report` must be a live report handle, `len` writable, and `buf` null or
/// valid for `*len` writes.
#[no_mangle]
pub unsafe extern "C" fn leashed_report_updates(
    report: *const LeashedReport,
    buf: *mut LeashedUpdate,
    len: *mut usize,
) -> LeashedStatus {
    guard(|| {
        let r = &deref!(report).0;
        let len = deref_mut!(len);
        let rows: Vec<LeashedUpdate> = r
            .updates
            .iter()
            .map(|u| LeashedUpdate {
                thread_id: u.thread_id,
                tries: u.tries,
                seq: u.seq,
                wall_ns: u.wall_ns,
                tau_c: u.tau_c,
                tau_s: u.tau_s,
                abandoned: u.abandoned,
            })
            .collect();
        copy_out(&rows, buf, len)
    })
}

/// Copies the final parameters into `buf`, with the same length protocol as
/// [`leashed_report_updates`].
///
/// # Safety
/// As for [`leashed_report_updates`].
#[no_mangle]
pub unsafe extern "C" fn leashed_report_final_theta(
    report: *const LeashedReport,
    buf: *mut f32,
    len: *mut usize,
) -> LeashedStatus {
    guard(|| {
        let r = &deref!(report).0;
        copy_out(&r.final_theta, buf, deref_mut!(len))
    })
}

/// Peak payload census of the run.
///
/// # Safety
/// `report` must be a live report handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn leashed_report_census(
    report: *const LeashedReport,
    out: *mut LeashedCensus,
) -> LeashedStatus {
    guard(|| {
        let c = deref!(report).0.census;
        *deref_mut!(out) = LeashedCensus {
            allocations: c.allocations,
            reclamations: c.reclamations,
            live_payloads: c.live_payloads,
            max_live_payloads: c.max_live_payloads,
        };
        LeashedStatus::Ok
    })
}

unsafe fn copy_out<T: Copy>(src: &[T], buf: *mut T, len: &mut usize) -> LeashedStatus {
    if buf.is_null() {
        *len = src.len();
        return LeashedStatus::Ok;
    }
    if *len != src.len() {
        let want = src.len();
        let got = *len;
        *len = want;
        return fail(
            LeashedStatus::BufferSize,
            format!("buffer holds {got} elements, need {want}"),
        );
    }
    ptr::copy_nonoverlapping(src.as_ptr(), buf, src.len());
    LeashedStatus::Ok
}

/// Creates a published parameter vector of `dim` components, initialised
/// with seeded random values, at sequence number 0.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn leashed_slot_new(
    dim: usize,
    seed: u64,
    out: *mut *mut LeashedSlot,
) -> LeashedStatus {
    guard(|| {
        let out = deref_mut!(out);
        *out = ptr::null_mut();
        let pool = match PayloadPool::new(dim) {
            Ok(p) => p,
            Err(e) => return fail(LeashedStatus::InvalidArgument, e.to_string()),
        };
        let mut initial = ParameterVector::with_pool(&pool);
        initial.rand_init(seed);
        *out = Box::into_raw(Box::new(LeashedSlot {
            slot: VersionSlot::new(initial),
            pool,
        }));
        LeashedStatus::Ok
    })
}

/// # Safety
/// `slot` must come from [`leashed_slot_new`] or be null, and no other
/// thread may be using it.
#[no_mangle]
pub unsafe extern "C" fn leashed_slot_free(slot: *mut LeashedSlot) {
    if !slot.is_null() {
        drop(Box::from_raw(slot));
    }
}

/// Copies the latest version into `buf` and stores its sequence number in
/// `seq`. Never blocks.
///
/// # Safety
/// `slot` must be live, `buf` valid for `len` writes, `seq` writable.
#[no_mangle]
pub unsafe extern "C" fn leashed_slot_read(
    slot: *const LeashedSlot,
    buf: *mut f32,
    len: usize,
    seq: *mut u64,
) -> LeashedStatus {
    guard(|| {
        let s = deref!(slot);
        let seq = deref_mut!(seq);
        if buf.is_null() {
            return fail(LeashedStatus::NullPointer, "buf is null");
        }
        if len != s.pool.len() {
            return fail(
                LeashedStatus::BufferSize,
                format!("buffer holds {len} elements, need {}", s.pool.len()),
            );
        }
        let g = s.slot.acquire_latest();
        ptr::copy_nonoverlapping(g.theta().as_ptr(), buf, len);
        *seq = g.seq();
        LeashedStatus::Ok
    })
}

/// Publishes `theta` as the successor of version `expected_seq`, if that is
/// still the latest version. `published` reports the outcome; on success
/// the new version has sequence number `expected_seq + 1`.
///
/// # Safety
/// `slot` must be live, `theta` valid for `len` reads, `published` writable.
#[no_mangle]
pub unsafe extern "C" fn leashed_slot_try_publish(
    slot: *const LeashedSlot,
    expected_seq: u64,
    theta: *const f32,
    len: usize,
    published: *mut bool,
) -> LeashedStatus {
    guard(|| {
        let s = deref!(slot);
        let published = deref_mut!(published);
        if theta.is_null() {
            return fail(LeashedStatus::NullPointer, "theta is null");
        }
        if len != s.pool.len() {
            return fail(
                LeashedStatus::BufferSize,
                format!("theta has {len} elements, need {}", s.pool.len()),
            );
        }
        *published = false;
        let latest = s.slot.acquire_latest();
        if latest.seq() != expected_seq {
            return LeashedStatus::Ok;
        }
        let expected = latest.id();
        drop(latest);
        let mut candidate = Box::new(ParameterVector::with_pool_uninit(&s.pool));
        if let Err(e) =
            candidate.copy_from(std::slice::from_raw_parts(theta, len), expected_seq + 1)
        {
            return fail(LeashedStatus::InvalidArgument, e.to_string());
        }
        match s.slot.try_publish(expected, candidate) {
            PublishOutcome::Published { .. } => *published = true,
            PublishOutcome::Rejected(mut c) => {
                c.discard();
            }
        }
        LeashedStatus::Ok
    })
}

/// Payload census of the slot.
///
/// # Safety
/// `slot` must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn leashed_slot_census(
    slot: *const LeashedSlot,
    out: *mut LeashedCensus,
) -> LeashedStatus {
    guard(|| {
        let c = deref!(slot).pool.census();
        *deref_mut!(out) = LeashedCensus {
            allocations: c.allocations,
            reclamations: c.reclamations,
            live_payloads: c.live_payloads,
            max_live_payloads: c.max_live_payloads,
        };
        LeashedStatus::Ok
    })
}

fn dynamics_params(
    m: f64,
    t_c: f64,
    t_u: f64,
    gamma: f64,
    n0: f64,
    steps: usize,
) -> Result<DynamicsParams, LeashedStatus> {
    DynamicsParams::new(m, t_c, t_u, gamma, n0, steps)
        .map_err(|e| fail(LeashedStatus::InvalidArgument, e.to_string()))
}

/// Writes `n_0 .. n_steps` of the retry-loop occupancy recurrence into
/// `out`, which must hold `steps + 1` values.
///
/// # Safety
/// `out` must be valid for `out_len` writes.
#[no_mangle]
pub unsafe extern "C" fn leashed_dynamics_recurrence(
    m: f64,
    t_c: f64,
    t_u: f64,
    gamma: f64,
    n0: f64,
    steps: usize,
    out: *mut f64,
    out_len: usize,
) -> LeashedStatus {
    guard(|| {
        let p = tri!(dynamics_params(m, t_c, t_u, gamma, n0, steps));
        if out.is_null() {
            return fail(LeashedStatus::NullPointer, "out is null");
        }
        let mut len = out_len;
        copy_out(&n_t_recurrence(&p), out, &mut len)
    })
}

/// Equilibrium occupancy of the recurrence.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn leashed_dynamics_fixed_point(
    m: f64,
    t_c: f64,
    t_u: f64,
    gamma: f64,
    out: *mut f64,
) -> LeashedStatus {
    guard(|| {
        let p = tri!(dynamics_params(m, t_c, t_u, gamma, 0.0, 0));
        *deref_mut!(out) = fixed_point(&p);
        LeashedStatus::Ok
    })
}

/// Time-averaged occupancy of the stochastic model over `events` phase
/// transitions, with exponential or deterministic phase durations.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn leashed_dynamics_simulate(
    m: f64,
    t_c: f64,
    t_u: f64,
    gamma: f64,
    seed: u64,
    exponential: bool,
    events: usize,
    out: *mut f64,
) -> LeashedStatus {
    guard(|| {
        let p = tri!(dynamics_params(m, t_c, t_u, gamma, 0.0, 0));
        let out = deref_mut!(out);
        let dist = if exponential {
            ServiceDistribution::Exponential
        } else {
            ServiceDistribution::Deterministic
        };
        match simulate_events(&p, seed, dist, events) {
            Ok(s) => {
                *out = s.time_average;
                LeashedStatus::Ok
            }
            Err(e) => fail(LeashedStatus::InvalidArgument, e.to_string()),
        }
    })
}
