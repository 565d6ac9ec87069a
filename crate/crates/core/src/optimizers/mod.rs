//! SGD training loops: sequential, lock-based AsyncSGD, Hogwild! and
//! Leashed-SGD.
//!
//! Every loop spawns its workers plus one convergence monitor inside a
//! thread scope, records one [`UpdateRecord`] per publication attempt that
//! left the retry loop, and returns a [`RunOutcome`].
//!
//! Staleness is split into `tau_c` (publications that happened while the
//! gradient was being computed) and `tau_s` (publications that won the race
//! while this update was trying to publish). With `t_g` the sequence number
//! the gradient was computed from, `t_e` the latest sequence number when the
//! publish phase started and `t_p` the sequence number assigned to the
//! update: `tau_c = t_e - t_g` and `tau_s = t_p - 1 - t_e`.

mod async_lock;
mod hogwild;
mod leashed;
mod monitor;
mod seq;

use std::collections::hash_map::DefaultHasher;
use std::fmt;
use std::hash::Hasher;
use std::str::FromStr;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::data::{sample_batch_into, DataError, Dataset};
use crate::nn::{Batch, Network, NnError, Workspace};
use crate::param_vector::{CensusSnapshot, ParamError, ParameterVector, PayloadPool};
use monitor::Control;

pub use async_lock::run_async_lock;
pub use hogwild::run_hogwild;
pub use leashed::run_leashed;
pub use seq::run_seq;

#[derive(Debug, thiserror::Error)]
pub enum OptimizerError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Network(#[from] NnError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Param(#[from] ParamError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algo {
    Seq,
    Async,
    Hogwild,
    Leashed,
}

impl fmt::Display for Algo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algo::Seq => "seq",
            Algo::Async => "async",
            Algo::Hogwild => "hogwild",
            Algo::Leashed => "leashed",
        })
    }
}

impl FromStr for Algo {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "seq" => Ok(Algo::Seq),
            "async" => Ok(Algo::Async),
            "hogwild" | "hog" => Ok(Algo::Hogwild),
            "leashed" | "lsh" => Ok(Algo::Leashed),
            other => Err(format!("unknown algorithm {other:?}")),
        }
    }
}

/// Maximum number of failed publication attempts before a Leashed-SGD
/// worker drops its gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Persistence {
    Bounded(u32),
    Unbounded,
}

impl Persistence {
    /// Whether a worker that has failed `failures` times must give up.
    pub fn exceeded(self, failures: u32) -> bool {
        match self {
            Persistence::Bounded(tp) => failures > tp,
            Persistence::Unbounded => false,
        }
    }
}

impl fmt::Display for Persistence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Persistence::Bounded(tp) => write!(f, "{tp}"),
            Persistence::Unbounded => f.write_str("inf"),
        }
    }
}

impl FromStr for Persistence {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "inf" | "infinity" | "unbounded" => Ok(Persistence::Unbounded),
            n => n.parse().map(Persistence::Bounded).map_err(|_| {
                format!("persistence must be a non-negative integer or inf, got {s:?}")
            }),
        }
    }
}

impl Serialize for Persistence {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Persistence {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub algo: Algo,
    pub threads: usize,
    pub eta: f32,
    /// Only used by Leashed-SGD.
    pub persistence: Persistence,
    pub batch_size: usize,
    pub seed: u64,
    pub time_budget: Duration,
    /// Convergence targets as fractions of the initial loss.
    pub epsilons: Vec<f64>,
    /// Stop once this many updates have been published.
    pub max_updates: Option<u64>,
    pub monitor_interval: Duration,
    pub memory_interval: Duration,
    pub pin_cores: bool,
    /// Record a hash of the parameters after every publication.
    pub record_trajectory: bool,
    /// Evaluate every K-th published version from the publishing thread
    /// instead of sampling on a timer. Makes iteration counts to each target
    /// exact.
    pub eval_every: Option<u64>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            algo: Algo::Leashed,
            threads: 1,
            eta: 0.005,
            persistence: Persistence::Unbounded,
            batch_size: 32,
            seed: 0,
            time_budget: Duration::from_secs(120),
            epsilons: vec![0.5],
            max_updates: None,
            monitor_interval: Duration::from_millis(250),
            memory_interval: Duration::from_millis(50),
            pin_cores: false,
            record_trajectory: false,
            eval_every: None,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<(), OptimizerError> {
        let err = |m: String| Err(OptimizerError::Config(m));
        if self.threads == 0 {
            return err("thread count must be at least 1".into());
        }
        if self.algo == Algo::Seq && self.threads != 1 {
            return err(format!(
                "sequential SGD runs one thread, got {}",
                self.threads
            ));
        }
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return err(format!("step size must be positive, got {}", self.eta));
        }
        if self.batch_size == 0 {
            return err("batch size must be at least 1".into());
        }
        if self.epsilons.is_empty() {
            return err("at least one epsilon is required".into());
        }
        if let Some(e) = self.epsilons.iter().find(|&&e| !(e > 0.0 && e <= 1.0)) {
            return err(format!("epsilon must lie in (0, 1], got {e}"));
        }
        if self.eval_every == Some(0) {
            return err("evaluation cadence must be at least 1 update".into());
        }
        if self.monitor_interval.is_zero() {
            return err("monitor interval must be positive".into());
        }
        Ok(())
    }

    /// The most precise requested target.
    pub fn smallest_epsilon(&self) -> f64 {
        self.epsilons.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Telemetry for one update that left the publish phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpdateRecord {
    pub thread_id: u32,
    /// Sequence number assigned to the update; 0 when abandoned.
    pub seq: u64,
    pub wall_ns: u64,
    pub tau_c: u64,
    pub tau_s: u64,
    /// Publication attempts (always 1 outside Leashed-SGD).
    pub tries: u32,
    pub abandoned: bool,
}

impl UpdateRecord {
    pub fn tau(&self) -> u64 {
        self.tau_c + self.tau_s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RunStatus {
    Converged,
    Diverge,
    Crash,
}

impl fmt::Display for RunStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RunStatus::Converged => "Converged",
            RunStatus::Diverge => "Diverge",
            RunStatus::Crash => "Crash",
        })
    }
}

/// When (if ever) the monitor first saw the loss below `eps * f0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsilonHit {
    pub eps: f64,
    pub wall_ns: Option<u64>,
    pub iters: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProgressSample {
    pub wall_ns: u64,
    pub seq: u64,
    pub loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemorySample {
    pub wall_ns: u64,
    pub census: CensusSnapshot,
}

/// Per-instance reclamation audit of the versions a Leashed-SGD run published.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ReclaimAudit {
    pub versions: u64,
    pub reclaimed_once: u64,
    pub reclaimed_more_than_once: u64,
    /// Stale versions whose payload was never reclaimed.
    pub leaked: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub status: RunStatus,
    /// Loss on the evaluation set at initialization.
    pub f0: f64,
    pub epsilon_hits: Vec<EpsilonHit>,
    pub updates: Vec<UpdateRecord>,
    pub progress: Vec<ProgressSample>,
    pub memory: Vec<MemorySample>,
    pub census: CensusSnapshot,
    pub read_after_reclaim: u64,
    pub reclaim_audit: Option<ReclaimAudit>,
    pub published: u64,
    pub abandoned: u64,
    pub wall_ns: u64,
    /// Sum over workers of the time spent producing published updates,
    /// including abandoned attempts that preceded them.
    pub busy_ns: u64,
    pub final_theta: Vec<f32>,
    /// Parameter hash after each publication, in sequence order.
    pub trajectory: Vec<u64>,
}

impl RunOutcome {
    /// Mean per-thread time to produce one published update.
    pub fn mean_iter_ns(&self) -> Option<u64> {
        (self.published > 0).then(|| self.busy_ns / self.published)
    }

    /// Run wall time divided by published updates.
    pub fn wall_per_update_ns(&self) -> Option<u64> {
        (self.published > 0).then(|| self.wall_ns / self.published)
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.progress.last().map(|p| p.loss)
    }
}

/// The network and data a run trains on.
#[derive(Debug, Clone, Copy)]
pub struct Problem<'a> {
    pub network: &'a Network,
    pub train: &'a Dataset,
    pub eval: &'a Batch<f32>,
}

impl Problem<'_> {
    fn check(&self) -> Result<(), OptimizerError> {
        if self.train.is_empty() {
            return Err(DataError::Empty.into());
        }
        if self.train.feature_len() != self.network.input_size() {
            return Err(NnError::InputShape {
                expected: self.network.input_size(),
                actual: self.train.feature_len(),
            }
            .into());
        }
        if self.train.classes > self.network.classes() {
            return Err(OptimizerError::Config(format!(
                "dataset has {} classes, network outputs {}",
                self.train.classes,
                self.network.classes()
            )));
        }
        if self.eval.is_empty() {
            return Err(OptimizerError::Config("evaluation set is empty".into()));
        }
        Ok(())
    }
}

/// Runs the configured algorithm.
pub fn run(config: &OptimizerConfig, problem: Problem<'_>) -> Result<RunOutcome, OptimizerError> {
    match config.algo {
        Algo::Seq => run_seq(config, problem),
        Algo::Async => run_async_lock(config, problem),
        Algo::Hogwild => run_hogwild(config, problem),
        Algo::Leashed => run_leashed(config, problem),
    }
}

/// Per-thread RNG seed: independent streams, reproducible per thread.
fn thread_seed(seed: u64, thread_id: usize) -> u64 {
    seed ^ thread_id as u64
}

/// Seed for the initial parameters, shared by all algorithms.
fn init_seed(seed: u64) -> u64 {
    seed.wrapping_add(0x9E37_79B9_7F4A_7C15)
}

pub fn theta_hash(theta: &[f32]) -> u64 {
    let mut h = DefaultHasher::new();
    for x in theta {
        h.write_u32(x.to_bits());
    }
    h.finish()
}

/// Per-worker state shared by all loops: data sampling and gradient buffers.
struct GradientWorker<'a> {
    problem: Problem<'a>,
    rng: rand_chacha::ChaCha8Rng,
    batch: Batch<f32>,
    ws: Workspace<f32>,
    eval_ws: Workspace<f32>,
    batch_size: usize,
    eval_every: Option<u64>,
}

impl<'a> GradientWorker<'a> {
    fn new(problem: Problem<'a>, config: &OptimizerConfig, thread_id: usize) -> Self {
        use rand::SeedableRng;
        GradientWorker {
            problem,
            rng: rand_chacha::ChaCha8Rng::seed_from_u64(thread_seed(config.seed, thread_id)),
            batch: Batch::default(),
            ws: Workspace::new(),
            eval_ws: Workspace::new(),
            batch_size: config.batch_size,
            eval_every: config.eval_every,
        }
    }

    /// Whether this worker must evaluate the version with sequence number `seq`.
    fn evaluates(&self, seq: u64) -> bool {
        self.eval_every.is_some_and(|k| seq.is_multiple_of(k))
    }

    fn evaluate(&mut self, theta: &[f32]) -> f64 {
        monitor::eval_loss(&self.problem, theta, &mut self.eval_ws)
    }

    /// Samples a mini-batch and writes the gradient at `theta` into `grad`.
    /// Returns the batch loss.
    fn gradient(&mut self, theta: &[f32], grad: &mut [f32]) -> f64 {
        sample_batch_into(
            self.problem.train,
            self.batch_size,
            &mut self.rng,
            &mut self.batch,
        )
        .expect("dataset checked non-empty");
        self.problem
            .network
            .loss_and_gradient(theta, &self.batch, grad, &mut self.ws)
            .expect("shapes checked before the run")
    }
}

fn pin_current_thread(enabled: bool, thread_id: usize) {
    if !enabled {
        return;
    }
    if let Some(cores) = core_affinity::get_core_ids() {
        if !cores.is_empty() {
            core_affinity::set_for_current(cores[thread_id % cores.len()]);
        }
    }
}

/// What one worker hands back after joining.
#[derive(Debug, Default)]
struct WorkerLog {
    records: Vec<UpdateRecord>,
    busy_ns: u64,
    published: u64,
    abandoned: u64,
    trajectory: Vec<(u64, u64)>,
}

impl WorkerLog {
    /// Records a published update; the time since `since` counts as busy.
    fn publish(&mut self, record: UpdateRecord, since: &mut Instant) {
        let now = Instant::now();
        self.busy_ns += now.duration_since(*since).as_nanos() as u64;
        *since = now;
        self.published += 1;
        self.records.push(record);
    }

    fn abandon(&mut self, record: UpdateRecord) {
        self.abandoned += 1;
        self.records.push(record);
    }
}

fn merge_logs(logs: Vec<WorkerLog>) -> (Vec<UpdateRecord>, u64, u64, u64, Vec<u64>) {
    let mut records = Vec::new();
    let mut busy = 0;
    let mut published = 0;
    let mut abandoned = 0;
    let mut traj = Vec::new();
    for log in logs {
        records.extend(log.records);
        busy += log.busy_ns;
        published += log.published;
        abandoned += log.abandoned;
        traj.extend(log.trajectory);
    }
    records.sort_by_key(|r| (r.wall_ns, r.seq, r.thread_id));
    traj.sort_by_key(|&(seq, _)| seq);
    (
        records,
        busy,
        published,
        abandoned,
        traj.into_iter().map(|(_, h)| h).collect(),
    )
}

/// Validated pool, initial parameters and their evaluation loss.
fn setup(
    config: &OptimizerConfig,
    problem: &Problem<'_>,
) -> Result<(Arc<PayloadPool>, ParameterVector, f64), OptimizerError> {
    config.validate()?;
    problem.check()?;
    let pool = PayloadPool::new(problem.network.dim())?;
    let mut param = ParameterVector::with_pool(&pool);
    param.rand_init(init_seed(config.seed));
    let f0 = monitor::eval_loss(problem, param.theta_exclusive(), &mut Workspace::new());
    if !f0.is_finite() {
        return Err(OptimizerError::Config(format!(
            "initial loss is not finite: {f0}"
        )));
    }
    Ok((pool, param, f0))
}

fn assemble(
    ctl: &Control,
    report: monitor::MonitorReport,
    logs: Vec<WorkerLog>,
    pool: &PayloadPool,
    f0: f64,
    final_theta: Vec<f32>,
    reclaim_audit: Option<ReclaimAudit>,
) -> RunOutcome {
    let wall_ns = ctl.elapsed_ns();
    let (updates, busy_ns, published, abandoned, trajectory) = merge_logs(logs);
    let status = if ctl.crashed() {
        RunStatus::Crash
    } else {
        report.status
    };
    RunOutcome {
        status,
        f0,
        epsilon_hits: report.epsilon_hits,
        updates,
        progress: report.progress,
        memory: report.memory,
        census: pool.census(),
        read_after_reclaim: pool.read_after_reclaim_events(),
        reclaim_audit,
        published,
        abandoned,
        wall_ns,
        busy_ns,
        final_theta,
        trajectory,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn persistence_parsing_and_bounds() {
        assert_eq!("0".parse::<Persistence>().unwrap(), Persistence::Bounded(0));
        assert_eq!(
            "inf".parse::<Persistence>().unwrap(),
            Persistence::Unbounded
        );
        assert!("-1".parse::<Persistence>().is_err());
        assert!(!Persistence::Bounded(0).exceeded(0));
        assert!(Persistence::Bounded(0).exceeded(1));
        assert!(!Persistence::Bounded(1).exceeded(1));
        assert!(!Persistence::Unbounded.exceeded(u32::MAX));
    }

    #[test]
    fn config_validation() {
        let ok = OptimizerConfig::default();
        assert!(ok.validate().is_ok());
        let bad = [
            OptimizerConfig {
                threads: 0,
                ..ok.clone()
            },
            OptimizerConfig {
                algo: Algo::Seq,
                threads: 2,
                ..ok.clone()
            },
            OptimizerConfig {
                eta: 0.0,
                ..ok.clone()
            },
            OptimizerConfig {
                batch_size: 0,
                ..ok.clone()
            },
            OptimizerConfig {
                epsilons: vec![],
                ..ok.clone()
            },
            OptimizerConfig {
                epsilons: vec![1.5],
                ..ok.clone()
            },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }

    #[test]
    fn algo_names_roundtrip() {
        for a in [Algo::Seq, Algo::Async, Algo::Hogwild, Algo::Leashed] {
            assert_eq!(a.to_string().parse::<Algo>().unwrap(), a);
        }
    }
}
