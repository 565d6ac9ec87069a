//! Experiment orchestration: dataset and network setup, run lifecycle,
//! telemetry aggregation and CSV emission.

pub mod stats;
mod sweep;
pub mod tables;
pub mod verify;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use crate::data::{load_mnist_idx, synthetic_blobs, DataError, Dataset, EVAL_SUBSET};
use crate::dynamics::estimate_gamma;
use crate::nn::{Batch, Network, NetworkSpec, NnError};
use crate::optimizers::{
    self, Algo, EpsilonHit, MemorySample, OptimizerConfig, OptimizerError, Problem, ProgressSample,
    ReclaimAudit, RunOutcome, RunStatus, UpdateRecord,
};
use crate::param_vector::CensusSnapshot;

pub use stats::{
    iteration_times, mean_tau_s, quantile_sorted, staleness_windows, Quantiles, StalenessWindow,
};
pub use sweep::{sweep, write_sweep_csv, EpsAggregate, SeedPolicy, SweepResult, SWEEP_CSV};
pub use tables::{MemoryRow, ProgressRow, SummaryRow, Tables, UpdateRow};

/// Process exit code for a run that met every target.
pub const EXIT_CONVERGED: i32 = 0;
/// Process exit code for configuration, data or I/O errors.
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_DIVERGE: i32 = 2;
pub const EXIT_CRASH: i32 = 3;

/// Default number of MNIST training images loaded.
pub const DEFAULT_TRAIN_LIMIT: usize = 10_000;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: header {found:?} does not match schema {expected:?}")]
    Schema {
        path: String,
        expected: String,
        found: String,
    },
    #[error("invalid experiment: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Network(#[from] NnError),
    #[error(transparent)]
    Optimizer(#[from] OptimizerError),
}

impl HarnessError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub(crate) fn csv(path: &Path, source: csv::Error) -> Self {
        HarnessError::Csv {
            path: path.display().to_string(),
            source,
        }
    }
}

pub fn exit_code(status: RunStatus) -> i32 {
    match status {
        RunStatus::Converged => EXIT_CONVERGED,
        RunStatus::Diverge => EXIT_DIVERGE,
        RunStatus::Crash => EXIT_CRASH,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arch {
    Mlp,
    Cnn,
    /// One ReLU hidden layer sized to the dataset.
    Tiny {
        hidden: usize,
    },
}

impl Arch {
    pub const DEFAULT_TINY_HIDDEN: usize = 32;

    pub fn spec(&self, data: &Dataset) -> NetworkSpec {
        match *self {
            Arch::Mlp => NetworkSpec::mlp(),
            Arch::Cnn => NetworkSpec::cnn(),
            Arch::Tiny { hidden } => NetworkSpec::tiny(data.feature_len(), hidden, data.classes),
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Arch::Mlp => f.write_str("mlp"),
            Arch::Cnn => f.write_str("cnn"),
            Arch::Tiny { hidden } => write!(f, "tiny:{hidden}"),
        }
    }
}

impl FromStr for Arch {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "mlp" => Ok(Arch::Mlp),
            "cnn" => Ok(Arch::Cnn),
            "tiny" => Ok(Arch::Tiny {
                hidden: Arch::DEFAULT_TINY_HIDDEN,
            }),
            other => match other.strip_prefix("tiny:").map(str::parse) {
                Some(Ok(hidden)) if hidden > 0 => Ok(Arch::Tiny { hidden }),
                _ => Err(format!(
                    "unknown architecture {s:?}; expected mlp, cnn, tiny or tiny:N"
                )),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSpec {
    Mnist {
        train_images: PathBuf,
        train_labels: PathBuf,
        test: Option<(PathBuf, PathBuf)>,
        train_limit: Option<usize>,
    },
    Blobs {
        classes: usize,
        dims: usize,
        per_class: usize,
        spread: f32,
        seed: u64,
    },
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::Blobs {
            classes: 10,
            dims: 32,
            per_class: 200,
            spread: 1.0,
            seed: 1,
        }
    }
}

impl DatasetSpec {
    /// MNIST files under `dir` with their standard names. Test files are used
    /// when present.
    pub fn mnist_dir(dir: &Path) -> Self {
        let test_images = dir.join("t10k-images-idx3-ubyte");
        let test_labels = dir.join("t10k-labels-idx1-ubyte");
        let test =
            (test_images.exists() && test_labels.exists()).then_some((test_images, test_labels));
        DatasetSpec::Mnist {
            train_images: dir.join("train-images-idx3-ubyte"),
            train_labels: dir.join("train-labels-idx1-ubyte"),
            test,
            train_limit: Some(DEFAULT_TRAIN_LIMIT),
        }
    }

    /// Training set plus the evaluation set the monitor scores.
    ///
    /// MNIST evaluates on the first test images when test files are given,
    /// otherwise on the first training images. Blobs draw held-out points
    /// from the same clusters.
    pub fn load(&self) -> Result<(Dataset, Dataset), DataError> {
        match self {
            DatasetSpec::Mnist {
                train_images,
                train_labels,
                test,
                train_limit,
            } => {
                let mut train = load_mnist_idx(train_images, train_labels)?;
                if let Some(n) = train_limit {
                    train = train.head(*n);
                }
                let eval = match test {
                    Some((images, labels)) => load_mnist_idx(images, labels)?.head(EVAL_SUBSET),
                    None => train.head(EVAL_SUBSET),
                };
                if train.is_empty() || eval.is_empty() {
                    return Err(DataError::Empty);
                }
                Ok((train, eval))
            }
            &DatasetSpec::Blobs {
                classes,
                dims,
                per_class,
                spread,
                seed,
            } => {
                let eval_per_class = EVAL_SUBSET.div_ceil(classes.max(1));
                let all = synthetic_blobs(classes, dims, per_class + eval_per_class, spread, seed)?;
                Ok(all.split_at(classes * per_class))
            }
        }
    }
}

impl fmt::Display for DatasetSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DatasetSpec::Mnist { train_images, .. } => write!(f, "mnist:{}", train_images.display()),
            DatasetSpec::Blobs {
                classes,
                dims,
                per_class,
                spread,
                seed,
            } => write!(
                f,
                "blobs:classes={classes},dims={dims},per_class={per_class},spread={spread},seed={seed}"
            ),
        }
    }
}

impl FromStr for DatasetSpec {
    type Err = String;

    /// `mnist:DIR`, `mnist:IMAGES,LABELS[,TEST_IMAGES,TEST_LABELS]`, `blobs`
    /// or `blobs:key=value,...` with keys classes, dims, per_class, spread
    /// and seed.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
        match kind {
            "mnist" => {
                let parts: Vec<&str> = rest.split(',').filter(|p| !p.is_empty()).collect();
                match parts.as_slice() {
                    [dir] => Ok(DatasetSpec::mnist_dir(Path::new(dir))),
                    [images, labels] => Ok(DatasetSpec::Mnist {
                        train_images: images.into(),
                        train_labels: labels.into(),
                        test: None,
                        train_limit: Some(DEFAULT_TRAIN_LIMIT),
                    }),
                    [images, labels, test_images, test_labels] => Ok(DatasetSpec::Mnist {
                        train_images: images.into(),
                        train_labels: labels.into(),
                        test: Some((test_images.into(), test_labels.into())),
                        train_limit: Some(DEFAULT_TRAIN_LIMIT),
                    }),
                    _ => Err(format!("expected mnist:DIR or mnist:IMAGES,LABELS[,TEST_IMAGES,TEST_LABELS], got {s:?}")),
                }
            }
            "blobs" => {
                let DatasetSpec::Blobs {
                    mut classes,
                    mut dims,
                    mut per_class,
                    mut spread,
                    mut seed,
                } = DatasetSpec::default()
                else {
                    unreachable!()
                };
                for kv in rest.split(',').filter(|p| !p.is_empty()) {
                    let (k, v) = kv
                        .split_once('=')
                        .ok_or_else(|| format!("expected key=value, got {kv:?}"))?;
                    let bad = |_| format!("bad value for {k}: {v:?}");
                    match k {
                        "classes" => classes = v.parse().map_err(bad)?,
                        "dims" => dims = v.parse().map_err(bad)?,
                        "per_class" => per_class = v.parse().map_err(bad)?,
                        "spread" => {
                            spread = v.parse().map_err(|_| format!("bad value for {k}: {v:?}"))?
                        }
                        "seed" => seed = v.parse().map_err(bad)?,
                        _ => return Err(format!("unknown blobs key {k:?}")),
                    }
                }
                Ok(DatasetSpec::Blobs {
                    classes,
                    dims,
                    per_class,
                    spread,
                    seed,
                })
            }
            _ => Err(format!(
                "unknown dataset {s:?}; expected mnist:... or blobs[:...]"
            )),
        }
    }
}

/// A fully specified run.
#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub run_id: String,
    pub optimizer: OptimizerConfig,
    pub arch: Arch,
    pub dataset: DatasetSpec,
    /// Width of the windows staleness distributions are reported over.
    pub staleness_window: Duration,
}

impl Experiment {
    pub fn new(optimizer: OptimizerConfig, arch: Arch, dataset: DatasetSpec) -> Self {
        let mut exp = Experiment {
            run_id: String::new(),
            optimizer,
            arch,
            dataset,
            staleness_window: Duration::from_secs(1),
        };
        exp.run_id = exp.default_run_id();
        exp
    }

    /// `algo-mM[-tpT]-bB-sS`.
    pub fn default_run_id(&self) -> String {
        let c = &self.optimizer;
        let tp = match c.algo {
            Algo::Leashed => format!("-tp{}", c.persistence),
            _ => String::new(),
        };
        format!(
            "{}-m{}{}-b{}-s{}",
            c.algo, c.threads, tp, c.batch_size, c.seed
        )
    }
}

/// Loaded data and network for an experiment. Building it performs all
/// I/O and validation, so a run started from it only fails inside workers.
#[derive(Debug)]
pub struct Prepared {
    pub network: Network,
    pub train: Dataset,
    pub eval: Batch<f32>,
}

impl Prepared {
    pub fn new(experiment: &Experiment) -> Result<Self, HarnessError> {
        experiment.optimizer.validate()?;
        if experiment.staleness_window.is_zero() {
            return Err(HarnessError::Config(
                "staleness window must be positive".into(),
            ));
        }
        let (train, eval) = experiment.dataset.load()?;
        let network = Network::new(experiment.arch.spec(&train))?;
        if network.input_size() != train.feature_len() {
            return Err(HarnessError::Config(format!(
                "{} expects {} inputs per example, dataset has {}",
                experiment.arch,
                network.input_size(),
                train.feature_len()
            )));
        }
        if train.classes > network.classes() {
            return Err(HarnessError::Config(format!(
                "{} has {} outputs, dataset has {} classes",
                experiment.arch,
                network.classes(),
                train.classes
            )));
        }
        Ok(Prepared {
            network,
            train,
            eval: eval.as_batch(),
        })
    }

    pub fn problem(&self) -> Problem<'_> {
        Problem {
            network: &self.network,
            train: &self.train,
            eval: &self.eval,
        }
    }
}

/// Aggregated result of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub run_id: String,
    pub experiment: Experiment,
    pub status: RunStatus,
    pub f0: f64,
    pub epsilon_hits: Vec<EpsilonHit>,
    /// Mean per-thread time to produce one published update.
    pub mean_iter_ns: Option<u64>,
    /// Run wall time divided by published updates.
    pub wall_per_update_ns: Option<u64>,
    /// Distribution of per-thread gaps between publications.
    pub iter_time: Option<Quantiles>,
    pub staleness: Vec<StalenessWindow>,
    pub memory: Vec<MemorySample>,
    pub updates: Vec<UpdateRecord>,
    pub progress: Vec<ProgressSample>,
    pub census: CensusSnapshot,
    pub read_after_reclaim: u64,
    pub reclaim_audit: Option<ReclaimAudit>,
    pub published: u64,
    pub abandoned: u64,
    pub wall_ns: u64,
    /// Abandoned per published update; see [`estimate_gamma`].
    pub gamma_estimate: Option<f64>,
    pub final_theta: Vec<f32>,
}

impl RunReport {
    pub fn from_outcome(experiment: &Experiment, outcome: RunOutcome) -> Self {
        let window = experiment.staleness_window.as_nanos().max(1) as u64;
        RunReport {
            run_id: experiment.run_id.clone(),
            experiment: experiment.clone(),
            status: outcome.status,
            f0: outcome.f0,
            mean_iter_ns: outcome.mean_iter_ns(),
            wall_per_update_ns: outcome.wall_per_update_ns(),
            iter_time: Quantiles::of_u64(&iteration_times(&outcome.updates)),
            staleness: staleness_windows(&outcome.updates, window),
            gamma_estimate: estimate_gamma(outcome.published, outcome.abandoned),
            epsilon_hits: outcome.epsilon_hits,
            memory: outcome.memory,
            updates: outcome.updates,
            progress: outcome.progress,
            census: outcome.census,
            read_after_reclaim: outcome.read_after_reclaim,
            reclaim_audit: outcome.reclaim_audit,
            published: outcome.published,
            abandoned: outcome.abandoned,
            wall_ns: outcome.wall_ns,
            final_theta: outcome.final_theta,
        }
    }

    pub fn exit_code(&self) -> i32 {
        exit_code(self.status)
    }

    /// Largest live payload count over the memory samples.
    pub fn max_sampled_payloads(&self) -> usize {
        self.memory
            .iter()
            .map(|s| s.census.live_payloads)
            .max()
            .unwrap_or(0)
    }

    pub fn tables(&self) -> Tables {
        let c = &self.experiment.optimizer;
        let id = &self.run_id;
        let summary = self
            .epsilon_hits
            .iter()
            .map(|h| SummaryRow {
                run_id: id.clone(),
                algo: c.algo,
                m: c.threads,
                eta: c.eta,
                tp: (c.algo == Algo::Leashed).then_some(c.persistence),
                batch: c.batch_size,
                seed: c.seed,
                status: self.status,
                f0: self.f0,
                eps: h.eps,
                eps_time_ns: h.wall_ns,
                eps_iters: h.iters,
                mean_iter_ns: self.mean_iter_ns,
            })
            .collect();
        let updates = self
            .updates
            .iter()
            .map(|r| UpdateRow {
                run_id: id.clone(),
                thread_id: r.thread_id,
                seq: r.seq,
                wall_ns: r.wall_ns,
                tau_c: r.tau_c,
                tau_s: r.tau_s,
                tries: r.tries,
                abandoned: r.abandoned,
            })
            .collect();
        let progress = self
            .progress
            .iter()
            .map(|p| ProgressRow {
                run_id: id.clone(),
                wall_ns: p.wall_ns,
                seq: p.seq,
                loss: p.loss,
            })
            .collect();
        let memory = self
            .memory
            .iter()
            .map(|s| MemoryRow {
                run_id: id.clone(),
                wall_ns: s.wall_ns,
                live_payloads: s.census.live_payloads,
                live_bytes: s.census.live_bytes,
            })
            .collect();
        Tables {
            summary,
            updates,
            progress,
            memory,
        }
    }
}

/// Runs an experiment on already loaded data.
pub fn run_prepared(
    experiment: &Experiment,
    prepared: &Prepared,
) -> Result<RunReport, HarnessError> {
    let outcome = optimizers::run(&experiment.optimizer, prepared.problem())?;
    Ok(RunReport::from_outcome(experiment, outcome))
}

/// Loads data, runs the experiment and, with `out_dir`, writes the four CSV
/// files there (replacing earlier ones). All configuration, data and output
/// directory errors surface before any worker starts.
pub fn run_experiment(
    experiment: &Experiment,
    out_dir: Option<&Path>,
) -> Result<RunReport, HarnessError> {
    let prepared = Prepared::new(experiment)?;
    if let Some(dir) = out_dir {
        Tables::default().write(dir, false)?;
    }
    let report = run_prepared(experiment, &prepared)?;
    if let Some(dir) = out_dir {
        report.tables().write(dir, true)?;
    }
    Ok(report)
}
