use std::time::Duration;

use leashed::data::{synthetic_blobs, Dataset};
use leashed::nn::{Batch, Network, NetworkSpec};
use leashed::optimizers::{
    run, Algo, OptimizerConfig, Persistence, Problem, RunOutcome, RunStatus,
};

struct Fixture {
    network: Network,
    train: Dataset,
    eval: Batch<f32>,
}

impl Fixture {
    fn blobs() -> Self {
        let (train, eval) = synthetic_blobs(4, 8, 150, 0.5, 7).unwrap().split_at(400);
        let eval = eval.as_batch();
        Fixture {
            network: Network::new(NetworkSpec::tiny(8, 16, 4)).unwrap(),
            train,
            eval,
        }
    }

    fn problem(&self) -> Problem<'_> {
        Problem {
            network: &self.network,
            train: &self.train,
            eval: &self.eval,
        }
    }
}

fn config(algo: Algo, threads: usize) -> OptimizerConfig {
    OptimizerConfig {
        algo,
        threads,
        eta: 0.05,
        batch_size: 8,
        seed: 11,
        time_budget: Duration::from_secs(60),
        epsilons: vec![1e-9],
        max_updates: Some(400),
        monitor_interval: Duration::from_millis(20),
        memory_interval: Duration::from_millis(5),
        ..OptimizerConfig::default()
    }
}

fn published_seqs(out: &RunOutcome) -> Vec<u64> {
    let mut seqs: Vec<u64> = out
        .updates
        .iter()
        .filter(|r| !r.abandoned)
        .map(|r| r.seq)
        .collect();
    seqs.sort_unstable();
    seqs
}

fn assert_seq_complete(out: &RunOutcome) {
    let seqs = published_seqs(out);
    let expected: Vec<u64> = (1..=out.published).collect();
    assert_eq!(seqs, expected, "published sequence numbers must be 1..=N");
}

#[test]
fn single_thread_runs_agree_bitwise() {
    let fx = Fixture::blobs();
    let mut reference: Option<RunOutcome> = None;
    for algo in [Algo::Seq, Algo::Async, Algo::Hogwild, Algo::Leashed] {
        let cfg = OptimizerConfig {
            record_trajectory: true,
            max_updates: Some(200),
            ..config(algo, 1)
        };
        let out = run(&cfg, fx.problem()).unwrap();
        assert_eq!(out.published, 200, "{algo}");
        assert_eq!(out.trajectory.len(), 200, "{algo}");
        assert!(
            out.updates.iter().all(|r| r.tau() == 0 && r.tries == 1),
            "{algo}"
        );
        match &reference {
            None => reference = Some(out),
            Some(r) => {
                assert_eq!(out.trajectory, r.trajectory, "{algo} trajectory");
                let same = out
                    .final_theta
                    .iter()
                    .zip(&r.final_theta)
                    .all(|(a, b)| a.to_bits() == b.to_bits());
                assert!(same, "{algo} final parameters differ");
            }
        }
    }
}

#[test]
fn zero_persistence_has_no_scheduling_staleness() {
    let fx = Fixture::blobs();
    let cfg = OptimizerConfig {
        persistence: Persistence::Bounded(0),
        ..config(Algo::Leashed, 4)
    };
    let out = run(&cfg, fx.problem()).unwrap();
    assert!(out.updates.iter().all(|r| r.tau_s == 0 && r.tries == 1));
    assert_eq!(
        out.abandoned,
        out.updates.iter().filter(|r| r.abandoned).count() as u64
    );
    assert_seq_complete(&out);
}

#[test]
fn sequence_numbers_are_complete_for_every_algorithm() {
    let fx = Fixture::blobs();
    for algo in [Algo::Async, Algo::Hogwild, Algo::Leashed] {
        let out = run(&config(algo, 4), fx.problem()).unwrap();
        assert!(out.published >= 400, "{algo}");
        assert_seq_complete(&out);
    }
}

#[test]
fn failed_publications_imply_progress() {
    let fx = Fixture::blobs();
    for tp in [Persistence::Bounded(1), Persistence::Unbounded] {
        let cfg = OptimizerConfig {
            persistence: tp,
            max_updates: Some(1000),
            ..config(Algo::Leashed, 6)
        };
        let out = run(&cfg, fx.problem()).unwrap();
        for r in &out.updates {
            // Each failed attempt means some other update was published in
            // between, so the latest sequence number moved at least once.
            assert!(r.tau_s >= u64::from(r.tries - 1), "{r:?}");
            if let Persistence::Bounded(tp) = tp {
                assert!(r.tries <= tp + 1);
            }
        }
        assert_seq_complete(&out);
    }
}

#[test]
fn leashed_reclaims_every_replaced_version_exactly_once() {
    let fx = Fixture::blobs();
    let m = 5;
    let out = run(&config(Algo::Leashed, m), fx.problem()).unwrap();
    let audit = out.reclaim_audit.unwrap();
    assert_eq!(audit.versions, out.published + 1);
    assert_eq!(audit.reclaimed_more_than_once, 0);
    assert_eq!(audit.leaked, 0);
    assert_eq!(audit.reclaimed_once, out.published);
    assert_eq!(out.read_after_reclaim, 0);
    // Per worker: a gradient buffer, a candidate and one pinned version. The
    // monitor pins nothing while it samples, but a snapshot in progress can
    // hold one extra stale version alive.
    assert!(out.memory.iter().all(|s| s.census.live_payloads <= 3 * m));
    assert!(
        out.census.max_live_payloads <= 3 * m + 1,
        "{:?}",
        out.census
    );
    // Teardown leaves the latest version only.
    assert_eq!(out.census.live_payloads, 1);
}

#[test]
fn lock_based_footprint_is_constant() {
    let fx = Fixture::blobs();
    for algo in [Algo::Async, Algo::Hogwild] {
        let m = 3;
        // Long enough that every worker starts and takes its buffers.
        let cfg = OptimizerConfig {
            epsilons: vec![1e-9],
            max_updates: Some(3_000),
            ..config(algo, m)
        };
        let out = run(&cfg, fx.problem()).unwrap();
        let threads: std::collections::BTreeSet<u32> =
            out.updates.iter().map(|u| u.thread_id).collect();
        assert_eq!(threads.len(), m, "{algo}");
        assert_eq!(out.census.max_live_payloads, 2 * m + 1, "{algo}");
        assert_eq!(out.census.allocations as usize, 2 * m + 1, "{algo}");
    }
}

#[test]
fn converges_on_separable_blobs() {
    let fx = Fixture::blobs();
    for algo in [Algo::Seq, Algo::Async, Algo::Hogwild, Algo::Leashed] {
        let threads = if algo == Algo::Seq { 1 } else { 2 };
        let cfg = OptimizerConfig {
            epsilons: vec![0.5, 0.2],
            max_updates: None,
            time_budget: Duration::from_secs(30),
            ..config(algo, threads)
        };
        let out = run(&cfg, fx.problem()).unwrap();
        assert_eq!(out.status, RunStatus::Converged, "{algo}");
        let hits = &out.epsilon_hits;
        assert!(hits
            .iter()
            .all(|h| h.wall_ns.is_some() && h.iters.is_some()));
        assert!(hits[0].wall_ns <= hits[1].wall_ns);
        assert!(out.final_loss().unwrap() <= 0.2 * out.f0);
    }
}

#[test]
fn exhausted_budget_is_reported_as_diverge() {
    let fx = Fixture::blobs();
    let cfg = OptimizerConfig {
        max_updates: None,
        time_budget: Duration::from_millis(50),
        ..config(Algo::Leashed, 2)
    };
    let out = run(&cfg, fx.problem()).unwrap();
    assert_eq!(out.status, RunStatus::Diverge);
    assert!(out.epsilon_hits[0].wall_ns.is_none());
}

#[test]
fn exploding_parameters_are_reported_as_crash() {
    let fx = Fixture::blobs();
    for algo in [Algo::Seq, Algo::Async, Algo::Hogwild, Algo::Leashed] {
        let threads = if algo == Algo::Seq { 1 } else { 2 };
        let cfg = OptimizerConfig {
            eta: 1e30,
            max_updates: None,
            time_budget: Duration::from_secs(20),
            ..config(algo, threads)
        };
        let out = run(&cfg, fx.problem()).unwrap();
        assert_eq!(out.status, RunStatus::Crash, "{algo}");
    }
}

#[test]
fn invalid_inputs_are_rejected() {
    let fx = Fixture::blobs();
    assert!(run(&config(Algo::Seq, 2), fx.problem()).is_err());
    let wrong = Network::new(NetworkSpec::tiny(9, 4, 4)).unwrap();
    let problem = Problem {
        network: &wrong,
        ..fx.problem()
    };
    assert!(run(&config(Algo::Leashed, 1), problem).is_err());
}

#[test]
fn update_cadence_evaluation_gives_exact_iteration_counts() {
    let fx = Fixture::blobs();
    let iters = |algo| {
        let cfg = OptimizerConfig {
            epsilons: vec![0.5, 0.3],
            eval_every: Some(5),
            max_updates: None,
            ..config(algo, 1)
        };
        let out = run(&cfg, fx.problem()).unwrap();
        assert_eq!(out.status, RunStatus::Converged, "{algo}");
        assert!(out.progress.iter().skip(1).all(|p| p.seq % 5 == 0));
        out.epsilon_hits
            .iter()
            .map(|h| h.iters.unwrap())
            .collect::<Vec<_>>()
    };
    let reference = iters(Algo::Seq);
    assert!(reference[0] <= reference[1]);
    for algo in [Algo::Seq, Algo::Async, Algo::Hogwild, Algo::Leashed] {
        assert_eq!(iters(algo), reference, "{algo}");
    }
}
