use leashed::dynamics::{
    fixed_point, n_t_closed, n_t_recurrence, simulate_events, DynamicsParams, ServiceDistribution,
};
use proptest::prelude::*;

fn params(m: f64, t_c: f64, t_u: f64, gamma: f64, n0: f64, horizon: usize) -> DynamicsParams {
    DynamicsParams::new(m, t_c, t_u, gamma, n0, horizon).unwrap()
}

#[test]
fn closed_form_equals_recurrence_on_grid() {
    let mut worst: f64 = 0.0;
    for m in [2.0, 8.0, 16.0, 64.0] {
        for t_c in [2.0, 4.0, 16.0] {
            for t_u in [1.0, 2.0, 4.0] {
                for n0 in [0.0, m / 2.0, m] {
                    let p = params(m, t_c, t_u, 0.0, n0, 10_000);
                    assert!(p.is_stable());
                    let traj = n_t_recurrence(&p);
                    assert_eq!(traj.len(), 10_001);
                    for (t, &n) in traj.iter().enumerate() {
                        let c = n_t_closed(&p, t as u32).unwrap();
                        assert!(c.stable);
                        worst = worst.max((c.value - n).abs());
                    }
                    assert!((traj[10_000] - fixed_point(&p)).abs() < 1e-6);
                }
            }
        }
    }
    assert!(worst < 1e-9, "worst difference {worst:e}");
}

#[test]
fn fixed_point_decreases_in_gamma() {
    for (m, t_c, t_u) in [(16.0, 4.0, 2.0), (8.0, 2.0, 2.0), (64.0, 16.0, 1.0)] {
        let base = fixed_point(&params(m, t_c, t_u, 0.0, 0.0, 0));
        assert_eq!(base, m / (t_c / t_u + 1.0));
        let values: Vec<f64> = [0.0, 0.5, 1.0, 2.0, 4.0]
            .iter()
            .map(|&g| fixed_point(&params(m, t_c, t_u, g, 0.0, 0)))
            .collect();
        assert_eq!(values[0], base);
        assert!(values.windows(2).all(|w| w[1] < w[0]), "{values:?}");
        assert!(fixed_point(&params(m, t_c, t_u, 1e12, 0.0, 0)) < 1e-9);
    }
}

#[test]
fn boundedness_needs_unit_durations() {
    // Stable, but the first step overshoots m because T_c < 1.
    let p = params(4.0, 0.6, 10.0, 0.0, 0.0, 5);
    assert!(p.is_stable());
    assert!(n_t_recurrence(&p)[1] > p.m);
}

#[test]
fn simulated_occupancy_tracks_fixed_point() {
    let p = params(16.0, 4.0, 2.0, 0.0, 0.0, 0);
    let sim = simulate_events(&p, 11, ServiceDistribution::Exponential, 1_000_000).unwrap();
    let n_star = fixed_point(&p);
    assert!(
        (sim.time_average - n_star).abs() / n_star < 0.1,
        "{} vs {n_star}",
        sim.time_average
    );
    assert_eq!(sim.histogram.len(), 17);
}

fn stable_params() -> impl Strategy<Value = DynamicsParams> {
    (
        1u32..=64,
        1.0f64..50.0,
        1.0f64..50.0,
        0.0f64..1.0,
        0usize..200,
    )
        .prop_filter_map("stable", |(m, t_c, t_u, frac, horizon)| {
            let m = f64::from(m);
            let p = DynamicsParams::new(m, t_c, t_u, 0.0, frac * m, horizon).ok()?;
            p.is_stable().then_some(p)
        })
}

proptest! {
    #[test]
    fn recurrence_approaches_fixed_point_monotonically(p in stable_params()) {
        let n_star = fixed_point(&p);
        let traj = n_t_recurrence(&p);
        for w in traj.windows(2) {
            prop_assert!((w[1] - n_star).abs() <= (w[0] - n_star).abs() + 1e-12);
        }
    }

    #[test]
    fn recurrence_stays_within_thread_count(p in stable_params()) {
        for n in n_t_recurrence(&p) {
            prop_assert!((-1e-12..=p.m + 1e-12).contains(&n), "n = {}", n);
        }
    }

    #[test]
    fn persistence_relieves_contention(m in 1u32..=64, t_c in 0.1f64..50.0, t_u in 0.1f64..50.0, g in 0.0f64..10.0, dg in 1e-3f64..10.0) {
        let m = f64::from(m);
        let lo = fixed_point(&params(m, t_c, t_u, g, 0.0, 0));
        let hi = fixed_point(&params(m, t_c, t_u, g + dg, 0.0, 0));
        prop_assert!(hi < lo);
        prop_assert!(lo <= m / (t_c / t_u + 1.0));
    }
}
