//! Fluid model of retry-loop contention.
//!
//! Threads alternate between computing a gradient (mean duration `T_c`) and
//! the publish retry loop (mean duration `T_u`). With `n` threads in the
//! loop, arrivals happen at rate `(m - n) / T_c` and departures at
//! `n (1 + gamma) / T_u`, where `gamma >= 0` is the extra departure rate
//! caused by a persistence bound. The deterministic recurrence
//! `n_{t+1} = n_t + (m - n_t) / T_c - n_t (1 + gamma) / T_u` converges to
//! `m / (T_c (1 + gamma) / T_u + 1)` when `|1 - 1/T_c - (1 + gamma)/T_u| < 1`.
//!
//! [`simulate_events`] runs the corresponding stochastic process with one
//! server per thread and reports the time-averaged loop occupancy.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum DynamicsError {
    #[error("invalid dynamics parameters: {0}")]
    Invalid(String),
    #[error("closed form is only defined without persistence (gamma = 0), got gamma = {0}")]
    PersistenceUnsupported(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DynamicsParams {
    /// Thread count.
    pub m: f64,
    /// Gradient computation time, in model time units.
    pub t_c: f64,
    /// Update (retry-loop service) time, in model time units.
    pub t_u: f64,
    pub gamma: f64,
    /// Threads in the retry loop at time 0.
    pub n0: f64,
    pub horizon: usize,
}

impl DynamicsParams {
    pub fn new(
        m: f64,
        t_c: f64,
        t_u: f64,
        gamma: f64,
        n0: f64,
        horizon: usize,
    ) -> Result<Self, DynamicsError> {
        let p = DynamicsParams {
            m,
            t_c,
            t_u,
            gamma,
            n0,
            horizon,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        if !(self.m >= 1.0) {
            return Err(DynamicsError::Invalid(format!(
                "m must be >= 1, got {}",
                self.m
            )));
        }
        if !(self.t_c > 0.0 && self.t_u > 0.0) || !self.t_c.is_finite() || !self.t_u.is_finite() {
            return Err(DynamicsError::Invalid(format!(
                "T_c and T_u must be positive, got {} and {}",
                self.t_c, self.t_u
            )));
        }
        if !(self.gamma >= 0.0) {
            return Err(DynamicsError::Invalid(format!(
                "gamma must be >= 0, got {}",
                self.gamma
            )));
        }
        if !(0.0..=self.m).contains(&self.n0) {
            return Err(DynamicsError::Invalid(format!(
                "n0 must lie in [0, m], got {}",
                self.n0
            )));
        }
        Ok(())
    }

    /// Per-step contraction factor `1 - 1/T_c - (1 + gamma)/T_u`.
    pub fn contraction(&self) -> f64 {
        1.0 - 1.0 / self.t_c - (1.0 + self.gamma) / self.t_u
    }

    /// Whether the unit-step recurrence converges to its fixed point.
    pub fn is_stable(&self) -> bool {
        self.contraction().abs() < 1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rates {
    pub lambda: f64,
    pub mu: f64,
}

/// Arrival and departure rates of the retry loop with `n` threads inside.
pub fn rates(p: &DynamicsParams, n: f64) -> Rates {
    Rates {
        lambda: (p.m - n) / p.t_c,
        mu: n / p.t_u * (1.0 + p.gamma),
    }
}

/// Iterates the recurrence; returns `n_0 ..= n_horizon`.
pub fn n_t_recurrence(p: &DynamicsParams) -> Vec<f64> {
    let mut out = Vec::with_capacity(p.horizon + 1);
    let mut n = p.n0;
    out.push(n);
    for _ in 0..p.horizon {
        let r = rates(p, n);
        n = n + r.lambda - r.mu;
        out.push(n);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosedForm {
    pub value: f64,
    /// False when the recurrence does not converge; the value is still the
    /// closed-form expression but no longer approaches the fixed point.
    pub stable: bool,
}

/// Closed-form `n_t` without persistence:
/// `(1 - r^t) / (1 + T_c/T_u) * m + r^t * n0` with `r = 1 - 1/T_c - 1/T_u`.
pub fn n_t_closed(p: &DynamicsParams, t: u32) -> Result<ClosedForm, DynamicsError> {
    if p.gamma != 0.0 {
        return Err(DynamicsError::PersistenceUnsupported(p.gamma));
    }
    let r = p.contraction();
    let rt = r.powi(t as i32);
    let value = (1.0 - rt) / (1.0 + p.t_c / p.t_u) * p.m + rt * p.n0;
    Ok(ClosedForm {
        value,
        stable: p.is_stable(),
    })
}

/// Fixed point `m / (T_c (1 + gamma) / T_u + 1)`.
pub fn fixed_point(p: &DynamicsParams) -> f64 {
    p.m / (p.t_c / p.t_u * (1.0 + p.gamma) + 1.0)
}

/// Estimates `gamma` from run telemetry as the ratio of all retry-loop
/// departures (publications plus abandonments) to publications, minus one.
/// Returns `None` when nothing was published.
pub fn estimate_gamma(published: u64, abandoned: u64) -> Option<f64> {
    if published == 0 {
        return None;
    }
    Some((published + abandoned) as f64 / published as f64 - 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ServiceDistribution {
    Deterministic,
    Exponential,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    /// Time-averaged number of threads in the retry loop.
    pub time_average: f64,
    /// `histogram[k]` is the fraction of time with exactly `k` threads in
    /// the loop.
    pub histogram: Vec<f64>,
    /// Occupancy observed at integer times `0 ..= horizon` (truncated if the
    /// event budget ends first).
    pub trajectory: Vec<usize>,
    pub events: usize,
    pub end_time: f64,
}

#[derive(Clone, Copy, PartialEq)]
struct Event {
    time: f64,
    thread: usize,
}

impl Eq for Event {}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        // Min-heap on time, ties broken by thread id.
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.thread.cmp(&self.thread))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Event-driven simulation of `m` threads alternating between compute
/// (mean `T_c`) and the retry loop (mean `T_u / (1 + gamma)`), processing
/// `events` phase transitions. The first `round(n0)` threads start inside
/// the loop.
pub fn simulate_events(
    p: &DynamicsParams,
    seed: u64,
    dist: ServiceDistribution,
    events: usize,
) -> Result<Simulation, DynamicsError> {
    p.validate()?;
    if p.m.fract() != 0.0 {
        return Err(DynamicsError::Invalid(format!(
            "simulation needs an integer thread count, got {}",
            p.m
        )));
    }
    let m = p.m as usize;
    let mean_compute = p.t_c;
    let mean_service = p.t_u / (1.0 + p.gamma);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let exp_compute = Exp::new(1.0 / mean_compute).expect("positive rate");
    let exp_service = Exp::new(1.0 / mean_service).expect("positive rate");
    let draw = |in_loop: bool, rng: &mut ChaCha8Rng| match (dist, in_loop) {
        (ServiceDistribution::Deterministic, true) => mean_service,
        (ServiceDistribution::Deterministic, false) => mean_compute,
        (ServiceDistribution::Exponential, true) => exp_service.sample(rng),
        (ServiceDistribution::Exponential, false) => exp_compute.sample(rng),
    };

    let initial_in_loop = p.n0.round() as usize;
    let mut in_loop = vec![false; m];
    let mut heap = BinaryHeap::with_capacity(m);
    for (i, state) in in_loop.iter_mut().enumerate() {
        *state = i < initial_in_loop;
        heap.push(Event {
            time: draw(*state, &mut rng),
            thread: i,
        });
    }
    let mut occupancy = initial_in_loop;
    let mut time_at = vec![0.0; m + 1];
    let mut now = 0.0;
    let mut trajectory = vec![occupancy];
    let mut processed = 0;
    while processed < events {
        let Some(ev) = heap.pop() else { break };
        // Record integer-time samples crossed by this interval.
        while (trajectory.len() as f64) < ev.time && trajectory.len() <= p.horizon {
            trajectory.push(occupancy);
        }
        time_at[occupancy] += ev.time - now;
        now = ev.time;
        let entering = !in_loop[ev.thread];
        in_loop[ev.thread] = entering;
        if entering {
            occupancy += 1;
        } else {
            occupancy -= 1;
        }
        heap.push(Event {
            time: now + draw(entering, &mut rng),
            thread: ev.thread,
        });
        processed += 1;
    }
    let histogram: Vec<f64> = if now > 0.0 {
        time_at.iter().map(|t| t / now).collect()
    } else {
        let mut h = vec![0.0; m + 1];
        h[occupancy] = 1.0;
        h
    };
    let time_average = histogram
        .iter()
        .enumerate()
        .map(|(k, f)| k as f64 * f)
        .sum();
    Ok(Simulation {
        time_average,
        histogram,
        trajectory,
        events: processed,
        end_time: now,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(m: f64, t_c: f64, t_u: f64, gamma: f64, n0: f64) -> DynamicsParams {
        DynamicsParams::new(m, t_c, t_u, gamma, n0, 100).unwrap()
    }

    #[test]
    fn rates_by_substitution() {
        let p = params(16.0, 4.0, 2.0, 0.0, 0.0);
        assert_eq!(
            rates(&p, 0.0),
            Rates {
                lambda: 4.0,
                mu: 0.0
            }
        );
        assert_eq!(rates(&p, 16.0).lambda, 0.0);
        assert_eq!(
            rates(&p, 4.0),
            Rates {
                lambda: 3.0,
                mu: 2.0
            }
        );
    }

    #[test]
    fn recurrence_by_hand() {
        // n1 = 0 + 16/4 - 0 = 4; n2 = 4 + 12/4 - 4/2 = 5; n3 = 5 + 11/4 - 5/2 = 5.25
        let p = DynamicsParams::new(16.0, 4.0, 2.0, 0.0, 0.0, 3).unwrap();
        assert_eq!(n_t_recurrence(&p), vec![0.0, 4.0, 5.0, 5.25]);
    }

    #[test]
    fn closed_form_matches_hand_values() {
        let p = params(16.0, 4.0, 2.0, 0.0, 0.0);
        assert!((n_t_closed(&p, 3).unwrap().value - 5.25).abs() < 1e-12);
        assert_eq!(n_t_closed(&p, 0).unwrap().value, 0.0);
        let far = n_t_closed(&p, 200).unwrap();
        assert!(far.stable);
        assert!((far.value - 16.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn closed_form_rejects_persistence_and_flags_instability() {
        assert!(matches!(
            n_t_closed(&params(16.0, 4.0, 2.0, 1.0, 0.0), 1),
            Err(DynamicsError::PersistenceUnsupported(_))
        ));
        let unstable = params(4.0, 0.5, 0.5, 0.0, 0.0);
        assert!(!n_t_closed(&unstable, 3).unwrap().stable);
    }

    #[test]
    fn fixed_points() {
        assert_eq!(fixed_point(&params(16.0, 3.0, 3.0, 0.0, 0.0)), 8.0);
        assert!((fixed_point(&params(16.0, 4.0, 2.0, 0.0, 0.0)) - 16.0 / 3.0).abs() < 1e-15);
        assert!((fixed_point(&params(16.0, 4.0, 2.0, 1.0, 0.0)) - 3.2).abs() < 1e-15);
    }

    #[test]
    fn fixed_point_trajectory_is_constant() {
        let mut p = params(16.0, 4.0, 2.0, 0.0, 0.0);
        p.n0 = fixed_point(&p);
        for n in n_t_recurrence(&p) {
            assert!((n - p.n0).abs() < 1e-12);
        }
    }

    #[test]
    fn heavy_persistence_drains_the_loop() {
        let p = DynamicsParams::new(16.0, 1000.0, 1.0, 0.9, 16.0, 200).unwrap();
        assert!(p.is_stable());
        let traj = n_t_recurrence(&p);
        assert!(traj.last().unwrap().abs() < 0.1);
    }

    #[test]
    fn gamma_estimate() {
        assert_eq!(estimate_gamma(0, 5), None);
        assert_eq!(estimate_gamma(100, 0), Some(0.0));
        assert_eq!(estimate_gamma(100, 50), Some(0.5));
    }

    #[test]
    fn deterministic_single_thread_duty_cycle() {
        let p = params(1.0, 3.0, 1.0, 0.0, 0.0);
        let sim = simulate_events(&p, 0, ServiceDistribution::Deterministic, 1000).unwrap();
        // Alternates 0 (3 units) and 1 (1 unit): duty cycle 1/4.
        assert!((sim.time_average - 0.25).abs() < 1e-9);
        assert_eq!(&sim.trajectory[..8], &[0, 0, 0, 1, 0, 0, 0, 1]);
    }

    #[test]
    fn simulation_is_seeded() {
        let p = params(8.0, 4.0, 2.0, 0.0, 0.0);
        let a = simulate_events(&p, 3, ServiceDistribution::Exponential, 10_000).unwrap();
        let b = simulate_events(&p, 3, ServiceDistribution::Exponential, 10_000).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn persistence_lowers_simulated_occupancy() {
        let base = params(16.0, 4.0, 2.0, 0.0, 0.0);
        let pers = params(16.0, 4.0, 2.0, 4.0, 0.0);
        let a = simulate_events(&base, 1, ServiceDistribution::Exponential, 200_000).unwrap();
        let b = simulate_events(&pers, 1, ServiceDistribution::Exponential, 200_000).unwrap();
        assert!(b.time_average < a.time_average);
    }

    #[test]
    fn invalid_params() {
        assert!(DynamicsParams::new(0.0, 1.0, 1.0, 0.0, 0.0, 1).is_err());
        assert!(DynamicsParams::new(2.0, 0.0, 1.0, 0.0, 0.0, 1).is_err());
        assert!(DynamicsParams::new(2.0, 1.0, 1.0, -1.0, 0.0, 1).is_err());
        assert!(DynamicsParams::new(2.0, 1.0, 1.0, 0.0, 3.0, 1).is_err());
    }
}
