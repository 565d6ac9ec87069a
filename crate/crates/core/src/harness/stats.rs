//! Order statistics over run telemetry.

use std::collections::BTreeMap;

use crate::optimizers::UpdateRecord;

/// Five-number summary with linearly interpolated quartiles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quantiles {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl Quantiles {
    /// `None` for an empty sample. NaNs are ignored.
    pub fn of(values: &[f64]) -> Option<Quantiles> {
        let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        Some(Quantiles {
            min: v[0],
            q1: quantile_sorted(&v, 0.25),
            median: quantile_sorted(&v, 0.5),
            q3: quantile_sorted(&v, 0.75),
            max: v[v.len() - 1],
        })
    }

    pub fn of_u64(values: &[u64]) -> Option<Quantiles> {
        let v: Vec<f64> = values.iter().map(|&x| x as f64).collect();
        Quantiles::of(&v)
    }

    pub fn is_ordered(&self) -> bool {
        self.min <= self.q1
            && self.q1 <= self.median
            && self.median <= self.q3
            && self.q3 <= self.max
    }
}

/// Quantile `q` of ascending `sorted` by linear interpolation between the
/// closest ranks: position `q * (n - 1)`.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of an empty sample");
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Distribution of total staleness over the published updates that fell in
/// `[start_ns, end_ns)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StalenessWindow {
    pub start_ns: u64,
    pub end_ns: u64,
    pub count: usize,
    pub mean: f64,
    pub quantiles: Quantiles,
    pub p90: f64,
    pub p99: f64,
}

/// Per-window percentiles of `tau_c + tau_s` over published updates.
/// Windows without published updates are omitted.
pub fn staleness_windows(records: &[UpdateRecord], window_ns: u64) -> Vec<StalenessWindow> {
    assert!(window_ns > 0, "window must be positive");
    let mut buckets: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for r in records.iter().filter(|r| !r.abandoned) {
        buckets
            .entry(r.wall_ns / window_ns)
            .or_default()
            .push(r.tau() as f64);
    }
    buckets
        .into_iter()
        .map(|(k, mut taus)| {
            taus.sort_by(f64::total_cmp);
            StalenessWindow {
                start_ns: k * window_ns,
                end_ns: (k + 1) * window_ns,
                count: taus.len(),
                mean: taus.iter().sum::<f64>() / taus.len() as f64,
                quantiles: Quantiles::of(&taus).expect("bucket is non-empty"),
                p90: quantile_sorted(&taus, 0.9),
                p99: quantile_sorted(&taus, 0.99),
            }
        })
        .collect()
}

/// Time each thread spent between consecutive publications (the first one
/// measured from the run start). Abandoned attempts are folded into the
/// next publication's interval.
pub fn iteration_times(records: &[UpdateRecord]) -> Vec<u64> {
    let mut last: BTreeMap<u32, u64> = BTreeMap::new();
    let mut sorted: Vec<&UpdateRecord> = records.iter().filter(|r| !r.abandoned).collect();
    sorted.sort_by_key(|r| (r.thread_id, r.wall_ns));
    sorted
        .into_iter()
        .map(|r| {
            let prev = last.insert(r.thread_id, r.wall_ns).unwrap_or(0);
            r.wall_ns - prev
        })
        .collect()
}

/// Mean of `tau_s` over published updates.
pub fn mean_tau_s(records: &[UpdateRecord]) -> Option<f64> {
    let published: Vec<_> = records.iter().filter(|r| !r.abandoned).collect();
    (!published.is_empty())
        .then(|| published.iter().map(|r| r.tau_s as f64).sum::<f64>() / published.len() as f64)
}
