use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::loss::LabelVector;
use crate::error::{Error, Result};

/// Column indices of the minority AUs 1, 2, 4, 15, 23, 24.
pub const MINORITY_COLUMNS: [usize; 6] = [0, 1, 2, 8, 10, 11];
/// Occurrence rates of the reference training population.
pub const REFERENCE_RATES: [f64; 12] = [0.24, 0.18, 0.23, 0.44, 0.52, 0.58, 0.57, 0.43, 0.15, 0.36, 0.19, 0.16];
/// Occurrence rates of the reference population after rebalancing.
pub const REFERENCE_BALANCED_RATES: [f64; 12] = [0.39, 0.32, 0.33, 0.45, 0.54, 0.60, 0.56, 0.49, 0.30, 0.50, 0.33, 0.30];
pub const MULTIPLIER_RANGE: (f64, f64) = (4.0, 7.0);
/// Co-occurrence coupling of the reference population.
pub const REFERENCE_COUPLING: f64 = 0.7;

/// `max` over positive AUs of that AU's multiplier, 1 for a sample with no positives.
pub fn sample_weights(labels: &[LabelVector], multipliers: &[f64; 12]) -> Vec<f64> {
    labels
        .iter()
        .map(|l| l.iter().zip(multipliers).filter(|(&v, _)| v == 1).map(|(_, &m)| m).fold(1.0, f64::max))
        .collect()
}

/// Draws indices with probability proportional to their weights, with replacement.
#[derive(Clone, Debug)]
pub struct WeightedSampler {
    cumulative: Vec<f64>,
}

impl WeightedSampler {
    pub fn new(weights: &[f64]) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::invalid("sampler", "no samples"));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(Error::invalid("sampler", format!("weight {w} must be positive")));
        }
        let mut acc = 0.0;
        let cumulative = weights
            .iter()
            .map(|w| {
                acc += w;
                acc
            })
            .collect();
        Ok(Self { cumulative })
    }

    pub fn draw(&self, rng: &mut dyn RngCore) -> usize {
        let total = *self.cumulative.last().expect("non-empty");
        let u = rng.gen::<f64>() * total;
        self.cumulative.partition_point(|&c| c <= u).min(self.cumulative.len() - 1)
    }
}

/// Exact per-AU occurrence under weighted sampling.
pub fn weighted_marginals(labels: &[LabelVector], weights: &[f64]) -> [f64; 12] {
    let mut num = [0.0; 12];
    let total: f64 = weights.iter().sum();
    for (l, &w) in labels.iter().zip(weights) {
        for (n, &v) in num.iter_mut().zip(l) {
            if v == 1 {
                *n += w;
            }
        }
    }
    num.map(|n| if total > 0.0 { n / total } else { 0.0 })
}

/// Face regions whose AUs tend to co-occur: brows, eyes and upper cheeks, lower face.
pub const COOCCURRENCE_GROUPS: [&[usize]; 3] = [&[0, 1, 2], &[3, 4, 5, 6, 7], &[8, 9, 10, 11]];

/// Labels with the given per-AU rates. With probability `coupling` the AUs of a
/// [`COOCCURRENCE_GROUPS`] entry share one uniform draw, otherwise each draws its
/// own, so every marginal stays exact while co-occurrence grows with `coupling`.
pub fn synthetic_population(rates: &[f64; 12], count: usize, coupling: f64, seed: u64) -> Vec<LabelVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let mut u = [0.0; 12];
            for group in COOCCURRENCE_GROUPS {
                let shared: f64 = rng.gen();
                let tied = rng.gen::<f64>() < coupling;
                for &c in group {
                    let own: f64 = rng.gen();
                    u[c] = if tied { shared } else { own };
                }
            }
            std::array::from_fn(|c| u8::from(u[c] < rates[c]))
        })
        .collect()
}

/// Population condensed by the pattern of positives over the calibrated columns.
struct PatternSummary {
    /// `(pattern, rows, positives per AU)`.
    patterns: Vec<(u32, f64, [f64; 12])>,
}

impl PatternSummary {
    fn new(labels: &[LabelVector], columns: &[usize]) -> Self {
        let mut map = std::collections::BTreeMap::<u32, (f64, [f64; 12])>::new();
        for l in labels {
            let key = columns.iter().enumerate().fold(0u32, |k, (b, &c)| k | (u32::from(l[c]) << b));
            let e = map.entry(key).or_insert((0.0, [0.0; 12]));
            e.0 += 1.0;
            for (p, &v) in e.1.iter_mut().zip(l) {
                *p += v as f64;
            }
        }
        Self { patterns: map.into_iter().map(|(k, (n, p))| (k, n, p)).collect() }
    }

    fn marginals(&self, multipliers: &[f64; 12], columns: &[usize]) -> [f64; 12] {
        let mut num = [0.0; 12];
        let mut total = 0.0;
        for (key, n, pos) in &self.patterns {
            let w = columns.iter().enumerate().filter(|(b, _)| key >> b & 1 == 1).map(|(_, &c)| multipliers[c]).fold(1.0, f64::max);
            total += w * n;
            for (a, p) in num.iter_mut().zip(pos) {
                *a += w * p;
            }
        }
        num.map(|v| v / total)
    }

    fn error(&self, multipliers: &[f64; 12], columns: &[usize], targets: &[f64; 12]) -> f64 {
        let m = self.marginals(multipliers, columns);
        columns.iter().map(|&c| (m[c] - targets[c]).abs()).fold(0.0, f64::max)
    }
}

/// Largest deviation from `targets` over `columns` under the given multipliers.
pub fn balance_error(labels: &[LabelVector], multipliers: &[f64; 12], columns: &[usize], targets: &[f64; 12]) -> f64 {
    let m = weighted_marginals(labels, &sample_weights(labels, multipliers));
    columns.iter().map(|&c| (m[c] - targets[c]).abs()).fold(0.0, f64::max)
}

/// Coordinate search for multipliers of `columns` within `range` minimizing
/// [`balance_error`]; other AUs keep multiplier 1.
pub fn calibrate_multipliers(
    labels: &[LabelVector],
    columns: &[usize],
    targets: &[f64; 12],
    range: (f64, f64),
) -> Result<[f64; 12]> {
    let (lo, hi) = range;
    if !(lo >= 1.0 && hi >= lo) {
        return Err(Error::invalid("multiplier range", format!("[{lo}, {hi}]")));
    }
    if labels.is_empty() {
        return Err(Error::invalid("calibration", "empty label population"));
    }
    if let Some(c) = columns.iter().find(|&&c| c >= 12) {
        return Err(Error::invalid("calibration", format!("column {c} out of range")));
    }
    let mut mult = [1.0; 12];
    for &c in columns {
        mult[c] = (lo + hi) / 2.0;
    }
    let summary = PatternSummary::new(labels, columns);
    let mut best = summary.error(&mult, columns, targets);
    for step in [0.25, 0.05, 0.01] {
        let grid: Vec<f64> = (0..=((hi - lo) / step).round() as usize).map(|i| (lo + i as f64 * step).min(hi)).collect();
        for _ in 0..50 {
            let mut improved = false;
            for &c in columns {
                let current = mult[c];
                let mut best_v = current;
                for &v in &grid {
                    mult[c] = v;
                    let e = summary.error(&mult, columns, targets);
                    if e < best - 1e-12 {
                        best = e;
                        best_v = v;
                        improved = true;
                    }
                }
                mult[c] = best_v;
            }
            if !improved {
                break;
            }
        }
    }
    Ok(mult)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_take_the_largest_multiplier() {
        let mut m = [1.0; 12];
        m[0] = 5.0;
        m[1] = 6.0;
        let mut only_au6 = [0; 12];
        only_au6[3] = 1;
        let mut au1 = [0; 12];
        au1[0] = 1;
        let mut au1_au2 = au1;
        au1_au2[1] = 1;
        assert_eq!(sample_weights(&[only_au6, au1, au1_au2, [0; 12]], &m), vec![1.0, 5.0, 6.0, 1.0]);
    }

    #[test]
    fn sampler_follows_weights() {
        let s = WeightedSampler::new(&[1.0, 3.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let hits = (0..40_000).filter(|_| s.draw(&mut rng) == 1).count();
        assert!((hits as f64 / 40_000.0 - 0.75).abs() < 0.01);
        assert!(WeightedSampler::new(&[1.0, 0.0]).is_err());
    }

    #[test]
    fn calibration_stays_in_range_and_helps() {
        let pop = synthetic_population(&REFERENCE_RATES, 5000, 0.5, 3);
        let m = calibrate_multipliers(&pop, &MINORITY_COLUMNS, &[0.5; 12], MULTIPLIER_RANGE).unwrap();
        for (c, v) in m.iter().enumerate() {
            if MINORITY_COLUMNS.contains(&c) {
                assert!((4.0..=7.0).contains(v));
            } else {
                assert_eq!(*v, 1.0);
            }
        }
        let flat = balance_error(&pop, &{
            let mut f = [1.0; 12];
            MINORITY_COLUMNS.iter().for_each(|&c| f[c] = 5.5);
            f
        }, &MINORITY_COLUMNS, &[0.5; 12]);
        assert!(balance_error(&pop, &m, &MINORITY_COLUMNS, &[0.5; 12]) <= flat);
    }
}
