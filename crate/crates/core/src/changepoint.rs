//! Exact penalized change-point detection for piecewise-constant signals:
//! optimal partitioning with an L2 cost and linear-penalty pruning, plus a
//! robust noise-scale estimate to set the penalty.

use crate::numerics::mad_sigma;

/// A piecewise-constant segmentation of a sample vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    /// Indices where a new segment starts, strictly inside (0, n), sorted.
    pub change_points: Vec<usize>,
    /// Mean of each segment; one more entry than `change_points`.
    pub segment_means: Vec<f64>,
}

impl Segmentation {
    /// Segment boundaries as (start, end) half-open sample ranges.
    pub fn segments(&self, n: usize) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.change_points.len() + 1);
        let mut start = 0;
        for &cp in &self.change_points {
            out.push((start, cp));
            start = cp;
        }
        out.push((start, n));
        out
    }
}

/// Robust per-sample noise sigma from the median absolute deviation of
/// first differences; insensitive to level steps. Floored at a tiny
/// fraction of the signal span so noiseless traces keep a positive
/// penalty.
pub fn estimate_noise_sigma(samples: &[f64]) -> f64 {
    if samples.len() < 3 {
        return 0.0;
    }
    let diffs: Vec<f64> = samples.windows(2).map(|w| w[1] - w[0]).collect();
    // differencing doubles the variance
    let sigma = mad_sigma(&diffs) / std::f64::consts::SQRT_2;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &s in samples {
        lo = lo.min(s);
        hi = hi.max(s);
    }
    sigma.max(1e-9 * (hi - lo))
}

/// Exact minimization of segmented L2 cost plus `beta` per change point
/// (pruned optimal partitioning). Ties break toward fewer, earlier
/// changes; identical inputs always give identical segmentations.
pub fn penalized_segmentation(samples: &[f64], beta: f64) -> Segmentation {
    let n = samples.len();
    if n == 0 {
        return Segmentation {
            change_points: Vec::new(),
            segment_means: Vec::new(),
        };
    }
    let mut s1 = vec![0.0; n + 1];
    let mut s2 = vec![0.0; n + 1];
    for (i, &x) in samples.iter().enumerate() {
        s1[i + 1] = s1[i] + x;
        s2[i + 1] = s2[i] + x * x;
    }
    // within-segment sum of squared deviations over [a, b)
    let cost = |a: usize, b: usize| -> f64 {
        let len = (b - a) as f64;
        let sum = s1[b] - s1[a];
        (s2[b] - s2[a] - sum * sum / len).max(0.0)
    };

    let mut best = vec![0.0; n + 1];
    best[0] = -beta;
    let mut prev = vec![0usize; n + 1];
    let mut candidates: Vec<usize> = vec![0];
    for t in 1..=n {
        let mut f_best = f64::INFINITY;
        let mut tau_best = 0;
        for &tau in &candidates {
            let f = best[tau] + cost(tau, t) + beta;
            if f < f_best {
                f_best = f;
                tau_best = tau;
            }
        }
        best[t] = f_best;
        prev[t] = tau_best;
        // a candidate that cannot win now can never win later (L2 cost is
        // concatenation-subadditive)
        candidates.retain(|&tau| best[tau] + cost(tau, t) <= f_best);
        candidates.push(t);
    }

    let mut change_points = Vec::new();
    let mut t = n;
    while t > 0 {
        let tau = prev[t];
        if tau > 0 {
            change_points.push(tau);
        }
        t = tau;
    }
    change_points.reverse();

    let mut segment_means = Vec::with_capacity(change_points.len() + 1);
    let mut start = 0;
    for &cp in change_points.iter().chain(std::iter::once(&n)) {
        segment_means.push((s1[cp] - s1[start]) / (cp - start) as f64);
        start = cp;
    }
    Segmentation {
        change_points,
        segment_means,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn step_trace(n: usize, step_at: usize, lo: f64, hi: f64, sigma: f64, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let base = if i < step_at { lo } else { hi };
                base + sigma * (rng.random::<f64>() - 0.5) * 3.46
            })
            .collect()
    }

    #[test]
    fn constant_trace_has_no_changes() {
        let seg = penalized_segmentation(&vec![2.5; 300], 1.0);
        assert!(seg.change_points.is_empty());
        assert_eq!(seg.segment_means, vec![2.5]);
    }

    #[test]
    fn clean_step_found_exactly() {
        let samples = step_trace(400, 250, 0.0, 1.0, 0.0, 1);
        let seg = penalized_segmentation(&samples, 1e-6);
        assert_eq!(seg.change_points, vec![250]);
        assert_relative_eq!(seg.segment_means[0], 0.0);
        assert_relative_eq!(seg.segment_means[1], 1.0);
    }

    #[test]
    fn noisy_step_found_close() {
        let samples = step_trace(600, 371, 0.0, 1.0, 0.07, 3);
        let sigma = estimate_noise_sigma(&samples);
        let beta = 3.0 * sigma * sigma * (samples.len() as f64).ln();
        let seg = penalized_segmentation(&samples, beta);
        assert_eq!(seg.change_points.len(), 1);
        assert!((seg.change_points[0] as i64 - 371).unsigned_abs() <= 2);
    }

    #[test]
    fn blip_and_step_both_found() {
        let mut samples = step_trace(500, 420, 0.0, 1.0, 0.0, 5);
        for s in samples.iter_mut().take(140).skip(100) {
            *s = 1.0;
        }
        let seg = penalized_segmentation(&samples, 1e-6);
        assert_eq!(seg.change_points, vec![100, 140, 420]);
    }

    #[test]
    fn huge_penalty_suppresses_changes() {
        let samples = step_trace(300, 150, 0.0, 1.0, 0.0, 9);
        let seg = penalized_segmentation(&samples, 1e9);
        assert!(seg.change_points.is_empty());
    }

    #[test]
    fn sigma_estimate_tracks_truth() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let normal = rand_distr::Normal::new(0.0, 0.25).unwrap();
        let samples: Vec<f64> = (0..5000)
            .map(|i| {
                let level = if i < 2500 { 0.0 } else { 10.0 };
                level + rand_distr::Distribution::sample(&normal, &mut rng)
            })
            .collect();
        // the level step must not inflate the estimate
        assert_relative_eq!(estimate_noise_sigma(&samples), 0.25, max_relative = 0.08);
    }

    #[test]
    fn segments_cover_input() {
        let samples = step_trace(200, 60, 0.0, 1.0, 0.0, 13);
        let seg = penalized_segmentation(&samples, 1e-6);
        let spans = seg.segments(samples.len());
        assert_eq!(spans.first().unwrap().0, 0);
        assert_eq!(spans.last().unwrap().1, samples.len());
        for w in spans.windows(2) {
            assert_eq!(w[0].1, w[1].0);
        }
    }
}
