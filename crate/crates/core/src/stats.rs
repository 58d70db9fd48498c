//! Small summaries over survival-time samples.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

pub fn summarize(values: &[f64]) -> Summary {
    let n = values.len();
    if n == 0 {
        return Summary {
            n,
            mean: f64::NAN,
            std: f64::NAN,
        };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    Summary {
        n,
        mean,
        std: var.sqrt(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

/// `bins` equal-width bins over `[lo, hi]`; the last bin is closed and
/// out-of-range values are clamped into the end bins.
pub fn histogram(values: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<Bin> {
    let width = (hi - lo) / bins as f64;
    let mut out: Vec<Bin> = (0..bins)
        .map(|k| Bin {
            lo: lo + k as f64 * width,
            hi: if k + 1 == bins { hi } else { lo + (k + 1) as f64 * width },
            count: 0,
        })
        .collect();
    for &v in values {
        let k = (((v - lo) / width).floor().max(0.0) as usize).min(bins - 1);
        out[k].count += 1;
    }
    out
}

/// 1-Wasserstein distance between two empirical distributions on the line,
/// the area between their CDFs.
pub fn wasserstein1(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return f64::NAN;
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let mut points: Vec<f64> = a.iter().chain(&b).copied().collect();
    points.sort_by(f64::total_cmp);
    let (mut ia, mut ib) = (0, 0);
    let mut total = 0.0;
    for w in points.windows(2) {
        while ia < a.len() && a[ia] <= w[0] {
            ia += 1;
        }
        while ib < b.len() && b[ib] <= w[0] {
            ib += 1;
        }
        let fa = ia as f64 / a.len() as f64;
        let fb = ib as f64 / b.len() as f64;
        total += (fa - fb).abs() * (w[1] - w[0]);
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_example() {
        let s = summarize(&[1.0, 3.0]);
        assert_eq!((s.n, s.mean, s.std), (2, 2.0, 1.0));
        assert!(summarize(&[]).mean.is_nan());
    }

    #[test]
    fn histogram_edges() {
        let h = histogram(&[0.0, 9.99, 10.0, 200.0, 250.0, -1.0], 0.0, 200.0, 20);
        assert_eq!(h.len(), 20);
        assert_eq!(h[0].count, 3);
        assert_eq!(h[1].count, 1);
        assert_eq!(h[19].count, 2);
        assert_eq!(h[19].hi, 200.0);
        assert_eq!(h.iter().map(|b| b.count).sum::<usize>(), 6);
    }

    #[test]
    fn wasserstein_examples() {
        assert_eq!(wasserstein1(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert!((wasserstein1(&[0.0], &[3.0]) - 3.0).abs() < 1e-12);
        // Shift by a constant moves every quantile by that constant.
        assert!((wasserstein1(&[0.0, 1.0, 5.0], &[2.0, 3.0, 7.0]) - 2.0).abs() < 1e-12);
        assert!((wasserstein1(&[0.0, 0.0, 1.0, 1.0], &[0.0, 1.0]) - 0.0).abs() < 1e-12);
        assert!((wasserstein1(&[0.0, 10.0], &[5.0]) - 5.0).abs() < 1e-12);
    }
}
