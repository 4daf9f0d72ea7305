//! Discrete inverse-transform sampling over a fixed ordering.

use rand::Rng;

/// Cumulative table for weights `w_0..w_{n-1}`; index `i` is drawn with
/// probability `w_i / Σw`.
#[derive(Debug, Clone)]
pub struct Categorical {
    cdf: Vec<f64>,
}

impl Categorical {
    /// Returns `None` if the weights are empty, negative, non-finite, or all zero.
    pub fn new(weights: &[f64]) -> Option<Self> {
        let mut cdf = Vec::with_capacity(weights.len());
        let mut acc = 0.0;
        for &w in weights {
            if !(w.is_finite() && w >= 0.0) {
                return None;
            }
            acc += w;
            cdf.push(acc);
        }
        if acc <= 0.0 {
            return None;
        }
        Some(Categorical { cdf })
    }

    pub fn len(&self) -> usize {
        self.cdf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cdf.is_empty()
    }

    pub fn total(&self) -> f64 {
        *self.cdf.last().unwrap()
    }

    pub fn prob(&self, i: usize) -> f64 {
        let lo = if i == 0 { 0.0 } else { self.cdf[i - 1] };
        (self.cdf[i] - lo) / self.total()
    }

    /// Smallest `i` with `u·Σw < cdf_i`, for `u` uniform in `[0,1)`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u = rng.random::<f64>() * self.total();
        let i = self.cdf.partition_point(|&c| c <= u);
        // zero-weight tail entries share the final cdf value
        i.min(self.cdf.len() - 1)
    }
}

/// Pearson χ² statistic of observed counts against expected probabilities.
/// Cells with zero expectation are skipped.
pub fn chi_square(counts: &[u64], probs: &[f64]) -> (f64, usize) {
    let n: u64 = counts.iter().sum();
    let mut stat = 0.0;
    let mut cells = 0usize;
    for (&c, &p) in counts.iter().zip(probs) {
        let e = p * n as f64;
        if e > 0.0 {
            stat += (c as f64 - e).powi(2) / e;
            cells += 1;
        }
    }
    (stat, cells.saturating_sub(1))
}

/// Upper 1% quantile of the χ² distribution (Wilson–Hilferty approximation).
pub fn chi_square_critical_01(dof: usize) -> f64 {
    let k = dof.max(1) as f64;
    let z = 2.326_347_874_040_841;
    let t = 1.0 - 2.0 / (9.0 * k) + z * (2.0 / (9.0 * k)).sqrt();
    k * t.powi(3)
}
