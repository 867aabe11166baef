//! Random number streams, goodness-of-fit and martingale tests.

mod ks;
mod martingale;
mod rng;

pub use ks::{kolmogorov_survival, ks_statistic, ks_test, KsResult};
pub use martingale::{
    default_functionals, default_pairs, martingale_test, two_sided_threshold, CellResult,
    MartingaleTestReport, ProcessSamples, TestFunctional, DEFAULT_CLIP,
};
pub use rng::{fill_path_noise, gaussian_stream, initial_rng, noise_rng, NoiseBlock};

use serde::{Deserialize, Serialize};

/// Monte Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
    pub n: usize,
}

impl Estimate {
    /// From the sum and sum of squares of `n` i.i.d. contributions.
    pub fn from_sums(sum: f64, sum_sq: f64, n: usize) -> Self {
        let nf = n as f64;
        let mean = sum / nf;
        let var = if n > 1 {
            ((sum_sq - nf * mean * mean) / (nf - 1.0)).max(0.0)
        } else {
            0.0
        };
        Self {
            value: mean,
            se: (var / nf).sqrt(),
            n,
        }
    }

    pub fn from_samples(xs: &[f64]) -> Self {
        let (s, q) = xs.iter().fold((0.0, 0.0), |(s, q), &v| (s + v, q + v * v));
        Self::from_sums(s, q, xs.len())
    }
}

/// Column means of `m` rows of `width` values stored back to back.
///
/// Accumulates deviations from the first row, so columns that are constant
/// across rows come out as exactly that constant.
pub fn row_mean(values: &[f64], width: usize) -> Vec<f64> {
    if width == 0 || values.is_empty() {
        return vec![0.0; width];
    }
    let m = values.len() / width;
    let anchor = &values[..width];
    let mut acc = vec![0.0; width];
    for row in values.chunks(width).skip(1) {
        for ((a, v), r) in acc.iter_mut().zip(row).zip(anchor) {
            *a += v - r;
        }
    }
    acc.iter_mut()
        .zip(anchor)
        .for_each(|(a, r)| *a = r + *a / m as f64);
    acc
}

/// Sample mean and unbiased variance.
pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var)
}
