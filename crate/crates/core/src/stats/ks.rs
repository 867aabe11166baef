//! One-sample Kolmogorov–Smirnov test with the asymptotic Kolmogorov
//! distribution.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SERIES_TERMS: usize = 100;
const MIN_SAMPLES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
}

/// `sup_x |F_n(x) - F(x)|`, evaluated at both sides of each jump of the
/// empirical cdf.
pub fn ks_statistic<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Empty("samples"));
    }
    if samples.iter().any(|v| v.is_nan()) {
        return Err(Error::NanSample);
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let n = sorted.len() as f64;
    let d = sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            let above = (i + 1) as f64 / n - f;
            let below = f - i as f64 / n;
            above.max(below)
        })
        .fold(0.0_f64, f64::max);
    Ok(d)
}

/// `P(K > lambda)` for the Kolmogorov distribution.
///
/// Large arguments use the alternating series `2 sum (-1)^{k-1} e^{-2k^2 l^2}`;
/// small ones the theta-function form of the cdf, which converges fast
/// where the alternating series does not.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.18 {
        let pref = (2.0 * std::f64::consts::PI).sqrt() / lambda;
        let a = std::f64::consts::PI * std::f64::consts::PI / (8.0 * lambda * lambda);
        let cdf: f64 = (1..=SERIES_TERMS)
            .map(|k| {
                let j = (2 * k - 1) as f64;
                (-j * j * a).exp()
            })
            .sum::<f64>()
            * pref;
        (1.0 - cdf).clamp(0.0, 1.0)
    } else {
        let s: f64 = (1..=SERIES_TERMS)
            .map(|k| {
                let kf = k as f64;
                let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
                sign * (-2.0 * kf * kf * lambda * lambda).exp()
            })
            .sum();
        (2.0 * s).clamp(0.0, 1.0)
    }
}

/// One-sample KS test of `samples` against a continuous `cdf`.
pub fn ks_test<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> Result<KsResult> {
    if samples.iter().any(|v| v.is_nan()) {
        return Err(Error::NanSample);
    }
    if samples.len() < MIN_SAMPLES {
        return Err(Error::TooFewSamples {
            needed: MIN_SAMPLES,
            got: samples.len(),
        });
    }
    let statistic = ks_statistic(samples, cdf)?;
    let n = samples.len();
    let p_value = kolmogorov_survival((n as f64).sqrt() * statistic);
    Ok(KsResult {
        statistic,
        p_value,
        n,
    })
}
