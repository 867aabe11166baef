//! Martingale test by increment orthogonality.
//!
//! A square-integrable adapted process `Z` is a martingale iff its
//! increments `Z_t - Z_s` are orthogonal to every bounded functional of the
//! path up to `s`. The test below checks that property for a finite family
//! of functionals and time pairs, standardizing each empirical moment
//! `E[(Z_t - Z_s) phi]` by its Monte Carlo standard error and rejecting when
//! the largest |t| exceeds a Bonferroni-corrected Gaussian threshold.
//!
//! A finite family can only refute the martingale property. Passing the test
//! is evidence, not a certificate.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{invalid, Error, Result};
use crate::exec;
use crate::grid::TimeGrid;

pub const DEFAULT_CLIP: f64 = 5.0;
const MIN_PATHS: usize = 1000;

/// Adapted test functionals evaluated on the path prefix at time `s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TestFunctional {
    One,
    /// Coordinate of the underlying path `W_s`.
    PathCoord(usize),
    /// The tested process itself, `Z_s`.
    Level,
    LevelSquared,
    /// `clamp(W_s[coord] * Z_s, -bound, bound)`.
    ClippedCross {
        coord: usize,
        bound: f64,
    },
}

impl TestFunctional {
    pub fn label(&self) -> String {
        match self {
            TestFunctional::One => "1".into(),
            TestFunctional::PathCoord(c) => format!("W_s[{c}]"),
            TestFunctional::Level => "Z_s".into(),
            TestFunctional::LevelSquared => "Z_s^2".into(),
            TestFunctional::ClippedCross { coord, bound } => {
                format!("clip(W_s[{coord}]*Z_s,{bound})")
            }
        }
    }

    fn needs_path(&self) -> Option<usize> {
        match self {
            TestFunctional::PathCoord(c) | TestFunctional::ClippedCross { coord: c, .. } => {
                Some(*c)
            }
            _ => None,
        }
    }
}

/// `{1, W_s (each coordinate), Z_s, Z_s^2, clip(W_s * Z_s)}`.
pub fn default_functionals(path_dim: usize) -> Vec<TestFunctional> {
    let mut out = vec![TestFunctional::One];
    out.extend((0..path_dim).map(TestFunctional::PathCoord));
    out.push(TestFunctional::Level);
    out.push(TestFunctional::LevelSquared);
    out.extend((0..path_dim).map(|coord| TestFunctional::ClippedCross {
        coord,
        bound: DEFAULT_CLIP,
    }));
    out
}

pub fn default_pairs() -> Vec<(f64, f64)> {
    vec![(0.25, 0.5), (0.5, 0.75), (0.75, 1.0), (0.25, 1.0)]
}

/// A scalar process sampled on a grid, optionally with the paths it is a
/// functional of.
#[derive(Debug, Clone, Copy)]
pub struct ProcessSamples<'a> {
    pub grid: &'a TimeGrid,
    pub m_paths: usize,
    /// Samples per path: `n_steps` (interval-indexed) or `n_steps + 1`.
    pub len: usize,
    pub values: &'a [f64],
    /// `(values, dim)` with `m_paths * (n_steps + 1) * dim` entries.
    pub paths: Option<(&'a [f64], usize)>,
}

impl<'a> ProcessSamples<'a> {
    /// Grid index used for time `t`; times past the last sample map to it.
    pub fn index_of(&self, t: f64) -> usize {
        self.grid.index_of(t).min(self.len - 1)
    }

    fn z(&self, p: usize, i: usize) -> f64 {
        self.values[p * self.len + i]
    }

    fn w(&self, p: usize, i: usize, c: usize) -> f64 {
        let (vals, d) = self.paths.expect("checked before use");
        let w = (self.grid.n_steps() + 1) * d;
        vals[p * w + i * d + c]
    }

    fn phi(&self, f: &TestFunctional, p: usize, s: usize) -> f64 {
        match f {
            TestFunctional::One => 1.0,
            TestFunctional::PathCoord(c) => self.w(p, s, *c),
            TestFunctional::Level => self.z(p, s),
            TestFunctional::LevelSquared => {
                let z = self.z(p, s);
                z * z
            }
            TestFunctional::ClippedCross { coord, bound } => {
                (self.w(p, s, *coord) * self.z(p, s)).clamp(-bound, *bound)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub s: f64,
    pub t: f64,
    pub functional: String,
    pub mean: f64,
    pub se: f64,
    /// `None` when the functional vanished on every path.
    pub t_stat: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MartingaleTestReport {
    pub pairs: Vec<(f64, f64)>,
    pub functionals: Vec<String>,
    pub cells: Vec<CellResult>,
    pub t_stats: Vec<f64>,
    pub skipped: usize,
    pub max_abs_t: f64,
    pub threshold: f64,
    pub alpha: f64,
    pub pass: bool,
}

/// Two-sided Gaussian critical value at level `alpha / n_tests`.
pub fn two_sided_threshold(alpha: f64, n_tests: usize) -> f64 {
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    normal.inverse_cdf(1.0 - alpha / (2.0 * n_tests.max(1) as f64))
}

pub fn martingale_test(
    process: &ProcessSamples<'_>,
    functionals: &[TestFunctional],
    pairs: &[(f64, f64)],
    alpha: f64,
) -> Result<MartingaleTestReport> {
    if process.m_paths < MIN_PATHS {
        return Err(Error::TooFewSamples {
            needed: MIN_PATHS,
            got: process.m_paths,
        });
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(invalid("alpha", "must lie in (0, 1)"));
    }
    if process.len == 0 || process.values.len() != process.m_paths * process.len {
        return Err(Error::LengthMismatch {
            what: "process samples",
            expected: process.m_paths * process.len,
            got: process.values.len(),
        });
    }
    if functionals.is_empty() || pairs.is_empty() {
        return Err(Error::Empty("functionals or pairs"));
    }
    for f in functionals {
        if let Some(c) = f.needs_path() {
            match process.paths {
                Some((_, d)) if c < d => {}
                _ => {
                    return Err(Error::Dimension(format!(
                        "functional {} needs path coordinate {c}",
                        f.label()
                    )))
                }
            }
        }
    }
    let mut index_pairs = Vec::with_capacity(pairs.len());
    for &(s, t) in pairs {
        let (si, ti) = (process.index_of(s), process.index_of(t));
        if !(s < t) || si >= ti {
            return Err(invalid(
                "pairs",
                format!("need s < t on the grid, got ({s}, {t})"),
            ));
        }
        index_pairs.push((si, ti));
    }

    let m = process.m_paths;
    let mut cells = Vec::new();
    for (&(s, t), &(si, ti)) in pairs.iter().zip(&index_pairs) {
        for f in functionals {
            let any_nonzero = (0..m).any(|p| process.phi(f, p, si) != 0.0);
            let (sum, sum_sq) = exec::sum_and_sq_indexed(m, |p| {
                (process.z(p, ti) - process.z(p, si)) * process.phi(f, p, si)
            });
            let mean = sum / m as f64;
            let var = ((sum_sq - m as f64 * mean * mean) / (m as f64 - 1.0)).max(0.0);
            let se = (var / m as f64).sqrt();
            let t_stat = if !any_nonzero {
                None
            } else if se > 0.0 {
                Some(mean / se)
            } else if mean == 0.0 {
                Some(0.0)
            } else {
                Some(mean.signum() * f64::INFINITY)
            };
            cells.push(CellResult {
                s,
                t,
                functional: f.label(),
                mean,
                se,
                t_stat,
            });
        }
    }
    let t_stats: Vec<f64> = cells.iter().filter_map(|c| c.t_stat).collect();
    let skipped = cells.len() - t_stats.len();
    let threshold = two_sided_threshold(alpha, t_stats.len());
    let max_abs_t = t_stats.iter().fold(0.0_f64, |a, t| a.max(t.abs()));
    Ok(MartingaleTestReport {
        pairs: pairs.to_vec(),
        functionals: functionals.iter().map(|f| f.label()).collect(),
        cells,
        t_stats,
        skipped,
        max_abs_t,
        threshold,
        alpha,
        pass: max_abs_t < threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;
    use crate::stats::gaussian_stream;

    fn brownian(m: usize, n: usize, seed: u64) -> (TimeGrid, Vec<f64>) {
        let g = make_grid(n).unwrap();
        let noise = gaussian_stream(seed, m, &g, 1).unwrap();
        let vals = (0..m).flat_map(|p| noise.brownian_path(p)).collect();
        (g, vals)
    }

    /// Z_t = int_0^t e^{t-u} dB_u on the grid (exact AR(1) recursion).
    fn ou(m: usize, n: usize, seed: u64) -> (TimeGrid, Vec<f64>) {
        let g = make_grid(n).unwrap();
        let noise = gaussian_stream(seed, m, &g, 1).unwrap();
        let a = g.dt().exp();
        let mut vals = vec![0.0; m * (n + 1)];
        for p in 0..m {
            for i in 0..n {
                vals[p * (n + 1) + i + 1] = a * vals[p * (n + 1) + i] + noise.path(p)[i];
            }
        }
        (g, vals)
    }

    fn samples<'a>(g: &'a TimeGrid, vals: &'a [f64], m: usize) -> ProcessSamples<'a> {
        ProcessSamples {
            grid: g,
            m_paths: m,
            len: g.n_steps() + 1,
            values: vals,
            paths: Some((vals, 1)),
        }
    }

    #[test]
    fn brownian_passes_single_cell() {
        let (g, vals) = brownian(5000, 64, 1);
        let r = martingale_test(
            &samples(&g, &vals, 5000),
            &[TestFunctional::Level],
            &[(0.5, 1.0)],
            0.01,
        )
        .unwrap();
        assert!(r.pass, "{:?}", r.max_abs_t);
    }

    #[test]
    fn exponential_growth_process_fails() {
        let m = 20_000;
        let (g, vals) = ou(m, 64, 2);
        let r = martingale_test(
            &samples(&g, &vals, m),
            &[TestFunctional::Level],
            &[(0.5, 1.0)],
            0.01,
        )
        .unwrap();
        assert!(!r.pass);
        // Population value (e^{1/2} - 1)(e - 1)/2.
        let pop = (0.5_f64.exp() - 1.0) * (1.0_f64.exp() - 1.0) / 2.0;
        assert!((pop - 0.5573).abs() < 1e-4);
        assert!((r.cells[0].mean - pop).abs() < 5.0 * r.cells[0].se + 0.01);
        assert!(r.max_abs_t > 20.0);
    }

    #[test]
    fn constant_process_has_zero_statistics() {
        let g = make_grid(8).unwrap();
        let vals = vec![3.0; 1000 * 9];
        let r = martingale_test(
            &samples(&g, &vals, 1000),
            &default_functionals(1),
            &default_pairs(),
            0.01,
        )
        .unwrap();
        assert!(r.pass);
        assert_eq!(r.max_abs_t, 0.0);
        assert_eq!(r.skipped, 0);
    }

    #[test]
    fn vanishing_functional_is_skipped() {
        let g = make_grid(8).unwrap();
        let vals = vec![0.0; 1000 * 9];
        let r = martingale_test(
            &samples(&g, &vals, 1000),
            &[TestFunctional::One, TestFunctional::Level],
            &[(0.25, 0.5)],
            0.01,
        )
        .unwrap();
        assert_eq!(r.skipped, 1);
        assert!(r.pass);
        assert_eq!(r.cells[1].t_stat, None);
    }

    #[test]
    fn deterministic_drift_is_infinite_t() {
        let g = make_grid(4).unwrap();
        let vals: Vec<f64> = (0..1000).flat_map(|_| g.times().to_vec()).collect();
        let r = martingale_test(
            &samples(&g, &vals, 1000),
            &[TestFunctional::One],
            &[(0.25, 0.5)],
            0.01,
        )
        .unwrap();
        assert!(!r.pass);
        assert!(r.max_abs_t.is_infinite());
    }

    #[test]
    fn precondition_errors() {
        let (g, vals) = brownian(100, 8, 1);
        let s = samples(&g, &vals, 100);
        assert!(matches!(
            martingale_test(&s, &[TestFunctional::One], &[(0.0, 1.0)], 0.01),
            Err(Error::TooFewSamples { .. })
        ));
        let (g, vals) = brownian(1000, 8, 1);
        let s = samples(&g, &vals, 1000);
        assert!(martingale_test(&s, &[TestFunctional::One], &[(0.5, 0.5)], 0.01).is_err());
        let no_path = ProcessSamples { paths: None, ..s };
        assert!(matches!(
            martingale_test(
                &no_path,
                &[TestFunctional::PathCoord(0)],
                &[(0.0, 1.0)],
                0.01
            ),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn threshold_is_bonferroni_gaussian() {
        assert!((two_sided_threshold(0.05, 1) - 1.959964).abs() < 1e-5);
        assert!((two_sided_threshold(0.01, 20) - 3.480756).abs() < 1e-4);
    }

    #[test]
    fn true_martingales_pass_at_nominal_rate() {
        let alpha = 0.05;
        let seeds = 60;
        let passes = (0..seeds)
            .filter(|&s| {
                let (g, vals) = brownian(1500, 16, 500 + s);
                martingale_test(
                    &samples(&g, &vals, 1500),
                    &default_functionals(1),
                    &default_pairs(),
                    alpha,
                )
                .unwrap()
                .pass
            })
            .count();
        // Bonferroni is conservative, so the pass rate should be at least 1 - alpha.
        assert!(
            passes as f64 >= (1.0 - alpha) * seeds as f64 - 1.0,
            "{passes}/{seeds}"
        );
    }
}
