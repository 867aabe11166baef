//! The explicit example law, its closed-form oracle and the forward-backward
//! system verifier.
//!
//! The example law solves `dX = dB + v_t(X) dt`, `X_0 = 0`, with the
//! path-dependent drift
//!
//! ```text
//! v_t = X_t + e^t - I_t,    I_t = int_0^t e^{s-t} (X_s + e^s) ds.
//! ```
//!
//! Differentiating `I` gives `dv = dB + e^t dt` and `v_0 = 1`, hence
//!
//! ```text
//! Y_t = v_t = B_t + e^t,    X_t = B_t + int_0^t B_s ds + e^t - 1,
//! ```
//!
//! so `X_1 ~ N(e - 1, 7/3)`. Under the free Lagrangian `|v|^2/2` the action is
//! `e^2/4` and the residual splits as `A_t = e^t` plus the Brownian motion.

use rand::RngCore;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::ensemble::PathEnsemble;
use crate::error::{invalid, Error, Result};
use crate::exec;
use crate::grid::TimeGrid;
use crate::lagrangian::Potential;
use crate::semimartingale::{Characteristics, SemimartingaleModel};
use crate::stats::{
    default_functionals, default_pairs, ks_test, martingale_test, row_mean, Estimate,
    MartingaleTestReport, NoiseBlock, ProcessSamples,
};

pub const TARGET_MEAN: f64 = std::f64::consts::E - 1.0;
pub const TARGET_VAR: f64 = 7.0 / 3.0;
/// `e^2 / 4`
pub const EXAMPLE_ACTION: f64 = std::f64::consts::E * std::f64::consts::E / 4.0;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ExampleModel;

pub fn example_model() -> ExampleModel {
    ExampleModel
}

/// Carries the Volterra integral through the exponential-decay recursion
/// `I_{i+1} = e^{-dt} (I_i + dt (X_i + e^{t_i}))`.
struct ExampleEval {
    integral: f64,
    prev: Option<(f64, f64)>,
}

impl Characteristics for ExampleEval {
    fn step(&mut self, step: usize, t: f64, prefix: &[f64], drift: &mut [f64], sigma: &mut [f64]) {
        if step == 0 {
            self.integral = 0.0;
        } else if let Some((t_prev, x_prev)) = self.prev {
            let dt = t - t_prev;
            self.integral = (-dt).exp() * (self.integral + dt * (x_prev + t_prev.exp()));
        }
        let x = prefix[step];
        drift[0] = x + t.exp() - self.integral;
        sigma[0] = 1.0;
        self.prev = Some((t, x));
    }
}

impl SemimartingaleModel for ExampleModel {
    fn dim(&self) -> usize {
        1
    }

    fn initial_value(&self, _rng: &mut dyn RngCore, out: &mut [f64]) {
        out[0] = 0.0;
    }

    fn characteristics(&self) -> Box<dyn Characteristics + '_> {
        Box::new(ExampleEval {
            integral: 0.0,
            prev: None,
        })
    }

    fn constant_sigma(&self) -> Option<Vec<f64>> {
        Some(vec![1.0])
    }

    fn descriptor(&self) -> String {
        "example(dX = dB + v(X) dt, v = X + e^t - int e^(s-t)(X_s + e^s) ds)".into()
    }
}

/// Closed-form `(X, Y)` along one path of increments on a grid with step `dt`.
/// The time integral of `B` is a left Riemann sum.
pub fn oracle_path(increments: &[f64], dt: f64) -> (Vec<f64>, Vec<f64>) {
    let n = increments.len();
    let mut x = vec![0.0; n + 1];
    let mut y = vec![0.0; n + 1];
    let (mut b, mut int_b) = (0.0, 0.0);
    for i in 0..=n {
        let e = (i as f64 * dt).exp();
        y[i] = b + e;
        x[i] = b + int_b + e - 1.0;
        if i < n {
            int_b += b * dt;
            b += increments[i];
        }
    }
    (x, y)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OraclePaths {
    pub n_steps: usize,
    pub m_paths: usize,
    /// `m_paths * (n_steps + 1)`
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl OraclePaths {
    pub fn x_path(&self, p: usize) -> &[f64] {
        &self.x[p * (self.n_steps + 1)..(p + 1) * (self.n_steps + 1)]
    }

    pub fn y_path(&self, p: usize) -> &[f64] {
        &self.y[p * (self.n_steps + 1)..(p + 1) * (self.n_steps + 1)]
    }
}

pub fn example_oracle(noise: &NoiseBlock) -> Result<OraclePaths> {
    if noise.dim != 1 {
        return Err(Error::Dimension(format!(
            "the example oracle needs scalar noise, got dim {}",
            noise.dim
        )));
    }
    let rows = exec::map_indexed(noise.m_paths, |p| oracle_path(noise.path(p), noise.dt));
    let mut x = Vec::with_capacity(noise.m_paths * (noise.n_steps + 1));
    let mut y = Vec::with_capacity(x.capacity());
    for (xp, yp) in rows {
        x.extend(xp);
        y.extend(yp);
    }
    Ok(OraclePaths {
        n_steps: noise.n_steps,
        m_paths: noise.m_paths,
        x,
        y,
    })
}

/// Mean over paths of `sup_i |X_i - X_i^oracle|`.
pub fn mean_sup_error(ensemble: &PathEnsemble, oracle: &OraclePaths) -> Result<f64> {
    if ensemble.dim != 1
        || ensemble.m_paths != oracle.m_paths
        || ensemble.n_steps() != oracle.n_steps
    {
        return Err(Error::Dimension("ensemble and oracle shapes differ".into()));
    }
    let per_path = exec::map_indexed(ensemble.m_paths, |p| {
        ensemble
            .path(p)
            .iter()
            .zip(oracle.x_path(p))
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()))
    });
    Ok(exec::ordered_sum(per_path) / ensemble.m_paths as f64)
}

fn target() -> Normal {
    Normal::new(TARGET_MEAN, TARGET_VAR.sqrt()).expect("valid parameters")
}

/// Density of `N(e - 1, 7/3)`, the terminal law of the example.
pub fn target_density(x: f64) -> f64 {
    target().pdf(x)
}

pub fn target_cdf(x: f64) -> f64 {
    target().cdf(x)
}

/// Endpoint law of one coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Marginal {
    Dirac { point: f64 },
    Gaussian { mean: f64, var: f64 },
}

impl Marginal {
    pub fn example_terminal() -> Self {
        Marginal::Gaussian {
            mean: TARGET_MEAN,
            var: TARGET_VAR,
        }
    }
}

const DIRAC_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalCheck {
    pub time: f64,
    pub law: Marginal,
    /// Present for continuous laws.
    pub ks_p: Option<f64>,
    /// Present for Dirac laws.
    pub max_deviation: Option<f64>,
    pub pass: bool,
}

fn check_marginal(samples: &[f64], law: Marginal, time: f64, alpha: f64) -> Result<MarginalCheck> {
    Ok(match law {
        Marginal::Dirac { point } => {
            let dev = samples
                .iter()
                .fold(0.0_f64, |m, x| m.max((x - point).abs()));
            MarginalCheck {
                time,
                law,
                ks_p: None,
                max_deviation: Some(dev),
                pass: dev <= DIRAC_TOL,
            }
        }
        Marginal::Gaussian { mean, var } => {
            if !(var > 0.0) {
                return Err(invalid("var", "must be positive"));
            }
            let normal =
                Normal::new(mean, var.sqrt()).map_err(|e| invalid("marginal", e.to_string()))?;
            let ks = ks_test(samples, |x| normal.cdf(x))?;
            MarginalCheck {
                time,
                law,
                ks_p: Some(ks.p_value),
                max_deviation: None,
                pass: ks.p_value > alpha,
            }
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    /// `E[int |Y|^2 dt]`
    pub y_energy: Estimate,
    /// `E[int |grad V(X)|^2 dt]`
    pub grad_v_energy: Estimate,
    pub finite: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FbsReport {
    pub initial: MarginalCheck,
    pub terminal: MarginalCheck,
    pub marginal_ks_p: Option<f64>,
    pub marginals_pass: bool,
    /// One test per coordinate, each at `alpha / dim`.
    pub backward_test: Vec<MartingaleTestReport>,
    pub backward_pass: bool,
    /// Mean over paths of the realized quadratic variation of `M` (trace).
    pub qv_realized: f64,
    /// Mean over paths of `int tr(alpha) dt`.
    pub qv_expected: f64,
    pub qv_error: f64,
    pub qv_pass: bool,
    pub moments: Moments,
    pub verdict: bool,
}

/// Checks that the ensemble solves the forward-backward system with
/// potential `V`:
///
/// * marginals at times 0 and 1 match `nu0`, `nu1` (exact for Dirac laws,
///   KS at level `alpha` otherwise), applied to coordinate 0;
/// * `Y_t - E[Y_t] - int_0^t (grad V(X) - E[grad V(X)]) ds` passes the
///   martingale test;
/// * `M = X - X_0 - int Y dt` has realized quadratic variation within
///   `qv_tol` of `int tr(alpha) dt`;
/// * `E[int |Y|^2]` and `E[int |grad V(X)|^2]` are finite.
pub fn fbs_verify<P: Potential + ?Sized>(
    ensemble: &PathEnsemble,
    potential: &P,
    nu0: Marginal,
    nu1: Marginal,
    alpha: f64,
    qv_tol: f64,
) -> Result<FbsReport> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(invalid("alpha", "must lie in (0, 1)"));
    }
    let d = ensemble.dim;
    let n = ensemble.n_steps();
    let m = ensemble.m_paths;
    let dt = ensemble.grid.dt();

    let initial = check_marginal(&ensemble.marginal(0, 0), nu0, 0.0, alpha)?;
    let terminal = check_marginal(&ensemble.terminal_marginal(0), nu1, 1.0, alpha)?;

    // Per path: raw backward process (Y - int grad V), its left-sum gradient,
    // and the energies.
    let w = n * d;
    let per_path = exec::map_indexed(m, |p| {
        let mut z = vec![0.0; w];
        let mut g = vec![0.0; d];
        let mut running = vec![0.0; d];
        let (mut y_en, mut g_en) = (0.0, 0.0);
        for i in 0..n {
            let y = ensemble.drift_at(p, i);
            potential.grad(ensemble.value(p, i), &mut g);
            for c in 0..d {
                z[i * d + c] = y[c] - running[c];
                running[c] += g[c] * dt;
                y_en += y[c] * y[c] * dt;
                g_en += g[c] * g[c] * dt;
            }
        }
        let x = ensemble.path(p);
        let mut qv = 0.0;
        let mut qv_exp = 0.0;
        for i in 0..n {
            let a = ensemble.dispersion_at(p, i);
            for c in 0..d {
                let dm = x[(i + 1) * d + c] - x[i * d + c] - ensemble.drift_at(p, i)[c] * dt;
                qv += dm * dm;
                qv_exp += a[c * d + c] * dt;
            }
        }
        (z, y_en, g_en, qv, qv_exp)
    });

    let mut z = Vec::with_capacity(m * w);
    let (mut y_en, mut g_en, mut qv, mut qv_exp) = (vec![], vec![], vec![], vec![]);
    for (zp, a, b, c, e) in per_path {
        z.extend(zp);
        y_en.push(a);
        g_en.push(b);
        qv.push(c);
        qv_exp.push(e);
    }
    let mean = row_mean(&z, w);
    exec::for_each_row_mut(&mut z, w, |_, row| {
        row.iter_mut().zip(&mean).for_each(|(v, s)| *v -= s)
    });

    let functionals = default_functionals(d);
    let mut backward_test = Vec::with_capacity(d);
    for c in 0..d {
        let values: Vec<f64> = z.iter().skip(c).step_by(d).copied().collect();
        let samples = ProcessSamples {
            grid: &ensemble.grid,
            m_paths: m,
            len: n,
            values: &values,
            paths: Some((&ensemble.paths, d)),
        };
        backward_test.push(martingale_test(
            &samples,
            &functionals,
            &default_pairs(),
            alpha / d as f64,
        )?);
    }
    let backward_pass = backward_test.iter().all(|r| r.pass);

    let qv_realized = exec::ordered_sum(qv) / m as f64;
    let qv_expected = exec::ordered_sum(qv_exp) / m as f64;
    let qv_error = (qv_realized - qv_expected).abs();
    let qv_pass = qv_error <= qv_tol;

    let y_energy = Estimate::from_samples(&y_en);
    let grad_v_energy = Estimate::from_samples(&g_en);
    let finite = y_energy.value.is_finite() && grad_v_energy.value.is_finite();
    let marginals_pass = initial.pass && terminal.pass;
    Ok(FbsReport {
        marginal_ks_p: terminal.ks_p,
        initial,
        terminal,
        marginals_pass,
        backward_test,
        backward_pass,
        qv_realized,
        qv_expected,
        qv_error,
        qv_pass,
        moments: Moments {
            y_energy,
            grad_v_energy,
            finite,
        },
        verdict: marginals_pass && backward_pass && qv_pass && finite,
    })
}

/// Checks `X_t = e^t - 1` and `v_t = e^t` along the zero-noise path; returns
/// the largest deviation.
pub fn zero_noise_residual(grid: &TimeGrid) -> Result<f64> {
    let noise = NoiseBlock {
        seed: 0,
        m_paths: 1,
        n_steps: grid.n_steps(),
        dim: 1,
        dt: grid.dt(),
        increments: vec![0.0; grid.n_steps()],
    };
    let e = crate::semimartingale::simulate_with_noise(&ExampleModel, grid, &noise)?;
    let mut worst = 0.0_f64;
    for i in 0..=grid.n_steps() {
        let t = grid.t(i);
        worst = worst.max((e.value(0, i)[0] - (t.exp() - 1.0)).abs());
        if i < grid.n_steps() {
            worst = worst.max((e.drift_at(0, i)[0] - t.exp()).abs());
        }
    }
    Ok(worst)
}
