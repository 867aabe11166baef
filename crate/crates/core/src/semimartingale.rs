//! Generative semimartingale models and their Euler–Maruyama simulation.
//!
//! A model supplies an initial law and, per path, a stateful evaluator of
//! the drift `b(t_i, X_0..X_i)` and noise coefficient `sigma(t_i, X_0..X_i)`.
//! The evaluator only ever receives the path prefix up to the current step,
//! so every shipped model is adapted by construction. Simulation follows the
//! scheme
//!
//! ```text
//! X_{i+1} = X_i + sigma_i dB_i + b_i dt
//! ```
//!
//! and stores `v_i = b_i` and `alpha_i = sigma_i sigma_i^T` as the drift and
//! dispersion characteristics of the simulated law.

use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::ensemble::{Dispersion, PathEnsemble};
use crate::error::{invalid, Error, Result};
use crate::exec;
use crate::grid::TimeGrid;
use crate::lagrangian::Lagrangian;
use crate::stats::{fill_path_noise, initial_rng, noise_rng, NoiseBlock};

/// Per-path evaluator of the characteristics.
pub trait Characteristics {
    /// Called once per step, in increasing step order. `prefix` holds
    /// `X_0, ..., X_step` (row-major, `dim` values each); `drift` has `dim`
    /// entries and `sigma` is `dim x noise_dim`, row-major.
    fn step(&mut self, step: usize, t: f64, prefix: &[f64], drift: &mut [f64], sigma: &mut [f64]);
}

pub trait SemimartingaleModel: Send + Sync {
    fn dim(&self) -> usize;

    fn noise_dim(&self) -> usize {
        self.dim()
    }

    fn initial_value(&self, rng: &mut dyn RngCore, out: &mut [f64]);

    fn characteristics(&self) -> Box<dyn Characteristics + '_>;

    /// Set when `sigma` does not depend on time or path; lets the ensemble
    /// store a single dispersion matrix.
    fn constant_sigma(&self) -> Option<Vec<f64>> {
        None
    }

    fn descriptor(&self) -> String;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialLaw {
    Dirac { point: Vec<f64> },
    Gaussian { mean: Vec<f64>, sd: Vec<f64> },
}

impl InitialLaw {
    pub fn sample(&self, rng: &mut dyn RngCore, out: &mut [f64]) {
        match self {
            InitialLaw::Dirac { point } => out.copy_from_slice(point),
            InitialLaw::Gaussian { mean, sd } => {
                for ((o, m), s) in out.iter_mut().zip(mean).zip(sd) {
                    let z: f64 = StandardNormal.sample(rng);
                    *o = m + s * z;
                }
            }
        }
    }
}

/// `dX = (c + K X) dt + S dB`, with constant `c`, `K`, `S`.
///
/// Covers the Wiener law (`c = 0, K = 0, S = I`), constant-drift laws and the
/// exponentially growing control `dX = dB + X dt`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSde {
    pub dim: usize,
    pub initial: InitialLaw,
    pub drift_const: Vec<f64>,
    /// `dim x dim`, row-major
    pub drift_lin: Vec<f64>,
    /// `dim x dim`, row-major
    pub sigma: Vec<f64>,
    pub name: String,
}

fn identity(d: usize) -> Vec<f64> {
    let mut m = vec![0.0; d * d];
    (0..d).for_each(|i| m[i * d + i] = 1.0);
    m
}

impl LinearSde {
    pub fn new(
        dim: usize,
        initial: InitialLaw,
        drift_const: Vec<f64>,
        drift_lin: Vec<f64>,
        sigma: Vec<f64>,
        name: impl Into<String>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("dim", "must be positive"));
        }
        let init_len = match &initial {
            InitialLaw::Dirac { point } => point.len(),
            InitialLaw::Gaussian { mean, sd } if mean.len() == sd.len() => mean.len(),
            InitialLaw::Gaussian { .. } => usize::MAX,
        };
        if init_len != dim
            || drift_const.len() != dim
            || drift_lin.len() != dim * dim
            || sigma.len() != dim * dim
        {
            return Err(Error::Dimension(format!(
                "linear SDE coefficients inconsistent with dim {dim}"
            )));
        }
        Ok(Self {
            dim,
            initial,
            drift_const,
            drift_lin,
            sigma,
            name: name.into(),
        })
    }

    pub fn wiener(dim: usize) -> Self {
        Self::new(
            dim,
            InitialLaw::Dirac {
                point: vec![0.0; dim],
            },
            vec![0.0; dim],
            vec![0.0; dim * dim],
            identity(dim),
            "wiener",
        )
        .expect("consistent by construction")
    }

    /// One-dimensional `dX = b dt + s dB`, `X_0 = 0`.
    pub fn constant(drift: f64, sigma: f64) -> Self {
        Self::new(
            1,
            InitialLaw::Dirac { point: vec![0.0] },
            vec![drift],
            vec![0.0],
            vec![sigma],
            format!("constant(drift={drift},sigma={sigma})"),
        )
        .expect("consistent by construction")
    }

    /// `dX = dB + X dt`, `X_0 = 0`.
    pub fn exponential_growth() -> Self {
        Self::new(
            1,
            InitialLaw::Dirac { point: vec![0.0] },
            vec![0.0],
            vec![1.0],
            vec![1.0],
            "ou_control(dX = dB + X dt)",
        )
        .expect("consistent by construction")
    }
}

struct LinearEval<'a>(&'a LinearSde);

impl Characteristics for LinearEval<'_> {
    fn step(&mut self, step: usize, _t: f64, prefix: &[f64], drift: &mut [f64], sigma: &mut [f64]) {
        let m = self.0;
        let d = m.dim;
        let x = &prefix[step * d..(step + 1) * d];
        for r in 0..d {
            drift[r] =
                m.drift_const[r] + (0..d).map(|c| m.drift_lin[r * d + c] * x[c]).sum::<f64>();
        }
        sigma.copy_from_slice(&m.sigma);
    }
}

impl SemimartingaleModel for LinearSde {
    fn dim(&self) -> usize {
        self.dim
    }

    fn initial_value(&self, rng: &mut dyn RngCore, out: &mut [f64]) {
        self.initial.sample(rng, out)
    }

    fn characteristics(&self) -> Box<dyn Characteristics + '_> {
        Box::new(LinearEval(self))
    }

    fn constant_sigma(&self) -> Option<Vec<f64>> {
        Some(self.sigma.clone())
    }

    fn descriptor(&self) -> String {
        self.name.clone()
    }
}

/// `sigma sigma^T` for a `d x m` matrix.
pub fn outer_square(sigma: &[f64], d: usize, m: usize, out: &mut [f64]) {
    for r in 0..d {
        for c in 0..d {
            out[r * d + c] = (0..m).map(|k| sigma[r * m + k] * sigma[c * m + k]).sum();
        }
    }
}

/// Euler–Maruyama for one path given its increments.
#[allow(clippy::too_many_arguments)]
fn run_path<M: SemimartingaleModel + ?Sized>(
    model: &M,
    grid: &TimeGrid,
    path_index: usize,
    increments: &[f64],
    init_rng: &mut dyn RngCore,
    x: &mut [f64],
    drift: &mut [f64],
    mut alpha: Option<&mut [f64]>,
) -> Result<()> {
    let d = model.dim();
    let m = model.noise_dim();
    let dt = grid.dt();
    model.initial_value(init_rng, &mut x[..d]);
    if x[..d].iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: "initial value",
            path: path_index,
            step: 0,
        });
    }
    let mut ev = model.characteristics();
    let mut b = vec![0.0; d];
    let mut s = vec![0.0; d * m];
    for i in 0..grid.n_steps() {
        ev.step(i, grid.t(i), &x[..(i + 1) * d], &mut b, &mut s);
        if b.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "drift",
                path: path_index,
                step: i,
            });
        }
        if s.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "dispersion",
                path: path_index,
                step: i,
            });
        }
        let db = &increments[i * m..(i + 1) * m];
        for r in 0..d {
            let noise: f64 = (0..m).map(|k| s[r * m + k] * db[k]).sum();
            x[(i + 1) * d + r] = x[i * d + r] + noise + b[r] * dt;
        }
        drift[i * d..(i + 1) * d].copy_from_slice(&b);
        if let Some(a) = alpha.as_deref_mut() {
            outer_square(&s, d, m, &mut a[i * d * d..(i + 1) * d * d]);
        }
    }
    Ok(())
}

fn simulate_inner<M, F>(
    model: &M,
    grid: &TimeGrid,
    m_paths: usize,
    seed: u64,
    noise_for: F,
) -> Result<PathEnsemble>
where
    M: SemimartingaleModel + ?Sized,
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    if m_paths == 0 {
        return Err(invalid("m_paths", "must be at least 1"));
    }
    let d = model.dim();
    let n = grid.n_steps();
    let nm = n * model.noise_dim();
    let mut paths = vec![0.0; m_paths * (n + 1) * d];
    let mut drift = vec![0.0; m_paths * n * d];
    let dispersion = match model.constant_sigma() {
        Some(sigma) => {
            let mut a = vec![0.0; d * d];
            outer_square(&sigma, d, model.noise_dim(), &mut a);
            exec::try_for_each_row2_mut(&mut paths, (n + 1) * d, &mut drift, n * d, |p, x, v| {
                let mut inc = vec![0.0; nm];
                noise_for(p, &mut inc);
                let mut rng = initial_rng(seed, p);
                run_path(model, grid, p, &inc, &mut rng, x, v, None)
            })?;
            Dispersion::Constant(a)
        }
        None => {
            let mut a = vec![0.0; m_paths * n * d * d];
            exec::try_for_each_row3_mut(
                &mut paths,
                (n + 1) * d,
                &mut drift,
                n * d,
                &mut a,
                n * d * d,
                |p, x, v, al| {
                    let mut inc = vec![0.0; nm];
                    noise_for(p, &mut inc);
                    let mut rng = initial_rng(seed, p);
                    run_path(model, grid, p, &inc, &mut rng, x, v, Some(al))
                },
            )?;
            Dispersion::PerStep(a)
        }
    };
    PathEnsemble::new(
        grid.clone(),
        d,
        m_paths,
        paths,
        drift,
        dispersion,
        seed,
        model.descriptor(),
    )
}

/// Simulates `m_paths` paths; output depends only on `(model, grid, m_paths, seed)`.
pub fn simulate<M: SemimartingaleModel + ?Sized>(
    model: &M,
    grid: &TimeGrid,
    m_paths: usize,
    seed: u64,
) -> Result<PathEnsemble> {
    let dt = grid.dt();
    simulate_inner(model, grid, m_paths, seed, |p, inc| {
        fill_path_noise(seed, p, dt, inc)
    })
}

/// Simulates on explicitly supplied Brownian increments. Initial values use
/// the substreams of `noise.seed`.
pub fn simulate_with_noise<M: SemimartingaleModel + ?Sized>(
    model: &M,
    grid: &TimeGrid,
    noise: &NoiseBlock,
) -> Result<PathEnsemble> {
    if noise.n_steps != grid.n_steps() || noise.dim != model.noise_dim() {
        return Err(Error::Dimension(format!(
            "noise block ({} steps, dim {}) does not fit grid ({} steps) and model (noise dim {})",
            noise.n_steps,
            noise.dim,
            grid.n_steps(),
            model.noise_dim()
        )));
    }
    simulate_inner(model, grid, noise.m_paths, noise.seed, |p, inc| {
        inc.copy_from_slice(noise.path(p))
    })
}

/// One path of [`simulate`], computed in isolation.
#[derive(Debug, Clone, PartialEq)]
pub struct SinglePath {
    pub x: Vec<f64>,
    pub drift: Vec<f64>,
    pub increments: Vec<f64>,
}

/// Path `p` of `simulate(model, grid, _, seed)` without materializing the
/// rest of the ensemble.
pub fn simulate_single_path<M: SemimartingaleModel + ?Sized>(
    model: &M,
    grid: &TimeGrid,
    seed: u64,
    p: usize,
) -> Result<SinglePath> {
    let d = model.dim();
    let n = grid.n_steps();
    let mut increments = vec![0.0; n * model.noise_dim()];
    fill_path_noise(seed, p, grid.dt(), &mut increments);
    let mut x = vec![0.0; (n + 1) * d];
    let mut drift = vec![0.0; n * d];
    let mut rng = initial_rng(seed, p);
    run_path(
        model,
        grid,
        p,
        &increments,
        &mut rng,
        &mut x,
        &mut drift,
        None,
    )?;
    Ok(SinglePath {
        x,
        drift,
        increments,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub checks: usize,
    /// Replayed characteristics differing from the stored samples.
    pub replay_mismatches: usize,
    /// Outputs that changed when the path was altered after the evaluation step.
    pub suffix_violations: usize,
    pub pass: bool,
}

/// Randomized adaptedness audit. For random `(path, step)` pairs the model's
/// evaluator is replayed on the stored path and on a copy whose entries after
/// `step` are overwritten with junk; outputs up to `step` must agree with
/// each other and with the stored drift samples.
pub fn adaptedness_audit<M: SemimartingaleModel + ?Sized>(
    model: &M,
    ensemble: &PathEnsemble,
    checks: usize,
    seed: u64,
) -> Result<AuditReport> {
    use rand::Rng;
    let d = model.dim();
    if d != ensemble.dim {
        return Err(Error::Dimension(format!(
            "model dim {d} vs ensemble dim {}",
            ensemble.dim
        )));
    }
    let n = ensemble.n_steps();
    let m = model.noise_dim();
    let grid = &ensemble.grid;
    let mut rng = noise_rng(seed, usize::MAX / 2);
    let mut report = AuditReport {
        checks,
        replay_mismatches: 0,
        suffix_violations: 0,
        pass: true,
    };
    let replay = |path: &[f64], upto: usize| -> Vec<f64> {
        let mut ev = model.characteristics();
        let mut b = vec![0.0; d];
        let mut s = vec![0.0; d * m];
        let mut out = Vec::with_capacity((upto + 1) * (d + d * m));
        for i in 0..=upto {
            ev.step(i, grid.t(i), &path[..(i + 1) * d], &mut b, &mut s);
            out.extend_from_slice(&b);
            out.extend_from_slice(&s);
        }
        out
    };
    for _ in 0..checks {
        let p = rng.random_range(0..ensemble.m_paths);
        let i = rng.random_range(0..n);
        let original = ensemble.path(p).to_vec();
        let mut garbled = original.clone();
        for v in garbled[(i + 1) * d..].iter_mut() {
            *v = rng.random_range(-1e3..1e3);
        }
        let a = replay(&original, i);
        let b = replay(&garbled, i);
        if a != b {
            report.suffix_violations += 1;
        }
        let w = d + d * m;
        let stored = ensemble.drift_path(p);
        let replay_ok = (0..=i).all(|j| a[j * w..j * w + d] == stored[j * d..(j + 1) * d]);
        if !replay_ok {
            report.replay_mismatches += 1;
        }
    }
    report.pass = report.replay_mismatches == 0 && report.suffix_violations == 0;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegrabilityReport {
    pub p1: f64,
    pub p2: f64,
    /// `E[int L dt]`
    pub action: f64,
    /// `E[int |grad_x L|^p1 dt]`
    pub grad_x_moment: f64,
    /// `E[int |grad_v L|^p2 dt]`
    pub grad_v_moment: f64,
    /// Share of each total contributed by the top 1% of paths.
    pub tail_share_action: f64,
    pub tail_share_grad_x: f64,
    pub tail_share_grad_v: f64,
    pub all_finite: bool,
}

fn top_share(mut contributions: Vec<f64>) -> f64 {
    let total: f64 = contributions.iter().map(|v| v.abs()).sum();
    if total == 0.0 {
        return 0.0;
    }
    contributions.sort_by(|a, b| b.abs().total_cmp(&a.abs()));
    let k = contributions.len().div_ceil(100);
    contributions[..k].iter().map(|v| v.abs()).sum::<f64>() / total
}

/// Empirical moments behind the integrability hypothesis of the least action
/// principle. Finite samples always give finite numbers; the tail shares are
/// a heavy-tail warning only and certify nothing.
pub fn integrability_diagnostic<L: Lagrangian + ?Sized>(
    ensemble: &PathEnsemble,
    lagrangian: &L,
    p1: f64,
    p2: f64,
) -> Result<IntegrabilityReport> {
    if !(p1 >= 2.0 && p2 >= 2.0) {
        return Err(invalid("p1/p2", "exponents must be at least 2"));
    }
    let d = ensemble.dim;
    let n = ensemble.n_steps();
    let dt = ensemble.grid.dt();
    let per_path = exec::map_indexed(ensemble.m_paths, |p| {
        let mut gx = vec![0.0; d];
        let mut gv = vec![0.0; d];
        let (mut l, mut mx, mut mv) = (0.0, 0.0, 0.0);
        for i in 0..n {
            let (t, x, v, a) = (
                ensemble.grid.t(i),
                ensemble.value(p, i),
                ensemble.drift_at(p, i),
                ensemble.dispersion_at(p, i),
            );
            l += lagrangian.eval(t, x, v, a) * dt;
            lagrangian.grad_x(t, x, v, a, &mut gx);
            lagrangian.grad_v(t, x, v, a, &mut gv);
            let nx = gx.iter().map(|u| u * u).sum::<f64>().sqrt();
            let nv = gv.iter().map(|u| u * u).sum::<f64>().sqrt();
            mx += nx.powf(p1) * dt;
            mv += nv.powf(p2) * dt;
        }
        (l, mx, mv)
    });
    let m = ensemble.m_paths as f64;
    let col = |k: usize| -> Vec<f64> {
        per_path
            .iter()
            .map(|t| match k {
                0 => t.0,
                1 => t.1,
                _ => t.2,
            })
            .collect()
    };
    let (a, x, v) = (col(0), col(1), col(2));
    let action = exec::ordered_sum(a.clone()) / m;
    let grad_x_moment = exec::ordered_sum(x.clone()) / m;
    let grad_v_moment = exec::ordered_sum(v.clone()) / m;
    Ok(IntegrabilityReport {
        p1,
        p2,
        action,
        grad_x_moment,
        grad_v_moment,
        tail_share_action: top_share(a),
        tail_share_grad_x: top_share(x),
        tail_share_grad_v: top_share(v),
        all_finite: action.is_finite() && grad_x_moment.is_finite() && grad_v_moment.is_finite(),
    })
}
