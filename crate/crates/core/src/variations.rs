//! Adapted Cameron–Martin variations.
//!
//! Every shipped variation has derivative
//!
//! ```text
//! kdot_i = g(t_i) * clamp(phi_i) * e_out
//! ```
//!
//! where `g` is a deterministic time profile and `phi_i` a scalar functional
//! of the path prefix: a constant, a coordinate frozen at a time no later than
//! the start of the support of `g`, or the running coordinate `X_i`. With a
//! frozen or constant factor and `g` centered on the grid (`sum_i g_i = 0`),
//! `h_1 = 0` holds exactly while `kdot` stays adapted. The clamp on `phi` is
//! sized so that `sup_t |h_t| <= clip_bound` structurally.
//!
//! The zero-mean constraint `E[h] = 0` is imposed afterwards by
//! [`project_average`], which subtracts the ensemble mean.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ensemble::PathEnsemble;
use crate::error::{invalid, Error, Result};
use crate::exec;
use crate::grid::{integrate, integrate_into, TimeGrid};
use crate::stats::{noise_rng, row_mean};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Profile {
    /// `cos(freq * pi * t)` on `[0, 1)`
    Cosine { freq: f64 },
    /// `sin(2 pi freq (t - start) / (end - start))` on `[start, end)`
    Sine { freq: f64, start: f64, end: f64 },
    /// Triangle peaking at the midpoint of `[start, end)`
    Hat { start: f64, end: f64 },
    /// `(t - start)(end - t)` on `[start, end)`
    Poly { start: f64, end: f64 },
    /// `+1` on the first half of `[start, end)`, `-1` on the second
    Square { start: f64, end: f64 },
}

impl Profile {
    fn support(&self) -> (f64, f64) {
        match *self {
            Profile::Cosine { .. } => (0.0, 1.0),
            Profile::Sine { start, end, .. }
            | Profile::Hat { start, end }
            | Profile::Poly { start, end }
            | Profile::Square { start, end } => (start, end),
        }
    }

    fn raw(&self, t: f64) -> f64 {
        let (a, b) = self.support();
        let u = (t - a) / (b - a);
        match *self {
            Profile::Cosine { freq } => (freq * std::f64::consts::PI * t).cos(),
            Profile::Sine { freq, .. } => (2.0 * std::f64::consts::PI * freq * u).sin(),
            Profile::Hat { .. } => 1.0 - (2.0 * u - 1.0).abs(),
            Profile::Poly { .. } => (t - a) * (b - t),
            Profile::Square { .. } => {
                if u < 0.5 {
                    1.0
                } else {
                    -1.0
                }
            }
        }
    }

    /// Grid index range `[first, last)` of the support.
    pub fn index_range(&self, grid: &TimeGrid) -> (usize, usize) {
        let (a, b) = self.support();
        (grid.index_of(a), grid.index_of(b))
    }

    /// Profile values on the left endpoints of the grid intervals.
    pub fn values(&self, grid: &TimeGrid, centered: bool) -> Vec<f64> {
        let n = grid.n_steps();
        let (lo, hi) = self.index_range(grid);
        let mut g = vec![0.0; n];
        if hi <= lo {
            return g;
        }
        for (i, gi) in g.iter_mut().enumerate().take(hi).skip(lo) {
            *gi = self.raw(grid.t(i));
        }
        if centered {
            let mean = g[lo..hi].iter().sum::<f64>() / (hi - lo) as f64;
            g[lo..hi].iter_mut().for_each(|v| *v -= mean);
        }
        g
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactorMap {
    Identity,
    Tanh,
    Square,
    Sin,
}

impl FactorMap {
    fn apply(self, x: f64) -> f64 {
        match self {
            FactorMap::Identity => x,
            FactorMap::Tanh => x.tanh(),
            FactorMap::Square => x * x,
            FactorMap::Sin => x.sin(),
        }
    }
}

/// Scalar path functional multiplying the profile. Coordinates are taken
/// modulo the path dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Factor {
    Constant {
        value: f64,
    },
    /// `map(X_s[coord])` at a fixed time `s`
    Frozen {
        time: f64,
        coord: usize,
        map: FactorMap,
    },
    /// `map(X_{t_i}[coord])` at the current step
    Running {
        coord: usize,
        map: FactorMap,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndpointCorrection {
    None,
    /// Profile centered on the grid; exact for constant and frozen factors.
    GridCentered,
    /// `kdot_i -= h_1` on every path. Always exact, but uses the whole path,
    /// so the corrected variation is no longer adapted.
    Terminal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationProcess {
    pub id: String,
    pub profile: Profile,
    pub factor: Factor,
    /// Output coordinate, modulo the path dimension.
    pub out_coord: usize,
    /// Sup-norm cap `C` on `h`.
    pub clip_bound: f64,
    pub endpoint_correction: EndpointCorrection,
}

impl VariationProcess {
    pub fn deterministic(id: impl Into<String>, profile: Profile, clip_bound: f64) -> Self {
        Self {
            id: id.into(),
            profile,
            factor: Factor::Constant { value: 1.0 },
            out_coord: 0,
            clip_bound,
            endpoint_correction: EndpointCorrection::GridCentered,
        }
    }

    pub fn is_path_dependent(&self) -> bool {
        !matches!(self.factor, Factor::Constant { .. })
    }

    pub fn is_adapted(&self) -> bool {
        self.endpoint_correction != EndpointCorrection::Terminal
    }
}

/// The variation `kdot_t = (1_[1/2,3/4) - 1_[3/4,1)) * clip(W_{1/2})`.
pub fn designed_variation(clip_bound: f64) -> VariationProcess {
    VariationProcess {
        id: "designed-square".into(),
        profile: Profile::Square {
            start: 0.5,
            end: 1.0,
        },
        factor: Factor::Frozen {
            time: 0.5,
            coord: 0,
            map: FactorMap::Identity,
        },
        out_coord: 0,
        clip_bound,
        endpoint_correction: EndpointCorrection::GridCentered,
    }
}

struct Prepared {
    g: Vec<f64>,
    phi_cap: f64,
    frozen: Option<(usize, usize, FactorMap)>,
    running: Option<(usize, FactorMap)>,
    constant: f64,
    out: usize,
}

fn prepare(k: &VariationProcess, grid: &TimeGrid, dim: usize) -> Result<Prepared> {
    if !(k.clip_bound > 0.0) {
        return Err(invalid("clip_bound", "must be positive"));
    }
    let centered = k.endpoint_correction == EndpointCorrection::GridCentered;
    let g = k.profile.values(grid, centered);
    let dt = grid.dt();
    let mut scale = match k.factor {
        Factor::Running { .. } => g.iter().map(|v| v.abs()).sum::<f64>() * dt,
        _ => {
            let mut acc = 0.0_f64;
            let mut sup = 0.0_f64;
            for v in &g {
                acc += v * dt;
                sup = sup.max(acc.abs());
            }
            sup
        }
    };
    if k.endpoint_correction == EndpointCorrection::Terminal {
        scale *= 2.0;
    }
    let phi_cap = if scale > 0.0 {
        k.clip_bound / scale
    } else {
        f64::INFINITY
    };
    let (lo, _) = k.profile.index_range(grid);
    let mut p = Prepared {
        g,
        phi_cap,
        frozen: None,
        running: None,
        constant: 0.0,
        out: k.out_coord % dim,
    };
    match k.factor {
        Factor::Constant { value } => p.constant = value,
        Factor::Frozen { time, coord, map } => {
            let idx = grid.index_of(time);
            let first_active = p.g.iter().position(|v| *v != 0.0).unwrap_or(lo);
            if idx > first_active {
                return Err(invalid(
                    "factor",
                    format!(
                        "frozen time {time} lies after the first active step {first_active} of {}",
                        k.id
                    ),
                ));
            }
            p.frozen = Some((idx, coord % dim, map));
        }
        Factor::Running { coord, map } => p.running = Some((coord % dim, map)),
    }
    Ok(p)
}

/// Adapted part of `kdot` on one path; step `i` only reads `X_0..X_i`.
fn kdot_path(
    p: &Prepared,
    dim: usize,
    path: &[f64],
    out: &mut [f64],
    path_index: usize,
) -> Result<()> {
    out.iter_mut().for_each(|v| *v = 0.0);
    let cap = p.phi_cap;
    for (i, &gi) in p.g.iter().enumerate() {
        if gi == 0.0 {
            continue;
        }
        let prefix = &path[..(i + 1) * dim];
        let phi = if let Some((s, c, map)) = p.frozen {
            map.apply(prefix[s * dim + c])
        } else if let Some((c, map)) = p.running {
            map.apply(prefix[i * dim + c])
        } else {
            p.constant
        };
        let v = gi * phi.clamp(-cap, cap);
        if !v.is_finite() {
            return Err(Error::NonFinite {
                what: "variation derivative",
                path: path_index,
                step: i,
            });
        }
        out[i * dim + p.out] = v;
    }
    Ok(())
}

/// Per-path samples of a variation on an ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationSamples {
    pub id: String,
    pub grid: TimeGrid,
    pub dim: usize,
    pub m_paths: usize,
    /// `m_paths * n_steps * dim`
    pub kdot: Vec<f64>,
    /// `m_paths * (n_steps + 1) * dim`, with `h_0 = 0`
    pub h: Vec<f64>,
    pub bounded_by: f64,
    pub endpoints_zero: bool,
    /// `|E[h]|_H`
    pub mean_norm: f64,
    pub adapted: bool,
}

const ENDPOINT_TOL: f64 = 1e-12;

impl VariationSamples {
    /// Wraps raw derivative samples, deriving `h` and the flags.
    pub fn from_kdot(
        id: impl Into<String>,
        grid: TimeGrid,
        dim: usize,
        m_paths: usize,
        kdot: Vec<f64>,
        bounded_by: f64,
        adapted: bool,
    ) -> Result<Self> {
        let n = grid.n_steps();
        if kdot.len() != m_paths * n * dim {
            return Err(Error::LengthMismatch {
                what: "kdot",
                expected: m_paths * n * dim,
                got: kdot.len(),
            });
        }
        if m_paths == 0 {
            return Err(Error::Empty("variation samples"));
        }
        let mut h = vec![0.0; m_paths * (n + 1) * dim];
        let dt = grid.dt();
        exec::for_each_row_mut(&mut h, (n + 1) * dim, |p, row| {
            integrate_into(&kdot[p * n * dim..(p + 1) * n * dim], dim, dt, row)
        });
        let mut vs = Self {
            id: id.into(),
            grid,
            dim,
            m_paths,
            kdot,
            h,
            bounded_by,
            endpoints_zero: false,
            mean_norm: 0.0,
            adapted,
        };
        vs.refresh_flags();
        Ok(vs)
    }

    fn refresh_flags(&mut self) {
        let scale = self.max_sup().max(1.0);
        self.endpoints_zero = self.max_endpoint() <= ENDPOINT_TOL * scale;
        self.mean_norm = self.mean_norm_h();
    }

    pub fn n_steps(&self) -> usize {
        self.grid.n_steps()
    }

    pub fn kdot_path(&self, p: usize) -> &[f64] {
        let w = self.n_steps() * self.dim;
        &self.kdot[p * w..(p + 1) * w]
    }

    pub fn h_path(&self, p: usize) -> &[f64] {
        let w = (self.n_steps() + 1) * self.dim;
        &self.h[p * w..(p + 1) * w]
    }

    /// Interval-wise ensemble mean of `kdot`.
    pub fn mean_kdot(&self) -> Vec<f64> {
        row_mean(&self.kdot, self.n_steps() * self.dim)
    }

    fn mean_norm_h(&self) -> f64 {
        let mean = self.mean_kdot();
        (mean.iter().map(|v| v * v).sum::<f64>() * self.grid.dt()).sqrt()
    }

    pub fn max_endpoint(&self) -> f64 {
        let n = self.n_steps();
        (0..self.m_paths)
            .flat_map(|p| {
                self.h_path(p)[n * self.dim..]
                    .iter()
                    .copied()
                    .collect::<Vec<_>>()
            })
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn max_sup(&self) -> f64 {
        self.h.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

/// Evaluates a variation process on every path of an ensemble.
pub fn eval_variation(k: &VariationProcess, ensemble: &PathEnsemble) -> Result<VariationSamples> {
    let d = ensemble.dim;
    let n = ensemble.n_steps();
    let kernel = VariationKernel::new(k, &ensemble.grid, d)?;
    let rows = exec::try_map_indexed(ensemble.m_paths, |p| {
        let mut row = vec![0.0; n * d];
        kernel.kdot(ensemble.path(p), p, &mut row).map(|_| row)
    })?;
    VariationSamples::from_kdot(
        k.id.clone(),
        ensemble.grid.clone(),
        d,
        ensemble.m_paths,
        rows.concat(),
        k.clip_bound,
        k.is_adapted(),
    )
}

/// Path-by-path evaluator of a variation's derivative, for reductions that
/// should not materialize every sample.
pub struct VariationKernel {
    prep: Prepared,
    dim: usize,
    n_steps: usize,
    dt: f64,
    terminal: bool,
}

impl VariationKernel {
    pub fn new(k: &VariationProcess, grid: &TimeGrid, dim: usize) -> Result<Self> {
        Ok(Self {
            prep: prepare(k, grid, dim)?,
            dim,
            n_steps: grid.n_steps(),
            dt: grid.dt(),
            terminal: k.endpoint_correction == EndpointCorrection::Terminal,
        })
    }

    /// `kdot` of path `p` into `out` (`n_steps * dim` values).
    pub fn kdot(&self, path: &[f64], p: usize, out: &mut [f64]) -> Result<()> {
        kdot_path(&self.prep, self.dim, path, out, p)?;
        if self.terminal {
            let (n, d) = (self.n_steps, self.dim);
            let end = integrate(out, d, self.dt);
            for i in 0..n {
                for c in 0..d {
                    out[i * d + c] -= end[n * d + c];
                }
            }
        }
        Ok(())
    }
}

/// `eval_variation(k, ensemble)?.mean_kdot()`, computed one path at a time.
pub fn streamed_mean_kdot(k: &VariationProcess, ensemble: &PathEnsemble) -> Result<Vec<f64>> {
    let w = ensemble.drift_len();
    let kernel = VariationKernel::new(k, &ensemble.grid, ensemble.dim)?;
    let mut anchor = vec![0.0; w];
    kernel.kdot(ensemble.path(0), 0, &mut anchor)?;
    let mut acc = vec![0.0; w];
    let mut row = vec![0.0; w];
    for p in 1..ensemble.m_paths {
        kernel.kdot(ensemble.path(p), p, &mut row)?;
        for ((a, v), r) in acc.iter_mut().zip(&row).zip(&anchor) {
            *a += v - r;
        }
    }
    let m = ensemble.m_paths as f64;
    acc.iter_mut()
        .zip(&anchor)
        .for_each(|(a, r)| *a = r + *a / m);
    Ok(acc)
}

/// `j(h) = h - E[h]`. The sup-norm bound at most doubles.
pub fn project_average(vs: &VariationSamples) -> VariationSamples {
    let mean = vs.mean_kdot();
    let w = mean.len();
    let mut kdot = vs.kdot.clone();
    exec::for_each_row_mut(&mut kdot, w, |_, row| {
        row.iter_mut().zip(&mean).for_each(|(v, m)| *v -= m)
    });
    VariationSamples::from_kdot(
        vs.id.clone(),
        vs.grid.clone(),
        vs.dim,
        vs.m_paths,
        kdot,
        2.0 * vs.bounded_by,
        vs.adapted,
    )
    .expect("shape preserved")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationCheck {
    pub endpoints_zero: bool,
    pub bounded: bool,
    pub mean_zero: bool,
    pub max_endpoint: f64,
    pub max_sup: f64,
    pub bound: f64,
    pub mean_norm: f64,
    pub pass: bool,
}

pub fn check_variation(vs: &VariationSamples, tol: f64) -> VariationCheck {
    let max_endpoint = vs.max_endpoint();
    let max_sup = vs.max_sup();
    let mean_norm = vs.mean_norm_h();
    let endpoints_zero = max_endpoint <= tol;
    let bounded = max_sup <= vs.bounded_by * (1.0 + 1e-12);
    let mean_zero = mean_norm <= tol;
    VariationCheck {
        endpoints_zero,
        bounded,
        mean_zero,
        max_endpoint,
        max_sup,
        bound: vs.bounded_by,
        mean_norm,
        pass: endpoints_zero && bounded && mean_zero,
    }
}

/// Push-forward of the ensemble under `X -> X + eps h`. Drift samples shift
/// by `eps kdot`; dispersion samples are unchanged.
pub fn perturb(ensemble: &PathEnsemble, vs: &VariationSamples, eps: f64) -> Result<PathEnsemble> {
    ensemble.grid.ensure_same(&vs.grid)?;
    if ensemble.m_paths != vs.m_paths || ensemble.dim != vs.dim {
        return Err(Error::Dimension(format!(
            "ensemble ({} paths, dim {}) vs variation ({} paths, dim {})",
            ensemble.m_paths, ensemble.dim, vs.m_paths, vs.dim
        )));
    }
    let mut out = ensemble.clone();
    if eps == 0.0 {
        return Ok(out);
    }
    out.paths
        .iter_mut()
        .zip(&vs.h)
        .for_each(|(x, h)| *x += eps * h);
    out.drift
        .iter_mut()
        .zip(&vs.kdot)
        .for_each(|(v, k)| *v += eps * k);
    out.provenance = format!("{} perturbed by {} (eps={eps})", ensemble.provenance, vs.id);
    Ok(out)
}

/// Rescales each path so that `sup |h| <= bound`. Endpoints stay at zero.
pub fn truncate(vs: &VariationSamples, bound: f64) -> VariationSamples {
    let n = vs.n_steps();
    let d = vs.dim;
    let mut kdot = vs.kdot.clone();
    for p in 0..vs.m_paths {
        let sup = vs.h_path(p).iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if sup > bound {
            let s = bound / sup;
            kdot[p * n * d..(p + 1) * n * d]
                .iter_mut()
                .for_each(|v| *v *= s);
        }
    }
    VariationSamples::from_kdot(
        vs.id.clone(),
        vs.grid.clone(),
        d,
        vs.m_paths,
        kdot,
        bound,
        false,
    )
    .expect("shape preserved")
}

/// Empirical `L^2_a(H)` distance `sqrt(E[|h - k|_H^2])`.
pub fn l2a_distance(a: &VariationSamples, b: &VariationSamples) -> Result<f64> {
    a.grid.ensure_same(&b.grid)?;
    if a.kdot.len() != b.kdot.len() {
        return Err(Error::LengthMismatch {
            what: "kdot",
            expected: a.kdot.len(),
            got: b.kdot.len(),
        });
    }
    let sq: f64 = a
        .kdot
        .iter()
        .zip(&b.kdot)
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok((sq * a.grid.dt() / a.m_paths as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationAudit {
    pub checks: usize,
    pub violations: usize,
    pub pass: bool,
}

/// Re-evaluates the adapted part of `kdot` on paths whose values after a
/// random step are replaced by junk; derivative values up to that step must
/// not change.
pub fn variation_adaptedness_audit(
    k: &VariationProcess,
    ensemble: &PathEnsemble,
    checks: usize,
    seed: u64,
) -> Result<VariationAudit> {
    let d = ensemble.dim;
    let n = ensemble.n_steps();
    let prep = prepare(k, &ensemble.grid, d)?;
    let mut rng = noise_rng(seed, 0);
    let mut violations = 0;
    for _ in 0..checks {
        let p = rng.random_range(0..ensemble.m_paths);
        let i = rng.random_range(0..n);
        let original = ensemble.path(p);
        let mut garbled = original.to_vec();
        garbled[(i + 1) * d..]
            .iter_mut()
            .for_each(|v| *v = rng.random_range(-1e3..1e3));
        let mut a = vec![0.0; n * d];
        let mut b = vec![0.0; n * d];
        kdot_path(&prep, d, original, &mut a, p)?;
        kdot_path(&prep, d, &garbled, &mut b, p)?;
        if a[..(i + 1) * d] != b[..(i + 1) * d] {
            violations += 1;
        }
    }
    Ok(VariationAudit {
        checks,
        violations,
        pass: violations == 0 && k.is_adapted(),
    })
}

/// Reproducible battery of variations.
///
/// Member 0 is [`designed_variation`]. The rest alternate between
/// deterministic bumps (cosine, sine, hat, polynomial) and path-dependent
/// forms `g(t) map(X_s)` with `g` supported after the frozen time `s`.
/// All support endpoints and frozen times are multiples of 1/16, so they sit
/// exactly on any grid with a multiple of 16 steps.
pub fn random_variation_bank(
    seed: u64,
    size: usize,
    clip_bound: f64,
) -> Result<Vec<VariationProcess>> {
    if size == 0 {
        return Err(invalid("size", "bank must contain at least one variation"));
    }
    if !(clip_bound > 0.0) {
        return Err(invalid("clip_bound", "must be positive"));
    }
    let mut rng = noise_rng(seed, 0);
    let mut bank = vec![designed_variation(clip_bound)];
    let maps = [
        FactorMap::Identity,
        FactorMap::Tanh,
        FactorMap::Square,
        FactorMap::Sin,
    ];
    let sixteenth = |k: u32| k as f64 / 16.0;
    for k in 1..size {
        let coord = rng.random_range(0..4usize);
        if k % 2 == 1 {
            let s_idx = rng.random_range(1..=10u32);
            let e_idx = rng.random_range((s_idx + 4).min(16)..=16u32);
            let (start, end) = (sixteenth(s_idx), sixteenth(e_idx));
            let profile = match rng.random_range(0..4u32) {
                0 => Profile::Square { start, end },
                1 => Profile::Sine {
                    freq: rng.random_range(1..=2u32) as f64,
                    start,
                    end,
                },
                2 => Profile::Hat { start, end },
                _ => Profile::Poly { start, end },
            };
            let map = maps[rng.random_range(0..maps.len())];
            bank.push(VariationProcess {
                id: format!("path-{k:02}"),
                profile,
                factor: Factor::Frozen {
                    time: start,
                    coord,
                    map,
                },
                out_coord: coord,
                clip_bound,
                endpoint_correction: EndpointCorrection::GridCentered,
            });
        } else {
            let a_idx = rng.random_range(0..=8u32);
            let b_idx = rng.random_range((a_idx + 4)..=16u32);
            let (start, end) = (sixteenth(a_idx), sixteenth(b_idx));
            let profile = match rng.random_range(0..4u32) {
                0 => Profile::Cosine {
                    freq: rng.random_range(1..=3u32) as f64,
                },
                1 => Profile::Sine {
                    freq: rng.random_range(1..=3u32) as f64,
                    start,
                    end,
                },
                2 => Profile::Hat { start, end },
                _ => Profile::Poly { start, end },
            };
            let mut v = VariationProcess::deterministic(format!("det-{k:02}"), profile, clip_bound);
            v.out_coord = coord;
            bank.push(v);
        }
    }
    Ok(bank)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;
    use crate::semimartingale::{simulate, LinearSde};
    use proptest::prelude::*;
    use rand::Rng;

    fn wiener(m: usize, n: usize, seed: u64) -> PathEnsemble {
        simulate(&LinearSde::wiener(1), &make_grid(n).unwrap(), m, seed).unwrap()
    }

    fn cosine() -> VariationProcess {
        VariationProcess::deterministic("cos", Profile::Cosine { freq: 1.0 }, 10.0)
    }

    #[test]
    fn zero_variation() {
        let e = wiener(10, 16, 1);
        let k = VariationProcess {
            factor: Factor::Constant { value: 0.0 },
            ..cosine()
        };
        let vs = eval_variation(&k, &e).unwrap();
        assert!(vs.kdot.iter().all(|&v| v == 0.0));
        let c = check_variation(&vs, 1e-12);
        assert!(c.pass, "{c:?}");
    }

    #[test]
    fn cosine_is_identical_across_paths_and_corrected() {
        let e = wiener(5, 256, 2);
        let raw = VariationProcess {
            endpoint_correction: EndpointCorrection::None,
            ..cosine()
        };
        let vs = eval_variation(&raw, &e).unwrap();
        // Left Riemann sum of cos(pi t) is exactly dt on the uniform grid.
        assert!((vs.max_endpoint() - 1.0 / 256.0).abs() < 1e-12);
        let vs = eval_variation(&cosine(), &e).unwrap();
        assert!(vs.endpoints_zero);
        assert!(vs.max_endpoint() < 1e-14);
        for p in 1..5 {
            assert_eq!(vs.kdot_path(p), vs.kdot_path(0));
        }
        // Sup of the antiderivative sin(pi t)/pi.
        assert!((vs.max_sup() - 1.0 / std::f64::consts::PI).abs() < 1e-2);
    }

    #[test]
    fn running_factor_differs_across_paths_and_is_adapted() {
        let e = wiener(20, 64, 3);
        let k = VariationProcess {
            id: "tanh-bump".into(),
            profile: Profile::Hat {
                start: 0.25,
                end: 0.75,
            },
            factor: Factor::Running {
                coord: 0,
                map: FactorMap::Tanh,
            },
            out_coord: 0,
            clip_bound: 1.0,
            endpoint_correction: EndpointCorrection::None,
        };
        let vs = eval_variation(&k, &e).unwrap();
        assert_ne!(vs.kdot_path(0), vs.kdot_path(1));
        assert!(vs.adapted);
        assert!(variation_adaptedness_audit(&k, &e, 50, 1).unwrap().pass);
        assert!(vs.max_sup() <= 1.0);
        let corrected = VariationProcess {
            endpoint_correction: EndpointCorrection::Terminal,
            ..k
        };
        let vs = eval_variation(&corrected, &e).unwrap();
        assert!(vs.endpoints_zero);
        assert!(!vs.adapted);
        assert!(check_variation(&vs, 1e-12).bounded);
    }

    #[test]
    fn frozen_time_after_support_is_rejected() {
        let e = wiener(2, 16, 3);
        let k = VariationProcess {
            factor: Factor::Frozen {
                time: 0.5,
                coord: 0,
                map: FactorMap::Identity,
            },
            ..cosine()
        };
        assert!(eval_variation(&k, &e).is_err());
    }

    #[test]
    fn unconstrained_variations_fail_checks() {
        let e = wiener(10, 16, 4);
        let k = VariationProcess {
            endpoint_correction: EndpointCorrection::None,
            profile: Profile::Square {
                start: 0.0,
                end: 2.0,
            },
            ..cosine()
        };
        // Support clipped to [0,1) and only its first half is active: kdot == 1.
        let vs = eval_variation(&k, &e).unwrap();
        let c = check_variation(&vs, 1e-10);
        assert!(!c.endpoints_zero);
        assert!((c.max_endpoint - 1.0).abs() < 1e-12);
        let vs = eval_variation(&cosine(), &e).unwrap();
        assert!(!check_variation(&vs, 1e-10).mean_zero);
    }

    #[test]
    fn projection_kills_deterministic_variations() {
        let e = wiener(7, 32, 5);
        let vs = project_average(&eval_variation(&cosine(), &e).unwrap());
        assert!(vs.kdot.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn projection_keeps_symmetric_pair() {
        let g = make_grid(8).unwrap();
        let h: Vec<f64> = (0..8).map(|i| (i as f64 - 3.5) * 0.3).collect();
        let kdot: Vec<f64> = h.iter().copied().chain(h.iter().map(|v| -v)).collect();
        let vs = VariationSamples::from_kdot("pm", g, 1, 2, kdot.clone(), 10.0, true).unwrap();
        assert_eq!(project_average(&vs).kdot, kdot);
    }

    #[test]
    fn bank_is_reproducible_with_quota() {
        let a = random_variation_bank(3, 20, 5.0).unwrap();
        let b = random_variation_bank(3, 20, 5.0).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, random_variation_bank(4, 20, 5.0).unwrap());
        assert!(a.iter().filter(|v| v.is_path_dependent()).count() >= 5);
        assert_eq!(a[0], designed_variation(5.0));
        assert!(random_variation_bank(3, 0, 5.0).is_err());
    }

    #[test]
    fn bank_members_pass_checks_after_projection() {
        for n in [64, 100] {
            let e = simulate(
                &LinearSde::exponential_growth(),
                &make_grid(n).unwrap(),
                300,
                6,
            )
            .unwrap();
            for k in random_variation_bank(11, 20, 2.0).unwrap() {
                let vs = project_average(&eval_variation(&k, &e).unwrap());
                let c = check_variation(&vs, 1e-12);
                assert!(c.pass, "{} on n={n}: {c:?}", k.id);
                assert!(variation_adaptedness_audit(&k, &e, 20, 2).unwrap().pass);
            }
        }
    }

    #[test]
    fn perturb_zero_and_deterministic_shift() {
        let g = make_grid(32).unwrap();
        let e = simulate(&LinearSde::constant(1.0, 0.0), &g, 4, 1).unwrap();
        let vs = eval_variation(&cosine(), &e).unwrap();
        assert_eq!(perturb(&e, &vs, 0.0).unwrap(), e);
        let eps = 0.25;
        let pe = perturb(&e, &vs, eps).unwrap();
        for p in 0..4 {
            for i in 0..=32 {
                assert_eq!(pe.value(p, i)[0], g.t(i) + eps * vs.h_path(p)[i]);
            }
            for i in 0..32 {
                assert_eq!(pe.drift_at(p, i)[0], 1.0 + eps * vs.kdot_path(p)[i]);
            }
        }
        assert_eq!(pe.dispersion, e.dispersion);
        let other = wiener(3, 32, 1);
        assert!(perturb(&other, &vs, 1.0).is_err());
    }

    fn random_samples(m: usize, n: usize, seed: u64) -> VariationSamples {
        let mut rng = noise_rng(seed, 3);
        let kdot = (0..m * n).map(|_| rng.random_range(-3.0..3.0)).collect();
        VariationSamples::from_kdot("rand", make_grid(n).unwrap(), 1, m, kdot, 100.0, true).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn projection_is_linear_idempotent_and_centering(seed in 0u64..1000, a in -3.0..3.0f64) {
            let x = random_samples(40, 16, seed);
            let y = random_samples(40, 16, seed + 7777);
            let jx = project_average(&x);
            let jjx = project_average(&jx);
            let scale = jx.kdot.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
            for (u, v) in jx.kdot.iter().zip(&jjx.kdot) {
                prop_assert!((u - v).abs() <= 1e-12 * scale);
            }
            prop_assert!(jx.mean_norm <= 1e-12 * scale);
            let combo = VariationSamples::from_kdot("c", x.grid.clone(), 1, 40,
                x.kdot.iter().zip(&y.kdot).map(|(p, q)| a * p + q).collect(), 100.0, true).unwrap();
            let jy = project_average(&y);
            for ((c, p), q) in project_average(&combo).kdot.iter().zip(&jx.kdot).zip(&jy.kdot) {
                prop_assert!((c - (a * p + q)).abs() <= 1e-12 * (1.0 + c.abs()) * 10.0);
            }
        }

        #[test]
        fn perturb_is_affine_in_eps(e1 in -1.0..1.0f64, e2 in -1.0..1.0f64, seed in 0u64..100) {
            let e = wiener(6, 16, seed);
            let k = designed_variation(3.0);
            let vs = eval_variation(&k, &e).unwrap();
            let two_step = perturb(&perturb(&e, &vs, e1).unwrap(), &vs, e2 - e1).unwrap();
            let direct = perturb(&e, &vs, e2).unwrap();
            for (u, v) in two_step.paths.iter().zip(&direct.paths) {
                prop_assert!((u - v).abs() < 1e-12);
            }
            for (u, v) in two_step.drift.iter().zip(&direct.drift) {
                prop_assert!((u - v).abs() < 1e-12);
            }
        }

        #[test]
        fn truncation_converges_monotonically(seed in 0u64..200) {
            let e = wiener(30, 32, seed);
            let k = VariationProcess {
                id: "sq".into(),
                profile: Profile::Sine { freq: 1.0, start: 0.25, end: 1.0 },
                factor: Factor::Frozen { time: 0.25, coord: 0, map: FactorMap::Square },
                out_coord: 0,
                clip_bound: 1e6,
                endpoint_correction: EndpointCorrection::GridCentered,
            };
            let target = project_average(&eval_variation(&k, &e).unwrap());
            let sup = target.max_sup();
            let mut prev = f64::INFINITY;
            for frac in [0.05, 0.1, 0.25, 0.5, 0.75, 0.99, 1.0, 1.5] {
                let tr = truncate(&target, frac * sup);
                prop_assert!(tr.endpoints_zero);
                let err = l2a_distance(&tr, &target).unwrap();
                prop_assert!(err <= prev + 1e-15);
                if frac >= 1.0 {
                    prop_assert_eq!(err, 0.0);
                }
                prev = err;
            }
        }
    }
}
