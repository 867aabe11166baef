//! Action functional, Euler–Lagrange residual, Gâteaux derivatives and the
//! criticality battery.
//!
//! All time integrals are left Riemann sums over the grid intervals:
//!
//! ```text
//! S      = E[ sum_i L(t_i, X_i, v_i, alpha_i) dt ]
//! xi_i   = grad_v L(t_i, ..) - sum_{j<i} grad_x L(t_j, ..) dt
//! dS[h]  = E[ sum_i <xi_i, kdot_i> dt ]
//! ```

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::ensemble::PathEnsemble;
use crate::error::{invalid, Error, Result};
use crate::exec;
use crate::grid::{integrate, TimeGrid};
use crate::io::{fmt_f64, write_csv};
use crate::lagrangian::Lagrangian;
use crate::stats::Estimate;
use crate::variations::{streamed_mean_kdot, VariationKernel, VariationProcess, VariationSamples};

fn ensure_compatible(ensemble: &PathEnsemble, vs: &VariationSamples) -> Result<()> {
    ensemble.grid.ensure_same(&vs.grid)?;
    if ensemble.m_paths != vs.m_paths || ensemble.dim != vs.dim {
        return Err(Error::Dimension(format!(
            "ensemble ({} paths, dim {}) vs variation ({} paths, dim {})",
            ensemble.m_paths, ensemble.dim, vs.m_paths, vs.dim
        )));
    }
    Ok(())
}

fn estimate(per_path: &[f64]) -> Estimate {
    let (sum, sum_sq) = exec::sum_and_sq_of(per_path);
    Estimate::from_sums(sum, sum_sq, per_path.len())
}

/// Action of one path, optionally along `X + eps h`, `v + eps kdot`.
fn path_action<L: Lagrangian + ?Sized>(
    ensemble: &PathEnsemble,
    lagrangian: &L,
    p: usize,
    shift: Option<(&[f64], &[f64], f64)>,
) -> Result<f64> {
    let d = ensemble.dim;
    let dt = ensemble.grid.dt();
    let mut x = vec![0.0; d];
    let mut v = vec![0.0; d];
    let mut acc = 0.0;
    for i in 0..ensemble.n_steps() {
        x.copy_from_slice(ensemble.value(p, i));
        v.copy_from_slice(ensemble.drift_at(p, i));
        if let Some((h, k, eps)) = shift {
            let h = &h[i * d..(i + 1) * d];
            let k = &k[i * d..(i + 1) * d];
            x.iter_mut().zip(h).for_each(|(a, b)| *a += eps * b);
            v.iter_mut().zip(k).for_each(|(a, b)| *a += eps * b);
        }
        let l = lagrangian.eval(ensemble.grid.t(i), &x, &v, ensemble.dispersion_at(p, i));
        if !l.is_finite() {
            return Err(Error::NonFinite {
                what: "Lagrangian value",
                path: p,
                step: i,
            });
        }
        acc += l * dt;
    }
    Ok(acc)
}

/// `S = E[int_0^1 L dt]` with its Monte Carlo standard error.
pub fn action<L: Lagrangian + ?Sized>(ensemble: &PathEnsemble, lagrangian: &L) -> Result<Estimate> {
    let per_path = exec::try_map_indexed(ensemble.m_paths, |p| {
        path_action(ensemble, lagrangian, p, None)
    })?;
    Ok(estimate(&per_path))
}

/// `action(&perturb(ensemble, vs, eps)?, lagrangian)` without materializing
/// the perturbed ensemble. Bitwise identical to that composition.
pub fn action_perturbed<L: Lagrangian + ?Sized>(
    ensemble: &PathEnsemble,
    lagrangian: &L,
    vs: &VariationSamples,
    eps: f64,
) -> Result<Estimate> {
    ensure_compatible(ensemble, vs)?;
    let per_path = exec::try_map_indexed(ensemble.m_paths, |p| {
        path_action(
            ensemble,
            lagrangian,
            p,
            Some((vs.h_path(p), vs.kdot_path(p), eps)),
        )
    })?;
    Ok(estimate(&per_path))
}

/// Per-path Euler–Lagrange residual `xi`, interval-indexed.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualSamples {
    pub grid: TimeGrid,
    pub dim: usize,
    pub m_paths: usize,
    /// `m_paths * n_steps * dim`
    pub xi: Vec<f64>,
}

impl ResidualSamples {
    pub fn n_steps(&self) -> usize {
        self.grid.n_steps()
    }

    pub fn path(&self, p: usize) -> &[f64] {
        let w = self.n_steps() * self.dim;
        &self.xi[p * w..(p + 1) * w]
    }

    pub fn at(&self, p: usize, i: usize) -> &[f64] {
        &self.path(p)[i * self.dim..(i + 1) * self.dim]
    }

    /// Coordinate `c` of every path, `m_paths * n_steps` values.
    pub fn coordinate(&self, c: usize) -> Vec<f64> {
        self.xi.iter().skip(c).step_by(self.dim).copied().collect()
    }
}

pub fn el_residual<L: Lagrangian + ?Sized>(
    ensemble: &PathEnsemble,
    lagrangian: &L,
) -> Result<ResidualSamples> {
    let d = ensemble.dim;
    let n = ensemble.n_steps();
    let dt = ensemble.grid.dt();
    let rows = exec::try_map_indexed(ensemble.m_paths, |p| {
        let mut row = vec![0.0; n * d];
        let mut running = vec![0.0; d];
        let mut gx = vec![0.0; d];
        let mut gv = vec![0.0; d];
        for i in 0..n {
            let (t, x, v, a) = (
                ensemble.grid.t(i),
                ensemble.value(p, i),
                ensemble.drift_at(p, i),
                ensemble.dispersion_at(p, i),
            );
            lagrangian.grad_v(t, x, v, a, &mut gv);
            lagrangian.grad_x(t, x, v, a, &mut gx);
            if gv.iter().chain(&gx).any(|g| !g.is_finite()) {
                return Err(Error::NonFinite {
                    what: "Lagrangian gradient",
                    path: p,
                    step: i,
                });
            }
            for c in 0..d {
                row[i * d + c] = gv[c] - running[c];
                running[c] += gx[c] * dt;
            }
        }
        Ok(row)
    })?;
    Ok(ResidualSamples {
        grid: ensemble.grid.clone(),
        dim: d,
        m_paths: ensemble.m_paths,
        xi: rows.concat(),
    })
}

/// `dS[h] = E[<xi, h>_H]`.
pub fn gateaux_analytic(residual: &ResidualSamples, vs: &VariationSamples) -> Result<Estimate> {
    residual.grid.ensure_same(&vs.grid)?;
    if residual.m_paths != vs.m_paths || residual.dim != vs.dim {
        return Err(Error::Dimension(format!(
            "residual ({} paths, dim {}) vs variation ({} paths, dim {})",
            residual.m_paths, residual.dim, vs.m_paths, vs.dim
        )));
    }
    let dt = residual.grid.dt();
    let per_path = exec::map_indexed(residual.m_paths, |p| {
        residual
            .path(p)
            .iter()
            .zip(vs.kdot_path(p))
            .map(|(x, k)| x * k)
            .sum::<f64>()
            * dt
    });
    Ok(estimate(&per_path))
}

/// `gateaux_analytic(residual, &project_average(&eval_variation(k, ensemble)?))`
/// without materializing the variation samples. Bitwise identical to that
/// composition.
pub fn projected_gateaux(
    residual: &ResidualSamples,
    ensemble: &PathEnsemble,
    k: &VariationProcess,
) -> Result<Estimate> {
    residual.grid.ensure_same(&ensemble.grid)?;
    if residual.m_paths != ensemble.m_paths || residual.dim != ensemble.dim {
        return Err(Error::Dimension(format!(
            "residual ({} paths, dim {}) vs ensemble ({} paths, dim {})",
            residual.m_paths, residual.dim, ensemble.m_paths, ensemble.dim
        )));
    }
    let projected = ProjectedKernel::new(k, ensemble)?;
    let dt = residual.grid.dt();
    let per_path = exec::try_map_indexed(residual.m_paths, |p| {
        let mut row = vec![0.0; projected.mean.len()];
        projected.kdot(ensemble, p, &mut row)?;
        Ok(residual
            .path(p)
            .iter()
            .zip(&row)
            .map(|(x, k)| x * k)
            .sum::<f64>()
            * dt)
    })?;
    Ok(estimate(&per_path))
}

/// `gateaux_fd(ensemble, lagrangian, &project_average(&eval_variation(k, ensemble)?), eps)`
/// without materializing the variation samples. Bitwise identical to that
/// composition.
pub fn projected_gateaux_fd<L: Lagrangian + ?Sized>(
    ensemble: &PathEnsemble,
    lagrangian: &L,
    k: &VariationProcess,
    eps: f64,
) -> Result<Estimate> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(invalid("eps", "must be positive and finite"));
    }
    let projected = ProjectedKernel::new(k, ensemble)?;
    let d = ensemble.dim;
    let dt = ensemble.grid.dt();
    let per_path = exec::try_map_indexed(ensemble.m_paths, |p| {
        let mut row = vec![0.0; projected.mean.len()];
        projected.kdot(ensemble, p, &mut row)?;
        let h = integrate(&row, d, dt);
        central_difference(ensemble, lagrangian, p, &h, &row, eps)
    })?;
    Ok(estimate(&per_path))
}

/// Derivative of a variation minus its ensemble mean, one path at a time.
struct ProjectedKernel {
    kernel: VariationKernel,
    mean: Vec<f64>,
}

impl ProjectedKernel {
    fn new(k: &VariationProcess, ensemble: &PathEnsemble) -> Result<Self> {
        Ok(Self {
            kernel: VariationKernel::new(k, &ensemble.grid, ensemble.dim)?,
            mean: streamed_mean_kdot(k, ensemble)?,
        })
    }

    fn kdot(&self, ensemble: &PathEnsemble, p: usize, out: &mut [f64]) -> Result<()> {
        self.kernel.kdot(ensemble.path(p), p, out)?;
        out.iter_mut().zip(&self.mean).for_each(|(v, m)| *v -= m);
        Ok(())
    }
}

fn central_difference<L: Lagrangian + ?Sized>(
    ensemble: &PathEnsemble,
    lagrangian: &L,
    p: usize,
    h: &[f64],
    kdot: &[f64],
    eps: f64,
) -> Result<f64> {
    let up = path_action(ensemble, lagrangian, p, Some((h, kdot, eps)))?;
    let down = path_action(ensemble, lagrangian, p, Some((h, kdot, -eps)))?;
    Ok((up - down) / (2.0 * eps))
}

/// Central difference `(S(eps) - S(-eps)) / (2 eps)` on common random
/// numbers: both sides perturb the same paths. The standard error is that of
/// the per-path differences.
pub fn gateaux_fd<L: Lagrangian + ?Sized>(
    ensemble: &PathEnsemble,
    lagrangian: &L,
    vs: &VariationSamples,
    eps: f64,
) -> Result<Estimate> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(invalid("eps", "must be positive and finite"));
    }
    ensure_compatible(ensemble, vs)?;
    let per_path = exec::try_map_indexed(ensemble.m_paths, |p| {
        central_difference(ensemble, lagrangian, p, vs.h_path(p), vs.kdot_path(p), eps)
    })?;
    Ok(estimate(&per_path))
}

/// Per-variation tolerance `max(abs, n_se * SE)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TolerancePolicy {
    pub abs: f64,
    pub n_se: f64,
}

impl Default for TolerancePolicy {
    fn default() -> Self {
        Self {
            abs: 0.02,
            n_se: 3.0,
        }
    }
}

impl TolerancePolicy {
    pub fn allows(&self, e: &Estimate) -> bool {
        e.value.abs() <= self.abs.max(self.n_se * e.se)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalityRow {
    pub variation_id: String,
    pub path_dependent: bool,
    pub ds_analytic: f64,
    pub se: f64,
    pub ds_fd: Option<f64>,
    pub within: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalityReport {
    pub rows: Vec<CriticalityRow>,
    pub policy: TolerancePolicy,
    pub fd_eps: Option<f64>,
    pub critical: bool,
}

impl CriticalityReport {
    pub fn row(&self, id: &str) -> Option<&CriticalityRow> {
        self.rows.iter().find(|r| r.variation_id == id)
    }

    /// Columns `variation_id,dS_analytic,se,dS_fd,verdict`.
    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.variation_id.clone(),
                    fmt_f64(r.ds_analytic),
                    fmt_f64(r.se),
                    r.ds_fd.map(fmt_f64).unwrap_or_default(),
                    if r.within { "within" } else { "outside" }.to_string(),
                ]
            })
            .collect();
        write_csv(
            out,
            &["variation_id", "dS_analytic", "se", "dS_fd", "verdict"],
            &rows,
        )
    }
}

/// Evaluates, projects and differentiates along every bank member. The
/// verdict is `critical` iff every projected derivative is within tolerance.
/// With `fd_eps` set, a CRN central difference is reported alongside.
pub fn criticality_test<L: Lagrangian + ?Sized>(
    ensemble: &PathEnsemble,
    lagrangian: &L,
    bank: &[VariationProcess],
    policy: TolerancePolicy,
    fd_eps: Option<f64>,
) -> Result<CriticalityReport> {
    if bank.is_empty() {
        return Err(Error::Empty("variation bank"));
    }
    let residual = el_residual(ensemble, lagrangian)?;
    let mut rows = Vec::with_capacity(bank.len());
    for k in bank {
        let ds = projected_gateaux(&residual, ensemble, k)?;
        let ds_fd = match fd_eps {
            Some(eps) => Some(projected_gateaux_fd(ensemble, lagrangian, k, eps)?.value),
            None => None,
        };
        rows.push(CriticalityRow {
            variation_id: k.id.clone(),
            path_dependent: k.is_path_dependent(),
            ds_analytic: ds.value,
            se: ds.se,
            ds_fd,
            within: policy.allows(&ds),
        });
    }
    let critical = rows.iter().all(|r| r.within);
    Ok(CriticalityReport {
        rows,
        policy,
        fd_eps,
        critical,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;
    use crate::lagrangian::{make_qem, Potential, PotentialSpec};
    use crate::semimartingale::{simulate, LinearSde};
    use crate::variations::{
        designed_variation, eval_variation, perturb, project_average, random_variation_bank,
        Profile,
    };
    use proptest::prelude::*;

    fn free() -> impl Lagrangian {
        make_qem(PotentialSpec::Zero)
    }

    #[test]
    fn wiener_action_is_zero() {
        let e = simulate(&LinearSde::wiener(1), &make_grid(32).unwrap(), 50, 1).unwrap();
        let s = action(&e, &free()).unwrap();
        assert_eq!(s.value, 0.0);
        assert_eq!(s.se, 0.0);
    }

    #[test]
    fn constant_drift_action_is_half() {
        let e = simulate(
            &LinearSde::constant(1.0, 1.0),
            &make_grid(64).unwrap(),
            20,
            1,
        )
        .unwrap();
        let s = action(&e, &free()).unwrap();
        assert!((s.value - 0.5).abs() < 1e-14);
    }

    struct Blowup;
    impl Lagrangian for Blowup {
        fn eval(&self, t: f64, _x: &[f64], _v: &[f64], _a: &[f64]) -> f64 {
            if t >= 0.5 {
                f64::NAN
            } else {
                1.0
            }
        }
        fn grad_x(&self, _t: f64, _x: &[f64], _v: &[f64], _a: &[f64], out: &mut [f64]) {
            out.fill(0.0)
        }
        fn grad_v(&self, _t: f64, _x: &[f64], _v: &[f64], _a: &[f64], out: &mut [f64]) {
            out.fill(f64::INFINITY)
        }
        fn descriptor(&self) -> String {
            "blowup".into()
        }
    }

    #[test]
    fn non_finite_values_name_path_and_step() {
        let e = simulate(&LinearSde::wiener(1), &make_grid(8).unwrap(), 3, 1).unwrap();
        assert_eq!(
            action(&e, &Blowup).unwrap_err(),
            Error::NonFinite {
                what: "Lagrangian value",
                path: 0,
                step: 4
            }
        );
        assert!(matches!(
            el_residual(&e, &Blowup),
            Err(Error::NonFinite {
                path: 0,
                step: 0,
                ..
            })
        ));
    }

    #[test]
    fn free_residual_equals_drift() {
        let e = simulate(
            &LinearSde::exponential_growth(),
            &make_grid(16).unwrap(),
            10,
            2,
        )
        .unwrap();
        let r = el_residual(&e, &free()).unwrap();
        assert_eq!(r.xi, e.drift);
    }

    #[test]
    fn linear_potential_residual() {
        let g = make_grid(20).unwrap();
        let model = LinearSde::new(
            2,
            crate::semimartingale::InitialLaw::Dirac {
                point: vec![0.0; 2],
            },
            vec![1.0, 1.0],
            vec![0.0; 4],
            vec![1.0, 0.0, 0.0, 1.0],
            "drift one",
        )
        .unwrap();
        let e = simulate(&model, &g, 4, 3).unwrap();
        let c = [0.5, -2.0];
        let l = make_qem(PotentialSpec::Linear { coeffs: c.to_vec() });
        let r = el_residual(&e, &l).unwrap();
        for p in 0..4 {
            for i in 0..20 {
                for k in 0..2 {
                    assert!((r.at(p, i)[k] - (1.0 - c[k] * g.t(i))).abs() < 1e-13);
                }
            }
        }
    }

    #[test]
    fn wiener_derivative_vanishes_for_every_variation() {
        let e = simulate(&LinearSde::wiener(1), &make_grid(32).unwrap(), 40, 4).unwrap();
        let r = el_residual(&e, &free()).unwrap();
        for k in random_variation_bank(1, 8, 3.0).unwrap() {
            let vs = eval_variation(&k, &e).unwrap();
            assert_eq!(gateaux_analytic(&r, &vs).unwrap().value, 0.0);
        }
        let report = criticality_test(
            &e,
            &free(),
            &random_variation_bank(1, 8, 3.0).unwrap(),
            TolerancePolicy::default(),
            Some(1e-3),
        )
        .unwrap();
        assert!(report.critical);
    }

    #[test]
    fn perturbed_action_matches_materialized_bitwise() {
        let e = simulate(
            &LinearSde::exponential_growth(),
            &make_grid(32).unwrap(),
            30,
            5,
        )
        .unwrap();
        let l = make_qem(PotentialSpec::DoubleWell { depth: 0.3 });
        let vs = eval_variation(&designed_variation(10.0), &e).unwrap();
        for eps in [0.0, 1e-3, -0.7] {
            let a = action_perturbed(&e, &l, &vs, eps).unwrap();
            let b = action(&perturb(&e, &vs, eps).unwrap(), &l).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn fd_matches_analytic_for_free_lagrangian() {
        let e = simulate(
            &LinearSde::exponential_growth(),
            &make_grid(64).unwrap(),
            200,
            6,
        )
        .unwrap();
        let r = el_residual(&e, &free()).unwrap();
        for k in random_variation_bank(2, 10, 5.0).unwrap() {
            let vs = project_average(&eval_variation(&k, &e).unwrap());
            let an = gateaux_analytic(&r, &vs).unwrap().value;
            for eps in [1e-3, 1e-2, 0.5] {
                let fd = gateaux_fd(&e, &free(), &vs, eps).unwrap().value;
                assert!((fd - an).abs() < 1e-10, "{} eps={eps}: {fd} vs {an}", k.id);
            }
        }
        let vs = eval_variation(&designed_variation(5.0), &e).unwrap();
        assert!(gateaux_fd(&e, &free(), &vs, 0.0).is_err());
        assert!(gateaux_fd(&e, &free(), &vs, -1.0).is_err());
    }

    #[test]
    fn fd_matches_analytic_with_smooth_potential() {
        let e = simulate(
            &LinearSde::exponential_growth(),
            &make_grid(64).unwrap(),
            200,
            7,
        )
        .unwrap();
        let l = make_qem(PotentialSpec::Cosine {
            amplitude: 0.8,
            freq: 1.3,
        });
        let r = el_residual(&e, &l).unwrap();
        let vs = eval_variation(
            &VariationProcess::deterministic(
                "sine",
                Profile::Sine {
                    freq: 1.0,
                    start: 0.0,
                    end: 1.0,
                },
                5.0,
            ),
            &e,
        )
        .unwrap();
        let an = gateaux_analytic(&r, &vs).unwrap().value;
        let fd = gateaux_fd(&e, &l, &vs, 1e-4).unwrap().value;
        // The predictable residual pairs grad_x at t_j with h at t_{j+1}; the
        // discrete derivative pairs it with h at t_j. The gap is exactly
        // -E[sum_j grad_x V(X_j) kdot_j] dt^2.
        let dt = e.grid.dt();
        let mut g = [0.0];
        let gap: f64 = (0..e.m_paths)
            .map(|p| {
                (0..64)
                    .map(|j| {
                        l.potential.grad(e.value(p, j), &mut g);
                        g[0] * vs.kdot_path(p)[j]
                    })
                    .sum::<f64>()
            })
            .sum::<f64>()
            * dt
            * dt
            / e.m_paths as f64;
        assert!(gap.abs() > 1e-4);
        assert!((fd - an + gap).abs() < 1e-8, "{fd} vs {an} with gap {gap}");
    }

    #[test]
    fn streamed_projection_matches_materialized() {
        let e = simulate(
            &LinearSde::exponential_growth(),
            &make_grid(32).unwrap(),
            40,
            9,
        )
        .unwrap();
        let r = el_residual(&e, &free()).unwrap();
        let mut bank = random_variation_bank(5, 12, 2.0).unwrap();
        bank.push(VariationProcess {
            endpoint_correction: crate::variations::EndpointCorrection::Terminal,
            factor: crate::variations::Factor::Running {
                coord: 0,
                map: crate::variations::FactorMap::Tanh,
            },
            ..bank[0].clone()
        });
        for k in &bank {
            let vs = project_average(&eval_variation(k, &e).unwrap());
            assert_eq!(
                projected_gateaux(&r, &e, k).unwrap(),
                gateaux_analytic(&r, &vs).unwrap(),
                "{}",
                k.id
            );
            let l = make_qem(PotentialSpec::DoubleWell { depth: 0.5 });
            assert_eq!(
                projected_gateaux_fd(&e, &l, k, 1e-3).unwrap(),
                gateaux_fd(&e, &l, &vs, 1e-3).unwrap(),
                "{}",
                k.id
            );
        }
    }

    #[test]
    fn mismatched_inputs_rejected() {
        let e = simulate(&LinearSde::wiener(1), &make_grid(16).unwrap(), 5, 1).unwrap();
        let other = simulate(&LinearSde::wiener(1), &make_grid(32).unwrap(), 5, 1).unwrap();
        let vs = eval_variation(&designed_variation(1.0), &other).unwrap();
        let r = el_residual(&e, &free()).unwrap();
        assert!(gateaux_analytic(&r, &vs).is_err());
        assert!(action_perturbed(&e, &free(), &vs, 0.1).is_err());
        assert!(criticality_test(&e, &free(), &[], TolerancePolicy::default(), None).is_err());
    }

    #[test]
    fn criticality_csv_layout() {
        let e = simulate(&LinearSde::wiener(1), &make_grid(16).unwrap(), 5, 1).unwrap();
        let bank = random_variation_bank(0, 3, 1.0).unwrap();
        let rep = criticality_test(&e, &free(), &bank, TolerancePolicy::default(), None).unwrap();
        let mut buf = Vec::new();
        rep.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "variation_id,dS_analytic,se,dS_fd,verdict");
        assert_eq!(lines.len(), 4);
        assert!(lines[1].starts_with("designed-square,"));
        assert!(lines[1].ends_with(",,within"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn analytic_derivative_is_linear(seed in 0u64..500, a in -2.0..2.0f64) {
            let e = simulate(&LinearSde::exponential_growth(), &make_grid(16).unwrap(), 20, seed).unwrap();
            let r = el_residual(&e, &free()).unwrap();
            let bank = random_variation_bank(seed, 3, 4.0).unwrap();
            let x = eval_variation(&bank[0], &e).unwrap();
            let y = eval_variation(&bank[1], &e).unwrap();
            let combo = VariationSamples::from_kdot("c", x.grid.clone(), 1, 20,
                x.kdot.iter().zip(&y.kdot).map(|(p, q)| a * p + q).collect(), 100.0, true).unwrap();
            let lhs = gateaux_analytic(&r, &combo).unwrap().value;
            let rhs = a * gateaux_analytic(&r, &x).unwrap().value + gateaux_analytic(&r, &y).unwrap().value;
            prop_assert!((lhs - rhs).abs() < 1e-12 * (1.0 + lhs.abs()) * 10.0);
        }

        #[test]
        fn projection_gap_is_mean_coupling(seed in 0u64..500) {
            let e = simulate(&LinearSde::exponential_growth(), &make_grid(16).unwrap(), 25, seed).unwrap();
            let r = el_residual(&e, &free()).unwrap();
            let k = &random_variation_bank(seed, 2, 4.0).unwrap()[1];
            let h = eval_variation(k, &e).unwrap();
            let jh = project_average(&h);
            let gap = gateaux_analytic(&r, &h).unwrap().value - gateaux_analytic(&r, &jh).unwrap().value;
            let mean_xi: Vec<f64> = (0..16).map(|i| (0..25).map(|p| r.at(p, i)[0]).sum::<f64>() / 25.0).collect();
            let expected: f64 = mean_xi.iter().zip(h.mean_kdot()).map(|(a, b)| a * b).sum::<f64>() * e.grid.dt();
            prop_assert!((gap - expected).abs() < 1e-12 * (1.0 + expected.abs()) * 10.0);
        }

        #[test]
        fn qem_action_is_quadratic_in_eps(seed in 0u64..500, depth in 0.0..2.0f64) {
            let e = simulate(&LinearSde::exponential_growth(), &make_grid(16).unwrap(), 15, seed).unwrap();
            let l = make_qem(PotentialSpec::Quadratic { stiffness: depth });
            let vs = eval_variation(&designed_variation(10.0), &e).unwrap();
            let s: Vec<f64> = [-0.2, -0.1, 0.0, 0.1, 0.2].iter()
                .map(|&eps| action_perturbed(&e, &l, &vs, eps).unwrap().value).collect();
            let d2a = s[2] - 2.0 * s[1] + s[0];
            let d2b = s[4] - 2.0 * s[3] + s[2];
            prop_assume!(d2a.abs() > 1e-9);
            prop_assert!((d2a - d2b).abs() <= 1e-8 * d2a.abs());
        }
    }
}
