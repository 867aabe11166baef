//! Regular Lagrangians `L_t(x, v, a)` with analytic partial derivatives in
//! `x` and `v`, the kinetic-plus-potential family, and finite-difference
//! gradient checks.

use serde::{Deserialize, Serialize};

/// A Lagrangian defined on all of `[0,1] x R^d x R^d x R^{dxd}`.
///
/// `a` is the dispersion matrix, row-major. Implementations must be
/// reentrant; they are evaluated concurrently across paths.
pub trait Lagrangian: Send + Sync {
    fn eval(&self, t: f64, x: &[f64], v: &[f64], a: &[f64]) -> f64;
    fn grad_x(&self, t: f64, x: &[f64], v: &[f64], a: &[f64], out: &mut [f64]);
    fn grad_v(&self, t: f64, x: &[f64], v: &[f64], a: &[f64], out: &mut [f64]);
    fn descriptor(&self) -> String;
}

/// Potential energy `V(x)` with its gradient.
pub trait Potential: Send + Sync {
    fn value(&self, x: &[f64]) -> f64;
    fn grad(&self, x: &[f64], out: &mut [f64]);
    fn descriptor(&self) -> String;
}

/// Potentials that can be named in a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PotentialSpec {
    Zero,
    /// `stiffness * |x|^2 / 2`
    Quadratic {
        stiffness: f64,
    },
    /// `<coeffs, x>`
    Linear {
        coeffs: Vec<f64>,
    },
    /// `depth * sum_i (x_i^2 - 1)^2`
    DoubleWell {
        depth: f64,
    },
    /// `amplitude * sum_i cos(freq * x_i)`
    Cosine {
        amplitude: f64,
        freq: f64,
    },
}

impl Potential for PotentialSpec {
    fn value(&self, x: &[f64]) -> f64 {
        match self {
            PotentialSpec::Zero => 0.0,
            PotentialSpec::Quadratic { stiffness } => {
                0.5 * stiffness * x.iter().map(|v| v * v).sum::<f64>()
            }
            PotentialSpec::Linear { coeffs } => coeffs.iter().zip(x).map(|(c, v)| c * v).sum(),
            PotentialSpec::DoubleWell { depth } => {
                depth * x.iter().map(|v| (v * v - 1.0).powi(2)).sum::<f64>()
            }
            PotentialSpec::Cosine { amplitude, freq } => {
                amplitude * x.iter().map(|v| (freq * v).cos()).sum::<f64>()
            }
        }
    }

    fn grad(&self, x: &[f64], out: &mut [f64]) {
        match self {
            PotentialSpec::Zero => out.iter_mut().for_each(|o| *o = 0.0),
            PotentialSpec::Quadratic { stiffness } => {
                out.iter_mut().zip(x).for_each(|(o, v)| *o = stiffness * v)
            }
            PotentialSpec::Linear { coeffs } => {
                out.iter_mut().zip(coeffs).for_each(|(o, c)| *o = *c)
            }
            PotentialSpec::DoubleWell { depth } => out
                .iter_mut()
                .zip(x)
                .for_each(|(o, v)| *o = 4.0 * depth * v * (v * v - 1.0)),
            PotentialSpec::Cosine { amplitude, freq } => out
                .iter_mut()
                .zip(x)
                .for_each(|(o, v)| *o = -amplitude * freq * (freq * v).sin()),
        }
    }

    fn descriptor(&self) -> String {
        match self {
            PotentialSpec::Zero => "zero".into(),
            PotentialSpec::Quadratic { stiffness } => format!("quadratic(stiffness={stiffness})"),
            PotentialSpec::Linear { coeffs } => format!("linear(coeffs={coeffs:?})"),
            PotentialSpec::DoubleWell { depth } => format!("double_well(depth={depth})"),
            PotentialSpec::Cosine { amplitude, freq } => {
                format!("cosine(amplitude={amplitude},freq={freq})")
            }
        }
    }
}

/// `L(x, v, a) = |v|^2 / 2 + V(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QemLagrangian<P> {
    pub potential: P,
}

pub fn make_qem<P: Potential>(potential: P) -> QemLagrangian<P> {
    QemLagrangian { potential }
}

impl<P: Potential> Lagrangian for QemLagrangian<P> {
    fn eval(&self, _t: f64, x: &[f64], v: &[f64], _a: &[f64]) -> f64 {
        0.5 * v.iter().map(|u| u * u).sum::<f64>() + self.potential.value(x)
    }

    fn grad_x(&self, _t: f64, x: &[f64], _v: &[f64], _a: &[f64], out: &mut [f64]) {
        self.potential.grad(x, out)
    }

    fn grad_v(&self, _t: f64, _x: &[f64], v: &[f64], _a: &[f64], out: &mut [f64]) {
        out.copy_from_slice(v)
    }

    fn descriptor(&self) -> String {
        format!("qem(V={})", self.potential.descriptor())
    }
}

/// `<grad_x L, dx> + <grad_v L, dv>`.
pub fn directional_derivative<L: Lagrangian + ?Sized>(
    lagrangian: &L,
    t: f64,
    x: &[f64],
    v: &[f64],
    a: &[f64],
    dx: &[f64],
    dv: &[f64],
) -> f64 {
    let d = x.len();
    let mut gx = vec![0.0; d];
    let mut gv = vec![0.0; d];
    lagrangian.grad_x(t, x, v, a, &mut gx);
    lagrangian.grad_v(t, x, v, a, &mut gv);
    let ix: f64 = gx.iter().zip(dx).map(|(g, h)| g * h).sum();
    let iv: f64 = gv.iter().zip(dv).map(|(g, h)| g * h).sum();
    ix + iv
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePoint {
    pub t: f64,
    pub x: Vec<f64>,
    pub v: Vec<f64>,
    pub a: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientReport {
    pub checked: usize,
    /// Indices of points where the Lagrangian was not finite.
    pub skipped: Vec<usize>,
    pub max_rel_err_x: f64,
    pub max_rel_err_v: f64,
    pub eps: f64,
    pub tol: f64,
    pub pass: bool,
}

impl GradientReport {
    pub fn max_rel_err(&self) -> f64 {
        self.max_rel_err_x.max(self.max_rel_err_v)
    }
}

/// Error relative to the larger of the two magnitudes, floored at one so that
/// vanishing gradients are compared in absolute terms.
fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0)
}

/// Compares analytic gradients to central differences with step `eps`.
pub fn gradient_check<L: Lagrangian + ?Sized>(
    lagrangian: &L,
    points: &[SamplePoint],
    eps: f64,
    tol: f64,
) -> crate::Result<GradientReport> {
    if points.is_empty() {
        return Err(crate::Error::Empty("sample points"));
    }
    if !(eps > 0.0) {
        return Err(crate::error::invalid("eps", "must be positive"));
    }
    let mut report = GradientReport {
        checked: 0,
        skipped: Vec::new(),
        max_rel_err_x: 0.0,
        max_rel_err_v: 0.0,
        eps,
        tol,
        pass: true,
    };
    for (k, pt) in points.iter().enumerate() {
        let d = pt.x.len();
        let (t, a) = (pt.t, pt.a.as_slice());
        if !lagrangian.eval(t, &pt.x, &pt.v, a).is_finite() {
            report.skipped.push(k);
            continue;
        }
        let mut gx = vec![0.0; d];
        let mut gv = vec![0.0; d];
        lagrangian.grad_x(t, &pt.x, &pt.v, a, &mut gx);
        lagrangian.grad_v(t, &pt.x, &pt.v, a, &mut gv);
        let mut finite = true;
        for c in 0..d {
            let mut xp = pt.x.clone();
            let mut xm = pt.x.clone();
            xp[c] += eps;
            xm[c] -= eps;
            let fx = (lagrangian.eval(t, &xp, &pt.v, a) - lagrangian.eval(t, &xm, &pt.v, a))
                / (2.0 * eps);
            let mut vp = pt.v.clone();
            let mut vm = pt.v.clone();
            vp[c] += eps;
            vm[c] -= eps;
            let fv = (lagrangian.eval(t, &pt.x, &vp, a) - lagrangian.eval(t, &pt.x, &vm, a))
                / (2.0 * eps);
            if !(fx.is_finite() && fv.is_finite()) {
                finite = false;
                break;
            }
            report.max_rel_err_x = report.max_rel_err_x.max(rel_err(gx[c], fx));
            report.max_rel_err_v = report.max_rel_err_v.max(rel_err(gv[c], fv));
        }
        if finite {
            report.checked += 1;
        } else {
            report.skipped.push(k);
        }
    }
    report.pass = report.checked > 0 && report.max_rel_err() < tol;
    Ok(report)
}
