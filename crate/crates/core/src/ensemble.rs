//! Empirical representation of a semimartingale law: sampled paths plus the
//! drift and dispersion characteristics observed along each of them.

use std::io::Write;

use crate::error::{Error, Result};
use crate::grid::{DiscretePath, TimeGrid};
use crate::io::fmt_f64;

/// Dispersion samples `alpha = sigma sigma^T`, one `dim x dim` matrix per
/// path and step. Models with state-independent noise coefficients store a
/// single shared matrix.
#[derive(Debug, Clone, PartialEq)]
pub enum Dispersion {
    Constant(Vec<f64>),
    PerStep(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    pub grid: TimeGrid,
    pub dim: usize,
    pub m_paths: usize,
    /// `m_paths * (n_steps + 1) * dim`
    pub paths: Vec<f64>,
    /// `m_paths * n_steps * dim`, left-endpoint drift samples
    pub drift: Vec<f64>,
    pub dispersion: Dispersion,
    pub seed: u64,
    pub provenance: String,
}

impl PathEnsemble {
    pub fn new(
        grid: TimeGrid,
        dim: usize,
        m_paths: usize,
        paths: Vec<f64>,
        drift: Vec<f64>,
        dispersion: Dispersion,
        seed: u64,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        let n = grid.n_steps();
        let check = |what, expected, got| {
            if expected != got {
                Err(Error::LengthMismatch {
                    what,
                    expected,
                    got,
                })
            } else {
                Ok(())
            }
        };
        check("paths", m_paths * (n + 1) * dim, paths.len())?;
        check("drift", m_paths * n * dim, drift.len())?;
        match &dispersion {
            Dispersion::Constant(a) => check("dispersion", dim * dim, a.len())?,
            Dispersion::PerStep(a) => check("dispersion", m_paths * n * dim * dim, a.len())?,
        }
        Ok(Self {
            grid,
            dim,
            m_paths,
            paths,
            drift,
            dispersion,
            seed,
            provenance: provenance.into(),
        })
    }

    pub fn n_steps(&self) -> usize {
        self.grid.n_steps()
    }

    pub fn path_len(&self) -> usize {
        (self.n_steps() + 1) * self.dim
    }

    pub fn drift_len(&self) -> usize {
        self.n_steps() * self.dim
    }

    pub fn path(&self, p: usize) -> &[f64] {
        let w = self.path_len();
        &self.paths[p * w..(p + 1) * w]
    }

    pub fn drift_path(&self, p: usize) -> &[f64] {
        let w = self.drift_len();
        &self.drift[p * w..(p + 1) * w]
    }

    pub fn value(&self, p: usize, i: usize) -> &[f64] {
        let d = self.dim;
        &self.path(p)[i * d..(i + 1) * d]
    }

    pub fn drift_at(&self, p: usize, i: usize) -> &[f64] {
        let d = self.dim;
        &self.drift_path(p)[i * d..(i + 1) * d]
    }

    pub fn dispersion_at(&self, p: usize, i: usize) -> &[f64] {
        let dd = self.dim * self.dim;
        match &self.dispersion {
            Dispersion::Constant(a) => a,
            Dispersion::PerStep(a) => {
                let off = (p * self.n_steps() + i) * dd;
                &a[off..off + dd]
            }
        }
    }

    pub fn discrete_path(&self, p: usize) -> DiscretePath {
        DiscretePath {
            grid: self.grid.clone(),
            dim: self.dim,
            values: self.path(p).to_vec(),
        }
    }

    /// Coordinate `c` of every path at grid index `i`.
    pub fn marginal(&self, i: usize, c: usize) -> Vec<f64> {
        (0..self.m_paths).map(|p| self.value(p, i)[c]).collect()
    }

    pub fn terminal_marginal(&self, c: usize) -> Vec<f64> {
        self.marginal(self.n_steps(), c)
    }

    /// Symmetry plus non-negative 1x1 and 2x2 principal minors on every stored
    /// dispersion matrix. Exact PSD test for d <= 2, a necessary condition above.
    pub fn dispersion_is_psd(&self, tol: f64) -> bool {
        let d = self.dim;
        let check = |a: &[f64]| -> bool {
            for r in 0..d {
                if a[r * d + r] < -tol {
                    return false;
                }
                for c in 0..d {
                    if (a[r * d + c] - a[c * d + r]).abs() > tol {
                        return false;
                    }
                    if c > r {
                        let minor = a[r * d + r] * a[c * d + c] - a[r * d + c] * a[c * d + r];
                        if minor < -tol {
                            return false;
                        }
                    }
                }
            }
            true
        };
        match &self.dispersion {
            Dispersion::Constant(a) => check(a),
            Dispersion::PerStep(a) => a.chunks(d * d).all(check),
        }
    }

    /// Columnar CSV dump: `path_id,step,t,x0..,v0..,a00..`. Drift and
    /// dispersion columns are empty on the terminal row, which has no
    /// interval to the right.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let d = self.dim;
        let mut header = vec!["path_id".to_string(), "step".into(), "t".into()];
        header.extend((0..d).map(|c| format!("x{c}")));
        header.extend((0..d).map(|c| format!("v{c}")));
        for r in 0..d {
            for c in 0..d {
                header.push(format!("a{r}{c}"));
            }
        }
        writeln!(out, "{}", header.join(","))?;
        let n = self.n_steps();
        for p in 0..self.m_paths {
            for i in 0..=n {
                let mut row = vec![p.to_string(), i.to_string(), fmt_f64(self.grid.t(i))];
                row.extend(self.value(p, i).iter().map(|&v| fmt_f64(v)));
                if i < n {
                    row.extend(self.drift_at(p, i).iter().map(|&v| fmt_f64(v)));
                    row.extend(self.dispersion_at(p, i).iter().map(|&v| fmt_f64(v)));
                } else {
                    row.extend(std::iter::repeat_n(String::new(), d + d * d));
                }
                writeln!(out, "{}", row.join(","))?;
            }
        }
        Ok(())
    }
}
