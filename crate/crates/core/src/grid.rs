//! Uniform time grids on [0, 1], sampled paths and Cameron–Martin paths.
//!
//! Derivatives of Cameron–Martin paths are piecewise constant on the
//! left-closed intervals `[t_i, t_{i+1})`, so `h_{i+1} = h_i + hdot_i * dt`
//! and `h_0 = 0`. All multi-dimensional arrays are stored row-major with the
//! coordinate index varying fastest.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    n_steps: usize,
    dt: f64,
    times: Vec<f64>,
}

impl TimeGrid {
    pub fn new(n_steps: usize) -> Result<Self> {
        if n_steps == 0 {
            return Err(invalid("n_steps", "must be at least 1"));
        }
        let n = n_steps as f64;
        let times = (0..=n_steps).map(|i| i as f64 / n).collect();
        Ok(Self {
            n_steps,
            dt: 1.0 / n,
            times,
        })
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn t(&self, i: usize) -> f64 {
        self.times[i]
    }

    /// Nearest grid index to time `t`, clamped to `[0, n_steps]`.
    pub fn index_of(&self, t: f64) -> usize {
        let i = (t * self.n_steps as f64).round();
        if i <= 0.0 {
            0
        } else {
            (i as usize).min(self.n_steps)
        }
    }

    pub(crate) fn ensure_same(&self, other: &TimeGrid) -> Result<()> {
        if self.n_steps != other.n_steps {
            return Err(Error::GridMismatch(format!(
                "{} steps vs {} steps",
                self.n_steps, other.n_steps
            )));
        }
        Ok(())
    }
}

/// Uniform partition of [0, 1] into `n_steps` intervals.
pub fn make_grid(n_steps: usize) -> Result<TimeGrid> {
    TimeGrid::new(n_steps)
}

/// A path sampled at every grid time.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretePath {
    pub grid: TimeGrid,
    pub dim: usize,
    /// `(n_steps + 1) * dim` values.
    pub values: Vec<f64>,
}

impl DiscretePath {
    pub fn new(grid: TimeGrid, dim: usize, values: Vec<f64>) -> Result<Self> {
        let expected = (grid.n_steps() + 1) * dim;
        if values.len() != expected {
            return Err(Error::LengthMismatch {
                what: "path values",
                expected,
                got: values.len(),
            });
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "path value",
                path: 0,
                step: pos / dim.max(1),
            });
        }
        Ok(Self { grid, dim, values })
    }

    pub fn at(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn terminal(&self) -> &[f64] {
        self.at(self.grid.n_steps())
    }
}

/// Element of the Cameron–Martin space represented by its derivative.
#[derive(Debug, Clone, PartialEq)]
pub struct CameronMartinPath {
    pub grid: TimeGrid,
    pub dim: usize,
    /// `n_steps * dim` derivative values, one per interval.
    pub hdot: Vec<f64>,
}

impl CameronMartinPath {
    pub fn new(grid: TimeGrid, dim: usize, hdot: Vec<f64>) -> Result<Self> {
        let expected = grid.n_steps() * dim;
        if hdot.len() != expected {
            return Err(Error::LengthMismatch {
                what: "hdot",
                expected,
                got: hdot.len(),
            });
        }
        Ok(Self { grid, dim, hdot })
    }

    pub fn zero(grid: TimeGrid, dim: usize) -> Self {
        let n = grid.n_steps();
        Self {
            grid,
            dim,
            hdot: vec![0.0; n * dim],
        }
    }

    pub fn path(&self) -> DiscretePath {
        DiscretePath {
            grid: self.grid.clone(),
            dim: self.dim,
            values: integrate(&self.hdot, self.dim, self.grid.dt()),
        }
    }

    pub fn norm(&self) -> f64 {
        cm_norm(self)
    }

    /// Largest endpoint coordinate `max |h_1|`.
    pub fn endpoint_gap(&self) -> f64 {
        let p = self.path();
        p.terminal().iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

/// `h_0 = 0`, `h_{i+1} = h_i + hdot_i dt`, into a fresh `(n+1) * dim` buffer.
pub(crate) fn integrate(hdot: &[f64], dim: usize, dt: f64) -> Vec<f64> {
    let n = hdot.len() / dim.max(1);
    let mut out = vec![0.0; (n + 1) * dim];
    integrate_into(hdot, dim, dt, &mut out);
    out
}

pub(crate) fn integrate_into(hdot: &[f64], dim: usize, dt: f64, out: &mut [f64]) {
    let n = hdot.len() / dim.max(1);
    out[..dim].iter_mut().for_each(|v| *v = 0.0);
    for i in 0..n {
        for c in 0..dim {
            out[(i + 1) * dim + c] = out[i * dim + c] + hdot[i * dim + c] * dt;
        }
    }
}

/// Cumulative integral of a piecewise-constant derivative.
pub fn cumulative(hdot: &[f64], dim: usize, grid: &TimeGrid) -> Result<DiscretePath> {
    if dim == 0 {
        return Err(invalid("dim", "must be positive"));
    }
    let expected = grid.n_steps() * dim;
    if hdot.len() != expected {
        return Err(Error::LengthMismatch {
            what: "hdot",
            expected,
            got: hdot.len(),
        });
    }
    Ok(DiscretePath {
        grid: grid.clone(),
        dim,
        values: integrate(hdot, dim, grid.dt()),
    })
}

/// `<h, k>_H = sum_i <hdot_i, kdot_i> dt`.
pub fn cm_inner(h: &CameronMartinPath, k: &CameronMartinPath) -> Result<f64> {
    h.grid.ensure_same(&k.grid)?;
    if h.dim != k.dim {
        return Err(Error::Dimension(format!("{} vs {}", h.dim, k.dim)));
    }
    let dot: f64 = h.hdot.iter().zip(&k.hdot).map(|(a, b)| a * b).sum();
    Ok(dot * h.grid.dt())
}

pub fn cm_norm(h: &CameronMartinPath) -> f64 {
    let sq: f64 = h.hdot.iter().map(|a| a * a).sum();
    (sq * h.grid.dt()).sqrt()
}

/// Types that can be averaged coordinate-wise over an ensemble.
pub trait EnsembleMean: Sized {
    fn ensemble_mean(samples: &[Self]) -> Result<Self>;
}

fn mean_buffers<'a>(rows: impl Iterator<Item = &'a [f64]>, len: usize, count: usize) -> Vec<f64> {
    let mut acc = vec![0.0; len];
    for row in rows {
        for (a, v) in acc.iter_mut().zip(row) {
            *a += v;
        }
    }
    let inv = 1.0 / count as f64;
    acc.iter_mut().for_each(|a| *a *= inv);
    acc
}

impl EnsembleMean for CameronMartinPath {
    fn ensemble_mean(samples: &[Self]) -> Result<Self> {
        let first = samples.first().ok_or(Error::Empty("samples"))?;
        for s in samples {
            first.grid.ensure_same(&s.grid)?;
            if s.dim != first.dim {
                return Err(Error::Dimension(format!("{} vs {}", first.dim, s.dim)));
            }
        }
        let hdot = mean_buffers(
            samples.iter().map(|s| s.hdot.as_slice()),
            first.hdot.len(),
            samples.len(),
        );
        Ok(Self {
            grid: first.grid.clone(),
            dim: first.dim,
            hdot,
        })
    }
}

impl EnsembleMean for DiscretePath {
    fn ensemble_mean(samples: &[Self]) -> Result<Self> {
        let first = samples.first().ok_or(Error::Empty("samples"))?;
        for s in samples {
            first.grid.ensure_same(&s.grid)?;
            if s.dim != first.dim {
                return Err(Error::Dimension(format!("{} vs {}", first.dim, s.dim)));
            }
        }
        let values = mean_buffers(
            samples.iter().map(|s| s.values.as_slice()),
            first.values.len(),
            samples.len(),
        );
        Ok(Self {
            grid: first.grid.clone(),
            dim: first.dim,
            values,
        })
    }
}

/// Bochner (pathwise) mean of an ensemble of paths.
pub fn ensemble_mean_path<T: EnsembleMean>(samples: &[T]) -> Result<T> {
    T::ensemble_mean(samples)
}
