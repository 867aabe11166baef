//! Seeded Gaussian noise.
//!
//! Every path owns two ChaCha8 substreams of the generator seeded with the
//! run seed: stream `2p` feeds the Brownian increments of path `p` and stream
//! `2p + 1` feeds its initial-value sampler. Normals come from the ziggurat
//! sampler of `rand_distr`. Because a path's draws depend only on
//! `(seed, p)`, ensembles are identical regardless of how paths are
//! scheduled across workers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Result};
use crate::exec;
use crate::grid::TimeGrid;

pub fn noise_rng(seed: u64, path: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2 * path as u64);
    rng
}

pub fn initial_rng(seed: u64, path: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2 * path as u64 + 1);
    rng
}

/// Fills `out` (step-major, coordinate-minor) with N(0, dt) increments of path `p`.
pub fn fill_path_noise(seed: u64, path: usize, dt: f64, out: &mut [f64]) {
    let mut rng = noise_rng(seed, path);
    let sd = dt.sqrt();
    for v in out.iter_mut() {
        let z: f64 = StandardNormal.sample(&mut rng);
        *v = sd * z;
    }
}

/// Brownian increments for a whole ensemble, shape `(m_paths, n_steps, dim)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseBlock {
    pub seed: u64,
    pub m_paths: usize,
    pub n_steps: usize,
    pub dim: usize,
    pub dt: f64,
    pub increments: Vec<f64>,
}

impl NoiseBlock {
    pub fn path(&self, p: usize) -> &[f64] {
        let w = self.n_steps * self.dim;
        &self.increments[p * w..(p + 1) * w]
    }

    /// Brownian path `B_0 = 0, B_{i+1} = B_i + dB_i` of path `p`.
    pub fn brownian_path(&self, p: usize) -> Vec<f64> {
        crate::grid::integrate(self.path(p), self.dim, 1.0)
    }

    /// Sums groups of `factor` consecutive increments: the same Brownian
    /// motion observed on a grid `factor` times coarser.
    pub fn coarsen(&self, factor: usize) -> Result<NoiseBlock> {
        if factor == 0 || self.n_steps % factor != 0 {
            return Err(invalid(
                "factor",
                format!("must divide n_steps = {}", self.n_steps),
            ));
        }
        let n = self.n_steps / factor;
        let d = self.dim;
        let mut out = vec![0.0; self.m_paths * n * d];
        for p in 0..self.m_paths {
            let src = self.path(p);
            for i in 0..n {
                for c in 0..d {
                    out[(p * n + i) * d + c] =
                        (0..factor).map(|k| src[(i * factor + k) * d + c]).sum();
                }
            }
        }
        Ok(NoiseBlock {
            seed: self.seed,
            m_paths: self.m_paths,
            n_steps: n,
            dim: d,
            dt: self.dt * factor as f64,
            increments: out,
        })
    }
}

/// Reproducible i.i.d. N(0, dt) increments.
pub fn gaussian_stream(
    seed: u64,
    m_paths: usize,
    grid: &TimeGrid,
    dim: usize,
) -> Result<NoiseBlock> {
    if m_paths == 0 || dim == 0 {
        return Err(invalid("shape", "all dimensions must be positive"));
    }
    let n = grid.n_steps();
    let dt = grid.dt();
    let mut increments = vec![0.0; m_paths * n * dim];
    exec::for_each_row_mut(&mut increments, n * dim, |p, row| {
        fill_path_noise(seed, p, dt, row)
    });
    Ok(NoiseBlock {
        seed,
        m_paths,
        n_steps: n,
        dim,
        dt,
        increments,
    })
}
