//! Splitting the residual `xi` into a deterministic part `A` and a candidate
//! martingale `N`, and testing `N`.
//!
//! `A` is defined as the ensemble mean of `xi`. Whether the true drift part
//! is deterministic cannot be checked directly; a random component left in
//! `A` would show up in `N` and fail the martingale test.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::action::ResidualSamples;
use crate::ensemble::PathEnsemble;
use crate::error::{invalid, Error, Result};
use crate::exec;
use crate::grid::TimeGrid;
use crate::io::{fmt_f64, write_csv};
use crate::stats::{
    default_functionals, default_pairs, martingale_test, row_mean, Estimate, MartingaleTestReport,
    ProcessSamples, TestFunctional,
};

#[derive(Debug, Clone, PartialEq)]
pub struct ELDecomposition {
    pub grid: TimeGrid,
    pub dim: usize,
    pub m_paths: usize,
    /// `n_steps * dim`
    pub a: Vec<f64>,
    /// `m_paths * n_steps * dim`, `xi - A`
    pub n_samples: Vec<f64>,
    /// `int |A|^2 dt`
    pub energy_a: f64,
    /// `E[int |N|^2 dt]`
    pub energy_n: Estimate,
}

impl ELDecomposition {
    pub fn n_steps(&self) -> usize {
        self.grid.n_steps()
    }

    pub fn a_at(&self, i: usize) -> &[f64] {
        &self.a[i * self.dim..(i + 1) * self.dim]
    }

    pub fn n_path(&self, p: usize) -> &[f64] {
        let w = self.n_steps() * self.dim;
        &self.n_samples[p * w..(p + 1) * w]
    }

    /// Coordinate `c` of `N`, `m_paths * n_steps` values.
    pub fn n_coordinate(&self, c: usize) -> Vec<f64> {
        self.n_samples
            .iter()
            .skip(c)
            .step_by(self.dim)
            .copied()
            .collect()
    }

    /// Residual samples holding `N`, so that it can be decomposed again.
    pub fn martingale_part(&self) -> ResidualSamples {
        ResidualSamples {
            grid: self.grid.clone(),
            dim: self.dim,
            m_paths: self.m_paths,
            xi: self.n_samples.clone(),
        }
    }

    /// Columns `t,A0,A1,..` on the left endpoints of the grid intervals.
    pub fn write_a_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut header = vec!["t".to_string()];
        header.extend((0..self.dim).map(|c| format!("A{c}")));
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        let rows: Vec<Vec<String>> = (0..self.n_steps())
            .map(|i| {
                std::iter::once(fmt_f64(self.grid.t(i)))
                    .chain(self.a_at(i).iter().map(|&v| fmt_f64(v)))
                    .collect()
            })
            .collect();
        write_csv(out, &header, &rows)
    }
}

pub fn decompose(residual: &ResidualSamples) -> Result<ELDecomposition> {
    let m = residual.m_paths;
    if m < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: m });
    }
    let w = residual.n_steps() * residual.dim;
    let a = row_mean(&residual.xi, w);
    let mut n_samples = residual.xi.clone();
    exec::for_each_row_mut(&mut n_samples, w, |_, row| {
        row.iter_mut().zip(&a).for_each(|(x, s)| *x -= s)
    });
    let dt = residual.grid.dt();
    let energy_a = a.iter().map(|v| v * v).sum::<f64>() * dt;
    let per_path = exec::map_indexed(m, |p| {
        n_samples[p * w..(p + 1) * w]
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            * dt
    });
    let (s, q) = exec::sum_and_sq_of(&per_path);
    Ok(ELDecomposition {
        grid: residual.grid.clone(),
        dim: residual.dim,
        m_paths: m,
        a,
        n_samples,
        energy_a,
        energy_n: Estimate::from_sums(s, q, m),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ELReport {
    /// One martingale test per coordinate of `N`, each at `alpha / dim`.
    pub coordinate_tests: Vec<MartingaleTestReport>,
    pub energy_a: f64,
    pub energy_n: Estimate,
    pub energies_finite: bool,
    pub alpha: f64,
    pub note: String,
    pub pass: bool,
}

impl ELReport {
    pub fn verdict(&self) -> &'static str {
        if self.pass {
            "EL-satisfied"
        } else {
            "EL-violated"
        }
    }
}

/// Martingale test on each coordinate of `N` with the default functionals
/// and time pairs. Path-coordinate functionals are included when the
/// underlying ensemble is supplied.
pub fn el_verdict(
    decomp: &ELDecomposition,
    ensemble: Option<&PathEnsemble>,
    alpha: f64,
) -> Result<ELReport> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(invalid("alpha", "must lie in (0, 1)"));
    }
    let paths = match ensemble {
        Some(e) => {
            decomp.grid.ensure_same(&e.grid)?;
            if e.m_paths != decomp.m_paths {
                return Err(Error::Dimension(format!(
                    "ensemble has {} paths, decomposition {}",
                    e.m_paths, decomp.m_paths
                )));
            }
            Some((e.paths.as_slice(), e.dim))
        }
        None => None,
    };
    let functionals: Vec<TestFunctional> = match paths {
        Some((_, d)) => default_functionals(d),
        None => vec![
            TestFunctional::One,
            TestFunctional::Level,
            TestFunctional::LevelSquared,
        ],
    };
    let level = alpha / decomp.dim as f64;
    let mut coordinate_tests = Vec::with_capacity(decomp.dim);
    for c in 0..decomp.dim {
        let values = decomp.n_coordinate(c);
        let samples = ProcessSamples {
            grid: &decomp.grid,
            m_paths: decomp.m_paths,
            len: decomp.n_steps(),
            values: &values,
            paths,
        };
        coordinate_tests.push(martingale_test(
            &samples,
            &functionals,
            &default_pairs(),
            level,
        )?);
    }
    let energies_finite = decomp.energy_a.is_finite() && decomp.energy_n.value.is_finite();
    let pass = energies_finite && coordinate_tests.iter().all(|r| r.pass);
    Ok(ELReport {
        coordinate_tests,
        energy_a: decomp.energy_a,
        energy_n: decomp.energy_n,
        energies_finite,
        alpha,
        note: "A is the ensemble mean of the residual; its determinism is only tested through the martingale test on N".into(),
        pass,
    })
}
