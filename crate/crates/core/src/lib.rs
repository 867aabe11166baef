//! Monte Carlo toolkit for least-action principles on laws of continuous
//! semimartingales over `[0, 1]`.
//!
//! A law is represented by a [`PathEnsemble`]: simulated paths together with
//! the drift `v` and dispersion `alpha` characteristics observed along them.
//! On top of that the crate evaluates action functionals
//! `S = E[int_0^1 L_t(X_t, v_t, alpha_t) dt]`, their Gâteaux derivatives along
//! adapted Cameron–Martin variations with zero endpoints and zero ensemble
//! mean, and the Euler–Lagrange condition that the residual
//! `grad_v L - int grad_x L` splits into a deterministic function plus a
//! martingale.

pub mod action;
pub mod ensemble;
pub mod error;
pub mod euler_lagrange;
pub mod exec;
pub mod fbs;
pub mod grid;
pub mod io;
pub mod lagrangian;
pub mod semimartingale;
pub mod stats;
pub mod variations;

pub use ensemble::{Dispersion, PathEnsemble};
pub use error::{Error, Result};
pub use grid::{make_grid, CameronMartinPath, DiscretePath, TimeGrid};
pub use lagrangian::{make_qem, Lagrangian, Potential, PotentialSpec, QemLagrangian};
pub use semimartingale::{simulate, LinearSde, SemimartingaleModel};
pub use stats::Estimate;
