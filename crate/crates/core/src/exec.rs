//! Path-parallel execution helpers.
//!
//! With the `parallel` feature (default) work is spread over the rayon pool;
//! without it every helper runs sequentially with identical results.
//!
//! Reductions come in two flavours. In exact-repro mode (the default) every
//! per-path contribution is materialized in path order and summed left to
//! right, so results are bitwise identical for any worker count. With
//! exact-repro switched off, sums use rayon's tree reduction, which is faster
//! but may differ in the last bits between runs with different pool sizes.

use std::sync::atomic::{AtomicBool, Ordering};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

static EXACT_REPRO: AtomicBool = AtomicBool::new(true);

pub fn set_exact_repro(on: bool) {
    EXACT_REPRO.store(on, Ordering::SeqCst);
}

pub fn exact_repro() -> bool {
    EXACT_REPRO.load(Ordering::SeqCst)
}

/// `(0..n).map(f).collect()` in path order.
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Fallible variant of [`map_indexed`]; the error reported is the one with the
/// lowest index.
pub fn try_map_indexed<T, E, F>(n: usize, f: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(usize) -> Result<T, E> + Sync + Send,
{
    let all = map_indexed(n, f);
    all.into_iter().collect()
}

/// Sum of `f(i)` for `i in 0..n`.
pub fn sum_indexed<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if !exact_repro() {
            return (0..n).into_par_iter().map(f).sum();
        }
    }
    ordered_sum(map_indexed(n, f))
}

/// Sums of `f(i)` and `f(i)^2` in one pass; used for mean and standard error.
pub fn sum_and_sq_indexed<F>(n: usize, f: F) -> (f64, f64)
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    sum_and_sq_of(&map_indexed(n, f))
}

/// Sums of `values` and of their squares.
pub fn sum_and_sq_of(values: &[f64]) -> (f64, f64) {
    #[cfg(feature = "parallel")]
    {
        if !exact_repro() {
            return values
                .par_iter()
                .map(|&v| (v, v * v))
                .reduce(|| (0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
        }
    }
    values
        .iter()
        .fold((0.0, 0.0), |(s, q), &v| (s + v, q + v * v))
}

/// Left-to-right summation.
pub fn ordered_sum(values: Vec<f64>) -> f64 {
    values.into_iter().fold(0.0, |acc, v| acc + v)
}

/// Runs `f(row, chunk)` over consecutive rows of `width` elements.
pub fn for_each_row_mut<F>(buf: &mut [f64], width: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    if width == 0 {
        return;
    }
    #[cfg(feature = "parallel")]
    {
        buf.par_chunks_mut(width)
            .enumerate()
            .for_each(|(i, row)| f(i, row));
    }
    #[cfg(not(feature = "parallel"))]
    {
        buf.chunks_mut(width)
            .enumerate()
            .for_each(|(i, row)| f(i, row));
    }
}

/// Runs `f(row, a_row, b_row)` over two row-aligned buffers. Stops at (and
/// returns) the error of the lowest failing row.
pub fn try_for_each_row2_mut<E, F>(
    a: &mut [f64],
    wa: usize,
    b: &mut [f64],
    wb: usize,
    f: F,
) -> Result<(), E>
where
    E: Send,
    F: Fn(usize, &mut [f64], &mut [f64]) -> Result<(), E> + Sync + Send,
{
    assert!(wa > 0 && wb > 0, "row widths must be positive");
    #[cfg(feature = "parallel")]
    let results: Vec<Result<(), E>> = a
        .par_chunks_mut(wa)
        .zip(b.par_chunks_mut(wb))
        .enumerate()
        .map(|(i, (ra, rb))| f(i, ra, rb))
        .collect();
    #[cfg(not(feature = "parallel"))]
    let results: Vec<Result<(), E>> = a
        .chunks_mut(wa)
        .zip(b.chunks_mut(wb))
        .enumerate()
        .map(|(i, (ra, rb))| f(i, ra, rb))
        .collect();
    results.into_iter().collect()
}

/// Three-buffer variant of [`try_for_each_row2_mut`].
pub fn try_for_each_row3_mut<E, F>(
    a: &mut [f64],
    wa: usize,
    b: &mut [f64],
    wb: usize,
    c: &mut [f64],
    wc: usize,
    f: F,
) -> Result<(), E>
where
    E: Send,
    F: Fn(usize, &mut [f64], &mut [f64], &mut [f64]) -> Result<(), E> + Sync + Send,
{
    assert!(wa > 0 && wb > 0 && wc > 0, "row widths must be positive");
    #[cfg(feature = "parallel")]
    let results: Vec<Result<(), E>> = a
        .par_chunks_mut(wa)
        .zip(b.par_chunks_mut(wb))
        .zip(c.par_chunks_mut(wc))
        .enumerate()
        .map(|(i, ((ra, rb), rc))| f(i, ra, rb, rc))
        .collect();
    #[cfg(not(feature = "parallel"))]
    let results: Vec<Result<(), E>> = a
        .chunks_mut(wa)
        .zip(b.chunks_mut(wb))
        .zip(c.chunks_mut(wc))
        .enumerate()
        .map(|(i, ((ra, rb), rc))| f(i, ra, rb, rc))
        .collect();
    results.into_iter().collect()
}
