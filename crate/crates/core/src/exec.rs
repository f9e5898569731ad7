//! Data-parallel helper with a sequential fallback.
//!
//! All hot loops (per-row rendering, per-row gradient accumulation, sweep
//! cells) go through [`map_indexed`]. With the default `parallel` feature the
//! work is distributed by rayon; without it the same closure runs on one
//! thread. Results always come back in index order, and callers reduce them
//! sequentially, so both modes produce bitwise-identical numbers.

#[cfg(feature = "parallel")]
pub(crate) fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}
