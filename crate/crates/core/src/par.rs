//! Data-parallel map with a sequential fallback when the `parallel`
//! feature is disabled. Results are returned in index order either way,
//! so reductions downstream are schedule-independent.

#[cfg(feature = "parallel")]
pub(crate) fn par_map<R: Send>(n: usize, f: impl Fn(usize) -> R + Send + Sync) -> Vec<R> {
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn par_map<R: Send>(n: usize, f: impl Fn(usize) -> R + Send + Sync) -> Vec<R> {
    (0..n).map(f).collect()
}
