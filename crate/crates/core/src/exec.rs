//! Execution strategy for the embarrassingly parallel batches (episodes,
//! sweep cells).
//!
//! With the `parallel` feature (default) `map_indexed` fans work across the
//! rayon pool; without it the same call runs sequentially. Results always
//! come back in index order and all downstream reductions run sequentially
//! over that order, so the two builds, and any thread count, produce
//! byte-identical output. `map_indexed_seq` is the always-sequential twin,
//! kept callable in parallel builds so benches can compare the two paths.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Maps `f` over `0..n`, returning results in index order.
#[cfg(feature = "parallel")]
pub fn map_indexed<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    (0..n).into_par_iter().map(f).collect()
}

/// Maps `f` over `0..n`, returning results in index order.
#[cfg(not(feature = "parallel"))]
pub fn map_indexed<T>(n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    (0..n).map(f).collect()
}

/// Sequential twin of `map_indexed`; the baseline arm of the bench suite.
pub fn map_indexed_seq<T>(n: usize, f: impl Fn(usize) -> T + Sync) -> Vec<T> {
    (0..n).map(f).collect()
}
