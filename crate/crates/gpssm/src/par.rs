//! Thin execution-policy layer over the data-parallel inner loops.
//!
//! With the `parallel` feature (default) the loops run on rayon when the
//! caller asks for it; without the feature everything degrades to plain
//! sequential iteration and the `parallel` flag is ignored. Reductions are
//! always performed sequentially over the collected results so that both
//! execution modes produce bit-identical output.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Maps `f` over `0..n`, preserving index order in the output.
#[cfg(feature = "parallel")]
pub(crate) fn map_range<R, F>(parallel: bool, n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    if parallel && n > 1 {
        (0..n).into_par_iter().map(f).collect()
    } else {
        (0..n).map(f).collect()
    }
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn map_range<R, F>(_parallel: bool, n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    (0..n).map(f).collect()
}

