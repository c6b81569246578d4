//! Order-preserving work distribution.
//!
//! Every parallel site in the crate funnels through [`map_collect`], which
//! assigns work by index and collects results in index order. Output is
//! therefore byte-identical whether the `parallel` feature is enabled, and
//! for any rayon worker count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Apply `f` to `0..n` and collect results in input order.
pub fn map_collect<T, F>(n: usize, f: F) -> Vec<T>
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

/// Which execution path this build uses; handy for bench labels.
pub fn execution_mode() -> &'static str {
    if cfg!(feature = "parallel") {
        "parallel"
    } else {
        "sequential"
    }
}
