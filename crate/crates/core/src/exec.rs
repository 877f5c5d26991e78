//! Trial-level execution: data-parallel by default, sequential on demand.
//!
//! Simulation trials are independent given their stream-addressed RNGs, so
//! running them is an order-insensitive indexed map. `indexed_map` uses the
//! rayon pool when the `parallel` feature is on (the default) and degrades to
//! a plain loop when it is off; `indexed_map_seq` is always sequential and
//! exists so benchmarks and determinism tests can compare the two directly.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Maps `f` over `0..n`, collecting results in index order.
pub fn indexed_map<T, F>(n: usize, f: F) -> Vec<T>
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

/// Sequential reference implementation of [`indexed_map`].
pub fn indexed_map_seq<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}
