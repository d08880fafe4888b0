//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (default) [`Execution::Parallel`] fans out over
//! rayon's global pool; without it every call runs sequentially. Output order
//! always follows input order, so reductions performed by callers over the
//! returned vectors are deterministic.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    /// Whether this build can actually run in parallel.
    pub fn parallel_available() -> bool {
        cfg!(feature = "parallel")
    }
}

/// Maps `f` over the inclusive integer range `lo..=hi`.
pub fn map_range<T, F>(exec: Execution, lo: i64, hi: i64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(i64) -> T + Sync + Send,
{
    if hi < lo {
        return Vec::new();
    }
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => (lo..=hi).into_par_iter().map(f).collect(),
        _ => (lo..=hi).map(f).collect(),
    }
}

/// Maps `f` over a slice.
pub fn map_slice<I, T, F>(exec: Execution, items: &[I], f: F) -> Vec<T>
where
    I: Sync,
    T: Send,
    F: Fn(&I) -> T + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => items.par_iter().map(f).collect(),
        _ => items.iter().map(f).collect(),
    }
}
