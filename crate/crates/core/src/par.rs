//! Thin switch between rayon and sequential iteration.
//!
//! Callers only use order-preserving maps and reductions with a total order,
//! so results do not depend on which path is compiled in or on the number of
//! worker threads.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Map over a slice, preserving input order.
pub fn map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// Map over `0..n`, preserving index order.
pub fn map_range<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
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

/// Largest `key(i)` over `0..n` under `cmp`, which must be a total order
/// that never reports two distinct indices as equal.
pub fn argmax_by<K, F, C>(n: usize, key: F, cmp: C) -> Option<(usize, K)>
where
    K: Send,
    F: Fn(usize) -> K + Sync + Send,
    C: Fn(&(usize, K), &(usize, K)) -> std::cmp::Ordering + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(|i| (i, key(i))).max_by(|a, b| cmp(a, b))
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(|i| (i, key(i))).max_by(|a, b| cmp(a, b))
    }
}

/// Whether the rayon path is compiled in.
pub const fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}
