//! Data-parallel building blocks with a sequential fallback.
//!
//! With the `parallel` feature (default) these run on rayon; without it they
//! degrade to plain loops. Every helper is deterministic: integer reductions
//! are exact and associative, and floating-point reductions use fixed chunk
//! boundaries combined in index order, so results do not depend on thread
//! count or scheduling.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Chunk size for deterministic floating-point reductions.
const FLOAT_CHUNK: usize = 4096;

#[cfg(feature = "parallel")]
pub(crate) fn sort_unstable<T: Ord + Send>(items: &mut [T]) {
    items.par_sort_unstable();
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn sort_unstable<T: Ord>(items: &mut [T]) {
    items.sort_unstable();
}

#[cfg(feature = "parallel")]
pub(crate) fn sort_unstable_by_key<T, K, F>(items: &mut [T], key: F)
where
    T: Send,
    K: Ord + Send,
    F: Fn(&T) -> K + Sync,
{
    items.par_sort_unstable_by_key(key);
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn sort_unstable_by_key<T, K, F>(items: &mut [T], key: F)
where
    K: Ord,
    F: Fn(&T) -> K,
{
    items.sort_unstable_by_key(key);
}

#[cfg(feature = "parallel")]
pub(crate) fn map<T: Sync, R: Send, F: Fn(&T) -> R + Sync>(items: &[T], f: F) -> Vec<R> {
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn map<T, R, F: Fn(&T) -> R>(items: &[T], f: F) -> Vec<R> {
    items.iter().map(f).collect()
}

/// Applies `f(counts, i)` for every `i` in `0..n`, summing the integer count
/// vectors. Order-independent because integer addition is exact.
#[cfg(feature = "parallel")]
pub(crate) fn fold_counts<F>(n: usize, width: usize, f: F) -> Vec<u64>
where
    F: Fn(&mut [u64], usize) + Sync,
{
    (0..n)
        .into_par_iter()
        .fold(
            || vec![0u64; width],
            |mut acc, i| {
                f(&mut acc, i);
                acc
            },
        )
        .reduce(
            || vec![0u64; width],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
                a
            },
        )
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn fold_counts<F>(n: usize, width: usize, f: F) -> Vec<u64>
where
    F: Fn(&mut [u64], usize),
{
    let mut acc = vec![0u64; width];
    for i in 0..n {
        f(&mut acc, i);
    }
    acc
}

/// Deterministic sum of `f(i)` over `0..n` for accumulator types with an
/// exact-enough `merge` (chunks are fixed and merged in index order).
pub(crate) fn chunked_sum<A, F, M>(n: usize, identity: impl Fn() -> A, f: F, merge: M) -> A
where
    A: Send,
    F: Fn(A, usize) -> A + Sync,
    M: Fn(A, A) -> A,
{
    let chunks: Vec<(usize, usize)> = (0..n)
        .step_by(FLOAT_CHUNK)
        .map(|s| (s, (s + FLOAT_CHUNK).min(n)))
        .collect();
    let partials = map(&chunks, |&(s, e)| {
        let mut acc = identity();
        for i in s..e {
            acc = f(acc, i);
        }
        acc
    });
    partials.into_iter().fold(identity(), merge)
}
