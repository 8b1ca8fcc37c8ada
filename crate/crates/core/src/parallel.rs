//! Compatibility layer for rayon/sequential execution.
//!
//! With the `parallel` feature (default) the member-wise maps below fan out
//! on the rayon pool; without it they run sequentially. Results are always
//! collected in input order, so both modes produce bit-identical output.

/// Fan-out only pays off once the per-call work dwarfs the scheduling cost;
/// small ensembles stay sequential.
#[cfg(feature = "parallel")]
const MIN_PAR_ITEMS: usize = 64;

/// Map over ensemble members (or other homogeneous item lists), in order.
///
/// Work is handed to the pool in a few large chunks rather than per item;
/// member-level work units are far too small to pay for fine-grained
/// splitting. Chunks are collected by index and flattened sequentially, so
/// the output order never depends on scheduling.
#[cfg(feature = "parallel")]
pub(crate) fn map_members<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    use rayon::prelude::*;
    if items.len() >= MIN_PAR_ITEMS {
        let jobs = 2 * rayon::current_num_threads().max(1);
        let chunk = items.len().div_ceil(jobs);
        let parts: Vec<Vec<U>> = items
            .par_chunks(chunk)
            .map(|part| part.iter().map(&f).collect())
            .collect();
        parts.into_iter().flatten().collect()
    } else {
        items.iter().map(f).collect()
    }
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn map_members<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U,
{
    items.iter().map(f).collect()
}

/// Map over a handful of coarse tasks (independent solver runs); every task
/// is assumed heavy, so there is no minimum-size cutoff.
#[cfg(feature = "parallel")]
pub(crate) fn map_tasks<T, U, F>(items: Vec<T>, f: F) -> Vec<U>
where
    T: Send,
    U: Send,
    F: Fn(T) -> U + Sync + Send,
{
    use rayon::prelude::*;
    items.into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn map_tasks<T, U, F>(items: Vec<T>, f: F) -> Vec<U>
where
    F: Fn(T) -> U,
{
    items.into_iter().map(f).collect()
}
