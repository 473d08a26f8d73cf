//! Deterministic parallel map over path indices.
//!
//! Results are collected in index order and every path owns a seed derived
//! from `(master_seed, index)`, so output never depends on the thread count.

use rayon::prelude::*;

use crate::rng::derive_seed;

/// `f(index, seed)` for `index in 0..n_paths`, in index order.
pub fn map_paths<T, F>(n_paths: usize, master_seed: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, u64) -> T + Sync + Send,
{
    (0..n_paths)
        .into_par_iter()
        .map(|i| f(i, derive_seed(master_seed, i as u64)))
        .collect()
}

/// Runs `op` on a dedicated pool with `threads` workers.
pub fn with_threads<R: Send>(threads: usize, op: impl FnOnce() -> R + Send) -> R {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .expect("thread pool")
        .install(op)
}
