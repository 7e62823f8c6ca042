//! Thread-mode switch shared by every data-parallel loop in the crate.
//!
//! All parallel loops produce output in input order, and every random draw is
//! seeded from the item's identity rather than from a shared stream, so the
//! two modes yield identical results. `Deterministic` additionally pins the
//! work to the calling thread.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThreadMode {
    #[default]
    Deterministic,
    Parallel,
}

impl ThreadMode {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == ThreadMode::Parallel
    }
}

/// Sizes the global worker pool. Returns false when the pool was already
/// initialized or the crate was built without the `parallel` feature.
pub fn init_pool(threads: usize) -> bool {
    #[cfg(feature = "parallel")]
    {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build_global().is_ok()
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = threads;
        false
    }
}

/// Maps `f` over `items`, preserving order.
pub fn map_slice<T, R, F>(mode: ThreadMode, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode.is_parallel() {
        use rayon::prelude::*;
        return items.par_iter().map(f).collect();
    }
    let _ = mode;
    items.iter().map(f).collect()
}

/// Maps `f` over `0..n`, preserving order.
pub fn map_range<R, F>(mode: ThreadMode, n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode.is_parallel() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = mode;
    (0..n).map(f).collect()
}

/// Maps `f` over fixed-size chunks of `items`, preserving chunk order.
///
/// Chunk boundaries depend only on `chunk_size`, never on the thread count,
/// so reductions over the results are reproducible.
pub fn map_chunks<T, R, F>(mode: ThreadMode, items: &[T], chunk_size: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&[T]) -> R + Sync + Send,
{
    let chunk_size = chunk_size.max(1);
    #[cfg(feature = "parallel")]
    if mode.is_parallel() {
        use rayon::prelude::*;
        return items.par_chunks(chunk_size).map(f).collect();
    }
    let _ = mode;
    items.chunks(chunk_size).map(f).collect()
}
