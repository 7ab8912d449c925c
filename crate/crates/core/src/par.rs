//! Compute-backend selection: data-parallel (rayon) or sequential.
//!
//! The default build enables the `parallel` feature and fans batch work out
//! across rayon workers. Building without the feature, or calling
//! [`set_backend`]`(Backend::Sequential)`, forces the single-threaded path.
//! Both paths produce identical results; only wall time differs.

use std::sync::atomic::{AtomicBool, Ordering};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    Sequential,
    Parallel,
}

static PARALLEL_ENABLED: AtomicBool = AtomicBool::new(cfg!(feature = "parallel"));

/// Select the compute backend at runtime. `Parallel` is a no-op when the
/// crate was built without the `parallel` feature.
pub fn set_backend(backend: Backend) {
    let want = backend == Backend::Parallel && cfg!(feature = "parallel");
    PARALLEL_ENABLED.store(want, Ordering::SeqCst);
}

pub fn backend() -> Backend {
    if PARALLEL_ENABLED.load(Ordering::SeqCst) {
        Backend::Parallel
    } else {
        Backend::Sequential
    }
}

/// Map `f` over `items`, preserving input order in the output.
pub fn map_ordered<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if backend() == Backend::Parallel {
        use rayon::prelude::*;
        return items.par_iter().map(&f).collect();
    }
    items.iter().map(f).collect()
}

/// Fold `items` into per-worker accumulators and merge them.
///
/// `make` builds an empty accumulator, `fold` consumes one item, `merge`
/// combines two accumulators. The merge order is unspecified, so the
/// operation must be commutative up to the tolerance the caller cares about.
pub fn fold_reduce<T, A, M, F, R>(items: &[T], make: M, fold: F, merge: R) -> A
where
    T: Sync,
    A: Send,
    M: Fn() -> A + Sync + Send,
    F: Fn(A, &T) -> A + Sync + Send,
    R: Fn(A, A) -> A + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if backend() == Backend::Parallel {
        use rayon::prelude::*;
        return items
            .par_iter()
            .fold(&make, |acc, item| fold(acc, item))
            .reduce(&make, merge);
    }
    let _ = &merge;
    items.iter().fold(make(), |acc, item| fold(acc, item))
}
