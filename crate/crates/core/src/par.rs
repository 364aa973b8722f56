//! Data-parallel map with a sequential fallback.
//!
//! With the `parallel` feature (default) work fans out over rayon's pool.
//! Without it, or with [`Execution::Sequential`], items run in order on the
//! calling thread. Output order is the index order either way.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// How a batch of independent items is executed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Execution {
    #[default]
    Parallel,
    Sequential,
}

impl Execution {
    /// True if this build can actually run items concurrently.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

/// `f(0), f(1), …, f(count-1)` collected in index order.
pub fn map_indexed<T, F>(count: usize, exec: Execution, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        return (0..count).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..count).map(f).collect()
}
