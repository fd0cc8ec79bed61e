//! Data-parallel map with a sequential fallback.
//!
//! With the `parallel` feature (default) [`Parallelism::Parallel`] runs on the
//! rayon pool; without it every call runs sequentially. Results are always
//! returned in input order, so reductions over them are reproducible.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parallelism {
    #[default]
    Parallel,
    Sequential,
}

impl Parallelism {
    /// Whether this build can actually run work in parallel.
    pub fn available() -> bool {
        cfg!(feature = "parallel")
    }
}

/// Maps `f` over `items`, preserving order.
pub fn map<T, R, F>(items: &[T], mode: Parallelism, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    match mode {
        #[cfg(feature = "parallel")]
        Parallelism::Parallel => {
            use rayon::prelude::*;
            items.par_iter().map(f).collect()
        }
        _ => items.iter().map(f).collect(),
    }
}

/// Maps `f` over `0..n`, preserving order.
pub fn map_range<R, F>(n: usize, mode: Parallelism, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    match mode {
        #[cfg(feature = "parallel")]
        Parallelism::Parallel => {
            use rayon::prelude::*;
            (0..n).into_par_iter().map(f).collect()
        }
        _ => (0..n).map(f).collect(),
    }
}

/// Sizes the global worker pool. Only the first call takes effect.
pub fn configure_workers(workers: usize) -> Result<()> {
    if workers == 0 {
        return Err(Error::param("worker count must be positive"));
    }
    #[cfg(feature = "parallel")]
    {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(workers).build_global() {
            log::debug!("worker pool already initialised: {e}");
        }
    }
    Ok(())
}
