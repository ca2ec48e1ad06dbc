//! Sequential / data-parallel execution switch.
//!
//! With the `parallel` feature (default) the hot loops (index scoring,
//! insert-time link scoring, ablation sweeps) run on rayon. Without it, or
//! with [`Execution::Sequential`], the same closures run on the calling
//! thread. Results are identical either way: every parallel map preserves
//! input order.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Execution {
    Sequential,
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

/// Below this many items a parallel map is not worth the fork/join.
const PAR_MIN_LEN: usize = 128;

impl Execution {
    /// What will actually run given the compiled features.
    pub fn effective(self) -> Execution {
        if cfg!(feature = "parallel") {
            self
        } else {
            Execution::Sequential
        }
    }

    pub fn map<T, U, F>(self, items: &[T], f: F) -> Vec<U>
    where
        T: Sync,
        U: Send,
        F: Fn(&T) -> U + Sync + Send,
    {
        match self.effective() {
            Execution::Sequential => items.iter().map(f).collect(),
            Execution::Parallel => par_map(items, f, PAR_MIN_LEN),
        }
    }

    /// Like [`Execution::map`] but without the small-input cutoff, for
    /// coarse-grained work items such as whole experiment runs.
    pub fn map_coarse<T, U, F>(self, items: &[T], f: F) -> Vec<U>
    where
        T: Sync,
        U: Send,
        F: Fn(&T) -> U + Sync + Send,
    {
        match self.effective() {
            Execution::Sequential => items.iter().map(f).collect(),
            Execution::Parallel => par_map(items, f, 1),
        }
    }
}

#[cfg(feature = "parallel")]
fn par_map<T, U, F>(items: &[T], f: F, min_len: usize) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    use rayon::prelude::*;
    if items.len() < min_len {
        return items.iter().map(f).collect();
    }
    items.par_iter().with_min_len(min_len.max(1) / 4 + 1).map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn par_map<T, U, F>(items: &[T], f: F, _min_len: usize) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    items.iter().map(f).collect()
}
