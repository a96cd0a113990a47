//! Worker execution for training and evaluation.
//!
//! With the `parallel` feature (on by default) [`Execution::Parallel`] runs
//! workers on a dedicated rayon pool with one thread per worker. Without the
//! feature, or with [`Execution::Sequential`], workers run one after another
//! on the calling thread; the logical partition of work is the same either
//! way.

use std::fmt;
use std::str::FromStr;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum Execution {
    #[default]
    Parallel,
    Sequential,
}

impl Execution {
    /// Whether this build can actually run workers concurrently.
    pub const fn parallel_available() -> bool {
        cfg!(feature = "parallel")
    }
}

impl fmt::Display for Execution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Execution::Parallel => "parallel",
            Execution::Sequential => "sequential",
        })
    }
}

impl FromStr for Execution {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "parallel" => Ok(Execution::Parallel),
            "sequential" => Ok(Execution::Sequential),
            other => Err(format!("unknown execution mode {other:?}")),
        }
    }
}

pub struct WorkerPool {
    threads: usize,
    #[cfg(feature = "parallel")]
    pool: Option<rayon::ThreadPool>,
}

impl WorkerPool {
    pub fn new(threads: usize, execution: Execution) -> Self {
        let threads = threads.max(1);
        #[cfg(feature = "parallel")]
        {
            let pool = (execution == Execution::Parallel && threads > 1).then(|| {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(threads)
                    .thread_name(|i| format!("kge-worker-{i}"))
                    .build()
                    .expect("failed to spawn worker threads")
            });
            WorkerPool { threads, pool }
        }
        #[cfg(not(feature = "parallel"))]
        {
            let _ = execution;
            WorkerPool { threads }
        }
    }

    pub fn threads(&self) -> usize {
        self.threads
    }

    pub fn is_concurrent(&self) -> bool {
        #[cfg(feature = "parallel")]
        {
            self.pool.is_some()
        }
        #[cfg(not(feature = "parallel"))]
        {
            false
        }
    }

    /// Runs `f(i, &mut states[i])` for every state, one task per state, and
    /// returns the results in state order.
    pub fn map_states<S, T, F>(&self, states: &mut [S], f: F) -> Vec<T>
    where
        S: Send,
        T: Send,
        F: Fn(usize, &mut S) -> T + Sync,
    {
        #[cfg(feature = "parallel")]
        if let Some(pool) = &self.pool {
            use rayon::prelude::*;
            return pool.install(|| {
                states
                    .par_iter_mut()
                    .enumerate()
                    .with_max_len(1)
                    .map(|(i, s)| f(i, s))
                    .collect()
            });
        }
        states
            .iter_mut()
            .enumerate()
            .map(|(i, s)| f(i, s))
            .collect()
    }

    /// Maps `f` over `0..n`, returning results in index order.
    pub fn map_range<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync,
    {
        #[cfg(feature = "parallel")]
        if let Some(pool) = &self.pool {
            use rayon::prelude::*;
            return pool.install(|| (0..n).into_par_iter().map(&f).collect());
        }
        (0..n).map(f).collect()
    }
}
