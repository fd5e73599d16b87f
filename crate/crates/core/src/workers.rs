//! Bounded worker pool handed down from the caller.

use rayon::prelude::*;

#[derive(Debug, thiserror::Error)]
#[error("cannot create a worker pool with {workers} threads: {msg}")]
pub struct PoolError {
    pub workers: usize,
    pub msg: String,
}

/// Wraps a dedicated rayon pool. Modules never spawn threads of their own;
/// every parallel map goes through [`WorkerPool::map`], which keeps input
/// order so reductions downstream stay deterministic.
pub struct WorkerPool {
    pool: rayon::ThreadPool,
    workers: usize,
}

impl std::fmt::Debug for WorkerPool {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("WorkerPool").field("workers", &self.workers).finish()
    }
}

impl WorkerPool {
    pub fn new(workers: usize) -> Result<Self, PoolError> {
        if workers == 0 {
            return Err(PoolError { workers, msg: "worker count must be at least 1".into() });
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| PoolError { workers, msg: e.to_string() })?;
        Ok(Self { pool, workers })
    }

    pub fn serial() -> Self {
        Self::new(1).expect("single-thread pool")
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    /// Order-preserving parallel map.
    pub fn map<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        if self.workers == 1 {
            return items.iter().map(f).collect();
        }
        self.pool.install(|| items.par_iter().with_max_len(1).map(f).collect())
    }
}
