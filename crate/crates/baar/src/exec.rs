//! Host services the interpreter needs: a thread pool and a clock.

use std::time::Instant;

use baar_core::interp::{ChunkResult, Clock, ParallelRunner};
use rayon::prelude::*;

/// Runs parallel-loop chunks on a dedicated rayon pool.
pub struct PoolRunner {
    pool: rayon::ThreadPool,
    workers: usize,
}

impl PoolRunner {
    pub fn new(workers: usize) -> Result<Self, rayon::ThreadPoolBuildError> {
        let workers = workers.max(1);
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .thread_name(|k| format!("baar-worker-{k}"))
            .build()?;
        Ok(PoolRunner { pool, workers })
    }
}

impl ParallelRunner for PoolRunner {
    fn workers(&self) -> usize {
        self.workers
    }

    fn run(&self, tasks: usize, task: &(dyn Fn(usize) -> ChunkResult + Sync)) -> Vec<ChunkResult> {
        self.pool.install(|| (0..tasks).into_par_iter().map(task).collect())
    }
}

/// Nanoseconds since construction, from [`Instant`].
#[derive(Debug, Clone, Copy)]
pub struct MonotonicClock(Instant);

impl Default for MonotonicClock {
    fn default() -> Self {
        MonotonicClock(Instant::now())
    }
}

impl Clock for MonotonicClock {
    fn now_ns(&self) -> u64 {
        self.0.elapsed().as_nanos() as u64
    }
}

/// Logical cores of the host, at least 1.
pub fn host_cores() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}
