//! Rayon-backed executor with a thread cap.

use metareward_core::exec::{job_error, Executor, Sequential};
use metareward_core::Result;
use rayon::prelude::*;

/// Environment variable capping the number of worker threads.
pub const THREADS_VAR: &str = "METAREWARD_THREADS";

/// Runs jobs on a dedicated rayon pool, or inline when capped at one thread.
pub struct Pool {
    inner: Option<rayon::ThreadPool>,
    workers: usize,
}

impl Pool {
    pub fn new(threads: usize) -> Self {
        let threads = threads.max(1);
        if threads == 1 {
            return Pool { inner: None, workers: 1 };
        }
        let inner = rayon::ThreadPoolBuilder::new().num_threads(threads).build().expect("thread pool");
        Pool { inner: Some(inner), workers: threads }
    }

    /// Thread count from `METAREWARD_THREADS`, else the available parallelism.
    pub fn from_env() -> std::result::Result<Self, metareward_core::Error> {
        Ok(Pool::new(threads_from_env()?))
    }
}

/// Worker count for a run: the configured cap, lowered further by
/// `METAREWARD_THREADS` when set.
pub fn effective_threads(configured: Option<usize>) -> std::result::Result<usize, metareward_core::Error> {
    let env = match std::env::var(THREADS_VAR) {
        Ok(_) => Some(threads_from_env()?),
        Err(_) => None,
    };
    Ok(match (configured, env) {
        (Some(c), Some(e)) => c.min(e),
        (Some(c), None) => c,
        (None, Some(e)) => e,
        (None, None) => std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
    })
}

pub fn threads_from_env() -> std::result::Result<usize, metareward_core::Error> {
    match std::env::var(THREADS_VAR) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(metareward_core::Error::config(format!("{THREADS_VAR} must be a positive integer, got `{v}`"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)),
    }
}

impl Executor for Pool {
    fn map<T, R, F>(&self, jobs: &[T], f: F) -> Result<Vec<R>>
    where
        T: Sync,
        R: Send,
        F: Fn(usize, &T) -> Result<R> + Sync,
    {
        let Some(pool) = &self.inner else {
            return Sequential.map(jobs, f);
        };
        let results: Vec<Result<R>> = pool.install(|| jobs.par_iter().enumerate().map(|(i, j)| f(i, j)).collect());
        results.into_iter().enumerate().map(|(i, r)| r.map_err(|e| job_error(i, e))).collect()
    }

    fn workers(&self) -> usize {
        self.workers
    }
}
