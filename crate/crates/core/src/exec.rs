//! Execution of independent jobs such as lifetimes.
//!
//! Results always come back in job order, so the degree of parallelism of an
//! [`Executor`] can never change what callers compute from them.

use crate::error::{Error, Result};
use alloc::format;
use alloc::vec::Vec;

pub trait Executor: Sync {
    /// Runs `f(i, &jobs[i])` for every job and returns the results in job
    /// order. The first failure (lowest job index) aborts the batch and is
    /// reported with its job index.
    fn map<T, R, F>(&self, jobs: &[T], f: F) -> Result<Vec<R>>
    where
        T: Sync,
        R: Send,
        F: Fn(usize, &T) -> Result<R> + Sync;

    /// Upper bound on concurrently running jobs.
    fn workers(&self) -> usize;
}

/// Runs jobs one after another on the calling thread.
#[derive(Clone, Copy, Debug, Default)]
pub struct Sequential;

impl Executor for Sequential {
    fn map<T, R, F>(&self, jobs: &[T], f: F) -> Result<Vec<R>>
    where
        T: Sync,
        R: Send,
        F: Fn(usize, &T) -> Result<R> + Sync,
    {
        jobs.iter().enumerate().map(|(i, job)| f(i, job).map_err(|e| job_error(i, e))).collect()
    }

    fn workers(&self) -> usize {
        1
    }
}

/// Tags an error with the index of the job that produced it.
pub fn job_error(index: usize, e: Error) -> Error {
    e.context(&format!("job {index}"))
}
