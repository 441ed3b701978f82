use geomreg_core::Executor;
use rayon::prelude::*;
use rayon::ThreadPool;

use crate::error::{CliError, Result};

/// Runs tasks on a dedicated rayon pool and collects results in index order.
pub struct RayonExecutor {
    pool: ThreadPool,
}

impl RayonExecutor {
    /// `threads == 0` uses every available core.
    pub fn new(threads: usize) -> Result<Self> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| CliError::Usage(format!("cannot start {threads} worker threads: {e}")))?;
        Ok(RayonExecutor { pool })
    }

    pub fn threads(&self) -> usize {
        self.pool.current_num_threads()
    }
}

impl Executor for RayonExecutor {
    fn map<R, F>(&self, count: usize, task: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        self.pool.install(|| (0..count).into_par_iter().map(task).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use geomreg_core::Sequential;

    #[test]
    fn matches_sequential_order() {
        let exec = RayonExecutor::new(3).unwrap();
        assert_eq!(exec.threads(), 3);
        let f = |i: usize| (i * i) as u64 ^ 0x5a;
        assert_eq!(exec.map(100, f), Sequential.map(100, f));
    }
}
