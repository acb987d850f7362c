//! Rayon-backed [`Executor`]. Results are collected in index order, so the
//! thread count never changes output.

use ahfx_core::exec::Executor;
use rayon::prelude::*;
use rayon::ThreadPool;

use crate::error::{AppError, AppResult};

pub struct Rayon {
    pool: ThreadPool,
}

impl Rayon {
    /// A dedicated pool of `threads` workers; 0 picks the number of CPUs.
    pub fn new(threads: usize) -> AppResult<Self> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| AppError::invalid(format!("cannot start thread pool: {e}")))?;
        Ok(Self { pool })
    }

    pub fn threads(&self) -> usize {
        self.pool.current_num_threads()
    }
}

impl Executor for Rayon {
    fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        self.pool
            .install(|| (0..n).into_par_iter().map(f).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved() {
        let ex = Rayon::new(4).unwrap();
        assert_eq!(ex.threads(), 4);
        let v = ex.map(1000, |i| i * i);
        assert!(v.iter().enumerate().all(|(i, &x)| x == i * i));
    }
}
