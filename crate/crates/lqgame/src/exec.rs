//! Execution strategy for the data-parallel loops.
//!
//! Reductions always sum fixed-size chunks in index order and then fold the
//! chunk partials left to right, so the sequential and parallel paths give
//! bit-identical results regardless of thread count.

use crate::matrix_core::Mat;

/// Chunk length for order-fixed reductions.
pub const CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Exec {
    Sequential,
    #[default]
    Parallel,
}

impl Exec {
    /// Whether work will actually fan out across threads.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }

    /// Order-preserving map over `0..n`.
    pub fn map<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
        (0..n).map(f).collect()
    }

    /// Sum of `f(i)` over `0..n` with a fixed chunked summation order.
    /// `rows`/`cols` give the shape of the zero element.
    pub fn sum_mat<F>(self, n: usize, rows: usize, cols: usize, f: F) -> Mat
    where
        F: Fn(usize) -> Mat + Sync + Send,
    {
        let n_chunks = n.div_ceil(CHUNK);
        let partial = |c: usize| {
            let mut acc = Mat::zeros(rows, cols);
            for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
                acc += f(i);
            }
            acc
        };
        let parts = self.map(n_chunks, partial);
        let mut total = Mat::zeros(rows, cols);
        for p in parts {
            total += p;
        }
        total
    }

    /// Fallible variant of [`Exec::sum_mat`]; the first error in index order wins.
    pub fn try_sum_mat<F, E>(self, n: usize, rows: usize, cols: usize, f: F) -> Result<Mat, E>
    where
        F: Fn(usize) -> Result<Mat, E> + Sync + Send,
        E: Send,
    {
        let n_chunks = n.div_ceil(CHUNK);
        let partial = |c: usize| -> Result<Mat, E> {
            let mut acc = Mat::zeros(rows, cols);
            for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
                acc += f(i)?;
            }
            Ok(acc)
        };
        let parts = self.map(n_chunks, partial);
        let mut total = Mat::zeros(rows, cols);
        for p in parts {
            total += p?;
        }
        Ok(total)
    }

    /// Scalar analogue of [`Exec::sum_mat`].
    pub fn sum_f64<F>(self, n: usize, f: F) -> f64
    where
        F: Fn(usize) -> f64 + Sync + Send,
    {
        let n_chunks = n.div_ceil(CHUNK);
        let parts = self.map(n_chunks, |c| {
            let mut acc = 0.0;
            for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
                acc += f(i);
            }
            acc
        });
        parts.into_iter().fold(0.0, |a, b| a + b)
    }
}
