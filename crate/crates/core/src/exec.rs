//! Sequential / rayon execution switch.
//!
//! Without the `parallel` feature `Exec::Parallel` is accepted but runs
//! sequentially, so callers never need their own `cfg` gates.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Exec {
    Sequential,
    #[default]
    Parallel,
}

impl Exec {
    /// True when work will actually be spread over the rayon pool.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }

    /// `f(0..len)` collected in index order.
    pub fn map_indexed<T, F>(self, len: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            return (0..len).into_par_iter().map(f).collect();
        }
        (0..len).map(f).collect()
    }

    /// First `Some` in index order, the same answer the sequential scan gives.
    pub fn find_map_first<T, F>(self, len: usize, f: F) -> Option<T>
    where
        T: Send,
        F: Fn(usize) -> Option<T> + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            return (0..len).into_par_iter().find_map_first(f);
        }
        (0..len).find_map(f)
    }

    /// Chunked fold/reduce over `0..len`. `reduce` must be associative; chunk
    /// results are combined left to right so order-sensitive tie-breaks hold.
    pub fn fold_chunks<A, F, R>(self, len: usize, chunk: usize, identity: A, fold: F, reduce: R) -> A
    where
        A: Send + Sync + Clone,
        F: Fn(A, std::ops::Range<usize>) -> A + Sync + Send,
        R: Fn(A, A) -> A + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() && len > chunk.max(1) {
            let chunk = chunk.max(1);
            let nchunks = len.div_ceil(chunk);
            return (0..nchunks)
                .into_par_iter()
                .map(|c| {
                    let lo = c * chunk;
                    fold(identity.clone(), lo..(lo + chunk).min(len))
                })
                .reduce(|| identity.clone(), &reduce);
        }
        let _ = (&reduce, chunk);
        fold(identity, 0..len)
    }
}
