//! Execution policy for the data-parallel kernels.
//!
//! Every parallel kernel in this crate is written so that the sequential and
//! the parallel path produce bit-identical results: element contributions are
//! computed independently and scattered in element order, and reductions are
//! split into fixed-size chunks whose partial sums are combined in chunk order.
//! The chunking does not depend on the number of worker threads.

/// Reduction chunk length. Fixed so that results do not depend on the thread count.
pub const REDUCE_CHUNK: usize = 4096;

/// Below this many items the parallel path is not worth the scheduling overhead.
#[cfg(feature = "parallel")]
const PAR_THRESHOLD: usize = 8192;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Exec {
    Sequential,
    /// Uses rayon when the `parallel` feature is enabled, otherwise falls back
    /// to the sequential path.
    Parallel,
}

impl Default for Exec {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }
}

impl Exec {
    #[cfg(feature = "parallel")]
    fn parallel_for(self, n: usize) -> bool {
        self == Exec::Parallel && n >= PAR_THRESHOLD
    }

    /// `(0..n).map(f).collect()`, possibly in parallel.
    pub fn map_collect<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.parallel_for(n) {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
        (0..n).map(f).collect()
    }

    /// Fills `out[i] = f(i)`.
    pub fn fill<F>(self, out: &mut [f64], f: F)
    where
        F: Fn(usize) -> f64 + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.parallel_for(out.len()) {
            use rayon::prelude::*;
            out.par_iter_mut().enumerate().for_each(|(i, o)| *o = f(i));
            return;
        }
        for (i, o) in out.iter_mut().enumerate() {
            *o = f(i);
        }
    }

    /// Deterministic sum of `f(i)` over `0..n`.
    pub fn sum<F>(self, n: usize, f: F) -> f64
    where
        F: Fn(usize) -> f64 + Sync + Send,
    {
        let n_chunks = n.div_ceil(REDUCE_CHUNK);
        let chunk_sum = |c: usize| {
            let start = c * REDUCE_CHUNK;
            let end = (start + REDUCE_CHUNK).min(n);
            let mut s = 0.0;
            for i in start..end {
                s += f(i);
            }
            s
        };
        #[cfg(feature = "parallel")]
        if self.parallel_for(n) {
            use rayon::prelude::*;
            let partials: Vec<f64> = (0..n_chunks).into_par_iter().map(chunk_sum).collect();
            return partials.into_iter().fold(0.0, |acc, s| acc + s);
        }
        (0..n_chunks).map(chunk_sum).fold(0.0, |acc, s| acc + s)
    }

    /// Applies `f` to every item; items are processed concurrently under
    /// [`Exec::Parallel`] regardless of their number.
    pub fn for_each_mut<T, F>(self, items: &mut [T], f: F)
    where
        T: Send,
        F: Fn(usize, &mut T) + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self == Exec::Parallel && items.len() > 1 {
            use rayon::prelude::*;
            items.par_iter_mut().enumerate().for_each(|(i, t)| f(i, t));
            return;
        }
        for (i, t) in items.iter_mut().enumerate() {
            f(i, t);
        }
    }

    pub fn dot(self, a: &[f64], b: &[f64]) -> f64 {
        debug_assert_eq!(a.len(), b.len());
        self.sum(a.len(), |i| a[i] * b[i])
    }

    pub fn norm2(self, a: &[f64]) -> f64 {
        self.dot(a, a).sqrt()
    }
}
