//! Execution policy for the data-parallel inner loops.
//!
//! Every helper here produces the same bits under [`Exec::Sequential`] and
//! [`Exec::Parallel`]: work is split into fixed-size chunks whose boundaries do
//! not depend on the thread count, and reductions combine per-chunk partials
//! in chunk order.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Chunk length used for element-wise work and reductions.
pub const CHUNK: usize = 8192;

/// Below this many elements the parallel path is not worth the scheduling cost.
#[cfg(feature = "parallel")]
const PAR_MIN_LEN: usize = 1 << 15;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Exec {
    Sequential,
    /// Uses rayon when the `parallel` feature is enabled; otherwise identical
    /// to `Sequential`.
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
    #[inline]
    fn go_parallel(self, len: usize) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel && len >= PAR_MIN_LEN
    }

    /// Calls `f(index, chunk)` for every `chunk_len`-sized piece of `data`.
    pub fn for_each_chunk_mut<F>(self, data: &mut [f64], chunk_len: usize, f: F)
    where
        F: Fn(usize, &mut [f64]) + Sync + Send,
    {
        let chunk_len = chunk_len.max(1);
        #[cfg(feature = "parallel")]
        if self.go_parallel(data.len()) {
            data.par_chunks_mut(chunk_len)
                .enumerate()
                .for_each(|(i, c)| f(i, c));
            return;
        }
        data.chunks_mut(chunk_len)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
    }

    /// Pairs `out` chunks of `out_len` with `input` chunks of `in_len`, index by index.
    pub fn zip_chunks_mut<F>(self, out: &mut [f64], out_len: usize, input: &[f64], in_len: usize, f: F)
    where
        F: Fn(usize, &mut [f64], &[f64]) + Sync + Send,
    {
        let out_len = out_len.max(1);
        let in_len = in_len.max(1);
        debug_assert_eq!(out.len() / out_len, input.len() / in_len);
        #[cfg(feature = "parallel")]
        if self.go_parallel(out.len().max(input.len())) {
            out.par_chunks_mut(out_len)
                .zip(input.par_chunks(in_len))
                .enumerate()
                .for_each(|(i, (o, x))| f(i, o, x));
            return;
        }
        out.chunks_mut(out_len)
            .zip(input.chunks(in_len))
            .enumerate()
            .for_each(|(i, (o, x))| f(i, o, x));
    }

    /// Deterministic sum of `f(range)` over `CHUNK`-sized ranges of `0..len`.
    pub fn sum_ranges<F>(self, len: usize, f: F) -> f64
    where
        F: Fn(std::ops::Range<usize>) -> f64 + Sync + Send,
    {
        let n_chunks = len.div_ceil(CHUNK);
        let range = |c: usize| c * CHUNK..((c + 1) * CHUNK).min(len);
        #[cfg(feature = "parallel")]
        if self.go_parallel(len) {
            let partials: Vec<f64> = (0..n_chunks).into_par_iter().map(|c| f(range(c))).collect();
            return partials.iter().sum();
        }
        (0..n_chunks).map(|c| f(range(c))).sum()
    }

    pub fn dot(self, a: &[f64], b: &[f64]) -> f64 {
        assert_eq!(a.len(), b.len());
        self.sum_ranges(a.len(), |r| {
            a[r.clone()].iter().zip(&b[r]).map(|(x, y)| x * y).sum()
        })
    }

    pub fn norm_sq(self, a: &[f64]) -> f64 {
        self.sum_ranges(a.len(), |r| a[r].iter().map(|x| x * x).sum())
    }

    pub fn norm(self, a: &[f64]) -> f64 {
        self.norm_sq(a).sqrt()
    }

    pub fn norm1(self, a: &[f64]) -> f64 {
        self.sum_ranges(a.len(), |r| a[r].iter().map(|x| x.abs()).sum())
    }

    /// ‖a − b‖₂².
    pub fn dist_sq(self, a: &[f64], b: &[f64]) -> f64 {
        assert_eq!(a.len(), b.len());
        self.sum_ranges(a.len(), |r| {
            a[r.clone()]
                .iter()
                .zip(&b[r])
                .map(|(x, y)| (x - y) * (x - y))
                .sum()
        })
    }

    /// Element-wise `out[i] = f(out[i], x[i])`.
    pub fn zip_apply<F>(self, out: &mut [f64], x: &[f64], f: F)
    where
        F: Fn(f64, f64) -> f64 + Sync + Send,
    {
        assert_eq!(out.len(), x.len());
        self.zip_chunks_mut(out, CHUNK, x, CHUNK, |_, o, xs| {
            for (oi, &xi) in o.iter_mut().zip(xs) {
                *oi = f(*oi, xi);
            }
        });
    }

    /// `out += alpha * x`.
    pub fn axpy(self, alpha: f64, x: &[f64], out: &mut [f64]) {
        self.zip_apply(out, x, |o, xi| o + alpha * xi);
    }

    /// Runs `f(0..n)` as independent tasks and returns results in index order.
    pub fn map_tasks<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self == Exec::Parallel && n > 1 {
            return (0..n).into_par_iter().map(f).collect();
        }
        (0..n).map(f).collect()
    }

    pub fn scale(self, alpha: f64, out: &mut [f64]) {
        self.for_each_chunk_mut(out, CHUNK, |_, c| c.iter_mut().for_each(|v| *v *= alpha));
    }
}
