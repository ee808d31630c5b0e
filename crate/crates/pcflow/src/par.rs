//! Site-parallel helpers. With the `parallel` feature the loops run on the
//! rayon pool, otherwise sequentially. Reductions are chunked with a fixed
//! chunk size so sums do not depend on scheduling.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

const REDUCE_CHUNK: usize = 4096;

pub fn map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

pub fn fill<T, F>(out: &mut [T], f: F)
where
    T: Send,
    F: Fn(usize, &mut T) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        out.par_iter_mut().enumerate().for_each(|(i, v)| f(i, v));
    }
    #[cfg(not(feature = "parallel"))]
    {
        out.iter_mut().enumerate().for_each(|(i, v)| f(i, v));
    }
}

pub fn chunks_mut<T, F>(data: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        data.par_chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
    }
    #[cfg(not(feature = "parallel"))]
    {
        data.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
    }
}

/// Deterministic sum of `f(i)` over `0..n`.
pub fn sum<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    let nchunks = n.div_ceil(REDUCE_CHUNK);
    let partial = map(nchunks, |c| {
        let lo = c * REDUCE_CHUNK;
        let hi = (lo + REDUCE_CHUNK).min(n);
        (lo..hi).map(&f).sum::<f64>()
    });
    partial.into_iter().sum()
}

/// Deterministic maximum of `f(i)` over `0..n` (0 for empty ranges).
pub fn max<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    let nchunks = n.div_ceil(REDUCE_CHUNK);
    let partial = map(nchunks, |c| {
        let lo = c * REDUCE_CHUNK;
        let hi = (lo + REDUCE_CHUNK).min(n);
        (lo..hi).map(&f).fold(0.0_f64, f64::max)
    });
    partial.into_iter().fold(0.0, f64::max)
}

pub fn min<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    let nchunks = n.div_ceil(REDUCE_CHUNK);
    let partial = map(nchunks, |c| {
        let lo = c * REDUCE_CHUNK;
        let hi = (lo + REDUCE_CHUNK).min(n);
        (lo..hi).map(&f).fold(f64::INFINITY, f64::min)
    });
    partial.into_iter().fold(f64::INFINITY, f64::min)
}

/// Signed supremum of `f(i)` (negative infinity for empty ranges).
pub fn sup<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    -min(n, |i| -f(i))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_matches_sequential() {
        let n = 10_007;
        let s = sum(n, |i| (i as f64).sqrt());
        let r: f64 = (0..n).map(|i| (i as f64).sqrt()).sum();
        assert!((s - r).abs() < 1e-8 * r);
    }

    #[test]
    fn extrema() {
        assert_eq!(max(5000, |i| i as f64), 4999.0);
        assert_eq!(min(5000, |i| i as f64 + 1.0), 1.0);
        assert_eq!(max(0, |i| i as f64), 0.0);
        assert_eq!(sup(300, |i| -(i as f64) - 2.0), -2.0);
    }
}
