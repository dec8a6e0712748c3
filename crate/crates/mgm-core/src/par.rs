//! Data-parallel helpers with a sequential fallback.
//!
//! The `parallel` feature (on by default) runs the hot loops through rayon.
//! Every helper is written so the result is schedule independent: work is cut
//! into fixed chunks, each chunk is computed independently, and reductions
//! merge partial results in chunk order.  With the feature disabled the same
//! chunking runs on one thread, so both builds produce bit-identical output.
//! The `*_seq` variants always exist; the bench suite compares them against
//! the parallel entry points on the real workloads.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Chunk length used by the deterministic reductions.
pub const CHUNK: usize = 64;

/// Map `0..n` through `f` into a vector (parallel when enabled).
pub fn map_collect<T, F>(n: usize, f: F) -> Vec<T>
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
        map_collect_seq(n, f)
    }
}

/// Sequential twin of [`map_collect`].
pub fn map_collect_seq<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}

/// Fill equally sized rows of a flat buffer, one call per row.
pub fn fill_rows<F>(buf: &mut [f64], row_len: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync,
{
    assert!(row_len > 0 && buf.len() % row_len == 0);
    #[cfg(feature = "parallel")]
    {
        buf.par_chunks_mut(row_len)
            .enumerate()
            .for_each(|(i, row)| f(i, row));
    }
    #[cfg(not(feature = "parallel"))]
    {
        fill_rows_seq(buf, row_len, f)
    }
}

/// Sequential twin of [`fill_rows`].
pub fn fill_rows_seq<F>(buf: &mut [f64], row_len: usize, f: F)
where
    F: Fn(usize, &mut [f64]),
{
    assert!(row_len > 0 && buf.len() % row_len == 0);
    for (i, row) in buf.chunks_mut(row_len).enumerate() {
        f(i, row);
    }
}

/// Accumulate `f(i)` over `i in 0..n` into a vector of length `len`.
///
/// `f` adds item `i` into the scratch vector it is handed.  Items are grouped
/// into [`CHUNK`]-sized blocks; block partials are added together in block
/// order, so the floating point result does not depend on the schedule.
pub fn accumulate_vec<F>(n: usize, len: usize, f: F) -> Vec<f64>
where
    F: Fn(usize, &mut [f64]) + Sync,
{
    let blocks = n.div_ceil(CHUNK);
    let partial = |b: usize| {
        let mut acc = vec![0.0; len];
        for i in b * CHUNK..((b + 1) * CHUNK).min(n) {
            f(i, &mut acc);
        }
        acc
    };
    let partials: Vec<Vec<f64>> = {
        #[cfg(feature = "parallel")]
        {
            (0..blocks).into_par_iter().map(partial).collect()
        }
        #[cfg(not(feature = "parallel"))]
        {
            (0..blocks).map(partial).collect()
        }
    };
    let mut out = vec![0.0; len];
    for p in partials {
        for (o, v) in out.iter_mut().zip(&p) {
            *o += v;
        }
    }
    out
}

/// Sequential twin of [`accumulate_vec`] (same chunked merge order).
pub fn accumulate_vec_seq<F>(n: usize, len: usize, f: F) -> Vec<f64>
where
    F: Fn(usize, &mut [f64]),
{
    let blocks = n.div_ceil(CHUNK);
    let mut out = vec![0.0; len];
    for b in 0..blocks {
        let mut acc = vec![0.0; len];
        for i in b * CHUNK..((b + 1) * CHUNK).min(n) {
            f(i, &mut acc);
        }
        for (o, v) in out.iter_mut().zip(&acc) {
            *o += v;
        }
    }
    out
}

/// Fold `f(i)` over `0..n` with a chunk-ordered scalar merge.
pub fn sum_scalar<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    let blocks = n.div_ceil(CHUNK);
    let partial = |b: usize| {
        let mut s = 0.0;
        for i in b * CHUNK..((b + 1) * CHUNK).min(n) {
            s += f(i);
        }
        s
    };
    let partials: Vec<f64> = {
        #[cfg(feature = "parallel")]
        {
            (0..blocks).into_par_iter().map(partial).collect()
        }
        #[cfg(not(feature = "parallel"))]
        {
            (0..blocks).map(partial).collect()
        }
    };
    partials.iter().sum()
}
