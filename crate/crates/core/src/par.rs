//! Deterministic data-parallel primitives.
//!
//! With the `parallel` feature these fan work out to rayon; without it they
//! run the same chunked loops sequentially. Chunk boundaries and the order in
//! which partial results are combined are fixed, so both builds produce
//! bit-identical results at any thread count.

/// Chunk length used by the deterministic reductions.
pub const SUM_CHUNK: usize = 4096;

/// Apply `f` to fixed-size mutable chunks of `data`, passing the chunk index.
#[cfg(feature = "parallel")]
pub fn for_each_chunk_mut<T, F>(data: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync,
{
    use rayon::prelude::*;
    data.par_chunks_mut(chunk)
        .enumerate()
        .for_each(|(i, c)| f(i, c));
}

#[cfg(not(feature = "parallel"))]
pub fn for_each_chunk_mut<T, F>(data: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync,
{
    for (i, c) in data.chunks_mut(chunk).enumerate() {
        f(i, c);
    }
}

/// Fill `out[i] = f(i)` for every index.
pub fn fill_indexed<T, F>(out: &mut [T], f: F)
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    for_each_chunk_mut(out, SUM_CHUNK, |ci, chunk| {
        let base = ci * SUM_CHUNK;
        for (j, slot) in chunk.iter_mut().enumerate() {
            *slot = f(base + j);
        }
    });
}

/// Deterministic sum of `f(i)` for `i in 0..n`.
///
/// Partial sums are taken over fixed chunks and combined in chunk order, so
/// the result does not depend on the thread count or feature set.
pub fn sum_indexed<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    let chunks = n.div_ceil(SUM_CHUNK);
    let partial = map_collect(chunks, |ci| {
        let start = ci * SUM_CHUNK;
        let end = (start + SUM_CHUNK).min(n);
        let mut acc = 0.0;
        for i in start..end {
            acc += f(i);
        }
        acc
    });
    partial.iter().sum()
}

/// Collect `f(0..n)` into a vector, evaluating items in parallel.
#[cfg(feature = "parallel")]
pub fn map_collect<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_collect<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_matches_sequential_reference() {
        let xs: Vec<f64> = (0..10_000).map(|i| (i as f64).sin()).collect();
        let want: f64 = {
            // same chunking applied sequentially
            let mut acc = 0.0;
            for c in xs.chunks(SUM_CHUNK) {
                acc += c.iter().sum::<f64>();
            }
            acc
        };
        let got = sum_indexed(xs.len(), |i| xs[i]);
        assert_eq!(got, want);
    }

    #[test]
    fn fill_indexed_covers_all_slots() {
        let mut out = vec![0usize; 9000];
        fill_indexed(&mut out, |i| i * 2);
        for (i, v) in out.iter().enumerate() {
            assert_eq!(*v, i * 2);
        }
    }
}
