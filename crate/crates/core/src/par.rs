//! Fixed-order chunked evaluation. Work is split into the same chunks with or
//! without threads and partial results are returned in chunk order, so sums
//! taken over them are reproducible bitwise.

/// Number of items per chunk used across the crate.
pub(crate) const CHUNK: usize = 256;

pub(crate) fn chunk_count(len: usize) -> usize {
    len.div_ceil(CHUNK)
}

#[cfg(feature = "parallel")]
pub(crate) fn map_chunks<T, F>(len: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(std::ops::Range<usize>) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..chunk_count(len))
        .into_par_iter()
        .map(|c| f(c * CHUNK..((c + 1) * CHUNK).min(len)))
        .collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn map_chunks<T, F>(len: usize, f: F) -> Vec<T>
where
    F: Fn(std::ops::Range<usize>) -> T,
{
    (0..chunk_count(len))
        .map(|c| f(c * CHUNK..((c + 1) * CHUNK).min(len)))
        .collect()
}
