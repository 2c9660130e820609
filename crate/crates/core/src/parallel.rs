//! Order-preserving work distribution.
//!
//! All reductions here are performed in input order, so results are
//! bit-identical whether the `parallel` feature is enabled or not and
//! regardless of worker count.

#[cfg(feature = "parallel")]
pub fn map_ordered<I: Sync, O: Send>(items: &[I], f: impl Fn(&I) -> O + Send + Sync) -> Vec<O> {
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_ordered<I, O>(items: &[I], f: impl Fn(&I) -> O) -> Vec<O> {
    items.iter().map(f).collect()
}

/// Splits `n` items into `pieces` contiguous ranges (last ones may be short).
/// The split depends only on `n` and `pieces`, never on the worker count.
pub fn fixed_chunks(n: usize, pieces: usize) -> Vec<std::ops::Range<usize>> {
    if n == 0 {
        return Vec::new();
    }
    let size = n.div_ceil(pieces.max(1));
    (0..n.div_ceil(size))
        .map(|i| i * size..((i + 1) * size).min(n))
        .collect()
}
