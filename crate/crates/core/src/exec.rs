//! Execution strategy for data-parallel kernels.
//!
//! Every kernel in this crate decomposes work into fixed-size chunks and
//! merges partial results in chunk order, so the floating-point result is
//! bit-identical whether the chunks run on one thread or many. `Parallel`
//! fans the chunks out over rayon when the `parallel` feature is enabled
//! and silently degrades to the sequential path otherwise.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use std::ops::Range;

/// Work decomposition is independent of thread count; this is the grain.
pub(crate) const CHUNK: usize = 256;

/// How a kernel schedules its chunks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    Parallel,
}

impl Exec {
    /// Parallel when compiled with the `parallel` feature, sequential otherwise.
    pub fn auto() -> Self {
        if cfg!(feature = "parallel") {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }
}

impl Default for Exec {
    fn default() -> Self {
        Exec::auto()
    }
}

/// Split `0..n` into ranges of at most `CHUNK` elements.
pub(crate) fn chunk_ranges(n: usize) -> Vec<Range<usize>> {
    let mut out = Vec::with_capacity(n.div_ceil(CHUNK));
    let mut lo = 0;
    while lo < n {
        let hi = (lo + CHUNK).min(n);
        out.push(lo..hi);
        lo = hi;
    }
    out
}

/// Map `f` over `0..n`, preserving index order in the result.
pub(crate) fn map_indexed<T, F>(ex: Exec, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match ex {
        Exec::Sequential => (0..n).map(f).collect(),
        Exec::Parallel => {
            #[cfg(feature = "parallel")]
            {
                (0..n).into_par_iter().map(f).collect()
            }
            #[cfg(not(feature = "parallel"))]
            {
                (0..n).map(f).collect()
            }
        }
    }
}

/// Fallible variant of [`map_indexed`]; the first error in index order wins.
pub(crate) fn try_map_indexed<T, E, F>(ex: Exec, n: usize, f: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(usize) -> Result<T, E> + Sync + Send,
{
    match ex {
        Exec::Sequential => (0..n).map(f).collect(),
        Exec::Parallel => {
            #[cfg(feature = "parallel")]
            {
                // Collect per-index results first so the reported error does not
                // depend on scheduling.
                let partials: Vec<Result<T, E>> = (0..n).into_par_iter().map(f).collect();
                partials.into_iter().collect()
            }
            #[cfg(not(feature = "parallel"))]
            {
                (0..n).map(f).collect()
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunks_cover_range_without_overlap() {
        for n in [0, 1, CHUNK - 1, CHUNK, CHUNK + 1, 3 * CHUNK + 7] {
            let ranges = chunk_ranges(n);
            let mut next = 0;
            for r in &ranges {
                assert_eq!(r.start, next);
                assert!(r.end > r.start);
                next = r.end;
            }
            assert_eq!(next, n);
        }
    }

    #[test]
    fn chunked_partial_sums_agree_bitwise_across_modes() {
        // The pattern every kernel uses: per-chunk partials via map_indexed,
        // merged in chunk order.
        let n = 5 * CHUNK + 13;
        let total = |ex: Exec| -> f64 {
            let ranges = chunk_ranges(n);
            let partials = map_indexed(ex, ranges.len(), |c| {
                ranges[c].clone().map(|i| ((i as f64) * 0.1).sin()).sum::<f64>()
            });
            partials.into_iter().sum()
        };
        assert_eq!(total(Exec::Sequential).to_bits(), total(Exec::Parallel).to_bits());
    }

    #[test]
    fn map_indexed_preserves_order() {
        let v = map_indexed(Exec::Parallel, 1000, |i| i * 2);
        assert!(v.iter().enumerate().all(|(i, &x)| x == i * 2));
    }
}
