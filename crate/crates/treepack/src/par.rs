//! Indexed parallel-or-sequential dispatch. With the `parallel` feature the
//! closure runs on the ambient rayon pool; without it, a plain loop. Output is
//! ordered by index either way, so results never depend on the schedule.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

pub(crate) fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
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

/// Number of work chunks to split an enumeration into. Fixed (not tied to the
/// thread count) so chunk boundaries, and therefore merged results, are stable.
pub(crate) const CHUNKS: usize = 64;

pub(crate) fn chunk_bounds(total: u64, chunks: usize) -> Vec<(u64, u64)> {
    let chunks = chunks.max(1) as u64;
    let base = total / chunks;
    let rem = total % chunks;
    let mut out = Vec::with_capacity(chunks as usize);
    let mut start = 0u64;
    for c in 0..chunks {
        let len = base + if c < rem { 1 } else { 0 };
        out.push((start, start + len));
        start += len;
    }
    out
}
