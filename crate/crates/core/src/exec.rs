//! Deterministic work splitting.
//!
//! Parallel sections split their index range into `threads` contiguous chunks,
//! run one chunk per thread, and combine per-chunk results in chunk order.
//! For a fixed thread count the result is bitwise reproducible run to run.

use std::ops::Range;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Exec {
    threads: usize,
}

impl Default for Exec {
    fn default() -> Self {
        Self::sequential()
    }
}

impl Exec {
    pub fn sequential() -> Self {
        Self { threads: 1 }
    }

    pub fn with_threads(threads: usize) -> Self {
        Self {
            threads: threads.max(1),
        }
    }

    pub fn threads(&self) -> usize {
        self.threads
    }

    /// Splits `0..n` into at most `threads` contiguous chunks and applies `f`
    /// to each, returning the per-chunk results in chunk order.
    pub fn map_chunks<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        F: Fn(Range<usize>) -> T + Sync,
        T: Send,
    {
        let workers = self.threads.min(n.max(1));
        if workers <= 1 {
            return vec![f(0..n)];
        }
        let chunk = n.div_ceil(workers);
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..workers)
                .map(|w| {
                    let start = w * chunk;
                    let end = ((w + 1) * chunk).min(n);
                    let f = &f;
                    scope.spawn(move || f(start..end))
                })
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        })
    }

    /// Chunk bounds used by `map_chunks`, exposed for callers that write into
    /// disjoint slices of a shared output.
    pub fn chunk_ranges(&self, n: usize) -> Vec<Range<usize>> {
        let workers = self.threads.min(n.max(1)).max(1);
        let chunk = n.div_ceil(workers);
        (0..workers)
            .map(|w| (w * chunk).min(n)..((w + 1) * chunk).min(n))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunks_cover_range_in_order() {
        let exec = Exec::with_threads(3);
        let out = exec.map_chunks(10, |r| r.collect::<Vec<_>>());
        let flat: Vec<usize> = out.into_iter().flatten().collect();
        assert_eq!(flat, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn sequential_is_single_chunk() {
        let exec = Exec::sequential();
        assert_eq!(exec.chunk_ranges(7), vec![0..7]);
    }

    #[test]
    fn more_threads_than_items() {
        let exec = Exec::with_threads(16);
        let out = exec.map_chunks(3, |r| r.len());
        assert_eq!(out.iter().sum::<usize>(), 3);
    }
}
