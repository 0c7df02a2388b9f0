//! Deterministic fan-out of independent tasks.
//!
//! Results depend only on the master seed and the task list, never on
//! the worker count: task `i` always consumes RNG stream `i` and its
//! result lands at slot `i`, so any scheduling order reassembles into
//! the same output bytes.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use gwspeed_core::rng::{derive_stream, Stream};

use crate::error::CliResult;

pub fn run_indexed<T, R, F>(
    master_seed: u64,
    tasks: &[T],
    workers: usize,
    f: F,
) -> CliResult<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T, &mut Stream) -> CliResult<R> + Sync,
{
    let n = tasks.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let workers = workers.clamp(1, n);
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<CliResult<R>>>> = Mutex::new((0..n).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let mut rng = derive_stream(master_seed, i as u64);
                let result = f(i, &tasks[i], &mut rng);
                slots.lock().expect("result lock")[i] = Some(result);
            });
        }
    });
    slots
        .into_inner()
        .expect("result lock")
        .into_iter()
        .map(|slot| slot.expect("every task ran"))
        .collect()
}

/// Splits `total` items into fixed-size chunks; the chunking depends
/// only on `total`, so per-chunk RNG streams stay stable across worker
/// counts.
pub fn chunk_counts(total: u64, chunk: u64) -> Vec<u64> {
    assert!(chunk >= 1);
    let mut out = Vec::new();
    let mut left = total;
    while left > 0 {
        let take = left.min(chunk);
        out.push(take);
        left -= take;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn results_are_worker_count_invariant() {
        let tasks: Vec<u64> = (0..17).collect();
        let f = |i: usize, t: &u64, rng: &mut Stream| -> CliResult<(usize, u64, u64)> {
            use rand::Rng;
            Ok((i, *t, rng.random()))
        };
        let one = run_indexed(9, &tasks, 1, f).unwrap();
        let many = run_indexed(9, &tasks, 8, f).unwrap();
        assert_eq!(one, many);
        for (i, row) in one.iter().enumerate() {
            assert_eq!(row.0, i);
        }
    }

    #[test]
    fn chunks_cover_exactly() {
        assert_eq!(chunk_counts(10, 4), vec![4, 4, 2]);
        assert_eq!(chunk_counts(4, 4), vec![4]);
        assert_eq!(chunk_counts(0, 4), Vec::<u64>::new());
        assert_eq!(chunk_counts(3, 4), vec![3]);
    }
}
