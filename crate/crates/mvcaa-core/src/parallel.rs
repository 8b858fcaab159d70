//! Deterministic worker parallelism.
//!
//! Work is split into fixed tasks (one per view, per pair, ...) whose outputs
//! are disjoint; which thread runs a task never changes what it computes, so
//! results are bitwise identical for any thread count. Cross-task reductions
//! are always performed in task-index order by the caller.

use std::sync::atomic::{AtomicUsize, Ordering};

static THREADS: AtomicUsize = AtomicUsize::new(0);

/// Bound worker threads. 0 restores the default (available cores).
pub fn set_threads(n: usize) {
    THREADS.store(n, Ordering::Relaxed);
}

pub fn threads() -> usize {
    let n = THREADS.load(Ordering::Relaxed);
    if n > 0 {
        return n;
    }
    #[cfg(target_arch = "wasm32")]
    {
        1
    }
    #[cfg(not(target_arch = "wasm32"))]
    {
        std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
    }
}

/// Run `f(task_index)` for every task, distributing tasks over worker threads.
#[cfg(not(target_arch = "wasm32"))]
pub fn for_each_task<F: Fn(usize) + Sync>(n_tasks: usize, f: F) {
    let workers = threads().min(n_tasks).max(1);
    if workers == 1 || n_tasks <= 1 {
        for i in 0..n_tasks {
            f(i);
        }
        return;
    }
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n_tasks {
                    break;
                }
                f(i);
            });
        }
    });
}

#[cfg(target_arch = "wasm32")]
pub fn for_each_task<F: Fn(usize) + Sync>(n_tasks: usize, f: F) {
    for i in 0..n_tasks {
        f(i);
    }
}

/// Apply `f(task_index, chunk)` to equal-sized disjoint chunks of `data`.
/// `data.len()` must be divisible by `n_tasks`.
pub fn for_each_chunk_mut<T: Send, F: Fn(usize, &mut [T]) + Sync>(data: &mut [T], n_tasks: usize, f: F) {
    assert!(n_tasks > 0 && data.len() % n_tasks == 0);
    let chunk = data.len() / n_tasks;
    let ptr = SendPtr(data.as_mut_ptr());
    for_each_task(n_tasks, |i| {
        let slice = unsafe { std::slice::from_raw_parts_mut(ptr.offset(i * chunk), chunk) };
        f(i, slice);
    });
}

struct SendPtr<T>(*mut T);
unsafe impl<T> Send for SendPtr<T> {}
unsafe impl<T> Sync for SendPtr<T> {}

impl<T> SendPtr<T> {
    fn offset(&self, n: usize) -> *mut T {
        unsafe { self.0.add(n) }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunks_are_independent_of_thread_count() {
        let run = |threads: usize| {
            set_threads(threads);
            let mut v = vec![0.0f32; 64];
            for_each_chunk_mut(&mut v, 8, |i, chunk| {
                for (j, x) in chunk.iter_mut().enumerate() {
                    *x = (i * 100 + j) as f32 * 0.5;
                }
            });
            set_threads(0);
            v
        };
        assert_eq!(run(1), run(4));
    }
}
