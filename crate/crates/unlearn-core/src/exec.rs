//! Data-parallel execution helpers with a sequential fallback.
//!
//! Every parallel construct here hands each worker a disjoint output slice
//! and keeps all floating-point reductions sequential inside that slice, so
//! results are bit-identical regardless of thread count, scheduling, or
//! whether the `parallel` feature is enabled at all. Tests and benches can
//! force the sequential path at runtime via [`force_serial`].
//!
//! Closures passed here must stick to IEEE-exact operations (+, -, *, /,
//! sqrt, comparisons). Library transcendentals (exp, ln, sin) may be
//! swapped for vectorized variants with different rounding depending on
//! the surrounding loop structure, which would break the bit-equality of
//! the two paths; all transcendental math in this crate lives on plain
//! sequential code instead.

use std::cell::Cell;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

thread_local! {
    static FORCE_SERIAL: Cell<bool> = const { Cell::new(false) };
}

/// Run `f` with the parallel helpers downgraded to their sequential
/// implementations on this thread. Used by the benches to compare both
/// paths in one process and by tests to assert bitwise equivalence.
pub fn force_serial<R>(f: impl FnOnce() -> R) -> R {
    FORCE_SERIAL.with(|c| c.set(true));
    let out = f();
    FORCE_SERIAL.with(|c| c.set(false));
    out
}

fn serial_forced() -> bool {
    FORCE_SERIAL.with(|c| c.get())
}

/// Map `0..n` in order, collecting results.
pub fn map_indexed<R: Send>(n: usize, f: impl Fn(usize) -> R + Sync + Send) -> Vec<R> {
    #[cfg(feature = "parallel")]
    {
        if !serial_forced() {
            return (0..n).into_par_iter().map(f).collect();
        }
    }
    map_indexed_serial(n, f)
}

pub fn map_indexed_serial<R: Send>(n: usize, f: impl Fn(usize) -> R + Sync + Send) -> Vec<R> {
    (0..n).map(f).collect()
}

/// Apply `f(i, chunk_i)` to consecutive disjoint chunks of `data`.
/// `data.len()` must be a multiple of `chunk`.
pub fn for_each_chunk<T: Send>(data: &mut [T], chunk: usize, f: impl Fn(usize, &mut [T]) + Sync + Send) {
    debug_assert!(chunk > 0 && data.len() % chunk == 0);
    #[cfg(feature = "parallel")]
    {
        if !serial_forced() {
            data.par_chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
            return;
        }
    }
    for_each_chunk_serial(data, chunk, f);
}

pub fn for_each_chunk_serial<T: Send>(
    data: &mut [T],
    chunk: usize,
    f: impl Fn(usize, &mut [T]) + Sync + Send,
) {
    for (i, c) in data.chunks_mut(chunk).enumerate() {
        f(i, c);
    }
}

/// Apply `f(i, a_i, b_i)` to paired disjoint chunks of two buffers
/// (e.g. an output tensor and its per-sample auxiliary data).
pub fn for_each_chunk2<T: Send, U: Send>(
    a: &mut [T],
    chunk_a: usize,
    b: &mut [U],
    chunk_b: usize,
    f: impl Fn(usize, &mut [T], &mut [U]) + Sync + Send,
) {
    debug_assert!(a.len() % chunk_a == 0 && b.len() % chunk_b == 0);
    debug_assert_eq!(a.len() / chunk_a, b.len() / chunk_b);
    #[cfg(feature = "parallel")]
    {
        if !serial_forced() {
            a.par_chunks_mut(chunk_a)
                .zip(b.par_chunks_mut(chunk_b))
                .enumerate()
                .for_each(|(i, (ca, cb))| f(i, ca, cb));
            return;
        }
    }
    for (i, (ca, cb)) in a.chunks_mut(chunk_a).zip(b.chunks_mut(chunk_b)).enumerate() {
        f(i, ca, cb);
    }
}
