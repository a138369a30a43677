//! Read-only evaluation fan-out. Work is split into fixed-size chunks so the
//! results do not depend on the number of threads.

use std::thread;

use crate::error::Result;

/// Worker count: `JKET_THREADS` when set to a positive integer, otherwise
/// the machine's available parallelism.
pub fn threads() -> usize {
    std::env::var("JKET_THREADS")
        .ok()
        .and_then(|s| s.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

/// Apply `f` to consecutive chunks of `items` and concatenate the results in
/// order.
pub fn map_chunks<T, U, F>(items: &[T], chunk: usize, f: F) -> Result<Vec<U>>
where
    T: Sync,
    U: Send,
    F: Fn(&[T]) -> Result<Vec<U>> + Sync,
{
    let chunks: Vec<&[T]> = items.chunks(chunk.max(1)).collect();
    let workers = threads().min(chunks.len());
    if workers <= 1 {
        let mut out = Vec::with_capacity(items.len());
        for c in chunks {
            out.extend(f(c)?);
        }
        return Ok(out);
    }
    let results: Vec<Vec<(usize, Result<Vec<U>>)>> = thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let chunks = &chunks;
                let f = &f;
                s.spawn(move || {
                    (w..chunks.len())
                        .step_by(workers)
                        .map(|i| (i, f(chunks[i])))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("evaluation worker panicked")).collect()
    });
    let mut slots: Vec<Option<Result<Vec<U>>>> = (0..chunks.len()).map(|_| None).collect();
    for (i, r) in results.into_iter().flatten() {
        slots[i] = Some(r);
    }
    let mut out = Vec::with_capacity(items.len());
    for r in slots {
        out.extend(r.expect("every chunk evaluated")?);
    }
    Ok(out)
}
