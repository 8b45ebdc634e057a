use rayon::ThreadPoolBuilder;

use crate::error::{Error, Result};

/// Runs `op` on a dedicated pool of `threads` workers, or on the global
/// pool when `threads == 0`.
pub fn with_threads<R, F>(threads: usize, op: F) -> Result<R>
where
    R: Send,
    F: FnOnce() -> R + Send,
{
    if threads == 0 {
        return Ok(op());
    }
    let pool = ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot build a {threads}-thread pool: {e}")))?;
    Ok(pool.install(op))
}

/// Sums per-chunk partials in index order so the result is independent of
/// how the chunks were scheduled.
pub(crate) fn ordered_sum(parts: Vec<f64>) -> f64 {
    parts.into_iter().fold(0.0, |acc, p| acc + p)
}
