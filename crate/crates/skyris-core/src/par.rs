//! Chunked map/reduce that runs on rayon when the `parallel` feature is on
//! and falls back to a plain loop otherwise.
//!
//! Results are reduced in chunk order either way, so a fixed seed produces
//! bit-identical output regardless of thread count. `SKYRIS_THREADS` caps the
//! pool size.

#[cfg(feature = "parallel")]
use std::sync::Once;

#[cfg(feature = "parallel")]
static POOL_INIT: Once = Once::new();

/// Configure the global pool from `SKYRIS_THREADS` before first use.
/// Silently keeps the default pool if the variable is unset or the pool
/// was already built (e.g. by the test harness).
#[cfg(feature = "parallel")]
fn ensure_pool() {
    POOL_INIT.call_once(|| {
        if let Ok(v) = std::env::var("SKYRIS_THREADS") {
            if let Ok(n) = v.trim().parse::<usize>() {
                if n >= 1 {
                    let _ = rayon::ThreadPoolBuilder::new()
                        .num_threads(n)
                        .build_global();
                }
            }
        }
    });
}

/// Applies `f` to every chunk index in `0..n_chunks` and folds the results
/// in index order. `f` must be pure given its index (seed derivation is the
/// caller's job).
pub fn map_chunks<T, F>(n_chunks: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        ensure_pool();
        use rayon::prelude::*;
        (0..n_chunks).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n_chunks).map(f).collect()
    }
}

/// Sequential twin of [`map_chunks`], kept unconditionally compiled so the
/// benchmark suite can compare both code paths in one build.
pub fn map_chunks_seq<T, F>(n_chunks: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n_chunks).map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_and_sequential_agree() {
        let a = map_chunks(17, |i| (i * i) as u64);
        let b = map_chunks_seq(17, |i| (i * i) as u64);
        assert_eq!(a, b);
    }
}
