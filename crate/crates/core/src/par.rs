//! Ordered maps over index ranges. With the `parallel` feature the work is
//! spread over the rayon pool; results always come back in index order.

use crate::error::{Error, Result};

#[cfg(feature = "parallel")]
pub fn map_indexed<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_indexed<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    map_indexed_seq(n, f)
}

pub fn map_indexed_seq<R, F>(n: usize, f: F) -> Vec<R>
where
    F: Fn(usize) -> R,
{
    (0..n).map(f).collect()
}

/// Runs `f` on a dedicated pool of `workers` threads, or on the global pool
/// when `workers` is `None`.
#[cfg(feature = "parallel")]
pub fn with_workers<R, F>(workers: Option<usize>, f: F) -> Result<R>
where
    R: Send,
    F: FnOnce() -> R + Send,
{
    match workers {
        None => Ok(f()),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map(|pool| pool.install(f))
            .map_err(|e| Error::Config(format!("cannot build worker pool: {e}"))),
    }
}

#[cfg(not(feature = "parallel"))]
pub fn with_workers<R, F>(workers: Option<usize>, f: F) -> Result<R>
where
    R: Send,
    F: FnOnce() -> R + Send,
{
    if workers == Some(0) {
        return Err(Error::Config("worker count must be positive".into()));
    }
    Ok(f())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_and_sequential_agree_in_order() {
        let f = |i: usize| (i as f64).sqrt().sin();
        assert_eq!(map_indexed(257, f), map_indexed_seq(257, f));
        let pooled = with_workers(Some(3), || map_indexed(50, |i| i * i)).unwrap();
        assert_eq!(pooled, (0..50).map(|i| i * i).collect::<Vec<_>>());
    }
}
