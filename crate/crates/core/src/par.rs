//! Order-preserving map over a slice: rayon when the `parallel` feature is
//! on, a plain loop otherwise.

/// Applies `f` to every item and returns results in input order.
/// `threads == 0` uses the global pool, `threads == 1` runs on the calling
/// thread.
#[cfg(feature = "parallel")]
pub fn map_ordered<T, R, F>(items: &[T], threads: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    use rayon::prelude::*;

    match threads {
        1 => items.iter().map(f).collect(),
        0 => items.par_iter().map(f).collect(),
        n => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| items.par_iter().map(&f).collect()),
            Err(_) => items.iter().map(f).collect(),
        },
    }
}

#[cfg(not(feature = "parallel"))]
pub fn map_ordered<T, R, F>(items: &[T], _threads: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    items.iter().map(f).collect()
}

/// Whether this build can run work on more than one thread.
pub const fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}
