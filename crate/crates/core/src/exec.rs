//! Order-preserving map over independent work items.
//!
//! With the `parallel` feature (default) work runs on a rayon pool sized by
//! `jobs`; without it everything runs on the calling thread. Results come
//! back in input order either way, so output never depends on scheduling.

/// Sequential map, available regardless of features.
pub fn map_sequential<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    F: Fn(&T) -> R,
{
    items.iter().map(f).collect()
}

/// Parallel map on a dedicated pool of `jobs` threads (0 = all cores).
#[cfg(feature = "parallel")]
pub fn map_parallel<T, R, F>(items: &[T], jobs: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    use rayon::prelude::*;

    if jobs == 1 {
        return map_sequential(items, f);
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build().expect("thread pool");
    pool.install(|| items.par_iter().map(&f).collect())
}

/// Maps with the best available strategy for `jobs`.
pub fn map_jobs<T, R, F>(items: &[T], jobs: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        map_parallel(items, jobs, f)
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = jobs;
        map_sequential(items, f)
    }
}

pub fn parallel_enabled() -> bool {
    cfg!(feature = "parallel")
}
