//! Order-preserving map over a slice, parallel when the `parallel` feature is
//! enabled and more than one worker is requested. Results land in the slot of
//! their input, so reductions over the output do not depend on the worker
//! count.

/// `workers == 0` means one worker per available core.
pub fn map_slots<T, R, F>(items: &[T], workers: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if workers != 1 && items.len() > 1 {
            use rayon::prelude::*;
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(workers)
                .build()
                .expect("thread pool");
            return pool.install(|| items.par_iter().map(&f).collect());
        }
    }
    let _ = workers;
    items.iter().map(f).collect()
}

/// Whether this build can run more than one worker.
pub fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}
