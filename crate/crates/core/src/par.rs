//! Data-parallel helpers with a sequential fallback.
//!
//! Every helper takes an explicit thread count. `threads <= 1` always runs the
//! plain sequential loop, so callers get the same code path whether or not the
//! `parallel` feature is compiled in. Results are returned in input order.

/// Number of worker threads to use when the caller asks for "all of them".
pub fn available_threads() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}

/// Runs `f` inside a pool of `threads` workers (or inline when sequential).
pub fn with_threads<R, F>(threads: usize, f: F) -> R
where
    R: Send,
    F: FnOnce() -> R + Send,
{
    #[cfg(feature = "parallel")]
    {
        if threads > 1 {
            if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
                return pool.install(f);
            }
        }
        f()
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = threads;
        f()
    }
}

/// Order-preserving map over a slice.
pub fn map<T, U, F>(items: &[T], threads: usize, f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if threads > 1 {
            use rayon::prelude::*;
            return with_threads(threads, || items.par_iter().map(&f).collect());
        }
    }
    let _ = threads;
    items.iter().map(f).collect()
}

/// Order-preserving map over `0..n`.
pub fn map_range<U, F>(n: usize, threads: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if threads > 1 {
            use rayon::prelude::*;
            return with_threads(threads, || (0..n).into_par_iter().map(&f).collect());
        }
    }
    let _ = threads;
    (0..n).map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_preserves_order_for_any_thread_count() {
        let items: Vec<u64> = (0..1000).collect();
        let seq = map(&items, 1, |x| x * x);
        for threads in [2, 4, 8] {
            assert_eq!(map(&items, threads, |x| x * x), seq);
        }
        assert_eq!(map_range(17, 3, |i| i + 1), (1..18).collect::<Vec<_>>());
    }
}
