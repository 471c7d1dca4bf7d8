//! Execution strategy for the data-parallel loops of the engine.
//!
//! Every parallel loop in the crate is an order-preserving map or a reduction
//! under a total order, so results are bitwise identical whether the work runs
//! on the rayon pool or sequentially. With the `parallel` feature disabled the
//! crate never touches rayon.

#[cfg(feature = "parallel")]
use std::sync::atomic::{AtomicBool, Ordering};

/// Below this many items a loop always runs sequentially.
pub const PAR_THRESHOLD: usize = 2048;

#[cfg(feature = "parallel")]
static PARALLEL: AtomicBool = AtomicBool::new(true);

/// Enables or disables the rayon path at runtime. A no-op without the
/// `parallel` feature.
pub fn set_parallel(enabled: bool) {
    #[cfg(feature = "parallel")]
    PARALLEL.store(enabled, Ordering::Relaxed);
    #[cfg(not(feature = "parallel"))]
    let _ = enabled;
}

/// Whether the rayon path is compiled in and currently enabled.
pub fn parallel_enabled() -> bool {
    #[cfg(feature = "parallel")]
    {
        PARALLEL.load(Ordering::Relaxed)
    }
    #[cfg(not(feature = "parallel"))]
    {
        false
    }
}

#[cfg(feature = "parallel")]
#[inline]
fn go_parallel(len: usize) -> bool {
    len >= PAR_THRESHOLD && parallel_enabled()
}

/// `items.iter().map(f).collect()`, in parallel for large inputs.
pub fn map_slice<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if go_parallel(items.len()) {
        use rayon::prelude::*;
        return items.par_iter().map(f).collect();
    }
    items.iter().map(f).collect()
}

/// `(0..len).map(f).collect()`, in parallel for large inputs.
pub fn map_range<R, F>(len: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if go_parallel(len) {
        use rayon::prelude::*;
        return (0..len).into_par_iter().map(f).collect();
    }
    (0..len).map(f).collect()
}

/// Applies `f(i, &mut out[i])` to every element.
pub fn for_each_mut<T, F>(out: &mut [T], f: F)
where
    T: Send,
    F: Fn(usize, &mut T) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if go_parallel(out.len()) {
        use rayon::prelude::*;
        out.par_iter_mut().enumerate().for_each(|(i, x)| f(i, x));
        return;
    }
    out.iter_mut().enumerate().for_each(|(i, x)| f(i, x));
}

/// Minimum of `key(i)` over `0..len` under `cmp`, which must be a total
/// order for the result to be independent of the reduction tree.
pub fn min_by_range<K, F, C>(len: usize, key: F, cmp: C) -> Option<K>
where
    K: Send,
    F: Fn(usize) -> K + Sync + Send,
    C: Fn(&K, &K) -> std::cmp::Ordering + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if go_parallel(len) {
        use rayon::prelude::*;
        return (0..len).into_par_iter().map(key).min_by(|a, b| cmp(a, b));
    }
    (0..len).map(key).min_by(|a, b| cmp(a, b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_and_sequential_maps_agree() {
        let data: Vec<f64> = (0..10_000).map(|i| (i as f64).sin()).collect();
        set_parallel(false);
        let a = map_slice(&data, |x| x * 3.0 + 1.0);
        set_parallel(true);
        let b = map_slice(&data, |x| x * 3.0 + 1.0);
        assert_eq!(a, b);
    }

    #[test]
    fn min_by_range_picks_first_of_ties_under_total_order() {
        let keys = |i: usize| ((i % 7) as u64, i);
        let m = min_by_range(5000, keys, |a, b| a.cmp(b)).unwrap();
        assert_eq!(m, (0, 0));
    }
}
