//! Data-parallel map helpers with a sequential fallback.
//!
//! The pipeline's hot loops (silver-pair generation, per-sentence scoring,
//! per-sequence gradient work) are all index-addressed maps, so they run
//! through these two functions. With the `parallel` feature (the default)
//! [`map_indexed`] fans out over rayon's pool; without it the two functions
//! are the same code. Output order is the input index order in both cases,
//! which is what keeps parallel runs byte-identical to sequential ones.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Map `f` over `items` with each item's index, preserving input order.
#[cfg(feature = "parallel")]
pub fn map_indexed<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync,
{
    items
        .par_iter()
        .enumerate()
        .map(|(i, item)| f(i, item))
        .collect()
}

/// Map `f` over `items` with each item's index, preserving input order.
#[cfg(not(feature = "parallel"))]
pub fn map_indexed<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    F: Fn(usize, &T) -> R,
{
    map_indexed_seq(items, f)
}

/// Sequential twin of [`map_indexed`]; always available so callers and
/// benchmarks can compare the two paths in one build.
pub fn map_indexed_seq<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    F: Fn(usize, &T) -> R,
{
    items
        .iter()
        .enumerate()
        .map(|(i, item)| f(i, item))
        .collect()
}

/// Fallible variant of [`map_indexed`]: the first error (by index) wins.
#[cfg(feature = "parallel")]
pub fn try_map_indexed<T, R, E, F>(items: &[T], f: F) -> Result<Vec<R>, E>
where
    T: Sync,
    R: Send,
    E: Send,
    F: Fn(usize, &T) -> Result<R, E> + Sync,
{
    let results: Vec<Result<R, E>> = items
        .par_iter()
        .enumerate()
        .map(|(i, item)| f(i, item))
        .collect();
    results.into_iter().collect()
}

/// Fallible variant of [`map_indexed`]: the first error (by index) wins.
#[cfg(not(feature = "parallel"))]
pub fn try_map_indexed<T, R, E, F>(items: &[T], f: F) -> Result<Vec<R>, E>
where
    F: Fn(usize, &T) -> Result<R, E>,
{
    items
        .iter()
        .enumerate()
        .map(|(i, item)| f(i, item))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_matches_sequential() {
        let items: Vec<u64> = (0..1000).collect();
        let f = |i: usize, x: &u64| crate::rng::mix_seed(*x, i as u64);
        assert_eq!(map_indexed(&items, f), map_indexed_seq(&items, f));
    }

    #[test]
    fn try_map_reports_first_error_by_index() {
        let items: Vec<u32> = (0..100).collect();
        let res = try_map_indexed(&items, |_, x| if *x >= 40 { Err(*x) } else { Ok(*x) });
        assert_eq!(res, Err(40));
    }
}
