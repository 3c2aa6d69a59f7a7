//! Data-parallel helpers with a sequential fallback.
//!
//! With the default `parallel` feature the map helpers fan out over rayon;
//! without it they run sequentially. Both paths are also exported explicitly
//! so the bench suite can compare them on the same build.

/// Map `f` over `0..n`, sequentially.
pub fn map_indexed_seq<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T + Sync + Send,
    T: Send,
{
    (0..n).map(f).collect()
}

/// Map `f` over `0..n` using rayon.
#[cfg(feature = "parallel")]
pub fn map_indexed_par<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T + Sync + Send,
    T: Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

/// Map `f` over `0..n` with the default execution policy.
#[cfg(feature = "parallel")]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T + Sync + Send,
    T: Send,
{
    map_indexed_par(n, f)
}

/// Map `f` over `0..n` with the default execution policy.
#[cfg(not(feature = "parallel"))]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T + Sync + Send,
    T: Send,
{
    map_indexed_seq(n, f)
}

/// Map `f` over a slice with the default execution policy.
#[cfg(feature = "parallel")]
pub fn map_slice<'a, T: Sync, U: Send, F>(items: &'a [T], f: F) -> Vec<U>
where
    F: Fn(&'a T) -> U + Sync + Send,
{
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

/// Map `f` over a slice with the default execution policy.
#[cfg(not(feature = "parallel"))]
pub fn map_slice<'a, T: Sync, U: Send, F>(items: &'a [T], f: F) -> Vec<U>
where
    F: Fn(&'a T) -> U + Sync + Send,
{
    items.iter().map(f).collect()
}
