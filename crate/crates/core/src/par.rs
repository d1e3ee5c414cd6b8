//! Order-preserving map that runs on rayon when the `parallel` feature is on.

#[cfg(feature = "parallel")]
pub fn par_map<I, T, F>(items: I, f: F) -> Vec<T>
where
    I: rayon::iter::IntoParallelIterator,
    I::Iter: rayon::iter::IndexedParallelIterator,
    F: Fn(I::Item) -> T + Sync + Send,
    T: Send,
{
    use rayon::iter::ParallelIterator;
    items.into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn par_map<I, T, F>(items: I, f: F) -> Vec<T>
where
    I: IntoIterator,
    F: Fn(I::Item) -> T,
{
    items.into_iter().map(f).collect()
}
