//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (on by default) the helpers fan out over a
//! rayon pool; without it they are plain iterator loops. Output order always
//! follows input order, so callers see identical results either way.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// How many worker threads a top-level run may use.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Jobs {
    /// Use rayon's default pool size.
    #[default]
    Auto,
    /// At most this many threads; `Threads(1)` runs everything inline.
    Threads(usize),
}

impl Jobs {
    pub fn from_count(n: Option<usize>) -> Self {
        match n {
            None | Some(0) => Jobs::Auto,
            Some(n) => Jobs::Threads(n),
        }
    }
}

/// Runs `f` with the nested data-parallel helpers bounded by `jobs`.
#[cfg(feature = "parallel")]
pub fn with_jobs<R: Send>(jobs: Jobs, f: impl FnOnce() -> R + Send) -> R {
    match jobs {
        Jobs::Auto => f(),
        Jobs::Threads(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(f),
            Err(_) => f(),
        },
    }
}

#[cfg(not(feature = "parallel"))]
pub fn with_jobs<R: Send>(_jobs: Jobs, f: impl FnOnce() -> R + Send) -> R {
    f()
}

/// Order-preserving map over a slice.
#[cfg(feature = "parallel")]
pub fn map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    items.iter().map(f).collect()
}

/// Order-preserving map over `0..n`.
#[cfg(feature = "parallel")]
pub fn map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    (0..n).map(f).collect()
}

/// Fallible order-preserving map; the first error in input order wins.
pub fn try_map<T, R, E, F>(items: &[T], f: F) -> Result<Vec<R>, E>
where
    T: Sync,
    R: Send,
    E: Send,
    F: Fn(&T) -> Result<R, E> + Sync + Send,
{
    map(items, f).into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_preserves_order_at_any_width() {
        let xs: Vec<u64> = (0..1000).collect();
        let a = with_jobs(Jobs::Threads(1), || map(&xs, |x| x * x));
        let b = with_jobs(Jobs::Threads(4), || map(&xs, |x| x * x));
        assert_eq!(a, b);
        assert_eq!(a[999], 998_001);
    }

    #[test]
    fn try_map_reports_first_error() {
        let xs: Vec<i32> = vec![1, -2, 3, -4];
        let r: Result<Vec<i32>, i32> = try_map(&xs, |&x| if x < 0 { Err(x) } else { Ok(x) });
        assert_eq!(r, Err(-2));
    }
}
