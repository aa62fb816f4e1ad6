//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (default) the `Parallel` mode dispatches to rayon.
//! Without it, both modes run on the calling thread. Results are always returned
//! in input order, so the two modes produce identical output.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

/// Map `f` over `0..n`, preserving order.
pub fn map_range<T, F>(exec: Execution, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..n).map(f).collect()
}

/// Map `f` over a slice, preserving order.
pub fn map_slice<S, T, F>(exec: Execution, items: &[S], f: F) -> Vec<T>
where
    S: Sync,
    T: Send,
    F: Fn(&S) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        return items.par_iter().map(f).collect();
    }
    let _ = exec;
    items.iter().map(f).collect()
}

/// Index in `0..n` minimising `key`, ties broken towards the smaller index.
///
/// `key` must not return NaN.
pub fn argmin_range<F>(exec: Execution, n: usize, key: F) -> Option<(usize, f64)>
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    let better = |a: (usize, f64), b: (usize, f64)| {
        if b.1 < a.1 || (b.1 == a.1 && b.0 < a.0) {
            b
        } else {
            a
        }
    };
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        return (0..n)
            .into_par_iter()
            .map(|i| (i, key(i)))
            .reduce_with(better);
    }
    let _ = exec;
    (0..n).map(|i| (i, key(i))).reduce(better)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmin_prefers_lower_index_on_ties() {
        for exec in [Execution::Sequential, Execution::Parallel] {
            let got = argmin_range(exec, 1000, |i| if i % 7 == 3 { -1.0 } else { i as f64 });
            assert_eq!(got, Some((3, -1.0)));
        }
    }

    #[test]
    fn map_preserves_order() {
        let seq = map_range(Execution::Sequential, 257, |i| i * i);
        let par = map_range(Execution::Parallel, 257, |i| i * i);
        assert_eq!(seq, par);
        assert_eq!(
            map_slice(Execution::Parallel, &[1, 2, 3], |x| x + 1),
            vec![2, 3, 4]
        );
    }

    #[test]
    fn empty_range_has_no_argmin() {
        assert_eq!(argmin_range(Execution::Parallel, 0, |_| 0.0), None);
    }
}
