//! Data-parallel helpers for the scan-heavy paths (search, aggregation, recounts).
//!
//! With the `parallel` feature these dispatch to rayon; without it every mode
//! runs sequentially. Both paths produce identical results, which the tests
//! and the `aggregate` bench rely on.

use std::cmp::Ordering;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Exec {
    /// Parallel when compiled with the `parallel` feature.
    #[default]
    Auto,
    Sequential,
    Parallel,
}

impl Exec {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && !matches!(self, Exec::Sequential)
    }
}

pub fn filter_cloned<T, F>(items: &[T], pred: F, exec: Exec) -> Vec<T>
where
    T: Clone + Send + Sync,
    F: Fn(&T) -> bool + Send + Sync,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        return items.par_iter().filter(|t| pred(t)).cloned().collect();
    }
    let _ = exec;
    items.iter().filter(|t| pred(t)).cloned().collect()
}

pub fn map_collect<T, U, F>(items: &[T], f: F, exec: Exec) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Send + Sync,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        return items.par_iter().map(f).collect();
    }
    let _ = exec;
    items.iter().map(f).collect()
}

/// Stable sort.
pub fn sort_by<T, F>(items: &mut [T], cmp: F, exec: Exec)
where
    T: Send,
    F: Fn(&T, &T) -> Ordering + Sync,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        items.par_sort_by(cmp);
        return;
    }
    let _ = exec;
    items.sort_by(cmp);
}

/// Fold every item into an accumulator, then merge accumulators. `merge` must
/// be associative and `identity` its neutral element.
pub fn fold_reduce<T, A, I, F, M>(items: &[T], identity: I, fold: F, merge: M, exec: Exec) -> A
where
    T: Sync,
    A: Send,
    I: Fn() -> A + Send + Sync,
    F: Fn(A, &T) -> A + Send + Sync,
    M: Fn(A, A) -> A + Send + Sync,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        return items
            .par_iter()
            .fold(&identity, |acc, t| fold(acc, t))
            .reduce(&identity, &merge);
    }
    let _ = (exec, &merge);
    items.iter().fold(identity(), fold)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    #[test]
    fn modes_agree() {
        let data: Vec<u32> = (0..10_000).map(|i| (i * 7919) % 1013).collect();
        for exec in [Exec::Sequential, Exec::Parallel, Exec::Auto] {
            let evens = filter_cloned(&data, |x| x % 2 == 0, exec);
            assert_eq!(
                evens,
                data.iter().copied().filter(|x| x % 2 == 0).collect::<Vec<_>>()
            );

            let mut sorted = data.clone();
            sort_by(&mut sorted, |a, b| a.cmp(b), exec);
            assert!(sorted.windows(2).all(|w| w[0] <= w[1]));

            let hist = fold_reduce(
                &data,
                HashMap::<u32, usize>::new,
                |mut m, x| {
                    *m.entry(x % 10).or_default() += 1;
                    m
                },
                |mut a, b| {
                    for (k, v) in b {
                        *a.entry(k).or_default() += v;
                    }
                    a
                },
                exec,
            );
            assert_eq!(hist.values().sum::<usize>(), data.len());
        }
    }
}
