//! Deterministic replication driver.
//!
//! Replications are processed in fixed-size chunks; each chunk may run in
//! parallel, but chunk results are folded into the accumulator in index
//! order. Combined with the integer accumulators in [`crate::stats`] this
//! makes every aggregate identical for any worker count, including a
//! plain sequential run (the `parallel` feature turned off).

/// Replications per scheduling chunk. Fixed: the value bounds peak
/// memory, it never affects results.
#[cfg(feature = "parallel")]
const CHUNK: u64 = 256;

/// Run `make(0..n)` and fold the outputs into `acc` in replication order,
/// stopping at the first error (the lowest-index one, deterministically).
///
/// `threads` caps the worker count; `Some(1)` forces a sequential run.
/// Without the `parallel` feature the run is always sequential.
pub fn fold_replications<A, R, E, F>(
    n: u64,
    threads: Option<usize>,
    make: F,
    acc: &mut A,
    mut fold: impl FnMut(&mut A, R),
) -> Result<(), E>
where
    R: Send,
    E: Send,
    F: Fn(u64) -> Result<R, E> + Sync,
{
    #[cfg(feature = "parallel")]
    {
        if threads != Some(1) {
            return fold_parallel(n, threads, &make, acc, &mut fold);
        }
    }
    let _ = threads;
    for rep in 0..n {
        fold(acc, make(rep)?);
    }
    Ok(())
}

#[cfg(feature = "parallel")]
fn fold_parallel<A, R, E, F>(
    n: u64,
    threads: Option<usize>,
    make: &F,
    acc: &mut A,
    fold: &mut impl FnMut(&mut A, R),
) -> Result<(), E>
where
    R: Send,
    E: Send,
    F: Fn(u64) -> Result<R, E> + Sync,
{
    use rayon::prelude::*;

    let pool = threads.map(|t| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .expect("worker pool")
    });
    let run_chunk = |start: u64, end: u64| -> Vec<Result<R, E>> {
        let body = || (start..end).into_par_iter().map(make).collect();
        match &pool {
            Some(p) => p.install(body),
            None => body(),
        }
    };
    let mut start = 0;
    while start < n {
        let end = (start + CHUNK).min(n);
        for item in run_chunk(start, end) {
            fold(acc, item?);
        }
        start = end;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn folds_in_replication_order() {
        let mut order = Vec::new();
        fold_replications::<_, _, (), _>(
            1000,
            Some(4),
            Ok,
            &mut order,
            |v, rep| v.push(rep),
        )
        .unwrap();
        assert_eq!(order, (0..1000).collect::<Vec<_>>());
    }

    #[test]
    fn worker_count_does_not_change_the_fold() {
        let run = |threads| {
            let mut sum = 0u64;
            fold_replications::<_, _, (), _>(
                5000,
                threads,
                |rep| Ok(rep * rep % 7919),
                &mut sum,
                |s, x| *s += x,
            )
            .unwrap();
            sum
        };
        let expected = run(Some(1));
        assert_eq!(run(Some(2)), expected);
        assert_eq!(run(Some(8)), expected);
        assert_eq!(run(None), expected);
    }

    #[test]
    fn first_error_wins_deterministically() {
        let result: Result<(), u64> = fold_replications(
            1000,
            Some(8),
            |rep| if rep >= 500 { Err(rep) } else { Ok(()) },
            &mut (),
            |_, _| {},
        );
        assert_eq!(result, Err(500));
    }
}
