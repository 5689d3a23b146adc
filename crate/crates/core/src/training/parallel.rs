use std::thread;

use crate::autodiff::{Scalar, Var};
use crate::error::Result;
use crate::model::{ParamGrads, Session, SiTModel};

/// Contiguous chunks of `0..n`, one per worker.
fn chunks(n: usize, threads: usize) -> Vec<std::ops::Range<usize>> {
    let threads = threads.clamp(1, n.max(1));
    let size = n.div_ceil(threads);
    (0..threads)
        .map(|t| (t * size).min(n)..((t + 1) * size).min(n))
        .filter(|r| !r.is_empty())
        .collect()
}

/// Maps `f` over `0..n` on up to `threads` workers, keeping input order.
pub fn parallel_map<R, F>(n: usize, threads: usize, f: F) -> Result<Vec<R>>
where
    R: Send,
    F: Fn(usize) -> Result<R> + Sync,
{
    let parts = chunks(n, threads);
    if parts.len() <= 1 {
        return (0..n).map(&f).collect();
    }
    let f = &f;
    let results: Vec<Result<Vec<R>>> = thread::scope(|s| {
        let handles: Vec<_> = parts
            .into_iter()
            .map(|r| s.spawn(move || r.map(f).collect::<Result<Vec<R>>>()))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("worker panicked"))
            .collect()
    });
    let mut out = Vec::with_capacity(n);
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}

/// Summed gradients and loss over a batch. `forward` builds the loss of one
/// batch position on a fresh session, or returns `None` to skip it. Worker
/// sums are reduced in worker order, so results depend only on the thread
/// count.
pub(crate) fn batch_gradients<'m, T, F>(
    model: &'m SiTModel<T>,
    batch: usize,
    threads: usize,
    forward: F,
) -> Result<(ParamGrads<T>, f64, usize)>
where
    T: Scalar,
    F: Fn(usize) -> Result<Option<(Session<'m, T>, Var)>> + Sync,
{
    let empty = || ParamGrads {
        grads: vec![None; model.params.len()],
    };
    let work = |range: std::ops::Range<usize>| -> Result<(ParamGrads<T>, f64, usize)> {
        let mut acc = empty();
        let (mut loss, mut used) = (0.0, 0);
        for i in range {
            if let Some((session, l)) = forward(i)? {
                loss += session.value(l).data()[0].to_f64().unwrap_or(f64::NAN);
                acc.accumulate(&session.backward(l)?);
                used += 1;
            }
        }
        Ok((acc, loss, used))
    };
    let parts = chunks(batch, threads);
    let results: Vec<Result<(ParamGrads<T>, f64, usize)>> = if parts.len() <= 1 {
        parts.into_iter().map(work).collect()
    } else {
        let work = &work;
        thread::scope(|s| {
            let handles: Vec<_> = parts.into_iter().map(|r| s.spawn(move || work(r))).collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("worker panicked"))
                .collect()
        })
    };
    let mut total = empty();
    let (mut loss, mut used) = (0.0, 0);
    for r in results {
        let (g, l, u) = r?;
        total.accumulate(&g);
        loss += l;
        used += u;
    }
    Ok((total, loss, used))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunks_cover_range_in_order() {
        for (n, t) in [(10, 3), (2, 8), (0, 4), (7, 1)] {
            let flat: Vec<usize> = chunks(n, t).into_iter().flatten().collect();
            assert_eq!(flat, (0..n).collect::<Vec<_>>());
        }
    }

    #[test]
    fn map_keeps_order() {
        let out = parallel_map(23, 4, |i| Ok(i * i)).unwrap();
        assert_eq!(out, (0..23).map(|i| i * i).collect::<Vec<_>>());
    }
}
