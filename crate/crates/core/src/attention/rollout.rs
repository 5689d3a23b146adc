use std::ops::Range;

use crate::autodiff::Array;
use crate::error::{Error, Result};
use crate::model::AttentionRecord;

/// `0.5 (A + I)` with rows renormalized to sum to 1.
pub fn residual_adjusted(a: &Array<f64>) -> Array<f64> {
    let s = a.rows();
    let mut out = Array::from_fn(s, s, |r, c| 0.5 * (a.get(r, c) + if r == c { 1.0 } else { 0.0 }));
    for r in 0..s {
        let sum: f64 = out.row(r).iter().sum();
        if sum > 0.0 {
            out.row_mut(r).iter_mut().for_each(|x| *x /= sum);
        }
    }
    out
}

fn matmul(a: &Array<f64>, b: &Array<f64>) -> Array<f64> {
    let (n, k, m) = (a.rows(), a.cols(), b.cols());
    let mut out = Array::zeros(n, m);
    for i in 0..n {
        let row = out.row_mut(i);
        for p in 0..k {
            let x = a.get(i, p);
            if x != 0.0 {
                for (o, &y) in row.iter_mut().zip(b.row(p)) {
                    *o += x * y;
                }
            }
        }
    }
    out
}

fn check(record: &AttentionRecord, head: usize, layers: &Range<usize>) -> Result<()> {
    if !record.is_complete() || record.layers() == 0 {
        return Err(Error::State(format!(
            "attention record is incomplete ({} layers x {} heads expected)",
            record.layers(),
            record.heads()
        )));
    }
    if head >= record.heads() {
        return Err(Error::Bounds {
            what: "attention head",
            detail: format!("{head} >= {}", record.heads()),
        });
    }
    if layers.is_empty() || layers.end > record.layers() {
        return Err(Error::Bounds {
            what: "rollout layers",
            detail: format!("{layers:?} not within 0..{}", record.layers()),
        });
    }
    Ok(())
}

/// Product `Ã_last ... Ã_first` of one head's residual-adjusted attention
/// over `layers`.
pub fn rollout_matrix(record: &AttentionRecord, head: usize, layers: Range<usize>) -> Result<Array<f64>> {
    check(record, head, &layers)?;
    let mut acc: Option<Array<f64>> = None;
    for layer in layers {
        let a = residual_adjusted(record.get(layer, head).expect("checked"));
        acc = Some(match acc {
            None => a,
            Some(prev) => matmul(&a, &prev),
        });
    }
    Ok(acc.expect("non-empty range"))
}

/// Patch weights of one head across `layers`: the regression-token row of
/// the rolled-out matrix restricted to the `patches` patch columns.
pub fn rollout_range(record: &AttentionRecord, head: usize, patches: usize, layers: Range<usize>) -> Result<Vec<f64>> {
    let m = rollout_matrix(record, head, layers)?;
    if patches + 1 > m.cols() {
        return Err(Error::Data(format!(
            "{patches} patches do not fit a sequence of {}",
            m.cols()
        )));
    }
    Ok(m.row(0)[1..=patches].to_vec())
}

/// Patch weights of one head across all layers.
pub fn rollout(record: &AttentionRecord, head: usize, patches: usize) -> Result<Vec<f64>> {
    rollout_range(record, head, patches, 0..record.layers())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_stochastic(s: usize, rng: &mut ChaCha8Rng) -> Array<f64> {
        let mut a = Array::from_fn(s, s, |_, _| rng.gen_range(0.01..1.0));
        for r in 0..s {
            let sum: f64 = a.row(r).iter().sum();
            a.row_mut(r).iter_mut().for_each(|x| *x /= sum);
        }
        a
    }

    #[test]
    fn single_layer_is_residual_adjusted_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_stochastic(6, &mut rng);
        let rec = AttentionRecord::from_maps(vec![vec![a.clone()]]).unwrap();
        let w = rollout(&rec, 0, 4).unwrap();
        // Row sums of a stochastic A stay 1 after 0.5 (A + I), so the
        // renormalization is the identity here.
        for j in 0..4 {
            assert!((w[j] - 0.5 * a.get(0, j + 1)).abs() < 1e-15);
        }
    }

    #[test]
    fn two_layers_match_explicit_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (a1, a2) = (random_stochastic(5, &mut rng), random_stochastic(5, &mut rng));
        let rec = AttentionRecord::from_maps(vec![vec![a1.clone()], vec![a2.clone()]]).unwrap();
        let t = |a: &Array<f64>, r: usize, c: usize| 0.5 * (a.get(r, c) + if r == c { 1.0 } else { 0.0 });
        let w = rollout(&rec, 0, 4).unwrap();
        for j in 1..5 {
            let expect: f64 = (0..5).map(|k| t(&a2, 0, k) * t(&a1, k, j)).sum();
            assert!((w[j - 1] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_attention_gives_uniform_weights() {
        let s = 9;
        let u = Array::filled(s, s, 1.0 / s as f64);
        let rec = AttentionRecord::from_maps(vec![vec![u.clone()]; 3]).unwrap();
        let w = rollout(&rec, 0, 8).unwrap();
        for x in &w[1..] {
            assert!((x - w[0]).abs() < 1e-12);
        }
        assert!(w.iter().all(|&x| x > 0.0));
    }

    #[test]
    fn incomplete_record_is_state_error() {
        let mut rec = AttentionRecord::new(2, 1);
        rec.push(Array::filled(3, 3, 1.0 / 3.0)).unwrap();
        assert!(matches!(rollout(&rec, 0, 2), Err(Error::State(_))));
    }

    #[test]
    fn rolled_rows_stay_stochastic() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let maps: Vec<Vec<Array<f64>>> = (0..4).map(|_| vec![random_stochastic(7, &mut rng)]).collect();
        let m = rollout_matrix(&AttentionRecord::from_maps(maps).unwrap(), 0, 0..4).unwrap();
        for r in 0..7 {
            assert!((m.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(m.row(r).iter().all(|&x| x >= 0.0));
        }
    }
}
