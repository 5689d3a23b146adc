use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::{Array, Axis, Tape};

fn config(layers: usize, heads: usize, hidden: usize, patch_dim: usize, seq_len: usize) -> SiTConfig {
    SiTConfig {
        variant: "test".into(),
        layers,
        heads,
        hidden,
        mlp_size: 2 * hidden,
        patch_dim,
        seq_len,
        dropout: 0.0,
        confound: false,
    }
}

fn random(rows: usize, cols: usize, rng: &mut impl Rng) -> Array<f64> {
    Array::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}

fn set(model: &mut SiTModel<f64>, name: &str, value: Array<f64>) {
    model.params.assign(name, value).unwrap();
}

fn get<'a>(model: &'a SiTModel<f64>, name: &str) -> &'a Array<f64> {
    model.params.value(model.params.id(name).unwrap())
}

fn randomize(model: &mut SiTModel<f64>, rng: &mut impl Rng) {
    let ids: Vec<ParamId> = model.params.ids().collect();
    for id in ids {
        let [r, c] = model.params.value(id).shape();
        *model.params.value_mut(id) = random(r, c, rng).map(|x| x * 0.5);
    }
}

/// Straight-line dense evaluation on row vectors, independent of the tape.
mod dense {
    use crate::autodiff::Array;

    pub type M = Vec<Vec<f64>>;

    pub fn of(a: &Array<f64>) -> M {
        (0..a.rows()).map(|r| a.row(r).to_vec()).collect()
    }

    pub fn matmul(a: &M, b: &M) -> M {
        let (n, k, m) = (a.len(), b.len(), b[0].len());
        let mut out = vec![vec![0.0; m]; n];
        for i in 0..n {
            for j in 0..m {
                for p in 0..k {
                    out[i][j] += a[i][p] * b[p][j];
                }
            }
        }
        out
    }

    pub fn add_row(a: &M, row: &[f64]) -> M {
        a.iter()
            .map(|r| r.iter().zip(row).map(|(x, y)| x + y).collect())
            .collect()
    }

    pub fn add(a: &M, b: &M) -> M {
        a.iter()
            .zip(b)
            .map(|(r, s)| r.iter().zip(s).map(|(x, y)| x + y).collect())
            .collect()
    }

    pub fn linear(x: &M, w: &Array<f64>, b: &Array<f64>) -> M {
        add_row(&matmul(x, &of(w)), b.data())
    }

    pub fn layernorm(x: &M, g: &[f64], b: &[f64]) -> M {
        x.iter()
            .map(|r| {
                let n = r.len() as f64;
                let mean = r.iter().sum::<f64>() / n;
                let var = r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                r.iter()
                    .enumerate()
                    .map(|(i, v)| (v - mean) / (var + 1e-6).sqrt() * g[i] + b[i])
                    .collect()
            })
            .collect()
    }

    pub fn gelu(x: &M) -> M {
        x.iter()
            .map(|r| {
                r.iter()
                    .map(|&v| 0.5 * v * (1.0 + libm::erf(v / 2f64.sqrt())))
                    .collect()
            })
            .collect()
    }

    pub fn attention(q: &M, k: &M, v: &M) -> M {
        let dh = q[0].len() as f64;
        let mut out = Vec::new();
        for qi in q {
            let logits: Vec<f64> = k
                .iter()
                .map(|kj| qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() / dh.sqrt())
                .collect();
            let max = logits.iter().cloned().fold(f64::MIN, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
            let z: f64 = e.iter().sum();
            let mut row = vec![0.0; v[0].len()];
            for (w, vj) in e.iter().zip(v) {
                for (o, x) in row.iter_mut().zip(vj) {
                    *o += w / z * x;
                }
            }
            out.push(row);
        }
        out
    }

    pub fn cols(a: &M, start: usize, end: usize) -> M {
        a.iter().map(|r| r[start..end].to_vec()).collect()
    }
}

fn dense_block(model: &SiTModel<f64>, x: &dense::M, layer: usize) -> dense::M {
    let p = |s: &str| get(model, &format!("blocks.{layer}.{s}"));
    let (h, dh) = (model.config().heads, model.config().head_dim());
    let n1 = dense::layernorm(x, p("ln1.gamma").data(), p("ln1.beta").data());
    let q = dense::linear(&n1, p("attn.q.weight"), p("attn.q.bias"));
    let k = dense::linear(&n1, p("attn.k.weight"), p("attn.k.bias"));
    let v = dense::linear(&n1, p("attn.v.weight"), p("attn.v.bias"));
    let mut joined = vec![Vec::new(); x.len()];
    for head in 0..h {
        let (a, b) = (head * dh, (head + 1) * dh);
        let out = dense::attention(&dense::cols(&q, a, b), &dense::cols(&k, a, b), &dense::cols(&v, a, b));
        for (j, o) in joined.iter_mut().zip(out) {
            j.extend(o);
        }
    }
    let z = dense::add(&dense::linear(&joined, p("attn.o.weight"), p("attn.o.bias")), x);
    let n2 = dense::layernorm(&z, p("ln2.gamma").data(), p("ln2.beta").data());
    let f = dense::gelu(&dense::linear(&n2, p("ffn.fc1.weight"), p("ffn.fc1.bias")));
    dense::add(&dense::linear(&f, p("ffn.fc2.weight"), p("ffn.fc2.bias")), &z)
}

fn max_diff(a: &Array<f64>, b: &dense::M) -> f64 {
    let mut worst: f64 = 0.0;
    for (r, row) in b.iter().enumerate() {
        for (c, v) in row.iter().enumerate() {
            worst = worst.max((a.get(r, c) - v).abs());
        }
    }
    worst
}

#[test]
fn embedded_sequence_has_regression_token_row() {
    let model = SiTModel::<f64>::new(config(1, 2, 16, 612, 320), 1).unwrap();
    let mut s = Session::new(&model, false, 0);
    let x = s.embed_sequence(&Array::zeros(320, 612), &[]).unwrap();
    assert_eq!(s.value(x).shape(), [321, 16]);
}

#[test]
fn zero_inputs_leave_only_the_regression_token() {
    let mut model = SiTModel::<f64>::new(config(1, 1, 8, 6, 4), 2).unwrap();
    set(&mut model, "pos_embed", Array::zeros(5, 8));
    let mut s = Session::new(&model, false, 0);
    let x = s.embed_sequence(&Array::zeros(4, 6), &[]).unwrap();
    let out = s.value(x);
    assert_eq!(out.row(0), get(&model, "reg_token").data());
    assert!((1..5).all(|r| out.row(r).iter().all(|&v| v == 0.0)));
}

#[test]
fn extra_token_is_appended_without_position() {
    let model = SiTModel::<f64>::new(config(1, 2, 16, 612, 320), 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let extra_value = random(1, 16, &mut rng);
    let mut s = Session::new(&model, false, 0);
    let extra = s.tape.constant(extra_value.clone());
    let x = s.embed_sequence(&random(320, 612, &mut rng), &[extra]).unwrap();
    assert_eq!(s.value(x).shape(), [322, 16]);
    assert_eq!(s.value(x).row(321), extra_value.data());
}

#[test]
fn wrong_token_length_is_a_shape_error() {
    let model = SiTModel::<f64>::new(config(1, 1, 8, 6, 4), 0).unwrap();
    let mut s = Session::new(&model, false, 0);
    let err = s.embed_sequence(&Array::zeros(4, 7), &[]).unwrap_err();
    assert!(matches!(err, crate::Error::Shape { left: [4, 6], right: [4, 7], .. }));
}

#[test]
fn single_token_attends_to_itself() {
    let model = SiTModel::<f64>::new(config(1, 1, 4, 6, 4), 0).unwrap();
    let mut s = Session::new(&model, false, 0);
    s.record_attention();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let q = s.tape.constant(random(1, 4, &mut rng));
    let k = s.tape.constant(random(1, 4, &mut rng));
    let v_value = random(1, 4, &mut rng);
    let v = s.tape.constant(v_value.clone());
    let out = s.self_attention(q, k, v).unwrap();
    assert_eq!(s.value(out), &v_value);
    assert_eq!(s.take_record().unwrap().get(0, 0).unwrap().data(), &[1.0]);
}

#[test]
fn zero_queries_average_values() {
    let model = SiTModel::<f64>::new(config(1, 1, 4, 6, 4), 0).unwrap();
    let mut s = Session::new(&model, false, 0);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let q = s.tape.constant(Array::zeros(5, 4));
    let k = s.tape.constant(random(5, 4, &mut rng));
    let v_value = random(5, 4, &mut rng);
    let v = s.tape.constant(v_value.clone());
    let out = s.self_attention(q, k, v).unwrap();
    for c in 0..4 {
        let mean = (0..5).map(|r| v_value.get(r, c)).sum::<f64>() / 5.0;
        for r in 0..5 {
            assert!((s.value(out).get(r, c) - mean).abs() < 1e-15);
        }
    }
}

#[test]
fn two_token_attention_matches_hand_evaluation() {
    // q = [[1,0],[0,1]], k = [[1,1],[0,2]], v = [[1,2],[3,4]], D_h = 2
    let model = SiTModel::<f64>::new(config(1, 1, 2, 6, 4), 0).unwrap();
    let mut s = Session::new(&model, false, 0);
    let q = s.tape.constant(Array::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
    let k = s.tape.constant(Array::from_vec(2, 2, vec![1.0, 1.0, 0.0, 2.0]).unwrap());
    let v = s.tape.constant(Array::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let out = s.self_attention(q, k, v).unwrap();
    // row 0 logits (1, 0)/sqrt2, row 1 logits (1, 2)/sqrt2
    let r = 2f64.sqrt();
    let w0 = 1.0 / (1.0 + (-1.0 / r).exp());
    let w1 = 1.0 / (1.0 + (1.0 / r).exp());
    let want = [
        w0 * 1.0 + (1.0 - w0) * 3.0,
        w0 * 2.0 + (1.0 - w0) * 4.0,
        w1 * 1.0 + (1.0 - w1) * 3.0,
        w1 * 2.0 + (1.0 - w1) * 4.0,
    ];
    for (a, b) in s.value(out).data().iter().zip(want) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

#[test]
fn single_head_with_identity_output_is_self_attention() {
    let mut model = SiTModel::<f64>::new(config(1, 1, 6, 6, 4), 7).unwrap();
    set(&mut model, "blocks.0.attn.o.weight", Array::from_fn(6, 6, |r, c| f64::from(u8::from(r == c))));
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x_value = random(5, 6, &mut rng);

    let mut s = Session::new(&model, false, 0);
    let x = s.tape.constant(x_value.clone());
    let via_msa = s.msa(x, 0).unwrap();

    let mut t = Session::new(&model, false, 0);
    let x = t.tape.constant(x_value);
    let mut proj = |name: &str| {
        let w = t.param(model.params.id(&format!("blocks.0.attn.{name}.weight")).unwrap());
        let b = t.param(model.params.id(&format!("blocks.0.attn.{name}.bias")).unwrap());
        let y = t.tape.matmul(x, w).unwrap();
        t.tape.add(y, b).unwrap()
    };
    let (q, k, v) = (proj("q"), proj("k"), proj("v"));
    let direct = t.self_attention(q, k, v).unwrap();
    assert_eq!(s.value(via_msa), t.value(direct));
}

#[test]
fn msa_is_permutation_equivariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut model = SiTModel::<f64>::new(config(1, 3, 12, 6, 4), 0).unwrap();
    randomize(&mut model, &mut rng);
    let x_value = random(7, 12, &mut rng);
    let perm = [3usize, 0, 6, 1, 5, 2, 4];
    let permuted = Array::from_fn(7, 12, |r, c| x_value.get(perm[r], c));

    let run = |input: Array<f64>| {
        let mut s = Session::new(&model, false, 0);
        let x = s.tape.constant(input);
        let y = s.msa(x, 0).unwrap();
        s.value(y).clone()
    };
    let (a, b) = (run(x_value), run(permuted));
    for r in 0..7 {
        for c in 0..12 {
            assert!((b.get(r, c) - a.get(perm[r], c)).abs() < 1e-12);
        }
    }
}

#[test]
fn msa_keeps_width_for_three_heads() {
    let model = SiTModel::<f64>::new(config(1, 3, 192, 6, 4), 0).unwrap();
    let mut s = Session::new(&model, false, 0);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let x = s.tape.constant(random(9, 192, &mut rng));
    let y = s.msa(x, 0).unwrap();
    assert_eq!(s.value(y).shape(), [9, 192]);
}

#[test]
fn zero_block_is_identity() {
    let mut model = SiTModel::<f64>::new(config(1, 2, 8, 6, 4), 0).unwrap();
    let names: Vec<String> = model
        .params
        .iter()
        .map(|(_, p)| p.name.clone())
        .filter(|n| n.starts_with("blocks.0.") && (n.ends_with(".weight") || n.ends_with(".bias")))
        .collect();
    for n in names {
        let shape = get(&model, &n).shape();
        set(&mut model, &n, Array::zeros(shape[0], shape[1]));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x_value = random(5, 8, &mut rng);
    let mut s = Session::new(&model, false, 0);
    let x = s.tape.constant(x_value.clone());
    let y = s.transformer_block(x, 0).unwrap();
    assert_eq!(s.value(y), &x_value);
}

#[test]
fn block_matches_dense_reevaluation() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut model = SiTModel::<f64>::new(config(2, 2, 8, 6, 4), 0).unwrap();
    randomize(&mut model, &mut rng);
    let x_value = random(5, 8, &mut rng);
    let mut s = Session::new(&model, false, 0);
    let x = s.tape.constant(x_value.clone());
    let y = s.transformer_block(x, 1).unwrap();
    let want = dense_block(&model, &dense::of(&x_value), 1);
    assert!(max_diff(s.value(y), &want) < 1e-6);
}

#[test]
fn full_regression_matches_dense_reevaluation() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut model = SiTModel::<f64>::new(config(2, 2, 8, 6, 4), 0).unwrap();
    randomize(&mut model, &mut rng);
    let tokens = random(4, 6, &mut rng);
    let got = predict(&model, &tokens, None).unwrap();

    let proj = dense::linear(&dense::of(&tokens), get(&model, "patch_proj.weight"), get(&model, "patch_proj.bias"));
    let mut seq = vec![get(&model, "reg_token").data().to_vec()];
    seq.extend(proj);
    let mut x = dense::add(&seq, &dense::of(get(&model, "pos_embed")));
    for l in 0..2 {
        x = dense_block(&model, &x, l);
    }
    let x = dense::layernorm(&x, get(&model, "norm.gamma").data(), get(&model, "norm.beta").data());
    let t = dense::layernorm(&x[..1].to_vec(), get(&model, "head.ln.gamma").data(), get(&model, "head.ln.beta").data());
    let t = dense::gelu(&dense::linear(&t, get(&model, "head.fc1.weight"), get(&model, "head.fc1.bias")));
    let want = dense::linear(&t, get(&model, "head.fc2.weight"), get(&model, "head.fc2.bias"))[0][0];
    assert!((got - want).abs() < 1e-9, "{got} vs {want}");
}

#[test]
fn eval_forward_is_deterministic_and_finite() {
    let mut cfg = config(2, 2, 16, 12, 10);
    cfg.dropout = 0.3;
    let model = SiTModel::<f32>::new(cfg, 14).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let tokens = random(10, 12, &mut rng).cast::<f32>();
    let a = predict(&model, &tokens, None).unwrap();
    let b = predict(&model, &tokens, None).unwrap();
    assert_eq!(a.to_bits(), b.to_bits());
    assert!(a.is_finite());
}

#[test]
fn every_patch_influences_the_prediction() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let mut model = SiTModel::<f64>::new(config(2, 2, 16, 12, 40), 0).unwrap();
    randomize(&mut model, &mut rng);
    let tokens = random(40, 12, &mut rng);
    let base = predict(&model, &tokens, None).unwrap();
    for _ in 0..10 {
        let p = rng.gen_range(0..40);
        let mut bumped = tokens.clone();
        for c in 0..12 {
            bumped.set(p, c, bumped.get(p, c) + 0.5);
        }
        let moved = predict(&model, &bumped, None).unwrap();
        assert_ne!(moved, base, "patch {p} had no effect");
    }
}

#[test]
fn reconstruction_shape_and_zero_head() {
    let mut model = SiTModel::<f32>::new(SiTConfig::variant("micro", 612, 320).unwrap(), 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let tokens = random(320, 612, &mut rng).cast::<f32>();
    let mut s = Session::new(&model, false, 0);
    let proj = s.project_patches(&tokens).unwrap();
    let out = s.forward_mpp(proj).unwrap();
    assert_eq!(s.value(out).shape(), [320, 612]);
    drop(s);

    set_f32(&mut model, "mpp_head.weight", Array::zeros(32, 612));
    let mut s = Session::new(&model, false, 0);
    let proj = s.project_patches(&tokens).unwrap();
    let out = s.forward_mpp(proj).unwrap();
    assert!(s.value(out).data().iter().all(|&v| v == 0.0));
}

fn set_f32(model: &mut SiTModel<f32>, name: &str, value: Array<f32>) {
    model.params.assign(name, value).unwrap();
}

#[test]
fn masked_reconstruction_loss_matches_dense_mse() {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let mut model = SiTModel::<f64>::new(config(1, 2, 8, 6, 5), 0).unwrap();
    randomize(&mut model, &mut rng);
    let tokens = random(5, 6, &mut rng);
    let mask = [true, false, true, true, false];
    let mut s = Session::new(&model, false, 0);
    let proj = s.project_patches(&tokens).unwrap();
    let out = s.forward_mpp(proj).unwrap();
    let recon = s.value(out).clone();
    let loss = s.tape.mse(out, &tokens, Some(&mask)).unwrap();

    let mut total = 0.0;
    for r in (0..5).filter(|&r| mask[r]) {
        for c in 0..6 {
            total += (recon.get(r, c) - tokens.get(r, c)).powi(2);
        }
    }
    let want = total / (3.0 * 6.0);
    assert!((s.value(loss).data()[0] - want).abs() < 1e-12);
}

#[test]
fn attention_rows_are_distributions() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let mut model = SiTModel::<f64>::new(config(3, 2, 8, 6, 6), 0).unwrap();
    randomize(&mut model, &mut rng);
    let (_, rec) = predict_with_attention(&model, &random(6, 6, &mut rng), None).unwrap();
    assert!(rec.is_complete());
    assert_eq!((rec.layers(), rec.heads(), rec.seq_len()), (3, 2, 7));
    assert!(rec.max_row_sum_error() < 1e-12);
}

#[test]
fn parameter_count_matches_built_model() {
    for name in ["micro", "mini", "tiny"] {
        let cfg = SiTConfig::variant(name, 612, 320).unwrap();
        let model = SiTModel::<f32>::new(cfg.clone(), 0).unwrap();
        assert_eq!(model.regression_param_count(), cfg.param_count(), "{name}");
    }
}

#[test]
fn checkpoint_restores_the_model() {
    let mut cfg = config(1, 2, 8, 6, 4);
    cfg.confound = true;
    let model = SiTModel::<f32>::new(cfg, 20).unwrap();
    let ck = crate::autodiff::Checkpoint::decode(&model.to_checkpoint().encode().unwrap()).unwrap();
    assert_eq!(SiTModel::<f32>::from_checkpoint(&ck).unwrap(), model);
}

#[test]
fn frozen_backbone_gets_no_gradients() {
    let mut model = SiTModel::<f64>::new(config(1, 1, 8, 6, 4), 0).unwrap();
    model.freeze_backbone();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut s = Session::new(&model, true, 0);
    let y = s.forward_regress(&random(4, 6, &mut rng), &[]).unwrap();
    let loss = s.tape.mse(y, &Array::scalar(1.0), None).unwrap();
    let g = s.backward(loss).unwrap();
    for (id, p) in model.params.iter() {
        assert_eq!(g.get(id).is_some(), p.name.starts_with(HEAD_PREFIX), "{}", p.name);
    }
}

#[test]
fn concat_of_heads_preserves_order() {
    // columns of the joined head outputs follow head order
    let mut t = Tape::<f64>::new();
    let a = t.constant(Array::filled(2, 1, 1.0));
    let b = t.constant(Array::filled(2, 2, 2.0));
    let c = t.concat(&[a, b], Axis::Cols).unwrap();
    assert_eq!(t.value(c).row(0), &[1.0, 2.0, 2.0]);
}
