//! Finite-difference checks of every tape primitive and of the composed
//! model losses.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sit_core::autodiff::{gradcheck, Array, Axis, Tape, Var};
use sit_core::model::{SiTConfig, SiTModel, Session};
use sit_core::Result;

const TOL: f64 = 1e-4;
const POINTS: u64 = 20;

fn random(rows: usize, cols: usize, rng: &mut impl Rng) -> Array<f64> {
    Array::from_fn(rows, cols, |_, _| rng.gen_range(-1.5..1.5))
}

/// Reduces any output to a scalar through an MSE against a fixed random
/// target, so every output entry gets a distinct weight.
fn reduce(t: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var> {
    let [r, c] = t.shape(y);
    let target = random(r, c, &mut ChaCha8Rng::seed_from_u64(seed ^ 0xfeed));
    t.mse(y, &target, None)
}

fn check<F>(name: &str, shapes: &[[usize; 2]], f: F)
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut worst: f64 = 0.0;
    for point in 0..POINTS {
        let mut rng = ChaCha8Rng::seed_from_u64(point);
        let inputs: Vec<Array<f64>> = shapes.iter().map(|s| random(s[0], s[1], &mut rng)).collect();
        let report = gradcheck(&inputs, None, &mut rng, |t, v| {
            let y = f(t, v)?;
            if t.shape(y) == [1, 1] {
                Ok(y)
            } else {
                reduce(t, y, point)
            }
        })
        .unwrap();
        worst = worst.max(report.max_rel_error);
        assert!(report.max_rel_error < TOL, "{name} at point {point}: {report:?}");
    }
    println!("{name}: max relative error {worst:.2e}");
}

#[test]
fn matmul() {
    check("matmul", &[[3, 4], [4, 2]], |t, v| t.matmul(v[0], v[1]));
}

#[test]
fn add_same_shape_and_broadcast() {
    check("add", &[[3, 4], [3, 4]], |t, v| t.add(v[0], v[1]));
    check("add broadcast", &[[3, 4], [1, 4]], |t, v| t.add(v[0], v[1]));
}

#[test]
fn scale_and_transpose() {
    check("scale", &[[2, 3]], |t, v| Ok(t.scale(v[0], -0.7)));
    check("transpose", &[[2, 3]], |t, v| Ok(t.transpose(v[0])));
}

#[test]
fn concat_both_axes() {
    check("concat rows", &[[2, 3], [1, 3]], |t, v| t.concat(v, Axis::Rows));
    check("concat cols", &[[2, 3], [2, 2]], |t, v| t.concat(v, Axis::Cols));
}

#[test]
fn slice_both_axes() {
    check("slice rows", &[[4, 3]], |t, v| t.slice(v[0], Axis::Rows, 1, 3));
    check("slice cols", &[[4, 3]], |t, v| t.slice(v[0], Axis::Cols, 2, 3));
}

#[test]
fn gather_rows_with_repeats() {
    check("gather_rows", &[[4, 3]], |t, v| t.gather_rows(v[0], &[2, 0, 2, 3, 2]));
}

#[test]
fn softmax_rows() {
    check("softmax_rows", &[[3, 5]], |t, v| Ok(t.softmax_rows(v[0])));
}

#[test]
fn layernorm_rows() {
    check("layernorm_rows", &[[3, 6], [1, 6], [1, 6]], |t, v| {
        t.layernorm_rows(v[0], v[1], v[2])
    });
}

#[test]
fn gelu() {
    check("gelu", &[[4, 4]], |t, v| Ok(t.gelu(v[0])));
}

#[test]
fn dropout_with_fixed_mask() {
    check("dropout", &[[4, 4]], |t, v| {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        t.dropout(v[0], 0.3, true, &mut rng)
    });
}

#[test]
fn dropout_off_is_identity_with_identity_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x_value = random(3, 3, &mut rng);
    let mut t = Tape::new();
    let x = t.leaf(x_value.clone());
    let y = t.dropout(x, 0.0, true, &mut rng).unwrap();
    assert_eq!(t.value(y), &x_value);
    let loss = t.mse(y, &Array::zeros(3, 3), None).unwrap();
    let g = t.backward(loss).unwrap();
    let want = x_value.map(|v| 2.0 / 9.0 * v);
    assert_eq!(g.get(x).unwrap(), &want);
}

#[test]
fn mse_plain_and_masked() {
    check("mse", &[[3, 4]], |t, v| {
        let target = Array::from_fn(3, 4, |r, c| (r as f64 - c as f64) * 0.3);
        t.mse(v[0], &target, None)
    });
    check("mse masked", &[[3, 4]], |t, v| {
        let target = Array::from_fn(3, 4, |r, c| (r as f64 + c as f64) * 0.2);
        t.mse(v[0], &target, Some(&[true, false, true]))
    });
}

#[test]
fn fan_out_sums_both_branches() {
    // y = softmax(x) + gelu(x) against the manual sum of the branch grads
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x_value = random(2, 3, &mut rng);
    let target = random(2, 3, &mut rng);

    let mut t = Tape::new();
    let x = t.leaf(x_value.clone());
    let a = t.softmax_rows(x);
    let b = t.gelu(x);
    let y = t.add(a, b).unwrap();
    let loss = t.mse(y, &target, None).unwrap();
    let joint = t.backward(loss).unwrap().get(x).unwrap().clone();

    // upstream gradient of the sum is shared by both branches
    let upstream: Vec<f64> = t
        .value(y)
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, q)| 2.0 * (p - q) / 6.0)
        .collect();
    let branch = |which: usize| {
        let mut t = Tape::new();
        let x = t.leaf(x_value.clone());
        let y = if which == 0 { t.softmax_rows(x) } else { t.gelu(x) };
        // loss whose gradient wrt y equals `upstream`: mse(y, y0 - upstream*n/2)
        let shifted = Array::from_vec(
            2,
            3,
            t.value(y)
                .data()
                .iter()
                .zip(&upstream)
                .map(|(v, u)| v - u * 3.0)
                .collect(),
        )
        .unwrap();
        let loss = t.mse(y, &shifted, None).unwrap();
        t.backward(loss).unwrap().get(x).unwrap().clone()
    };
    let (ga, gb) = (branch(0), branch(1));
    for ((j, a), b) in joint.data().iter().zip(ga.data()).zip(gb.data()) {
        assert!((j - (a + b)).abs() < 1e-14);
    }
}

fn tiny_model(confound: bool, seed: u64) -> SiTModel<f64> {
    let cfg = SiTConfig {
        variant: "gradcheck".into(),
        layers: 1,
        heads: 1,
        hidden: 8,
        mlp_size: 32,
        patch_dim: 6,
        seq_len: 4,
        dropout: 0.0,
        confound,
    };
    let mut model = SiTModel::<f64>::new(cfg, seed).unwrap();
    // larger weights than the init scale so that every path carries signal
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    let ids: Vec<_> = model.params.ids().collect();
    for id in ids {
        let [r, c] = model.params.value(id).shape();
        let base = model.params.value(id).clone();
        *model.params.value_mut(id) = Array::from_fn(r, c, |i, j| base.get(i, j) + rng.gen_range(-0.4..0.4));
    }
    model
}

/// Checks the gradient of every parameter tensor of a composed loss by
/// perturbing the model tensor and re-running the full forward pass.
fn check_model<F>(label: &str, model: &SiTModel<f64>, loss: F)
where
    F: Fn(&mut Session<f64>) -> Result<Var>,
{
    let mut s = Session::new(model, false, 0);
    let l = loss(&mut s).unwrap();
    let grads = s.backward(l).unwrap();
    let h = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for (id, p) in model.params.iter() {
        let mut worst: f64 = 0.0;
        for _ in 0..POINTS {
            let j = rng.gen_range(0..p.value.len());
            let eval = |delta: f64| {
                let mut m = model.clone();
                m.params.value_mut(id).data_mut()[j] += delta;
                let mut s = Session::new(&m, false, 0);
                let l = loss(&mut s).unwrap();
                s.value(l).data()[0]
            };
            let numeric = (eval(h) - eval(-h)) / (2.0 * h);
            let analytic = grads.get(id).map_or(0.0, |g| g.data()[j]);
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-5);
            worst = worst.max(rel);
        }
        assert!(worst < TOL, "{label}: {} relative error {worst:.2e}", p.name);
    }
}

#[test]
fn full_regression_loss() {
    let model = tiny_model(false, 1);
    let tokens = random(4, 6, &mut ChaCha8Rng::seed_from_u64(5));
    check_model("regression", &model, |s| {
        let y = s.forward_regress(&tokens, &[])?;
        s.tape.mse(y, &Array::scalar(0.7), None)
    });
}

#[test]
fn full_regression_loss_with_confound_token() {
    let model = tiny_model(true, 2);
    let tokens = random(4, 6, &mut ChaCha8Rng::seed_from_u64(6));
    check_model("confound", &model, |s| {
        let z = s.confound_token(0.8)?;
        let y = s.forward_regress(&tokens, &[z])?;
        s.tape.mse(y, &Array::scalar(-0.3), None)
    });
}

#[test]
fn full_reconstruction_loss() {
    let model = tiny_model(false, 3);
    let tokens = random(4, 6, &mut ChaCha8Rng::seed_from_u64(7));
    check_model("reconstruction", &model, |s| {
        let proj = s.project_patches(&tokens)?;
        let mask_token = s.param(s.model().ids().mask_token);
        let pool = s.tape.concat(&[proj, mask_token], Axis::Rows)?;
        // position 1 masked, position 2 replaced by position 0, 3 kept
        let corrupted = s.tape.gather_rows(pool, &[0, 4, 0, 3])?;
        let out = s.forward_mpp(corrupted)?;
        s.tape.mse(out, &tokens, Some(&[false, true, true, true]))
    });
}
