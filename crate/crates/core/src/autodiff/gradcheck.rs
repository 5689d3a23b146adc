use rand::Rng;

use super::array::Array;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Central-difference step.
pub const GRADCHECK_STEP: f64 = 1e-5;

/// Gradients smaller than this are compared in absolute rather than relative
/// terms, so that exact zeros do not blow up the ratio.
pub const GRADCHECK_FLOOR: f64 = 1e-5;

/// Worst disagreement between analytic and numeric gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// `(input, flat index)` of the worst coordinate.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub probes: usize,
}

/// Compares the tape gradient of the scalar `loss` against central finite
/// differences.
///
/// `loss` receives the inputs as leaves and must be a pure function of them.
/// With `per_input = Some(k)`, only `k` randomly chosen coordinates of each
/// input are probed; otherwise every coordinate is.
pub fn gradcheck<R, F>(
    inputs: &[Array<f64>],
    per_input: Option<usize>,
    rng: &mut R,
    loss: F,
) -> Result<GradCheck>
where
    R: Rng + ?Sized,
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Array<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|a| tape.leaf(a.clone())).collect();
        let out = loss(&mut tape, &vars)?;
        Ok(tape.value(out).data()[0])
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|a| tape.leaf(a.clone())).collect();
    let out = loss(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        probes: 0,
    };
    let mut probe = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        let coords: Vec<usize> = match per_input {
            Some(k) if k < input.len() => (0..k).map(|_| rng.gen_range(0..input.len())).collect(),
            _ => (0..input.len()).collect(),
        };
        for j in coords {
            let x = input.data()[j];
            probe[i].data_mut()[j] = x + GRADCHECK_STEP;
            let up = eval(&probe)?;
            probe[i].data_mut()[j] = x - GRADCHECK_STEP;
            let down = eval(&probe)?;
            probe[i].data_mut()[j] = x;

            let numeric = (up - down) / (2.0 * GRADCHECK_STEP);
            let analytic = grads.get(vars[i]).map_or(0.0, |g| g.data()[j]);
            if !numeric.is_finite() || !analytic.is_finite() {
                return Err(Error::NonFinite {
                    tensor: format!("input {i}"),
                    detail: format!("gradient at index {j}"),
                });
            }
            let rel = (analytic - numeric).abs()
                / analytic.abs().max(numeric.abs()).max(GRADCHECK_FLOOR);
            report.probes += 1;
            if rel >= report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = (i, j);
                report.analytic = analytic;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
