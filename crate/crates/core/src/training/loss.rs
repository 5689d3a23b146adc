use crate::autodiff::{Array, Scalar, Tape, Var};
use crate::error::{Error, Result};

/// Mean squared reconstruction error over the masked rows and all their
/// columns.
pub fn mpp_loss<T: Scalar>(
    tape: &mut Tape<T>,
    reconstruction: Var,
    target: &Array<T>,
    mask: &[bool],
) -> Result<Var> {
    if !mask.iter().any(|&m| m) {
        return Err(Error::Data("mpp loss needs at least one masked position".into()));
    }
    tape.mse(reconstruction, target, Some(mask))
}

/// Value-only version of [`mpp_loss`].
pub fn mpp_loss_value<T: Scalar>(reconstruction: &Array<T>, target: &Array<T>, mask: &[bool]) -> Result<f64> {
    let mut tape = Tape::new();
    let r = tape.constant(reconstruction.clone());
    let loss = mpp_loss(&mut tape, r, target, mask)?;
    Ok(tape.value(loss).data()[0].to_f64().unwrap_or(f64::NAN))
}

fn check_pair(preds: &[f64], targets: &[f64]) -> Result<()> {
    if preds.is_empty() || preds.len() != targets.len() {
        return Err(Error::Data(format!(
            "need equal non-empty prediction and target lists, got {} and {}",
            preds.len(),
            targets.len()
        )));
    }
    Ok(())
}

/// Mean squared error.
pub fn regression_loss(preds: &[f64], targets: &[f64]) -> Result<f64> {
    check_pair(preds, targets)?;
    let sum: f64 = preds.iter().zip(targets).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(sum / preds.len() as f64)
}

/// Mean absolute error.
pub fn mae(preds: &[f64], targets: &[f64]) -> Result<f64> {
    check_pair(preds, targets)?;
    let sum: f64 = preds.iter().zip(targets).map(|(p, t)| (p - t).abs()).sum();
    Ok(sum / preds.len() as f64)
}
