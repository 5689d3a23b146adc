use crate::autodiff::{Array, Scalar};
use crate::error::{Error, Result};
use crate::model::SiTModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Batch normalization of the scalar confound. The affine part of the norm
/// is absorbed into the model's `confound` projection.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfoundEncoder {
    pub running_mean: f64,
    pub running_var: f64,
    pub momentum: f64,
    pub eps: f64,
}

impl Default for ConfoundEncoder {
    fn default() -> Self {
        ConfoundEncoder {
            running_mean: 0.0,
            running_var: 1.0,
            momentum: 0.1,
            eps: 1e-5,
        }
    }
}

impl ConfoundEncoder {
    /// Normalizes a batch of confound values. Training mode uses the batch
    /// statistics and updates the running ones; eval mode uses the running
    /// statistics only.
    pub fn normalize(&mut self, values: &[f64], mode: Mode) -> Result<Vec<f64>> {
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Data(format!("confound value {bad} is not finite")));
        }
        let (mean, var) = match mode {
            Mode::Eval => (self.running_mean, self.running_var),
            Mode::Train => {
                let n = values.len();
                if n == 0 {
                    return Ok(Vec::new());
                }
                let mean = values.iter().sum::<f64>() / n as f64;
                let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
                let m = self.momentum;
                self.running_mean = (1.0 - m) * self.running_mean + m * mean;
                if n > 1 {
                    self.running_var = (1.0 - m) * self.running_var + m * ss / (n - 1) as f64;
                }
                (mean, ss / n as f64)
            }
        };
        let scale = 1.0 / (var + self.eps).sqrt();
        Ok(values.iter().map(|v| (v - mean) * scale).collect())
    }

    pub fn to_record(&self) -> Vec<(String, String)> {
        vec![
            ("confound_mean".into(), self.running_mean.to_string()),
            ("confound_var".into(), self.running_var.to_string()),
        ]
    }

    pub fn from_record(record: &[(String, String)]) -> Result<Self> {
        let get = |k: &str| -> Result<f64> {
            record
                .iter()
                .find(|(key, _)| key == k)
                .and_then(|(_, v)| v.parse().ok())
                .ok_or_else(|| Error::Data(format!("checkpoint lacks a valid `{k}`")))
        };
        Ok(ConfoundEncoder {
            running_mean: get("confound_mean")?,
            running_var: get("confound_var")?,
            ..Default::default()
        })
    }
}

/// The `1 x D` confound token for one value: normalization followed by the
/// model's learnable projection.
pub fn encode_confound<T: Scalar>(
    model: &SiTModel<T>,
    encoder: &mut ConfoundEncoder,
    scan_age: f64,
    mode: Mode,
) -> Result<Array<T>> {
    let z = encoder.normalize(&[scan_age], mode)?[0];
    let mut session = crate::model::Session::new(model, false, 0);
    let token = session.confound_token(z)?;
    Ok(session.value(token).clone())
}
