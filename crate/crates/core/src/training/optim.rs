use super::config::{OptimizerConfig, OptimizerKind, Scheduler};
use crate::autodiff::{Array, Scalar};
use crate::error::{Error, Result};
use crate::model::{ParamGrads, ParamStore};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Learning rate for `step` (0-based) of `total` optimizer steps, with a
/// linear warm-up over the first `warmup` steps starting from 0.
pub fn learning_rate(peak: f64, scheduler: Scheduler, step: usize, warmup: usize, total: usize) -> f64 {
    if step < warmup {
        return peak * step as f64 / warmup as f64;
    }
    match scheduler {
        Scheduler::Constant => peak,
        Scheduler::Cosine => {
            let span = total.saturating_sub(warmup).max(1) as f64;
            let t = ((step - warmup) as f64 / span).min(1.0);
            0.5 * peak * (1.0 + (std::f64::consts::PI * t).cos())
        }
    }
}

/// Step-level schedule derived from an epoch-level config.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub peak: f64,
    pub scheduler: Scheduler,
    pub warmup_steps: usize,
    pub total_steps: usize,
}

impl Schedule {
    pub fn new(cfg: &OptimizerConfig, steps_per_epoch: usize) -> Self {
        Schedule {
            peak: cfg.lr,
            scheduler: cfg.scheduler,
            warmup_steps: cfg.warmup_epochs * steps_per_epoch,
            total_steps: cfg.epochs * steps_per_epoch,
        }
    }

    pub fn lr(&self, step: usize) -> f64 {
        learning_rate(self.peak, self.scheduler, step, self.warmup_steps, self.total_steps)
    }
}

/// SGD or Adam state over a parameter store.
#[derive(Debug, Clone)]
pub struct Optimizer<T> {
    kind: OptimizerKind,
    moments: Vec<Option<(Array<T>, Array<T>)>>,
    steps: u64,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(kind: OptimizerKind) -> Self {
        Optimizer {
            kind,
            moments: Vec::new(),
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one update with learning rate `lr`. Tensors without a gradient
    /// are untouched. Any non-finite gradient aborts before anything changes.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &ParamGrads<T>, lr: f64) -> Result<()> {
        for id in params.ids() {
            if let Some(g) = grads.get(id) {
                if let Some(bad) = g.data().iter().position(|x| !x.is_finite()) {
                    return Err(Error::NonFinite {
                        tensor: params.name(id).to_owned(),
                        detail: format!("gradient entry {bad} is {:?}", g.data()[bad]),
                    });
                }
            }
        }
        self.steps += 1;
        let lr_t = T::of(lr);
        match self.kind {
            OptimizerKind::Sgd => {
                for id in params.ids().collect::<Vec<_>>() {
                    if let Some(g) = grads.get(id) {
                        for (p, &gi) in params.value_mut(id).data_mut().iter_mut().zip(g.data()) {
                            *p -= lr_t * gi;
                        }
                    }
                }
            }
            OptimizerKind::Adam => {
                self.moments.resize_with(params.len(), || None);
                let t = self.steps as i32;
                let c1 = T::of(1.0 - ADAM_BETA1.powi(t));
                let c2 = T::of(1.0 - ADAM_BETA2.powi(t));
                let (b1, b2, eps) = (T::of(ADAM_BETA1), T::of(ADAM_BETA2), T::of(ADAM_EPS));
                let one = T::of(1.0);
                for id in params.ids().collect::<Vec<_>>() {
                    let Some(g) = grads.get(id) else { continue };
                    let (m, v) = self.moments[id.index()].get_or_insert_with(|| {
                        (Array::zeros(g.rows(), g.cols()), Array::zeros(g.rows(), g.cols()))
                    });
                    let p = params.value_mut(id).data_mut();
                    for (((p, &gi), m), v) in p
                        .iter_mut()
                        .zip(g.data())
                        .zip(m.data_mut())
                        .zip(v.data_mut())
                    {
                        *m = b1 * *m + (one - b1) * gi;
                        *v = b2 * *v + (one - b2) * gi * gi;
                        let m_hat = *m / c1;
                        let v_hat = *v / c2;
                        *p -= lr_t * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}
