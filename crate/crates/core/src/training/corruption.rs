use rand::Rng;

use crate::autodiff::{Array, Axis, Scalar, Tape, Var};
use crate::error::{Error, Result};

/// What happens to a corrupted position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    /// Replaced by the learnable mask token.
    MaskToken,
    /// Replaced by the embedding of another position.
    Replace(usize),
    /// Left as it was, but still scored.
    Keep,
}

/// Masked-patch-prediction corruption settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MppCorruption {
    pub mask_prob: f64,
    /// Probabilities of mask token, random replacement and keep among the
    /// corrupted positions.
    pub actions: [f64; 3],
}

impl Default for MppCorruption {
    fn default() -> Self {
        MppCorruption {
            mask_prob: 0.5,
            actions: [0.8, 0.1, 0.1],
        }
    }
}

/// Per-position corruption decisions for one sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorruptionPlan {
    pub actions: Vec<Option<Action>>,
}

impl CorruptionPlan {
    /// `true` at every corrupted position, including kept ones.
    pub fn mask(&self) -> Vec<bool> {
        self.actions.iter().map(Option::is_some).collect()
    }

    pub fn corrupted(&self) -> usize {
        self.actions.iter().filter(|a| a.is_some()).count()
    }

    /// Row indices into `[embedded; mask_token]`, where index `N` is the mask
    /// token.
    pub fn gather_indices(&self) -> Vec<usize> {
        let n = self.actions.len();
        self.actions
            .iter()
            .enumerate()
            .map(|(i, a)| match a {
                None | Some(Action::Keep) => i,
                Some(Action::MaskToken) => n,
                Some(Action::Replace(j)) => *j,
            })
            .collect()
    }
}

impl MppCorruption {
    pub fn with_mask_prob(mask_prob: f64) -> Self {
        MppCorruption {
            mask_prob,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.actions.iter().sum();
        if !(0.0..=1.0).contains(&self.mask_prob)
            || self.actions.iter().any(|p| !(0.0..=1.0).contains(p))
            || (sum - 1.0).abs() > 1e-12
        {
            return Err(Error::Config(format!(
                "corruption probabilities invalid: mask_prob {}, actions {:?}",
                self.mask_prob, self.actions
            )));
        }
        Ok(())
    }

    /// Draws the decisions for a sequence of `n` positions. Replacement
    /// sources are uniform over the other positions.
    pub fn plan<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> CorruptionPlan {
        let actions = (0..n)
            .map(|i| {
                if rng.gen::<f64>() >= self.mask_prob {
                    return None;
                }
                let u: f64 = rng.gen();
                Some(if u < self.actions[0] {
                    Action::MaskToken
                } else if u < self.actions[0] + self.actions[1] && n > 1 {
                    let j = rng.gen_range(0..n - 1);
                    Action::Replace(if j >= i { j + 1 } else { j })
                } else {
                    Action::Keep
                })
            })
            .collect();
        CorruptionPlan { actions }
    }
}

/// Corrupts an `N x D` embedding. Returns the corrupted rows and the mask of
/// corrupted positions.
pub fn corrupt_sequence<T: Scalar, R: Rng + ?Sized>(
    embedded: &Array<T>,
    mask_token: &[T],
    corruption: &MppCorruption,
    rng: &mut R,
) -> Result<(Array<T>, Vec<bool>)> {
    if mask_token.len() != embedded.cols() {
        return Err(Error::Shape {
            op: "corrupt_sequence",
            left: embedded.shape(),
            right: [1, mask_token.len()],
        });
    }
    let plan = corruption.plan(embedded.rows(), rng);
    let n = embedded.rows();
    let mut out = embedded.clone();
    for (i, src) in plan.gather_indices().into_iter().enumerate() {
        let row: &[T] = if src == n { mask_token } else { embedded.row(src) };
        out.row_mut(i).copy_from_slice(row);
    }
    Ok((out, plan.mask()))
}

/// Tape version of the corruption: gathers rows of `[embedded; mask_token]`
/// so gradients reach both the projection and the mask token.
pub fn apply_plan<T: Scalar>(
    tape: &mut Tape<T>,
    embedded: Var,
    mask_token: Var,
    plan: &CorruptionPlan,
) -> Result<Var> {
    let stacked = tape.concat(&[embedded, mask_token], Axis::Rows)?;
    tape.gather_rows(stacked, &plan.gather_indices())
}
