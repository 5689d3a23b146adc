use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Array, Scalar};
use crate::error::{Error, Result};

/// Index of a tensor in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: Array<T>,
    /// Frozen tensors enter the tape as constants and are never updated.
    pub frozen: bool,
}

/// Ordered collection of named parameter tensors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Array<T>) -> ParamId {
        let name = name.into();
        debug_assert!(self.id(&name).is_none(), "duplicate parameter {name}");
        self.params.push(Param {
            name,
            value,
            frozen: false,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Array<T> {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Array<T> {
        &mut self.params[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn set_frozen(&mut self, id: ParamId, frozen: bool) {
        self.params[id.0].frozen = frozen;
    }

    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Replaces the value of `name`, checking the shape.
    pub fn assign(&mut self, name: &str, value: Array<T>) -> Result<()> {
        let id = self
            .id(name)
            .ok_or_else(|| Error::Data(format!("no parameter named {name}")))?;
        let slot = &mut self.params[id.0].value;
        if slot.shape() != value.shape() {
            return Err(Error::Shape {
                op: "assign parameter",
                left: slot.shape(),
                right: value.shape(),
            });
        }
        *slot = value;
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    frozen: p.frozen,
                })
                .collect(),
        }
    }
}

/// Normal(0, std) truncated to two standard deviations.
pub fn trunc_normal<T: Scalar, R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    std: f64,
    rng: &mut R,
) -> Array<T> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    Array::from_fn(rows, cols, |_, _| loop {
        let z: f64 = normal.sample(rng);
        if z.abs() <= 2.0 {
            break T::of(z * std);
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn trunc_normal_stays_in_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a: Array<f64> = trunc_normal(100, 100, 0.02, &mut rng);
        assert!(a.data().iter().all(|x| x.abs() <= 0.04));
        let mean = a.data().iter().sum::<f64>() / a.len() as f64;
        assert!(mean.abs() < 1e-3);
    }

    #[test]
    fn assign_checks_shape() {
        let mut store = ParamStore::<f32>::new();
        store.add("w", Array::zeros(2, 2));
        assert!(store.assign("w", Array::zeros(2, 3)).is_err());
        assert!(store.assign("v", Array::zeros(2, 2)).is_err());
        store.assign("w", Array::filled(2, 2, 1.0)).unwrap();
        assert_eq!(store.value(store.id("w").unwrap()).data(), &[1.0; 4]);
    }
}
