use crate::autodiff::Array;
use crate::error::{Error, Result};

/// Attention matrices captured during one forward pass, `[layer][head]`,
/// each `S x S` over the full sequence including special tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionRecord {
    layers: usize,
    heads: usize,
    maps: Vec<Array<f64>>,
}

impl AttentionRecord {
    pub fn new(layers: usize, heads: usize) -> Self {
        AttentionRecord {
            layers,
            heads,
            maps: Vec::with_capacity(layers * heads),
        }
    }

    /// Builds a complete record from `[layer][head]` matrices.
    pub fn from_maps(maps: Vec<Vec<Array<f64>>>) -> Result<Self> {
        let layers = maps.len();
        let heads = maps.first().map_or(0, Vec::len);
        let mut rec = AttentionRecord::new(layers, heads);
        for layer in maps {
            if layer.len() != heads {
                return Err(Error::Data("layers disagree on head count".into()));
            }
            for a in layer {
                rec.push(a)?;
            }
        }
        Ok(rec)
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    /// Sequence length `S`, or 0 for an empty record.
    pub fn seq_len(&self) -> usize {
        self.maps.first().map_or(0, Array::rows)
    }

    /// Appends the next matrix in `[layer][head]` order.
    pub fn push(&mut self, a: Array<f64>) -> Result<()> {
        if self.is_complete() {
            return Err(Error::State("attention record is already complete".into()));
        }
        let s = self.maps.first().map_or(a.rows(), Array::rows);
        if a.shape() != [s, s] {
            return Err(Error::Shape {
                op: "attention record",
                left: [s, s],
                right: a.shape(),
            });
        }
        self.maps.push(a);
        Ok(())
    }

    pub fn is_complete(&self) -> bool {
        self.maps.len() == self.layers * self.heads
    }

    pub fn get(&self, layer: usize, head: usize) -> Option<&Array<f64>> {
        if head >= self.heads {
            return None;
        }
        self.maps.get(layer * self.heads + head)
    }

    /// Largest deviation of any attention row sum from 1.
    pub fn max_row_sum_error(&self) -> f64 {
        self.maps
            .iter()
            .flat_map(|a| (0..a.rows()).map(move |r| (a.row(r).iter().sum::<f64>() - 1.0).abs()))
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn push_checks_shape_and_capacity() {
        let mut rec = AttentionRecord::new(1, 2);
        rec.push(Array::filled(3, 3, 1.0 / 3.0)).unwrap();
        assert!(rec.push(Array::zeros(2, 2)).is_err());
        rec.push(Array::filled(3, 3, 1.0 / 3.0)).unwrap();
        assert!(rec.is_complete());
        assert!(matches!(rec.push(Array::zeros(3, 3)), Err(Error::State(_))));
        assert!(rec.max_row_sum_error() < 1e-15);
        assert!(rec.get(0, 2).is_none());
    }
}
