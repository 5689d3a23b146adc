use std::ops::Range;

use super::rollout::rollout_range;
use crate::data::Example;
use crate::error::{Error, Result};
use crate::geometry::{PatchTable, SurfaceSignal};
use crate::model::{predict_with_attention, SiTModel};

/// Per-head attention painted on the icosphere vertices.
#[derive(Debug, Clone, PartialEq)]
pub struct VertexAttentionMap {
    /// `[head][vertex]`, non-negative.
    pub heads: Vec<Vec<f64>>,
    pub layers: Range<usize>,
    pub subject: String,
    pub task: String,
}

impl VertexAttentionMap {
    pub fn vertex_count(&self) -> usize {
        self.heads.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vertex_count();
        for (h, map) in self.heads.iter().enumerate() {
            if map.len() != n {
                return Err(Error::Data(format!("head {h} has {} vertices, head 0 has {n}", map.len())));
            }
            if let Some(v) = map.iter().position(|x| !x.is_finite() || *x < 0.0) {
                return Err(Error::Data(format!("head {h} vertex {v} holds {}", map[v])));
            }
        }
        Ok(())
    }

    /// One channel per head, named `head<h>`.
    pub fn to_signal(&self) -> Result<SurfaceSignal> {
        let names = (0..self.heads.len()).map(|h| format!("head{h}")).collect();
        let (h, n) = (self.heads.len(), self.vertex_count());
        let mut values = vec![0.0; h * n];
        for (k, map) in self.heads.iter().enumerate() {
            for (v, x) in map.iter().enumerate() {
                values[v * h + k] = *x;
            }
        }
        SurfaceSignal::new(names, values)
    }

    /// Same map with each head thresholded at quantile `q`.
    pub fn thresholded(&self, q: f64) -> Result<Self> {
        Ok(VertexAttentionMap {
            heads: self.heads.iter().map(|m| threshold_map(m, q)).collect::<Result<_>>()?,
            ..self.clone()
        })
    }
}

/// Spreads patch weights onto vertices. Each vertex takes the mean weight of
/// the patches that contain it.
pub fn patches_to_vertices(weights: &[f64], table: &PatchTable) -> Result<Vec<f64>> {
    if weights.len() != table.patch_count() {
        return Err(Error::Data(format!(
            "{} patch weights for a table of {} patches",
            weights.len(),
            table.patch_count()
        )));
    }
    // Running means keep a constant input exactly constant.
    let n = table.mesh_vertex_count();
    let (mut mean, mut seen) = (vec![0.0; n], vec![0u32; n]);
    for (w, patch) in weights.iter().zip(table.patches()) {
        for &v in patch {
            let v = v as usize;
            seen[v] += 1;
            mean[v] += (w - mean[v]) / seen[v] as f64;
        }
    }
    Ok(mean)
}

/// Zeroes every entry below the `q`-quantile: the largest `ceil((1 - q) n)`
/// entries (and ties with the smallest of them) survive.
pub fn threshold_map(map: &[f64], q: f64) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&q) {
        return Err(Error::Bounds {
            what: "threshold quantile",
            detail: format!("{q} not in [0, 1)"),
        });
    }
    if map.is_empty() {
        return Ok(Vec::new());
    }
    let mut sorted = map.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let keep = (((1.0 - q) * n as f64) - 1e-9).ceil().clamp(1.0, n as f64) as usize;
    let cut = sorted[n - keep];
    Ok(map.iter().map(|&x| if x >= cut { x } else { 0.0 }).collect())
}

/// Element-wise mean per head.
pub fn average_maps(maps: &[VertexAttentionMap]) -> Result<VertexAttentionMap> {
    let first = maps.first().ok_or_else(|| Error::Data("no maps to average".into()))?;
    let (h, n) = (first.heads.len(), first.vertex_count());
    let mut heads = vec![vec![0.0; n]; h];
    for m in maps {
        if m.heads.len() != h || m.vertex_count() != n {
            return Err(Error::Data(format!(
                "map of {} heads x {} vertices does not match {h} x {n}",
                m.heads.len(),
                m.vertex_count()
            )));
        }
        for (acc, src) in heads.iter_mut().zip(&m.heads) {
            for (a, s) in acc.iter_mut().zip(src) {
                *a += s;
            }
        }
    }
    let k = maps.len() as f64;
    heads.iter_mut().flatten().for_each(|x| *x /= k);
    let same_subject = maps.iter().all(|m| m.subject == first.subject);
    Ok(VertexAttentionMap {
        heads,
        layers: first.layers.clone(),
        subject: if same_subject { first.subject.clone() } else { format!("mean-of-{}", maps.len()) },
        task: first.task.clone(),
    })
}

/// Rolls out every head of one example's forward pass and paints the patch
/// weights on the vertices.
pub fn vertex_attention(
    model: &SiTModel<f32>,
    example: &Example,
    confound: Option<f64>,
    table: &PatchTable,
    task: &str,
) -> Result<VertexAttentionMap> {
    let (_, record) = predict_with_attention(model, &example.sequence.tokens, confound)?;
    let patches = table.patch_count();
    let layers = 0..record.layers();
    let heads = (0..record.heads())
        .map(|h| patches_to_vertices(&rollout_range(&record, h, patches, layers.clone())?, table))
        .collect::<Result<Vec<_>>>()?;
    let map = VertexAttentionMap {
        heads,
        layers,
        subject: example.id(),
        task: task.to_owned(),
    };
    map.validate()?;
    Ok(map)
}
