use super::patch::PatchTable;
use crate::autodiff::Array;
use crate::error::{Error, Result};

/// Multi-channel per-vertex data, stored row-major `[vertex][channel]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceSignal {
    channel_names: Vec<String>,
    values: Vec<f64>,
}

impl SurfaceSignal {
    pub fn new(channel_names: Vec<String>, values: Vec<f64>) -> Result<Self> {
        let c = channel_names.len();
        if c == 0 {
            return Err(Error::Data("signal needs at least one channel".into()));
        }
        if values.len() % c != 0 {
            return Err(Error::Data(format!(
                "{} values do not split into {c} channels",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "non-finite value at vertex {} channel {}",
                i / c,
                i % c
            )));
        }
        Ok(SurfaceSignal {
            channel_names,
            values,
        })
    }

    pub fn channels(&self) -> usize {
        self.channel_names.len()
    }

    pub fn vertex_count(&self) -> usize {
        self.values.len() / self.channels()
    }

    pub fn channel_names(&self) -> &[String] {
        &self.channel_names
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn vertex(&self, v: usize) -> &[f64] {
        let c = self.channels();
        &self.values[v * c..(v + 1) * c]
    }

    /// Reorders vertices: output vertex `i` takes input vertex `perm[i]`.
    pub fn permuted(&self, perm: &[u32]) -> Result<SurfaceSignal> {
        if perm.len() != self.vertex_count() {
            return Err(Error::Data(format!(
                "permutation of length {} for {} vertices",
                perm.len(),
                self.vertex_count()
            )));
        }
        let mut values = Vec::with_capacity(self.values.len());
        for &p in perm {
            values.extend_from_slice(self.vertex(p as usize));
        }
        Ok(SurfaceSignal {
            channel_names: self.channel_names.clone(),
            values,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Hemisphere {
    Left,
    Right,
}

impl Hemisphere {
    pub fn tag(self) -> &'static str {
        match self {
            Hemisphere::Left => "L",
            Hemisphere::Right => "R",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "L" | "l" | "left" => Ok(Hemisphere::Left),
            "R" | "r" | "right" => Ok(Hemisphere::Right),
            other => Err(Error::Data(format!("unknown hemisphere {other:?}"))),
        }
    }
}

/// A signal cut into flattened patch tokens `[N x (V*C)]`.
///
/// Each token holds the `V` patch values of channel 0, then channel 1, and so
/// on.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSequence {
    pub tokens: Array<f32>,
    pub vertices_per_patch: usize,
    pub channels: usize,
    pub subject: String,
    pub hemisphere: Hemisphere,
}

impl PatchSequence {
    pub fn patch_count(&self) -> usize {
        self.tokens.rows()
    }

    pub fn token_len(&self) -> usize {
        self.tokens.cols()
    }
}

/// Gathers a fine-mesh signal into patch tokens.
pub fn extract_patches(signal: &SurfaceSignal, table: &PatchTable) -> Result<Array<f32>> {
    if signal.vertex_count() != table.mesh_vertex_count() {
        return Err(Error::Data(format!(
            "signal has {} vertices, patch table expects {}",
            signal.vertex_count(),
            table.mesh_vertex_count()
        )));
    }
    let (c, v) = (signal.channels(), table.vertices_per_patch());
    let mut data = Vec::with_capacity(table.patch_count() * v * c);
    for patch in table.patches() {
        for ch in 0..c {
            data.extend(patch.iter().map(|&i| signal.values()[i as usize * c + ch] as f32));
        }
    }
    Array::from_vec(table.patch_count(), v * c, data)
}

/// Inverse of [`extract_patches`]: scatters tokens back to vertices,
/// averaging the copies of boundary vertices.
pub fn scatter_patches(
    tokens: &Array<f32>,
    table: &PatchTable,
    channel_names: Vec<String>,
) -> Result<SurfaceSignal> {
    let c = channel_names.len();
    let v = table.vertices_per_patch();
    if tokens.rows() != table.patch_count() || tokens.cols() != v * c {
        return Err(Error::Data(format!(
            "tokens {}x{} do not fit {} patches of {v} vertices x {c} channels",
            tokens.rows(),
            tokens.cols(),
            table.patch_count()
        )));
    }
    let mut values = vec![0.0f64; table.mesh_vertex_count() * c];
    for (p, patch) in table.patches().enumerate() {
        let row = tokens.row(p);
        for ch in 0..c {
            for (k, &i) in patch.iter().enumerate() {
                values[i as usize * c + ch] += row[ch * v + k] as f64;
            }
        }
    }
    for (i, m) in table.multiplicity().iter().enumerate() {
        for x in &mut values[i * c..(i + 1) * c] {
            *x /= *m as f64;
        }
    }
    SurfaceSignal::new(channel_names, values)
}
