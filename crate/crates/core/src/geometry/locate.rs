//! Point location and barycentric resampling on icospheres.

use super::icosphere::{cross, dot, sub, Icosphere, Vec3};
use super::signal::SurfaceSignal;
use crate::error::{Error, Result};

/// Signed distances below this are still counted as inside a face.
const INSIDE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Location {
    pub face: usize,
    pub barycentric: [f64; 3],
}

/// Smallest signed distance of `p` to the three great-circle planes bounding
/// the spherical triangle. Non-negative means inside.
fn inside_margin(p: &Vec3, tri: &[Vec3; 3]) -> f64 {
    let mut margin = f64::INFINITY;
    for i in 0..3 {
        let n = cross(&tri[i], &tri[(i + 1) % 3]);
        let len = dot(&n, &n).sqrt();
        margin = margin.min(dot(&n, p) / len);
    }
    margin
}

fn corners(mesh: &Icosphere, face: &[u32; 3]) -> [Vec3; 3] {
    face.map(|i| mesh.vertices()[i as usize])
}

/// Barycentric coordinates of `p` within the planar triangle, after central
/// (gnomonic) projection of `p` onto the triangle's plane.
pub fn gnomonic_barycentric(p: &Vec3, tri: &[Vec3; 3]) -> Option<[f64; 3]> {
    let [a, b, c] = tri;
    let n = cross(&sub(b, a), &sub(c, a));
    let nn = dot(&n, &n);
    let denom = dot(&n, p);
    if nn <= f64::MIN_POSITIVE || denom <= 0.0 {
        return None;
    }
    let t = dot(&n, a) / denom;
    let q = [p[0] * t, p[1] * t, p[2] * t];
    let mut w = [
        dot(&cross(&sub(b, &q), &sub(c, &q)), &n) / nn,
        dot(&cross(&sub(c, &q), &sub(a, &q)), &n) / nn,
        dot(&cross(&sub(a, &q), &sub(b, &q)), &n) / nn,
    ];
    for x in w.iter_mut() {
        *x = x.max(0.0);
    }
    let s: f64 = w.iter().sum();
    Some(w.map(|x| x / s))
}

impl Icosphere {
    /// Finds the leaf face containing `p` by descending the subdivision
    /// hierarchy. Ties on shared edges go to the lowest face index.
    pub fn locate(&self, p: &Vec3) -> Location {
        let mut face = best_child(self, 0, 0..20, p);
        for level in 1..=self.order() {
            let first = face * 4;
            face = best_child(self, level, first..first + 4, p);
        }
        let tri = corners(self, &self.faces()[face]);
        let barycentric = gnomonic_barycentric(p, &tri).unwrap_or([1.0 / 3.0; 3]);
        Location { face, barycentric }
    }

    /// Linear scan over all leaf faces; the reference for [`Icosphere::locate`].
    pub fn locate_brute_force(&self, p: &Vec3) -> Location {
        let margins: Vec<f64> = self
            .faces()
            .iter()
            .map(|f| inside_margin(p, &corners(self, f)))
            .collect();
        let face = margins
            .iter()
            .position(|&m| m >= -INSIDE_TOL)
            .unwrap_or_else(|| argmax(&margins));
        let tri = corners(self, &self.faces()[face]);
        let barycentric = gnomonic_barycentric(p, &tri).unwrap_or([1.0 / 3.0; 3]);
        Location { face, barycentric }
    }
}

fn best_child(mesh: &Icosphere, level: u32, range: std::ops::Range<usize>, p: &Vec3) -> usize {
    let faces = mesh.level_faces(level);
    let start = range.start;
    let margins: Vec<f64> = range
        .map(|f| inside_margin(p, &corners(mesh, &faces[f])))
        .collect();
    start
        + margins
            .iter()
            .position(|&m| m >= -INSIDE_TOL)
            .unwrap_or_else(|| argmax(&margins))
}

fn argmax(xs: &[f64]) -> usize {
    xs.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| {
            if v > bv {
                (i, v)
            } else {
                (bi, bv)
            }
        })
        .0
}

/// Precomputed interpolation from one sphere mesh onto another's vertices.
#[derive(Debug, Clone)]
pub struct Resampler {
    source_vertices: usize,
    stencils: Vec<([u32; 3], [f64; 3])>,
}

impl Resampler {
    pub fn new(source: &Icosphere, target: &Icosphere) -> Result<Self> {
        let mut stencils = Vec::with_capacity(target.vertex_count());
        for p in target.vertices() {
            let loc = source.locate(p);
            let face = source.faces()[loc.face];
            let tri = corners(source, &face);
            let n = cross(&sub(&tri[1], &tri[0]), &sub(&tri[2], &tri[0]));
            if dot(&n, &n).sqrt() < 1e-15 {
                return Err(Error::Data(format!(
                    "source face {} is degenerate (zero area)",
                    loc.face
                )));
            }
            stencils.push((face, loc.barycentric));
        }
        Ok(Resampler {
            source_vertices: source.vertex_count(),
            stencils,
        })
    }

    pub fn apply(&self, signal: &SurfaceSignal) -> Result<SurfaceSignal> {
        if signal.vertex_count() != self.source_vertices {
            return Err(Error::Data(format!(
                "signal has {} vertices but the source mesh has {}",
                signal.vertex_count(),
                self.source_vertices
            )));
        }
        let c = signal.channels();
        let mut values = vec![0.0; self.stencils.len() * c];
        for (row, (face, w)) in values.chunks_exact_mut(c).zip(&self.stencils) {
            for (&v, &wk) in face.iter().zip(w) {
                for (out, &x) in row.iter_mut().zip(signal.vertex(v as usize)) {
                    *out += wk * x;
                }
            }
        }
        SurfaceSignal::new(signal.channel_names().to_vec(), values)
    }
}

/// Resamples `signal` (defined on `source`) onto the vertices of `target`
/// by barycentric interpolation within the containing source face.
pub fn resample_barycentric(
    signal: &SurfaceSignal,
    source: &Icosphere,
    target: &Icosphere,
) -> Result<SurfaceSignal> {
    Resampler::new(source, target)?.apply(signal)
}

/// Mirrors a signal living on `mesh` across the sagittal plane and brings it
/// back onto the same vertex set.
pub fn mirror_signal(signal: &SurfaceSignal, mesh: &Icosphere) -> Result<SurfaceSignal> {
    resample_barycentric(signal, &mesh.mirrored(), mesh)
}

/// For meshes symmetric under x-negation (every canonical icosphere), the
/// index of each vertex's mirror image.
pub fn mirror_permutation(mesh: &Icosphere) -> Result<Vec<u32>> {
    let mut perm = Vec::with_capacity(mesh.vertex_count());
    for p in mesh.vertices() {
        let q = [-p[0], p[1], p[2]];
        let loc = mesh.locate(&q);
        let face = mesh.faces()[loc.face];
        let (k, w) = loc
            .barycentric
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (k, &w)| if w > acc.1 { (k, w) } else { acc });
        if w < 1.0 - 1e-9 {
            return Err(Error::Data("mesh is not mirror symmetric".into()));
        }
        perm.push(face[k]);
    }
    Ok(perm)
}
