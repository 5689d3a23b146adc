//! Recursively subdivided icosahedra on the unit sphere.
//!
//! Vertex ordering is fixed: the twelve icosahedron corners are sorted
//! lexicographically, and every subdivision appends one new vertex per edge of
//! the previous level, in sorted `(min, max)` edge order. Faces are nested:
//! the four children of face `p` at level `k` are faces `4p..4p + 4` at level
//! `k + 1`, laid out as `[a, ab, ca]`, `[ab, b, bc]`, `[ca, bc, c]`,
//! `[ab, bc, ca]`.

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

/// Highest subdivision order accepted by [`build_icosphere`].
pub const MAX_ORDER: u32 = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct Icosphere {
    order: u32,
    vertices: Vec<Vec3>,
    faces: Vec<[u32; 3]>,
    /// Faces of levels `0..order`, coarsest first. The leaf level is `faces`.
    coarse: Vec<Vec<[u32; 3]>>,
}

pub fn vertex_count(order: u32) -> usize {
    10 * 4usize.pow(order) + 2
}

pub fn face_count(order: u32) -> usize {
    20 * 4usize.pow(order)
}

pub fn edge_count(order: u32) -> usize {
    30 * 4usize.pow(order)
}

/// Builds the icosphere of the given order.
pub fn build_icosphere(order: u32) -> Result<Icosphere> {
    if order > MAX_ORDER {
        return Err(Error::Bounds {
            what: "icosphere order",
            detail: format!("{order} > {MAX_ORDER}"),
        });
    }
    let (mut vertices, mut faces) = icosahedron();
    let mut coarse = Vec::with_capacity(order as usize);
    for _ in 0..order {
        let next = subdivide(&mut vertices, &faces);
        coarse.push(std::mem::replace(&mut faces, next));
    }
    Ok(Icosphere {
        order,
        vertices,
        faces,
        coarse,
    })
}

fn icosahedron() -> (Vec<Vec3>, Vec<[u32; 3]>) {
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let mut vertices = Vec::with_capacity(12);
    for &s1 in &[-1.0, 1.0] {
        for &s2 in &[-1.0, 1.0] {
            vertices.push([0.0, s1, s2 * phi]);
            vertices.push([s1, s2 * phi, 0.0]);
            vertices.push([s2 * phi, 0.0, s1]);
        }
    }
    for v in vertices.iter_mut() {
        *v = normalize(*v);
    }
    vertices.sort_by(|a, b| {
        a.iter()
            .zip(b)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });

    // Adjacent corners are the closest pairs; every mutually adjacent
    // triple is a face.
    let min_d2 = (1..12)
        .map(|j| dist2(&vertices[0], &vertices[j]))
        .fold(f64::INFINITY, f64::min);
    let adjacent = |i: usize, j: usize| (dist2(&vertices[i], &vertices[j]) - min_d2).abs() < 1e-9;
    let mut faces = Vec::with_capacity(20);
    for i in 0..12 {
        for j in i + 1..12 {
            if !adjacent(i, j) {
                continue;
            }
            for k in j + 1..12 {
                if adjacent(i, k) && adjacent(j, k) {
                    let tri = if triple(&vertices[i], &vertices[j], &vertices[k]) > 0.0 {
                        [i as u32, j as u32, k as u32]
                    } else {
                        [i as u32, k as u32, j as u32]
                    };
                    faces.push(tri);
                }
            }
        }
    }
    debug_assert_eq!(faces.len(), 20);
    (vertices, faces)
}

fn subdivide(vertices: &mut Vec<Vec3>, faces: &[[u32; 3]]) -> Vec<[u32; 3]> {
    let mut edges: Vec<(u32, u32)> = faces
        .iter()
        .flat_map(|f| [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])])
        .map(|(a, b)| (a.min(b), a.max(b)))
        .collect();
    edges.sort_unstable();
    edges.dedup();

    let base = vertices.len() as u32;
    vertices.reserve(edges.len());
    for &(a, b) in &edges {
        let (pa, pb) = (vertices[a as usize], vertices[b as usize]);
        vertices.push(normalize([pa[0] + pb[0], pa[1] + pb[1], pa[2] + pb[2]]));
    }
    let midpoint = |a: u32, b: u32| -> u32 {
        let key = (a.min(b), a.max(b));
        base + edges.binary_search(&key).expect("edge of a known face") as u32
    };

    let mut out = Vec::with_capacity(faces.len() * 4);
    for &[a, b, c] in faces {
        let (ab, bc, ca) = (midpoint(a, b), midpoint(b, c), midpoint(c, a));
        out.extend_from_slice(&[[a, ab, ca], [ab, b, bc], [ca, bc, c], [ab, bc, ca]]);
    }
    out
}

impl Icosphere {
    /// Reassembles a mesh from raw vertices and nested leaf faces, as read
    /// from disk. Counts are validated and the coarse levels rebuilt.
    pub fn from_parts(order: u32, vertices: Vec<Vec3>, faces: Vec<[u32; 3]>) -> Result<Self> {
        if order > MAX_ORDER {
            return Err(Error::Bounds {
                what: "icosphere order",
                detail: format!("{order} > {MAX_ORDER}"),
            });
        }
        if vertices.len() != vertex_count(order) || faces.len() != face_count(order) {
            return Err(Error::Data(format!(
                "order {order} mesh needs {} vertices and {} faces, got {} and {}",
                vertex_count(order),
                face_count(order),
                vertices.len(),
                faces.len()
            )));
        }
        if let Some(f) = faces
            .iter()
            .position(|f| f.iter().any(|&i| i as usize >= vertices.len()))
        {
            return Err(Error::Data(format!("face {f} references a missing vertex")));
        }
        let coarse = rebuild_levels(&vertices, &faces, order);
        Ok(Icosphere {
            order,
            vertices,
            faces,
            coarse,
        })
    }

    pub fn order(&self) -> u32 {
        self.order
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[u32; 3]] {
        &self.faces
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    /// Faces of subdivision level `level` (`0..=order`).
    pub fn level_faces(&self, level: u32) -> &[[u32; 3]] {
        if level == self.order {
            &self.faces
        } else {
            &self.coarse[level as usize]
        }
    }

    /// Number of distinct undirected edges.
    pub fn edge_count(&self) -> usize {
        let mut edges: Vec<(u32, u32)> = self
            .faces
            .iter()
            .flat_map(|f| [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])])
            .map(|(a, b)| (a.min(b), a.max(b)))
            .collect();
        edges.sort_unstable();
        edges.dedup();
        edges.len()
    }

    /// Sagittal mirror: x is negated and every face is rewound so that it
    /// stays outward facing.
    pub fn mirrored(&self) -> Icosphere {
        let flip = |f: &[u32; 3]| [f[0], f[2], f[1]];
        Icosphere {
            order: self.order,
            vertices: mirror_points(&self.vertices),
            faces: self.faces.iter().map(flip).collect(),
            coarse: self
                .coarse
                .iter()
                .map(|level| level.iter().map(flip).collect())
                .collect(),
        }
    }
}

/// Negates the x coordinate of every point.
pub fn mirror_points(points: &[Vec3]) -> Vec<Vec3> {
    points.iter().map(|p| [-p[0], p[1], p[2]]).collect()
}

/// Recovers coarse levels from nested leaf faces: a parent's corners are the
/// vertices that occur in exactly one of its four children.
fn rebuild_levels(vertices: &[Vec3], faces: &[[u32; 3]], order: u32) -> Vec<Vec<[u32; 3]>> {
    let mut levels = Vec::with_capacity(order as usize);
    let mut current = faces.to_vec();
    for _ in 0..order {
        let parents: Vec<[u32; 3]> = current
            .chunks_exact(4)
            .map(|kids| {
                let mut corners = [0u32; 3];
                for (slot, kid) in kids[..3].iter().enumerate() {
                    corners[slot] = *kid
                        .iter()
                        .find(|&&v| kids.iter().filter(|k| k.contains(&v)).count() == 1)
                        .unwrap_or(&kid[slot]);
                }
                let [a, b, c] = corners.map(|i| vertices[i as usize]);
                if triple(&a, &b, &c) < 0.0 {
                    corners.swap(1, 2);
                }
                corners
            })
            .collect();
        levels.push(parents.clone());
        current = parents;
    }
    levels.reverse();
    levels
}

pub(crate) fn normalize(v: Vec3) -> Vec3 {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

pub(crate) fn dot(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn cross(a: &Vec3, b: &Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn sub(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

/// Scalar triple product `a · (b × c)`.
pub(crate) fn triple(a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
    dot(a, &cross(b, c))
}

fn dist2(a: &Vec3, b: &Vec3) -> f64 {
    let d = sub(a, b);
    dot(&d, &d)
}
