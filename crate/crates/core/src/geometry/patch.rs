//! Tokenization of a fine icosphere into triangular patches.
//!
//! Every face of the coarse (patch-order) icosphere owns the triangular
//! lattice of fine vertices produced by subdividing it `d` more times, with
//! `(2^d + 1)(2^d + 2) / 2` vertices in total. Patch vertices are listed in
//! lattice rows: row `j` runs from the `v0`–`v2` side toward `v1`, and rows
//! advance from the `v0`–`v1` edge toward `v2`. Vertices on coarse edges and
//! corners appear in every patch that touches them.

use super::icosphere::{build_icosphere, Icosphere, MAX_ORDER};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchTable {
    high_order: u32,
    patch_order: u32,
    vertices_per_patch: usize,
    indices: Vec<u32>,
    /// Number of patches each fine vertex belongs to.
    multiplicity: Vec<u32>,
}

pub fn vertices_per_patch(high_order: u32, patch_order: u32) -> usize {
    let n = 1usize << (high_order - patch_order);
    (n + 1) * (n + 2) / 2
}

/// Builds the patch table of a `high_order` icosphere cut along the faces of
/// the `patch_order` icosphere.
pub fn build_patch_table(high_order: u32, patch_order: u32) -> Result<PatchTable> {
    check_orders(high_order, patch_order)?;
    let mesh = build_icosphere(high_order)?;
    PatchTable::for_mesh(&mesh, patch_order)
}

fn check_orders(high_order: u32, patch_order: u32) -> Result<()> {
    if high_order <= patch_order || high_order > MAX_ORDER {
        return Err(Error::Bounds {
            what: "patch table orders",
            detail: format!(
                "need {MAX_ORDER} >= high_order > patch_order, got high_order={high_order}, patch_order={patch_order}"
            ),
        });
    }
    Ok(())
}

/// Lattice coordinates `(i, j)`: `i` steps along `v0 -> v1`, `j` along `v0 -> v2`.
type Lattice = (i64, i64);

impl PatchTable {
    /// Builds the table from an already constructed canonical icosphere.
    pub fn for_mesh(mesh: &Icosphere, patch_order: u32) -> Result<Self> {
        let high_order = mesh.order();
        check_orders(high_order, patch_order)?;
        let depth = high_order - patch_order;
        let n = 1i64 << depth;
        let per_patch = vertices_per_patch(high_order, patch_order);
        let patches = mesh.level_faces(patch_order).len();

        let mut indices = vec![u32::MAX; patches * per_patch];
        for (p, slots) in indices.chunks_exact_mut(per_patch).enumerate() {
            fill_lattice(mesh, patch_order, p, [(0, 0), (n, 0), (0, n)], n, slots)?;
        }
        if indices.contains(&u32::MAX) {
            return Err(Error::Data("patch lattice left unfilled slots".into()));
        }

        let mut multiplicity = vec![0u32; mesh.vertex_count()];
        for &v in &indices {
            multiplicity[v as usize] += 1;
        }
        if let Some(v) = multiplicity.iter().position(|&m| m == 0) {
            return Err(Error::Data(format!("vertex {v} is not covered by any patch")));
        }

        Ok(PatchTable {
            high_order,
            patch_order,
            vertices_per_patch: per_patch,
            indices,
            multiplicity,
        })
    }

    pub fn high_order(&self) -> u32 {
        self.high_order
    }

    pub fn patch_order(&self) -> u32 {
        self.patch_order
    }

    pub fn patch_count(&self) -> usize {
        self.indices.len() / self.vertices_per_patch
    }

    pub fn vertices_per_patch(&self) -> usize {
        self.vertices_per_patch
    }

    pub fn mesh_vertex_count(&self) -> usize {
        self.multiplicity.len()
    }

    pub fn patch(&self, i: usize) -> &[u32] {
        &self.indices[i * self.vertices_per_patch..(i + 1) * self.vertices_per_patch]
    }

    pub fn patches(&self) -> impl Iterator<Item = &[u32]> {
        self.indices.chunks_exact(self.vertices_per_patch)
    }

    /// How many patches contain each vertex (1 for patch interiors).
    pub fn multiplicity(&self) -> &[u32] {
        &self.multiplicity
    }
}

fn lattice_slot((i, j): Lattice, n: i64) -> usize {
    // rows 0..j hold (n + 1) + n + ... + (n + 2 - j) entries
    let before = j * (n + 1) - j * (j - 1) / 2;
    (before + i) as usize
}

fn fill_lattice(
    mesh: &Icosphere,
    level: u32,
    face: usize,
    at: [Lattice; 3],
    n: i64,
    slots: &mut [u32],
) -> Result<()> {
    if level == mesh.order() {
        let verts = mesh.faces()[face];
        for (&v, &pos) in verts.iter().zip(&at) {
            let slot = &mut slots[lattice_slot(pos, n)];
            if *slot != u32::MAX && *slot != v {
                return Err(Error::Data(format!(
                    "lattice position {pos:?} maps to vertices {} and {v}",
                    *slot
                )));
            }
            *slot = v;
        }
        return Ok(());
    }
    let mid = |p: Lattice, q: Lattice| ((p.0 + q.0) / 2, (p.1 + q.1) / 2);
    let [a, b, c] = at;
    let (ab, bc, ca) = (mid(a, b), mid(b, c), mid(c, a));
    let children = [[a, ab, ca], [ab, b, bc], [ca, bc, c], [ab, bc, ca]];
    for (k, child) in children.into_iter().enumerate() {
        fill_lattice(mesh, level + 1, face * 4 + k, child, n, slots)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn default_sizes() {
        assert_eq!(vertices_per_patch(6, 2), 153);
        assert_eq!(vertices_per_patch(1, 0), 6);
    }

    #[test]
    fn equal_orders_are_rejected() {
        assert!(matches!(build_patch_table(3, 3), Err(Error::Bounds { .. })));
        assert!(matches!(build_patch_table(2, 3), Err(Error::Bounds { .. })));
    }

    #[test]
    fn order_one_lattices_by_enumeration() {
        let mesh = build_icosphere(1).unwrap();
        let coarse = build_icosphere(0).unwrap();
        let table = PatchTable::for_mesh(&mesh, 0).unwrap();
        assert_eq!(table.patch_count(), 20);
        // Independently: each icosahedron face's patch is its 3 corners plus
        // the midpoints of its 3 edges, found by position.
        let find = |p: [f64; 3]| {
            mesh.vertices()
                .iter()
                .position(|q| (0..3).all(|d| (p[d] - q[d]).abs() < 1e-12))
                .unwrap() as u32
        };
        let mut covered = BTreeSet::new();
        for (f, face) in coarse.faces().iter().enumerate() {
            let [a, b, c] = face.map(|i| coarse.vertices()[i as usize]);
            let mid = |p: [f64; 3], q: [f64; 3]| {
                crate::geometry::icosphere::normalize([p[0] + q[0], p[1] + q[1], p[2] + q[2]])
            };
            // row 0: a, ab, b; row 1: ca, bc; row 2: c
            let expect = [a, mid(a, b), b, mid(a, c), mid(b, c), c].map(find);
            assert_eq!(table.patch(f), &expect);
            covered.extend(expect);
        }
        assert_eq!(covered.len(), 42);
    }

    #[test]
    fn multiplicity_marks_boundaries() {
        let table = build_patch_table(3, 1).unwrap();
        let n = 4i64;
        for patch in table.patches() {
            for j in 0..=n {
                for i in 0..=n - j {
                    let v = patch[lattice_slot((i, j), n)] as usize;
                    let on_edge = i == 0 || j == 0 || i + j == n;
                    assert_eq!(table.multiplicity()[v] > 1, on_edge);
                }
            }
        }
    }
}
