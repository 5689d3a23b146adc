//! Icosphere meshes, patch tokenization and resampling of spherical signals.

pub(crate) mod icosphere;
pub mod io;
mod locate;
mod patch;
mod signal;

pub use icosphere::{
    build_icosphere, edge_count, face_count, mirror_points, vertex_count, Icosphere, Vec3,
    MAX_ORDER,
};
pub use locate::{
    gnomonic_barycentric, mirror_permutation, mirror_signal, resample_barycentric, Location,
    Resampler,
};
pub use patch::{build_patch_table, vertices_per_patch, PatchTable};
pub use signal::{extract_patches, scatter_patches, Hemisphere, PatchSequence, SurfaceSignal};
