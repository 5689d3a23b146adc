//! Attention rollout from the regression token and vertex-level maps.

mod maps;
mod rollout;
mod unfold;

pub use maps::{average_maps, patches_to_vertices, threshold_map, vertex_attention, VertexAttentionMap};
pub use rollout::{residual_adjusted, rollout, rollout_matrix, rollout_range};
pub use unfold::{unfold, write_unfolding_png};
