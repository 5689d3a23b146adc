//! Synthetic datasets, manifests, normalization and example loading.

mod loader;
mod manifest;
mod normalize;
mod synth;

pub use loader::{load_example, order_of, Dataset, Example, Labels, Loader};
pub use manifest::{assign_splits, DatasetManifest, ManifestRow, Split, SPLIT_FRACTIONS};
pub use normalize::{ChannelAccumulator, NormStats, MIN_CHANNEL_STD};
pub use synth::{
    generate_synthetic, AmplitudeModel, SubjectRecord, SyntheticSpec, Synthesizer, MANIFEST_FILE,
    PRETERM_OFFSET, SPEC_KEYS,
};
pub(crate) use synth::derive_seed;
