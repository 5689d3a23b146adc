//! The SiT encoder and its heads.

mod config;
mod params;
mod record;
mod sit;

#[cfg(test)]
mod tests;

pub use config::{SiTConfig, DEFAULT_PATCH_DIM, DEFAULT_SEQ_LEN, VARIANTS};
pub use params::{trunc_normal, Param, ParamId, ParamStore};
pub use record::AttentionRecord;
pub use sit::{
    predict, predict_with_attention, ModelIds, ParamGrads, Session, SiTModel, CONFOUND_PREFIX,
    HEAD_PREFIX, INIT_STD,
};
