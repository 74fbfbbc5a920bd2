//! The eleven uncertainty estimators: configuration, encoder, losses, and
//! uncertainty read-outs.

mod config;
mod encoder;
pub mod losses;
mod uncertainty;

pub use config::{Method, MethodConfig, UncertaintyKind};
pub use encoder::{row_slice, Batch, Encoder, EncoderDims, MC_DROPOUT_PASSES};
pub use uncertainty::{
    ensemble_predict, entropy_uncertainty, extract_uncertainty, infonce_uncertainty, low_rank_log_det, pool_member_probs,
    softmax, Pooled, Prediction,
};
