//! The dual-branch network: raw-waveform CNN and log-mel patch transformer,
//! fused on the channel axis and summarized by a bidirectional GRU.

mod config;
mod input;
mod network;
mod params;

pub use config::{AstConfig, CnnConfig, PreprocessConfig, ShapeReport, TrainConfig, WlannConfig};
pub use input::{augment_input, center_pad_or_crop, prepare_features, prepare_input, ModelInput};
pub use network::{
    ast_branch, ast_forward, backward, classify_head, extract_patches, forward, forward_trace, fuse, head_forward,
    waveform_branch, waveform_forward, AstTrace, ForwardTrace, HeadTrace, WaveformTrace,
};
pub use params::{AstParams, ConvLayerParams, WlannParams, INIT_SCHEME, INIT_STD};

/// Channel order of the fused tensor, recorded in checkpoint metadata.
pub const FUSION_ORDER: &str = "spectrogram_then_waveform";
