//! Bidirectional transformer encoder over acoustic frames, its
//! reconstruction head and the downstream task heads.

mod config;
mod encoder;
mod heads;
mod layers;
mod params;

pub use config::{count_parameters, ModelConfig, TaskKind};
pub use encoder::{embed, encoder_backward, encoder_forward, positional_encoding, Dropout, EncoderActivations};
pub use heads::{
    mean_pool, reconstruction_backward, reconstruction_forward, reconstruction_head, task_head,
    task_head_backward, task_head_forward, ReconstructionCache, TaskHeadCache,
};
pub use layers::{gelu, gelu_grad, LayerNorm, Linear, LAYER_NORM_EPS};
pub use params::{EncoderLayer, ModelParams, ReconstructionHead, TaskHead, TensorView, TensorViewMut};

use crate::error::Result;
use crate::tensor::Mat;

/// Embeds `frames` and runs the encoder.
pub fn encode(
    frames: &Mat,
    cfg: &ModelConfig,
    params: &ModelParams,
    pad_mask: Option<&[bool]>,
    dropout: Option<&mut Dropout<'_>>,
) -> Result<EncoderActivations> {
    let h0 = embed(frames, cfg, params)?;
    encoder_forward(&h0, cfg, params, pad_mask, dropout)
}

/// Backward through the encoder and the input projection.
pub fn encode_backward(
    frames: &Mat,
    cfg: &ModelConfig,
    params: &ModelParams,
    acts: &EncoderActivations,
    d_top: &Mat,
    grads: &mut ModelParams,
) {
    let dh0 = encoder_backward(cfg, params, acts, d_top, grads);
    params
        .input_projection
        .backward_params(frames, &dh0, &mut grads.input_projection);
}
