//! Registration-guided transformer: tokenisation, attention blocks,
//! de-tokenisation, losses, backpropagation and training.

mod attention;
mod bench;
mod checkpoint;
mod detok;
mod layers;
mod loss;
mod model;
mod tensor;
mod tokenize;
mod train;

pub use attention::{Attention, AttnCache, Block, BlockCache};
pub use bench::{
    bench_attention, bench_csv, synthetic_groups, BenchConfig, BenchRow, BlockF32, BENCH_CSV_HEADER,
};
pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use detok::{
    detokenize, detokenize_backward, scale_activation, LOG_SCALE_MAX, LOG_SCALE_MIN, SCALE_BIAS,
};
pub use layers::{gelu, gelu_grad, LayerNorm, Linear, LnCache, LN_EPS};
pub use loss::{
    geometry_with_grad, loss_geometry, loss_photometric, loss_reg, reg_with_grad, LossWeights,
    OPACITY_TARGET, SCALE_TARGET,
};
pub use model::{
    grouped_attention_block, grouped_groups, guided_groups, reg_guided_attention_block, BlockKind,
    ForwardCache, FrameInputs, Model, ModelConfig, POS_EMB_STD,
};
pub use tensor::{dot, matmul, matmul_nt, matmul_tn_acc, Mat};
pub use tokenize::{
    image_patch_features, uv_feature_width, uv_patch_features, InitSnapshot, IMAGE_PIXEL_CHANNELS,
    UV_CONTEXT_BINS, UV_CONTEXT_CHANNELS, UV_TEXEL_CHANNELS, UV_TOKEN_EXTRA,
};
pub use train::{
    backward_and_step, first_non_finite, geometry_report, image_features, load_frames,
    loss_and_grad, predict, prepare_inputs, Adam, GeometryReport, LossBreakdown, StepLog,
    TrainConfig, TrainFrame, Trainer, ADAM_BETA1, ADAM_BETA2, ADAM_EPS, LOSS_CSV_HEADER,
};

use crate::error::{Error, Result};
use crate::image::RgbImage;
use crate::math::Camera;
use crate::texture::{BakedTexture, GaussianTexture};

/// Image tokens per view: RGB + Plücker patch features through `proj`.
pub fn tokenize_images(
    images: &[RgbImage],
    cameras: &[Camera],
    p_img: usize,
    proj: &Linear,
) -> Result<Vec<Mat>> {
    if images.len() != cameras.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} images vs {} cameras",
            images.len(),
            cameras.len()
        )));
    }
    images
        .iter()
        .zip(cameras)
        .map(|(im, cam)| {
            let f = image_patch_features(im, cam, p_img)?;
            if f.cols != proj.fan_in() {
                return Err(Error::DimensionMismatch(format!(
                    "patch features {} vs projection input {}",
                    f.cols,
                    proj.fan_in()
                )));
            }
            Ok(proj.forward(&f))
        })
        .collect()
}

/// UV tokens from position and colour textures, each patch concatenated with
/// its positional embedding before projection.
pub fn tokenize_uv(
    positions: &BakedTexture,
    colors: &BakedTexture,
    pos_emb: &Mat,
    p_uv: usize,
    proj: &Linear,
    length_unit: f64,
) -> Result<(Mat, InitSnapshot)> {
    let (feats, snap) = uv_patch_features(positions, colors, p_uv, length_unit)?;
    if pos_emb.rows != feats.rows || feats.cols + pos_emb.cols != proj.fan_in() {
        return Err(Error::DimensionMismatch(
            "positional embeddings do not match the UV token grid".into(),
        ));
    }
    let x = Mat::from_fn(feats.rows, feats.cols + pos_emb.cols, |r, k| {
        if k < feats.cols {
            feats[(r, k)]
        } else {
            pos_emb[(r, k - feats.cols)]
        }
    });
    Ok((proj.forward(&x), snap))
}

/// Multi-head self-attention over the rows of `x`.
pub fn multi_head_attention(attn: &Attention, x: &Mat) -> Mat {
    attn.forward(x).0
}

/// Head output for the final UV tokens, de-tokenised with skip connections.
pub fn detokenize_uv(
    head: &Linear,
    uv_tokens: &Mat,
    init: &InitSnapshot,
    p_uv: usize,
    length_unit: f64,
) -> GaussianTexture {
    detokenize(&head.forward(uv_tokens), init, p_uv, length_unit)
}
