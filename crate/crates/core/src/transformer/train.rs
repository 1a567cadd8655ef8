//! Frame preparation, loss/gradient evaluation, Adam, and the training loop.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::detok::{detokenize, detokenize_backward};
use super::loss::{geometry_with_grad, reg_with_grad, LossWeights, OPACITY_TARGET, SCALE_TARGET};
use super::model::{FrameInputs, Model, ModelConfig};
use super::tensor::Mat;
use super::tokenize::{image_patch_features, uv_patch_features};
use crate::correspondence::build_table_from_rasters;
use crate::error::{Error, Result};
use crate::image::RgbImage;
use crate::math::Camera;
use crate::mesh::{
    bake_position_texture, extract_mesh_from_texture, mesh_metrics, rasterize,
    reproject_rgb_texture, RasterBuffer, TopologyMesh,
};
use crate::render::RenderSettings;
use crate::synth::{Dataset, FrameSpec, Rng};
use crate::texture::{BakedTexture, GaussianTexture, GAUSSIAN_CHANNELS};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Per-view image patch features (independent of the coarse mesh).
pub fn image_features(images: &[RgbImage], cameras: &[Camera], p_img: usize) -> Result<Vec<Mat>> {
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
        .map(|(im, c)| image_patch_features(im, c, p_img))
        .collect()
}

/// Network inputs for one frame: UV features from the coarse mesh and the
/// reprojected images, plus the correspondence table.
pub fn prepare_inputs(
    config: &ModelConfig,
    img_feats: Vec<Mat>,
    images: &[RgbImage],
    cameras: &[Camera],
    coarse: &TopologyMesh,
) -> Result<FrameInputs> {
    if images.len() != config.views || cameras.len() != config.views {
        return Err(Error::LayoutMismatch(format!(
            "model expects {} views, got {}",
            config.views,
            images.len()
        )));
    }
    for im in images {
        if im.width != config.image_width || im.height != config.image_height {
            return Err(Error::LayoutMismatch(format!(
                "image {}×{} vs model {}×{}",
                im.width, im.height, config.image_width, config.image_height
            )));
        }
    }
    let rasters: Vec<RasterBuffer> = cameras.iter().map(|c| rasterize(coarse, c)).collect();
    let (positions, _) = bake_position_texture(coarse, config.uv_size, config.uv_size);
    let colors = reproject_rgb_texture(coarse, &positions, images, cameras, &rasters);
    let (uv_feats, init) = uv_patch_features(&positions, &colors, config.p_uv, config.length_unit)?;
    let table = build_table_from_rasters(&rasters, &config.layout(), config.k, config.lambda)?;
    Ok(FrameInputs {
        img_feats,
        uv_feats,
        table,
        init,
    })
}

/// Predicted Gaussian texture for prepared inputs.
pub fn predict(model: &Model, inputs: &FrameInputs) -> Result<GaussianTexture> {
    let (raw, _) = model.forward(inputs)?;
    Ok(detokenize(
        &raw,
        &inputs.init,
        model.config.p_uv,
        model.config.length_unit,
    ))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    /// Optimised objective `w_geometry · L_geometry / length_unit² + w_reg · L_reg`.
    pub total: f64,
    /// Meters².
    pub geometry: f64,
    pub reg: f64,
}

impl LossBreakdown {
    fn add_scaled(&mut self, o: &LossBreakdown, s: f64) {
        self.total += s * o.total;
        self.geometry += s * o.geometry;
        self.reg += s * o.reg;
    }
}

/// Loss of one frame and its gradient accumulated into `grad` (scaled by
/// `grad_scale`).
pub fn loss_and_grad(
    model: &Model,
    inputs: &FrameInputs,
    target: &BakedTexture,
    weights: &LossWeights,
    grad: Option<(&mut Model, f64)>,
) -> Result<LossBreakdown> {
    let c = &model.config;
    let (raw, cache) = model.forward(inputs)?;
    let g = detokenize(&raw, &inputs.init, c.p_uv, c.length_unit);
    let geom_w = weights.w_geometry / (c.length_unit * c.length_unit);
    let mut d_texels = vec![[0.0; GAUSSIAN_CHANNELS]; g.texels.len()];
    let want_grad = grad.is_some();
    let geometry = geometry_with_grad(
        &g,
        target,
        want_grad.then_some((geom_w, d_texels.as_mut_slice())),
    )?;
    let reg = reg_with_grad(
        &g,
        SCALE_TARGET,
        OPACITY_TARGET,
        want_grad.then_some((weights.w_reg, d_texels.as_mut_slice())),
    )?;
    let total = geom_w * geometry + weights.w_reg * reg;
    if !total.is_finite() {
        return Err(Error::NonFinite(format!(
            "loss (geometry {geometry}, reg {reg})"
        )));
    }
    if let Some((grad, s)) = grad {
        if s != 1.0 {
            d_texels.iter_mut().flatten().for_each(|v| *v *= s);
        }
        let d_raw = detokenize_backward(&raw, &inputs.init, c.p_uv, c.length_unit, &g, &d_texels);
        model.backward(&cache, &d_raw, grad);
    }
    Ok(LossBreakdown {
        total,
        geometry,
        reg,
    })
}

/// Name of the first parameter tensor holding a non-finite value.
pub fn first_non_finite(model: &Model) -> Option<String> {
    model
        .tensors()
        .into_iter()
        .find(|(_, t)| !t.is_finite())
        .map(|(n, _)| n)
}

fn round_f32(v: f64) -> f64 {
    v as f32 as f64
}

/// Adam with first/second moments shaped like the model. Parameters and
/// moments are rounded to `f32` after every update so that checkpoints
/// resume bit-exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub t: u64,
    pub m: Model,
    pub v: Model,
}

impl Adam {
    pub fn new(model: &Model) -> Self {
        Self {
            t: 0,
            m: model.zeros_like(),
            v: model.zeros_like(),
        }
    }

    pub fn update(&mut self, model: &mut Model, grad: &Model, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.t as i32);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.t as i32);
        let params = model.tensors_mut();
        let grads = grad.tensors();
        let ms = self.m.tensors_mut();
        let vs = self.v.tensors_mut();
        for ((((_, p), (_, g)), (_, m)), (_, v)) in params.into_iter().zip(grads).zip(ms).zip(vs) {
            for i in 0..p.data.len() {
                let gi = g.data[i];
                let mi = ADAM_BETA1 * m.data[i] + (1.0 - ADAM_BETA1) * gi;
                let vi = ADAM_BETA2 * v.data[i] + (1.0 - ADAM_BETA2) * gi * gi;
                let step = lr * (mi / bc1) / ((vi / bc2).sqrt() + ADAM_EPS);
                p.data[i] = round_f32(p.data[i] - step);
                m.data[i] = round_f32(mi);
                v.data[i] = round_f32(vi);
            }
        }
    }
}

/// One gradient step on `batch` and returns the mean loss.
pub fn backward_and_step(
    model: &mut Model,
    adam: &mut Adam,
    batch: &[(&FrameInputs, &BakedTexture)],
    weights: &LossWeights,
    lr: f64,
) -> Result<LossBreakdown> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let mut grad = model.zeros_like();
    let s = 1.0 / batch.len() as f64;
    let mut mean = LossBreakdown::default();
    for (inputs, target) in batch {
        let l = loss_and_grad(model, inputs, target, weights, Some((&mut grad, s)))?;
        mean.add_scaled(&l, s);
    }
    if let Some(name) = first_non_finite(&grad) {
        return Err(Error::NonFinite(format!("gradient of {name}")));
    }
    adam.update(model, &grad, lr);
    if let Some(name) = first_non_finite(model) {
        return Err(Error::NonFinite(format!("parameter {name}")));
    }
    Ok(mean)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub weights: LossWeights,
    pub iterations: u64,
    pub lr: f64,
    /// Linear warm-up length in steps.
    pub warmup: u64,
    /// Cosine decay from `lr` down to `lr · final_lr_fraction`.
    pub final_lr_fraction: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Draw a fresh coarse-mesh perturbation every step instead of using
    /// the stored one.
    pub resample_noise: bool,
    /// Checkpoint period in steps; 0 writes only the final checkpoint.
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            weights: LossWeights::default(),
            iterations: 5000,
            lr: 4e-3,
            warmup: 100,
            final_lr_fraction: 0.05,
            batch_size: 1,
            seed: 0,
            resample_noise: true,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.weights.validate()?;
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "lr must be nonnegative, got {}",
                self.lr
            )));
        }
        if !(0.0..=1.0).contains(&self.final_lr_fraction) {
            return Err(Error::Config("final_lr_fraction must lie in [0, 1]".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        Ok(())
    }

    /// Learning rate used for step `step` (0-based).
    pub fn lr_at(&self, step: u64) -> f64 {
        let warm = if self.warmup > 0 {
            ((step + 1) as f64 / self.warmup as f64).min(1.0)
        } else {
            1.0
        };
        let n = self.iterations.max(1) as f64;
        let progress = (step as f64 / n).min(1.0);
        let cosine = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
        self.lr * warm * (self.final_lr_fraction + (1.0 - self.final_lr_fraction) * cosine)
    }
}

/// A training frame held in memory.
#[derive(Clone, Debug)]
pub struct TrainFrame {
    pub spec: FrameSpec,
    pub images: Vec<RgbImage>,
    pub img_feats: Vec<Mat>,
    pub gt_mesh: TopologyMesh,
    pub coarse_mesh: TopologyMesh,
    pub target: BakedTexture,
}

impl TrainFrame {
    /// Bakes a frame in memory (same content as the on-disk dataset).
    pub fn from_spec(
        spec: FrameSpec,
        cameras: &[Camera],
        settings: &RenderSettings,
        p_img: usize,
    ) -> Result<Self> {
        let gt = spec.bake(cameras, settings)?;
        Ok(Self {
            img_feats: image_features(&gt.images, cameras, p_img)?,
            target: gt.texture.position_texture(),
            spec,
            images: gt.images,
            gt_mesh: gt.gt_mesh,
            coarse_mesh: gt.coarse_mesh,
        })
    }

    /// Inputs built from the stored coarse mesh.
    pub fn stored_inputs(&self, config: &ModelConfig, cameras: &[Camera]) -> Result<FrameInputs> {
        prepare_inputs(
            config,
            self.img_feats.clone(),
            &self.images,
            cameras,
            &self.coarse_mesh,
        )
    }

    /// Inputs built from a coarse mesh with a fresh noise draw of standard
    /// deviation `sigma_mm`.
    pub fn noisy_inputs(
        &self,
        config: &ModelConfig,
        cameras: &[Camera],
        sigma_mm: f64,
        draw: u64,
    ) -> Result<FrameInputs> {
        let mut spec = self.spec.clone();
        spec.sigma_noise_mm = sigma_mm;
        let coarse = spec.coarse_mesh(&self.gt_mesh, draw);
        prepare_inputs(
            config,
            self.img_feats.clone(),
            &self.images,
            cameras,
            &coarse,
        )
    }
}

/// Loads every frame of a dataset for training with `config`.
pub fn load_frames(dataset: &Dataset, config: &ModelConfig) -> Result<Vec<TrainFrame>> {
    (0..dataset.frame_count())
        .map(|f| {
            let data = dataset.load_frame(f)?;
            Ok(TrainFrame {
                img_feats: image_features(&data.images, &dataset.input_cameras, config.p_img)?,
                target: data.gt_texture.position_texture(),
                spec: data.spec,
                images: data.images,
                gt_mesh: data.gt_mesh,
                coarse_mesh: data.coarse_mesh,
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: u64,
    pub frame: usize,
    pub lr: f64,
    pub loss: LossBreakdown,
}

pub const LOSS_CSV_HEADER: &str = "step,frame,lr,total,geometry,reg";

impl StepLog {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:.9e},{:.9e},{:.9e},{:.9e}",
            self.step, self.frame, self.lr, self.loss.total, self.loss.geometry, self.loss.reg
        )
    }
}

/// Training state: model, optimiser, and the number of completed steps.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub config: TrainConfig,
    pub model: Model,
    pub adam: Adam,
    pub step: u64,
    pub frames: Vec<TrainFrame>,
    pub cameras: Vec<Camera>,
}

impl Trainer {
    pub fn new(config: TrainConfig, frames: Vec<TrainFrame>, cameras: Vec<Camera>) -> Result<Self> {
        config.validate()?;
        let model = Model::new(config.model.clone())?;
        let adam = Adam::new(&model);
        Self::resume(config, model, adam, 0, frames, cameras)
    }

    pub fn resume(
        config: TrainConfig,
        model: Model,
        adam: Adam,
        step: u64,
        frames: Vec<TrainFrame>,
        cameras: Vec<Camera>,
    ) -> Result<Self> {
        config.validate()?;
        if frames.is_empty() {
            return Err(Error::InvalidInput("no training frames".into()));
        }
        if model.config != config.model {
            return Err(Error::Config(
                "checkpoint model config differs from the training config".into(),
            ));
        }
        Ok(Self {
            config,
            model,
            adam,
            step,
            frames,
            cameras,
        })
    }

    /// Frame index for batch element `b` of step `step`.
    pub fn frame_for(&self, step: u64, b: usize) -> usize {
        Rng::keyed(&[self.config.seed, 0x7EA1, step, b as u64]).below(self.frames.len())
    }

    fn inputs_for(&self, frame: usize, step: u64, b: usize) -> Result<FrameInputs> {
        let f = &self.frames[frame];
        if self.config.resample_noise {
            // Draw 0 is the stored coarse mesh.
            let draw = 1 + step * self.config.batch_size as u64 + b as u64;
            f.noisy_inputs(
                &self.config.model,
                &self.cameras,
                f.spec.sigma_noise_mm,
                draw,
            )
        } else {
            f.stored_inputs(&self.config.model, &self.cameras)
        }
    }

    /// Runs one optimisation step.
    pub fn step(&mut self) -> Result<StepLog> {
        let step = self.step;
        let frames: Vec<usize> = (0..self.config.batch_size)
            .map(|b| self.frame_for(step, b))
            .collect();
        let inputs = frames
            .iter()
            .enumerate()
            .map(|(b, &f)| self.inputs_for(f, step, b))
            .collect::<Result<Vec<_>>>()?;
        let batch: Vec<(&FrameInputs, &BakedTexture)> = inputs
            .iter()
            .zip(&frames)
            .map(|(i, &f)| (i, &self.frames[f].target))
            .collect();
        let lr = self.config.lr_at(step);
        let loss = backward_and_step(
            &mut self.model,
            &mut self.adam,
            &batch,
            &self.config.weights,
            lr,
        )?;
        self.step += 1;
        Ok(StepLog {
            step,
            frame: frames[0],
            lr,
            loss,
        })
    }

    /// Runs until `config.iterations`, writing a CSV row per step and calling
    /// `checkpoint` at the configured period and at the end.
    pub fn run(
        &mut self,
        mut log: impl Write,
        mut checkpoint: impl FnMut(&Trainer) -> Result<()>,
    ) -> Result<Vec<StepLog>> {
        let mut out = Vec::new();
        while self.step < self.config.iterations {
            let s = self.step()?;
            writeln!(log, "{}", s.csv_row())?;
            out.push(s);
            let every = self.config.checkpoint_every;
            if every > 0 && self.step % every == 0 && self.step < self.config.iterations {
                checkpoint(self)?;
            }
        }
        checkpoint(self)?;
        Ok(out)
    }
}

/// Geometry of one frame: P2P/P2S (mm) of the mesh extracted from the
/// prediction and of the coarse input, both against ground truth.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeometryReport {
    pub pred_p2p_mm: f64,
    pub pred_p2s_mm: f64,
    pub coarse_p2p_mm: f64,
    pub coarse_p2s_mm: f64,
    /// Meters².
    pub geometry_loss: f64,
}

pub fn geometry_report(
    pred: &GaussianTexture,
    coarse: &TopologyMesh,
    gt_mesh: &TopologyMesh,
    target: &BakedTexture,
) -> Result<GeometryReport> {
    let pred_mesh = extract_mesh_from_texture(&pred.position_texture(), coarse)?;
    let (pred_p2p_mm, pred_p2s_mm) = mesh_metrics(&pred_mesh, gt_mesh)?;
    let (coarse_p2p_mm, coarse_p2s_mm) = mesh_metrics(coarse, gt_mesh)?;
    let geometry_loss = super::loss::loss_geometry(pred, target)?;
    Ok(GeometryReport {
        pred_p2p_mm,
        pred_p2s_mm,
        coarse_p2p_mm,
        coarse_p2s_mm,
        geometry_loss,
    })
}
