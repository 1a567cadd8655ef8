//! Command implementations. Each writes its primary outputs under an output
//! directory; all timing excludes file I/O.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::avatar::{
    canonicalize, expression_transfer, interpolate, pca_fit, pose, region_swap, TexelMask,
};
use crate::error::{Error, Result};
use crate::image::RgbImage;
use crate::math::Camera;
use crate::ply::save_ply;
use crate::render::{image_metrics, render, ImageMetrics, RenderSettings};
use crate::synth::{generate_dataset, Dataset, GenConfig, Manifest};
use crate::texture::GaussianTexture;
use crate::transformer::{
    bench_attention, bench_csv, geometry_report, load_frames, predict, BenchConfig, BenchRow,
    Checkpoint, GeometryReport, ModelConfig, TrainConfig, TrainFrame, Trainer, LOSS_CSV_HEADER,
};

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

pub fn cmd_gen_data(config: &GenConfig, out: &Path) -> Result<Manifest> {
    generate_dataset(config, out)
}

/// Copies the dataset's image, texture and view geometry into `model`.
pub fn adapt_model_to_dataset(model: &mut ModelConfig, dataset: &Dataset) {
    let c = &dataset.config;
    model.uv_size = c.uv_size;
    model.image_width = c.image_width;
    model.image_height = c.image_height;
    model.views = c.views;
}

pub const FINAL_CHECKPOINT: &str = "checkpoint.ckpt";
pub const LOSS_CSV: &str = "loss.csv";

pub fn checkpoint_name(step: u64) -> String {
    format!("checkpoint_{step:06}.ckpt")
}

fn save_checkpoint(t: &Trainer, path: &Path) -> Result<()> {
    Checkpoint {
        model: t.model.clone(),
        step: t.step,
        adam: Some(t.adam.clone()),
        train: Some(t.config.clone()),
    }
    .save(path)
}

/// Trains on every frame of `dataset`. With `resume`, the optimiser state,
/// step counter and training config come from the checkpoint and the loss
/// log is appended to.
pub fn cmd_train(
    config: &TrainConfig,
    dataset: &Path,
    out: &Path,
    resume: Option<&Path>,
) -> Result<Trainer> {
    let ds = Dataset::open(dataset)?;
    fs::create_dir_all(out)?;
    let mut trainer = match resume {
        None => {
            let mut config = config.clone();
            adapt_model_to_dataset(&mut config.model, &ds);
            let frames = load_frames(&ds, &config.model)?;
            Trainer::new(config, frames, ds.input_cameras.clone())?
        }
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            let config = ck
                .train
                .clone()
                .ok_or_else(|| Error::Config("checkpoint has no training state".into()))?;
            let adam = ck
                .adam
                .clone()
                .ok_or_else(|| Error::Config("checkpoint has no optimiser state".into()))?;
            let frames = load_frames(&ds, &config.model)?;
            Trainer::resume(
                config,
                ck.model,
                adam,
                ck.step,
                frames,
                ds.input_cameras.clone(),
            )?
        }
    };
    let log_path = out.join(LOSS_CSV);
    let mut log = if resume.is_some() && log_path.exists() {
        std::io::BufWriter::new(fs::OpenOptions::new().append(true).open(&log_path)?)
    } else {
        let mut f = std::io::BufWriter::new(fs::File::create(&log_path)?);
        writeln!(f, "{LOSS_CSV_HEADER}")?;
        f
    };
    let iterations = trainer.config.iterations;
    trainer.run(&mut log, |t| {
        if t.step < iterations {
            save_checkpoint(t, &out.join(checkpoint_name(t.step)))
        } else {
            save_checkpoint(t, &out.join(FINAL_CHECKPOINT))
        }
    })?;
    log.flush()?;
    Ok(trainer)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferConfig {
    pub frame: usize,
}

fn load_model(checkpoint: &Path, ds: &Dataset) -> Result<crate::transformer::Model> {
    let model = Checkpoint::load(checkpoint)?.model;
    let mut expect = model.config.clone();
    adapt_model_to_dataset(&mut expect, ds);
    if expect != model.config {
        return Err(Error::LayoutMismatch(
            "checkpoint was trained on a different image, texture or view layout".into(),
        ));
    }
    Ok(model)
}

fn load_frame(
    ds: &Dataset,
    frame: usize,
    config: &ModelConfig,
) -> Result<(TrainFrame, GaussianTexture)> {
    if frame >= ds.frame_count() {
        return Err(Error::InvalidInput(format!(
            "frame {frame} not in a {}-frame dataset",
            ds.frame_count()
        )));
    }
    let data = ds.load_frame(frame)?;
    let gt = data.gt_texture.clone();
    let f = TrainFrame {
        img_feats: crate::transformer::image_features(
            &data.images,
            &ds.input_cameras,
            config.p_img,
        )?,
        target: data.gt_texture.position_texture(),
        spec: data.spec,
        images: data.images,
        gt_mesh: data.gt_mesh,
        coarse_mesh: data.coarse_mesh,
    };
    Ok((f, gt))
}

pub const GAUSSIANS_BIN: &str = "gaussians.bin";
pub const GAUSSIANS_PLY: &str = "gaussians.ply";

/// Predicts the texture of one frame from its stored coarse mesh.
pub fn cmd_infer(
    config: &InferConfig,
    checkpoint: &Path,
    dataset: &Path,
    out: &Path,
) -> Result<GaussianTexture> {
    let ds = Dataset::open(dataset)?;
    let model = load_model(checkpoint, &ds)?;
    let (frame, _) = load_frame(&ds, config.frame, &model.config)?;
    let pred = predict(
        &model,
        &frame.stored_inputs(&model.config, &ds.input_cameras)?,
    )?;
    fs::create_dir_all(out)?;
    pred.save(out.join(GAUSSIANS_BIN))?;
    save_ply(&pred, out.join(GAUSSIANS_PLY))?;
    Ok(pred)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Frames to evaluate; empty means all.
    pub frames: Vec<usize>,
    /// Replaces the stored coarse mesh with a fresh perturbation of this
    /// standard deviation.
    pub sigma_noise_mm: Option<f64>,
    /// Noise draw used with `sigma_noise_mm`; draw 0 rescales the stored
    /// perturbation pattern.
    pub noise_draw: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameEval {
    pub frame: usize,
    /// Mean over held-out views.
    pub image: ImageMetrics,
    pub geometry: GeometryReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// `"checkpoint"` or `"ground_truth"`.
    pub source: String,
    pub sigma_noise_mm: Option<f64>,
    pub frames: Vec<FrameEval>,
    pub mean_image: ImageMetrics,
    pub mean_geometry: GeometryReport,
}

fn mean_image(m: &[ImageMetrics]) -> ImageMetrics {
    let n = m.len().max(1) as f64;
    ImageMetrics {
        psnr: m.iter().map(|x| x.psnr).sum::<f64>() / n,
        ssim: m.iter().map(|x| x.ssim).sum::<f64>() / n,
        l1: m.iter().map(|x| x.l1).sum::<f64>() / n,
        l2: m.iter().map(|x| x.l2).sum::<f64>() / n,
    }
}

fn mean_geometry(g: &[GeometryReport]) -> GeometryReport {
    let n = g.len().max(1) as f64;
    GeometryReport {
        pred_p2p_mm: g.iter().map(|x| x.pred_p2p_mm).sum::<f64>() / n,
        pred_p2s_mm: g.iter().map(|x| x.pred_p2s_mm).sum::<f64>() / n,
        coarse_p2p_mm: g.iter().map(|x| x.coarse_p2p_mm).sum::<f64>() / n,
        coarse_p2s_mm: g.iter().map(|x| x.coarse_p2s_mm).sum::<f64>() / n,
        geometry_loss: g.iter().map(|x| x.geometry_loss).sum::<f64>() / n,
    }
}

/// Renders predictions at the held-out cameras against ground-truth renders
/// and measures extracted-mesh geometry. Without a checkpoint the
/// ground-truth texture stands in for the prediction.
pub fn cmd_eval(
    config: &EvalConfig,
    checkpoint: Option<&Path>,
    dataset: &Path,
) -> Result<EvalReport> {
    let ds = Dataset::open(dataset)?;
    let model = checkpoint.map(|c| load_model(c, &ds)).transpose()?;
    let frames: Vec<usize> = if config.frames.is_empty() {
        (0..ds.frame_count()).collect()
    } else {
        config.frames.clone()
    };
    let settings = &ds.config.render;
    let mut out = Vec::with_capacity(frames.len());
    for &f in &frames {
        let model_config = model.as_ref().map(|m| m.config.clone()).unwrap_or_default();
        let (frame, gt) = load_frame(&ds, f, &model_config)?;
        let coarse = match config.sigma_noise_mm {
            Some(s) => {
                let mut spec = frame.spec.clone();
                spec.sigma_noise_mm = s;
                spec.coarse_mesh(&frame.gt_mesh, config.noise_draw)
            }
            None => frame.coarse_mesh.clone(),
        };
        let pred = match &model {
            Some(m) => {
                let inputs = crate::transformer::prepare_inputs(
                    &m.config,
                    frame.img_feats.clone(),
                    &frame.images,
                    &ds.input_cameras,
                    &coarse,
                )?;
                predict(m, &inputs)?
            }
            None => gt.clone(),
        };
        let metrics = ds
            .heldout_cameras
            .iter()
            .map(|cam| image_metrics(&render(&pred, cam, settings), &render(&gt, cam, settings)))
            .collect::<Result<Vec<_>>>()?;
        let geometry = geometry_report(&pred, &coarse, &frame.gt_mesh, &frame.target)?;
        out.push(FrameEval {
            frame: f,
            image: mean_image(&metrics),
            geometry,
        });
    }
    Ok(EvalReport {
        source: if model.is_some() {
            "checkpoint"
        } else {
            "ground_truth"
        }
        .into(),
        sigma_noise_mm: config.sigma_noise_mm,
        mean_image: mean_image(&out.iter().map(|f| f.image).collect::<Vec<_>>()),
        mean_geometry: mean_geometry(&out.iter().map(|f| f.geometry).collect::<Vec<_>>()),
        frames: out,
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AvatarConfig {
    pub identity: usize,
    /// Component count; defaults to `min(16, N − 1)`.
    pub k: Option<usize>,
    /// One fixed-point mean re-estimation pass after fitting.
    pub refine_mean: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AvatarSweepRow {
    pub k: usize,
    /// Mean over frames of the RMS standardised residual.
    pub error: f64,
    /// Mean texel position error of the posed reconstruction, mm.
    pub p2p_mm: f64,
    /// Posed reconstruction vs ground truth rendered at input camera 0.
    pub psnr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AvatarReport {
    pub identity: usize,
    pub frames: Vec<usize>,
    pub k: usize,
    pub coefficients: Vec<Vec<f64>>,
    pub sweep: Vec<AvatarSweepRow>,
}

pub const GEM_MODEL: &str = "gem.bin";

fn texel_p2p_mm(a: &GaussianTexture, b: &GaussianTexture) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for t in 0..a.texels.len() {
        if a.valid[t] && b.valid[t] {
            s += (a.texels[t].position_vec() - b.texels[t].position_vec()).norm();
            n += 1;
        }
    }
    1e3 * s / n.max(1) as f64
}

/// Canonicalises one identity's ground-truth textures, fits the joint PCA and
/// reports reconstruction quality for every `K` up to the chosen one.
pub fn cmd_avatar(
    config: &AvatarConfig,
    dataset: &Path,
    static_mask: Option<&Path>,
    out: &Path,
) -> Result<AvatarReport> {
    let ds = Dataset::open(dataset)?;
    let per = ds.config.expressions;
    if config.identity >= ds.config.identities {
        return Err(Error::InvalidInput(format!(
            "identity {} not in the dataset",
            config.identity
        )));
    }
    let frames: Vec<usize> = (config.identity * per..(config.identity + 1) * per).collect();
    if frames.len() < 2 {
        return Err(Error::InvalidInput(
            "an avatar needs at least 2 frames".into(),
        ));
    }
    let mut posed = Vec::new();
    let mut rigs = Vec::new();
    let mut canonical = Vec::new();
    for &f in &frames {
        let data = ds.load_frame(f)?;
        let g = data.gt_texture;
        let rig = data
            .spec
            .identity
            .texture_rig(data.spec.expression.jaw_angle, g.height, g.width);
        canonical.push(canonicalize(&g, &rig)?);
        posed.push(g);
        rigs.push(rig);
    }
    let k = config.k.unwrap_or_else(|| 16.min(frames.len() - 1));
    let mask = static_mask.map(TexelMask::load).transpose()?;
    if let Some(m) = &mask {
        if m.height != posed[0].height || m.width != posed[0].width {
            return Err(Error::DimensionMismatch(
                "static mask size differs from the textures".into(),
            ));
        }
    }
    let mut model = pca_fit(&canonical, k, mask.as_ref().map(|m| m.data.as_slice()))?;
    if config.refine_mean {
        model.refine_mean(&canonical)?;
    }
    let cam = ds
        .input_cameras
        .first()
        .ok_or_else(|| Error::InvalidInput("dataset has no cameras".into()))?;
    let settings = &ds.config.render;
    let gt_renders: Vec<RgbImage> = posed.iter().map(|g| render(g, cam, settings)).collect();
    let mut sweep = Vec::with_capacity(k + 1);
    for kk in 0..=k {
        let m = model.truncated(kk)?;
        let (mut err, mut p2p, mut ps) = (0.0, 0.0, 0.0);
        for (i, c) in canonical.iter().enumerate() {
            err += m.reconstruction_error(c)?;
            let recon = pose(&m.reconstruct(&m.fit_coefficients(c)?)?, &rigs[i])?;
            p2p += texel_p2p_mm(&recon, &posed[i]);
            ps += image_metrics(&render(&recon, cam, settings), &gt_renders[i])?.psnr;
        }
        let n = canonical.len() as f64;
        sweep.push(AvatarSweepRow {
            k: kk,
            error: err / n,
            p2p_mm: p2p / n,
            psnr: ps / n,
        });
    }
    let coefficients = canonical
        .iter()
        .map(|c| model.fit_coefficients(c))
        .collect::<Result<Vec<_>>>()?;
    fs::create_dir_all(out)?;
    model.save(out.join(GEM_MODEL))?;
    let report = AvatarReport {
        identity: config.identity,
        frames,
        k,
        coefficients,
        sweep,
    };
    write_json(&out.join("avatar_report.json"), &report)?;
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum EditOp {
    Interpolate,
    Swap,
    Transfer,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EditConfig {
    pub gamma: f64,
    /// Feather band of the swap, in texels.
    pub feather: usize,
}

impl Default for EditConfig {
    fn default() -> Self {
        Self {
            gamma: 0.5,
            feather: 0,
        }
    }
}

pub struct EditInputs<'a> {
    pub op: EditOp,
    /// Interpolation start, swap source, or transfer source neutral.
    pub a: &'a Path,
    /// Interpolation end, swap target, or transfer target neutral.
    pub b: &'a Path,
    /// Transfer target expression.
    pub c: Option<&'a Path>,
    pub mask: Option<&'a Path>,
    /// Preview cameras come from this dataset, else from the default rig.
    pub dataset: Option<&'a Path>,
}

pub const EDITED_BIN: &str = "edited.bin";
pub const EDITED_PLY: &str = "edited.ply";

pub fn cmd_edit(config: &EditConfig, inputs: &EditInputs, out: &Path) -> Result<GaussianTexture> {
    let a = GaussianTexture::load(inputs.a)?;
    let b = GaussianTexture::load(inputs.b)?;
    let edited = match inputs.op {
        EditOp::Interpolate => interpolate(&a, &b, config.gamma)?,
        EditOp::Swap => {
            let mask = match inputs.mask {
                Some(p) => TexelMask::load(p)?,
                None => return Err(Error::Config("swap needs a mask".into())),
            };
            region_swap(&a, &b, &mask, config.feather)?
        }
        EditOp::Transfer => {
            let c = inputs.c.ok_or_else(|| {
                Error::Config("transfer needs a target expression texture".into())
            })?;
            expression_transfer(&a, &b, &GaussianTexture::load(c)?)?
        }
    };
    let (cameras, settings): (Vec<Camera>, RenderSettings) = match inputs.dataset {
        Some(d) => {
            let ds = Dataset::open(d)?;
            (ds.input_cameras, ds.config.render)
        }
        None => {
            let g = GenConfig::default();
            (g.input_cameras(), g.render)
        }
    };
    fs::create_dir_all(out)?;
    edited.save(out.join(EDITED_BIN))?;
    save_ply(&edited, out.join(EDITED_PLY))?;
    for (v, cam) in cameras.iter().enumerate() {
        render(&edited, cam, &settings).save_ppm(out.join(format!("preview_{v:02}.ppm")))?;
    }
    Ok(edited)
}

pub fn cmd_bench_attention(config: &BenchConfig, out: Option<&Path>) -> Result<Vec<BenchRow>> {
    let rows = bench_attention(config)?;
    if let Some(p) = out {
        fs::write(p, bench_csv(&rows))?;
    }
    Ok(rows)
}

pub fn write_report<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_json(path, value)
}
