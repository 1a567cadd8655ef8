//! On-disk dataset layout:
//!
//! ```text
//! dataset.json                  resolved generator config
//! cameras.json                  camera records, role "input" or "heldout"
//! manifest.json                 SHA-256 of every other file
//! frame_0000/spec.json
//! frame_0000/gt_texture.bin
//! frame_0000/gt_mesh.obj
//! frame_0000/coarse_mesh.obj
//! frame_0000/images/view_00.ppm
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::cameras::{camera_at, default_intrinsics, gen_cameras};
use super::frame::{FrameSpec, GtFrame};
use super::head::{ExpressionSpec, IdentitySpec, MAX_BUMP_AMPLITUDE, MAX_JAW_ANGLE};
use super::rng::Rng;
use crate::error::{Error, Result};
use crate::image::RgbImage;
use crate::math::{Camera, CameraRecord};
use crate::mesh::{read_obj, write_obj, TopologyMesh};
use crate::render::RenderSettings;
use crate::texture::GaussianTexture;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub seed: u64,
    pub identities: usize,
    pub expressions: usize,
    pub views: usize,
    pub heldout_views: usize,
    pub image_width: usize,
    pub image_height: usize,
    pub uv_size: usize,
    pub mesh_res: usize,
    pub sigma_noise_mm: f64,
    /// Bump amplitudes are drawn from `±expression_amplitude` meters.
    pub expression_amplitude: f64,
    pub max_jaw: f64,
    pub camera_radius: f64,
    pub elevation_deg: f64,
    /// `fx = fy = focal · image_width`.
    pub focal: f64,
    /// Expression 0 of every identity is neutral.
    pub neutral_first: bool,
    pub render: RenderSettings,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            identities: 4,
            expressions: 8,
            views: 4,
            heldout_views: 2,
            image_width: 64,
            image_height: 64,
            uv_size: 64,
            mesh_res: 32,
            sigma_noise_mm: 3.0,
            expression_amplitude: 0.02,
            max_jaw: 0.2,
            camera_radius: 0.5,
            elevation_deg: 0.0,
            focal: 1.6,
            neutral_first: true,
            render: RenderSettings::default(),
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.identities == 0 || self.expressions == 0 || self.views == 0 {
            return bad("identities, expressions and views must be positive");
        }
        if self.image_width == 0 || self.image_height == 0 || self.uv_size == 0 || self.mesh_res < 3
        {
            return bad("image, texture and mesh sizes must be positive (mesh_res ≥ 3)");
        }
        if !(self.sigma_noise_mm >= 0.0) {
            return bad("sigma_noise_mm must be nonnegative");
        }
        if !(0.0..=MAX_BUMP_AMPLITUDE).contains(&self.expression_amplitude)
            || !(0.0..=MAX_JAW_ANGLE).contains(&self.max_jaw)
        {
            return bad("expression amplitude or jaw range out of bounds");
        }
        if !(self.camera_radius > 0.0) || !(self.focal > 0.0) {
            return bad("camera_radius and focal must be positive");
        }
        if !(self.render.near < self.render.far) {
            return bad("render.near must be below render.far");
        }
        Ok(())
    }

    pub fn frame_count(&self) -> usize {
        self.identities * self.expressions
    }

    pub fn input_cameras(&self) -> Vec<Camera> {
        let k = default_intrinsics(self.image_width, self.image_height, self.focal);
        gen_cameras(
            self.views,
            self.camera_radius,
            self.elevation_deg.to_radians(),
            k,
        )
    }

    /// Held-out views sit between the input azimuths, 10° above them.
    pub fn heldout_cameras(&self) -> Vec<Camera> {
        let k = default_intrinsics(self.image_width, self.image_height, self.focal);
        let h = self.heldout_views;
        (0..h)
            .map(|i| {
                let az = (-30.0 + 60.0 * (i as f64 + 0.5) / h as f64).to_radians();
                camera_at(
                    az,
                    (self.elevation_deg + 10.0).to_radians(),
                    self.camera_radius,
                    k,
                )
            })
            .collect()
    }

    pub fn frame_spec(&self, frame: usize) -> FrameSpec {
        let (id, ex) = (frame / self.expressions, frame % self.expressions);
        let identity = IdentitySpec::sample(self.seed, id as u64);
        let expression = if self.neutral_first && ex == 0 {
            ExpressionSpec::neutral()
        } else {
            let mut rng = Rng::keyed(&[self.seed, 0xE4, frame as u64]);
            ExpressionSpec::sample(&mut rng, self.expression_amplitude, self.max_jaw)
        };
        FrameSpec {
            frame,
            identity_index: id,
            expression_index: ex,
            identity,
            expression,
            mesh_res: self.mesh_res,
            uv_size: self.uv_size,
            sigma_noise_mm: self.sigma_noise_mm,
            noise_seed: Rng::keyed(&[self.seed, 0x40, frame as u64]).next_u64(),
        }
    }
}

pub fn frame_dir(root: &Path, frame: usize) -> PathBuf {
    root.join(format!("frame_{frame:04}"))
}

fn image_path(root: &Path, frame: usize, view: usize) -> PathBuf {
    frame_dir(root, frame)
        .join("images")
        .join(format!("view_{view:02}.ppm"))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::format("json", format!("{}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

fn write_frame(root: &Path, spec: &FrameSpec, frame: &GtFrame) -> Result<()> {
    let dir = frame_dir(root, spec.frame);
    fs::create_dir_all(dir.join("images"))?;
    write_json(&dir.join("spec.json"), spec)?;
    frame.texture.save(dir.join("gt_texture.bin"))?;
    write_obj(&frame.gt_mesh, dir.join("gt_mesh.obj"))?;
    write_obj(&frame.coarse_mesh, dir.join("coarse_mesh.obj"))?;
    for (v, img) in frame.images.iter().enumerate() {
        img.save_ppm(image_path(root, spec.frame, v))?;
    }
    Ok(())
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<_> = fs::read_dir(dir)?.collect::<std::io::Result<_>>()?;
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let p = e.path();
        if p.is_dir() {
            collect_files(root, &p, out)?;
        } else if p.file_name().is_some_and(|n| n != "manifest.json") {
            out.push(
                p.strip_prefix(root)
                    .expect("walked under root")
                    .to_path_buf(),
            );
        }
    }
    Ok(())
}

/// Relative path (with `/` separators) → SHA-256 hex.
pub type Manifest = BTreeMap<String, String>;

pub fn build_manifest(root: &Path) -> Result<Manifest> {
    let mut files = Vec::new();
    collect_files(root, root, &mut files)?;
    files
        .iter()
        .map(|rel| {
            let key = rel
                .components()
                .map(|c| c.as_os_str().to_string_lossy())
                .collect::<Vec<_>>()
                .join("/");
            Ok((key, sha256_file(&root.join(rel))?))
        })
        .collect()
}

/// Generates the whole dataset under `root` and returns its manifest.
pub fn generate_dataset(config: &GenConfig, root: &Path) -> Result<Manifest> {
    config.validate()?;
    fs::create_dir_all(root)?;
    write_json(&root.join("dataset.json"), config)?;
    let inputs = config.input_cameras();
    let mut records: Vec<CameraRecord> = inputs
        .iter()
        .map(|c| CameraRecord::from_camera(c, Some("input")))
        .collect();
    records.extend(
        config
            .heldout_cameras()
            .iter()
            .map(|c| CameraRecord::from_camera(c, Some("heldout"))),
    );
    write_json(&root.join("cameras.json"), &records)?;
    for f in 0..config.frame_count() {
        let spec = config.frame_spec(f);
        let frame = spec.bake(&inputs, &config.render)?;
        write_frame(root, &spec, &frame)?;
        log::debug!("wrote frame {f}");
    }
    let manifest = build_manifest(root)?;
    write_json(&root.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

/// One frame as read back from disk.
#[derive(Clone, Debug)]
pub struct FrameData {
    pub spec: FrameSpec,
    pub images: Vec<RgbImage>,
    pub gt_texture: GaussianTexture,
    pub gt_mesh: TopologyMesh,
    pub coarse_mesh: TopologyMesh,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub config: GenConfig,
    pub input_cameras: Vec<Camera>,
    pub heldout_cameras: Vec<Camera>,
}

impl Dataset {
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let config: GenConfig = read_json(&root.join("dataset.json"))?;
        let records: Vec<CameraRecord> = read_json(&root.join("cameras.json"))?;
        let (mut input_cameras, mut heldout_cameras) = (Vec::new(), Vec::new());
        for r in &records {
            match r.role.as_deref() {
                None | Some("input") => input_cameras.push(r.to_camera()?),
                Some("heldout") => heldout_cameras.push(r.to_camera()?),
                Some(other) => {
                    return Err(Error::format(
                        "cameras.json",
                        format!("unknown role {other:?}"),
                    ))
                }
            }
        }
        Ok(Self {
            root,
            config,
            input_cameras,
            heldout_cameras,
        })
    }

    pub fn frame_count(&self) -> usize {
        self.config.frame_count()
    }

    pub fn frame_spec(&self, frame: usize) -> Result<FrameSpec> {
        read_json(&frame_dir(&self.root, frame).join("spec.json"))
    }

    pub fn load_frame(&self, frame: usize) -> Result<FrameData> {
        let dir = frame_dir(&self.root, frame);
        let images = (0..self.input_cameras.len())
            .map(|v| RgbImage::load_ppm(image_path(&self.root, frame, v)))
            .collect::<Result<_>>()?;
        Ok(FrameData {
            spec: self.frame_spec(frame)?,
            images,
            gt_texture: GaussianTexture::load(dir.join("gt_texture.bin"))?,
            gt_mesh: read_obj(dir.join("gt_mesh.obj"))?,
            coarse_mesh: read_obj(dir.join("coarse_mesh.obj"))?,
        })
    }
}
