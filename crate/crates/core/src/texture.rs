//! UV-space textures: the generic [`BakedTexture`] container and the
//! 14-channel [`GaussianTexture`].
//!
//! On disk both use the same layout: an 8-line ASCII header followed by
//! little-endian `f32` texel data (row-major, channels interleaved) and one
//! validity byte per texel.
//!
//! ```text
//! SPLATEX-TEXTURE
//! version 1
//! height <H>
//! width <W>
//! channels <C>
//! kind <position|rgb|gaussian|other>
//! validity_offset <byte offset of the validity bytes, counted from the end of the header>
//! end_header
//! ```

use std::io::{BufRead, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::math::{UnitQuaternion, Vec3};

/// What the channels of a [`BakedTexture`] mean.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TextureKind {
    Position,
    Rgb,
    Gaussian,
    Other,
}

impl TextureKind {
    fn as_str(self) -> &'static str {
        match self {
            TextureKind::Position => "position",
            TextureKind::Rgb => "rgb",
            TextureKind::Gaussian => "gaussian",
            TextureKind::Other => "other",
        }
    }

    fn parse(s: &str) -> Self {
        match s {
            "position" => TextureKind::Position,
            "rgb" => TextureKind::Rgb,
            "gaussian" => TextureKind::Gaussian,
            _ => TextureKind::Other,
        }
    }
}

/// Dense `H×W×C` grid with a per-texel validity flag. Invalid texels hold
/// a sentinel value and are skipped by losses and PCA.
#[derive(Clone, Debug, PartialEq)]
pub struct BakedTexture {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub kind: TextureKind,
    pub data: Vec<f64>,
    pub valid: Vec<bool>,
}

impl BakedTexture {
    pub fn new_invalid(
        height: usize,
        width: usize,
        channels: usize,
        kind: TextureKind,
        sentinel: f64,
    ) -> Self {
        Self {
            height,
            width,
            channels,
            kind,
            data: vec![sentinel; height * width * channels],
            valid: vec![false; height * width],
        }
    }

    #[inline]
    pub fn texel(&self, i: usize, j: usize) -> &[f64] {
        let o = (i * self.width + j) * self.channels;
        &self.data[o..o + self.channels]
    }

    #[inline]
    pub fn texel_mut(&mut self, i: usize, j: usize) -> &mut [f64] {
        let o = (i * self.width + j) * self.channels;
        &mut self.data[o..o + self.channels]
    }

    #[inline]
    pub fn is_valid(&self, i: usize, j: usize) -> bool {
        self.valid[i * self.width + j]
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    /// Texel-centre UV of texel `(i, j)`: `((j + 0.5)/W, (i + 0.5)/H)`.
    pub fn texel_uv(&self, i: usize, j: usize) -> (f64, f64) {
        texel_center_uv(i, j, self.height, self.width)
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let payload = self.data.len() * 4;
        write!(
            w,
            "SPLATEX-TEXTURE\nversion 1\nheight {}\nwidth {}\nchannels {}\nkind {}\nvalidity_offset {}\nend_header\n",
            self.height,
            self.width,
            self.channels,
            self.kind.as_str(),
            payload
        )?;
        let mut buf = Vec::with_capacity(payload + self.valid.len());
        for v in &self.data {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        buf.extend(self.valid.iter().map(|v| *v as u8));
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from(r: impl Read) -> Result<Self> {
        let mut r = std::io::BufReader::new(r);
        let mut lines = Vec::with_capacity(8);
        for _ in 0..8 {
            let mut line = String::new();
            if r.read_line(&mut line)? == 0 {
                return Err(Error::format("texture", "truncated header"));
            }
            lines.push(line.trim_end().to_owned());
        }
        if lines[0] != "SPLATEX-TEXTURE" || lines[7] != "end_header" {
            return Err(Error::format("texture", "bad magic"));
        }
        let field = |idx: usize, key: &str| -> Result<&str> {
            lines[idx].strip_prefix(key).map(str::trim).ok_or_else(|| {
                Error::format(
                    "texture",
                    format!("expected `{key}` on header line {}", idx + 1),
                )
            })
        };
        let num = |idx: usize, key: &str| -> Result<usize> {
            field(idx, key)?
                .parse()
                .map_err(|_| Error::format("texture", format!("bad `{key}`")))
        };
        if num(1, "version")? != 1 {
            return Err(Error::format("texture", "unsupported version"));
        }
        let (height, width, channels) = (num(2, "height")?, num(3, "width")?, num(4, "channels")?);
        let kind = TextureKind::parse(field(5, "kind")?);
        let offset = num(6, "validity_offset")?;
        let n = height * width * channels;
        if offset != n * 4 {
            return Err(Error::format(
                "texture",
                "validity offset does not match dimensions",
            ));
        }
        let mut bytes = vec![0u8; offset + height * width];
        r.read_exact(&mut bytes)?;
        let data = bytes[..offset]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        let valid = bytes[offset..].iter().map(|b| *b != 0).collect();
        Ok(Self {
            height,
            width,
            channels,
            kind,
            data,
            valid,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(std::fs::File::open(path)?)
    }
}

pub fn texel_center_uv(i: usize, j: usize, height: usize, width: usize) -> (f64, f64) {
    (
        (j as f64 + 0.5) / width as f64,
        (i as f64 + 0.5) / height as f64,
    )
}

/// Number of channels in a Gaussian texel.
pub const GAUSSIAN_CHANNELS: usize = 14;

/// Channel offsets inside the 14-vector: colour, opacity, position, scale, rotation.
pub mod channel {
    pub const COLOR: usize = 0;
    pub const OPACITY: usize = 3;
    pub const POSITION: usize = 4;
    pub const SCALE: usize = 7;
    pub const ROTATION: usize = 10;
}

/// Attribute class of each channel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Attribute {
    Color,
    Opacity,
    Position,
    Scale,
    Rotation,
}

impl Attribute {
    pub const ALL: [Attribute; 5] = [
        Attribute::Color,
        Attribute::Opacity,
        Attribute::Position,
        Attribute::Scale,
        Attribute::Rotation,
    ];

    pub fn of_channel(c: usize) -> Attribute {
        match c {
            0..=2 => Attribute::Color,
            3 => Attribute::Opacity,
            4..=6 => Attribute::Position,
            7..=9 => Attribute::Scale,
            _ => Attribute::Rotation,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// One Gaussian splat.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Texel {
    pub color: [f64; 3],
    pub opacity: f64,
    pub position: [f64; 3],
    pub scale: [f64; 3],
    /// `(w, x, y, z)`, unit norm.
    pub rotation: [f64; 4],
}

impl Default for Texel {
    fn default() -> Self {
        Self {
            color: [0.5; 3],
            opacity: 0.5,
            position: [0.0; 3],
            scale: [1e-3; 3],
            rotation: [1.0, 0.0, 0.0, 0.0],
        }
    }
}

impl Texel {
    pub fn to_channels(&self) -> [f64; GAUSSIAN_CHANNELS] {
        let mut c = [0.0; GAUSSIAN_CHANNELS];
        c[0..3].copy_from_slice(&self.color);
        c[3] = self.opacity;
        c[4..7].copy_from_slice(&self.position);
        c[7..10].copy_from_slice(&self.scale);
        c[10..14].copy_from_slice(&self.rotation);
        c
    }

    pub fn from_channels(c: &[f64]) -> Self {
        Self {
            color: [c[0], c[1], c[2]],
            opacity: c[3],
            position: [c[4], c[5], c[6]],
            scale: [c[7], c[8], c[9]],
            rotation: [c[10], c[11], c[12], c[13]],
        }
    }

    pub fn position_vec(&self) -> Vec3 {
        Vec3::from(self.position)
    }

    pub fn quat(&self) -> UnitQuaternion {
        UnitQuaternion::from_array(self.rotation)
    }
}

/// `H_uv × W_uv` grid of Gaussian splats with a validity mask. Texel `(i, j)`
/// is the same surface point in every frame that shares the UV layout.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianTexture {
    pub height: usize,
    pub width: usize,
    pub texels: Vec<Texel>,
    pub valid: Vec<bool>,
}

impl GaussianTexture {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            texels: vec![Texel::default(); height * width],
            valid: vec![false; height * width],
        }
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        i * self.width + j
    }

    pub fn texel(&self, i: usize, j: usize) -> &Texel {
        &self.texels[i * self.width + j]
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    pub fn same_layout(&self, other: &GaussianTexture) -> bool {
        self.height == other.height && self.width == other.width && self.valid == other.valid
    }

    /// Checks the value ranges of every valid texel: colour in [0,1],
    /// opacity in (0,1), positive scale, unit rotation, finite position.
    pub fn check_invariants(&self) -> Result<()> {
        for (n, (t, v)) in self.texels.iter().zip(&self.valid).enumerate() {
            if !*v {
                continue;
            }
            let qn = t.rotation.iter().map(|x| x * x).sum::<f64>().sqrt();
            let ok = t.color.iter().all(|c| (0.0..=1.0).contains(c))
                && t.opacity > 0.0
                && t.opacity < 1.0
                && t.scale.iter().all(|s| *s > 0.0 && s.is_finite())
                && t.position.iter().all(|p| p.is_finite())
                && (qn - 1.0).abs() < 1e-6;
            if !ok {
                return Err(Error::InvalidInput(format!(
                    "texel {n} violates Gaussian ranges: {t:?}"
                )));
            }
        }
        Ok(())
    }

    pub fn to_baked(&self) -> BakedTexture {
        let mut b = BakedTexture::new_invalid(
            self.height,
            self.width,
            GAUSSIAN_CHANNELS,
            TextureKind::Gaussian,
            0.0,
        );
        for (n, t) in self.texels.iter().enumerate() {
            b.data[n * GAUSSIAN_CHANNELS..(n + 1) * GAUSSIAN_CHANNELS]
                .copy_from_slice(&t.to_channels());
        }
        b.valid.clone_from(&self.valid);
        b
    }

    pub fn from_baked(b: &BakedTexture) -> Result<Self> {
        if b.channels != GAUSSIAN_CHANNELS {
            return Err(Error::LayoutMismatch(format!(
                "expected 14 channels, found {}",
                b.channels
            )));
        }
        let texels = b
            .data
            .chunks_exact(GAUSSIAN_CHANNELS)
            .map(Texel::from_channels)
            .collect();
        Ok(Self {
            height: b.height,
            width: b.width,
            texels,
            valid: b.valid.clone(),
        })
    }

    /// Positions as a 3-channel position texture sharing this validity mask.
    pub fn position_texture(&self) -> BakedTexture {
        let mut b =
            BakedTexture::new_invalid(self.height, self.width, 3, TextureKind::Position, 0.0);
        for (n, t) in self.texels.iter().enumerate() {
            b.data[n * 3..n * 3 + 3].copy_from_slice(&t.position);
        }
        b.valid.clone_from(&self.valid);
        b
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_baked().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_baked(&BakedTexture::load(path)?)
    }
}
