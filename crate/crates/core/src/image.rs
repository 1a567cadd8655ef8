//! RGB images in `[0, 1]` and binary PPM (P6, 8-bit) I/O.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    /// Row-major, 3 interleaved channels.
    pub data: Vec<f64>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height * 3],
        }
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let mut img = Self::new(width, height);
        for px in img.data.chunks_exact_mut(3) {
            px.copy_from_slice(&rgb);
        }
        img
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let o = (y * self.width + x) * 3;
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let o = (y * self.width + x) * 3;
        self.data[o..o + 3].copy_from_slice(&rgb);
    }

    /// Bilinear lookup at continuous pixel coordinates (pixel centres at
    /// integer + 0.5), clamped at the borders.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> [f64; 3] {
        let fx = (x - 0.5).clamp(0.0, (self.width - 1) as f64);
        let fy = (y - 0.5).clamp(0.0, (self.height - 1) as f64);
        let x0 = fx.floor() as usize;
        let y0 = fy.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let (ax, ay) = (fx - x0 as f64, fy - y0 as f64);
        let mut out = [0.0; 3];
        let p00 = self.pixel(x0, y0);
        let p01 = self.pixel(x1, y0);
        let p10 = self.pixel(x0, y1);
        let p11 = self.pixel(x1, y1);
        for c in 0..3 {
            let top = p00[c] + ax * (p01[c] - p00[c]);
            let bot = p10[c] + ax * (p11[c] - p10[c]);
            out[c] = top + ay * (bot - top);
        }
        out
    }

    /// Rounds every value to the nearest 8-bit level, matching what a PPM
    /// round trip produces.
    pub fn quantize(&mut self) {
        for v in &mut self.data {
            *v = to_u8(*v) as f64 / 255.0;
        }
    }

    pub fn write_ppm(&self, mut w: impl Write) -> Result<()> {
        write!(w, "P6\n{} {}\n255\n", self.width, self.height)?;
        let bytes: Vec<u8> = self.data.iter().map(|v| to_u8(*v)).collect();
        w.write_all(&bytes)?;
        Ok(())
    }

    pub fn read_ppm(r: impl Read) -> Result<Self> {
        let mut r = BufReader::new(r);
        let tokens = read_pnm_header(&mut r, 4)?;
        if tokens[0] != "P6" {
            return Err(Error::format("ppm", "expected P6 magic"));
        }
        let parse = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::format("ppm", "bad header number"))
        };
        let (width, height, maxval) = (parse(&tokens[1])?, parse(&tokens[2])?, parse(&tokens[3])?);
        if maxval != 255 {
            return Err(Error::format("ppm", "only 8-bit PPM is supported"));
        }
        let mut bytes = vec![0u8; width * height * 3];
        r.read_exact(&mut bytes)?;
        Ok(Self {
            width,
            height,
            data: bytes.iter().map(|b| *b as f64 / 255.0).collect(),
        })
    }

    pub fn save_ppm(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write_ppm(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load_ppm(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_ppm(std::fs::File::open(path)?)
    }
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Reads `n` whitespace-separated header tokens of a binary PNM file
/// (skipping `#` comments) plus the single whitespace byte that follows.
pub(crate) fn read_pnm_header(r: &mut impl BufRead, n: usize) -> Result<Vec<String>> {
    let mut tokens = Vec::with_capacity(n);
    let mut cur = String::new();
    let mut byte = [0u8; 1];
    let mut in_comment = false;
    while tokens.len() < n {
        if r.read(&mut byte)? == 0 {
            return Err(Error::format("pnm", "truncated header"));
        }
        let c = byte[0] as char;
        if in_comment {
            in_comment = c != '\n';
            continue;
        }
        if c == '#' {
            in_comment = true;
        } else if c.is_ascii_whitespace() {
            if !cur.is_empty() {
                tokens.push(std::mem::take(&mut cur));
            }
        } else {
            cur.push(c);
        }
    }
    Ok(tokens)
}
