//! Correspondence scores between UV tokens and image tokens, and the top-k
//! selection that forms the sparse attention pattern.
//!
//! For a UV token, its region of interest (RoI) in a view is the set of pixels
//! whose rasterised UV falls inside the token's texture patch. The score of an
//! image token box `B` is
//!
//! ```text
//! S = |RoI ∩ B| / |B| + λ · |RoI| / |bbox(RoI) ∪ B|
//! ```
//!
//! with all quantities measured in pixels and the union taken as the tight
//! enclosing rectangle.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::math::Camera;
use crate::mesh::{rasterize, RasterBuffer, TopologyMesh};

/// Default weight of the vicinity term.
pub const DEFAULT_LAMBDA: f64 = 0.1;

/// Token grids for the UV texture and the input views.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TokenLayout {
    pub uv_height: usize,
    pub uv_width: usize,
    pub p_uv: usize,
    pub img_height: usize,
    pub img_width: usize,
    pub p_img: usize,
    pub views: usize,
}

impl TokenLayout {
    pub fn validate(&self) -> Result<()> {
        if self.p_uv == 0 || self.p_img == 0 {
            return Err(Error::InvalidInput("patch sizes must be ≥ 1".into()));
        }
        if self.uv_height % self.p_uv != 0 || self.uv_width % self.p_uv != 0 {
            return Err(Error::DimensionMismatch(format!(
                "uv texture {}×{} not divisible by p_uv={}",
                self.uv_height, self.uv_width, self.p_uv
            )));
        }
        if self.img_height % self.p_img != 0 || self.img_width % self.p_img != 0 {
            return Err(Error::DimensionMismatch(format!(
                "image {}×{} not divisible by p_img={}",
                self.img_height, self.img_width, self.p_img
            )));
        }
        Ok(())
    }

    pub fn uv_grid(&self) -> (usize, usize) {
        (self.uv_height / self.p_uv, self.uv_width / self.p_uv)
    }

    pub fn uv_tokens(&self) -> usize {
        let (h, w) = self.uv_grid();
        h * w
    }

    pub fn img_grid(&self) -> (usize, usize) {
        (self.img_height / self.p_img, self.img_width / self.p_img)
    }

    pub fn img_tokens_per_view(&self) -> usize {
        let (h, w) = self.img_grid();
        h * w
    }

    /// UV token containing `(u, v)`. Token ranges are half-open, except that
    /// the last row/column also takes `u = 1` / `v = 1`.
    pub fn uv_token_of(&self, u: f64, v: f64) -> Option<usize> {
        let (th, tw) = self.uv_grid();
        if !(0.0..=1.0).contains(&u) || !(0.0..=1.0).contains(&v) {
            return None;
        }
        let tj = ((u * tw as f64).floor() as usize).min(tw - 1);
        let ti = ((v * th as f64).floor() as usize).min(th - 1);
        Some(ti * tw + tj)
    }

    /// Pixel rectangle of image token `t` (raster order within a view).
    pub fn img_token_box(&self, t: usize) -> PixelRect {
        let (_, w) = self.img_grid();
        let (ti, tj) = (t / w, t % w);
        PixelRect {
            x0: tj * self.p_img,
            y0: ti * self.p_img,
            x1: (tj + 1) * self.p_img - 1,
            y1: (ti + 1) * self.p_img - 1,
        }
    }
}

/// Inclusive pixel rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PixelRect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl PixelRect {
    pub fn area(&self) -> usize {
        (self.x1 - self.x0 + 1) * (self.y1 - self.y0 + 1)
    }

    pub fn union(&self, o: &PixelRect) -> PixelRect {
        PixelRect {
            x0: self.x0.min(o.x0),
            y0: self.y0.min(o.y0),
            x1: self.x1.max(o.x1),
            y1: self.y1.max(o.y1),
        }
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && x <= self.x1 && y >= self.y0 && y <= self.y1
    }
}

/// Pixel set of one UV token in one view.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionOfInterest {
    pub width: usize,
    pub height: usize,
    pub bitmap: Vec<bool>,
    pub pixel_count: usize,
    pub bbox: Option<PixelRect>,
}

impl RegionOfInterest {
    pub fn from_pixels(
        width: usize,
        height: usize,
        pixels: impl IntoIterator<Item = (usize, usize)>,
    ) -> Self {
        let mut bitmap = vec![false; width * height];
        for (x, y) in pixels {
            bitmap[y * width + x] = true;
        }
        Self::from_bitmap(width, height, bitmap)
    }

    pub fn from_bitmap(width: usize, height: usize, bitmap: Vec<bool>) -> Self {
        let mut count = 0;
        let mut bbox: Option<PixelRect> = None;
        for (i, _) in bitmap.iter().enumerate().filter(|(_, b)| **b) {
            count += 1;
            let (x, y) = (i % width, i / width);
            let px = PixelRect {
                x0: x,
                y0: y,
                x1: x,
                y1: y,
            };
            bbox = Some(bbox.map_or(px, |b| b.union(&px)));
        }
        Self {
            width,
            height,
            bitmap,
            pixel_count: count,
            bbox,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.pixel_count == 0
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        self.bitmap[y * self.width + x]
    }
}

/// RoI of UV token `token` in a single view.
pub fn compute_roi(token: usize, layout: &TokenLayout, raster: &RasterBuffer) -> RegionOfInterest {
    let bitmap = (0..raster.face.len())
        .map(|i| {
            raster.covered(i) && layout.uv_token_of(raster.uv[i][0], raster.uv[i][1]) == Some(token)
        })
        .collect();
    RegionOfInterest::from_bitmap(raster.width, raster.height, bitmap)
}

pub fn correspondence_score(roi: &RegionOfInterest, image_box: &PixelRect, lambda: f64) -> f64 {
    let Some(bbox) = roi.bbox else { return 0.0 };
    let mut inter = 0usize;
    for y in image_box.y0..=image_box.y1.min(roi.height - 1) {
        for x in image_box.x0..=image_box.x1.min(roi.width - 1) {
            inter += roi.contains(x, y) as usize;
        }
    }
    score_from_counts(
        inter,
        image_box.area(),
        roi.pixel_count,
        bbox.union(image_box).area(),
        lambda,
    )
}

#[inline]
fn score_from_counts(
    inter: usize,
    box_area: usize,
    roi_count: usize,
    encomp_area: usize,
    lambda: f64,
) -> f64 {
    inter as f64 / box_area as f64 + lambda * roi_count as f64 / encomp_area as f64
}

/// One selected image token for a UV token.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Correspondence {
    pub view: u32,
    pub token: u32,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TableRow {
    /// Sorted by score descending, ties by (view, token) ascending.
    pub entries: Vec<Correspondence>,
    /// No view shows any pixel of this UV token.
    pub unobserved: bool,
}

/// Sparse attention pattern: one row per UV token.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrespondenceTable {
    pub k: usize,
    pub views: usize,
    pub tokens_per_view: usize,
    pub rows: Vec<TableRow>,
}

impl CorrespondenceTable {
    /// Flat image-token index `view · tokens_per_view + token`.
    pub fn flat_index(&self, c: &Correspondence) -> usize {
        c.view as usize * self.tokens_per_view + c.token as usize
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("uv_token,rank,view,img_token,score\n");
        for (t, row) in self.rows.iter().enumerate() {
            for (r, c) in row.entries.iter().enumerate() {
                let _ = writeln!(s, "{t},{r},{},{},{:.17e}", c.view, c.token, c.score);
            }
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Top-`k` of `scores` laid out view-major (`view · tokens_per_view + token`).
pub fn select_topk(scores: &[f64], tokens_per_view: usize, k: usize) -> Vec<Correspondence> {
    assert!(k >= 1, "k must be at least 1");
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    let cmp = |a: &usize, b: &usize| scores[*b].total_cmp(&scores[*a]).then(a.cmp(b));
    let k = k.min(idx.len());
    if k < idx.len() {
        idx.select_nth_unstable_by(k - 1, cmp);
        idx.truncate(k);
    }
    idx.sort_unstable_by(cmp);
    idx.into_iter()
        .map(|i| Correspondence {
            view: (i / tokens_per_view) as u32,
            token: (i % tokens_per_view) as u32,
            score: scores[i],
        })
        .collect()
}

/// Rasterises `mesh` into every camera and builds the table.
pub fn build_table(
    mesh: &TopologyMesh,
    cameras: &[Camera],
    layout: &TokenLayout,
    k: usize,
    lambda: f64,
) -> Result<CorrespondenceTable> {
    let rasters: Vec<RasterBuffer> = cameras.iter().map(|c| rasterize(mesh, c)).collect();
    build_table_from_rasters(&rasters, layout, k, lambda)
}

pub fn build_table_from_rasters(
    rasters: &[RasterBuffer],
    layout: &TokenLayout,
    k: usize,
    lambda: f64,
) -> Result<CorrespondenceTable> {
    layout.validate()?;
    if k == 0 {
        return Err(Error::InvalidInput("k must be at least 1".into()));
    }
    if rasters.len() != layout.views {
        return Err(Error::DimensionMismatch(format!(
            "{} rasters for {} views",
            rasters.len(),
            layout.views
        )));
    }
    for rb in rasters {
        if rb.width != layout.img_width || rb.height != layout.img_height {
            return Err(Error::DimensionMismatch(
                "raster size differs from token layout".into(),
            ));
        }
    }
    let n_uv = layout.uv_tokens();
    let tpv = layout.img_tokens_per_view();
    let (_, img_w) = layout.img_grid();
    let box_area = layout.p_img * layout.p_img;
    let mut scores = vec![vec![0.0f64; layout.views * tpv]; n_uv];
    let mut observed = vec![false; n_uv];

    for (v, rb) in rasters.iter().enumerate() {
        // Bin covered pixels by UV token.
        let mut pixels: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n_uv];
        for i in 0..rb.face.len() {
            if !rb.covered(i) {
                continue;
            }
            if let Some(t) = layout.uv_token_of(rb.uv[i][0], rb.uv[i][1]) {
                pixels[t].push((i % rb.width, i / rb.width));
            }
        }
        let mut hist = vec![0usize; tpv];
        for (t, px) in pixels.iter().enumerate() {
            if px.is_empty() {
                continue;
            }
            observed[t] = true;
            hist.fill(0);
            let mut bbox = PixelRect {
                x0: px[0].0,
                y0: px[0].1,
                x1: px[0].0,
                y1: px[0].1,
            };
            for &(x, y) in px {
                hist[(y / layout.p_img) * img_w + x / layout.p_img] += 1;
                bbox = bbox.union(&PixelRect {
                    x0: x,
                    y0: y,
                    x1: x,
                    y1: y,
                });
            }
            let row = &mut scores[t][v * tpv..(v + 1) * tpv];
            for (c, s) in row.iter_mut().enumerate() {
                let encomp = bbox.union(&layout.img_token_box(c)).area();
                *s = score_from_counts(hist[c], box_area, px.len(), encomp, lambda);
            }
        }
    }
    let rows = scores
        .iter()
        .zip(&observed)
        .map(|(s, obs)| TableRow {
            entries: select_topk(s, tpv, k),
            unobserved: !obs,
        })
        .collect();
    Ok(CorrespondenceTable {
        k,
        views: layout.views,
        tokens_per_view: tpv,
        rows,
    })
}
