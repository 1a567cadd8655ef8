//! Token embedding, the alternating registration-guided / grouped block
//! stack, and the UV output head.

use serde::{Deserialize, Serialize};

use super::attention::{Block, BlockCache};
use super::layers::Linear;
use super::tensor::Mat;
use super::tokenize::{uv_feature_width, InitSnapshot, IMAGE_PIXEL_CHANNELS};
use crate::correspondence::{CorrespondenceTable, TokenLayout};
use crate::error::{Error, Result};
use crate::synth::Rng;
use crate::texture::GAUSSIAN_CHANNELS;

/// Standard deviation of the initial UV positional embeddings.
pub const POS_EMB_STD: f64 = 0.02;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d: usize,
    pub heads: usize,
    pub guided_blocks: usize,
    pub grouped_blocks: usize,
    pub uv_size: usize,
    pub p_uv: usize,
    pub image_width: usize,
    pub image_height: usize,
    pub p_img: usize,
    pub k: usize,
    pub views: usize,
    pub lambda: f64,
    /// Positions enter and leave the network in multiples of this many
    /// meters.
    pub length_unit: f64,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d: 32,
            heads: 4,
            guided_blocks: 2,
            grouped_blocks: 2,
            uv_size: 64,
            p_uv: 8,
            image_width: 64,
            image_height: 64,
            p_img: 8,
            k: 16,
            views: 4,
            lambda: crate::correspondence::DEFAULT_LAMBDA,
            length_unit: 0.01,
            init_seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockKind {
    Guided,
    Grouped,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.d == 0 || self.heads == 0 || self.d % self.heads != 0 {
            return bad(format!(
                "d={} must be a positive multiple of heads={}",
                self.d, self.heads
            ));
        }
        if self.k == 0 || self.views == 0 {
            return bad("k and views must be positive".into());
        }
        if !(self.length_unit > 0.0) {
            return bad("length_unit must be positive".into());
        }
        self.layout()
            .validate()
            .map_err(|e| Error::Config(e.to_string()))
    }

    pub fn layout(&self) -> TokenLayout {
        TokenLayout {
            uv_height: self.uv_size,
            uv_width: self.uv_size,
            p_uv: self.p_uv,
            img_height: self.image_height,
            img_width: self.image_width,
            p_img: self.p_img,
            views: self.views,
        }
    }

    pub fn uv_tokens(&self) -> usize {
        self.layout().uv_tokens()
    }

    pub fn img_tokens_per_view(&self) -> usize {
        self.layout().img_tokens_per_view()
    }

    /// Blocks alternate starting with a registration-guided one; surplus
    /// blocks of either kind go last.
    pub fn block_kinds(&self) -> Vec<BlockKind> {
        let (mut g, mut r) = (self.guided_blocks, self.grouped_blocks);
        let mut out = Vec::with_capacity(g + r);
        while g + r > 0 {
            if g > 0 && (out.last() != Some(&BlockKind::Guided) || r == 0) {
                out.push(BlockKind::Guided);
                g -= 1;
            } else {
                out.push(BlockKind::Grouped);
                r -= 1;
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub img_proj: Linear,
    pub uv_proj: Linear,
    pub pos_emb: Mat,
    pub blocks: Vec<Block>,
    pub head: Linear,
    /// Linear path from the UV token inputs straight to the head output.
    /// Token width would otherwise cap the rank of the per-patch map.
    pub uv_skip: Linear,
}

/// Everything the forward pass needs for one frame.
#[derive(Clone, Debug)]
pub struct FrameInputs {
    /// One `tokens × 9·p_img²` matrix per view.
    pub img_feats: Vec<Mat>,
    /// `uv tokens × 6·p_uv²`.
    pub uv_feats: Mat,
    pub table: CorrespondenceTable,
    pub init: InitSnapshot,
}

/// Token rows of one attention group.
#[derive(Clone, Debug)]
struct GroupRun {
    rows: Vec<usize>,
    cache: BlockCache,
}

#[derive(Clone, Debug)]
enum BlockRun {
    Grouped(Vec<GroupRun>),
    Guided {
        groups: Vec<GroupRun>,
        counts: Vec<usize>,
    },
}

#[derive(Clone, Debug)]
pub struct ForwardCache {
    uv_in: Mat,
    uv_feats: Mat,
    img_feats: Vec<Mat>,
    runs: Vec<BlockRun>,
    final_uv: Mat,
}

fn round_f32(m: &mut Mat) {
    for v in &mut m.data {
        *v = *v as f32 as f64;
    }
}

impl Model {
    /// Xavier-initialised projections and blocks, zero output head and skip,
    /// small random positional embeddings. All values are `f32`-representable.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::keyed(&[config.init_seed, 0x30DE1]);
        let d = config.d;
        let (pu, pi) = (config.p_uv, config.p_img);
        let img_proj = Linear::xavier(IMAGE_PIXEL_CHANNELS * pi * pi, d, &mut rng);
        let uv_proj = Linear::xavier(uv_feature_width(pu) + d, d, &mut rng);
        let pos_emb = Mat::from_fn(config.uv_tokens(), d, |_, _| POS_EMB_STD * rng.normal());
        let blocks = config
            .block_kinds()
            .iter()
            .map(|_| Block::new(d, config.heads, &mut rng))
            .collect();
        let head = Linear::zeros(d, pu * pu * GAUSSIAN_CHANNELS);
        let uv_skip = Linear::zeros(uv_feature_width(pu), pu * pu * GAUSSIAN_CHANNELS);
        let mut m = Self {
            config,
            img_proj,
            uv_proj,
            pos_emb,
            blocks,
            head,
            uv_skip,
        };
        m.tensors_mut().into_iter().for_each(|(_, t)| round_f32(t));
        Ok(m)
    }

    /// Same shapes, every value zero (gradient accumulator).
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.tensors_mut().into_iter().for_each(|(_, t)| t.fill(0.0));
        z
    }

    /// Parameters in declaration order.
    pub fn tensors(&self) -> Vec<(String, &Mat)> {
        let mut out = vec![
            ("img_proj.w".to_string(), &self.img_proj.w),
            ("img_proj.b".to_string(), &self.img_proj.b),
            ("uv_proj.w".to_string(), &self.uv_proj.w),
            ("uv_proj.b".to_string(), &self.uv_proj.b),
            ("pos_emb".to_string(), &self.pos_emb),
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            let a = &b.attn;
            for (n, t) in [
                ("ln1.gain", &b.ln1.gain),
                ("ln1.bias", &b.ln1.bias),
                ("attn.q.w", &a.q.w),
                ("attn.q.b", &a.q.b),
                ("attn.k.w", &a.k.w),
                ("attn.k.b", &a.k.b),
                ("attn.v.w", &a.v.w),
                ("attn.v.b", &a.v.b),
                ("attn.o.w", &a.o.w),
                ("attn.o.b", &a.o.b),
                ("ln2.gain", &b.ln2.gain),
                ("ln2.bias", &b.ln2.bias),
                ("fc1.w", &b.fc1.w),
                ("fc1.b", &b.fc1.b),
                ("fc2.w", &b.fc2.w),
                ("fc2.b", &b.fc2.b),
            ] {
                out.push((format!("blocks.{i}.{n}"), t));
            }
        }
        out.push(("head.w".to_string(), &self.head.w));
        out.push(("head.b".to_string(), &self.head.b));
        out.push(("uv_skip.w".to_string(), &self.uv_skip.w));
        out.push(("uv_skip.b".to_string(), &self.uv_skip.b));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Mat)> {
        let mut out = vec![
            ("img_proj.w".to_string(), &mut self.img_proj.w),
            ("img_proj.b".to_string(), &mut self.img_proj.b),
            ("uv_proj.w".to_string(), &mut self.uv_proj.w),
            ("uv_proj.b".to_string(), &mut self.uv_proj.b),
            ("pos_emb".to_string(), &mut self.pos_emb),
        ];
        for (i, b) in self.blocks.iter_mut().enumerate() {
            let a = &mut b.attn;
            for (n, t) in [
                ("ln1.gain", &mut b.ln1.gain),
                ("ln1.bias", &mut b.ln1.bias),
                ("attn.q.w", &mut a.q.w),
                ("attn.q.b", &mut a.q.b),
                ("attn.k.w", &mut a.k.w),
                ("attn.k.b", &mut a.k.b),
                ("attn.v.w", &mut a.v.w),
                ("attn.v.b", &mut a.v.b),
                ("attn.o.w", &mut a.o.w),
                ("attn.o.b", &mut a.o.b),
                ("ln2.gain", &mut b.ln2.gain),
                ("ln2.bias", &mut b.ln2.bias),
                ("fc1.w", &mut b.fc1.w),
                ("fc1.b", &mut b.fc1.b),
                ("fc2.w", &mut b.fc2.w),
                ("fc2.b", &mut b.fc2.b),
            ] {
                out.push((format!("blocks.{i}.{n}"), t));
            }
        }
        out.push(("head.w".to_string(), &mut self.head.w));
        out.push(("head.b".to_string(), &mut self.head.b));
        out.push(("uv_skip.w".to_string(), &mut self.uv_skip.w));
        out.push(("uv_skip.b".to_string(), &mut self.uv_skip.b));
        out
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.data.len()).sum()
    }

    fn check_inputs(&self, x: &FrameInputs) -> Result<()> {
        let c = &self.config;
        let (n_uv, tpv) = (c.uv_tokens(), c.img_tokens_per_view());
        let mismatch = |m: &str| Err(Error::LayoutMismatch(m.into()));
        if x.img_feats.len() != c.views
            || x.img_feats
                .iter()
                .any(|f| f.rows != tpv || f.cols != self.img_proj.fan_in())
        {
            return mismatch("image features do not match the model layout");
        }
        if x.uv_feats.rows != n_uv || x.uv_feats.cols + c.d != self.uv_proj.fan_in() {
            return mismatch("UV features do not match the model layout");
        }
        if x.table.rows.len() != n_uv || x.table.views != c.views || x.table.tokens_per_view != tpv
        {
            return mismatch("correspondence table does not match the model layout");
        }
        if x.init.height != c.uv_size || x.init.width != c.uv_size {
            return mismatch("initial texture size differs from the model");
        }
        Ok(())
    }

    /// Embeds all tokens: UV rows first, then each view's image rows.
    fn embed(&self, x: &FrameInputs) -> (Mat, Mat) {
        let c = &self.config;
        let n_uv = c.uv_tokens();
        let f = x.uv_feats.cols;
        let uv_in = Mat::from_fn(n_uv, f + c.d, |r, k| {
            if k < f {
                x.uv_feats[(r, k)]
            } else {
                self.pos_emb[(r, k - f)]
            }
        });
        let uv_tok = self.uv_proj.forward(&uv_in);
        let mut state = Mat::zeros(n_uv + c.views * c.img_tokens_per_view(), c.d);
        state.data[..uv_tok.data.len()].copy_from_slice(&uv_tok.data);
        let mut off = uv_tok.data.len();
        for feats in &x.img_feats {
            let t = self.img_proj.forward(feats);
            state.data[off..off + t.data.len()].copy_from_slice(&t.data);
            off += t.data.len();
        }
        (state, uv_in)
    }

    /// Full forward pass returning the raw head output (`uv tokens ×
    /// p_uv²·14`).
    pub fn forward(&self, x: &FrameInputs) -> Result<(Mat, ForwardCache)> {
        self.check_inputs(x)?;
        let (mut state, uv_in) = self.embed(x);
        if !state.is_finite() {
            return Err(Error::NonFinite("token embeddings".into()));
        }
        let mut runs = Vec::with_capacity(self.blocks.len());
        for (bi, (block, kind)) in self
            .blocks
            .iter()
            .zip(self.config.block_kinds())
            .enumerate()
        {
            let (next, run) = match kind {
                BlockKind::Grouped => grouped_forward(
                    block,
                    &state,
                    grouped_groups(
                        self.config.uv_tokens(),
                        self.config.views,
                        self.config.img_tokens_per_view(),
                    ),
                ),
                BlockKind::Guided => guided_forward(
                    block,
                    &state,
                    guided_groups(&x.table, self.config.uv_tokens()),
                    self.config.uv_tokens(),
                ),
            };
            if !next.is_finite() {
                return Err(Error::NonFinite(format!("block {bi} output")));
            }
            state = next;
            runs.push(run);
        }
        let final_uv = state.gather_rows(&(0..self.config.uv_tokens()).collect::<Vec<_>>());
        let mut raw = self.head.forward(&final_uv);
        raw += &self.uv_skip.forward(&x.uv_feats);
        if !raw.is_finite() {
            return Err(Error::NonFinite("head output".into()));
        }
        Ok((
            raw,
            ForwardCache {
                uv_in,
                uv_feats: x.uv_feats.clone(),
                img_feats: x.img_feats.clone(),
                runs,
                final_uv,
            },
        ))
    }

    /// UV token states after the last block (before the head).
    pub fn encode(&self, x: &FrameInputs) -> Result<Mat> {
        Ok(self.forward(x)?.1.final_uv)
    }

    /// Backpropagates `d_raw` and accumulates into `grad`.
    pub fn backward(&self, cache: &ForwardCache, d_raw: &Mat, grad: &mut Model) {
        let c = &self.config;
        let n_uv = c.uv_tokens();
        let d_final = self.head.backward(&cache.final_uv, d_raw, &mut grad.head);
        self.uv_skip
            .accumulate(&cache.uv_feats, d_raw, &mut grad.uv_skip);
        let mut d_state = Mat::zeros(n_uv + c.views * c.img_tokens_per_view(), c.d);
        d_state.data[..d_final.data.len()].copy_from_slice(&d_final.data);
        for (bi, run) in cache.runs.iter().enumerate().rev() {
            let block = &self.blocks[bi];
            let gblock = &mut grad.blocks[bi];
            d_state = match run {
                BlockRun::Grouped(groups) => {
                    let mut dx = Mat::zeros(d_state.rows, d_state.cols);
                    for g in groups {
                        let dyg = d_state.gather_rows(&g.rows);
                        let dxg = block.backward(&g.cache, &dyg, gblock);
                        for (o, &r) in g.rows.iter().enumerate() {
                            dx.row_mut(r).copy_from_slice(dxg.row(o));
                        }
                    }
                    dx
                }
                BlockRun::Guided { groups, counts } => {
                    let mut dx = Mat::zeros(d_state.rows, d_state.cols);
                    for r in n_uv..d_state.rows {
                        if counts[r] == 0 {
                            dx.row_mut(r).copy_from_slice(d_state.row(r));
                        }
                    }
                    for g in groups {
                        let mut dyg = d_state.gather_rows(&g.rows);
                        for (o, &r) in g.rows.iter().enumerate().skip(1) {
                            let inv = 1.0 / counts[r] as f64;
                            dyg.row_mut(o).iter_mut().for_each(|v| *v *= inv);
                        }
                        let dxg = block.backward(&g.cache, &dyg, gblock);
                        for (o, &r) in g.rows.iter().enumerate() {
                            for (a, b) in dx.row_mut(r).iter_mut().zip(dxg.row(o)) {
                                *a += b;
                            }
                        }
                    }
                    dx
                }
            };
        }
        let d_uv_tok = d_state.gather_rows(&(0..n_uv).collect::<Vec<_>>());
        let d_uv_in = self
            .uv_proj
            .backward(&cache.uv_in, &d_uv_tok, &mut grad.uv_proj);
        let f = cache.uv_in.cols - c.d;
        for r in 0..n_uv {
            for k in 0..c.d {
                grad.pos_emb[(r, k)] += d_uv_in[(r, f + k)];
            }
        }
        let tpv = c.img_tokens_per_view();
        for (v, feats) in cache.img_feats.iter().enumerate() {
            let rows: Vec<usize> = (n_uv + v * tpv..n_uv + (v + 1) * tpv).collect();
            self.img_proj
                .accumulate(feats, &d_state.gather_rows(&rows), &mut grad.img_proj);
        }
    }
}

fn grouped_forward(block: &Block, state: &Mat, groups: Vec<Vec<usize>>) -> (Mat, BlockRun) {
    let mut out = state.clone();
    let mut runs = Vec::with_capacity(groups.len());
    for rows in groups {
        let (y, cache) = block.forward(&state.gather_rows(&rows));
        for (o, &r) in rows.iter().enumerate() {
            out.row_mut(r).copy_from_slice(y.row(o));
        }
        runs.push(GroupRun { rows, cache });
    }
    (out, BlockRun::Grouped(runs))
}

/// Runs each group independently; UV rows take their group's output, image
/// rows the mean over every group that contains them, in group order.
fn guided_forward(
    block: &Block,
    state: &Mat,
    groups: Vec<Vec<usize>>,
    n_uv: usize,
) -> (Mat, BlockRun) {
    let mut acc = Mat::zeros(state.rows, state.cols);
    let mut counts = vec![0usize; state.rows];
    let mut runs = Vec::with_capacity(groups.len());
    for rows in groups {
        let (y, cache) = block.forward(&state.gather_rows(&rows));
        for (o, &r) in rows.iter().enumerate() {
            for (a, b) in acc.row_mut(r).iter_mut().zip(y.row(o)) {
                *a += b;
            }
            counts[r] += 1;
        }
        runs.push(GroupRun { rows, cache });
    }
    let mut out = state.clone();
    for r in 0..state.rows {
        if counts[r] == 0 {
            continue;
        }
        let inv = 1.0 / counts[r] as f64;
        for (o, a) in out.row_mut(r).iter_mut().zip(acc.row(r)) {
            *o = if r < n_uv || counts[r] == 1 {
                *a
            } else {
                a * inv
            };
        }
    }
    (
        out,
        BlockRun::Guided {
            groups: runs,
            counts,
        },
    )
}

/// Groups of the registration-guided block: each UV token followed by its
/// selected image tokens (rows `n_uv + flat index`).
pub fn guided_groups(table: &CorrespondenceTable, n_uv: usize) -> Vec<Vec<usize>> {
    table
        .rows
        .iter()
        .enumerate()
        .map(|(t, row)| {
            std::iter::once(t)
                .chain(row.entries.iter().map(|e| n_uv + table.flat_index(e)))
                .collect()
        })
        .collect()
}

/// One group of all UV tokens, then one group per view. Empty groups are
/// dropped.
pub fn grouped_groups(n_uv: usize, views: usize, tokens_per_view: usize) -> Vec<Vec<usize>> {
    let mut g = vec![(0..n_uv).collect::<Vec<_>>()];
    for v in 0..views {
        g.push((n_uv + v * tokens_per_view..n_uv + (v + 1) * tokens_per_view).collect());
    }
    g.retain(|r| !r.is_empty());
    g
}

/// Registration-guided block over a token state (UV rows first, then image
/// rows view-major).
pub fn reg_guided_attention_block(
    block: &Block,
    state: &Mat,
    table: &CorrespondenceTable,
    n_uv: usize,
) -> Mat {
    guided_forward(block, state, guided_groups(table, n_uv), n_uv).0
}

pub fn grouped_attention_block(
    block: &Block,
    state: &Mat,
    n_uv: usize,
    views: usize,
    tokens_per_view: usize,
) -> Mat {
    grouped_forward(block, state, grouped_groups(n_uv, views, tokens_per_view)).0
}
