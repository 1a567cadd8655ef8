//! Checkpoint file: a text header terminated by `end`, then little-endian
//! `f32` blocks for every parameter tensor in declaration order, followed by
//! the Adam moments when present.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use super::model::{Model, ModelConfig};
use super::train::{Adam, TrainConfig};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &str = "splatex-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    /// Completed optimisation steps.
    pub step: u64,
    pub adam: Option<Adam>,
    pub train: Option<TrainConfig>,
}

fn write_block(w: &mut impl Write, m: &Model) -> Result<()> {
    let mut buf = Vec::with_capacity(m.param_count() * 4);
    for (_, t) in m.tensors() {
        for v in &t.data {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

fn read_block(r: &mut impl Read, m: &mut Model) -> Result<()> {
    let mut buf = vec![0u8; m.param_count() * 4];
    r.read_exact(&mut buf)
        .map_err(|e| Error::format("checkpoint", format!("truncated tensor data: {e}")))?;
    let mut it = buf
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64);
    for (_, t) in m.tensors_mut() {
        t.data
            .iter_mut()
            .for_each(|v| *v = it.next().unwrap_or(0.0));
    }
    Ok(())
}

impl Checkpoint {
    pub fn write(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}")?;
        writeln!(w, "model {}", serde_json::to_string(&self.model.config)?)?;
        if let Some(t) = &self.train {
            writeln!(w, "train {}", serde_json::to_string(t)?)?;
        }
        writeln!(w, "step {}", self.step)?;
        writeln!(w, "params {}", self.model.param_count())?;
        if let Some(a) = &self.adam {
            writeln!(w, "adam {}", a.t)?;
        }
        writeln!(w, "end")?;
        write_block(&mut w, &self.model)?;
        if let Some(a) = &self.adam {
            write_block(&mut w, &a.m)?;
            write_block(&mut w, &a.v)?;
        }
        Ok(())
    }

    pub fn read(r: impl Read) -> Result<Self> {
        let bad = |m: String| Error::format("checkpoint", m);
        let mut r = BufReader::new(r);
        let mut line = String::new();
        r.read_line(&mut line)?;
        let mut head = line.split_whitespace();
        if head.next() != Some(CHECKPOINT_MAGIC) {
            return Err(bad("missing magic line".into()));
        }
        let version: u32 = head
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| bad("missing version".into()))?;
        if version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let (mut config, mut train, mut step, mut params, mut adam_t) =
            (None, None, 0u64, None, None);
        loop {
            line.clear();
            if r.read_line(&mut line)? == 0 {
                return Err(bad("header not terminated".into()));
            }
            let l = line.trim_end_matches('\n');
            let (key, value) = l.split_once(' ').unwrap_or((l, ""));
            match key {
                "end" => break,
                "model" => config = Some(serde_json::from_str::<ModelConfig>(value)?),
                "train" => train = Some(serde_json::from_str::<TrainConfig>(value)?),
                "step" => {
                    step = value
                        .parse()
                        .map_err(|_| bad(format!("bad step {value:?}")))?
                }
                "params" => {
                    params = Some(
                        value
                            .parse::<usize>()
                            .map_err(|_| bad(format!("bad params {value:?}")))?,
                    )
                }
                "adam" => {
                    adam_t = Some(
                        value
                            .parse::<u64>()
                            .map_err(|_| bad(format!("bad adam {value:?}")))?,
                    )
                }
                other => return Err(bad(format!("unknown header key {other:?}"))),
            }
        }
        let config = config.ok_or_else(|| bad("missing model line".into()))?;
        let mut model = Model::new(config)?;
        if params != Some(model.param_count()) {
            return Err(bad(format!(
                "parameter count {params:?} differs from the model's {}",
                model.param_count()
            )));
        }
        read_block(&mut r, &mut model)?;
        let adam = match adam_t {
            Some(t) => {
                let mut a = Adam::new(&model);
                a.t = t;
                read_block(&mut r, &mut a.m)?;
                read_block(&mut r, &mut a.v)?;
                Some(a)
            }
            None => None,
        };
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(bad("trailing data".into()));
        }
        Ok(Self {
            model,
            step,
            adam,
            train,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read(std::fs::File::open(path)?)
    }
}
