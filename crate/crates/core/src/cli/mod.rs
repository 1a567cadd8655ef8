//! Command-line front end: argument parsing, config resolution and echo,
//! and exit-code mapping (0 success, 2 config, 3 data, 4 numeric).

mod commands;
mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

pub use commands::{
    adapt_model_to_dataset, checkpoint_name, cmd_avatar, cmd_bench_attention, cmd_edit, cmd_eval,
    cmd_gen_data, cmd_infer, cmd_train, AvatarConfig, AvatarReport, AvatarSweepRow, EditConfig,
    EditInputs, EditOp, EvalConfig, EvalReport, FrameEval, InferConfig, EDITED_BIN, EDITED_PLY,
    FINAL_CHECKPOINT, GAUSSIANS_BIN, GAUSSIANS_PLY, GEM_MODEL, LOSS_CSV,
};
pub use config::{apply_override, resolve};

use crate::error::Result;
use crate::synth::GenConfig;
use crate::transformer::{bench_csv, BenchConfig, TrainConfig};

#[derive(Parser, Debug)]
#[command(
    name = "splatex",
    version,
    about = "Gaussian-splat texture prediction, avatars and editing"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct ConfigArgs {
    /// JSON config file layered over the defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dotted override, e.g. `--set model.d=64`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic multi-view dataset.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train the texture predictor on a dataset.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from a checkpoint; its stored training config is used.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Predict one frame's Gaussian texture and export it.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Held-out image metrics and mesh distances as JSON.
    Eval {
        /// Without a checkpoint the ground-truth textures are evaluated.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        dataset: PathBuf,
        /// Metrics JSON path.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Fit a linear avatar to one identity's frames.
    Avatar {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// 8-bit PGM over the UV grid; set texels keep mean colour, opacity and scale.
        #[arg(long)]
        static_mask: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Interpolate, region-swap or expression-transfer Gaussian textures.
    Edit {
        #[arg(value_enum)]
        op: EditOp,
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long)]
        c: Option<PathBuf>,
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Time dense vs registration-guided attention blocks across view counts.
    BenchAttention {
        /// CSV path; the table is also printed.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

fn echo<T: Serialize>(command: &str, paths: serde_json::Value, config: &T) -> Result<()> {
    let line = json!({ "command": command, "paths": paths, "config": config });
    println!("config {}", serde_json::to_string(&line)?);
    Ok(())
}

fn load<T: Serialize + serde::de::DeserializeOwned + Default>(c: &ConfigArgs) -> Result<T> {
    resolve(c.config.as_deref(), &c.set)
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::GenData { out, cfg } => {
            let config: GenConfig = load(&cfg)?;
            echo("gen-data", json!({ "out": out }), &config)?;
            let manifest = cmd_gen_data(&config, &out)?;
            println!("wrote {} files", manifest.len());
        }
        Command::Train {
            dataset,
            out,
            resume,
            cfg,
        } => {
            let config: TrainConfig = load(&cfg)?;
            echo(
                "train",
                json!({ "dataset": dataset, "out": out, "resume": resume }),
                &config,
            )?;
            let t = cmd_train(&config, &dataset, &out, resume.as_deref())?;
            println!("trained to step {}", t.step);
        }
        Command::Infer {
            checkpoint,
            dataset,
            out,
            cfg,
        } => {
            let config: InferConfig = load(&cfg)?;
            echo(
                "infer",
                json!({ "checkpoint": checkpoint, "dataset": dataset, "out": out }),
                &config,
            )?;
            let g = cmd_infer(&config, &checkpoint, &dataset, &out)?;
            println!("wrote {} splats", g.valid_count());
        }
        Command::Eval {
            checkpoint,
            dataset,
            out,
            cfg,
        } => {
            let config: EvalConfig = load(&cfg)?;
            echo(
                "eval",
                json!({ "checkpoint": checkpoint, "dataset": dataset, "out": out }),
                &config,
            )?;
            let report = cmd_eval(&config, checkpoint.as_deref(), &dataset)?;
            commands::write_report(&out, &report)?;
            let (m, g) = (report.mean_image, report.mean_geometry);
            println!(
                "psnr {:.3} ssim {:.4} l1 {:.5} l2 {:.6} | p2p {:.3} mm p2s {:.3} mm (coarse p2p {:.3} p2s {:.3})",
                m.psnr, m.ssim, m.l1, m.l2, g.pred_p2p_mm, g.pred_p2s_mm, g.coarse_p2p_mm, g.coarse_p2s_mm
            );
        }
        Command::Avatar {
            dataset,
            out,
            static_mask,
            cfg,
        } => {
            let config: AvatarConfig = load(&cfg)?;
            echo(
                "avatar",
                json!({ "dataset": dataset, "out": out, "static_mask": static_mask }),
                &config,
            )?;
            let r = cmd_avatar(&config, &dataset, static_mask.as_deref(), &out)?;
            println!("k,error,p2p_mm,psnr");
            for row in &r.sweep {
                println!(
                    "{},{:.6e},{:.4},{:.3}",
                    row.k, row.error, row.p2p_mm, row.psnr
                );
            }
        }
        Command::Edit {
            op,
            a,
            b,
            c,
            mask,
            dataset,
            out,
            cfg,
        } => {
            let config: EditConfig = load(&cfg)?;
            echo(
                "edit",
                json!({ "op": op, "a": a, "b": b, "c": c, "mask": mask, "dataset": dataset, "out": out }),
                &config,
            )?;
            let inputs = EditInputs {
                op,
                a: &a,
                b: &b,
                c: c.as_deref(),
                mask: mask.as_deref(),
                dataset: dataset.as_deref(),
            };
            let g = cmd_edit(&config, &inputs, &out)?;
            println!("wrote {} splats", g.valid_count());
        }
        Command::BenchAttention { out, cfg } => {
            let config: BenchConfig = load(&cfg)?;
            echo("bench-attention", json!({ "out": out }), &config)?;
            let rows = cmd_bench_attention(&config, out.as_deref())?;
            print!("{}", bench_csv(&rows));
        }
    }
    Ok(())
}

/// Parses `args` (including the program name), runs the command, and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
