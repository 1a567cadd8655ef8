//! Registration-guided prediction of Gaussian-splat textures in dense UV
//! correspondence, plus the linear avatar model and texture editing tools
//! built on top of it.

pub mod avatar;
pub mod cli;
pub mod correspondence;
pub mod error;
pub mod image;
pub mod math;
pub mod mesh;
pub mod ply;
pub mod render;
pub mod synth;
pub mod texture;
pub mod transformer;

pub use error::{Error, Result};
