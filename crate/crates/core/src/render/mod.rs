//! Forward Gaussian-splat rendering and image-quality metrics.

mod metrics;
mod splat;

pub use metrics::{image_metrics, l1_error, psnr, ssim, ImageMetrics, SSIM_SIGMA, SSIM_WINDOW};
pub use splat::{
    project_gaussian, render, render_with_stats, ProjectedGaussian, RenderSettings, RenderStats,
};
