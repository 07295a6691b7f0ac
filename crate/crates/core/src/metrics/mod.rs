//! Image quality metrics and metric reports.

mod evaluate;
mod fidelity;
mod frechet;
mod niqe;
mod report;

pub use evaluate::{evaluate, evaluate_images, REPORT_METRICS};
pub use fidelity::{ms_ssim, ms_ssim_scales_for, ms_ssim_with_scales, psnr, ssim, MS_SSIM_WEIGHTS, PSNR_IDENTICAL};
pub use frechet::{frechet_distance, frechet_feature_distance, psd_sqrt, FeatureGaussian};
pub use niqe::{niqe_fit, niqe_score, NiqeConfig, NiqeModel, FEATURE_DIM as NIQE_FEATURE_DIM};
pub use report::{mean_std, render_columns, render_table, Aggregate, MetricReport, FRECHET, MS_SSIM, NIQE, PSNR, SSIM, TABLE_COLUMNS};
