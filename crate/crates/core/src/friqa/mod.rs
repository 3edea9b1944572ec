//! Full-reference quality metrics and batch scoring into score tables.

mod metrics;
mod table;

pub use metrics::{gmsd, ms_ssim, psnr, ssim, MS_SSIM_MIN_SIDE, MS_SSIM_WEIGHTS, SSIM_WINDOW};
pub use table::{
    format_score, ingest_external_scores, polarity_path, score_dataset, JoinReport, MetricId,
    Polarity, ScoreTable,
};
