//! Metrics, ablation experiments and metric reports.

mod experiment;
mod metrics;
mod report;

pub use experiment::{
    entity_maps, prepare_scene, run_experiment, run_prepared, write_outputs, DataSource, EntitySource,
    ExperimentConfig, PreparedScene, RunOptions, Variant,
};
pub use metrics::{mask_metrics, psnr, ssim, MaskMetrics, Psnr, SSIM_SIGMA, SSIM_WINDOW};
pub use report::{
    aggregate_scenes, read_report_json, validate_report, write_report_csv, write_report_json, write_summary,
    MetricReport, SceneMeans, VariantReport, ViewMetrics, REPORT_VERSION,
};
