//! Region-wise image quality metrics and the tables built from them.

pub mod metrics;
pub mod report;

pub use metrics::{
    lab_error, psnr_region, region_metrics, rmse_lab, ssim_map, ssim_region, LabError, Region, RegionMetrics,
};
pub use report::{
    evaluate_dir, read_metrics_csv, render_eval_report, render_table, write_metrics_csv, EvalOptions, EvalTable,
};
