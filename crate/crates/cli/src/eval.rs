use deshadow_core::evaluation::{evaluate_dir, render_eval_report, write_metrics_csv, EvalOptions, LabError};
use deshadow_core::{Error, Result};

use crate::args::EvalArgs;
use crate::config::PipelineConfig;
use crate::{create_dir, require_dir, resize_opt};

pub fn run(cfg: &PipelineConfig, a: &EvalArgs) -> Result<()> {
    require_dir(&a.pred, "prediction directory")?;
    require_dir(&a.gt, "ground-truth directory")?;
    if let Some(m) = &a.mask {
        require_dir(m, "mask directory")?;
    }
    if let Some(s) = &a.shadow {
        require_dir(s, "shadow directory")?;
    }
    let mode = if a.true_rmse { LabError::RootMeanSquare } else { LabError::MeanAbsolute };
    let opts = EvalOptions { resize: resize_opt(Some(a.resize)), mode, shadow_dir: a.shadow.clone() };
    let table = evaluate_dir(&a.pred, &a.gt, a.mask.as_deref(), &opts)?;

    let out = a.out.clone().unwrap_or_else(|| cfg.paths.output.clone());
    create_dir(&out)?;
    write_metrics_csv(&out.join("metrics.csv"), &table)?;
    let report = out.join("report.md");
    std::fs::write(&report, render_eval_report(&table, mode)).map_err(|e| Error::io(&report, e))?;
    log::info!("scored {} images; wrote {}", table.rows.len(), out.display());
    Ok(())
}
