use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use deshadow_core::evaluation::report::MEAN_ROW;
use deshadow_core::evaluation::{read_metrics_csv, render_table, RegionMetrics};
use deshadow_core::imaging::{load_image, load_mask, save_image};
use deshadow_core::pairing::png_stems;
use deshadow_core::{Error, Result};

use crate::args::ReportArgs;
use crate::config::PipelineConfig;
use crate::plot::{bar_chart, mask_image, strip};
use crate::{create_dir, require_dir};

/// `runs/ours/metrics.csv` is labelled `ours`; other files by their stem.
fn default_label(path: &Path) -> String {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("metrics");
    if stem == "metrics" {
        if let Some(dir) = path.parent().and_then(|p| p.file_name()).and_then(|s| s.to_str()) {
            return dir.to_string();
        }
    }
    stem.to_string()
}

fn mean_row(path: &Path) -> Result<RegionMetrics> {
    read_metrics_csv(path)?
        .into_iter()
        .find(|(id, _)| id == MEAN_ROW)
        .map(|(_, m)| m)
        .ok_or_else(|| Error::Format(format!("{}: no {MEAN_ROW} row", path.display())))
}

/// The merged comparison table. Best values are bolded once there is more
/// than one row to compare.
pub fn render_report(rows: &[(String, RegionMetrics)], charts: &[&str], strips: &[String]) -> String {
    let mut s = String::from("# Comparison\n\n");
    s.push_str(&render_table("Method", rows, rows.len() > 1));
    s.push_str("\nRMSE columns are LAB errors; -N and -S are the non-shadow and shadow regions.\n");
    if !charts.is_empty() {
        s.push_str("\n## Charts\n\n");
        for c in charts {
            let _ = writeln!(s, "![{c}](plots/{c}.png)");
        }
    }
    if !strips.is_empty() {
        s.push_str("\n## Examples\n\nInput, result and mask.\n\n");
        for id in strips {
            let _ = writeln!(s, "![{id}](strips/{id}.png)");
        }
    }
    s
}

fn write_strips(a: &ReportArgs, dir: &Path) -> Result<Vec<String>> {
    let (Some(inputs), Some(results)) = (&a.inputs, &a.results) else {
        return Ok(Vec::new());
    };
    require_dir(inputs, "strip input directory")?;
    require_dir(results, "strip result directory")?;
    let ins = png_stems(inputs)?;
    let outs = png_stems(results)?;
    let masks = a.masks.as_deref().map(png_stems).transpose()?;
    let ids: Vec<String> = ins
        .keys()
        .filter(|id| outs.contains_key(*id) && masks.as_ref().is_none_or(|m| m.contains_key(*id)))
        .take(a.strips)
        .cloned()
        .collect();
    if ids.is_empty() {
        return Ok(ids);
    }
    create_dir(dir)?;
    for id in &ids {
        let mut panels = vec![load_image::<f64>(&ins[id])?, load_image::<f64>(&outs[id])?];
        if let Some(m) = &masks {
            panels.push(mask_image(&load_mask(&m[id])?));
        }
        save_image(&strip(&panels)?, dir.join(format!("{id}.png")))?;
    }
    Ok(ids)
}

pub fn run(cfg: &PipelineConfig, a: &ReportArgs) -> Result<()> {
    if !a.labels.is_empty() && a.labels.len() != a.metrics.len() {
        return Err(Error::Argument(format!("{} labels for {} metrics files", a.labels.len(), a.metrics.len())));
    }
    let rows = a
        .metrics
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let label = a.labels.get(k).cloned().unwrap_or_else(|| default_label(p));
            Ok((label, mean_row(p)?))
        })
        .collect::<Result<Vec<_>>>()?;

    let out: PathBuf = a.out.clone().unwrap_or_else(|| cfg.paths.output.join("report"));
    create_dir(&out)?;
    let mut charts = Vec::new();
    for (k, name) in deshadow_core::evaluation::metrics::METRIC_COLUMNS.iter().enumerate() {
        let values: Vec<Option<f64>> = rows.iter().map(|(_, m)| m.values()[k]).collect();
        if values.iter().all(Option::is_none) {
            continue;
        }
        create_dir(&out.join("plots"))?;
        save_image(&bar_chart(&values), out.join("plots").join(format!("{name}.png")))?;
        charts.push(*name);
    }
    let strips = write_strips(a, &out.join("strips"))?;
    let report = out.join("report.md");
    std::fs::write(&report, render_report(&rows, &charts, &strips)).map_err(|e| Error::io(&report, e))?;
    log::info!("wrote {}", report.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_come_from_the_run_directory() {
        assert_eq!(default_label(Path::new("runs/ours/metrics.csv")), "ours");
        assert_eq!(default_label(Path::new("baseline.csv")), "baseline");
    }
}
