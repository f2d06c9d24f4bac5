use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::imaging::{load_image, load_mask, resize, resize_mask, ShadowMask};
use crate::pairing::{pair_by_stem, png_stems};
use crate::training::dataset::fallback_mask;

use super::metrics::{region_metrics, LabError, RegionMetrics, METRIC_COLUMNS};

pub const MEAN_ROW: &str = "__mean__";

/// Per-column display: header, direction marker, decimals.
const DISPLAY: [(&str, bool, usize); 9] = [
    ("RMSE-all", false, 2),
    ("RMSE-N", false, 2),
    ("RMSE-S", false, 2),
    ("SSIM", true, 3),
    ("SSIM-N", true, 3),
    ("SSIM-S", true, 3),
    ("PSNR", true, 2),
    ("PSNR-N", true, 2),
    ("PSNR-S", true, 2),
];

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    /// Square evaluation size; `None` compares at native resolution.
    pub resize: Option<usize>,
    pub mode: LabError,
    /// Shadow inputs, used to derive masks when no mask directory is given.
    pub shadow_dir: Option<PathBuf>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { resize: Some(256), mode: LabError::MeanAbsolute, shadow_dir: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalTable {
    pub rows: Vec<(String, RegionMetrics)>,
    pub mean: RegionMetrics,
}

/// Scores every prediction against its ground truth, pairing files by stem.
pub fn evaluate_dir(pred_dir: &Path, gt_dir: &Path, mask_dir: Option<&Path>, opts: &EvalOptions) -> Result<EvalTable> {
    let preds = png_stems(pred_dir)?;
    let gts = png_stems(gt_dir)?;
    let masks = mask_dir.map(png_stems).transpose()?;
    let shadows = match (mask_dir, &opts.shadow_dir) {
        (None, Some(d)) => Some((d.as_path(), png_stems(d)?)),
        _ => None,
    };
    let mut dirs: Vec<(&Path, &BTreeMap<String, PathBuf>)> = vec![(pred_dir, &preds), (gt_dir, &gts)];
    if let (Some(d), Some(m)) = (mask_dir, masks.as_ref()) {
        dirs.push((d, m));
    }
    if let Some((d, m)) = &shadows {
        dirs.push((d, m));
    }
    let ids = pair_by_stem(&dirs)?;
    if ids.is_empty() {
        return Err(Error::EmptyDataset(pred_dir.to_path_buf()));
    }
    let rows = ids
        .par_iter()
        .map(|id| {
            let pred = load_image::<f64>(&preds[id])?;
            let gt = load_image::<f64>(&gts[id])?;
            if pred.dims() != gt.dims() && opts.resize.is_none() {
                return Err(Error::Format(format!("{}: size differs from ground truth", preds[id].display())));
            }
            let mask: Option<ShadowMask> = match (&masks, &shadows) {
                (Some(m), _) => Some(load_mask(&m[id])?),
                (None, Some((_, s))) => {
                    let sh = load_image::<f64>(&s[id])?;
                    let gt_native =
                        if sh.dims() == gt.dims() { gt.clone() } else { resize(&gt, sh.height(), sh.width())? };
                    Some(fallback_mask(&sh, &gt_native)?)
                }
                _ => None,
            };
            let (pred, gt, mask) = match opts.resize {
                Some(s) => (resize(&pred, s, s)?, resize(&gt, s, s)?, mask.map(|m| resize_mask(&m, s, s)).transpose()?),
                None => {
                    if let Some(m) = &mask {
                        if m.dims() != gt.dims() {
                            return Err(Error::Format(format!("mask for {id} differs in size from ground truth")));
                        }
                    }
                    (pred, gt, mask)
                }
            };
            Ok((id.clone(), region_metrics(&pred, &gt, mask.as_ref(), opts.mode)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let mean = RegionMetrics::mean(&rows.iter().map(|r| r.1).collect::<Vec<_>>());
    Ok(EvalTable { rows, mean })
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::Format(format!("{}: {e}", path.display()))
}

pub fn write_metrics_csv(path: &Path, table: &EvalTable) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    let mut header = vec!["id"];
    header.extend(METRIC_COLUMNS);
    w.write_record(&header).map_err(csv_err(path))?;
    let rows = table.rows.iter().map(|(id, m)| (id.as_str(), m)).chain(std::iter::once((MEAN_ROW, &table.mean)));
    for (id, m) in rows {
        let mut rec = vec![id.to_string()];
        rec.extend(m.values().iter().map(|v| v.map_or(String::new(), |v| format!("{v:.6}"))));
        w.write_record(&rec).map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a metrics file; errors carry the 1-based line number.
pub fn read_metrics_csv(path: &Path) -> Result<Vec<(String, RegionMetrics)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    let bad = |line: usize, why: String| Error::Format(format!("{}: line {line}: {why}", path.display()));
    let (_, header) = lines.next().ok_or_else(|| bad(1, "empty file".into()))?;
    let mut expected = vec!["id"];
    expected.extend(METRIC_COLUMNS);
    if header.trim_end_matches('\r').split(',').collect::<Vec<_>>() != expected {
        return Err(bad(1, format!("header must be {}", expected.join(","))));
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 10 {
            return Err(bad(i + 1, format!("expected 10 fields, found {}", fields.len())));
        }
        let mut vals = [None; 9];
        for (k, f) in fields[1..].iter().enumerate() {
            if !f.is_empty() {
                vals[k] = Some(
                    f.parse::<f64>()
                        .map_err(|_| bad(i + 1, format!("{} is not a number: {f:?}", METRIC_COLUMNS[k])))?,
                );
            }
        }
        out.push((fields[0].to_string(), RegionMetrics::from_values(vals)));
    }
    Ok(out)
}

fn header_line(first: &str) -> String {
    let mut s = format!("| {first} |");
    for (name, up, _) in DISPLAY {
        let _ = write!(s, " {name} {} |", if up { "↑" } else { "↓" });
    }
    s.push_str("\n|---|");
    s.push_str(&"---:|".repeat(DISPLAY.len()));
    s.push('\n');
    s
}

/// Markdown table with one row per entry. With `bold_best`, the best value
/// of each column is bolded (ties all bolded).
pub fn render_table(first_column: &str, rows: &[(String, RegionMetrics)], bold_best: bool) -> String {
    let mut out = header_line(first_column);
    let cells: Vec<[Option<String>; 9]> = rows
        .iter()
        .map(|(_, m)| {
            let v = m.values();
            std::array::from_fn(|k| v[k].map(|x| format!("{:.*}", DISPLAY[k].2, x)))
        })
        .collect();
    let best: [Option<String>; 9] = std::array::from_fn(|k| {
        if !bold_best {
            return None;
        }
        let (_, up, _) = DISPLAY[k];
        rows.iter()
            .zip(&cells)
            .filter_map(|((_, m), c)| m.values()[k].map(|v| (v, c[k].clone().expect("value present"))))
            .max_by(|a, b| if up { a.0.total_cmp(&b.0) } else { b.0.total_cmp(&a.0) })
            .map(|(_, s)| s)
    });
    for ((label, _), c) in rows.iter().zip(&cells) {
        let _ = write!(out, "| {label} |");
        for k in 0..9 {
            match &c[k] {
                None => out.push_str(" - |"),
                Some(s) if best[k].as_deref() == Some(s.as_str()) => {
                    let _ = write!(out, " **{s}** |");
                }
                Some(s) => {
                    let _ = write!(out, " {s} |");
                }
            }
        }
        out.push('\n');
    }
    out
}

/// The `report.md` written next to `metrics.csv`.
pub fn render_eval_report(table: &EvalTable, mode: LabError) -> String {
    let mut rows = table.rows.clone();
    rows.push(("**mean**".to_string(), table.mean));
    let unit = match mode {
        LabError::MeanAbsolute => "mean absolute LAB error",
        LabError::RootMeanSquare => "root-mean-square LAB error",
    };
    format!(
        "# Evaluation\n\n{} images. RMSE columns report the {unit}; -N and -S are the non-shadow and shadow regions.\n\n{}",
        table.rows.len(),
        render_table("Image", &rows, false)
    )
}
