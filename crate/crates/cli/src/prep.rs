use std::path::{Path, PathBuf};

use deshadow_core::imaging::{dilate, load_image, load_mask, save_mask};
use deshadow_core::mask_prior::load_candidates;
use deshadow_core::{select_shadow_mask, Error, Result, ShadowMask};
use rayon::prelude::*;

use crate::args::PrepArgs;
use crate::config::PipelineConfig;
use crate::{collect_inputs, create_dir, require_dir};

/// Environment variable naming a directory where prepared masks are also
/// written; `infer` looks there before selecting from candidates.
pub const CACHE_VAR: &str = "DESHADOW_CACHE";

pub fn cache_dir() -> Option<PathBuf> {
    std::env::var_os(CACHE_VAR).filter(|v| !v.is_empty()).map(PathBuf::from)
}

pub fn prepared_name(id: &str) -> String {
    format!("{id}_Ms.png")
}

struct Prepared {
    mask: ShadowMask,
    source: &'static str,
    chosen: Vec<String>,
    darkness: Option<f64>,
    low_confidence: bool,
}

fn prepare(
    id: &str,
    image: &Path,
    candidates: Option<&Path>,
    fallback: Option<&Path>,
    cfg: &PipelineConfig,
) -> Result<Prepared> {
    let img = load_image::<f64>(image)?;
    let cands = match candidates {
        Some(root) => match load_candidates(root, id, img.dims()) {
            Ok(c) => Some(c),
            Err(Error::EmptyCandidates(_)) => None,
            Err(e) => return Err(e),
        },
        None => None,
    };
    if let Some(cands) = cands {
        let sel = select_shadow_mask(&img, &cands, &cfg.selection)?;
        let darkness = cands
            .iter()
            .zip(&sel.scores)
            .filter(|(c, _)| sel.chosen.contains(&c.source_id))
            .filter_map(|(_, s)| s.map(|s| s.darkness))
            .reduce(f64::max);
        return Ok(Prepared {
            mask: sel.mask,
            source: "candidates",
            chosen: sel.chosen,
            darkness,
            low_confidence: sel.low_confidence,
        });
    }
    let path = fallback.map(|d| d.join(format!("{id}.png"))).filter(|p| p.is_file());
    let Some(path) = path else {
        return Err(Error::EmptyCandidates(format!("{id} (no candidates and no fallback mask)")));
    };
    let raw = load_mask(&path)?;
    if raw.dims() != img.dims() {
        return Err(Error::Format(format!("{}: size differs from {}", path.display(), image.display())));
    }
    Ok(Prepared {
        mask: dilate(&raw, cfg.selection.dilation_radius)?,
        source: "fallback",
        chosen: Vec::new(),
        darkness: None,
        low_confidence: false,
    })
}

pub fn run(cfg: &PipelineConfig, a: &PrepArgs) -> Result<()> {
    let images = collect_inputs(&a.images)?;
    let candidates = a.candidates.clone().or_else(|| cfg.paths.candidates.clone());
    if candidates.is_none() && a.fallback_masks.is_none() {
        return Err(Error::Argument("prep-mask needs --candidates (or paths.candidates) or --fallback-masks".into()));
    }
    if let Some(d) = &a.fallback_masks {
        require_dir(d, "fallback mask directory")?;
    }
    let out = a.out.clone().unwrap_or_else(|| cfg.paths.output.join("masks"));
    create_dir(&out)?;
    let cache = cache_dir();
    if let Some(c) = &cache {
        create_dir(c)?;
    }

    let results: Vec<(&String, Result<Prepared>)> = images
        .par_iter()
        .map(|(id, path)| {
            let r = prepare(id, path, candidates.as_deref(), a.fallback_masks.as_deref(), cfg).and_then(|p| {
                save_mask(&p.mask, out.join(prepared_name(id)))?;
                if let Some(c) = &cache {
                    save_mask(&p.mask, c.join(prepared_name(id)))?;
                }
                Ok(p)
            });
            (id, r)
        })
        .collect();

    let report = out.join("prep_report.csv");
    let csv_err = |e: csv::Error| Error::Format(format!("{}: {e}", report.display()));
    let mut w = csv::Writer::from_path(&report).map_err(csv_err)?;
    w.write_record(["id", "source", "chosen", "darkness", "low_confidence", "error"]).map_err(csv_err)?;
    let mut failures = 0;
    for (id, r) in &results {
        let row = match r {
            Ok(p) => [
                id.to_string(),
                p.source.to_string(),
                p.chosen.join(";"),
                p.darkness.map_or(String::new(), |d| format!("{d:.6}")),
                p.low_confidence.to_string(),
                String::new(),
            ],
            Err(e) => {
                failures += 1;
                log::warn!("{id}: {e}");
                [id.to_string(), String::new(), String::new(), String::new(), String::new(), e.to_string()]
            }
        };
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(&report, e))?;
    log::info!("prepared {} of {} masks in {}", results.len() - failures, results.len(), out.display());

    if failures == results.len() {
        let (_, first) = results.into_iter().next().expect("at least one input");
        return Err(first.err().expect("every row failed"));
    }
    Ok(())
}
