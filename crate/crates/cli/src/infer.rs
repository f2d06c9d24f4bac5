use std::path::Path;

use deshadow_core::checkpoint::{inspect_checkpoint, load_checkpoint};
use deshadow_core::imaging::{dilate, load_image, load_mask, resize, resize_mask, save_image};
use deshadow_core::mask_prior::load_candidates;
use deshadow_core::{
    blend_final, enhance_second_order, run_solver, select_shadow_mask, ColorSpace, CurveParams, Error, Field,
    ImageTensor, NetworkWeights, Result, ShadowMask,
};
use rayon::prelude::*;

use crate::args::InferArgs;
use crate::config::PipelineConfig;
use crate::prep::{cache_dir, prepared_name};
use crate::{collect_inputs, create_dir, require_dir, resize_opt};

fn load_weights(path: &Path, cfg: &PipelineConfig) -> Result<NetworkWeights<f64>> {
    match load_checkpoint::<f64>(path, &cfg.solver, &cfg.arch) {
        Ok(c) => Ok(c.weights),
        Err(e @ (Error::Weight(_) | Error::ConfigHashMismatch { .. })) => {
            let found = inspect_checkpoint(path).map_or_else(|_| "unreadable".to_string(), |i| i.config_hash);
            eprintln!("checkpoint config hash: {found}");
            eprintln!("current config hash:    {}", NetworkWeights::<f64>::config_hash(&cfg.solver, &cfg.arch));
            Err(e)
        }
        Err(e) => Err(e),
    }
}

struct MaskSources<'a> {
    mask_dir: Option<&'a Path>,
    cache: Option<&'a Path>,
    candidates: Option<&'a Path>,
}

/// Prepared masks win over raw masks, then the cache, then selection from
/// candidates.
fn find_mask(id: &str, img: &ImageTensor<f64>, src: &MaskSources, cfg: &PipelineConfig) -> Result<ShadowMask> {
    let checked = |p: &Path| -> Result<ShadowMask> {
        let m = load_mask(p)?;
        if m.dims() != img.dims() {
            return Err(Error::Format(format!("{}: mask size differs from image {id}", p.display())));
        }
        Ok(m)
    };
    if let Some(d) = src.mask_dir {
        let prepared = d.join(prepared_name(id));
        if prepared.is_file() {
            return checked(&prepared);
        }
        let raw = d.join(format!("{id}.png"));
        if raw.is_file() {
            return dilate(&checked(&raw)?, cfg.selection.dilation_radius);
        }
    }
    if let Some(c) = src.cache {
        let cached = c.join(prepared_name(id));
        if cached.is_file() {
            return checked(&cached);
        }
    }
    match src.candidates {
        Some(root) => {
            let cands = load_candidates(root, id, img.dims())?;
            Ok(select_shadow_mask(img, &cands, &cfg.selection)?.mask)
        }
        None => Err(Error::EmptyCandidates(format!("{id} (no prepared mask and no candidate root)"))),
    }
}

/// Gain map rescaled to `[0, 1]` by its own range, as a gray image.
fn gain_image(gain: &Field<f64>) -> ImageTensor<f64> {
    let (lo, hi) = gain.min_max();
    let span = hi - lo;
    let norm = gain.map(|v| if span > 0.0 { (v - lo) / span } else { 0.0 });
    ImageTensor::from_field(norm, ColorSpace::Srgb)
}

struct Job<'a> {
    cfg: &'a PipelineConfig,
    weights: &'a NetworkWeights<f64>,
    masks: MaskSources<'a>,
    out: &'a Path,
    alpha: f64,
    size: Option<usize>,
    dump_stages: bool,
}

impl Job<'_> {
    fn run(&self, id: &str, path: &Path) -> Result<()> {
        let native = load_image::<f64>(path)?;
        let mask = find_mask(id, &native, &self.masks, self.cfg)?;
        let (img, mask) = match self.size {
            Some(s) => (resize(&native, s, s)?, resize_mask(&mask, s, s)?),
            None => (native, mask),
        };
        let (restored, traces) = run_solver(&img, &mask, &self.cfg.solver, self.weights)?;
        let (h, w) = img.dims();
        let curve = CurveParams::uniform(h, w, self.cfg.curve.a1, self.cfg.curve.a2)?;
        let enhanced = enhance_second_order(&img, &curve)?;
        save_image(&blend_final(&enhanced, &restored, self.alpha)?, self.out.join(format!("{id}.png")))?;
        if self.dump_stages {
            let dir = self.out.join("stages").join(id);
            create_dir(&dir)?;
            for t in &traces {
                save_image(&t.restored_image(), dir.join(format!("ins_{}.png", t.stage)))?;
                save_image(&gain_image(t.gain.field()), dir.join(format!("a_{}.png", t.stage)))?;
            }
        }
        Ok(())
    }
}

pub fn run(cfg: &PipelineConfig, a: &InferArgs) -> Result<()> {
    let inputs = collect_inputs(&a.input)?;
    let alpha = a.alpha.unwrap_or(cfg.alpha);
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Argument(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    if let Some(d) = &a.mask_dir {
        require_dir(d, "mask directory")?;
    }
    let checkpoint = a.checkpoint.clone().unwrap_or_else(|| cfg.paths.checkpoint.clone());
    let weights = load_weights(&checkpoint, cfg)?;
    let out = a.out.clone().unwrap_or_else(|| cfg.paths.output.clone());
    create_dir(&out)?;
    let cache = cache_dir();
    let candidates = a.candidates.clone().or_else(|| cfg.paths.candidates.clone());
    let job = Job {
        cfg,
        weights: &weights,
        masks: MaskSources {
            mask_dir: a.mask_dir.as_deref(),
            cache: cache.as_deref(),
            candidates: candidates.as_deref(),
        },
        out: &out,
        alpha,
        size: resize_opt(a.resize),
        dump_stages: a.dump_stages,
    };

    let results: Vec<(&String, Result<()>)> = inputs.par_iter().map(|(id, p)| (id, job.run(id, p))).collect();
    let mut first_err = None;
    for (id, r) in results {
        if let Err(e) = r {
            log::error!("{id}: {e}");
            first_err.get_or_insert(e);
        }
    }
    match first_err {
        Some(e) => Err(e),
        None => {
            log::info!("wrote {} images to {}", inputs.len(), out.display());
            Ok(())
        }
    }
}
