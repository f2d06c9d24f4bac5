use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{dilate, load_image, load_mask, luma, resize, resize_mask, ImageTensor, MaskKind, ShadowMask};
use crate::mask_prior::{load_candidates, select_shadow_mask, SelectionConfig};
use crate::pairing::{pair_by_stem, png_stems};
use crate::scalar::Scalar;

/// Luma gain above which a pixel counts as shadowed when no mask is given.
pub const FALLBACK_THRESHOLD: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample<T> {
    pub id: String,
    pub shadow: ImageTensor<T>,
    pub gt: ImageTensor<T>,
    /// Raw dataset mask, used by the loss.
    pub mask: ShadowMask,
    /// Dilated target mask, fed to the solver.
    pub target: ShadowMask,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    Istd,
    Srd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl FromStr for Layout {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "istd" => Ok(Layout::Istd),
            "srd" => Ok(Layout::Srd),
            _ => Err(Error::Argument(format!("unknown dataset layout {s:?} (istd or srd)"))),
        }
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            _ => Err(Error::Argument(format!("unknown split {s:?} (train or test)"))),
        }
    }
}

impl Split {
    fn prefix(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// Directories for `(shadow, mask, shadow-free)`; SRD has no mask directory.
pub fn layout_dirs(root: &Path, split: Split, layout: Layout) -> (PathBuf, Option<PathBuf>, PathBuf) {
    match layout {
        Layout::Istd => {
            let p = split.prefix();
            (root.join(format!("{p}_A")), Some(root.join(format!("{p}_B"))), root.join(format!("{p}_C")))
        }
        Layout::Srd => {
            let base = root.join(split.prefix());
            let base = if base.is_dir() { base } else { root.to_path_buf() };
            (base.join("shadow"), None, base.join("shadow_free"))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetOptions {
    /// Square side length; `None` keeps native sizes.
    pub resize: Option<usize>,
    /// Root of per-image candidate directories for the mask prior.
    pub candidates: Option<PathBuf>,
    pub selection: SelectionConfig,
}

impl Default for DatasetOptions {
    fn default() -> Self {
        Self { resize: Some(256), candidates: None, selection: SelectionConfig::default() }
    }
}

/// `luma(gt) − luma(shadow) > 0.05`, the mask used when none is supplied.
pub fn fallback_mask<T: Scalar>(shadow: &ImageTensor<T>, gt: &ImageTensor<T>) -> Result<ShadowMask> {
    if shadow.dims() != gt.dims() {
        return Err(Error::shape("fallback mask", shadow.dims(), gt.dims()));
    }
    let (h, w) = shadow.dims();
    let thr = T::lit(FALLBACK_THRESHOLD);
    Ok(ShadowMask::from_fn(h, w, MaskKind::Raw, |y, x| luma(gt.pixel(y, x)) - luma(shadow.pixel(y, x)) > thr))
}

fn load_sample<T: Scalar>(
    id: &str,
    shadow_path: &Path,
    mask_path: Option<&Path>,
    gt_path: &Path,
    opts: &DatasetOptions,
) -> Result<TrainSample<T>> {
    let shadow = load_image::<T>(shadow_path)?;
    let gt = load_image::<T>(gt_path)?;
    if shadow.dims() != gt.dims() {
        return Err(Error::Format(format!("{}: size differs from {}", gt_path.display(), shadow_path.display())));
    }
    let mask = match mask_path {
        Some(p) => {
            let m = load_mask(p)?;
            if m.dims() != shadow.dims() {
                return Err(Error::Format(format!("{}: size differs from {}", p.display(), shadow_path.display())));
            }
            m
        }
        None => fallback_mask(&shadow, &gt)?,
    };
    let from_candidates = match &opts.candidates {
        Some(root) => match load_candidates(root, id, shadow.dims()) {
            Ok(c) => Some(select_shadow_mask(&shadow, &c, &opts.selection)?.mask),
            Err(Error::EmptyCandidates(_)) => None,
            Err(e) => return Err(e),
        },
        None => None,
    };
    let target = match from_candidates {
        Some(m) => m,
        None => dilate(&mask, opts.selection.dilation_radius)?,
    };
    let (shadow, gt, mask, target) = match opts.resize {
        Some(s) => (resize(&shadow, s, s)?, resize(&gt, s, s)?, resize_mask(&mask, s, s)?, resize_mask(&target, s, s)?),
        None => (shadow, gt, mask, target),
    };
    Ok(TrainSample { id: id.to_string(), shadow, gt, mask, target })
}

/// Loads a split, paired by file stem and sorted by id.
pub fn load_dataset<T: Scalar>(
    root: &Path,
    split: Split,
    layout: Layout,
    opts: &DatasetOptions,
) -> Result<Vec<TrainSample<T>>> {
    let (a, b, c) = layout_dirs(root, split, layout);
    let sa = png_stems(&a)?;
    let sc = png_stems(&c)?;
    let sb = b.as_deref().map(png_stems).transpose()?;
    let mut dirs: Vec<(&Path, &BTreeMap<String, PathBuf>)> = vec![(&a, &sa)];
    if let (Some(bp), Some(bm)) = (b.as_deref(), sb.as_ref()) {
        dirs.push((bp, bm));
    }
    dirs.push((&c, &sc));
    let ids = pair_by_stem(&dirs)?;
    if ids.is_empty() {
        return Err(Error::EmptyDataset(a));
    }
    ids.par_iter().map(|id| load_sample(id, &sa[id], sb.as_ref().map(|m| m[id].as_path()), &sc[id], opts)).collect()
}
