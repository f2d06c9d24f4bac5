//! Turns externally produced segmentation candidates into a single dilated
//! shadow mask by scoring how much darker each candidate is than the ring of
//! pixels around it.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{dilate, load_mask, luma, srgb_pixel_to_lab, ColorSpace, ImageTensor, MaskKind, ShadowMask};
use crate::scalar::Scalar;

const DARKNESS_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateMask {
    pub mask: ShadowMask,
    pub source_id: String,
    pub area_fraction: f64,
}

impl CandidateMask {
    pub fn new(mask: ShadowMask, source_id: impl Into<String>) -> Result<Self> {
        let area_fraction = mask.area_fraction();
        if area_fraction == 0.0 {
            return Err(Error::DegenerateRegion(format!("candidate {} is empty", source_id.into())));
        }
        Ok(Self { mask: mask.with_kind(MaskKind::Raw), source_id: source_id.into(), area_fraction })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShadowScore {
    pub darkness: f64,
    pub ring_contrast: f64,
    pub chroma_shift: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionConfig {
    pub darkness_threshold: f64,
    pub min_area: f64,
    pub max_area: f64,
    pub dilation_radius: i64,
    pub ring_radius: i64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self { darkness_threshold: 0.25, min_area: 0.005, max_area: 0.6, dilation_radius: 2, ring_radius: 5 }
    }
}

impl SelectionConfig {
    fn area_ok(&self, c: &CandidateMask) -> bool {
        c.area_fraction >= self.min_area && c.area_fraction <= self.max_area
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub mask: ShadowMask,
    /// Source ids of the candidates in the union, sorted.
    pub chosen: Vec<String>,
    pub low_confidence: bool,
    /// Score per candidate, in input order; `None` for degenerate candidates.
    pub scores: Vec<Option<ShadowScore>>,
}

#[derive(Deserialize)]
struct MetaEntry {
    id: String,
    area: u64,
}

/// Reads `<root>/<image_id>/<k>.png`, sorted by numeric stem (falling back to
/// lexical order for non-numeric stems). `expected` is the image size.
pub fn load_candidates(root: &Path, image_id: &str, expected: (usize, usize)) -> Result<Vec<CandidateMask>> {
    let dir = root.join(image_id);
    let entries = match std::fs::read_dir(&dir) {
        Ok(e) => e,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(Error::EmptyCandidates(format!("{image_id} ({} does not exist)", dir.display())))
        }
        Err(e) => return Err(Error::io(&dir, e)),
    };
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    if files.is_empty() {
        return Err(Error::EmptyCandidates(format!("{image_id} ({} has no PNG files)", dir.display())));
    }
    let stem = |p: &PathBuf| p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    files.sort_by(|a, b| {
        let (sa, sb) = (stem(a), stem(b));
        match (sa.parse::<u64>(), sb.parse::<u64>()) {
            (Ok(x), Ok(y)) => x.cmp(&y).then(sa.cmp(&sb)),
            (Ok(_), Err(_)) => std::cmp::Ordering::Less,
            (Err(_), Ok(_)) => std::cmp::Ordering::Greater,
            _ => sa.cmp(&sb),
        }
    });
    let mut out = Vec::with_capacity(files.len());
    for f in &files {
        let m = load_mask(f)?;
        if m.dims() != expected {
            return Err(Error::Format(format!(
                "candidate {} is {}x{}, image is {}x{}",
                f.display(),
                m.height(),
                m.width(),
                expected.0,
                expected.1
            )));
        }
        let id = stem(f);
        let area_fraction = m.area_fraction();
        out.push(CandidateMask { mask: m.with_kind(MaskKind::Raw), source_id: id, area_fraction });
    }
    let meta = dir.join("meta.json");
    if meta.exists() {
        let text = std::fs::read_to_string(&meta).map_err(|e| Error::io(&meta, e))?;
        let entries: Vec<MetaEntry> =
            serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", meta.display())))?;
        for e in entries {
            let c = out
                .iter()
                .find(|c| c.source_id == e.id)
                .ok_or_else(|| Error::Format(format!("{}: id {:?} has no mask file", meta.display(), e.id)))?;
            if c.mask.count() as u64 != e.area {
                return Err(Error::Format(format!(
                    "{}: id {:?} declares area {}, mask has {}",
                    meta.display(),
                    e.id,
                    e.area,
                    c.mask.count()
                )));
            }
        }
    }
    Ok(out)
}

fn region_stats<T: Scalar>(img: &ImageTensor<T>, mask: &ShadowMask) -> Option<(f64, [f64; 2])> {
    let n = mask.count();
    if n == 0 {
        return None;
    }
    let (mut l, mut a, mut b) = (0.0, 0.0, 0.0);
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            if mask.get(y, x) {
                let px = img.pixel(y, x);
                l += luma(px).as_f64();
                let lab = srgb_pixel_to_lab(px);
                a += lab[1].as_f64();
                b += lab[2].as_f64();
            }
        }
    }
    let n = n as f64;
    Some((l / n, [a / n, b / n]))
}

/// Darkness of a candidate relative to its surrounding ring.
pub fn score_candidate<T: Scalar>(img: &ImageTensor<T>, cand: &CandidateMask, ring_radius: i64) -> Result<ShadowScore> {
    img.expect_space(ColorSpace::Srgb, "score_candidate")?;
    if ring_radius < 1 {
        return Err(Error::Argument(format!("ring radius must be at least 1, got {ring_radius}")));
    }
    if img.dims() != cand.mask.dims() {
        return Err(Error::shape("candidate", img.dims(), cand.mask.dims()));
    }
    let ring = dilate(&cand.mask, ring_radius)?.difference(&cand.mask)?;
    let degenerate = |what: &str| Error::DegenerateRegion(format!("candidate {} has an empty {what}", cand.source_id));
    let (region_l, region_ab) = region_stats(img, &cand.mask).ok_or_else(|| degenerate("region"))?;
    let (ring_l, ring_ab) = region_stats(img, &ring).ok_or_else(|| degenerate("ring"))?;
    Ok(ShadowScore {
        darkness: 1.0 - region_l / (ring_l + DARKNESS_EPS),
        ring_contrast: ring_l - region_l,
        chroma_shift: (region_ab[0] - ring_ab[0]).abs() + (region_ab[1] - ring_ab[1]).abs(),
    })
}

/// Union of the dark, reasonably sized candidates, dilated. Falls back to
/// the single darkest candidate with `low_confidence` set when none pass.
pub fn select_shadow_mask<T: Scalar>(
    img: &ImageTensor<T>,
    cands: &[CandidateMask],
    cfg: &SelectionConfig,
) -> Result<Selection> {
    if cands.is_empty() {
        return Err(Error::EmptyCandidates("(empty candidate list)".into()));
    }
    let scores = cands
        .iter()
        .map(|c| match score_candidate(img, c, cfg.ring_radius) {
            Ok(s) => Ok(Some(s)),
            Err(Error::DegenerateRegion(_)) => Ok(None),
            Err(e) => Err(e),
        })
        .collect::<Result<Vec<_>>>()?;
    let (h, w) = img.dims();
    let mut union = ShadowMask::empty(h, w, MaskKind::Raw);
    let mut chosen = Vec::new();
    for (c, s) in cands.iter().zip(&scores) {
        if s.is_some_and(|s| s.darkness >= cfg.darkness_threshold) && cfg.area_ok(c) {
            union = union.union(&c.mask)?;
            chosen.push(c.source_id.clone());
        }
    }
    let low_confidence = chosen.is_empty();
    if low_confidence {
        // darkest among area-valid candidates, or among all if none are;
        // ties go to the smaller id so input order does not matter
        let pool: Vec<usize> = {
            let valid: Vec<usize> = (0..cands.len()).filter(|&i| cfg.area_ok(&cands[i])).collect();
            if valid.is_empty() {
                (0..cands.len()).collect()
            } else {
                valid
            }
        };
        let key = |i: usize| scores[i].map_or(f64::NEG_INFINITY, |s| s.darkness);
        let best = pool
            .into_iter()
            .max_by(|&i, &j| key(i).total_cmp(&key(j)).then_with(|| cands[j].source_id.cmp(&cands[i].source_id)))
            .expect("nonempty pool");
        union = cands[best].mask.clone();
        chosen.push(cands[best].source_id.clone());
    }
    chosen.sort();
    let mask = dilate(&union, cfg.dilation_radius)?;
    Ok(Selection { mask, chosen, low_confidence, scores })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::save_mask;
    use proptest::prelude::*;

    fn rect(h: usize, w: usize, y0: usize, y1: usize, x0: usize, x1: usize) -> ShadowMask {
        ShadowMask::from_fn(h, w, MaskKind::Raw, |y, x| (y0..y1).contains(&y) && (x0..x1).contains(&x))
    }

    fn two_tone(h: usize, w: usize, inside: &ShadowMask, vin: f64, vout: f64) -> ImageTensor<f64> {
        ImageTensor::from_pixel_fn(h, w, ColorSpace::Srgb, |y, x| [if inside.get(y, x) { vin } else { vout }; 3])
    }

    #[test]
    fn score_examples() {
        let m = rect(32, 32, 10, 20, 10, 20);
        let c = CandidateMask::new(m.clone(), "0").unwrap();
        let flat = two_tone(32, 32, &m, 0.4, 0.4);
        let s = score_candidate(&flat, &c, 3).unwrap();
        assert!(s.darkness.abs() < 1e-5);
        assert!(s.ring_contrast.abs() < 1e-12);
        assert!(s.chroma_shift.abs() < 1e-12);
        let dark = two_tone(32, 32, &m, 0.25, 0.5);
        let s = score_candidate(&dark, &c, 3).unwrap();
        assert!((s.darkness - 0.5).abs() < 1e-5);
        assert!((s.ring_contrast - 0.25).abs() < 1e-12);
        let bright = two_tone(32, 32, &m, 0.8, 0.5);
        assert!(score_candidate(&bright, &c, 3).unwrap().darkness < 0.0);
        let whole = CandidateMask::new(ShadowMask::full(8, 8, MaskKind::Raw), "1").unwrap();
        let img = two_tone(8, 8, &whole.mask, 0.3, 0.3);
        assert!(matches!(score_candidate(&img, &whole, 2), Err(Error::DegenerateRegion(_))));
        assert!(matches!(score_candidate(&dark, &c, 0), Err(Error::Argument(_))));
    }

    #[test]
    fn selects_darkened_rectangle() {
        let truth = rect(64, 64, 16, 40, 20, 50);
        let img = ImageTensor::from_pixel_fn(64, 64, ColorSpace::Srgb, |y, x| {
            let k = if truth.get(y, x) { 0.4 } else { 1.0 };
            [0.7 * k, 0.6 * k, 0.5 * k]
        });
        let cands = vec![
            CandidateMask::new(truth.clone(), "0").unwrap(),
            CandidateMask::new(rect(64, 64, 0, 8, 0, 64), "1").unwrap(),
        ];
        let cfg = SelectionConfig { dilation_radius: 1, ..Default::default() };
        let sel = select_shadow_mask(&img, &cands, &cfg).unwrap();
        assert_eq!(sel.chosen, vec!["0".to_string()]);
        assert!(!sel.low_confidence);
        assert_eq!(sel.mask.kind(), MaskKind::Dilated);
        assert!(sel.mask.iou(&truth).unwrap() >= 0.85);
    }

    #[test]
    fn falls_back_to_darkest_when_nothing_passes() {
        let a = rect(32, 32, 2, 8, 2, 8);
        let b = rect(32, 32, 16, 28, 16, 28);
        let img = ImageTensor::from_pixel_fn(32, 32, ColorSpace::Srgb, |y, x| {
            [if a.get(y, x) {
                0.6
            } else if b.get(y, x) {
                0.9
            } else {
                0.5
            }; 3]
        });
        let cands = vec![CandidateMask::new(a.clone(), "a").unwrap(), CandidateMask::new(b, "b").unwrap()];
        let sel = select_shadow_mask(&img, &cands, &SelectionConfig::default()).unwrap();
        assert!(sel.low_confidence);
        assert_eq!(sel.chosen, vec!["a".to_string()]);
        assert_eq!(sel.mask, dilate(&a, 2).unwrap());
        assert!(matches!(select_shadow_mask(&img, &[], &SelectionConfig::default()), Err(Error::EmptyCandidates(_))));
    }

    #[test]
    fn unions_two_dark_candidates() {
        let a = rect(40, 40, 4, 12, 4, 12);
        let b = rect(40, 40, 24, 34, 24, 34);
        let both = a.union(&b).unwrap();
        let img = two_tone(40, 40, &both, 0.2, 0.7);
        let cands = vec![CandidateMask::new(b.clone(), "b").unwrap(), CandidateMask::new(a.clone(), "a").unwrap()];
        let sel = select_shadow_mask(&img, &cands, &SelectionConfig::default()).unwrap();
        assert_eq!(sel.chosen, vec!["a".to_string(), "b".to_string()]);
        assert_eq!(sel.mask, dilate(&both, 2).unwrap());
    }

    #[test]
    fn load_candidates_contracts() {
        let dir = tempfile::tempdir().unwrap();
        let id_dir = dir.path().join("img1");
        std::fs::create_dir(&id_dir).unwrap();
        assert!(matches!(load_candidates(dir.path(), "img1", (16, 16)), Err(Error::EmptyCandidates(_))));
        assert!(matches!(load_candidates(dir.path(), "missing", (16, 16)), Err(Error::EmptyCandidates(_))));
        for k in [10, 2, 1] {
            save_mask(&rect(16, 16, 0, k, 0, 4), id_dir.join(format!("{k}.png"))).unwrap();
        }
        let c = load_candidates(dir.path(), "img1", (16, 16)).unwrap();
        assert_eq!(c.iter().map(|c| c.source_id.as_str()).collect::<Vec<_>>(), ["1", "2", "10"]);
        assert!((c[2].area_fraction - 40.0 / 256.0).abs() < 1e-9);
        std::fs::write(id_dir.join("meta.json"), r#"[{"id":"2","area":8}]"#).unwrap();
        assert_eq!(load_candidates(dir.path(), "img1", (16, 16)).unwrap().len(), 3);
        std::fs::write(id_dir.join("meta.json"), r#"[{"id":"2","area":9}]"#).unwrap();
        assert!(matches!(load_candidates(dir.path(), "img1", (16, 16)), Err(Error::Format(_))));
        std::fs::remove_file(id_dir.join("meta.json")).unwrap();
        save_mask(&ShadowMask::full(8, 8, MaskKind::Raw), id_dir.join("3.png")).unwrap();
        match load_candidates(dir.path(), "img1", (16, 16)) {
            Err(Error::Format(msg)) => assert!(msg.contains("3.png"), "{msg}"),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    fn scene(seed: u64) -> (ImageTensor<f64>, Vec<CandidateMask>) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut cands = Vec::new();
        for k in 0..4 {
            let (y0, x0) = (rng.gen_range(0..20), rng.gen_range(0..20));
            let (hh, ww) = (rng.gen_range(3..10), rng.gen_range(3..10));
            cands.push(CandidateMask::new(rect(32, 32, y0, y0 + hh, x0, x0 + ww), k.to_string()).unwrap());
        }
        let levels: Vec<f64> = (0..4).map(|_| rng.gen_range(0.1..0.9)).collect();
        let img = ImageTensor::from_pixel_fn(32, 32, ColorSpace::Srgb, |y, x| {
            let v = cands.iter().zip(&levels).find(|(c, _)| c.mask.get(y, x)).map_or(0.6, |(_, &l)| l);
            [v; 3]
        });
        (img, cands)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn selection_is_order_independent_and_extensive(seed in 0u64..1000, rot in 0usize..4) {
            let (img, cands) = scene(seed);
            let cfg = SelectionConfig::default();
            let base = select_shadow_mask(&img, &cands, &cfg).unwrap();
            let mut shuffled = cands.clone();
            shuffled.rotate_left(rot);
            shuffled.swap(0, 3);
            let other = select_shadow_mask(&img, &shuffled, &cfg).unwrap();
            prop_assert_eq!(&base.mask, &other.mask);
            prop_assert_eq!(&base.chosen, &other.chosen);
            prop_assert_eq!(base.mask.kind(), MaskKind::Dilated);
            for c in cands.iter().filter(|c| base.chosen.contains(&c.source_id)) {
                prop_assert!(c.mask.is_subset_of(&base.mask));
            }
        }

        #[test]
        fn darkness_is_scale_invariant(seed in 0u64..1000, k in 0.05f64..=1.0) {
            let (img, cands) = scene(seed);
            let scaled = img.with_field(img.field().map(|v| v * k));
            for c in &cands {
                if let (Ok(a), Ok(b)) = (score_candidate(&img, c, 3), score_candidate(&scaled, c, 3)) {
                    prop_assert!((a.darkness - b.darkness).abs() <= 1e-4);
                }
            }
        }
    }
}
