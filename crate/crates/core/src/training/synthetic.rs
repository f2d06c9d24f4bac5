//! Small synthetic triplets with a known relighting gain, for overfit runs
//! and end-to-end tests.

use std::f64::consts::TAU;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::imaging::{dilate, save_image, save_mask, to_byte, ColorSpace, ImageTensor, MaskKind, ShadowMask};

use super::dataset::TrainSample;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub count: usize,
    pub size: usize,
    pub seed: u64,
    /// Dilation applied to the true mask to get the solver's target mask.
    pub dilation_radius: i64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self { count: 8, size: 32, seed: 7, dilation_radius: 2 }
    }
}

fn quantize(img: ImageTensor<f64>) -> ImageTensor<f64> {
    img.with_field(img.field().map(|v| to_byte(v) as f64 / 255.0))
}

/// Smooth texture in `[0.15, 0.85]`, darkened by `1/(1 + As)` inside one or
/// two rectangles with `As ~ U[0.5, 1.5]` per rectangle. Images are
/// quantized to 8 bits so they survive a PNG round trip unchanged.
pub fn synthetic_triplets(cfg: &SyntheticConfig) -> Vec<TrainSample<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.size;
    (0..cfg.count)
        .map(|k| {
            let base: [f64; 3] = [0; 3].map(|_| rng.gen_range(0.4..0.6));
            let amp: [f64; 3] = [0; 3].map(|_| rng.gen_range(0.1..0.25));
            let (fy, fx) = (rng.gen_range(0.1..0.35), rng.gen_range(0.1..0.35));
            let (py, px) = (rng.gen_range(0.0..TAU), rng.gen_range(0.0..TAU));
            let gt = ImageTensor::from_pixel_fn(n, n, ColorSpace::Srgb, |y, x| {
                let t = (fy * y as f64 + py).sin() * (fx * x as f64 + px).cos();
                [0, 1, 2].map(|c| base[c] + amp[c] * t)
            });
            let mut gain = vec![0.0; n * n];
            let mut mask = ShadowMask::empty(n, n, MaskKind::Raw);
            let rects = rng.gen_range(1..=2);
            for _ in 0..rects {
                let (h, w) = (rng.gen_range(n / 4..=n / 2), rng.gen_range(n / 4..=n / 2));
                let (y0, x0) = (rng.gen_range(0..=n - h), rng.gen_range(0..=n - w));
                let a = rng.gen_range(0.5..1.5);
                for y in y0..y0 + h {
                    for x in x0..x0 + w {
                        gain[y * n + x] = a;
                        mask.set(y, x, true);
                    }
                }
            }
            let shadow = ImageTensor::from_pixel_fn(n, n, ColorSpace::Srgb, |y, x| {
                gt.pixel(y, x).map(|v| v / (1.0 + gain[y * n + x]))
            });
            let target = dilate(&mask, cfg.dilation_radius).expect("non-negative radius");
            TrainSample { id: format!("syn{k:02}"), shadow: quantize(shadow), gt: quantize(gt), mask, target }
        })
        .collect()
}

/// Writes samples in the ISTD layout under `root` (`train_A`, `train_B`,
/// `train_C`).
pub fn write_istd(root: &Path, samples: &[TrainSample<f64>]) -> Result<()> {
    for s in samples {
        save_image(&s.shadow, root.join("train_A").join(format!("{}.png", s.id)))?;
        save_mask(&s.mask, root.join("train_B").join(format!("{}.png", s.id)))?;
        save_image(&s.gt, root.join("train_C").join(format!("{}.png", s.id)))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::dataset::{load_dataset, DatasetOptions, Layout, Split};

    #[test]
    fn fixture_is_deterministic_and_in_range() {
        let cfg = SyntheticConfig::default();
        let a = synthetic_triplets(&cfg);
        assert_eq!(a, synthetic_triplets(&cfg));
        assert_eq!(a.len(), 8);
        for s in &a {
            let (lo, hi) = s.gt.min_max();
            assert!(lo >= 0.14 && hi <= 0.86, "{lo} {hi}");
            assert!(s.mask.count() > 0 && s.mask.is_subset_of(&s.target));
            for y in 0..32 {
                for x in 0..32 {
                    let (p, g) = (s.shadow.pixel(y, x), s.gt.pixel(y, x));
                    if s.mask.get(y, x) {
                        assert!(p[0] < g[0]);
                    } else {
                        assert_eq!(p, g);
                    }
                }
            }
        }
    }

    #[test]
    fn survives_disk_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s = synthetic_triplets(&SyntheticConfig { count: 3, ..Default::default() });
        write_istd(dir.path(), &s).unwrap();
        let opts = DatasetOptions { resize: None, ..Default::default() };
        let loaded = load_dataset::<f64>(dir.path(), Split::Train, Layout::Istd, &opts).unwrap();
        assert_eq!(loaded, s);
    }
}
