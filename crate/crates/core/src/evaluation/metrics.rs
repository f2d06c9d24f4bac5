use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{luma_plane, srgb_to_lab, ColorSpace, ImageTensor, ShadowMask};
use crate::scalar::Scalar;

pub const PSNR_CAP: f64 = 99.0;
pub const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Region {
    All,
    Shadow,
    NonShadow,
}

/// How per-pixel LAB differences are aggregated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabError {
    /// Mean over pixels of the mean absolute channel difference (the usual
    /// "RMSE" of shadow-removal benchmarks).
    #[default]
    MeanAbsolute,
    /// Literal root of the mean squared channel difference.
    RootMeanSquare,
}

/// Pixel indices selected by `region`.
fn region_pixels(dims: (usize, usize), mask: Option<&ShadowMask>, region: Region) -> Result<Vec<usize>> {
    let n = dims.0 * dims.1;
    let sel: Vec<usize> = match (region, mask) {
        (Region::All, _) => (0..n).collect(),
        (_, None) => return Err(Error::Argument(format!("{region:?} region needs a mask"))),
        (r, Some(m)) => {
            if m.dims() != dims {
                return Err(Error::shape("metric mask", dims, m.dims()));
            }
            let want = r == Region::Shadow;
            m.bits().iter().enumerate().filter(|(_, &b)| b == want).map(|(i, _)| i).collect()
        }
    };
    if sel.is_empty() {
        return Err(Error::DegenerateRegion(format!("{region:?} region is empty")));
    }
    Ok(sel)
}

fn check_pair<T: Scalar>(pred: &ImageTensor<T>, gt: &ImageTensor<T>, space: ColorSpace) -> Result<()> {
    pred.expect_space(space, "metric prediction")?;
    gt.expect_space(space, "metric ground truth")?;
    pred.check_same(gt.dims(), "metric pair")
}

/// LAB error on images already converted to LAB.
pub fn lab_error<T: Scalar>(
    pred: &ImageTensor<T>,
    gt: &ImageTensor<T>,
    mask: Option<&ShadowMask>,
    region: Region,
    mode: LabError,
) -> Result<f64> {
    check_pair(pred, gt, ColorSpace::Lab)?;
    let px = region_pixels(pred.dims(), mask, region)?;
    let (p, g) = (pred.field(), gt.field());
    let hw = pred.pixels();
    let mut acc = 0.0;
    for &i in &px {
        let d = |c: usize| p.data()[c * hw + i].as_f64() - g.data()[c * hw + i].as_f64();
        acc += match mode {
            LabError::MeanAbsolute => (d(0).abs() + d(1).abs() + d(2).abs()) / 3.0,
            LabError::RootMeanSquare => (d(0) * d(0) + d(1) * d(1) + d(2) * d(2)) / 3.0,
        };
    }
    let mean = acc / px.len() as f64;
    Ok(match mode {
        LabError::MeanAbsolute => mean,
        LabError::RootMeanSquare => mean.sqrt(),
    })
}

/// Region error in LAB between two sRGB images.
pub fn rmse_lab<T: Scalar>(
    pred: &ImageTensor<T>,
    gt: &ImageTensor<T>,
    mask: Option<&ShadowMask>,
    region: Region,
    mode: LabError,
) -> Result<f64> {
    check_pair(pred, gt, ColorSpace::Srgb)?;
    lab_error(&srgb_to_lab(pred)?, &srgb_to_lab(gt)?, mask, region, mode)
}

/// PSNR over the region's RGB values, unit peak, capped at 99 dB.
pub fn psnr_region<T: Scalar>(
    pred: &ImageTensor<T>,
    gt: &ImageTensor<T>,
    mask: Option<&ShadowMask>,
    region: Region,
) -> Result<f64> {
    check_pair(pred, gt, ColorSpace::Srgb)?;
    let px = region_pixels(pred.dims(), mask, region)?;
    let hw = pred.pixels();
    let mut se = 0.0;
    for c in 0..3 {
        for &i in &px {
            let d = pred.data()[c * hw + i].as_f64() - gt.data()[c * hw + i].as_f64();
            se += d * d;
        }
    }
    let mse = se / (3 * px.len()) as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((-10.0 * mse.log10()).min(PSNR_CAP))
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut g = [0.0; SSIM_WINDOW];
    for (i, v) in g.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = g.iter().sum();
    g.map(|v| v / s)
}

/// Half-sample symmetric index: `d c b a | a b c d | d c b a`.
#[inline]
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let i = if i < 0 {
        -i - 1
    } else if i >= n {
        2 * n - i - 1
    } else {
        i
    };
    i as usize
}

fn blur(src: &[f64], h: usize, w: usize, g: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as isize;
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for (k, &gk) in g.iter().enumerate() {
                s += gk * src[y * w + reflect(x as isize + k as isize - r, w)];
            }
            tmp[y * w + x] = s;
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for (k, &gk) in g.iter().enumerate() {
                s += gk * tmp[reflect(y as isize + k as isize - r, h) * w + x];
            }
            out[y * w + x] = s;
        }
    }
    out
}

/// Per-pixel SSIM of the luma planes, same size as the input.
pub fn ssim_map<T: Scalar>(pred: &ImageTensor<T>, gt: &ImageTensor<T>) -> Result<Vec<f64>> {
    check_pair(pred, gt, ColorSpace::Srgb)?;
    let (h, w) = pred.dims();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Argument(format!("SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {h}x{w}")));
    }
    let x: Vec<f64> = luma_plane(pred.field()).into_iter().map(|v| v.as_f64()).collect();
    let y: Vec<f64> = luma_plane(gt.field()).into_iter().map(|v| v.as_f64()).collect();
    let g = gaussian_window();
    let prod = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).collect::<Vec<_>>();
    let mx = blur(&x, h, w, &g);
    let my = blur(&y, h, w, &g);
    let mxx = blur(&prod(&x, &x), h, w, &g);
    let myy = blur(&prod(&y, &y), h, w, &g);
    let mxy = blur(&prod(&x, &y), h, w, &g);
    Ok((0..h * w)
        .map(|i| {
            let (ux, uy) = (mx[i], my[i]);
            let vx = mxx[i] - ux * ux;
            let vy = myy[i] - uy * uy;
            let cxy = mxy[i] - ux * uy;
            ((2.0 * (ux * uy) + SSIM_C1) * (2.0 * cxy + SSIM_C2))
                / ((ux * ux + uy * uy + SSIM_C1) * (vx + vy + SSIM_C2))
        })
        .collect())
}

/// Mean of the full-image SSIM map over the region.
pub fn ssim_region<T: Scalar>(
    pred: &ImageTensor<T>,
    gt: &ImageTensor<T>,
    mask: Option<&ShadowMask>,
    region: Region,
) -> Result<f64> {
    let map = ssim_map(pred, gt)?;
    let px = region_pixels(pred.dims(), mask, region)?;
    Ok(px.iter().map(|&i| map[i]).sum::<f64>() / px.len() as f64)
}

/// The nine metrics of one image. Region values are `None` when no mask is
/// available or the region is empty.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RegionMetrics {
    pub rmse_all: Option<f64>,
    pub rmse_n: Option<f64>,
    pub rmse_s: Option<f64>,
    pub ssim: Option<f64>,
    pub ssim_n: Option<f64>,
    pub ssim_s: Option<f64>,
    pub psnr: Option<f64>,
    pub psnr_n: Option<f64>,
    pub psnr_s: Option<f64>,
}

pub const METRIC_COLUMNS: [&str; 9] =
    ["rmse_all", "rmse_n", "rmse_s", "ssim", "ssim_n", "ssim_s", "psnr", "psnr_n", "psnr_s"];

impl RegionMetrics {
    pub fn values(&self) -> [Option<f64>; 9] {
        [
            self.rmse_all,
            self.rmse_n,
            self.rmse_s,
            self.ssim,
            self.ssim_n,
            self.ssim_s,
            self.psnr,
            self.psnr_n,
            self.psnr_s,
        ]
    }

    pub fn from_values(v: [Option<f64>; 9]) -> Self {
        Self {
            rmse_all: v[0],
            rmse_n: v[1],
            rmse_s: v[2],
            ssim: v[3],
            ssim_n: v[4],
            ssim_s: v[5],
            psnr: v[6],
            psnr_n: v[7],
            psnr_s: v[8],
        }
    }

    /// Column-wise mean over the rows that have a value.
    pub fn mean(rows: &[RegionMetrics]) -> RegionMetrics {
        let mut out = [None; 9];
        for (k, slot) in out.iter_mut().enumerate() {
            let vals: Vec<f64> = rows.iter().filter_map(|r| r.values()[k]).collect();
            if !vals.is_empty() {
                *slot = Some(vals.iter().sum::<f64>() / vals.len() as f64);
            }
        }
        RegionMetrics::from_values(out)
    }
}

fn optional(r: Result<f64>) -> Result<Option<f64>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::DegenerateRegion(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// All nine metrics for one pair of sRGB images.
pub fn region_metrics<T: Scalar>(
    pred: &ImageTensor<T>,
    gt: &ImageTensor<T>,
    mask: Option<&ShadowMask>,
    mode: LabError,
) -> Result<RegionMetrics> {
    check_pair(pred, gt, ColorSpace::Srgb)?;
    let (pl, gl) = (srgb_to_lab(pred)?, srgb_to_lab(gt)?);
    let map = ssim_map(pred, gt)?;
    let ssim_of = |region| -> Result<f64> {
        let px = region_pixels(pred.dims(), mask, region)?;
        Ok(px.iter().map(|&i| map[i]).sum::<f64>() / px.len() as f64)
    };
    let mut m = RegionMetrics {
        rmse_all: Some(lab_error(&pl, &gl, mask, Region::All, mode)?),
        ssim: Some(ssim_of(Region::All)?),
        psnr: Some(psnr_region(pred, gt, mask, Region::All)?),
        ..Default::default()
    };
    if mask.is_some() {
        m.rmse_n = optional(lab_error(&pl, &gl, mask, Region::NonShadow, mode))?;
        m.rmse_s = optional(lab_error(&pl, &gl, mask, Region::Shadow, mode))?;
        m.ssim_n = optional(ssim_of(Region::NonShadow))?;
        m.ssim_s = optional(ssim_of(Region::Shadow))?;
        m.psnr_n = optional(psnr_region(pred, gt, mask, Region::NonShadow))?;
        m.psnr_s = optional(psnr_region(pred, gt, mask, Region::Shadow))?;
    }
    Ok(m)
}
