//! Raster bar charts and side-by-side image strips.

use deshadow_core::imaging::resize;
use deshadow_core::{ColorSpace, Error, ImageTensor, Result, ShadowMask};

const PALETTE: [[f64; 3]; 6] = [
    [0.22, 0.42, 0.69],
    [0.87, 0.52, 0.16],
    [0.33, 0.63, 0.33],
    [0.78, 0.24, 0.24],
    [0.55, 0.42, 0.71],
    [0.55, 0.55, 0.55],
];
const BAR: usize = 40;
const GAP: usize = 20;
const HEIGHT: usize = 200;
const MARGIN: usize = 16;

/// One bar per value, scaled to the largest; missing values leave a gap.
/// Negative values are drawn as empty bars.
pub fn bar_chart(values: &[Option<f64>]) -> ImageTensor<f64> {
    let width = 2 * MARGIN + values.len() * BAR + values.len().saturating_sub(1) * GAP;
    let top = values.iter().flatten().fold(0.0f64, |m, &v| m.max(v));
    let plot_h = HEIGHT - 2 * MARGIN;
    let bars: Vec<usize> = values
        .iter()
        .map(|v| match v {
            Some(v) if top > 0.0 && *v > 0.0 => ((v / top) * plot_h as f64).round() as usize,
            _ => 0,
        })
        .collect();
    let baseline = HEIGHT - MARGIN;
    ImageTensor::from_pixel_fn(HEIGHT, width, ColorSpace::Srgb, |y, x| {
        if y == baseline && x >= MARGIN / 2 && x < width - MARGIN / 2 {
            return [0.0; 3];
        }
        if x >= MARGIN && y < baseline {
            let k = (x - MARGIN) / (BAR + GAP);
            let within = (x - MARGIN) % (BAR + GAP) < BAR;
            if k < bars.len() && within && y >= baseline - bars[k] {
                return PALETTE[k % PALETTE.len()];
            }
        }
        [1.0; 3]
    })
}

pub fn mask_image(mask: &ShadowMask) -> ImageTensor<f64> {
    let (h, w) = mask.dims();
    ImageTensor::from_pixel_fn(h, w, ColorSpace::Srgb, |y, x| [if mask.get(y, x) { 1.0 } else { 0.0 }; 3])
}

/// Panels side by side on a white background, each resized to the first
/// panel's size.
pub fn strip(panels: &[ImageTensor<f64>]) -> Result<ImageTensor<f64>> {
    const SEP: usize = 4;
    let first = panels.first().ok_or_else(|| Error::Argument("empty image strip".into()))?;
    let (h, w) = first.dims();
    let fitted = panels
        .iter()
        .map(|p| if p.dims() == (h, w) { Ok(p.clone()) } else { resize(p, h, w) })
        .collect::<Result<Vec<_>>>()?;
    let total = panels.len() * w + (panels.len() - 1) * SEP;
    Ok(ImageTensor::from_pixel_fn(h, total, ColorSpace::Srgb, |y, x| {
        let (k, off) = (x / (w + SEP), x % (w + SEP));
        if off < w {
            fitted[k].pixel(y, off)
        } else {
            [1.0; 3]
        }
    }))
}
