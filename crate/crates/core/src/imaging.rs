//! Image and mask containers, PNG I/O, bilinear resampling, sRGB to CIELAB
//! conversion and binary dilation.
//!
//! Images are stored planar (`C×H×W`, three planes) so they can be handed to
//! the network code without reshuffling.

use std::ops::{Deref, DerefMut};
use std::path::Path;

use image::{DynamicImage, GrayImage, ImageBuffer, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const CHANNELS: usize = 3;

/// Interpretation of the values stored in an [`ImageTensor`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ColorSpace {
    Srgb,
    LinearRgb,
    Lab,
}

/// A real-valued `H×W×3` field with no range contract. Gradient fields and
/// illumination maps are built on it.
#[derive(Debug, Clone, PartialEq)]
pub struct Field<T> {
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Scalar> Field<T> {
    pub fn new(height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Argument(format!("empty field {height}x{width}")));
        }
        if data.len() != CHANNELS * height * width {
            return Err(Error::Shape(format!(
                "expected {} values for {height}x{width}x3, got {}",
                CHANNELS * height * width,
                data.len()
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, value: T) -> Self {
        assert!(height > 0 && width > 0, "empty field");
        Self { height, width, data: vec![value; CHANNELS * height * width] }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, T::zero())
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize, usize) -> T) -> Self {
        assert!(height > 0 && width > 0, "empty field");
        let mut data = Vec::with_capacity(CHANNELS * height * width);
        for c in 0..CHANNELS {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self { height, width, data }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> T {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: T) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn plane(&self, c: usize) -> &[T] {
        let n = self.pixels();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn pixel(&self, y: usize, x: usize) -> [T; 3] {
        [self.get(0, y, x), self.get(1, y, x), self.get(2, y, x)]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { height: self.height, width: self.width, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    /// Elementwise combination; shapes must agree.
    pub fn zip_map(&self, other: &Self, what: &str, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.check_same(other.dims(), what)?;
        Ok(Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub(crate) fn check_same(&self, dims: (usize, usize), what: &str) -> Result<()> {
        if self.dims() != dims {
            return Err(Error::shape(what, self.dims(), dims));
        }
        Ok(())
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn min_max(&self) -> (T, T) {
        self.data.iter().fold((T::infinity(), T::neg_infinity()), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// Euclidean norm over all elements.
    pub fn norm(&self) -> T {
        self.data.iter().map(|&v| v * v).sum::<T>().sqrt()
    }

    pub fn cast<U: Scalar>(&self) -> Field<U> {
        Field { height: self.height, width: self.width, data: self.data.iter().map(|v| U::lit(v.as_f64())).collect() }
    }
}

/// An `H×W×3` image together with the color space its values live in.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor<T> {
    field: Field<T>,
    space: ColorSpace,
}

impl<T> Deref for ImageTensor<T> {
    type Target = Field<T>;

    fn deref(&self) -> &Field<T> {
        &self.field
    }
}

impl<T> DerefMut for ImageTensor<T> {
    fn deref_mut(&mut self) -> &mut Field<T> {
        &mut self.field
    }
}

impl<T: Scalar> ImageTensor<T> {
    pub fn new(height: usize, width: usize, data: Vec<T>, space: ColorSpace) -> Result<Self> {
        Ok(Self { field: Field::new(height, width, data)?, space })
    }

    pub fn from_field(field: Field<T>, space: ColorSpace) -> Self {
        Self { field, space }
    }

    pub fn filled(height: usize, width: usize, rgb: [T; 3], space: ColorSpace) -> Self {
        Self::from_pixel_fn(height, width, space, |_, _| rgb)
    }

    pub fn from_pixel_fn(
        height: usize,
        width: usize,
        space: ColorSpace,
        mut f: impl FnMut(usize, usize) -> [T; 3],
    ) -> Self {
        let mut field = Field::zeros(height, width);
        for y in 0..height {
            for x in 0..width {
                let p = f(y, x);
                for (c, v) in p.into_iter().enumerate() {
                    field.set(c, y, x, v);
                }
            }
        }
        Self { field, space }
    }

    #[inline]
    pub fn space(&self) -> ColorSpace {
        self.space
    }

    pub fn field(&self) -> &Field<T> {
        &self.field
    }

    pub fn into_field(self) -> Field<T> {
        self.field
    }

    pub fn with_field(&self, field: Field<T>) -> Self {
        Self { field, space: self.space }
    }

    pub fn clamp_unit(&self) -> Self {
        self.with_field(self.field.map(|v| v.max(T::zero()).min(T::one())))
    }

    pub(crate) fn expect_space(&self, space: ColorSpace, op: &str) -> Result<()> {
        if self.space != space {
            return Err(Error::State(format!("{op} expects {space:?} input, got {:?}", self.space)));
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> ImageTensor<U> {
        ImageTensor { field: self.field.cast(), space: self.space }
    }
}

/// Whether a mask is the raw detector output or the expanded solver target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MaskKind {
    Raw,
    Dilated,
}

/// A strictly binary `H×W` mask.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ShadowMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
    kind: MaskKind,
}

impl ShadowMask {
    pub fn new(height: usize, width: usize, bits: Vec<bool>, kind: MaskKind) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Argument(format!("empty mask {height}x{width}")));
        }
        if bits.len() != height * width {
            return Err(Error::Shape(format!(
                "mask {height}x{width} needs {} values, got {}",
                height * width,
                bits.len()
            )));
        }
        Ok(Self { height, width, bits, kind })
    }

    pub fn empty(height: usize, width: usize, kind: MaskKind) -> Self {
        Self::from_fn(height, width, kind, |_, _| false)
    }

    pub fn full(height: usize, width: usize, kind: MaskKind) -> Self {
        Self::from_fn(height, width, kind, |_, _| true)
    }

    pub fn from_fn(height: usize, width: usize, kind: MaskKind, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        assert!(height > 0 && width > 0, "empty mask");
        let mut bits = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(y, x));
            }
        }
        Self { height, width, bits, kind }
    }

    /// Thresholds real values: `v >= threshold` is set.
    pub fn from_values<T: Scalar>(
        height: usize,
        width: usize,
        values: &[T],
        threshold: T,
        kind: MaskKind,
    ) -> Result<Self> {
        Self::new(height, width, values.iter().map(|&v| v >= threshold).collect(), kind)
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn kind(&self) -> MaskKind {
        self.kind
    }

    pub fn with_kind(mut self, kind: MaskKind) -> Self {
        self.kind = kind;
        self
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.bits[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn area_fraction(&self) -> f64 {
        self.count() as f64 / (self.height * self.width) as f64
    }

    /// Mask as 0/1 reals in row-major order.
    pub fn values<T: Scalar>(&self) -> Vec<T> {
        self.bits.iter().map(|&b| if b { T::one() } else { T::zero() }).collect()
    }

    fn check_same(&self, other: &ShadowMask, what: &str) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::shape(what, self.dims(), other.dims()));
        }
        Ok(())
    }

    pub fn union(&self, other: &ShadowMask) -> Result<ShadowMask> {
        self.check_same(other, "mask union")?;
        let bits = self.bits.iter().zip(&other.bits).map(|(&a, &b)| a || b).collect();
        Ok(ShadowMask { height: self.height, width: self.width, bits, kind: self.kind })
    }

    pub fn difference(&self, other: &ShadowMask) -> Result<ShadowMask> {
        self.check_same(other, "mask difference")?;
        let bits = self.bits.iter().zip(&other.bits).map(|(&a, &b)| a && !b).collect();
        Ok(ShadowMask { height: self.height, width: self.width, bits, kind: self.kind })
    }

    pub fn complement(&self) -> ShadowMask {
        ShadowMask {
            height: self.height,
            width: self.width,
            bits: self.bits.iter().map(|b| !b).collect(),
            kind: self.kind,
        }
    }

    /// `self ⊆ other`.
    pub fn is_subset_of(&self, other: &ShadowMask) -> bool {
        self.dims() == other.dims() && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    /// Intersection over union; two empty masks count as a perfect match.
    pub fn iou(&self, other: &ShadowMask) -> Result<f64> {
        self.check_same(other, "mask iou")?;
        let (mut inter, mut uni) = (0usize, 0usize);
        for (&a, &b) in self.bits.iter().zip(&other.bits) {
            inter += (a && b) as usize;
            uni += (a || b) as usize;
        }
        Ok(if uni == 0 { 1.0 } else { inter as f64 / uni as f64 })
    }
}

fn decode_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Decode { path: path.to_path_buf(), reason: reason.into() }
}

fn open_dynamic(path: &Path) -> Result<DynamicImage> {
    if !path.exists() {
        return Err(Error::NotFound(path.to_path_buf()));
    }
    let reader = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    reader.decode().map_err(|e| decode_err(path, e.to_string()))
}

/// Loads an 8- or 16-bit RGB(A) PNG as sRGB values in `[0,1]`. Alpha is dropped.
pub fn load_image<T: Scalar>(path: impl AsRef<Path>) -> Result<ImageTensor<T>> {
    let path = path.as_ref();
    let img = open_dynamic(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    if w == 0 || h == 0 {
        return Err(decode_err(path, "zero-sized image"));
    }
    let (raw, scale): (Vec<u16>, f64) = match img {
        DynamicImage::ImageRgb8(b) => (b.pixels().flat_map(|p| p.0.map(u16::from)).collect(), 255.0),
        DynamicImage::ImageRgba8(b) => {
            (b.pixels().flat_map(|p| [p.0[0], p.0[1], p.0[2]].map(u16::from)).collect(), 255.0)
        }
        DynamicImage::ImageRgb16(b) => (b.pixels().flat_map(|p| p.0).collect(), 65535.0),
        DynamicImage::ImageRgba16(b) => (b.pixels().flat_map(|p| [p.0[0], p.0[1], p.0[2]]).collect(), 65535.0),
        other => return Err(decode_err(path, format!("not an RGB image ({:?})", other.color()))),
    };
    let scale = T::lit(scale);
    Ok(ImageTensor::from_pixel_fn(h, w, ColorSpace::Srgb, |y, x| {
        let i = (y * w + x) * 3;
        [0, 1, 2].map(|c| T::lit(raw[i + c] as f64) / scale)
    }))
}

/// Quantizes a unit value to a byte: clamp to `[0,1]`, then round half up.
#[inline]
pub fn to_byte<T: Scalar>(v: T) -> u8 {
    let v = if v.is_nan() { 0.0 } else { v.as_f64().clamp(0.0, 1.0) };
    (v * 255.0 + 0.5).floor() as u8
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(())
}

fn write_png<P, C>(buf: &ImageBuffer<P, C>, path: &Path) -> Result<()>
where
    P: image::PixelWithColorType,
    [P::Subpixel]: image::EncodableLayout,
    C: Deref<Target = [P::Subpixel]>,
{
    ensure_parent(path)?;
    buf.save_with_format(path, image::ImageFormat::Png).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Io { path: path.to_path_buf(), source: std::io::Error::other(other.to_string()) },
    })
}

/// Converts an sRGB tensor to an 8-bit buffer.
pub fn to_rgb8<T: Scalar>(img: &ImageTensor<T>) -> Result<RgbImage> {
    img.expect_space(ColorSpace::Srgb, "to_rgb8")?;
    let (h, w) = img.dims();
    Ok(RgbImage::from_fn(w as u32, h as u32, |x, y| Rgb(img.pixel(y as usize, x as usize).map(to_byte))))
}

/// Writes an 8-bit RGB PNG.
pub fn save_image<T: Scalar>(img: &ImageTensor<T>, path: impl AsRef<Path>) -> Result<()> {
    write_png(&to_rgb8(img)?, path.as_ref())
}

/// Loads a single-channel mask: gray value `> 127` is set.
pub fn load_mask(path: impl AsRef<Path>) -> Result<ShadowMask> {
    let path = path.as_ref();
    let gray = open_dynamic(path)?.to_luma8();
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    if w == 0 || h == 0 {
        return Err(decode_err(path, "zero-sized mask"));
    }
    ShadowMask::new(h, w, gray.pixels().map(|p| p.0[0] > 127).collect(), MaskKind::Raw)
}

pub fn save_mask(mask: &ShadowMask, path: impl AsRef<Path>) -> Result<()> {
    let (h, w) = mask.dims();
    let buf = GrayImage::from_fn(w as u32, h as u32, |x, y| {
        image::Luma([if mask.get(y as usize, x as usize) { 255 } else { 0 }])
    });
    write_png(&buf, path.as_ref())
}

/// Sample positions and weights for one axis of a half-pixel-centered
/// bilinear resize.
fn bilinear_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let s = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let lo = s.floor() as usize;
            let hi = (lo + 1).min(src - 1);
            (lo, hi, s - lo as f64)
        })
        .collect()
}

fn resize_plane<T: Scalar>(
    src: &[T],
    sh: usize,
    sw: usize,
    ys: &[(usize, usize, f64)],
    xs: &[(usize, usize, f64)],
    out: &mut Vec<T>,
) {
    for &(y0, y1, fy) in ys {
        let fy = T::lit(fy);
        for &(x0, x1, fx) in xs {
            let fx = T::lit(fx);
            let top = src[y0 * sw + x0] * (T::one() - fx) + src[y0 * sw + x1] * fx;
            let bot = src[y1 * sw + x0] * (T::one() - fx) + src[y1 * sw + x1] * fx;
            out.push(top * (T::one() - fy) + bot * fy);
        }
    }
    debug_assert!(sh > 0);
}

/// Bilinear resize with half-pixel centers (`align_corners = false`).
pub fn resize<T: Scalar>(img: &ImageTensor<T>, height: usize, width: usize) -> Result<ImageTensor<T>> {
    if height == 0 || width == 0 {
        return Err(Error::Argument(format!("resize target must be positive, got {height}x{width}")));
    }
    if img.dims() == (height, width) {
        return Ok(img.clone());
    }
    let (sh, sw) = img.dims();
    let ys = bilinear_taps(sh, height);
    let xs = bilinear_taps(sw, width);
    let mut data = Vec::with_capacity(CHANNELS * height * width);
    for c in 0..CHANNELS {
        resize_plane(img.plane(c), sh, sw, &ys, &xs, &mut data);
    }
    ImageTensor::new(height, width, data, img.space())
}

/// Resizes a mask bilinearly and re-thresholds at one half.
pub fn resize_mask(mask: &ShadowMask, height: usize, width: usize) -> Result<ShadowMask> {
    if height == 0 || width == 0 {
        return Err(Error::Argument(format!("resize target must be positive, got {height}x{width}")));
    }
    if mask.dims() == (height, width) {
        return Ok(mask.clone());
    }
    let (sh, sw) = mask.dims();
    let src: Vec<f64> = mask.values();
    let mut out = Vec::with_capacity(height * width);
    resize_plane(&src, sh, sw, &bilinear_taps(sh, height), &bilinear_taps(sw, width), &mut out);
    ShadowMask::from_values(height, width, &out, 0.5, mask.kind())
}

/// Rec. 601 luma of an RGB triple.
#[inline]
pub fn luma<T: Scalar>(rgb: [T; 3]) -> T {
    T::lit(0.299) * rgb[0] + T::lit(0.587) * rgb[1] + T::lit(0.114) * rgb[2]
}

pub fn luma_plane<T: Scalar>(img: &Field<T>) -> Vec<T> {
    let (r, g, b) = (img.plane(0), img.plane(1), img.plane(2));
    (0..img.pixels()).map(|i| luma([r[i], g[i], b[i]])).collect()
}

const SRGB_TO_XYZ: [[f64; 3]; 3] =
    [[0.4124564, 0.3575761, 0.1804375], [0.2126729, 0.7151522, 0.0721750], [0.0193339, 0.1191920, 0.9503041]];
const WHITE_D65: [f64; 3] = [0.95047, 1.00000, 1.08883];

#[inline]
fn srgb_linearize<T: Scalar>(c: T) -> T {
    if c <= T::lit(0.04045) {
        c / T::lit(12.92)
    } else {
        ((c + T::lit(0.055)) / T::lit(1.055)).powf(T::lit(2.4))
    }
}

#[inline]
fn lab_f<T: Scalar>(t: T) -> T {
    let d = T::lit(6.0 / 29.0);
    if t > d * d * d {
        t.cbrt()
    } else {
        t / (T::lit(3.0) * d * d) + T::lit(4.0 / 29.0)
    }
}

/// CIELAB (D65, 2° observer) of one sRGB pixel.
pub fn srgb_pixel_to_lab<T: Scalar>(rgb: [T; 3]) -> [T; 3] {
    let lin = rgb.map(srgb_linearize);
    let xyz = SRGB_TO_XYZ.map(|row| T::lit(row[0]) * lin[0] + T::lit(row[1]) * lin[1] + T::lit(row[2]) * lin[2]);
    let fx = lab_f(xyz[0] / T::lit(WHITE_D65[0]));
    let fy = lab_f(xyz[1] / T::lit(WHITE_D65[1]));
    let fz = lab_f(xyz[2] / T::lit(WHITE_D65[2]));
    [T::lit(116.0) * fy - T::lit(16.0), T::lit(500.0) * (fx - fy), T::lit(200.0) * (fy - fz)]
}

pub fn srgb_to_lab<T: Scalar>(img: &ImageTensor<T>) -> Result<ImageTensor<T>> {
    img.expect_space(ColorSpace::Srgb, "srgb_to_lab")?;
    let (h, w) = img.dims();
    Ok(ImageTensor::from_pixel_fn(h, w, ColorSpace::Lab, |y, x| srgb_pixel_to_lab(img.pixel(y, x))))
}

/// Binary dilation with a `(2r+1)×(2r+1)` square structuring element.
///
/// The square element is separable, so this runs a horizontal then a
/// vertical running-window OR.
pub fn dilate(mask: &ShadowMask, radius: i64) -> Result<ShadowMask> {
    if radius < 0 {
        return Err(Error::Argument(format!("dilation radius must be >= 0, got {radius}")));
    }
    let r = radius as usize;
    let (h, w) = mask.dims();
    let mut horiz = vec![false; h * w];
    for y in 0..h {
        let row = &mask.bits()[y * w..(y + 1) * w];
        // prefix counts give O(1) window queries
        let mut prefix = vec![0usize; w + 1];
        for x in 0..w {
            prefix[x + 1] = prefix[x] + row[x] as usize;
        }
        for x in 0..w {
            let lo = x.saturating_sub(r);
            let hi = (x + r + 1).min(w);
            horiz[y * w + x] = prefix[hi] > prefix[lo];
        }
    }
    let mut out = vec![false; h * w];
    for x in 0..w {
        let mut prefix = vec![0usize; h + 1];
        for y in 0..h {
            prefix[y + 1] = prefix[y] + horiz[y * w + x] as usize;
        }
        for y in 0..h {
            let lo = y.saturating_sub(r);
            let hi = (y + r + 1).min(h);
            out[y * w + x] = prefix[hi] > prefix[lo];
        }
    }
    ShadowMask::new(h, w, out, MaskKind::Dilated)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_dilate(mask: &ShadowMask, r: usize) -> ShadowMask {
        let (h, w) = mask.dims();
        ShadowMask::from_fn(h, w, MaskKind::Dilated, |y, x| {
            let mut hit = false;
            for yy in y.saturating_sub(r)..=(y + r).min(h - 1) {
                for xx in x.saturating_sub(r)..=(x + r).min(w - 1) {
                    hit |= mask.get(yy, xx);
                }
            }
            hit
        })
    }

    #[test]
    fn lab_reference_points() {
        let white = srgb_pixel_to_lab([1.0f64; 3]);
        // the Y row sums to 1.0000001, which lifts white to L = 100.0000039
        assert!((white[0] - 100.0).abs() < 1e-5);
        assert!(white[1].abs() < 0.01 && white[2].abs() < 0.01);
        assert_eq!(srgb_pixel_to_lab([0.0f64; 3]), [0.0, 0.0, 0.0]);
        let red = srgb_pixel_to_lab([1.0f64, 0.0, 0.0]);
        assert!((red[0] - 53.24).abs() < 0.01, "{red:?}");
        assert!((red[1] - 80.09).abs() < 0.01, "{red:?}");
        assert!((red[2] - 67.20).abs() < 0.01, "{red:?}");
    }

    #[test]
    fn lab_rejects_non_srgb() {
        let img = ImageTensor::filled(2, 2, [0.1f64; 3], ColorSpace::Lab);
        assert!(matches!(srgb_to_lab(&img), Err(Error::State(_))));
    }

    #[test]
    fn lab_is_injective_on_gray_and_primary_ramps() {
        // the full lattice is covered in tests/lab_lattice.rs
        let mut labs = Vec::new();
        for v in 0..=255u32 {
            let u = v as f64 / 255.0;
            for rgb in [[u, 0.0, 0.0], [0.0, u, 0.0], [0.0, 0.0, u], [u, u, u], [u, 1.0 - u, 0.5]] {
                labs.push((srgb_pixel_to_lab(rgb), rgb));
            }
        }
        labs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        labs.dedup_by(|a, b| a.1 == b.1);
        for pair in labs.windows(2) {
            let d: f64 = (0..3).map(|i| (pair[0].0[i] - pair[1].0[i]).abs()).sum();
            assert!(d > 1e-6, "collision {:?} {:?}", pair[0].1, pair[1].1);
        }
    }

    #[test]
    fn resize_cases() {
        let img = ImageTensor::from_pixel_fn(3, 5, ColorSpace::Srgb, |y, x| [y as f64 * 0.1, x as f64 * 0.05, 0.3]);
        assert_eq!(resize(&img, 3, 5).unwrap(), img);
        let flat = ImageTensor::filled(4, 4, [0.25f64, 0.5, 0.75], ColorSpace::Srgb);
        let up = resize(&flat, 7, 3).unwrap();
        assert!(up
            .data()
            .chunks(21)
            .enumerate()
            .all(|(c, p)| p.iter().all(|&v| (v - 0.25 * (c + 1) as f64).abs() < 1e-15)));
        let checker = ImageTensor::from_pixel_fn(2, 2, ColorSpace::Srgb, |y, x| [((y + x) % 2) as f64; 3]);
        let one = resize(&checker, 1, 1).unwrap();
        assert_eq!(one.pixel(0, 0), [0.5; 3]);
        assert!(matches!(resize(&checker, 0, 2), Err(Error::Argument(_))));
    }

    #[test]
    fn dilate_cases() {
        let mut m = ShadowMask::empty(11, 11, MaskKind::Raw);
        m.set(5, 5, true);
        assert_eq!(dilate(&m, 0).unwrap().bits(), m.bits());
        let d = dilate(&m, 1).unwrap();
        assert_eq!(d.count(), 9);
        assert!((4..=6).all(|y| (4..=6).all(|x| d.get(y, x))));
        assert_eq!(d.kind(), MaskKind::Dilated);

        // pixels three columns apart: two disjoint 3x3 blocks
        let mut two = ShadowMask::empty(11, 11, MaskKind::Raw);
        two.set(5, 2, true);
        two.set(5, 5, true);
        let d = dilate(&two, 1).unwrap();
        assert_eq!(d, brute_dilate(&two, 1));
        assert_eq!(d.count(), 18);
        let mut near = ShadowMask::empty(11, 11, MaskKind::Raw);
        near.set(5, 2, true);
        near.set(5, 4, true);
        assert_eq!(dilate(&near, 1).unwrap().count(), 15);
        assert!(matches!(dilate(&m, -1), Err(Error::Argument(_))));
    }

    #[test]
    fn byte_quantization() {
        assert_eq!(to_byte(1.0f64), 255);
        assert_eq!(to_byte(-0.2f64), 0);
        assert_eq!(to_byte(0.5f64), 128);
        assert_eq!(to_byte(1.7f32), 255);
    }

    #[test]
    fn mask_set_algebra() {
        let a = ShadowMask::from_fn(4, 4, MaskKind::Raw, |y, _| y < 2);
        let b = ShadowMask::from_fn(4, 4, MaskKind::Raw, |_, x| x < 2);
        assert_eq!(a.union(&b).unwrap().count(), 12);
        assert_eq!(a.difference(&b).unwrap().count(), 4);
        assert!((a.iou(&b).unwrap() - 4.0 / 12.0).abs() < 1e-15);
        assert!(a.is_subset_of(&a.union(&b).unwrap()));
        let c = ShadowMask::empty(3, 4, MaskKind::Raw);
        assert!(matches!(a.union(&c), Err(Error::Shape(_))));
    }

    fn arb_mask() -> impl Strategy<Value = ShadowMask> {
        (1usize..12, 1usize..12).prop_flat_map(|(h, w)| {
            proptest::collection::vec(proptest::bool::weighted(0.15), h * w)
                .prop_map(move |bits| ShadowMask::new(h, w, bits, MaskKind::Raw).unwrap())
        })
    }

    proptest! {
        #[test]
        fn dilate_matches_brute_force_and_is_extensive(m in arb_mask(), r in 0usize..4) {
            let d = dilate(&m, r as i64).unwrap();
            let b = brute_dilate(&m, r);
            prop_assert_eq!(d.bits(), b.bits());
            prop_assert!(m.is_subset_of(&d));
        }

        #[test]
        fn dilate_is_monotone(m in arb_mask(), extra in proptest::collection::vec(proptest::bool::weighted(0.2), 144), r in 0i64..3) {
            let (h, w) = m.dims();
            let bigger = m.union(&ShadowMask::new(h, w, extra[..h * w].to_vec(), MaskKind::Raw).unwrap()).unwrap();
            prop_assert!(dilate(&m, r).unwrap().is_subset_of(&dilate(&bigger, r).unwrap()));
        }

        #[test]
        fn resize_preserves_range(
            vals in proptest::collection::vec(0.0f64..1.0, 3 * 7 * 5),
            th in 1usize..15, tw in 1usize..15,
        ) {
            let img = ImageTensor::new(7, 5, vals, ColorSpace::Srgb).unwrap();
            let (lo, hi) = img.min_max();
            let (olo, ohi) = resize(&img, th, tw).unwrap().min_max();
            prop_assert!(olo >= lo - 1e-9 && ohi <= hi + 1e-9);
        }
    }
}
