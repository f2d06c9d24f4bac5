//! Physical relighting: the masked illumination model, the second-order
//! enhancement curve and the convex blend between the two.

use crate::error::{Error, Result};
use crate::imaging::{Field, ImageTensor, ShadowMask};
use crate::scalar::Scalar;

/// Default lower bound for the relighting gain; keeps `1 + A > 0`.
pub const A_MIN: f64 = -0.99;
/// Default upper bound for the relighting gain.
pub const A_MAX: f64 = 10.0;

/// Per-pixel, per-channel relighting gain `A`. Shadowed pixels are brightened
/// by the factor `1 + A`.
#[derive(Debug, Clone, PartialEq)]
pub struct IlluminationMap<T> {
    field: Field<T>,
}

impl<T: Scalar> IlluminationMap<T> {
    /// Wraps a field, rejecting non-finite values and gains with `1 + A <= 0`.
    pub fn new(field: Field<T>) -> Result<Self> {
        if let Some(v) = field.data().iter().find(|v| !v.is_finite() || **v <= -T::one()) {
            return Err(Error::Argument(format!("illumination value {v} violates 1 + A > 0")));
        }
        Ok(Self { field })
    }

    /// Wraps a field after clamping it into `[lo, hi]`; returns the map and
    /// the number of clamped elements. `lo` must exceed `-1`.
    pub fn clamped(field: Field<T>, lo: T, hi: T) -> (Self, usize) {
        assert!(lo > -T::one(), "lower gain bound must exceed -1");
        let (field, hits) = clamp_count(&field, lo, hi);
        (Self { field }, hits)
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self { field: Field::zeros(height, width) }
    }

    pub fn uniform(height: usize, width: usize, value: T) -> Result<Self> {
        Self::new(Field::filled(height, width, value))
    }

    pub fn field(&self) -> &Field<T> {
        &self.field
    }

    pub fn into_field(self) -> Field<T> {
        self.field
    }

    pub fn dims(&self) -> (usize, usize) {
        self.field.dims()
    }
}

/// Clamps every element into `[lo, hi]`, counting how many moved.
pub(crate) fn clamp_count<T: Scalar>(field: &Field<T>, lo: T, hi: T) -> (Field<T>, usize) {
    let mut hits = 0;
    let out = Field::new(
        field.height(),
        field.width(),
        field
            .data()
            .iter()
            .map(|&v| {
                let c = v.max(lo).min(hi);
                hits += (c != v) as usize;
                c
            })
            .collect(),
    )
    .expect("same shape");
    (out, hits)
}

fn check_mask<T: Scalar>(img: &Field<T>, mask: &ShadowMask, what: &str) -> Result<()> {
    if img.dims() != mask.dims() {
        return Err(Error::shape(what, img.dims(), mask.dims()));
    }
    Ok(())
}

/// Masked relighting without clamping:
/// `S = (1 + As)·Is·Ms + (1 − Ms)·Is`, with `Ms` broadcast over channels.
///
/// Off the mask the result is `Is` bit for bit because `Ms = 0` there
/// collapses the first term to an exact zero and `1 − 0 = 1`.
pub fn shadow_model_unclamped<T: Scalar>(
    shadow: &ImageTensor<T>,
    gain: &IlluminationMap<T>,
    mask: &ShadowMask,
) -> Result<ImageTensor<T>> {
    shadow.check_same(gain.dims(), "shadow model gain")?;
    check_mask(shadow, mask, "shadow model mask")?;
    let ms: Vec<T> = mask.values();
    let n = shadow.pixels();
    let mut out = shadow.field().clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        let m = ms[i % n];
        let is = *v;
        *v = (T::one() + gain.field().data()[i]) * is * m + (T::one() - m) * is;
    }
    Ok(shadow.with_field(out))
}

/// The illumination model followed by clamping to `[0,1]`.
pub fn apply_shadow_model<T: Scalar>(
    shadow: &ImageTensor<T>,
    gain: &IlluminationMap<T>,
    mask: &ShadowMask,
) -> Result<ImageTensor<T>> {
    Ok(shadow_model_unclamped(shadow, gain, mask)?.clamp_unit())
}

/// Coefficients of the two quadratic curve passes.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveParams<T> {
    pub first: Field<T>,
    pub second: Field<T>,
}

impl<T: Scalar> CurveParams<T> {
    pub fn new(first: Field<T>, second: Field<T>) -> Result<Self> {
        first.check_same(second.dims(), "curve params")?;
        for v in first.data().iter().chain(second.data()) {
            if !(v.abs() <= T::one()) {
                return Err(Error::Argument(format!("curve coefficient {v} outside [-1, 1]")));
            }
        }
        Ok(Self { first, second })
    }

    /// Broadcasts a scalar pair to every pixel and channel.
    pub fn uniform(height: usize, width: usize, a1: T, a2: T) -> Result<Self> {
        Self::new(Field::filled(height, width, a1), Field::filled(height, width, a2))
    }
}

#[inline]
fn quadratic_curve<T: Scalar>(x: T, a: T) -> T {
    x + a * x * (T::one() - x)
}

/// Second-order enhancement without the final clamp:
/// `LE1 = I + A1·I·(1−I)`, `IN2 = LE1 + A2·LE1·(1−LE1)`.
pub fn enhance_second_order_unclamped<T: Scalar>(img: &ImageTensor<T>, cp: &CurveParams<T>) -> Result<ImageTensor<T>> {
    img.check_same(cp.first.dims(), "enhancement curve")?;
    let out = img
        .data()
        .iter()
        .zip(cp.first.data().iter().zip(cp.second.data()))
        .map(|(&x, (&a1, &a2))| quadratic_curve(quadratic_curve(x, a1), a2))
        .collect();
    ImageTensor::new(img.height(), img.width(), out, img.space())
}

pub fn enhance_second_order<T: Scalar>(img: &ImageTensor<T>, cp: &CurveParams<T>) -> Result<ImageTensor<T>> {
    Ok(enhance_second_order_unclamped(img, cp)?.clamp_unit())
}

/// `Final = α·IN2 + (1 − α)·S`. At `α = 0` and `α = 1` the matching input
/// is returned unchanged.
pub fn blend_final<T: Scalar>(enhanced: &ImageTensor<T>, removed: &ImageTensor<T>, alpha: T) -> Result<ImageTensor<T>> {
    if !(alpha >= T::zero() && alpha <= T::one()) {
        return Err(Error::Argument(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    enhanced.check_same(removed.dims(), "blend")?;
    if alpha == T::zero() {
        return Ok(removed.clone());
    }
    if alpha == T::one() {
        return Ok(enhanced.clone());
    }
    let field = enhanced.zip_map(removed.field(), "blend", |e, s| alpha * e + (T::one() - alpha) * s)?;
    Ok(removed.with_field(field))
}
