use crate::error::{Error, Result};
use crate::imaging::{ImageTensor, ShadowMask};
use crate::nn::{Tape, Var};
use crate::scalar::Scalar;
use crate::solver::{StageTrace, TapeStage};

use super::TrainConfig;

/// Loss value split into its two terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms {
    pub total: f64,
    /// `Σₙ γ·mean((Insₙ − I)²)`
    pub fidelity: f64,
    /// `Σₙ γ_g·mean(((1 − M)⊙Aₙ)²)`
    pub regularizer: f64,
}

impl std::ops::Add for LossTerms {
    type Output = LossTerms;

    fn add(self, o: LossTerms) -> LossTerms {
        LossTerms {
            total: self.total + o.total,
            fidelity: self.fidelity + o.fidelity,
            regularizer: self.regularizer + o.regularizer,
        }
    }
}

impl LossTerms {
    pub const ZERO: LossTerms = LossTerms { total: 0.0, fidelity: 0.0, regularizer: 0.0 };

    pub fn scale(self, k: f64) -> LossTerms {
        LossTerms { total: self.total * k, fidelity: self.fidelity * k, regularizer: self.regularizer * k }
    }
}

fn mean_sq<T: Scalar>(it: impl Iterator<Item = T>, n: usize) -> T {
    it.map(|e| e * e).sum::<T>() / T::from_usize_lossy(n)
}

/// Deep-supervised loss over every stage `0..=K`, using the pre-clamp
/// restored images. `mask` is the raw dataset mask `M`.
pub fn loss<T: Scalar>(
    traces: &[StageTrace<T>],
    gt: &ImageTensor<T>,
    mask: &ShadowMask,
    cfg: &TrainConfig,
) -> Result<LossTerms> {
    if traces.is_empty() {
        return Err(Error::Argument("loss needs at least one stage".into()));
    }
    if gt.dims() != mask.dims() {
        return Err(Error::shape("loss mask", gt.dims(), mask.dims()));
    }
    let outside: Vec<T> = mask.complement().values();
    let hw = mask.height() * mask.width();
    let (gamma, gamma_g) = (T::lit(cfg.gamma), T::lit(cfg.gamma_g));
    let (mut fid, mut reg) = (T::zero(), T::zero());
    for t in traces {
        gt.check_same(t.restored.dims(), "loss stage")?;
        if !t.restored.is_finite() || !t.gain.field().is_finite() {
            return Err(Error::Numerics { stage: t.stage, what: "trace holds non-finite values".into() });
        }
        let n = t.restored.data().len();
        let f = mean_sq(t.restored.data().iter().zip(gt.data()).map(|(&p, &g)| p - g), n);
        let r = mean_sq(t.gain.field().data().iter().enumerate().map(|(i, &a)| a * outside[i % hw]), n);
        fid += gamma * f;
        reg += gamma_g * r;
    }
    let (fid, reg) = (fid.as_f64(), reg.as_f64());
    Ok(LossTerms { total: fid + reg, fidelity: fid, regularizer: reg })
}

/// The same loss on a tape. Returns `(total, fidelity, regularizer)` nodes.
pub fn loss_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    stages: &[TapeStage],
    gt: Var,
    outside: Var,
    cfg: &TrainConfig,
) -> (Var, Var, Var) {
    let mut fid: Option<Var> = None;
    let mut reg: Option<Var> = None;
    for s in stages {
        let d = tape.sub(s.restored, gt);
        let f = tape.mean_square(d);
        let f = tape.affine(f, T::lit(cfg.gamma), T::zero());
        let m = tape.mul(s.gain, outside);
        let r = tape.mean_square(m);
        let r = tape.affine(r, T::lit(cfg.gamma_g), T::zero());
        fid = Some(match fid {
            Some(acc) => tape.add(acc, f),
            None => f,
        });
        reg = Some(match reg {
            Some(acc) => tape.add(acc, r),
            None => r,
        });
    }
    let (fid, reg) = (fid.expect("at least one stage"), reg.expect("at least one stage"));
    (tape.add(fid, reg), fid, reg)
}
