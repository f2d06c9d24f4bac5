//! K-stage unrolled solver for the relighting gain `A`.
//!
//! An initialization network predicts `A⁰` and a first restored image
//! `Ins⁰` from the shadow image and its mask. Each stage then takes one
//! descent step
//!
//! ```text
//! Aⁿ⁺¹   = clamp(Aⁿ − η (∇D + β ∇g + λ ∇φ))
//! Insⁿ⁺¹ = (1 + Aⁿ⁺¹) ⊙ Is
//! ```
//!
//! with `D = ‖Ins − (1+A)⊙Is‖²` evaluated against the previous stage's
//! `Ins`, `g = ‖(1−Ms)⊙A‖²`, and `∇φ` predicted by a per-stage network.
//!
//! Inference uses the field functions below; training replays the same
//! arithmetic on a [`Tape`] through [`unroll_on_tape`] so the two paths agree
//! bit for bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::illumination::{clamp_count, IlluminationMap, A_MAX, A_MIN};
use crate::imaging::{ColorSpace, Field, ImageTensor, ShadowMask, CHANNELS};
use crate::nn::{build_dmrb_stack, ArchSpec, Network, ParamId, ParamStore, Tape, Tensor, Var};
use crate::provenance::canonical_hash;
use crate::scalar::Scalar;

pub const WEIGHTS_VERSION: &str = "deshadow-weights/1";

/// Input channels of the initialization network: image + mask.
const NINIT_IN: usize = 4;
/// Output channels of the initialization network: gain logits + image logits.
const NINIT_OUT: usize = 6;
/// Input channels of a prior-gradient network: gain + image + mask.
const PRIOR_IN: usize = 7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Number of unrolled stages `K`.
    pub stages: usize,
    /// Initial per-stage step size.
    pub eta_init: f64,
    /// Whether the step sizes are trained along with the networks.
    pub learn_eta: bool,
    pub beta: f64,
    pub lambda: f64,
    pub share_gradient_net: bool,
    pub a_min: f64,
    pub a_max: f64,
    /// Bound on the magnitude of the learned prior gradient.
    pub grad_phi_max: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            stages: 3,
            eta_init: 0.1,
            learn_eta: true,
            beta: 0.1,
            lambda: 0.01,
            share_gradient_net: false,
            a_min: A_MIN,
            a_max: A_MAX,
            grad_phi_max: 5.0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Argument(m));
        if self.stages == 0 {
            return bad("solver needs at least one stage".into());
        }
        if !(self.eta_init > 0.0) {
            return bad(format!("eta_init must be positive, got {}", self.eta_init));
        }
        if !(self.beta >= 0.0) || !(self.lambda >= 0.0) {
            return bad(format!("beta and lambda must be non-negative, got {} and {}", self.beta, self.lambda));
        }
        if !(self.a_min > -1.0 && self.a_max > self.a_min) {
            return bad(format!("gain clamp ({}, {}) must satisfy -1 < min < max", self.a_min, self.a_max));
        }
        if !(self.grad_phi_max > 0.0) {
            return bad(format!("grad_phi_max must be positive, got {}", self.grad_phi_max));
        }
        Ok(())
    }

    fn gradient_nets(&self) -> usize {
        if self.share_gradient_net {
            1
        } else {
            self.stages
        }
    }
}

/// Everything recorded about one solver stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageTrace<T> {
    pub stage: usize,
    /// `Aⁿ` after clamping.
    pub gain: IlluminationMap<T>,
    /// `Insⁿ` before clamping to `[0,1]`.
    pub restored: Field<T>,
    pub grad_d: Field<T>,
    pub grad_g: Field<T>,
    pub grad_phi: Field<T>,
    /// Gain elements moved by the `[a_min, a_max]` clamp.
    pub gain_clamp_hits: usize,
    /// Elements of `restored` outside `[0,1]`.
    pub output_clamp_hits: usize,
}

impl<T: Scalar> StageTrace<T> {
    /// The stage output as a displayable sRGB image.
    pub fn restored_image(&self) -> ImageTensor<T> {
        ImageTensor::from_field(self.restored.clone(), ColorSpace::Srgb).clamp_unit()
    }

    pub fn clamp_hits(&self) -> usize {
        self.gain_clamp_hits + self.output_clamp_hits
    }
}

fn out_of_unit<T: Scalar>(f: &Field<T>) -> usize {
    f.data().iter().filter(|&&v| v < T::zero() || v > T::one()).count()
}

/// Trained parameters of the initialization network, the prior-gradient
/// networks and the per-stage step sizes (stored as `ln η`).
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkWeights<T> {
    pub solver: SolverConfig,
    pub arch: ArchSpec,
    pub store: ParamStore<T>,
    pub version: String,
    ninit: Network,
    prior: Vec<Network>,
    log_eta: Vec<ParamId>,
}

impl<T: Scalar> NetworkWeights<T> {
    /// Freshly initialized weights; deterministic in `seed`.
    pub fn init(solver: &SolverConfig, arch: &ArchSpec, seed: u64) -> Result<Self> {
        solver.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let ninit = Network::register(build_dmrb_stack(arch, NINIT_IN, NINIT_OUT)?, "ninit.", &mut store, &mut rng);
        let prior = (0..solver.gradient_nets())
            .map(|k| {
                let bp = build_dmrb_stack(arch, PRIOR_IN, CHANNELS)?;
                Ok(Network::register(bp, &format!("prior{k}."), &mut store, &mut rng))
            })
            .collect::<Result<Vec<_>>>()?;
        let log_eta = (0..solver.stages)
            .map(|n| store.add(format!("eta{n}"), Tensor::scalar(T::lit(solver.eta_init.ln()))))
            .collect();
        Ok(Self {
            solver: solver.clone(),
            arch: arch.clone(),
            store,
            version: WEIGHTS_VERSION.into(),
            ninit,
            prior,
            log_eta,
        })
    }

    /// Rebuilds weights around an existing parameter store, verifying that
    /// the store's manifest is exactly what `solver` and `arch` require.
    pub fn from_store(solver: &SolverConfig, arch: &ArchSpec, store: ParamStore<T>) -> Result<Self> {
        solver.validate()?;
        let expected = Self::expected_manifest(solver, arch)?;
        let found = store.manifest();
        if expected != found {
            let first = expected
                .iter()
                .zip(&found)
                .find(|(a, b)| a != b)
                .map(|(a, b)| format!("expected {a:?}, found {b:?}"))
                .unwrap_or_else(|| format!("expected {} tensors, found {}", expected.len(), found.len()));
            return Err(Error::Weight(format!("shape manifest does not match config: {first}")));
        }
        let ninit = Network::bind(build_dmrb_stack(arch, NINIT_IN, NINIT_OUT)?, "ninit.", &store)?;
        let prior = (0..solver.gradient_nets())
            .map(|k| Network::bind(build_dmrb_stack(arch, PRIOR_IN, CHANNELS)?, &format!("prior{k}."), &store))
            .collect::<Result<Vec<_>>>()?;
        let log_eta = (0..solver.stages)
            .map(|n| store.find(&format!("eta{n}")).ok_or_else(|| Error::Weight(format!("missing eta{n}"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            solver: solver.clone(),
            arch: arch.clone(),
            store,
            version: WEIGHTS_VERSION.into(),
            ninit,
            prior,
            log_eta,
        })
    }

    pub fn expected_manifest(solver: &SolverConfig, arch: &ArchSpec) -> Result<Vec<(String, [usize; 3])>> {
        let mut m = build_dmrb_stack(arch, NINIT_IN, NINIT_OUT)?.manifest("ninit.");
        for k in 0..solver.gradient_nets() {
            m.extend(build_dmrb_stack(arch, PRIOR_IN, CHANNELS)?.manifest(&format!("prior{k}.")));
        }
        m.extend((0..solver.stages).map(|n| (format!("eta{n}"), [1, 1, 1])));
        Ok(m)
    }

    /// Hash identifying the network-relevant configuration.
    pub fn config_hash(solver: &SolverConfig, arch: &ArchSpec) -> String {
        canonical_hash(&serde_json::json!({ "solver": solver, "arch": arch }))
    }

    pub fn hash(&self) -> String {
        Self::config_hash(&self.solver, &self.arch)
    }

    pub fn ninit_net(&self) -> &Network {
        &self.ninit
    }

    pub fn prior_net(&self, stage: usize) -> &Network {
        &self.prior[if self.solver.share_gradient_net { 0 } else { stage }]
    }

    pub fn eta_param(&self, stage: usize) -> ParamId {
        self.log_eta[stage]
    }

    /// Step size of `stage`.
    pub fn eta(&self, stage: usize) -> T {
        self.store.value(self.log_eta[stage]).data[0].exp()
    }

    pub fn set_eta(&mut self, stage: usize, eta: T) {
        self.store.value_mut(self.log_eta[stage]).data[0] = eta.ln();
    }

    /// Ids of the step-size parameters.
    pub fn eta_params(&self) -> &[ParamId] {
        &self.log_eta
    }

    /// Zeroes the prior networks' output layers, making every `∇φ` exactly
    /// zero.
    pub fn zero_prior_output(&mut self) {
        for k in 0..self.prior.len() {
            let (w, b) = self.prior[k].conv_params("tail").expect("tail conv");
            self.store.value_mut(w).data.iter_mut().for_each(|v| *v = T::zero());
            self.store.value_mut(b).data.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    fn check_config(&self, cfg: &SolverConfig) -> Result<()> {
        if cfg.stages != self.solver.stages || cfg.share_gradient_net != self.solver.share_gradient_net {
            return Err(Error::Weight(format!(
                "weights built for {} stages (shared prior: {}), config asks for {} (shared prior: {})",
                self.solver.stages, self.solver.share_gradient_net, cfg.stages, cfg.share_gradient_net
            )));
        }
        Ok(())
    }
}

pub(crate) fn field_tensor<T: Scalar>(f: &Field<T>) -> Tensor<T> {
    Tensor::from_vec(CHANNELS, f.height(), f.width(), f.data().to_vec())
}

pub(crate) fn mask_tensor<T: Scalar>(m: &ShadowMask) -> Tensor<T> {
    Tensor::from_vec(1, m.height(), m.width(), m.values())
}

fn tensor_field<T: Scalar>(t: &Tensor<T>) -> Field<T> {
    Field::new(t.h, t.w, t.data.clone()).expect("three-channel tensor")
}

fn logit<T: Scalar>(p: T) -> T {
    (p / (T::one() - p)).ln()
}

/// Constant inputs shared by every stage of one unroll.
pub struct SolverInputs {
    pub shadow: Var,
    pub mask: Var,
    /// `1 − Ms`, `1×H×W`.
    pub outside: Var,
}

impl SolverInputs {
    pub fn new<T: Scalar>(tape: &mut Tape<T>, shadow: &ImageTensor<T>, mask: &ShadowMask) -> Self {
        let ms = mask_tensor::<T>(mask);
        let outside = ms.map(|v| T::one() - v);
        Self { shadow: tape.leaf(field_tensor(shadow)), mask: tape.leaf(ms), outside: tape.leaf(outside) }
    }
}

/// Initialization network on the tape; returns `(A⁰, Ins⁰)`.
///
/// `A⁰ = a_min + (a_max − a_min)·σ(z + b)` with `b` chosen so a zero network
/// output gives `A⁰ = 0`; `Ins⁰ = σ(z' + logit(Is))`, which equals the
/// (slightly clipped) input for a zero output.
pub fn ninit_on_tape<T: Scalar>(tape: &mut Tape<T>, w: &NetworkWeights<T>, inputs: &SolverInputs) -> (Var, Var) {
    let cfg = &w.solver;
    let x = tape.concat(&[inputs.shadow, inputs.mask]);
    let z = w.ninit.forward(tape, &w.store, x);
    let za = tape.slice(z, 0, 3);
    let zi = tape.slice(z, 3, 6);
    let span = T::lit(cfg.a_max - cfg.a_min);
    let bias = logit(T::lit(-cfg.a_min / (cfg.a_max - cfg.a_min)));
    let za = tape.affine(za, T::one(), bias);
    let sa = tape.sigmoid(za);
    let a0 = tape.affine(sa, span, T::lit(cfg.a_min));
    let eps = T::lit(1e-3);
    let prior_logit = tape.value(inputs.shadow).map(|v| logit(v.max(eps).min(T::one() - eps)));
    let pl = tape.leaf(prior_logit);
    let zi = tape.add(zi, pl);
    let ins0 = tape.sigmoid(zi);
    (a0, ins0)
}

/// Learned prior gradient on the tape: `grad_phi_max · tanh(net(A, Is, Ms))`.
pub fn grad_phi_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    w: &NetworkWeights<T>,
    stage: usize,
    gain: Var,
    inputs: &SolverInputs,
) -> Var {
    let x = tape.concat(&[gain, inputs.shadow, inputs.mask]);
    let z = w.prior_net(stage).forward(tape, &w.store, x);
    let t = tape.tanh(z);
    tape.affine(t, T::lit(w.solver.grad_phi_max), T::zero())
}

/// Tape nodes of one stage.
#[derive(Debug, Clone, Copy)]
pub struct TapeStage {
    pub gain: Var,
    pub restored: Var,
}

/// The whole solver on a tape, for training. Returns stages `0..=K`.
pub fn unroll_on_tape<T: Scalar>(tape: &mut Tape<T>, w: &NetworkWeights<T>, inputs: &SolverInputs) -> Vec<TapeStage> {
    let cfg = &w.solver;
    let (a0, ins0) = ninit_on_tape(tape, w, inputs);
    let mut stages = vec![TapeStage { gain: a0, restored: ins0 }];
    for n in 0..cfg.stages {
        let TapeStage { gain: a, restored: ins_prev } = stages[n];
        // ∇D = 2((1 + A)⊙Is − Ins_prev)⊙Is
        let one_plus = tape.affine(a, T::one(), T::one());
        let relit = tape.mul(one_plus, inputs.shadow);
        let resid = tape.sub(relit, ins_prev);
        let gd = tape.mul(resid, inputs.shadow);
        let gd = tape.affine(gd, T::lit(2.0), T::zero());
        // ∇g = 2(1 − Ms)⊙A
        let gg = tape.mul(a, inputs.outside);
        let gg = tape.affine(gg, T::lit(2.0), T::zero());
        let gp = grad_phi_on_tape(tape, w, n, a, inputs);
        let bg = tape.affine(gg, T::lit(cfg.beta), T::zero());
        let total = tape.add(gd, bg);
        let lp = tape.affine(gp, T::lit(cfg.lambda), T::zero());
        let total = tape.add(total, lp);
        let log_eta = tape.param(&w.store, w.log_eta[n]);
        let eta = tape.exp(log_eta);
        let step = tape.mul(total, eta);
        let next = tape.sub(a, step);
        let next = tape.clamp(next, T::lit(cfg.a_min), T::lit(cfg.a_max));
        let one_plus = tape.affine(next, T::one(), T::one());
        let ins = tape.mul(one_plus, inputs.shadow);
        stages.push(TapeStage { gain: next, restored: ins });
    }
    stages
}

fn check_inputs<T: Scalar>(shadow: &ImageTensor<T>, mask: &ShadowMask) -> Result<()> {
    if shadow.dims() != mask.dims() {
        return Err(Error::shape("solver mask", shadow.dims(), mask.dims()));
    }
    Ok(())
}

/// Initial estimates `(A⁰, Ins⁰)`. `Ins⁰` lies in `(0,1)`.
pub fn ninit<T: Scalar>(
    shadow: &ImageTensor<T>,
    mask: &ShadowMask,
    w: &NetworkWeights<T>,
) -> Result<(IlluminationMap<T>, ImageTensor<T>)> {
    check_inputs(shadow, mask)?;
    let mut tape = Tape::new();
    let inputs = SolverInputs::new(&mut tape, shadow, mask);
    let (a0, ins0) = ninit_on_tape(&mut tape, w, &inputs);
    let a0 = tensor_field(tape.value(a0));
    let ins0 = tensor_field(tape.value(ins0));
    if !a0.is_finite() || !ins0.is_finite() {
        return Err(Error::Numerics { stage: 0, what: "initialization network produced non-finite output".into() });
    }
    Ok((IlluminationMap::new(a0)?, ImageTensor::from_field(ins0, ColorSpace::Srgb)))
}

/// `∇_A D = 2((1 + A)⊙Is − Ins_prev)⊙Is`.
pub fn grad_d<T: Scalar>(shadow: &ImageTensor<T>, ins_prev: &Field<T>, gain: &IlluminationMap<T>) -> Result<Field<T>> {
    shadow.check_same(ins_prev.dims(), "grad_d previous estimate")?;
    shadow.check_same(gain.dims(), "grad_d gain")?;
    let two = T::lit(2.0);
    let data = shadow
        .data()
        .iter()
        .zip(ins_prev.data())
        .zip(gain.field().data())
        .map(|((&is, &prev), &a)| two * (((T::one() * a + T::one()) * is - prev) * is))
        .collect();
    Field::new(shadow.height(), shadow.width(), data)
}

/// `∇_A g = 2(1 − Ms)⊙A`.
pub fn grad_g<T: Scalar>(gain: &IlluminationMap<T>, mask: &ShadowMask) -> Result<Field<T>> {
    if gain.dims() != mask.dims() {
        return Err(Error::shape("grad_g mask", gain.dims(), mask.dims()));
    }
    let ms: Vec<T> = mask.values();
    let n = mask.height() * mask.width();
    let two = T::lit(2.0);
    let data = gain.field().data().iter().enumerate().map(|(i, &a)| two * (a * (T::one() - ms[i % n]))).collect();
    Field::new(gain.field().height(), gain.field().width(), data)
}

/// Learned prior gradient for `stage`, bounded by `grad_phi_max`.
pub fn grad_phi<T: Scalar>(
    gain: &IlluminationMap<T>,
    shadow: &ImageTensor<T>,
    mask: &ShadowMask,
    stage: usize,
    w: &NetworkWeights<T>,
) -> Result<Field<T>> {
    if stage >= w.solver.stages {
        return Err(Error::Argument(format!("stage {stage} outside 0..{}", w.solver.stages)));
    }
    check_inputs(shadow, mask)?;
    shadow.check_same(gain.dims(), "grad_phi gain")?;
    let mut tape = Tape::new();
    let inputs = SolverInputs::new(&mut tape, shadow, mask);
    let a = tape.leaf(field_tensor(gain.field()));
    let g = grad_phi_on_tape(&mut tape, w, stage, a, &inputs);
    Ok(tensor_field(tape.value(g)))
}

/// Unclamped update `A − η(∇D + β∇g + λ∇φ)`.
pub fn descent_step<T: Scalar>(
    gain: &Field<T>,
    grad_d: &Field<T>,
    grad_g: &Field<T>,
    grad_phi: &Field<T>,
    eta: T,
    cfg: &SolverConfig,
) -> Result<Field<T>> {
    for g in [grad_d, grad_g, grad_phi] {
        gain.check_same(g.dims(), "descent step")?;
    }
    let (beta, lambda) = (T::lit(cfg.beta), T::lit(cfg.lambda));
    // `x * s + 0` mirrors the tape's affine op so both paths round identically
    let data = gain
        .data()
        .iter()
        .zip(grad_d.data().iter().zip(grad_g.data()).zip(grad_phi.data()))
        .map(|(&a, ((&d, &g), &p))| {
            let total = (d + (beta * g + T::zero())) + (lambda * p + T::zero());
            a - total * eta
        })
        .collect();
    Field::new(gain.height(), gain.width(), data)
}

/// One descent step from `state` (stage `n`) to stage `n + 1`.
pub fn unfold_step<T: Scalar>(
    state: &StageTrace<T>,
    shadow: &ImageTensor<T>,
    mask: &ShadowMask,
    cfg: &SolverConfig,
    w: &NetworkWeights<T>,
) -> Result<StageTrace<T>> {
    let n = state.stage;
    if n >= cfg.stages {
        return Err(Error::Argument(format!("stage {n} is already the last of {}", cfg.stages)));
    }
    w.check_config(cfg)?;
    let a = &state.gain;
    let gd = grad_d(shadow, &state.restored, a)?;
    let gg = grad_g(a, mask)?;
    let gp = grad_phi(a, shadow, mask, n, w)?;
    for (name, g) in [("grad_d", &gd), ("grad_g", &gg), ("grad_phi", &gp)] {
        if !g.is_finite() {
            return Err(Error::Numerics { stage: n, what: format!("{name} is not finite") });
        }
    }
    let stepped = descent_step(a.field(), &gd, &gg, &gp, w.eta(n), cfg)?;
    let (clamped, gain_hits) = clamp_count(&stepped, T::lit(cfg.a_min), T::lit(cfg.a_max));
    let restored = clamped.zip_map(shadow.field(), "relight", |a, is| (T::one() * a + T::one()) * is)?;
    if !restored.is_finite() {
        return Err(Error::Numerics { stage: n, what: "restored image is not finite".into() });
    }
    Ok(StageTrace {
        stage: n + 1,
        output_clamp_hits: out_of_unit(&restored),
        gain: IlluminationMap::new(clamped)?,
        restored,
        grad_d: gd,
        grad_g: gg,
        grad_phi: gp,
        gain_clamp_hits: gain_hits,
    })
}

/// Stage-0 trace from the initialization network.
pub fn initial_trace<T: Scalar>(
    shadow: &ImageTensor<T>,
    mask: &ShadowMask,
    w: &NetworkWeights<T>,
) -> Result<StageTrace<T>> {
    let (a0, ins0) = ninit(shadow, mask, w)?;
    let (h, wd) = shadow.dims();
    let restored = ins0.into_field();
    Ok(StageTrace {
        stage: 0,
        gain: a0,
        output_clamp_hits: out_of_unit(&restored),
        restored,
        grad_d: Field::zeros(h, wd),
        grad_g: Field::zeros(h, wd),
        grad_phi: Field::zeros(h, wd),
        gain_clamp_hits: 0,
    })
}

/// Full solve: initialization plus `K` stages. Returns the clamped final
/// image and `K + 1` traces.
pub fn run_solver<T: Scalar>(
    shadow: &ImageTensor<T>,
    mask: &ShadowMask,
    cfg: &SolverConfig,
    w: &NetworkWeights<T>,
) -> Result<(ImageTensor<T>, Vec<StageTrace<T>>)> {
    cfg.validate()?;
    w.check_config(cfg)?;
    shadow.expect_space(ColorSpace::Srgb, "run_solver")?;
    let mut traces = vec![initial_trace(shadow, mask, w)?];
    for _ in 0..cfg.stages {
        let next = unfold_step(traces.last().expect("nonempty"), shadow, mask, cfg, w)?;
        traces.push(next);
    }
    let out = traces.last().expect("nonempty").restored_image();
    Ok((out, traces))
}
