//! Encoder-decoder network assembled from dynamic mapping residual blocks
//! (DMRB).
//!
//! A DMRB is a residual block whose residual branch is rescaled per channel
//! by a learned gate:
//!
//! ```text
//! r     = conv3x3(lrelu(conv3x3(x)))
//! scale = 2 · sigmoid(fc2(lrelu(fc1(mean_hw(r)))))     // in (0, 2)
//! out   = x + scale ⊙ r
//! ```
//!
//! `fc1`/`fc2` are 1×1 convolutions on the pooled `C×1×1` vector with a
//! bottleneck of `max(1, C / gate_reduction)` channels.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Channel widths and depth of an encoder-decoder stack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchSpec {
    /// One width per scale, finest first.
    pub widths: Vec<usize>,
    pub blocks_per_scale: usize,
    pub gate_reduction: usize,
    pub leaky_slope: f64,
}

impl Default for ArchSpec {
    fn default() -> Self {
        Self { widths: vec![32, 64], blocks_per_scale: 2, gate_reduction: 4, leaky_slope: 0.2 }
    }
}

impl ArchSpec {
    /// Spatial sizes must be multiples of this for the pooling path; inputs
    /// are edge-padded up to it.
    pub fn downsample_factor(&self) -> usize {
        1 << self.widths.len().saturating_sub(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
}

impl ConvSpec {
    pub fn params(&self) -> usize {
        self.cout * self.cin * self.k * self.k + self.cout
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DmrbSpec {
    pub channels: usize,
    pub hidden: usize,
}

impl DmrbSpec {
    fn convs(&self) -> [(&'static str, ConvSpec); 4] {
        let (c, h) = (self.channels, self.hidden);
        [
            ("conv1", ConvSpec { cin: c, cout: c, k: 3 }),
            ("conv2", ConvSpec { cin: c, cout: c, k: 3 }),
            ("gate1", ConvSpec { cin: c, cout: h, k: 1 }),
            ("gate2", ConvSpec { cin: h, cout: c, k: 1 }),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderScale {
    /// Applied after 2×2 pooling; absent at the finest scale.
    pub down: Option<ConvSpec>,
    pub blocks: Vec<DmrbSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderScale {
    pub scale: usize,
    pub up: ConvSpec,
    /// 1×1 merge of the upsampled path with the skip connection.
    pub fuse: ConvSpec,
    pub blocks: Vec<DmrbSpec>,
}

/// Layer-by-layer description of a network, without weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Blueprint {
    pub in_channels: usize,
    pub out_channels: usize,
    pub leaky_slope: f64,
    pub head: ConvSpec,
    pub encoder: Vec<EncoderScale>,
    /// Coarse to fine.
    pub decoder: Vec<DecoderScale>,
    pub tail: ConvSpec,
}

/// Role of a convolution, used to pick its initialization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvRole {
    Plain,
    ResidualOut,
    GateOut,
    Tail,
}

fn role_of(name: &str) -> ConvRole {
    if name == "tail" {
        ConvRole::Tail
    } else if name.ends_with("conv2") {
        ConvRole::ResidualOut
    } else if name.ends_with("gate2") {
        ConvRole::GateOut
    } else {
        ConvRole::Plain
    }
}

/// Builds the blueprint of an encoder-decoder DMRB stack.
pub fn build_dmrb_stack(spec: &ArchSpec, in_channels: usize, out_channels: usize) -> Result<Blueprint> {
    if spec.widths.is_empty() {
        return Err(Error::Spec("at least one scale width is required".into()));
    }
    if let Some(i) = spec.widths.iter().position(|&w| w == 0) {
        return Err(Error::Spec(format!("width of scale {i} is zero")));
    }
    if spec.blocks_per_scale == 0 {
        return Err(Error::Spec("blocks_per_scale must be at least 1".into()));
    }
    if spec.gate_reduction == 0 {
        return Err(Error::Spec("gate_reduction must be at least 1".into()));
    }
    if in_channels == 0 || out_channels == 0 {
        return Err(Error::Spec("network needs input and output channels".into()));
    }
    if !(0.0..1.0).contains(&spec.leaky_slope) {
        return Err(Error::Spec(format!("leaky slope {} outside [0, 1)", spec.leaky_slope)));
    }
    let w = &spec.widths;
    let block = |c: usize| DmrbSpec { channels: c, hidden: (c / spec.gate_reduction).max(1) };
    let blocks = |c: usize| vec![block(c); spec.blocks_per_scale];
    let encoder = (0..w.len())
        .map(|s| EncoderScale {
            down: (s > 0).then(|| ConvSpec { cin: w[s - 1], cout: w[s], k: 3 }),
            blocks: blocks(w[s]),
        })
        .collect();
    let decoder = (0..w.len().saturating_sub(1))
        .rev()
        .map(|s| DecoderScale {
            scale: s,
            up: ConvSpec { cin: w[s + 1], cout: w[s], k: 3 },
            fuse: ConvSpec { cin: 2 * w[s], cout: w[s], k: 1 },
            blocks: blocks(w[s]),
        })
        .collect();
    Ok(Blueprint {
        in_channels,
        out_channels,
        leaky_slope: spec.leaky_slope,
        head: ConvSpec { cin: in_channels, cout: w[0], k: 3 },
        encoder,
        decoder,
        tail: ConvSpec { cin: w[0], cout: out_channels, k: 3 },
    })
}

impl Blueprint {
    /// Every convolution in forward order, with its parameter name stem.
    pub fn convs(&self) -> Vec<(String, ConvSpec)> {
        let mut out = vec![("head".to_string(), self.head)];
        let push_blocks = |out: &mut Vec<(String, ConvSpec)>, stem: &str, blocks: &[DmrbSpec]| {
            for (j, b) in blocks.iter().enumerate() {
                for (name, c) in b.convs() {
                    out.push((format!("{stem}.b{j}.{name}"), c));
                }
            }
        };
        for (s, enc) in self.encoder.iter().enumerate() {
            if let Some(d) = enc.down {
                out.push((format!("enc{s}.down"), d));
            }
            push_blocks(&mut out, &format!("enc{s}"), &enc.blocks);
        }
        for dec in &self.decoder {
            out.push((format!("dec{}.up", dec.scale), dec.up));
            out.push((format!("dec{}.fuse", dec.scale), dec.fuse));
            push_blocks(&mut out, &format!("dec{}", dec.scale), &dec.blocks);
        }
        out.push(("tail".to_string(), self.tail));
        out
    }

    /// `(name, [c, h, w])` of every weight and bias tensor.
    pub fn manifest(&self, prefix: &str) -> Vec<(String, [usize; 3])> {
        self.convs()
            .into_iter()
            .flat_map(|(name, c)| {
                [
                    (format!("{prefix}{name}.w"), [c.cout, c.cin, c.k * c.k]),
                    (format!("{prefix}{name}.b"), [c.cout, 1, 1]),
                ]
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.convs().iter().map(|(_, c)| c.params()).sum()
    }

    pub fn downsample_factor(&self) -> usize {
        1 << self.encoder.len().saturating_sub(1)
    }
}

/// A blueprint bound to parameters in a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub blueprint: Blueprint,
    /// `(weight, bias)` per convolution, in [`Blueprint::convs`] order.
    params: Vec<(ParamId, ParamId)>,
}

impl Network {
    /// Registers freshly initialized parameters.
    ///
    /// Plain convolutions get Kaiming-uniform weights for a leaky ReLU; the
    /// second convolution of each residual branch is scaled by 0.1; gate
    /// outputs start at zero (gate = 1) and the tail starts at zero, so the
    /// freshly built network outputs exactly zero.
    pub fn register<T: Scalar, R: Rng>(
        blueprint: Blueprint,
        prefix: &str,
        store: &mut ParamStore<T>,
        rng: &mut R,
    ) -> Self {
        let slope = blueprint.leaky_slope;
        let gain = (2.0 / (1.0 + slope * slope)).sqrt();
        let params = blueprint
            .convs()
            .into_iter()
            .map(|(name, c)| {
                let fan_in = (c.cin * c.k * c.k) as f64;
                let bound = gain * (3.0 / fan_in).sqrt();
                let scale = match role_of(&name) {
                    ConvRole::Plain => 1.0,
                    ConvRole::ResidualOut => 0.1,
                    ConvRole::GateOut | ConvRole::Tail => 0.0,
                };
                let n = c.cout * c.cin * c.k * c.k;
                let data = (0..n)
                    .map(|_| {
                        let u: f64 = rng.gen_range(-1.0..1.0);
                        T::lit(u * bound * scale)
                    })
                    .collect();
                let w = store.add(format!("{prefix}{name}.w"), Tensor::from_vec(c.cout, c.cin, c.k * c.k, data));
                let b = store.add(format!("{prefix}{name}.b"), Tensor::zeros(c.cout, 1, 1));
                (w, b)
            })
            .collect();
        Self { blueprint, params }
    }

    /// Binds to parameters already present in `store` under `prefix`.
    pub fn bind<T: Scalar>(blueprint: Blueprint, prefix: &str, store: &ParamStore<T>) -> Result<Self> {
        let params = blueprint
            .convs()
            .into_iter()
            .map(|(name, c)| {
                let lookup = |suffix: &str, shape: (usize, usize, usize)| {
                    let full = format!("{prefix}{name}.{suffix}");
                    let id = store.find(&full).ok_or_else(|| Error::Weight(format!("missing parameter {full}")))?;
                    let got = store.value(id).shape();
                    if got != shape {
                        return Err(Error::Weight(format!("{full}: expected shape {shape:?}, found {got:?}")));
                    }
                    Ok(id)
                };
                Ok((lookup("w", (c.cout, c.cin, c.k * c.k))?, lookup("b", (c.cout, 1, 1))?))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { blueprint, params })
    }

    /// Parameter ids of the convolution named `name` (e.g. `"tail"`).
    pub fn conv_params(&self, name: &str) -> Option<(ParamId, ParamId)> {
        self.blueprint.convs().iter().position(|(n, _)| n == name).map(|i| self.params[i])
    }

    /// Runs the network on `x` (`in_channels×H×W`), edge-padding to the
    /// downsampling factor and cropping the result back to `H×W`.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Var {
        let (_, h, w) = tape.value(x).shape();
        let f = self.blueprint.downsample_factor();
        let (ph, pw) = (h.div_ceil(f) * f, w.div_ceil(f) * f);
        let input = if (ph, pw) != (h, w) { tape.pad_edge(x, ph, pw) } else { x };
        let mut cursor = self.params.iter().copied();
        let slope = T::lit(self.blueprint.leaky_slope);
        let mut conv = |tape: &mut Tape<T>, v: Var, k: usize| {
            let (wid, bid) = cursor.next().expect("parameter per convolution");
            let wv = tape.param(store, wid);
            let bv = tape.param(store, bid);
            tape.conv(v, wv, bv, k)
        };
        let dmrb = |tape: &mut Tape<T>, conv: &mut dyn FnMut(&mut Tape<T>, Var, usize) -> Var, x: Var| {
            let a = conv(tape, x, 3);
            let a = tape.leaky_relu(a, slope);
            let r = conv(tape, a, 3);
            let pooled = tape.global_avg(r);
            let g = conv(tape, pooled, 1);
            let g = tape.leaky_relu(g, slope);
            let g = conv(tape, g, 1);
            let g = tape.sigmoid(g);
            let scale = tape.affine(g, T::lit(2.0), T::zero());
            let scaled = tape.mul(r, scale);
            tape.add(x, scaled)
        };

        let mut h_var = conv(tape, input, self.blueprint.head.k);
        h_var = tape.leaky_relu(h_var, slope);
        let mut skips = Vec::new();
        let scales = self.blueprint.encoder.len();
        for (s, enc) in self.blueprint.encoder.iter().enumerate() {
            if enc.down.is_some() {
                h_var = tape.avg_pool2(h_var);
                h_var = conv(tape, h_var, 3);
                h_var = tape.leaky_relu(h_var, slope);
            }
            for _ in &enc.blocks {
                h_var = dmrb(tape, &mut conv, h_var);
            }
            if s + 1 < scales {
                skips.push(h_var);
            }
        }
        for dec in &self.blueprint.decoder {
            h_var = tape.upsample2(h_var);
            h_var = conv(tape, h_var, 3);
            h_var = tape.leaky_relu(h_var, slope);
            let skip = skips.pop().expect("skip per decoder scale");
            h_var = tape.concat(&[h_var, skip]);
            h_var = conv(tape, h_var, 1);
            h_var = tape.leaky_relu(h_var, slope);
            for _ in &dec.blocks {
                h_var = dmrb(tape, &mut conv, h_var);
            }
        }
        let out = conv(tape, h_var, self.blueprint.tail.k);
        if (ph, pw) != (h, w) {
            tape.crop(out, h, w)
        } else {
            out
        }
    }
}
