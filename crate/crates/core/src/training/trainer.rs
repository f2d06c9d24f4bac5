use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::error::{Error, Result};
use crate::nn::{Adam, AdamConfig, ArchSpec, Tape, Tensor};
use crate::scalar::Scalar;
use crate::solver::{field_tensor, mask_tensor, unroll_on_tape, NetworkWeights, SolverConfig, SolverInputs};

use super::dataset::TrainSample;
use super::loss::{loss_on_tape, LossTerms};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub gamma: f64,
    pub gamma_g: f64,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub max_steps: u64,
    pub seed: u64,
    /// Square training resolution; 0 keeps native size.
    pub resize: usize,
    /// Write a checkpoint every this many steps; 0 writes only the last.
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            gamma_g: 0.01,
            learning_rate: 1e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 4,
            max_steps: 500,
            seed: 0,
            resize: 256,
            checkpoint_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0) || !(self.gamma_g >= 0.0) {
            return Err(Error::Argument(format!(
                "need gamma > 0 and gamma_g >= 0, got {} and {}",
                self.gamma, self.gamma_g
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Argument("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0) {
            return Err(Error::Argument(format!("learning_rate must be >= 0, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::Argument("Adam betas must lie in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }
}

/// One row of the loss trace. `loss` is the batch loss before the update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub step: u64,
    pub terms: LossTerms,
    pub seconds: f64,
}

/// Sample indices for `step` (1-based): consecutive slices of a fresh
/// permutation per epoch, so any step can be recomputed on resume.
pub fn batch_indices(n: usize, batch: usize, seed: u64, step: u64) -> Vec<usize> {
    let batch = batch.min(n);
    let start = (step - 1) as usize * batch;
    let perm = |epoch: usize| {
        let mut p: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        p.shuffle(&mut rng);
        p
    };
    let mut out = Vec::with_capacity(batch);
    let mut cached: Option<(usize, Vec<usize>)> = None;
    for pos in start..start + batch {
        let epoch = pos / n;
        if cached.as_ref().map(|c| c.0) != Some(epoch) {
            cached = Some((epoch, perm(epoch)));
        }
        out.push(cached.as_ref().expect("set above").1[pos % n]);
    }
    out
}

/// Loss and parameter gradients for one sample.
pub fn sample_gradients<T: Scalar>(
    w: &NetworkWeights<T>,
    s: &TrainSample<T>,
    cfg: &TrainConfig,
) -> (LossTerms, Vec<Tensor<T>>) {
    let mut tape = Tape::new();
    let inputs = SolverInputs::new(&mut tape, &s.shadow, &s.target);
    let stages = unroll_on_tape(&mut tape, w, &inputs);
    let gt = tape.leaf(field_tensor(s.gt.field()));
    let outside = tape.leaf(mask_tensor::<T>(&s.mask.complement()));
    let (total, fid, reg) = loss_on_tape(&mut tape, &stages, gt, outside, cfg);
    let terms = LossTerms {
        total: tape.value(total).data[0].as_f64(),
        fidelity: tape.value(fid).data[0].as_f64(),
        regularizer: tape.value(reg).data[0].as_f64(),
    };
    let grads = tape.backward(total);
    (terms, tape.param_grads(&grads, &w.store))
}

/// Mean loss and gradients over `batch`. Samples are reduced in id order,
/// so the result does not depend on the order of `batch`.
pub fn batch_gradients<T: Scalar>(
    w: &NetworkWeights<T>,
    batch: &[&TrainSample<T>],
    cfg: &TrainConfig,
) -> (LossTerms, Vec<Tensor<T>>) {
    let mut sorted: Vec<&TrainSample<T>> = batch.to_vec();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    let parts: Vec<_> = sorted.par_iter().map(|s| sample_gradients(w, s, cfg)).collect();
    let k = 1.0 / parts.len() as f64;
    let mut terms = LossTerms::ZERO;
    let mut grads: Option<Vec<Tensor<T>>> = None;
    for (t, g) in parts {
        terms = terms + t;
        match grads.as_mut() {
            None => grads = Some(g),
            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| a.add_assign(b)),
        }
    }
    let mut grads = grads.expect("nonempty batch");
    let kt = T::lit(k);
    grads.iter_mut().for_each(|g| g.data.iter_mut().for_each(|v| *v *= kt));
    (terms.scale(k), grads)
}

/// Optimizer state plus the loss trace of a run.
pub struct Trainer<T> {
    pub cfg: TrainConfig,
    pub weights: NetworkWeights<T>,
    pub optimizer: Adam<T>,
    pub step: u64,
    pub records: Vec<LossRecord>,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(cfg: &TrainConfig, solver: &SolverConfig, arch: &ArchSpec) -> Result<Self> {
        cfg.validate()?;
        let weights = NetworkWeights::init(solver, arch, cfg.seed)?;
        let optimizer = Self::make_optimizer(cfg, &weights);
        Ok(Self { cfg: cfg.clone(), weights, optimizer, step: 0, records: Vec::new() })
    }

    fn make_optimizer(cfg: &TrainConfig, w: &NetworkWeights<T>) -> Adam<T> {
        let mut opt = Adam::new(cfg.adam(), &w.store);
        if !w.solver.learn_eta {
            for id in w.eta_params() {
                opt.frozen[id.index()] = true;
            }
        }
        opt
    }

    /// Continues from a checkpoint; `records` are the trace rows already
    /// written.
    pub fn resume(
        cfg: &TrainConfig,
        path: &Path,
        solver: &SolverConfig,
        arch: &ArchSpec,
        records: Vec<LossRecord>,
    ) -> Result<Self> {
        cfg.validate()?;
        let ck = load_checkpoint::<T>(path, solver, arch)?;
        let mut optimizer = ck.optimizer.unwrap_or_else(|| Self::make_optimizer(cfg, &ck.weights));
        optimizer.config = cfg.adam();
        let records = records.into_iter().filter(|r| r.step <= ck.train_step).collect();
        Ok(Self { cfg: cfg.clone(), weights: ck.weights, optimizer, step: ck.train_step, records })
    }

    /// One optimizer step on the next batch. Returns the recorded row.
    pub fn step(&mut self, data: &[TrainSample<T>], elapsed: f64) -> Result<LossRecord> {
        if data.is_empty() {
            return Err(Error::Argument("no training samples".into()));
        }
        let next = self.step + 1;
        let idx = batch_indices(data.len(), self.cfg.batch_size, self.cfg.seed, next);
        let batch: Vec<&TrainSample<T>> = idx.iter().map(|&i| &data[i]).collect();
        let (terms, grads) = batch_gradients(&self.weights, &batch, &self.cfg);
        if !terms.total.is_finite() {
            return Err(Error::Diverged { step: next, what: format!("loss is {}", terms.total) });
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            let name = self.weights.store.name(self.weights.store.ids().nth(i).expect("index in range")).to_string();
            return Err(Error::Diverged { step: next, what: format!("gradient of {name} is not finite") });
        }
        self.optimizer.update(&mut self.weights.store, &grads);
        self.step = next;
        let rec = LossRecord { step: next, terms, seconds: elapsed };
        self.records.push(rec);
        Ok(rec)
    }

    /// Mean loss over `data` at the current weights.
    pub fn evaluate(&self, data: &[TrainSample<T>]) -> LossTerms {
        let all: Vec<&TrainSample<T>> = data.iter().collect();
        batch_gradients(&self.weights, &all, &self.cfg).0
    }
}

/// Where a run writes its artifacts.
#[derive(Debug, Clone, Default)]
pub struct RunPaths {
    pub checkpoint: Option<PathBuf>,
    pub trace: Option<PathBuf>,
    /// Continue from `checkpoint` if it exists.
    pub resume: bool,
}

pub fn write_trace(path: &Path, records: &[LossRecord]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let csv_err = |e: csv::Error| Error::Format(format!("{}: {e}", path.display()));
    w.write_record(["step", "loss", "fidelity_term", "reg_term", "seconds"]).map_err(csv_err)?;
    for r in records {
        w.write_record([
            r.step.to_string(),
            r.terms.total.to_string(),
            r.terms.fidelity.to_string(),
            r.terms.regularizer.to_string(),
            format!("{:.3}", r.seconds),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_trace(path: &Path) -> Result<Vec<LossRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other:?}", path.display())),
    })?;
    let mut out = Vec::new();
    for (i, row) in r.records().enumerate() {
        let row = row.map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        let bad = || Error::Format(format!("{}: line {}: malformed trace row", path.display(), i + 2));
        let num = |k: usize| row.get(k).and_then(|v| v.parse::<f64>().ok()).ok_or_else(bad);
        out.push(LossRecord {
            step: row.get(0).and_then(|v| v.parse().ok()).ok_or_else(bad)?,
            terms: LossTerms { total: num(1)?, fidelity: num(2)?, regularizer: num(3)? },
            seconds: num(4)?,
        });
    }
    Ok(out)
}

pub struct TrainOutcome<T> {
    pub weights: NetworkWeights<T>,
    pub records: Vec<LossRecord>,
    pub steps: u64,
}

/// Trains end to end for `cfg.max_steps` steps. With `max_steps = 0` the
/// initial weights are returned and still checkpointed.
pub fn train<T: Scalar>(
    cfg: &TrainConfig,
    solver: &SolverConfig,
    arch: &ArchSpec,
    data: &[TrainSample<T>],
    paths: &RunPaths,
) -> Result<TrainOutcome<T>> {
    if data.is_empty() {
        return Err(Error::Argument("no training samples".into()));
    }
    let mut trainer = match &paths.checkpoint {
        Some(ck) if paths.resume && ck.exists() => {
            let prior = match &paths.trace {
                Some(t) if t.exists() => read_trace(t)?,
                _ => Vec::new(),
            };
            let t = Trainer::<T>::resume(cfg, ck, solver, arch, prior)?;
            log::info!("resuming from step {}", t.step);
            t
        }
        _ => Trainer::<T>::new(cfg, solver, arch)?,
    };
    let offset = trainer.records.last().map_or(0.0, |r| r.seconds);
    let start = Instant::now();
    let persist = |t: &Trainer<T>| -> Result<()> {
        if let Some(p) = &paths.checkpoint {
            save_checkpoint(p, &t.weights, Some(&t.optimizer), t.step)?;
        }
        if let Some(p) = &paths.trace {
            write_trace(p, &t.records)?;
        }
        Ok(())
    };
    while trainer.step < cfg.max_steps {
        match trainer.step(data, offset + start.elapsed().as_secs_f64()) {
            Ok(r) => {
                log::debug!("step {} loss {:.6e}", r.step, r.terms.total);
                if cfg.checkpoint_every > 0 && r.step % cfg.checkpoint_every == 0 {
                    persist(&trainer)?;
                }
            }
            Err(e) => {
                // keep the last good checkpoint; only the trace is updated
                if let Some(p) = &paths.trace {
                    write_trace(p, &trainer.records)?;
                }
                return Err(e);
            }
        }
    }
    persist(&trainer)?;
    Ok(TrainOutcome { steps: trainer.step, records: trainer.records, weights: trainer.weights })
}
