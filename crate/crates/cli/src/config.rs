//! Pipeline configuration file.
//!
//! ```toml
//! seed = 0
//! alpha = 0.0
//!
//! [paths]
//! dataset = "data/ISTD"
//! layout = "istd"
//! candidates = "masks"
//! checkpoint = "runs/deshadow.json"
//! output = "out"
//!
//! [solver]   # stages, eta_init, learn_eta, beta, lambda, ...
//! [arch]     # widths, blocks_per_scale, gate_reduction, leaky_slope
//! [train]    # gamma, gamma_g, learning_rate, batch_size, max_steps, ...
//! [selection]
//! [curve]    # a1, a2
//! ```
//!
//! Every key is optional. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use deshadow_core::nn::ArchSpec;
use deshadow_core::provenance::canonical_hash;
use deshadow_core::training::{Layout, TrainConfig};
use deshadow_core::{Error, Result, SelectionConfig, SolverConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub dataset: Option<PathBuf>,
    pub layout: Layout,
    /// Root of per-image candidate mask directories.
    pub candidates: Option<PathBuf>,
    pub checkpoint: PathBuf,
    /// Loss trace; defaults to `loss_trace.csv` next to the checkpoint.
    pub trace: Option<PathBuf>,
    pub output: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            layout: Layout::Istd,
            candidates: None,
            checkpoint: PathBuf::from("deshadow-checkpoint.json"),
            trace: None,
            output: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurveConfig {
    pub a1: f64,
    pub a2: f64,
}

impl Default for CurveConfig {
    fn default() -> Self {
        Self { a1: 0.25, a2: 0.25 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Overrides `train.seed` when set.
    pub seed: Option<u64>,
    /// Weight of the enhancement curve in the final blend.
    pub alpha: f64,
    pub paths: PathsConfig,
    pub solver: SolverConfig,
    pub arch: ArchSpec,
    pub train: TrainConfig,
    pub selection: SelectionConfig,
    pub curve: CurveConfig,
}

impl PipelineConfig {
    /// Reads a TOML file; relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::NotFound(path.to_path_buf()),
            _ => Error::Io { path: path.to_path_buf(), source: e },
        })?;
        let mut cfg: PipelineConfig =
            toml::from_str(&text).map_err(|e| Error::Argument(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.paths.rebase(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.solver.validate()?;
        self.train.validate()?;
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Argument(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        for v in [self.curve.a1, self.curve.a2] {
            if !(-1.0..=1.0).contains(&v) {
                return Err(Error::Argument(format!("curve coefficients must lie in [-1, 1], got {v}")));
            }
        }
        deshadow_core::nn::build_dmrb_stack(&self.arch, 1, 1)?;
        Ok(())
    }

    pub fn effective_seed(&self) -> u64 {
        self.seed.unwrap_or(self.train.seed)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { seed: self.effective_seed(), ..self.train.clone() }
    }

    /// Hash of the whole configuration; independent of key order in the file.
    pub fn hash(&self) -> String {
        canonical_hash(self)
    }
}

impl PathsConfig {
    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        self.dataset.as_mut().map(fix);
        self.candidates.as_mut().map(fix);
        self.trace.as_mut().map(fix);
        fix(&mut self.checkpoint);
        fix(&mut self.output);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_ignores_key_order_and_fills_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.toml");
        let b = dir.path().join("b.toml");
        std::fs::write(&a, "alpha = 0.5\nseed = 3\n[solver]\nstages = 2\nbeta = 0.2\n").unwrap();
        let ca = PipelineConfig::load(&a).unwrap();
        assert_eq!(ca.solver.stages, 2);
        assert_eq!(ca.train.gamma_g, 0.01);
        std::fs::write(&b, "seed = 3\nalpha = 0.5\n[solver]\nbeta = 0.2\nstages = 2\n").unwrap();
        assert_eq!(ca.hash(), PipelineConfig::load(&b).unwrap().hash());
        std::fs::write(&b, "seed = 4\nalpha = 0.5\n[solver]\nbeta = 0.2\nstages = 2\n").unwrap();
        assert_ne!(ca.hash(), PipelineConfig::load(&b).unwrap().hash());
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "[solver]\nstagez = 2\n").unwrap();
        assert!(matches!(PipelineConfig::load(&p), Err(Error::Argument(_))));
        std::fs::write(&p, "alpha = 2.0\n").unwrap();
        assert!(matches!(PipelineConfig::load(&p), Err(Error::Argument(_))));
        std::fs::write(&p, "[arch]\nwidths = []\n").unwrap();
        assert!(matches!(PipelineConfig::load(&p), Err(Error::Spec(_))));
    }

    #[test]
    fn relative_paths_follow_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "[paths]\ndataset = \"data\"\ncheckpoint = \"/abs/ck.json\"\n").unwrap();
        let c = PipelineConfig::load(&p).unwrap();
        assert_eq!(c.paths.dataset.unwrap(), dir.path().join("data"));
        assert_eq!(c.paths.checkpoint, PathBuf::from("/abs/ck.json"));
    }
}
