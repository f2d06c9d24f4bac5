//! Single-file JSON checkpoints: weights, shape manifest, config hash and
//! optionally the optimizer state for resuming.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Adam, AdamConfig, ArchSpec, ParamStore, Tensor};
use crate::scalar::Scalar;
use crate::solver::{NetworkWeights, SolverConfig, WEIGHTS_VERSION};

const FORMAT: &str = "deshadow-checkpoint";

#[derive(Serialize, Deserialize)]
struct OptimizerState {
    config: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    frozen: Vec<bool>,
}

#[derive(Serialize, Deserialize)]
struct Document {
    format: String,
    version: String,
    config_hash: String,
    solver: SolverConfig,
    arch: ArchSpec,
    train_step: u64,
    manifest: Vec<(String, [usize; 3])>,
    params: Vec<Vec<f64>>,
    optimizer: Option<OptimizerState>,
}

/// A loaded checkpoint.
#[derive(Debug, Clone)]
pub struct Checkpoint<T> {
    pub weights: NetworkWeights<T>,
    pub optimizer: Option<Adam<T>>,
    /// Number of optimizer steps taken when the file was written.
    pub train_step: u64,
}

/// Header fields readable without knowing the current config.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointInfo {
    pub version: String,
    pub config_hash: String,
    pub solver: SolverConfig,
    pub arch: ArchSpec,
    pub train_step: u64,
}

fn flatten<T: Scalar>(ts: &[Tensor<T>]) -> Vec<Vec<f64>> {
    ts.iter().map(|t| t.data.iter().map(|v| v.as_f64()).collect()).collect()
}

/// Writes a checkpoint atomically (temp file in the same directory, then
/// rename).
pub fn save_checkpoint<T: Scalar>(
    path: &Path,
    weights: &NetworkWeights<T>,
    optimizer: Option<&Adam<T>>,
    train_step: u64,
) -> Result<()> {
    let params: Vec<Tensor<T>> = weights.store.iter().map(|(_, t)| t.clone()).collect();
    let doc = Document {
        format: FORMAT.into(),
        version: weights.version.clone(),
        config_hash: weights.hash(),
        solver: weights.solver.clone(),
        arch: weights.arch.clone(),
        train_step,
        manifest: weights.store.manifest(),
        params: flatten(&params),
        optimizer: optimizer.map(|o| OptimizerState {
            config: o.config,
            step: o.step,
            m: flatten(&o.m),
            v: flatten(&o.v),
            frozen: o.frozen.clone(),
        }),
    };
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    let text = serde_json::to_string(&doc).map_err(|e| Error::Format(e.to_string()))?;
    tmp.write_all(text.as_bytes()).map_err(|e| Error::io(tmp.path(), e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(tmp.path(), e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn read_document(path: &Path) -> Result<Document> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let doc: Document = serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    if doc.format != FORMAT {
        return Err(Error::Format(format!("{}: not a checkpoint (format {:?})", path.display(), doc.format)));
    }
    if doc.version != WEIGHTS_VERSION {
        return Err(Error::Weight(format!("unsupported checkpoint version {:?}", doc.version)));
    }
    Ok(doc)
}

/// Reads only the header.
pub fn inspect_checkpoint(path: &Path) -> Result<CheckpointInfo> {
    let doc = read_document(path)?;
    Ok(CheckpointInfo {
        version: doc.version,
        config_hash: doc.config_hash,
        solver: doc.solver,
        arch: doc.arch,
        train_step: doc.train_step,
    })
}

fn tensors<T: Scalar>(manifest: &[(String, [usize; 3])], blobs: Vec<Vec<f64>>, what: &str) -> Result<Vec<Tensor<T>>> {
    if blobs.len() != manifest.len() {
        return Err(Error::Weight(format!("{what}: {} blobs for {} tensors", blobs.len(), manifest.len())));
    }
    manifest
        .iter()
        .zip(blobs)
        .map(|((name, [c, h, w]), data)| {
            if data.len() != c * h * w {
                return Err(Error::Weight(format!("{what}: {name} has {} values, expected {}", data.len(), c * h * w)));
            }
            Ok(Tensor::from_vec(*c, *h, *w, data.into_iter().map(T::lit).collect()))
        })
        .collect()
}

/// Loads a checkpoint for the given configuration. Refuses files written
/// for a different config hash or with a different shape manifest.
pub fn load_checkpoint<T: Scalar>(path: &Path, solver: &SolverConfig, arch: &ArchSpec) -> Result<Checkpoint<T>> {
    let doc = read_document(path)?;
    let expected_hash = NetworkWeights::<T>::config_hash(solver, arch);
    if doc.config_hash != expected_hash {
        return Err(Error::ConfigHashMismatch { expected: expected_hash, found: doc.config_hash });
    }
    let recomputed = NetworkWeights::<T>::config_hash(&doc.solver, &doc.arch);
    if recomputed != doc.config_hash {
        return Err(Error::Weight(format!(
            "{}: stored hash {} does not match its own config ({recomputed})",
            path.display(),
            doc.config_hash
        )));
    }
    let expected = NetworkWeights::<T>::expected_manifest(solver, arch)?;
    if doc.manifest != expected {
        return Err(Error::Weight(format!("{}: shape manifest does not match config", path.display())));
    }
    let mut store = ParamStore::new();
    for ((name, _), t) in expected.iter().zip(tensors::<T>(&expected, doc.params, "params")?) {
        store.add(name.clone(), t);
    }
    let weights = NetworkWeights::from_store(solver, arch, store)?;
    let optimizer = match doc.optimizer {
        None => None,
        Some(o) => {
            if o.frozen.len() != expected.len() {
                return Err(Error::Weight("optimizer state does not match parameter count".into()));
            }
            Some(Adam {
                config: o.config,
                step: o.step,
                m: tensors(&expected, o.m, "optimizer m")?,
                v: tensors(&expected, o.v, "optimizer v")?,
                frozen: o.frozen,
            })
        }
    };
    Ok(Checkpoint { weights, optimizer, train_step: doc.train_step })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arch() -> ArchSpec {
        ArchSpec { widths: vec![4, 8], blocks_per_scale: 1, gate_reduction: 2, leaky_slope: 0.2 }
    }

    #[test]
    fn round_trips_weights_and_optimizer_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub/ck.json");
        let solver = SolverConfig::default();
        let mut w = NetworkWeights::<f64>::init(&solver, &arch(), 5).unwrap();
        let mut opt = Adam::new(AdamConfig::default(), &w.store);
        let grads: Vec<_> = w.store.iter().map(|(_, t)| t.map(|v| 0.3 * v + 1e-3)).collect();
        opt.update(&mut w.store, &grads);
        save_checkpoint(&path, &w, Some(&opt), 1).unwrap();
        let ck = load_checkpoint::<f64>(&path, &solver, &arch()).unwrap();
        assert_eq!(ck.weights, w);
        assert_eq!(ck.optimizer.unwrap(), opt);
        assert_eq!(ck.train_step, 1);
        let info = inspect_checkpoint(&path).unwrap();
        assert_eq!(info.config_hash, w.hash());
    }

    #[test]
    fn rejects_other_configs() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        let solver = SolverConfig::default();
        let w = NetworkWeights::<f64>::init(&solver, &arch(), 5).unwrap();
        save_checkpoint(&path, &w, None, 0).unwrap();
        let other = SolverConfig { beta: 0.2, ..Default::default() };
        match load_checkpoint::<f64>(&path, &other, &arch()) {
            Err(Error::ConfigHashMismatch { expected, found }) => {
                assert_eq!(found, w.hash());
                assert_ne!(expected, found);
            }
            other => panic!("expected hash mismatch, got {other:?}"),
        }
        assert!(matches!(
            load_checkpoint::<f64>(&dir.path().join("none.json"), &solver, &arch()),
            Err(Error::NotFound(_))
        ));
        std::fs::write(&path, "{}").unwrap();
        assert!(matches!(load_checkpoint::<f64>(&path, &solver, &arch()), Err(Error::Format(_))));
    }

    #[test]
    fn f32_weights_survive_the_f64_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        let solver = SolverConfig::default();
        let w = NetworkWeights::<f32>::init(&solver, &arch(), 9).unwrap();
        save_checkpoint(&path, &w, None, 0).unwrap();
        assert_eq!(load_checkpoint::<f32>(&path, &solver, &arch()).unwrap().weights, w);
    }
}
