use deshadow_core::training::{load_dataset, train, DatasetOptions, RunPaths, Split};
use deshadow_core::{Error, Result};

use crate::args::TrainArgs;
use crate::config::PipelineConfig;
use crate::{create_dir, require_dir};

pub fn run(cfg: &PipelineConfig, a: &TrainArgs) -> Result<()> {
    let dataset = a
        .dataset
        .clone()
        .or_else(|| cfg.paths.dataset.clone())
        .ok_or_else(|| Error::Argument("no dataset: pass --dataset or set paths.dataset".into()))?;
    require_dir(&dataset, "dataset")?;
    let layout = a.layout.unwrap_or(cfg.paths.layout);

    let mut tc = cfg.train_config();
    if let Some(n) = a.max_steps {
        tc.max_steps = n;
    }
    if let Some(r) = a.resize {
        tc.resize = r;
    }
    tc.validate()?;

    let checkpoint = a.checkpoint.clone().unwrap_or_else(|| cfg.paths.checkpoint.clone());
    let trace = a
        .trace
        .clone()
        .or_else(|| cfg.paths.trace.clone())
        .unwrap_or_else(|| checkpoint.with_file_name("loss_trace.csv"));
    for p in [&checkpoint, &trace] {
        if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            create_dir(parent)?;
        }
    }

    let opts = DatasetOptions {
        resize: (tc.resize > 0).then_some(tc.resize),
        candidates: a.candidates.clone().or_else(|| cfg.paths.candidates.clone()),
        selection: cfg.selection.clone(),
    };
    let data = load_dataset::<f64>(&dataset, Split::Train, layout, &opts)?;
    log::info!("{} training samples from {}", data.len(), dataset.display());

    let paths = RunPaths { checkpoint: Some(checkpoint.clone()), trace: Some(trace.clone()), resume: a.resume };
    let outcome = train(&tc, &cfg.solver, &cfg.arch, &data, &paths)?;
    match outcome.records.last() {
        Some(r) => log::info!("step {}: loss {:.6e}", r.step, r.terms.total),
        None => log::info!("no steps run"),
    }
    log::info!("checkpoint {}, trace {}", checkpoint.display(), trace.display());
    Ok(())
}
