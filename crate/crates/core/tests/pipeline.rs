use deshadow_core::checkpoint::load_checkpoint;
use deshadow_core::evaluation::{evaluate_dir, EvalOptions};
use deshadow_core::imaging::save_image;
use deshadow_core::nn::ArchSpec;
use deshadow_core::training::{
    load_dataset, read_trace, synthetic_triplets, train, write_istd, DatasetOptions, Layout, RunPaths, Split,
    SyntheticConfig, TrainConfig,
};
use deshadow_core::{run_solver, SolverConfig};

fn arch() -> ArchSpec {
    ArchSpec { widths: vec![4, 8], blocks_per_scale: 1, gate_reduction: 2, leaky_slope: 0.2 }
}

#[test]
fn disk_dataset_trains_resumes_and_evaluates() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let samples = synthetic_triplets(&SyntheticConfig { count: 4, ..Default::default() });
    write_istd(&root.join("data"), &samples).unwrap();
    let opts = DatasetOptions { resize: None, ..Default::default() };
    let data = load_dataset::<f64>(&root.join("data"), Split::Train, Layout::Istd, &opts).unwrap();
    assert_eq!(data, samples);

    let solver = SolverConfig::default();
    let cfg =
        TrainConfig { batch_size: 2, max_steps: 4, checkpoint_every: 2, learning_rate: 1e-3, ..Default::default() };
    let straight =
        RunPaths { checkpoint: Some(root.join("a/ck.json")), trace: Some(root.join("a/trace.csv")), resume: false };
    std::fs::create_dir_all(root.join("a")).unwrap();
    let full = train(&cfg, &solver, &arch(), &data, &straight).unwrap();

    std::fs::create_dir_all(root.join("b")).unwrap();
    let split =
        RunPaths { checkpoint: Some(root.join("b/ck.json")), trace: Some(root.join("b/trace.csv")), resume: true };
    train(&TrainConfig { max_steps: 2, ..cfg.clone() }, &solver, &arch(), &data, &split).unwrap();
    let resumed = train(&cfg, &solver, &arch(), &data, &split).unwrap();
    assert_eq!(resumed.steps, 4);
    assert_eq!(resumed.weights.hash(), full.weights.hash());
    let losses = |p: &str| read_trace(&root.join(p)).unwrap().iter().map(|r| r.terms).collect::<Vec<_>>();
    assert_eq!(losses("a/trace.csv"), losses("b/trace.csv"));

    let ck = load_checkpoint::<f64>(&root.join("a/ck.json"), &solver, &arch()).unwrap();
    assert_eq!(ck.train_step, 4);
    assert_eq!(ck.weights.hash(), full.weights.hash());

    for s in &data {
        let (out, traces) = run_solver(&s.shadow, &s.target, &solver, &ck.weights).unwrap();
        assert_eq!(traces.len(), solver.stages + 1);
        let (lo, hi) = out.field().min_max();
        assert!((0.0..=1.0).contains(&lo) && (0.0..=1.0).contains(&hi));
        save_image(&out, root.join("pred").join(format!("{}.png", s.id))).unwrap();
    }
    let eval_opts = EvalOptions { resize: None, ..Default::default() };
    let table =
        evaluate_dir(&root.join("pred"), &root.join("data/train_C"), Some(&root.join("data/train_B")), &eval_opts)
            .unwrap();
    assert_eq!(table.rows.len(), 4);
    assert!(table.mean.rmse_s.unwrap() > 0.0);

    let perfect = evaluate_dir(
        &root.join("data/train_C"),
        &root.join("data/train_C"),
        Some(&root.join("data/train_B")),
        &eval_opts,
    )
    .unwrap();
    assert_eq!(perfect.mean.rmse_all, Some(0.0));
    assert_eq!(perfect.mean.ssim, Some(1.0));
}
