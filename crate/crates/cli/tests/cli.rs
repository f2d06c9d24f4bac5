use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use deshadow_core::imaging::{dilate, load_image, load_mask, save_image, save_mask, MaskKind};
use deshadow_core::training::{synthetic_triplets, write_istd, SyntheticConfig};
use deshadow_core::{enhance_second_order, ColorSpace, CurveParams, ImageTensor, ShadowMask};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TINY: &str =
    "[arch]\nwidths = [4, 8]\nblocks_per_scale = 1\ngate_reduction = 2\n\n[train]\nmax_steps = 0\nresize = 0\n";

fn deshadow(args: &[&str]) -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_deshadow"));
    c.args(args).env_remove("DESHADOW_CACHE");
    c
}

fn output(c: &mut Command) -> Output {
    c.output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn succeed(c: &mut Command) -> Output {
    let o = output(c);
    assert!(o.status.success(), "{c:?} failed: {}", stderr(&o));
    o
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn config_hash(o: &Output) -> String {
    stderr(o).lines().find_map(|l| l.strip_prefix("config hash: ")).expect("hash line").to_string()
}

/// Synthetic dataset plus a tiny-architecture config and a trained
/// (zero-step) checkpoint.
struct Workspace {
    _dir: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
    checkpoint: PathBuf,
}

fn workspace() -> Workspace {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let data = synthetic_triplets(&SyntheticConfig { count: 3, ..Default::default() });
    write_istd(&root.join("data"), &data).unwrap();
    let config = root.join("tiny.toml");
    std::fs::write(&config, TINY).unwrap();
    let checkpoint = root.join("run/ck.json");
    succeed(&mut deshadow(&[
        "--config",
        p(&config),
        "train",
        "--dataset",
        p(&root.join("data")),
        "--checkpoint",
        p(&checkpoint),
    ]));
    Workspace { _dir: dir, root, config, checkpoint }
}

#[test]
fn help_exits_zero_and_bad_flags_exit_one() {
    for cmd in [
        vec!["--help"],
        vec!["prep-mask", "--help"],
        vec!["train", "--help"],
        vec!["infer", "--help"],
        vec!["eval", "--help"],
        vec!["report", "--help"],
    ] {
        let o = output(&mut deshadow(&cmd));
        assert_eq!(o.status.code(), Some(0), "{cmd:?}");
        assert!(String::from_utf8_lossy(&o.stdout).contains("Usage"));
    }
    let o = output(&mut deshadow(&["eval", "--no-such-flag"]));
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("Usage"));
    assert_eq!(output(&mut deshadow(&[])).status.code(), Some(1));
}

#[test]
fn config_problems_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[solver]\nstagez = 3\n").unwrap();
    let o = output(&mut deshadow(&["--config", p(&cfg), "train"]));
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    std::fs::write(&cfg, "alpha = 0.2\n").unwrap();
    let o = output(&mut deshadow(&["--config", p(&cfg), "train"]));
    assert_eq!(o.status.code(), Some(1), "missing dataset is a usage error: {}", stderr(&o));
    let o = output(&mut deshadow(&["--config", p(&cfg), "train", "--dataset", p(&dir.path().join("nope"))]));
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn every_command_prints_the_same_config_hash() {
    let ws = workspace();
    let c = p(&ws.config);
    let out = ws.root.join("out");
    let runs = [
        succeed(&mut deshadow(&[
            "--config",
            c,
            "train",
            "--dataset",
            p(&ws.root.join("data")),
            "--checkpoint",
            p(&ws.root.join("r2/ck.json")),
        ])),
        succeed(&mut deshadow(&[
            "--config",
            c,
            "prep-mask",
            "--images",
            p(&ws.root.join("data/train_A")),
            "--fallback-masks",
            p(&ws.root.join("data/train_B")),
            "--out",
            p(&out),
        ])),
        succeed(&mut deshadow(&[
            "--config",
            c,
            "infer",
            "--input",
            p(&ws.root.join("data/train_A")),
            "--mask-dir",
            p(&out),
            "--checkpoint",
            p(&ws.checkpoint),
            "--out",
            p(&out.join("pred")),
        ])),
        succeed(&mut deshadow(&[
            "--config",
            c,
            "eval",
            "--pred",
            p(&out.join("pred")),
            "--gt",
            p(&ws.root.join("data/train_C")),
            "--mask",
            p(&ws.root.join("data/train_B")),
            "--out",
            p(&out.join("eval")),
            "--resize",
            "0",
        ])),
        succeed(&mut deshadow(&[
            "--config",
            c,
            "report",
            p(&out.join("eval/metrics.csv")),
            "--out",
            p(&out.join("report")),
        ])),
    ];
    let first = config_hash(&runs[0]);
    assert_eq!(first.len(), 64);
    assert!(runs.iter().all(|o| config_hash(o) == first));
    let other = ws.root.join("other.toml");
    std::fs::write(&other, format!("alpha = 0.5\n{TINY}")).unwrap();
    let o = succeed(&mut deshadow(&[
        "--config",
        p(&other),
        "report",
        p(&out.join("eval/metrics.csv")),
        "--out",
        p(&out.join("r")),
    ]));
    assert_ne!(config_hash(&o), first);
}

fn rect(h: usize, w: usize, y0: usize, y1: usize, x0: usize, x1: usize) -> ShadowMask {
    ShadowMask::from_fn(h, w, MaskKind::Raw, |y, x| (y0..y1).contains(&y) && (x0..x1).contains(&x))
}

#[test]
fn prep_mask_selects_falls_back_and_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let truth = rect(64, 64, 10, 40, 20, 50);
    let img = ImageTensor::from_pixel_fn(64, 64, ColorSpace::Srgb, |y, x| {
        let k = if truth.get(y, x) { 0.4 } else { 1.0 };
        [0.7 * k, 0.6 * k, 0.5 * k]
    });
    save_image(&img, root.join("images/dark.png")).unwrap();
    save_image(&img, root.join("images/plain.png")).unwrap();
    save_mask(&truth, root.join("cands/dark/0.png")).unwrap();
    save_mask(&rect(64, 64, 45, 60, 0, 64), root.join("cands/dark/1.png")).unwrap();
    let fallback = rect(64, 64, 0, 5, 0, 5);
    save_mask(&fallback, root.join("fallback/plain.png")).unwrap();

    let cache = root.join("cache");
    let config = root.join("prep.toml");
    std::fs::write(&config, "[selection]\ndilation_radius = 1\n").unwrap();
    let args = |out: &str| {
        let mut c = deshadow(&[
            "--config",
            p(&config),
            "prep-mask",
            "--images",
            p(&root.join("images")),
            "--candidates",
            p(&root.join("cands")),
            "--fallback-masks",
            p(&root.join("fallback")),
            "--out",
            p(&root.join(out)),
        ]);
        c.env("DESHADOW_CACHE", &cache);
        c
    };
    succeed(&mut args("a"));
    let chosen = load_mask(root.join("a/dark_Ms.png")).unwrap();
    assert!(chosen.iou(&truth).unwrap() >= 0.85);
    assert_eq!(load_mask(root.join("a/plain_Ms.png")).unwrap(), dilate(&fallback, 1).unwrap().with_kind(MaskKind::Raw));
    let report = std::fs::read_to_string(root.join("a/prep_report.csv")).unwrap();
    let lines: Vec<&str> = report.lines().collect();
    assert_eq!(lines[0], "id,source,chosen,darkness,low_confidence,error");
    assert!(lines[1].starts_with("dark,candidates,0,") && lines[1].ends_with(",false,"), "{}", lines[1]);
    assert_eq!(lines[2], "plain,fallback,,,false,");
    assert!(cache.join("dark_Ms.png").is_file());

    succeed(&mut args("b"));
    for f in ["dark_Ms.png", "plain_Ms.png", "prep_report.csv"] {
        assert_eq!(
            std::fs::read(root.join("a").join(f)).unwrap(),
            std::fs::read(root.join("b").join(f)).unwrap(),
            "{f}"
        );
    }

    // no candidates and no fallback for either image
    let o = output(&mut deshadow(&[
        "prep-mask",
        "--images",
        p(&root.join("images")),
        "--candidates",
        p(&root.join("nothing")),
        "--out",
        p(&root.join("c")),
    ]));
    assert_eq!(o.status.code(), Some(2));
    let report = std::fs::read_to_string(root.join("c/prep_report.csv")).unwrap();
    assert!(report.lines().skip(1).all(|l| l.contains("no candidate masks")), "{report}");
}

#[test]
fn infer_alpha_endpoints_and_stage_dumps() {
    let ws = workspace();
    let c = p(&ws.config);
    let input = ws.root.join("data/train_A");
    let masks = ws.root.join("data/train_B");
    let run = |alpha: &str, out: &Path| {
        succeed(&mut deshadow(&[
            "--config",
            c,
            "infer",
            "--input",
            p(&input),
            "--mask-dir",
            p(&masks),
            "--checkpoint",
            p(&ws.checkpoint),
            "--alpha",
            alpha,
            "--dump-stages",
            "--out",
            p(out),
        ]));
    };
    let (zero, one) = (ws.root.join("zero"), ws.root.join("one"));
    run("0", &zero);
    run("1", &one);
    for id in ["syn00", "syn01", "syn02"] {
        let stages = zero.join("stages").join(id);
        for n in 0..=3 {
            assert!(stages.join(format!("ins_{n}.png")).is_file() && stages.join(format!("a_{n}.png")).is_file());
        }
        let result = std::fs::read(zero.join(format!("{id}.png"))).unwrap();
        assert_eq!(result, std::fs::read(stages.join("ins_3.png")).unwrap());

        let img = load_image::<f64>(input.join(format!("{id}.png"))).unwrap();
        let curve = CurveParams::uniform(32, 32, 0.25, 0.25).unwrap();
        let expected = ws.root.join(format!("{id}_enh.png"));
        save_image(&enhance_second_order(&img, &curve).unwrap(), &expected).unwrap();
        assert_eq!(std::fs::read(one.join(format!("{id}.png"))).unwrap(), std::fs::read(&expected).unwrap());

        let a = load_image::<f64>(stages.join("a_3.png")).unwrap();
        let (lo, hi) = a.min_max();
        assert!(lo == 0.0 && hi == 1.0, "gain map spans [{lo}, {hi}]");
    }
}

#[test]
fn infer_reports_both_hashes_on_config_mismatch() {
    let ws = workspace();
    let other = ws.root.join("other.toml");
    std::fs::write(&other, TINY.replace("widths = [4, 8]", "widths = [4, 4]")).unwrap();
    let o = output(&mut deshadow(&[
        "--config",
        p(&other),
        "infer",
        "--input",
        p(&ws.root.join("data/train_A")),
        "--mask-dir",
        p(&ws.root.join("data/train_B")),
        "--checkpoint",
        p(&ws.checkpoint),
        "--out",
        p(&ws.root.join("x")),
    ]));
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("checkpoint config hash: ") && err.contains("current config hash: "), "{err}");
}

#[test]
fn infer_without_any_mask_fails() {
    let ws = workspace();
    let o = output(&mut deshadow(&[
        "--config",
        p(&ws.config),
        "infer",
        "--input",
        p(&ws.root.join("data/train_A")),
        "--checkpoint",
        p(&ws.checkpoint),
        "--out",
        p(&ws.root.join("x")),
    ]));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no candidate masks"));
}

#[test]
fn eval_lists_orphans() {
    let fx = fixtures().join("eval");
    let dir = tempfile::tempdir().unwrap();
    let pred = dir.path().join("pred");
    std::fs::create_dir(&pred).unwrap();
    for f in ["f0.png", "f1.png"] {
        std::fs::copy(fx.join("pred").join(f), pred.join(f)).unwrap();
    }
    std::fs::copy(fx.join("pred/f0.png"), pred.join("extra.png")).unwrap();
    let o = output(&mut deshadow(&[
        "eval",
        "--pred",
        p(&pred),
        "--gt",
        p(&fx.join("gt")),
        "--out",
        p(&dir.path().join("o")),
    ]));
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("extra") && err.contains("f2"), "{err}");
}

#[test]
fn eval_true_rmse_changes_only_lab_columns() {
    let fx = fixtures().join("eval");
    let dir = tempfile::tempdir().unwrap();
    let run = |out: &str, extra: &[&str]| {
        let (pred, gt, mask) = (fx.join("pred"), fx.join("gt"), fx.join("mask"));
        let mut args = vec!["eval", "--pred", p(&pred), "--gt", p(&gt), "--mask", p(&mask)];
        let o = dir.path().join(out);
        args.extend(["--out", p(&o)]);
        args.extend(extra);
        succeed(&mut deshadow(&args));
        std::fs::read_to_string(o.join("metrics.csv")).unwrap()
    };
    let (mae, rms) = (run("mae", &[]), run("rms", &["--true-rmse"]));
    for (a, b) in mae.lines().zip(rms.lines()).skip(1) {
        let (a, b): (Vec<&str>, Vec<&str>) = (a.split(',').collect(), b.split(',').collect());
        assert_eq!(a[4..], b[4..]);
        let (ma, rb): (f64, f64) = (a[1].parse().unwrap(), b[1].parse().unwrap());
        assert!(rb >= ma - 1e-6, "rms {rb} < mae {ma}");
    }
}

fn run_frozen_report(out: &Path) {
    let fx = fixtures();
    succeed(&mut deshadow(&[
        "report",
        p(&fx.join("eval/metrics.csv")),
        p(&fx.join("report/baseline.csv")),
        "--labels",
        "ours,baseline",
        "--inputs",
        p(&fx.join("eval/gt")),
        "--results",
        p(&fx.join("eval/pred")),
        "--masks",
        p(&fx.join("eval/mask")),
        "--strips",
        "2",
        "--out",
        p(out),
    ]));
}

#[test]
fn report_matches_frozen_output() {
    let fx = fixtures();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r");
    run_frozen_report(&out);
    let report = std::fs::read_to_string(out.join("report.md")).unwrap();
    assert_eq!(report, std::fs::read_to_string(fx.join("report/report.md")).unwrap());
    assert!(report.contains("**"));
    for name in ["rmse_all", "ssim_s", "psnr_n"] {
        assert!(out.join("plots").join(format!("{name}.png")).is_file());
    }
    let strip = load_image::<f64>(out.join("strips/f0.png")).unwrap();
    assert_eq!(strip.dims(), (40, 3 * 40 + 2 * 4));
}

#[test]
fn single_report_is_the_mean_row_without_bold() {
    let fx = fixtures();
    let dir = tempfile::tempdir().unwrap();
    succeed(&mut deshadow(&["report", p(&fx.join("eval/metrics.csv")), "--out", p(&dir.path().join("r"))]));
    let report = std::fs::read_to_string(dir.path().join("r/report.md")).unwrap();
    assert!(!report.contains("**"));
    let row = report.lines().find(|l| l.starts_with("| eval |")).expect("row labelled by directory");
    let mean = std::fs::read_to_string(fx.join("eval/metrics.csv")).unwrap();
    let mean: Vec<f64> = mean.lines().last().unwrap().split(',').skip(1).map(|v| v.parse().unwrap()).collect();
    let cells: Vec<&str> = row.split('|').map(str::trim).filter(|c| !c.is_empty()).skip(1).collect();
    assert_eq!(cells[0], format!("{:.2}", mean[0]));
    assert_eq!(cells[3], format!("{:.3}", mean[3]));
    assert_eq!(cells[8], format!("{:.2}", mean[8]));
}

#[test]
fn report_rejects_malformed_csv_with_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    std::fs::write(
        &bad,
        "id,rmse_all,rmse_n,rmse_s,ssim,ssim_n,ssim_s,psnr,psnr_n,psnr_s\na,1,2,3,4,5,6,7,8,9\nb,1,2\n",
    )
    .unwrap();
    let o = output(&mut deshadow(&["report", p(&bad), "--out", p(&dir.path().join("r"))]));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
}

/// Rewrites the frozen fixtures. Run with `--ignored` only when the output
/// format changes on purpose.
#[test]
#[ignore]
fn regenerate_frozen_fixtures() {
    let fx = fixtures();
    let eval = fx.join("eval");
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for k in 0..3 {
        let truth = rect(40, 40, 5 + 3 * k, 25 + 2 * k, 8, 30 - k);
        let gt = ImageTensor::from_pixel_fn(40, 40, ColorSpace::Srgb, |y, x| {
            let t = 0.1 * ((0.3 * y as f64).sin() + (0.2 * x as f64 + k as f64).cos());
            [0.55 + t, 0.5 + t, 0.45 + t]
        });
        let pred = ImageTensor::from_pixel_fn(40, 40, ColorSpace::Srgb, |y, x| {
            let dim = if truth.get(y, x) { 0.8 + 0.05 * k as f64 } else { 1.0 };
            gt.pixel(y, x).map(|v| (v * dim + rng.gen_range(-0.02..0.02)).clamp(0.0, 1.0))
        });
        save_image(&gt, eval.join(format!("gt/f{k}.png"))).unwrap();
        save_image(&pred, eval.join(format!("pred/f{k}.png"))).unwrap();
        save_mask(&truth, eval.join(format!("mask/f{k}.png"))).unwrap();
    }
    let dir = tempfile::tempdir().unwrap();
    succeed(&mut deshadow(&[
        "eval",
        "--pred",
        p(&eval.join("pred")),
        "--gt",
        p(&eval.join("gt")),
        "--mask",
        p(&eval.join("mask")),
        "--out",
        p(dir.path()),
    ]));
    std::fs::copy(dir.path().join("metrics.csv"), eval.join("metrics.csv")).unwrap();
    run_frozen_report(&dir.path().join("r"));
    std::fs::copy(dir.path().join("r/report.md"), fx.join("report/report.md")).unwrap();
}
