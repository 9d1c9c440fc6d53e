use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tvseg::data::{load_labels, read_pnm, save_image};
use tvseg::eval::trial_seeds;
use tvseg::gradcheck::tiny_architecture;
use tvseg::grid::{Grid2D, ImageStack};
use tvseg::model::{save_checkpoint, Network};

fn tvseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tvseg"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = tvseg(args);
    assert!(
        out.status.success(),
        "tvseg {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_json(path: &Path, value: serde_json::Value) {
    fs::write(path, serde_json::to_string_pretty(&value).unwrap()).unwrap();
}

fn small_train_config() -> serde_json::Value {
    serde_json::json!({
        "patch_size": 7,
        "iterations": 40,
        "sup_batch": 4,
        "unsup_batch": 2,
        "architecture": tiny_architecture(2),
    })
}

/// Writes a tiny synthetic dataset and returns its root.
fn synth_dataset(root: &Path) -> PathBuf {
    fs::create_dir_all(root).unwrap();
    let cfg = root.join("synth.json");
    write_json(
        &cfg,
        serde_json::json!({
            "train_images": 3,
            "test_images": 2,
            "synth": { "height": 20, "width": 20, "num_shapes": 2, "noise_std": 0.1,
                       "num_classes": 2, "seed": 0 }
        }),
    );
    let data = root.join("data");
    ok(&["synth", "--config", s(&cfg), "--out", s(&data), "--seed", "5"]);
    data
}

fn without_timestamp(manifest: &Path) -> serde_json::Value {
    let mut v: serde_json::Value = serde_json::from_str(&fs::read_to_string(manifest).unwrap()).unwrap();
    v.as_object_mut().unwrap().remove("created_unix");
    v
}

#[test]
fn gradcheck_default_seed_passes() {
    let out = ok(&["gradcheck"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 6);
    assert!(text.lines().all(|l| l.starts_with("[PASS]")), "{text}");
}

#[test]
fn exit_codes() {
    assert_eq!(tvseg(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(tvseg(&["--help"]).status.code(), Some(0));
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.json");
    assert_eq!(
        tvseg(&["experiment", "--config", s(&missing), "--out", s(dir.path())]).status.code(),
        Some(3)
    );
    let bad = dir.path().join("bad.json");
    write_json(&bad, serde_json::json!({ "trials": 0 }));
    assert_eq!(
        tvseg(&["experiment", "--config", s(&bad), "--out", s(dir.path())]).status.code(),
        Some(1)
    );
    let unknown = dir.path().join("unknown.json");
    write_json(&unknown, serde_json::json!({ "bogus": 1 }));
    assert_eq!(
        tvseg(&["experiment", "--config", s(&unknown), "--out", s(dir.path())]).status.code(),
        Some(1)
    );
}

#[test]
fn divergent_training_exits_with_numerical_code() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_dataset(dir.path());
    let sparse = dir.path().join("sparse.csv");
    ok(&["sample", "--labels", s(&data.join("train")), "--n", "5", "--out", s(&sparse)]);
    let mut cfg = small_train_config();
    cfg["lr"] = serde_json::json!(1e300);
    cfg["supervised_loss"] = serde_json::json!("mse");
    let cfg_path = dir.path().join("train.json");
    write_json(&cfg_path, cfg);
    let out = tvseg(&[
        "train", "--config", s(&cfg_path), "--data", s(&data.join("train")),
        "--sparse", s(&sparse), "--out", s(&dir.path().join("net.json")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn zero_checkpoint_predicts_uniform_maps() {
    let dir = tempfile::tempdir().unwrap();
    for k in [2usize, 3] {
        let probe = Network::init(&tiny_architecture(k), 1, 7, k, 0).unwrap();
        let net = Network::from_parts(
            &tiny_architecture(k), 1, 7, k, 0, vec![0.0; probe.num_params()],
        )
        .unwrap();
        let ckpt = dir.path().join(format!("zero{k}.json"));
        save_checkpoint(&net, &ckpt).unwrap();
        let img = dir.path().join("img.pgm");
        save_image(
            &ImageStack::single(Grid2D::from_fn(9, 11, |r, c| ((r * 11 + c) % 7) as f64 / 6.0)),
            &img,
        )
        .unwrap();
        let prefix = dir.path().join(format!("out{k}"));
        ok(&["predict", "--checkpoint", s(&ckpt), "--image", s(&img), "--out-prefix", s(&prefix)]);
        let expected = (65535.0 / k as f64).round() as u16;
        for class in 0..k {
            let pnm = read_pnm(&fs::read(format!("{}.class{class}.pgm", s(&prefix))).unwrap()).unwrap();
            assert_eq!((pnm.width, pnm.height, pnm.maxval), (11, 9, 65535));
            assert!(pnm.samples.iter().all(|&v| v == expected));
        }
        let labels = load_labels(Path::new(&format!("{}.labels.pgm", s(&prefix))), Some(k)).unwrap();
        assert!(labels.data().iter().all(|&l| l == 0));
        assert!(Path::new(&format!("{}.manifest.json", s(&prefix))).exists());
    }
}

#[test]
fn experiment_rerun_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.json");
    write_json(
        &cfg,
        serde_json::json!({
            "labels_per_image": [5],
            "trials": 2,
            "train": small_train_config(),
            "alphas": [0.1],
            "betas": [1.0],
            "dataset": { "kind": "synthetic", "train_images": 2, "test_images": 2,
                         "synth": { "height": 16, "width": 16, "num_shapes": 2,
                                    "noise_std": 0.1, "num_classes": 2, "seed": 0 } },
            "master_seed": 9
        }),
    );
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["experiment", "--config", s(&cfg), "--out", s(&a), "--quiet"]);
    ok(&["experiment", "--config", s(&cfg), "--out", s(&b), "--quiet"]);
    for f in ["results.csv", "trials.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let (ma, mb) = (without_timestamp(&a.join("manifest.json")), without_timestamp(&b.join("manifest.json")));
    assert_eq!(ma["config"], mb["config"]);
    assert_eq!(ma["inputs"], mb["inputs"]);
    let results = fs::read_to_string(a.join("results.csv")).unwrap();
    assert_eq!(results.lines().count(), 4);
    let c = dir.path().join("c");
    ok(&["experiment", "--config", s(&cfg), "--out", s(&c), "--quiet", "--seed", "10"]);
    assert_ne!(fs::read(a.join("trials.csv")).unwrap(), fs::read(c.join("trials.csv")).unwrap());
}

/// sample -> train (alpha = 0) -> predict -> eval reproduces the supervised
/// arm of the experiment on the same directories and seeds.
#[test]
fn manual_pipeline_matches_supervised_arm() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_dataset(dir.path());
    let (train_dir, test_dir) = (data.join("train"), data.join("test"));
    let master = 4u64;
    let exp_cfg = dir.path().join("exp.json");
    write_json(
        &exp_cfg,
        serde_json::json!({
            "labels_per_image": [6],
            "trials": 1,
            "modes": ["supervised"],
            "train": small_train_config(),
            "dataset": { "kind": "directories", "train_dir": train_dir, "test_dir": test_dir },
            "master_seed": master
        }),
    );
    let exp_out = dir.path().join("exp");
    ok(&["experiment", "--config", s(&exp_cfg), "--out", s(&exp_out), "--quiet"]);
    let results = fs::read_to_string(exp_out.join("results.csv")).unwrap();
    let row: Vec<&str> = results.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[1], "supervised");

    let seeds = trial_seeds(master, 6, 0);
    let trials = fs::read_to_string(exp_out.join("trials.csv")).unwrap();
    let trow: Vec<&str> = trials.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(trow[2], seeds.sample.to_string());
    assert_eq!(trow[3], seeds.train.to_string());

    let sparse = dir.path().join("sparse.csv");
    ok(&[
        "sample", "--labels", s(&train_dir), "--n", "6",
        "--seed", &seeds.sample.to_string(), "--out", s(&sparse),
    ]);
    let train_cfg = dir.path().join("train.json");
    write_json(&train_cfg, small_train_config());
    let ckpt = dir.path().join("net.json");
    let before = fs::read(train_dir.join("000.pgm")).unwrap();
    ok(&[
        "train", "--config", s(&train_cfg), "--data", s(&train_dir), "--sparse", s(&sparse),
        "--out", s(&ckpt), "--alpha", "0", "--seed", &seeds.train.to_string(),
    ]);
    assert_eq!(before, fs::read(train_dir.join("000.pgm")).unwrap());
    assert!(dir.path().join("net.json.report.csv").exists());

    let pred = dir.path().join("pred");
    fs::create_dir(&pred).unwrap();
    for stem in ["000", "001"] {
        ok(&[
            "predict", "--checkpoint", s(&ckpt), "--image", s(&test_dir.join(format!("{stem}.pgm"))),
            "--out-prefix", s(&pred.join(stem)),
        ]);
    }
    let eval_csv = dir.path().join("eval.csv");
    let out = ok(&["eval", "--pred", s(&pred), "--truth", s(&test_dir), "--out", s(&eval_csv)]);
    let pooled = String::from_utf8(out.stdout).unwrap();
    assert_eq!(pooled.trim(), row[2]);
    let eval_text = fs::read_to_string(&eval_csv).unwrap();
    assert!(eval_text.starts_with("image,wrong,evaluated,pixel_error\n"));
    assert!(eval_text.lines().last().unwrap().starts_with("pooled,"));

    // beta = 0 smoothing reproduces the argmax labels.
    let smoothed = dir.path().join("mrf");
    ok(&["mrf", "--probs", s(&pred), "--beta", "0", "--out", s(&smoothed)]);
    for stem in ["000", "001"] {
        let a = load_labels(&pred.join(format!("{stem}.labels.pgm")), Some(2)).unwrap();
        let b = load_labels(&smoothed.join(format!("{stem}.labels.pgm")), Some(2)).unwrap();
        let differ = a.data().iter().zip(b.data()).filter(|(x, y)| x != y).count();
        // Only 16-bit quantization near p = 0.5 can move a pixel.
        assert!(differ <= 2, "{stem}: {differ} pixels differ");
    }
    assert!(smoothed.join("manifest.json").exists());
}

#[test]
fn synth_is_deterministic_and_writes_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let a = synth_dataset(&dir.path().join("a"));
    let b = synth_dataset(&dir.path().join("b"));
    for f in ["train/000.pgm", "train/002.labels.pgm", "test/001.pgm"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap());
    }
    let m = without_timestamp(&a.join("manifest.json"));
    assert_eq!(m["command"], "synth");
    assert_eq!(m["master_seed"], 5);
    assert_eq!(m["config"]["synth"]["seed"], 5);
}
