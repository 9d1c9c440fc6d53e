use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tvseg::data::{
    load_dataset_dir, load_labels, load_prob_channel, load_image, load_sparse, sample_dataset,
    save_dataset_dir, save_labels, save_prob_channel, save_sparse, synth_split, DatasetEntry,
    SynthConfig, LABEL_SUFFIX, TEST_SPLIT, TRAIN_SPLIT,
};
use tvseg::eval::{
    emit_table, error_counts, render_trials, run_experiment_on, DatasetSource, ExperimentConfig,
};
use tvseg::gradcheck;
use tvseg::grid::Grid2D;
use tvseg::model::{load_checkpoint, save_checkpoint};
use tvseg::mrf::{argmax_labels, icm_smooth, MrfConfig};
use tvseg::spatial::ProbMap;
use tvseg::trainer::{predict_image, train, TrainConfig};
use tvseg::{Error, Result};

use crate::manifest::RunManifest;
use crate::Command;

/// Configuration of `synth`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthJob {
    pub train_images: usize,
    pub test_images: usize,
    pub synth: SynthConfig,
}

impl Default for SynthJob {
    fn default() -> Self {
        Self {
            train_images: 20,
            test_images: 20,
            synth: SynthConfig::default(),
        }
    }
}

fn read_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            Ok(serde_json::from_str(&text)?)
        }
    }
}

/// `path` with `suffix` appended to its file name.
fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = OsString::from(path.as_os_str());
    s.push(suffix);
    PathBuf::from(s)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn images_of(entries: Vec<DatasetEntry>) -> Vec<tvseg::data::LabeledImage> {
    entries.into_iter().map(|e| e.image).collect()
}

pub fn run(cmd: Command) -> Result<ExitCode> {
    match cmd {
        Command::Synth {
            config,
            out,
            seed,
            train_images,
            test_images,
        } => {
            let mut job: SynthJob = read_config(config.as_deref())?;
            if let Some(s) = seed {
                job.synth.seed = s;
            }
            if let Some(n) = train_images {
                job.train_images = n;
            }
            if let Some(n) = test_images {
                job.test_images = n;
            }
            cmd_synth(&job, config.as_deref(), &out)
        }
        Command::Sample { labels, n, seed, out } => cmd_sample(&labels, n, seed, &out),
        Command::Train {
            config,
            data,
            sparse,
            out,
            alpha,
            seed,
            iterations,
            lr,
        } => {
            let mut cfg: TrainConfig = read_config(config.as_deref())?;
            if let Some(a) = alpha {
                cfg.alpha = a;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(i) = iterations {
                cfg.iterations = i;
            }
            if let Some(l) = lr {
                cfg.lr = l;
            }
            cmd_train(&cfg, config.as_deref(), &data, &sparse, &out)
        }
        Command::Predict {
            checkpoint,
            image,
            out_prefix,
        } => cmd_predict(&checkpoint, &image, &out_prefix),
        Command::Mrf {
            probs,
            beta,
            max_iters,
            out,
        } => cmd_mrf(&probs, MrfConfig { beta, max_iters }, &out),
        Command::Eval { pred, truth, out } => cmd_eval(&pred, &truth, &out),
        Command::Experiment {
            config,
            out,
            seed,
            quiet,
        } => {
            let mut cfg: ExperimentConfig = read_config(config.as_deref())?;
            if let Some(s) = seed {
                cfg.master_seed = s;
            }
            cmd_experiment(&cfg, config.as_deref(), &out, quiet)
        }
        Command::Gradcheck { seed, out } => cmd_gradcheck(seed, out.as_deref()),
    }
}

pub fn cmd_synth(job: &SynthJob, config: Option<&Path>, out: &Path) -> Result<ExitCode> {
    let mut manifest = RunManifest::new("synth", job, Some(job.synth.seed))?;
    if let Some(c) = config {
        manifest.add_input(c)?;
    }
    for (split, count, name) in [
        (TRAIN_SPLIT, job.train_images, "train"),
        (TEST_SPLIT, job.test_images, "test"),
    ] {
        let entries: Vec<DatasetEntry> = synth_split(&job.synth, count, split)?
            .into_iter()
            .enumerate()
            .map(|(i, image)| DatasetEntry {
                stem: format!("{i:03}"),
                image,
            })
            .collect();
        let dir = out.join(name);
        save_dataset_dir(&dir, &entries, job.synth.num_classes)?;
        manifest.add_output(&dir);
    }
    manifest.write(&out.join("manifest.json"))?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_sample(labels: &Path, n: usize, seed: u64, out: &Path) -> Result<ExitCode> {
    let images = images_of(load_dataset_dir(labels, None)?);
    let set = sample_dataset(&images, n, seed)?;
    save_sparse(&set, out)?;
    let mut manifest = RunManifest::new(
        "sample",
        serde_json::json!({ "labels": labels, "n": n, "seed": seed }),
        Some(seed),
    )?;
    manifest.add_input(labels)?;
    manifest.add_output(out);
    manifest.write(&with_suffix(out, ".manifest.json"))?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_train(
    cfg: &TrainConfig,
    config: Option<&Path>,
    data: &Path,
    sparse: &Path,
    out: &Path,
) -> Result<ExitCode> {
    cfg.validate()?;
    let images = images_of(load_dataset_dir(data, Some(cfg.num_classes))?);
    let set = load_sparse(sparse)?;
    let (net, report) = train(&images, &set, cfg)?;
    save_checkpoint(&net, out)?;
    let report_path = with_suffix(out, ".report.csv");
    report.save_csv(&report_path)?;

    // Materialize the architecture so the manifest is self-contained.
    let resolved = TrainConfig {
        architecture: Some(cfg.architecture()),
        ..cfg.clone()
    };
    let mut manifest = RunManifest::new("train", &resolved, Some(cfg.seed))?;
    if let Some(c) = config {
        manifest.add_input(c)?;
    }
    manifest.add_input(data)?;
    manifest.add_input(sparse)?;
    manifest.add_output(out);
    manifest.add_output(&report_path);
    manifest.write(&with_suffix(out, ".manifest.json"))?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_predict(checkpoint: &Path, image: &Path, prefix: &Path) -> Result<ExitCode> {
    let net = load_checkpoint(checkpoint)?;
    let img = load_image(image)?;
    let probs = predict_image(&net, &img)?;
    let mut manifest = RunManifest::new(
        "predict",
        serde_json::json!({ "checkpoint": checkpoint, "image": image, "out_prefix": prefix }),
        Some(net.seed()),
    )?;
    manifest.add_input(checkpoint)?;
    manifest.add_input(image)?;
    for (k, ch) in probs.channels().iter().enumerate() {
        let path = with_suffix(prefix, &format!(".class{k}.pgm"));
        save_prob_channel(ch, &path)?;
        manifest.add_output(&path);
    }
    let labels_path = with_suffix(prefix, LABEL_SUFFIX);
    save_labels(&argmax_labels(&probs)?, net.num_classes(), &labels_path)?;
    manifest.add_output(&labels_path);
    manifest.write(&with_suffix(prefix, ".manifest.json"))?;
    Ok(ExitCode::SUCCESS)
}

/// Groups `<stem>.class<k>.pgm` files by stem, requiring classes `0..K`.
fn prob_files(dir: &Path) -> Result<BTreeMap<String, Vec<PathBuf>>> {
    let mut found: BTreeMap<String, BTreeMap<usize, PathBuf>> = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let name = path.file_name().unwrap_or_default().to_string_lossy().into_owned();
        let Some(rest) = name.strip_suffix(".pgm") else { continue };
        let Some((stem, k)) = rest.rsplit_once(".class") else { continue };
        let Ok(k) = k.parse::<usize>() else { continue };
        found.entry(stem.to_string()).or_default().insert(k, path);
    }
    if found.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "{} holds no <stem>.class<k>.pgm files",
            dir.display()
        )));
    }
    found
        .into_iter()
        .map(|(stem, by_k)| {
            if by_k.len() < 2 || by_k.keys().copied().ne(0..by_k.len()) {
                return Err(Error::InvalidConfig(format!(
                    "{stem}: probability classes must be 0..K with K >= 2"
                )));
            }
            Ok((stem, by_k.into_values().collect()))
        })
        .collect()
}

/// Loads 16-bit channels and renormalizes each pixel, undoing quantization drift.
fn load_prob_map(paths: &[PathBuf]) -> Result<ProbMap> {
    let channels = paths
        .iter()
        .map(|p| load_prob_channel(p))
        .collect::<Result<Vec<_>>>()?;
    let (h, w) = (channels[0].height(), channels[0].width());
    if channels.iter().any(|c| c.height() != h || c.width() != w) {
        return Err(Error::InvalidProbMap("class channels differ in size".into()));
    }
    let k = channels.len();
    let mut out = vec![vec![0.0; h * w]; k];
    for i in 0..h * w {
        let sum: f64 = channels.iter().map(|c| c.data()[i]).sum();
        for (o, c) in out.iter_mut().zip(&channels) {
            o[i] = if sum > 0.0 { c.data()[i] / sum } else { 1.0 / k as f64 };
        }
    }
    ProbMap::new(
        out.into_iter()
            .map(|d| Grid2D::new(h, w, d))
            .collect::<Result<Vec<_>>>()?,
    )
}

fn cmd_mrf(probs: &Path, cfg: MrfConfig, out: &Path) -> Result<ExitCode> {
    cfg.validate()?;
    let groups = prob_files(probs)?;
    create_dir(out)?;
    let mut manifest = RunManifest::new("mrf", serde_json::json!({ "probs": probs, "mrf": cfg }), None)?;
    manifest.add_input(probs)?;
    for (stem, paths) in &groups {
        let map = load_prob_map(paths)?;
        let smoothed = icm_smooth(&map, &cfg)?;
        let path = out.join(format!("{stem}{LABEL_SUFFIX}"));
        save_labels(&smoothed.labels, map.num_classes(), &path)?;
        manifest.add_output(&path);
    }
    manifest.write(&out.join("manifest.json"))?;
    Ok(ExitCode::SUCCESS)
}

pub const EVAL_HEADER: &str = "image,wrong,evaluated,pixel_error";

fn cmd_eval(pred: &Path, truth: &Path, out: &Path) -> Result<ExitCode> {
    let truth_set = load_dataset_dir(truth, None)?;
    let mut csv = format!("{EVAL_HEADER}\n");
    let (mut wrong, mut total) = (0usize, 0usize);
    for entry in &truth_set {
        let p = load_labels(&pred.join(format!("{}{LABEL_SUFFIX}", entry.stem)), None)?;
        let (w, n) = error_counts(&p, &entry.image.labels)?;
        let err = if n == 0 { f64::NAN } else { w as f64 / n as f64 };
        csv.push_str(&format!("{},{w},{n},{err}\n", entry.stem));
        wrong += w;
        total += n;
    }
    if total == 0 {
        return Err(Error::EmptyEvaluation);
    }
    let pooled = wrong as f64 / total as f64;
    csv.push_str(&format!("pooled,{wrong},{total},{pooled}\n"));
    fs::write(out, csv).map_err(|e| Error::io(out, e))?;
    println!("{pooled}");

    let mut manifest = RunManifest::new("eval", serde_json::json!({ "pred": pred, "truth": truth }), None)?;
    manifest.add_input(pred)?;
    manifest.add_input(truth)?;
    manifest.add_output(out);
    manifest.write(&with_suffix(out, ".manifest.json"))?;
    Ok(ExitCode::SUCCESS)
}

pub fn cmd_experiment(
    cfg: &ExperimentConfig,
    config: Option<&Path>,
    out: &Path,
    quiet: bool,
) -> Result<ExitCode> {
    cfg.validate()?;
    let (train_set, test_set) = cfg.load_dataset()?;
    create_dir(out)?;
    let res = run_experiment_on(cfg, &train_set, &test_set, |t| {
        if !quiet {
            let errs: Vec<String> = t.errors.iter().map(|(m, e)| format!("{m}={e:.5}")).collect();
            eprintln!(
                "labels_per_image={} trial={} {}",
                t.labels_per_image,
                t.trial,
                errs.join(" ")
            );
        }
    })?;
    let results = out.join("results.csv");
    emit_table(&res, &results)?;
    let trials = out.join("trials.csv");
    fs::write(&trials, render_trials(&res)).map_err(|e| Error::io(&trials, e))?;

    let mut resolved = cfg.clone();
    resolved.train.architecture = Some(cfg.train.architecture());
    let mut manifest = RunManifest::new("experiment", &resolved, Some(cfg.master_seed))?;
    if let Some(c) = config {
        manifest.add_input(c)?;
    }
    if let DatasetSource::Directories { train_dir, test_dir } = &cfg.dataset {
        manifest.add_input(train_dir)?;
        manifest.add_input(test_dir)?;
    }
    manifest.add_output(&results);
    manifest.add_output(&trials);
    manifest.write(&out.join("manifest.json"))?;

    for c in &res.cells {
        println!(
            "{:>4} {:<16} {:.4} ± {:.4}",
            c.labels_per_image,
            c.mode,
            c.mean(),
            c.std()
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_gradcheck(seed: u64, out: Option<&Path>) -> Result<ExitCode> {
    let outcomes = gradcheck::run_all(seed)?;
    for o in &outcomes {
        println!("{o}");
    }
    let passed = outcomes.iter().all(|o| o.passed);
    if let Some(path) = out {
        let summary: Vec<_> = outcomes
            .iter()
            .map(|o| {
                serde_json::json!({
                    "name": o.name, "passed": o.passed, "worst": o.worst,
                    "tolerance": o.tolerance, "samples": o.samples,
                })
            })
            .collect();
        let mut manifest = RunManifest::new(
            "gradcheck",
            serde_json::json!({ "seed": seed, "checks": summary }),
            Some(seed),
        )?;
        manifest.add_output(path);
        manifest.write(path)?;
    }
    Ok(if passed { ExitCode::SUCCESS } else { ExitCode::from(2) })
}
