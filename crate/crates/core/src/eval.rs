//! Pixel error and the multi-trial sparse-label experiment.
//!
//! For every labels-per-image size and trial a fresh sparse label set is
//! drawn and each requested arm is trained and scored on the test images:
//!
//! - `supervised`: alpha = 0.
//! - `mrf_post`: the supervised model's test probability maps smoothed by
//!   ICM, with beta picked from a sweep by training pixel error.
//! - `semi_supervised`: one model per alpha in the sweep, the one with the
//!   lowest training pixel error is scored.
//!
//! Trial `t` of size `n` draws everything from `derive_seed(master, [n, t])`,
//! so adding sizes or trials never changes existing cells.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{
    load_dataset_dir, sample_dataset, synth_split, LabelMap, LabeledImage, SynthConfig,
    TEST_SPLIT, TRAIN_SPLIT, UNLABELED,
};
use crate::error::{Error, Result};
use crate::model::Network;
use crate::mrf::{argmax_labels, icm_smooth, MrfConfig};
use crate::seed::derive_seed;
use crate::spatial::ProbMap;
use crate::trainer::{predict_image, train, TrainConfig};

/// Mismatched and evaluated pixel counts; unlabeled truth pixels are skipped.
pub fn error_counts(pred: &LabelMap, truth: &LabelMap) -> Result<(usize, usize)> {
    if (pred.height(), pred.width()) != (truth.height(), truth.width()) {
        return Err(Error::SizeMismatch {
            expected: format!("{}x{} prediction", truth.height(), truth.width()),
            actual: format!("{}x{}", pred.height(), pred.width()),
        });
    }
    let mut wrong = 0;
    let mut total = 0;
    for (&p, &t) in pred.data().iter().zip(truth.data()) {
        if t != UNLABELED {
            total += 1;
            wrong += usize::from(p != t);
        }
    }
    Ok((wrong, total))
}

/// Fraction of labeled truth pixels where `pred` differs.
pub fn pixel_error(pred: &LabelMap, truth: &LabelMap) -> Result<f64> {
    let (wrong, total) = error_counts(pred, truth)?;
    if total == 0 {
        return Err(Error::EmptyEvaluation);
    }
    Ok(wrong as f64 / total as f64)
}

/// Pixel error pooled over several images.
pub fn pooled_error<'a>(pairs: impl IntoIterator<Item = (&'a LabelMap, &'a LabelMap)>) -> Result<f64> {
    let (mut wrong, mut total) = (0, 0);
    for (p, t) in pairs {
        let (w, n) = error_counts(p, t)?;
        wrong += w;
        total += n;
    }
    if total == 0 {
        return Err(Error::EmptyEvaluation);
    }
    Ok(wrong as f64 / total as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Supervised,
    MrfPost,
    SemiSupervised,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Supervised, Mode::MrfPost, Mode::SemiSupervised];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Supervised => "supervised",
            Mode::MrfPost => "mrf_post",
            Mode::SemiSupervised => "semi_supervised",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::format("mode", format!("unknown mode {s:?}")))
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    /// Generated scenes; the generator's own seed is replaced by the
    /// experiment's master seed.
    Synthetic {
        train_images: usize,
        test_images: usize,
        synth: SynthConfig,
    },
    /// Directories of `<stem>.pgm|ppm` + `<stem>.labels.pgm` pairs.
    Directories { train_dir: PathBuf, test_dir: PathBuf },
}

impl Default for DatasetSource {
    fn default() -> Self {
        DatasetSource::Synthetic {
            train_images: 20,
            test_images: 20,
            synth: SynthConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub labels_per_image: Vec<usize>,
    pub trials: usize,
    pub modes: Vec<Mode>,
    /// Template for every training run; `alpha` and `seed` are overridden
    /// per arm and trial.
    pub train: TrainConfig,
    /// Candidate weights for the semi-supervised arm.
    pub alphas: Vec<f64>,
    /// Candidate Potts weights for the MRF arm.
    pub betas: Vec<f64>,
    pub mrf_max_iters: usize,
    pub dataset: DatasetSource,
    pub master_seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            labels_per_image: vec![10, 20, 30, 40, 50],
            trials: 5,
            modes: Mode::ALL.to_vec(),
            train: TrainConfig::default(),
            alphas: vec![0.01, 0.1, 1.0],
            betas: vec![0.5, 1.0, 2.0, 4.0],
            mrf_max_iters: 20,
            dataset: DatasetSource::default(),
            master_seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if self.labels_per_image.is_empty() || self.labels_per_image.contains(&0) {
            return bad("labels_per_image needs entries of at least 1".into());
        }
        if self.modes.is_empty() {
            return bad("no modes selected".into());
        }
        if self.modes.contains(&Mode::SemiSupervised) {
            if self.alphas.is_empty() {
                return bad("semi_supervised needs at least one alpha".into());
            }
            if let Some(a) = self.alphas.iter().find(|a| !(**a >= 0.0 && a.is_finite())) {
                return bad(format!("alpha {a} must be finite and non-negative"));
            }
        }
        if self.modes.contains(&Mode::MrfPost) {
            if self.betas.is_empty() {
                return bad("mrf_post needs at least one beta".into());
            }
            for &beta in &self.betas {
                MrfConfig {
                    beta,
                    max_iters: self.mrf_max_iters,
                }
                .validate()?;
            }
        }
        self.train.validate()?;
        if let DatasetSource::Synthetic {
            train_images,
            test_images,
            synth,
        } = &self.dataset
        {
            if *train_images == 0 || *test_images == 0 {
                return bad("synthetic dataset needs train and test images".into());
            }
            synth.validate()?;
            if synth.num_classes != self.train.num_classes {
                return bad(format!(
                    "dataset has {} classes, training config {}",
                    synth.num_classes, self.train.num_classes
                ));
            }
        }
        Ok(())
    }

    /// Training and test images for this configuration.
    pub fn load_dataset(&self) -> Result<(Vec<LabeledImage>, Vec<LabeledImage>)> {
        match &self.dataset {
            DatasetSource::Synthetic {
                train_images,
                test_images,
                synth,
            } => {
                let cfg = SynthConfig {
                    seed: self.master_seed,
                    ..synth.clone()
                };
                Ok((
                    synth_split(&cfg, *train_images, TRAIN_SPLIT)?,
                    synth_split(&cfg, *test_images, TEST_SPLIT)?,
                ))
            }
            DatasetSource::Directories { train_dir, test_dir } => {
                let k = Some(self.train.num_classes);
                let strip = |v: Vec<crate::data::DatasetEntry>| v.into_iter().map(|e| e.image).collect();
                Ok((
                    strip(load_dataset_dir(train_dir, k)?),
                    strip(load_dataset_dir(test_dir, k)?),
                ))
            }
        }
    }
}

/// Seeds of one trial; `sample` draws the sparse labels, `train` seeds every
/// training run of the trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialSeeds {
    pub sample: u64,
    pub train: u64,
}

pub fn trial_seeds(master_seed: u64, labels_per_image: usize, trial: usize) -> TrialSeeds {
    let base = derive_seed(master_seed, &[labels_per_image as u64, trial as u64]);
    TrialSeeds {
        sample: derive_seed(base, &[1]),
        train: derive_seed(base, &[2]),
    }
}

/// Trial errors of one (size, mode) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub labels_per_image: usize,
    pub mode: Mode,
    pub trial_errors: Vec<f64>,
}

impl CellResult {
    pub fn mean(&self) -> f64 {
        self.trial_errors.iter().sum::<f64>() / self.trial_errors.len() as f64
    }

    /// Sample standard deviation (n - 1); zero for a single trial.
    pub fn std(&self) -> f64 {
        let n = self.trial_errors.len();
        if n < 2 {
            return 0.0;
        }
        let m = self.mean();
        let ss: f64 = self.trial_errors.iter().map(|e| (e - m) * (e - m)).sum();
        (ss / (n - 1) as f64).sqrt()
    }
}

/// Hyperparameters chosen for one trial and the errors that chose them.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub labels_per_image: usize,
    pub trial: usize,
    pub seeds: TrialSeeds,
    pub errors: Vec<(Mode, f64)>,
    pub alpha: Option<f64>,
    pub alpha_train_errors: Vec<f64>,
    /// Test error of every alpha candidate; informational only, never used
    /// for selection.
    pub alpha_test_errors: Vec<f64>,
    pub beta: Option<f64>,
    pub beta_train_errors: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExperimentResult {
    pub cells: Vec<CellResult>,
    pub trials: Vec<TrialRecord>,
}

impl ExperimentResult {
    pub fn cell(&self, labels_per_image: usize, mode: Mode) -> Option<&CellResult> {
        self.cells
            .iter()
            .find(|c| c.labels_per_image == labels_per_image && c.mode == mode)
    }

    pub fn mean(&self, labels_per_image: usize, mode: Mode) -> Option<f64> {
        self.cell(labels_per_image, mode).map(CellResult::mean)
    }
}

fn predict_all(net: &Network, images: &[LabeledImage]) -> Result<Vec<ProbMap>> {
    images.iter().map(|i| predict_image(net, &i.image)).collect()
}

fn argmax_all(probs: &[ProbMap]) -> Result<Vec<LabelMap>> {
    probs.iter().map(argmax_labels).collect()
}

fn error_against(preds: &[LabelMap], images: &[LabeledImage]) -> Result<f64> {
    pooled_error(preds.iter().zip(images.iter().map(|i| &i.labels)))
}

fn smooth_all(probs: &[ProbMap], beta: f64, max_iters: usize) -> Result<Vec<LabelMap>> {
    let cfg = MrfConfig { beta, max_iters };
    probs.iter().map(|p| Ok(icm_smooth(p, &cfg)?.labels)).collect()
}

/// Index of the smallest value; the first one wins ties.
fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v < values[best] {
            best = i;
        }
    }
    best
}

/// Runs one trial of every requested arm.
pub fn run_trial(
    cfg: &ExperimentConfig,
    train_set: &[LabeledImage],
    test_set: &[LabeledImage],
    labels_per_image: usize,
    trial: usize,
) -> Result<TrialRecord> {
    let seeds = trial_seeds(cfg.master_seed, labels_per_image, trial);
    let sparse = sample_dataset(train_set, labels_per_image, seeds.sample)?;
    let train_cfg = |alpha: f64| TrainConfig {
        alpha,
        seed: seeds.train,
        ..cfg.train.clone()
    };
    let mut record = TrialRecord {
        labels_per_image,
        trial,
        seeds,
        errors: Vec::new(),
        alpha: None,
        alpha_train_errors: Vec::new(),
        alpha_test_errors: Vec::new(),
        beta: None,
        beta_train_errors: Vec::new(),
    };

    let wants = |m: Mode| cfg.modes.contains(&m);
    if wants(Mode::Supervised) || wants(Mode::MrfPost) {
        let (net, _) = train(train_set, &sparse, &train_cfg(0.0))?;
        let test_probs = predict_all(&net, test_set)?;
        if wants(Mode::Supervised) {
            let err = error_against(&argmax_all(&test_probs)?, test_set)?;
            record.errors.push((Mode::Supervised, err));
        }
        if wants(Mode::MrfPost) {
            let train_probs = predict_all(&net, train_set)?;
            for &beta in &cfg.betas {
                let smoothed = smooth_all(&train_probs, beta, cfg.mrf_max_iters)?;
                record.beta_train_errors.push(error_against(&smoothed, train_set)?);
            }
            let beta = cfg.betas[argmin(&record.beta_train_errors)];
            record.beta = Some(beta);
            let smoothed = smooth_all(&test_probs, beta, cfg.mrf_max_iters)?;
            record.errors.push((Mode::MrfPost, error_against(&smoothed, test_set)?));
        }
    }
    if wants(Mode::SemiSupervised) {
        for &alpha in &cfg.alphas {
            let (net, _) = train(train_set, &sparse, &train_cfg(alpha))?;
            let train_err = error_against(&argmax_all(&predict_all(&net, train_set)?)?, train_set)?;
            record.alpha_train_errors.push(train_err);
            record.alpha_test_errors.push(error_against(&argmax_all(&predict_all(&net, test_set)?)?, test_set)?);
        }
        let pick = argmin(&record.alpha_train_errors);
        record.alpha = Some(cfg.alphas[pick]);
        record.errors.push((Mode::SemiSupervised, record.alpha_test_errors[pick]));
    }
    Ok(record)
}

/// Full protocol on a configured dataset.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let (train_set, test_set) = cfg.load_dataset()?;
    run_experiment_on(cfg, &train_set, &test_set, |_| {})
}

/// Full protocol on given images; `on_trial` sees each trial as it finishes.
pub fn run_experiment_on(
    cfg: &ExperimentConfig,
    train_set: &[LabeledImage],
    test_set: &[LabeledImage],
    mut on_trial: impl FnMut(&TrialRecord),
) -> Result<ExperimentResult> {
    cfg.validate()?;
    if train_set.is_empty() || test_set.is_empty() {
        return Err(Error::InvalidConfig("empty train or test set".into()));
    }
    let mut result = ExperimentResult::default();
    for &size in &cfg.labels_per_image {
        let mut errors: Vec<Vec<f64>> = vec![Vec::new(); cfg.modes.len()];
        for trial in 0..cfg.trials {
            let record = run_trial(cfg, train_set, test_set, size, trial)?;
            for (slot, mode) in errors.iter_mut().zip(&cfg.modes) {
                let (_, e) = record
                    .errors
                    .iter()
                    .find(|(m, _)| m == mode)
                    .expect("every requested mode is scored");
                slot.push(*e);
            }
            on_trial(&record);
            result.trials.push(record);
        }
        for (mode, trial_errors) in cfg.modes.iter().zip(errors) {
            result.cells.push(CellResult {
                labels_per_image: size,
                mode: *mode,
                trial_errors,
            });
        }
    }
    Ok(result)
}

pub const TABLE_PREFIX: &str = "labels_per_image,mode,mean_error,std_error";

/// Results table: one row per cell, trial errors in trailing columns.
pub fn render_table(res: &ExperimentResult) -> String {
    let trials = res.cells.iter().map(|c| c.trial_errors.len()).max().unwrap_or(0);
    let mut out = String::from(TABLE_PREFIX);
    for t in 1..=trials {
        let _ = write!(out, ",trial_{t}");
    }
    out.push('\n');
    for c in &res.cells {
        let _ = write!(out, "{},{},{},{}", c.labels_per_image, c.mode, c.mean(), c.std());
        for e in &c.trial_errors {
            let _ = write!(out, ",{e}");
        }
        out.push('\n');
    }
    out
}

pub fn emit_table(res: &ExperimentResult, path: &Path) -> Result<()> {
    fs::write(path, render_table(res)).map_err(|e| Error::io(path, e))
}

/// A parsed table row, including the stored aggregates.
#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub cell: CellResult,
    pub mean: f64,
    pub std: f64,
}

pub fn parse_table(text: &str) -> Result<Vec<TableRow>> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::format("results table", "empty"))?;
    if !header.starts_with(TABLE_PREFIX) {
        return Err(Error::format("results table", format!("bad header {header:?}")));
    }
    let num = |s: &str| -> Result<f64> {
        s.parse()
            .map_err(|_| Error::format("results table", format!("bad number {s:?}")))
    };
    let mut rows = Vec::new();
    for line in lines.filter(|l| !l.is_empty()) {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 5 {
            return Err(Error::format("results table", format!("short row {line:?}")));
        }
        let labels_per_image = fields[0]
            .parse()
            .map_err(|_| Error::format("results table", format!("bad size {:?}", fields[0])))?;
        rows.push(TableRow {
            cell: CellResult {
                labels_per_image,
                mode: Mode::parse(fields[1])?,
                trial_errors: fields[4..].iter().map(|s| num(s)).collect::<Result<_>>()?,
            },
            mean: num(fields[2])?,
            std: num(fields[3])?,
        });
    }
    Ok(rows)
}

pub const SELECTION_HEADER: &str =
    "labels_per_image,trial,sample_seed,train_seed,alpha,beta,supervised,mrf_post,semi_supervised";

/// Per-trial seeds, chosen hyperparameters and test errors; blank where an
/// arm did not run.
pub fn render_trials(res: &ExperimentResult) -> String {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut out = format!("{SELECTION_HEADER}\n");
    for t in &res.trials {
        let err = |m: Mode| opt(t.errors.iter().find(|(x, _)| *x == m).map(|(_, e)| *e));
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            t.labels_per_image,
            t.trial,
            t.seeds.sample,
            t.seeds.train,
            opt(t.alpha),
            opt(t.beta),
            err(Mode::Supervised),
            err(Mode::MrfPost),
            err(Mode::SemiSupervised),
        );
    }
    out
}
