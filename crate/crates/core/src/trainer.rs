//! Semi-supervised training of the patch classifier.
//!
//! Each iteration averages the supervised loss gradient over `sup_batch`
//! labeled pixels and the spatial loss gradient over `unsup_batch` interior
//! pixels drawn from all training images, then takes one SGD step on
//! `mean_sup + alpha * mean_unsup`.
//!
//! The spatial gradient at a center pixel runs the classifier on the nine
//! patches centered on its 3x3 neighborhood (row-major), forms the loss
//! coefficients per class channel, and backpropagates coefficient `i`
//! through forward pass `i`.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{extract_patch_flat, LabeledImage, SparseLabelSet};
use crate::error::{Error, Result};
use crate::grid::{Grid2D, ImageStack};
use crate::model::{default_architecture, ForwardCache, GradientBuffer, LayerSpec, Network};
use crate::seed::derive_seed;
use crate::spatial::{ProbMap, SpatialLoss, TotalVariation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupervisedLoss {
    /// `sum_k (p_k - onehot_k)^2`
    Mse,
    /// `-ln p_label`
    CrossEntropy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Weight of the unsupervised loss.
    pub alpha: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub sup_batch: usize,
    pub unsup_batch: usize,
    pub iterations: usize,
    pub supervised_loss: SupervisedLoss,
    pub seed: u64,
    pub patch_size: usize,
    pub num_classes: usize,
    /// Layer list; `None` selects [`default_architecture`].
    pub architecture: Option<Vec<LayerSpec>>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            lr: 0.05,
            weight_decay: 0.0,
            sup_batch: 16,
            unsup_batch: 8,
            iterations: 1000,
            supervised_loss: SupervisedLoss::CrossEntropy,
            seed: 0,
            patch_size: 15,
            num_classes: 2,
            architecture: None,
        }
    }
}

impl TrainConfig {
    pub fn architecture(&self) -> Vec<LayerSpec> {
        self.architecture
            .clone()
            .unwrap_or_else(|| default_architecture(self.num_classes))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha {} must be finite and non-negative", self.alpha));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr {} must be positive", self.lr));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay {} must be non-negative", self.weight_decay));
        }
        if self.sup_batch == 0 {
            return bad("sup_batch must be at least 1".into());
        }
        if self.patch_size % 2 == 0 {
            return bad(format!("patch_size {} must be odd", self.patch_size));
        }
        if self.num_classes < 2 || self.num_classes > 255 {
            return bad(format!("num_classes {} must be in 2..=255", self.num_classes));
        }
        Ok(())
    }

    /// Whether any unsupervised work happens.
    pub fn uses_unsupervised(&self) -> bool {
        self.alpha > 0.0 && self.unsup_batch > 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub sup_loss: f64,
    pub unsup_loss: f64,
    pub total_loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub records: Vec<IterationRecord>,
}

pub const REPORT_HEADER: &str = "iteration,sup_loss,unsup_loss,total_loss";

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(REPORT_HEADER);
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.iteration, r.sup_loss, r.unsup_loss, r.total_loss
            ));
        }
        out
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    /// Mean supervised loss over records `[start, end)`.
    pub fn mean_sup_loss(&self, start: usize, end: usize) -> f64 {
        let window = &self.records[start..end];
        window.iter().map(|r| r.sup_loss).sum::<f64>() / window.len() as f64
    }
}

fn check_label(net: &Network, label: usize) -> Result<()> {
    if label >= net.num_classes() {
        return Err(Error::InvalidLabel {
            label,
            num_classes: net.num_classes(),
        });
    }
    Ok(())
}

fn supervised_from_cache(
    net: &Network,
    cache: &ForwardCache,
    label: usize,
    loss: SupervisedLoss,
    grads: &mut GradientBuffer,
) -> Result<f64> {
    let p = cache.probs();
    match loss {
        SupervisedLoss::Mse => {
            let mut value = 0.0;
            let mut g = vec![0.0; p.len()];
            for (k, (&pk, gk)) in p.iter().zip(&mut g).enumerate() {
                let d = pk - if k == label { 1.0 } else { 0.0 };
                value += d * d;
                *gk = 2.0 * d;
            }
            net.backward_into(cache, &g, grads)?;
            Ok(value)
        }
        SupervisedLoss::CrossEntropy => {
            // Fused softmax + cross-entropy: d/dz = p - onehot.
            let value = -p[label].max(f64::MIN_POSITIVE).ln();
            let mut g = p.to_vec();
            g[label] -= 1.0;
            net.backward_logits_into(cache, g, grads)?;
            Ok(value)
        }
    }
}

/// Loss on one labeled patch and its exact parameter gradient.
pub fn supervised_grad(
    net: &Network,
    patch: &ImageStack,
    label: usize,
    loss: SupervisedLoss,
) -> Result<(f64, GradientBuffer)> {
    check_label(net, label)?;
    let (_, cache) = net.forward(patch)?;
    let mut grads = net.zero_grad();
    let value = supervised_from_cache(net, &cache, label, loss, &mut grads)?;
    Ok((value, grads))
}

/// Total variation at `(row, col)` summed over class channels, and its
/// subgradient with respect to the parameters.
pub fn unsupervised_grad(
    net: &Network,
    image: &ImageStack,
    row: usize,
    col: usize,
) -> Result<(f64, GradientBuffer)> {
    let mut grads = net.zero_grad();
    let value = unsupervised_grad_into(net, image, row, col, &TotalVariation, &mut grads)?;
    Ok((value, grads))
}

/// As [`unsupervised_grad`] for any spatial loss, accumulating into `grads`.
pub fn unsupervised_grad_into(
    net: &Network,
    image: &ImageStack,
    row: usize,
    col: usize,
    loss: &dyn SpatialLoss,
    grads: &mut GradientBuffer,
) -> Result<f64> {
    let (h, w) = (image.height(), image.width());
    if row == 0 || col == 0 || row + 1 >= h || col + 1 >= w {
        return Err(Error::InvalidConfig(format!(
            "center ({row}, {col}) needs a full 3x3 window inside {h}x{w}"
        )));
    }
    check_input(net, image)?;
    let k = net.num_classes();
    let mut buf = Vec::new();
    let mut caches = Vec::with_capacity(9);
    let mut nb = vec![[0.0; 9]; k];
    for i in 0..9 {
        extract_patch_flat(image, row + i / 3 - 1, col + i % 3 - 1, net.patch_size(), &mut buf)?;
        let cache = net.forward_flat(std::mem::take(&mut buf));
        for (ch, vals) in nb.iter_mut().enumerate() {
            vals[i] = cache.probs()[ch];
        }
        caches.push(cache);
    }
    let mut value = 0.0;
    let mut grad_out = vec![vec![0.0; k]; 9];
    for (ch, vals) in nb.iter().enumerate() {
        value += loss.theta(vals);
        for (i, c) in loss.theta_coeffs(vals).into_iter().enumerate() {
            grad_out[i][ch] = c;
        }
    }
    for (cache, g) in caches.iter().zip(&grad_out) {
        if g.iter().any(|&v| v != 0.0) {
            net.backward_into(cache, g, grads)?;
        }
    }
    Ok(value)
}

fn check_input(net: &Network, image: &ImageStack) -> Result<()> {
    if image.num_channels() != net.in_channels() {
        return Err(Error::SizeMismatch {
            expected: format!("{} input channel(s)", net.in_channels()),
            actual: format!("{}", image.num_channels()),
        });
    }
    Ok(())
}

/// Trains a fresh network with the total-variation spatial loss.
pub fn train(
    images: &[LabeledImage],
    sparse: &SparseLabelSet,
    cfg: &TrainConfig,
) -> Result<(Network, TrainReport)> {
    train_with_loss(images, sparse, cfg, &TotalVariation)
}

/// Trains a fresh network with an arbitrary spatial loss.
///
/// Supervised and unsupervised draws use independent random streams, so
/// `alpha = 0` reproduces purely supervised training bit for bit.
pub fn train_with_loss(
    images: &[LabeledImage],
    sparse: &SparseLabelSet,
    cfg: &TrainConfig,
    loss: &dyn SpatialLoss,
) -> Result<(Network, TrainReport)> {
    cfg.validate()?;
    let first = images
        .first()
        .ok_or_else(|| Error::InvalidConfig("no training images".into()))?;
    if sparse.is_empty() {
        return Err(Error::InvalidConfig("sparse label set is empty".into()));
    }
    sparse.validate(images, cfg.num_classes)?;
    let in_channels = first.image.num_channels();
    if let Some(bad) = images.iter().find(|i| i.image.num_channels() != in_channels) {
        return Err(Error::SizeMismatch {
            expected: format!("{in_channels} channel(s) in every image"),
            actual: format!("{}", bad.image.num_channels()),
        });
    }

    let mut net = Network::init(
        &cfg.architecture(),
        in_channels,
        cfg.patch_size,
        cfg.num_classes,
        derive_seed(cfg.seed, &[0]),
    )?;
    let mut sup_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[1]));
    let mut unsup_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[2]));

    // Interior pixels of all images, addressed by a single running index.
    let interior: Vec<usize> = images
        .iter()
        .map(|i| i.height().saturating_sub(2) * i.width().saturating_sub(2))
        .collect();
    let total_interior: usize = interior.iter().sum();
    let use_unsup = cfg.uses_unsupervised();
    if use_unsup && total_interior == 0 {
        return Err(Error::InvalidConfig(
            "unsupervised loss needs images of at least 3x3".into(),
        ));
    }

    let mut report = TrainReport {
        records: Vec::with_capacity(cfg.iterations),
    };
    let mut sup_grads = net.zero_grad();
    let mut unsup_grads = net.zero_grad();
    let mut buf = Vec::new();
    for iteration in 0..cfg.iterations {
        sup_grads.fill_zero();
        let mut sup_loss = 0.0;
        for _ in 0..cfg.sup_batch {
            let e = sparse.entries()[sup_rng.random_range(0..sparse.len())];
            let img = &images[e.image_id].image;
            extract_patch_flat(img, e.row, e.col, cfg.patch_size, &mut buf)?;
            let cache = net.forward_flat(std::mem::take(&mut buf));
            sup_loss += supervised_from_cache(
                &net,
                &cache,
                usize::from(e.class),
                cfg.supervised_loss,
                &mut sup_grads,
            )?;
        }
        sup_loss /= cfg.sup_batch as f64;
        sup_grads.scale(1.0 / cfg.sup_batch as f64);

        let mut unsup_loss = 0.0;
        if use_unsup {
            unsup_grads.fill_zero();
            for _ in 0..cfg.unsup_batch {
                let mut idx = unsup_rng.random_range(0..total_interior);
                let mut img_id = 0;
                while idx >= interior[img_id] {
                    idx -= interior[img_id];
                    img_id += 1;
                }
                let img = &images[img_id].image;
                let iw = img.width() - 2;
                unsup_loss += unsupervised_grad_into(
                    &net,
                    img,
                    1 + idx / iw,
                    1 + idx % iw,
                    loss,
                    &mut unsup_grads,
                )?;
            }
            unsup_loss /= cfg.unsup_batch as f64;
            sup_grads.add_scaled(&unsup_grads, cfg.alpha / cfg.unsup_batch as f64);
        }

        let total_loss = sup_loss + cfg.alpha * unsup_loss;
        if !total_loss.is_finite() || !sup_grads.is_finite() {
            return Err(Error::Numerical(format!(
                "iteration {iteration}: loss {total_loss} (supervised {sup_loss}, unsupervised {unsup_loss})"
            )));
        }
        report.records.push(IterationRecord {
            iteration,
            sup_loss,
            unsup_loss,
            total_loss,
        });
        net.sgd_step(&sup_grads, cfg.lr, cfg.weight_decay)?;
    }
    Ok((net, report))
}

/// Sliding-window class probabilities for every pixel of `image`.
pub fn predict_image(net: &Network, image: &ImageStack) -> Result<ProbMap> {
    check_input(net, image)?;
    let (h, w) = (image.height(), image.width());
    let k = net.num_classes();
    let mut channels = vec![vec![0.0; h * w]; k];
    let mut buf = Vec::new();
    for r in 0..h {
        for c in 0..w {
            extract_patch_flat(image, r, c, net.patch_size(), &mut buf)?;
            let p = net.predict_flat(&buf);
            for (ch, v) in channels.iter_mut().zip(p) {
                ch[r * w + c] = v;
            }
        }
    }
    let grids = channels
        .into_iter()
        .map(|d| Grid2D::new(h, w, d))
        .collect::<Result<Vec<_>>>()?;
    ProbMap::new(grids)
}
