//! Potts-model smoothing of probability maps by iterated conditional modes.
//!
//! Energy of a labeling `x`:
//!
//! ```text
//! E(x) = sum_p -ln max(P_p(x_p), 1e-12) + beta * #{4-neighbor pairs with x_p != x_q}
//! ```
//!
//! Each sweep visits pixels in raster order and moves every pixel to the
//! label minimizing its local energy given the current neighbors, keeping
//! the current label on ties. Every accepted move lowers the energy, so the
//! trace is non-increasing and the loop stops at the first sweep that
//! changes nothing.

use serde::{Deserialize, Serialize};

use crate::data::LabelMap;
use crate::error::{Error, Result};
use crate::spatial::ProbMap;

/// Floor applied to probabilities before taking logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MrfConfig {
    /// Pairwise Potts weight.
    pub beta: f64,
    /// Maximum number of sweeps.
    pub max_iters: usize,
}

impl Default for MrfConfig {
    fn default() -> Self {
        Self {
            beta: 1.0,
            max_iters: 20,
        }
    }
}

impl MrfConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "beta {} must be finite and non-negative",
                self.beta
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("max_iters must be at least 1".into()));
        }
        Ok(())
    }
}

/// Result of [`icm_smooth`].
#[derive(Debug, Clone, PartialEq)]
pub struct IcmOutcome {
    pub labels: LabelMap,
    /// Energy before the first sweep, then after each sweep.
    pub energies: Vec<f64>,
    pub sweeps: usize,
    pub converged: bool,
}

fn check_k(probs: &ProbMap) -> Result<()> {
    if probs.num_classes() > 255 {
        return Err(Error::InvalidProbMap(format!(
            "{} classes exceed the 8-bit label range",
            probs.num_classes()
        )));
    }
    Ok(())
}

/// Most probable class per pixel; ties go to the smaller index.
pub fn argmax_labels(probs: &ProbMap) -> Result<LabelMap> {
    check_k(probs)?;
    let (h, w) = (probs.height(), probs.width());
    let mut data = vec![0u8; h * w];
    for (i, d) in data.iter_mut().enumerate() {
        let mut best = 0;
        let mut best_p = probs.channel(0).data()[i];
        for k in 1..probs.num_classes() {
            let p = probs.channel(k).data()[i];
            if p > best_p {
                best = k;
                best_p = p;
            }
        }
        *d = best as u8;
    }
    LabelMap::new(h, w, data)
}

fn unary(probs: &ProbMap, idx: usize, k: usize) -> f64 {
    -probs.channel(k).data()[idx].max(PROB_FLOOR).ln()
}

/// Total Potts energy of `labels` under `probs`.
pub fn energy(probs: &ProbMap, labels: &LabelMap, beta: f64) -> Result<f64> {
    let (h, w) = (probs.height(), probs.width());
    if labels.height() != h || labels.width() != w {
        return Err(Error::SizeMismatch {
            expected: format!("{h}x{w} labels"),
            actual: format!("{}x{}", labels.height(), labels.width()),
        });
    }
    labels.check_classes(probs.num_classes())?;
    if labels.num_labeled() != h * w {
        return Err(Error::InvalidConfig("energy needs a fully labeled map".into()));
    }
    let l = labels.data();
    let mut e = 0.0;
    let mut disagreements = 0usize;
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            e += unary(probs, i, usize::from(l[i]));
            if c + 1 < w && l[i] != l[i + 1] {
                disagreements += 1;
            }
            if r + 1 < h && l[i] != l[i + w] {
                disagreements += 1;
            }
        }
    }
    Ok(e + beta * disagreements as f64)
}

/// ICM from the argmax labeling.
pub fn icm_smooth(probs: &ProbMap, cfg: &MrfConfig) -> Result<IcmOutcome> {
    icm_from(probs, argmax_labels(probs)?, cfg)
}

/// ICM from an arbitrary fully labeled starting map.
pub fn icm_from(probs: &ProbMap, start: LabelMap, cfg: &MrfConfig) -> Result<IcmOutcome> {
    cfg.validate()?;
    check_k(probs)?;
    let (h, w, k) = (probs.height(), probs.width(), probs.num_classes());
    let mut energies = vec![energy(probs, &start, cfg.beta)?];
    let mut labels = start.data().to_vec();
    let mut sweeps = 0;
    let mut converged = false;
    let mut local = vec![0.0; k];
    while sweeps < cfg.max_iters {
        let mut changed = false;
        for r in 0..h {
            for c in 0..w {
                let i = r * w + c;
                let mut neighbors = [None; 4];
                if r > 0 {
                    neighbors[0] = Some(labels[i - w]);
                }
                if r + 1 < h {
                    neighbors[1] = Some(labels[i + w]);
                }
                if c > 0 {
                    neighbors[2] = Some(labels[i - 1]);
                }
                if c + 1 < w {
                    neighbors[3] = Some(labels[i + 1]);
                }
                for (cls, e) in local.iter_mut().enumerate() {
                    let disagree = neighbors
                        .iter()
                        .flatten()
                        .filter(|&&n| usize::from(n) != cls)
                        .count();
                    *e = unary(probs, i, cls) + cfg.beta * disagree as f64;
                }
                let current = usize::from(labels[i]);
                let mut best = current;
                for (cls, &e) in local.iter().enumerate() {
                    if e < local[best] {
                        best = cls;
                    }
                }
                if best != current {
                    labels[i] = best as u8;
                    changed = true;
                }
            }
        }
        sweeps += 1;
        let map = LabelMap::new(h, w, labels.clone())?;
        energies.push(energy(probs, &map, cfg.beta)?);
        if !changed {
            converged = true;
            break;
        }
    }
    Ok(IcmOutcome {
        labels: LabelMap::new(h, w, labels)?,
        energies,
        sweeps,
        converged,
    })
}
