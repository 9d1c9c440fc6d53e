//! Patch classifier with explicit forward and backward passes.
//!
//! A [`Network`] maps a `patch_size x patch_size` input window to a
//! probability vector over `K` classes. Parameters live in one flat vector;
//! each trainable layer owns a contiguous slice (weights, then biases).
//!
//! [`Network::backward`] takes the gradient of a scalar objective with
//! respect to the *softmax output* and returns its gradient with respect to
//! every parameter. Spatial losses produce probability-space gradients, so
//! this is the natural contract; the softmax Jacobian is applied internally.

mod checkpoint;
mod layers;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};

use std::sync::atomic::{AtomicU64, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::ImageStack;

/// One layer of the architecture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    /// Valid 3x3 convolution (no padding, stride 1) with bias.
    Conv3x3 { maps: usize },
    Relu,
    /// Non-overlapping 2x2 max pooling; odd trailing rows/columns are dropped.
    Maxpool2x2,
    /// Fully connected layer over the flattened input.
    Dense { units: usize },
    /// Normalizes the preceding `K` activations into probabilities.
    Softmax,
}

impl LayerSpec {
    fn is_trainable(&self) -> bool {
        matches!(self, LayerSpec::Conv3x3 { .. } | LayerSpec::Dense { .. })
    }
}

/// The small default architecture used for desk-scale experiments.
pub fn default_architecture(num_classes: usize) -> Vec<LayerSpec> {
    use LayerSpec::*;
    vec![
        Conv3x3 { maps: 8 },
        Relu,
        Maxpool2x2,
        Conv3x3 { maps: 8 },
        Relu,
        Dense { units: 32 },
        Relu,
        Dense { units: num_classes },
        Softmax,
    ]
}

/// Four 64-map convolutions each followed by ReLU and pooling, a 512-unit
/// hidden layer and the softmax classifier. Needs a patch of at least 46.
pub fn deep_architecture(num_classes: usize) -> Vec<LayerSpec> {
    use LayerSpec::*;
    let mut specs = Vec::new();
    for _ in 0..4 {
        specs.extend([Conv3x3 { maps: 64 }, Relu, Maxpool2x2]);
    }
    specs.extend([Dense { units: 512 }, Relu, Dense { units: num_classes }, Softmax]);
    specs
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Shape {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub fn len(&self) -> usize {
        self.c * self.h * self.w
    }
}

/// A resolved layer: its spec, input/output shapes and parameter slice.
#[derive(Debug, Clone)]
pub(crate) struct Layer {
    pub spec: LayerSpec,
    pub input: Shape,
    pub output: Shape,
    pub offset: usize,
    pub weights: usize,
    pub biases: usize,
}

fn plan_layers(
    specs: &[LayerSpec],
    in_channels: usize,
    patch_size: usize,
    num_classes: usize,
) -> Result<(Vec<Layer>, usize)> {
    if patch_size == 0 || patch_size % 2 == 0 {
        return Err(Error::InvalidSpec(format!(
            "patch size must be odd and positive, got {patch_size}"
        )));
    }
    if in_channels == 0 {
        return Err(Error::InvalidSpec("input needs at least one channel".into()));
    }
    if num_classes < 2 {
        return Err(Error::InvalidSpec(format!(
            "need at least 2 classes, got {num_classes}"
        )));
    }
    match specs.last() {
        Some(LayerSpec::Softmax) => {}
        _ => return Err(Error::InvalidSpec("final layer must be softmax".into())),
    }
    if !specs[..specs.len() - 1].iter().any(LayerSpec::is_trainable) {
        return Err(Error::InvalidSpec(
            "at least one trainable layer must precede softmax".into(),
        ));
    }

    let mut shape = Shape {
        c: in_channels,
        h: patch_size,
        w: patch_size,
    };
    let mut offset = 0;
    let mut layers = Vec::with_capacity(specs.len());
    for (idx, &spec) in specs.iter().enumerate() {
        let input = shape;
        let (output, weights, biases) = match spec {
            LayerSpec::Conv3x3 { maps } => {
                if maps == 0 {
                    return Err(Error::InvalidSpec(format!("layer {idx}: zero maps")));
                }
                if input.h < 3 || input.w < 3 {
                    return Err(Error::InvalidSpec(format!(
                        "layer {idx}: conv3x3 on a {}x{} input",
                        input.h, input.w
                    )));
                }
                let out = Shape {
                    c: maps,
                    h: input.h - 2,
                    w: input.w - 2,
                };
                (out, maps * input.c * 9, maps)
            }
            LayerSpec::Relu => (input, 0, 0),
            LayerSpec::Maxpool2x2 => {
                if input.h < 2 || input.w < 2 {
                    return Err(Error::InvalidSpec(format!(
                        "layer {idx}: maxpool on a {}x{} input",
                        input.h, input.w
                    )));
                }
                let out = Shape {
                    c: input.c,
                    h: input.h / 2,
                    w: input.w / 2,
                };
                (out, 0, 0)
            }
            LayerSpec::Dense { units } => {
                if units == 0 {
                    return Err(Error::InvalidSpec(format!("layer {idx}: zero units")));
                }
                let out = Shape { c: units, h: 1, w: 1 };
                (out, units * input.len(), units)
            }
            LayerSpec::Softmax => {
                if idx != specs.len() - 1 {
                    return Err(Error::InvalidSpec(format!(
                        "layer {idx}: softmax must be the final layer"
                    )));
                }
                if input.len() != num_classes {
                    return Err(Error::InvalidSpec(format!(
                        "softmax over {} activations but {num_classes} classes",
                        input.len()
                    )));
                }
                (Shape { c: num_classes, h: 1, w: 1 }, 0, 0)
            }
        };
        layers.push(Layer {
            spec,
            input,
            output,
            offset,
            weights,
            biases,
        });
        offset += weights + biases;
        shape = output;
    }
    Ok((layers, offset))
}

static NEXT_STAMP: AtomicU64 = AtomicU64::new(1);

fn fresh_stamp() -> u64 {
    NEXT_STAMP.fetch_add(1, Ordering::Relaxed)
}

/// Layered patch classifier and its parameters.
#[derive(Debug, Clone)]
pub struct Network {
    specs: Vec<LayerSpec>,
    patch_size: usize,
    in_channels: usize,
    num_classes: usize,
    seed: u64,
    params: Vec<f64>,
    layers: Vec<Layer>,
    // Identifies the parameter state; refreshed on every mutation so stale
    // forward caches are rejected by `backward`.
    stamp: u64,
}

/// Activations recorded by [`Network::forward`] for one input.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    stamp: u64,
    inputs: Vec<Vec<f64>>,
    pool_argmax: Vec<Vec<u32>>,
    probs: Vec<f64>,
}

impl ForwardCache {
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }
}

/// Flat gradient aligned with [`Network::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBuffer {
    data: Vec<f64>,
}

impl GradientBuffer {
    pub fn zeros(len: usize) -> Self {
        Self {
            data: vec![0.0; len],
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Self { data }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &GradientBuffer, scale: f64) {
        assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    pub fn fill_zero(&mut self) {
        self.data.iter_mut().for_each(|v| *v = 0.0);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

impl Network {
    /// He-initialized network: weights drawn from `N(0, 2 / fan_in)`, biases zero.
    pub fn init(
        specs: &[LayerSpec],
        in_channels: usize,
        patch_size: usize,
        num_classes: usize,
        seed: u64,
    ) -> Result<Self> {
        let (layers, n_params) = plan_layers(specs, in_channels, patch_size, num_classes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; n_params];
        for layer in &layers {
            if layer.weights == 0 {
                continue;
            }
            let fan_in = match layer.spec {
                LayerSpec::Conv3x3 { .. } => layer.input.c * 9,
                _ => layer.input.len(),
            };
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt())
                .expect("fan-in is positive");
            for w in &mut params[layer.offset..layer.offset + layer.weights] {
                *w = normal.sample(&mut rng);
            }
        }
        Ok(Self {
            specs: specs.to_vec(),
            patch_size,
            in_channels,
            num_classes,
            seed,
            params,
            layers,
            stamp: fresh_stamp(),
        })
    }

    /// Rebuilds a network from stored parameters.
    pub fn from_parts(
        specs: &[LayerSpec],
        in_channels: usize,
        patch_size: usize,
        num_classes: usize,
        seed: u64,
        params: Vec<f64>,
    ) -> Result<Self> {
        let (layers, n_params) = plan_layers(specs, in_channels, patch_size, num_classes)?;
        if params.len() != n_params {
            return Err(Error::SizeMismatch {
                expected: format!("{n_params} parameters"),
                actual: format!("{} parameters", params.len()),
            });
        }
        if let Some(i) = params.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                index: i,
                value: params[i],
            });
        }
        Ok(Self {
            specs: specs.to_vec(),
            patch_size,
            in_channels,
            num_classes,
            seed,
            params,
            layers,
            stamp: fresh_stamp(),
        })
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Replaces all parameters. Invalidates outstanding forward caches.
    pub fn set_params(&mut self, params: Vec<f64>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::SizeMismatch {
                expected: format!("{} parameters", self.params.len()),
                actual: format!("{} parameters", params.len()),
            });
        }
        if let Some(i) = params.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                index: i,
                value: params[i],
            });
        }
        self.params = params;
        self.stamp = fresh_stamp();
        Ok(())
    }

    /// Ranges of the weight slices of each conv/dense layer, in layer order.
    pub fn weight_ranges(&self) -> Vec<(LayerSpec, std::ops::Range<usize>)> {
        self.layers
            .iter()
            .filter(|l| l.weights > 0)
            .map(|l| (l.spec, l.offset..l.offset + l.weights))
            .collect()
    }

    pub fn zero_grad(&self) -> GradientBuffer {
        GradientBuffer::zeros(self.params.len())
    }

    fn check_patch(&self, patch: &ImageStack) -> Result<()> {
        if patch.num_channels() != self.in_channels
            || patch.height() != self.patch_size
            || patch.width() != self.patch_size
        {
            return Err(Error::SizeMismatch {
                expected: format!(
                    "{} channel(s) of {}x{}",
                    self.in_channels, self.patch_size, self.patch_size
                ),
                actual: format!(
                    "{} channel(s) of {}x{}",
                    patch.num_channels(),
                    patch.height(),
                    patch.width()
                ),
            });
        }
        Ok(())
    }

    /// Class probabilities for one patch, plus the activations needed by
    /// [`Network::backward`].
    pub fn forward(&self, patch: &ImageStack) -> Result<(Vec<f64>, ForwardCache)> {
        self.check_patch(patch)?;
        let cache = self.forward_flat(patch.to_flat());
        Ok((cache.probs.clone(), cache))
    }

    /// Class probabilities only.
    pub fn predict(&self, patch: &ImageStack) -> Result<Vec<f64>> {
        self.check_patch(patch)?;
        Ok(self.forward_flat(patch.to_flat()).probs)
    }

    /// Probabilities for a channel-major input, without recording activations.
    pub(crate) fn predict_flat(&self, input: &[f64]) -> Vec<f64> {
        let mut act = input.to_vec();
        for layer in &self.layers {
            let p = &self.params[layer.offset..layer.offset + layer.weights + layer.biases];
            act = match layer.spec {
                LayerSpec::Conv3x3 { .. } => layers::conv_forward(layer, p, &act),
                LayerSpec::Relu => {
                    act.iter_mut().for_each(|v| *v = v.max(0.0));
                    act
                }
                LayerSpec::Maxpool2x2 => layers::pool_forward(layer, &act).0,
                LayerSpec::Dense { .. } => layers::dense_forward(layer, p, &act),
                LayerSpec::Softmax => layers::softmax(&act),
            };
        }
        act
    }

    pub(crate) fn forward_flat(&self, input: Vec<f64>) -> ForwardCache {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pool_argmax = Vec::new();
        let mut act = input;
        for layer in &self.layers {
            let p = &self.params[layer.offset..layer.offset + layer.weights + layer.biases];
            let next = match layer.spec {
                LayerSpec::Conv3x3 { .. } => layers::conv_forward(layer, p, &act),
                LayerSpec::Relu => act.iter().map(|&v| v.max(0.0)).collect(),
                LayerSpec::Maxpool2x2 => {
                    let (out, idx) = layers::pool_forward(layer, &act);
                    pool_argmax.push(idx);
                    out
                }
                LayerSpec::Dense { .. } => layers::dense_forward(layer, p, &act),
                LayerSpec::Softmax => layers::softmax(&act),
            };
            inputs.push(act);
            act = next;
        }
        ForwardCache {
            stamp: self.stamp,
            inputs,
            pool_argmax,
            probs: act,
        }
    }

    /// Gradient of `<grad_out, f(patch; w)>` with respect to `w`.
    pub fn backward(&self, cache: &ForwardCache, grad_out: &[f64]) -> Result<GradientBuffer> {
        let mut grads = self.zero_grad();
        self.backward_into(cache, grad_out, &mut grads)?;
        Ok(grads)
    }

    /// As [`Network::backward`], accumulating into `grads`.
    pub fn backward_into(
        &self,
        cache: &ForwardCache,
        grad_out: &[f64],
        grads: &mut GradientBuffer,
    ) -> Result<()> {
        self.check_cache(cache, grads)?;
        if grad_out.len() != self.num_classes {
            return Err(Error::SizeMismatch {
                expected: format!("{} output gradients", self.num_classes),
                actual: format!("{}", grad_out.len()),
            });
        }
        let logits_grad = layers::softmax_backward(&cache.probs, grad_out);
        self.backward_from_logits(cache, logits_grad, grads);
        Ok(())
    }

    /// Backpropagates a gradient given with respect to the pre-softmax logits.
    pub(crate) fn backward_logits_into(
        &self,
        cache: &ForwardCache,
        logits_grad: Vec<f64>,
        grads: &mut GradientBuffer,
    ) -> Result<()> {
        self.check_cache(cache, grads)?;
        self.backward_from_logits(cache, logits_grad, grads);
        Ok(())
    }

    fn check_cache(&self, cache: &ForwardCache, grads: &GradientBuffer) -> Result<()> {
        if cache.stamp != self.stamp || cache.inputs.len() != self.layers.len() {
            return Err(Error::StaleCache);
        }
        if grads.len() != self.params.len() {
            return Err(Error::SizeMismatch {
                expected: format!("{} gradient entries", self.params.len()),
                actual: format!("{}", grads.len()),
            });
        }
        Ok(())
    }

    fn backward_from_logits(&self, cache: &ForwardCache, mut g: Vec<f64>, grads: &mut GradientBuffer) {
        let mut pool_idx = cache.pool_argmax.len();
        // The final layer is softmax, already folded into `g`.
        let last = self.layers.len() - 1;
        // Input gradients are not needed below the first trainable layer.
        let first_trainable = self
            .layers
            .iter()
            .position(|l| l.weights > 0)
            .expect("validated at construction");
        for (i, layer) in self.layers[..last].iter().enumerate().rev() {
            let input = &cache.inputs[i];
            let range = layer.offset..layer.offset + layer.weights + layer.biases;
            let need_input_grad = i > first_trainable;
            g = match layer.spec {
                LayerSpec::Conv3x3 { .. } => layers::conv_backward(
                    layer,
                    &self.params[range.clone()],
                    input,
                    &g,
                    &mut grads.data[range],
                    need_input_grad,
                ),
                LayerSpec::Dense { .. } => layers::dense_backward(
                    layer,
                    &self.params[range.clone()],
                    input,
                    &g,
                    &mut grads.data[range],
                    need_input_grad,
                ),
                LayerSpec::Relu => g
                    .iter()
                    .zip(input)
                    .map(|(&gv, &x)| if x > 0.0 { gv } else { 0.0 })
                    .collect(),
                LayerSpec::Maxpool2x2 => {
                    pool_idx -= 1;
                    layers::pool_backward(layer, &cache.pool_argmax[pool_idx], &g)
                }
                LayerSpec::Softmax => unreachable!("softmax is only the final layer"),
            };
            if i == first_trainable {
                break;
            }
        }
    }

    /// Plain SGD with L2 weight decay: `w <- w - lr * (grads + weight_decay * w)`.
    pub fn sgd_step(&mut self, grads: &GradientBuffer, lr: f64, weight_decay: f64) -> Result<()> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::InvalidConfig(format!("learning rate {lr} must be positive")));
        }
        if !(weight_decay >= 0.0 && weight_decay.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "weight decay {weight_decay} must be non-negative"
            )));
        }
        if grads.len() != self.params.len() {
            return Err(Error::SizeMismatch {
                expected: format!("{} gradient entries", self.params.len()),
                actual: format!("{}", grads.len()),
            });
        }
        if let Some(i) = grads.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                index: i,
                value: grads.data[i],
            });
        }
        let updated: Vec<f64> = self
            .params
            .iter()
            .zip(&grads.data)
            .map(|(&w, &g)| w - lr * (g + weight_decay * w))
            .collect();
        if let Some(i) = updated.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                index: i,
                value: updated[i],
            });
        }
        self.params = updated;
        self.stamp = fresh_stamp();
        Ok(())
    }
}
