//! Softmax cross-entropy SGD, FGSM, and the datasets they run on.

mod idx;
mod synth;

pub use idx::{load_idx, read_idx, save_idx, write_idx};
pub use synth::{synth_shapes, ShapeClass, SYNTH_SIZE};

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::network::Network;
use crate::tensor::{mix_seed, seeded_rng, RngSpec, Tensor};
use crate::visualize::{backpropagate, BackpropOptions, ParamGrad, VisMethod};

/// Labelled images with values in `[0, 1]`, stored contiguously as `[n, H, W, C]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    image_shape: Vec<usize>,
    pixels: Vec<f64>,
    labels: Vec<usize>,
    class_count: usize,
}

impl Dataset {
    /// `image_shape` is `[H, W, C]`; `pixels` holds `labels.len()` images back to back.
    pub fn new(image_shape: Vec<usize>, pixels: Vec<f64>, labels: Vec<usize>, class_count: usize) -> Result<Dataset> {
        if image_shape.len() != 3 || image_shape.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "dataset images must be [H, W, C] with positive extents, got {image_shape:?}"
            )));
        }
        let per: usize = image_shape.iter().product();
        if pixels.len() != per * labels.len() {
            return Err(Error::InvalidArgument(format!(
                "{} pixels do not make {} images of {image_shape:?}",
                pixels.len(),
                labels.len()
            )));
        }
        if class_count == 0 {
            return Err(Error::InvalidArgument("class_count must be positive".into()));
        }
        if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= class_count) {
            return Err(Error::InvalidArgument(format!(
                "label {l} of image {i} is outside [0, {class_count})"
            )));
        }
        Ok(Dataset {
            image_shape,
            pixels,
            labels,
            class_count,
        })
    }

    /// From an `[n, H, W, C]` tensor.
    pub fn from_tensor(images: Tensor, labels: Vec<usize>, class_count: usize) -> Result<Dataset> {
        if images.rank() != 4 || images.shape()[0] != labels.len() {
            return Err(Error::InvalidArgument(format!(
                "expected [{}, H, W, C] images, got {:?}",
                labels.len(),
                images.shape()
            )));
        }
        let shape = images.shape()[1..].to_vec();
        Dataset::new(shape, images.into_data(), labels, class_count)
    }

    /// All images as one `[n, H, W, C]` tensor; fails for an empty dataset.
    pub fn images(&self) -> Result<Tensor> {
        let mut shape = vec![self.len()];
        shape.extend(&self.image_shape);
        Tensor::new(shape, self.pixels.clone())
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `[H, W, C]`.
    pub fn image_shape(&self) -> &[usize] {
        &self.image_shape
    }

    pub fn image(&self, i: usize) -> Result<Tensor> {
        if i >= self.len() {
            return Err(Error::OutOfRange {
                what: "image",
                index: i,
                limit: self.len(),
            });
        }
        let n: usize = self.image_shape().iter().product();
        Tensor::new(self.image_shape.clone(), self.pixels[i * n..(i + 1) * n].to_vec())
    }

    /// Images `range` as a new dataset.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Result<Dataset> {
        if range.start > range.end || range.end > self.len() {
            return Err(Error::OutOfRange {
                what: "dataset slice end",
                index: range.end,
                limit: self.len(),
            });
        }
        let n: usize = self.image_shape.iter().product();
        let data = self.pixels[range.start * n..range.end * n].to_vec();
        Dataset::new(
            self.image_shape.clone(),
            data,
            self.labels[range].to_vec(),
            self.class_count,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Seeds the per-epoch shuffle.
    pub seed: u64,
    /// Initialization used by [`TrainConfig::init_network`].
    pub weight_init: RngSpec,
    /// Coefficient of `0.5 * l2 * |W|^2` over weights (not biases).
    pub l2_penalty: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.05,
            batch_size: 16,
            epochs: 5,
            seed: 0,
            weight_init: RngSpec::gaussian(0, 0.0, 0.1),
            l2_penalty: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!(
                "learning_rate must be >= 0, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.l2_penalty >= 0.0) {
            return Err(Error::Config(format!(
                "l2_penalty must be >= 0, got {}",
                self.l2_penalty
            )));
        }
        Ok(())
    }

    pub fn init_network(&self, spec: &crate::network::NetworkSpec) -> Result<Network> {
        Network::build(spec, &self.weight_init)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean penalized loss over the epoch's batches, measured before each update.
    pub loss: f64,
    /// Training accuracy after the epoch.
    pub accuracy: f64,
}

/// Softmax cross-entropy of `logits` against `label`, and its gradient
/// `softmax(logits) - e_label`.
pub fn softmax_cross_entropy(logits: &Tensor, label: usize) -> Result<(f64, Tensor)> {
    let z = logits.data();
    if label >= z.len() {
        return Err(Error::OutOfRange {
            what: "label",
            index: label,
            limit: z.len(),
        });
    }
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = z.iter().map(|v| (v - max).exp()).sum();
    let lse = max + sum.ln();
    let mut grad: Vec<f64> = z.iter().map(|v| (v - lse).exp()).collect();
    grad[label] -= 1.0;
    Ok((lse - z[label], Tensor::new(logits.shape().to_vec(), grad)?))
}

/// Loss of a single example and the true gradient for every parameterized layer.
pub fn loss_gradient(net: &Network, x: &Tensor, label: usize) -> Result<(f64, Vec<Option<ParamGrad>>)> {
    let trace = net.forward(x)?;
    let (loss, seed) = softmax_cross_entropy(trace.logits(), label)?;
    let opts = BackpropOptions {
        params: true,
        record: false,
    };
    let bp = backpropagate(net, &trace, &seed, VisMethod::Saliency, opts)?;
    Ok((loss, bp.param_grads))
}

/// Gradient of the cross-entropy loss with respect to the input.
pub fn input_gradient(net: &Network, x: &Tensor, label: usize) -> Result<Tensor> {
    let trace = net.forward(x)?;
    let (_, seed) = softmax_cross_entropy(trace.logits(), label)?;
    Ok(backpropagate(net, &trace, &seed, VisMethod::Saliency, BackpropOptions::default())?.input_grad)
}

fn weight_norm_sq(net: &Network) -> f64 {
    net.layers()
        .iter()
        .filter_map(|l| l.weight.as_ref())
        .map(|w| w.data().iter().map(|v| v * v).sum::<f64>())
        .sum()
}

/// Mean cross-entropy plus the L2 penalty.
pub fn dataset_loss(net: &Network, data: &Dataset, l2_penalty: f64) -> Result<f64> {
    let mut total = 0.0;
    for i in 0..data.len() {
        let logits = net.logits(&data.image(i)?)?;
        total += softmax_cross_entropy(&logits, data.labels[i])?.0;
    }
    Ok(total / data.len().max(1) as f64 + 0.5 * l2_penalty * weight_norm_sq(net))
}

pub fn predict(net: &Network, x: &Tensor) -> Result<usize> {
    net.logits(x)?
        .argmax()
        .ok_or_else(|| Error::Architecture("network has no logits".into()))
}

pub fn accuracy(net: &Network, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0;
    for i in 0..data.len() {
        if predict(net, &data.image(i)?)? == data.labels[i] {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

fn check_compatible(net: &Network, data: &Dataset) -> Result<()> {
    if net.logit_count() != data.class_count {
        return Err(Error::InvalidArgument(format!(
            "network has {} logits but the dataset has {} classes",
            net.logit_count(),
            data.class_count
        )));
    }
    if net.input_shape() != data.image_shape() {
        return Err(Error::shape("training images", net.input_shape(), data.image_shape()));
    }
    Ok(())
}

/// Plain minibatch SGD on softmax cross-entropy.
pub fn train(net: Network, data: &Dataset, cfg: &TrainConfig) -> Result<Network> {
    Ok(train_logged(net, data, cfg)?.0)
}

/// Summed weight and optional bias gradients of one layer.
type FlatGrad = (Vec<f64>, Option<Vec<f64>>);

/// [`train`], also returning per-epoch statistics.
pub fn train_logged(mut net: Network, data: &Dataset, cfg: &TrainConfig) -> Result<(Network, Vec<EpochStats>)> {
    cfg.validate()?;
    check_compatible(&net, data)?;
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut seeded_rng(mix_seed(cfg.seed, epoch as u64)));
        let mut epoch_loss = 0.0;
        let mut batches = 0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut acc: Vec<Option<FlatGrad>> = vec![None; net.layers().len()];
            let mut loss = 0.0;
            for &i in batch {
                let (l, grads) = loss_gradient(&net, &data.image(i)?, data.labels[i])?;
                loss += l;
                for (slot, g) in acc.iter_mut().zip(grads) {
                    let Some(g) = g else { continue };
                    let w = g.weight.map(Tensor::into_data).unwrap_or_default();
                    let bias = g.bias.map(Tensor::into_data);
                    match slot {
                        None => *slot = Some((w, bias)),
                        Some((aw, ab)) => {
                            aw.iter_mut().zip(&w).for_each(|(a, v)| *a += v);
                            if let (Some(ab), Some(bias)) = (ab.as_mut(), bias) {
                                ab.iter_mut().zip(&bias).for_each(|(a, v)| *a += v);
                            }
                        }
                    }
                }
            }
            let scale = 1.0 / batch.len() as f64;
            loss = loss * scale + 0.5 * cfg.l2_penalty * weight_norm_sq(&net);
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: b,
                    detail: format!("loss is {loss} (learning_rate {})", cfg.learning_rate),
                });
            }
            epoch_loss += loss;
            batches += 1;

            if cfg.learning_rate == 0.0 {
                continue;
            }
            for (l, slot) in acc.into_iter().enumerate() {
                let Some((gw, gb)) = slot else { continue };
                let layer = net.layer_mut(l)?;
                if let Some(w) = layer.weight.as_mut() {
                    for (p, g) in w.data_mut().iter_mut().zip(&gw) {
                        *p -= cfg.learning_rate * (g * scale + cfg.l2_penalty * *p);
                    }
                }
                if let (Some(bias), Some(gb)) = (layer.bias.as_mut(), gb) {
                    for (p, g) in bias.data_mut().iter_mut().zip(&gb) {
                        *p -= cfg.learning_rate * g * scale;
                    }
                }
            }
        }
        history.push(EpochStats {
            epoch,
            loss: epoch_loss / batches.max(1) as f64,
            accuracy: accuracy(&net, data)?,
        });
    }
    Ok((net, history))
}

/// Fast gradient sign step `clip(x + epsilon * sign(grad), 0, 1)` with `sign(0) = 0`.
pub fn fgsm(net: &Network, x: &Tensor, true_label: usize, epsilon: f64) -> Result<Tensor> {
    if !(epsilon >= 0.0) || !epsilon.is_finite() {
        return Err(Error::InvalidArgument(format!("epsilon must be >= 0, got {epsilon}")));
    }
    let g = input_gradient(net, x, true_label)?;
    let data = x
        .data()
        .iter()
        .zip(g.data())
        .map(|(&v, &d)| {
            let s = if d > 0.0 {
                1.0
            } else if d < 0.0 {
                -1.0
            } else {
                0.0
            };
            let mut r = (v + epsilon * s).clamp(0.0, 1.0);
            // Rounding in `v + epsilon` can overshoot the budget by an ulp.
            while (r - v).abs() > epsilon {
                r = if r > v { r.next_down() } else { r.next_up() };
            }
            r
        })
        .collect();
    Tensor::new(x.shape().to_vec(), data)
}

#[cfg(test)]
mod tests;
