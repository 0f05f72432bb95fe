//! Layer specifications, parameter initialization and the recording forward pass.

mod io;

pub use io::{load_network, read_network, save_network, write_network};

use std::fmt;

use crate::error::{Error, Result};
use crate::tensor::{self, Padding, PatchPlan, RngSpec, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    Conv {
        filter: (usize, usize),
        stride: usize,
        padding: Padding,
        out_channels: usize,
    },
    Relu,
    MaxPool {
        window: (usize, usize),
        stride: usize,
    },
    Flatten,
    Dense {
        out_features: usize,
    },
}

impl LayerSpec {
    pub fn conv(kernel: usize, stride: usize, out_channels: usize) -> Self {
        LayerSpec::Conv {
            filter: (kernel, kernel),
            stride,
            padding: Padding::Valid,
            out_channels,
        }
    }

    pub fn conv_same(kernel: usize, stride: usize, out_channels: usize) -> Self {
        LayerSpec::Conv {
            filter: (kernel, kernel),
            stride,
            padding: Padding::Same,
            out_channels,
        }
    }

    pub fn max_pool(window: usize) -> Self {
        LayerSpec::MaxPool {
            window: (window, window),
            stride: window,
        }
    }

    pub fn dense(out_features: usize) -> Self {
        LayerSpec::Dense { out_features }
    }

    pub fn has_params(&self) -> bool {
        matches!(self, LayerSpec::Conv { .. } | LayerSpec::Dense { .. })
    }

    /// Output shape for a given input shape, or why the layer cannot accept it.
    pub fn output_shape(&self, input: &[usize]) -> std::result::Result<Vec<usize>, String> {
        match *self {
            LayerSpec::Conv {
                filter,
                stride,
                padding,
                out_channels,
            } => {
                let [h, w, c] = image_dims(input)?;
                if out_channels == 0 {
                    return Err("conv needs at least one output channel".into());
                }
                let plan = PatchPlan::new((h, w, c), filter, stride, padding).map_err(|e| e.to_string())?;
                let (oh, ow) = plan.out_dims();
                Ok(vec![oh, ow, out_channels])
            }
            LayerSpec::Relu => Ok(input.to_vec()),
            LayerSpec::MaxPool { window, stride } => {
                let [h, w, c] = image_dims(input)?;
                let (wh, ww) = window;
                if wh == 0 || ww == 0 || stride == 0 {
                    return Err("pool window and stride must be positive".into());
                }
                if wh > h || ww > w {
                    return Err(format!("pool window {wh}x{ww} larger than feature map {h}x{w}"));
                }
                Ok(vec![(h - wh) / stride + 1, (w - ww) / stride + 1, c])
            }
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::Dense { out_features } => {
                if input.len() != 1 {
                    return Err(format!("dense expects a flat input, got shape {input:?}"));
                }
                if out_features == 0 {
                    return Err("dense needs at least one output".into());
                }
                Ok(vec![out_features])
            }
        }
    }
}

fn image_dims(shape: &[usize]) -> std::result::Result<[usize; 3], String> {
    match *shape {
        [h, w, c] => Ok([h, w, c]),
        _ => Err(format!("expected an [H, W, C] feature map, got shape {shape:?}")),
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            LayerSpec::Conv {
                filter,
                stride,
                padding,
                out_channels,
            } => write!(
                f,
                "conv {} {} {} {} {}",
                filter.0,
                filter.1,
                stride,
                padding.as_str(),
                out_channels
            ),
            LayerSpec::Relu => f.write_str("relu"),
            LayerSpec::MaxPool { window, stride } => write!(f, "maxpool {} {} {stride}", window.0, window.1),
            LayerSpec::Flatten => f.write_str("flatten"),
            LayerSpec::Dense { out_features } => write!(f, "dense {out_features}"),
        }
    }
}

impl std::str::FromStr for LayerSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Format {
            format: "layer spec",
            detail: format!("cannot parse {s:?}"),
        };
        let num = |t: &str| t.parse::<usize>().map_err(|_| bad());
        let tokens: Vec<&str> = s.split_whitespace().collect();
        match tokens.as_slice() {
            ["conv", kh, kw, stride, padding, n] => Ok(LayerSpec::Conv {
                filter: (num(kh)?, num(kw)?),
                stride: num(stride)?,
                padding: Padding::parse(padding).ok_or_else(bad)?,
                out_channels: num(n)?,
            }),
            ["relu"] => Ok(LayerSpec::Relu),
            ["maxpool", wh, ww, stride] => Ok(LayerSpec::MaxPool {
                window: (num(wh)?, num(ww)?),
                stride: num(stride)?,
            }),
            ["flatten"] => Ok(LayerSpec::Flatten),
            ["dense", n] => Ok(LayerSpec::Dense { out_features: num(n)? }),
            _ => Err(bad()),
        }
    }
}

/// Input shape plus layer list. Biases are off unless requested.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkSpec {
    pub input: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    pub bias: bool,
}

impl NetworkSpec {
    pub fn new(input: impl Into<Vec<usize>>, layers: Vec<LayerSpec>) -> Self {
        NetworkSpec {
            input: input.into(),
            layers,
            bias: false,
        }
    }

    pub fn with_bias(mut self, bias: bool) -> Self {
        self.bias = bias;
        self
    }

    /// Activation shapes `[input, after layer 0, after layer 1, ...]`.
    pub fn shapes(&self) -> Result<Vec<Vec<usize>>> {
        if self.layers.is_empty() {
            return Err(Error::Architecture("network has no layers".into()));
        }
        if self.input.is_empty() || self.input.contains(&0) {
            return Err(Error::Architecture(format!("invalid input shape {:?}", self.input)));
        }
        let mut shapes = vec![self.input.clone()];
        for (i, layer) in self.layers.iter().enumerate() {
            let current = shapes.last().expect("non-empty");
            let next = layer.output_shape(current).map_err(|reason| Error::Incomposable {
                index: i,
                first: if i == 0 {
                    format!("input {:?}", self.input)
                } else {
                    self.layers[i - 1].to_string()
                },
                next: layer.to_string(),
                reason,
            })?;
            shapes.push(next);
        }
        match self.layers.last() {
            Some(LayerSpec::Dense { .. }) => Ok(shapes),
            _ => Err(Error::Architecture(
                "the last layer must be dense (class logits)".into(),
            )),
        }
    }

    /// The `[kH, kW, Cin, Cout]` / `[in, out]` weight shape of each layer, if any.
    fn weight_shapes(&self, shapes: &[Vec<usize>]) -> Vec<Option<Vec<usize>>> {
        self.layers
            .iter()
            .zip(shapes)
            .map(|(layer, input)| match *layer {
                LayerSpec::Conv {
                    filter, out_channels, ..
                } => Some(vec![filter.0, filter.1, input[2], out_channels]),
                LayerSpec::Dense { out_features } => Some(vec![input[0], out_features]),
                _ => None,
            })
            .collect()
    }
}

/// A layer with its resolved geometry and parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    pub input_shape: Vec<usize>,
    pub output_shape: Vec<usize>,
    pub plan: Option<PatchPlan>,
    pub weight: Option<Tensor>,
    pub bias: Option<Tensor>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    spec: NetworkSpec,
    layers: Vec<Layer>,
}

impl Network {
    /// Builds `spec` with every weight drawn from one `init` stream, in layer order.
    /// Biases, when enabled, start at zero.
    pub fn build(spec: &NetworkSpec, init: &RngSpec) -> Result<Network> {
        let mut sampler = init.sampler()?;
        Self::assemble(spec, |shape| sampler.tensor(shape.to_vec()))
    }

    /// Builds `spec` around explicit weight tensors (one per conv/dense layer, in order).
    pub fn from_weights(spec: &NetworkSpec, weights: Vec<Tensor>) -> Result<Network> {
        let mut it = weights.into_iter();
        let net = Self::assemble(spec, |shape| {
            let w = it
                .next()
                .ok_or_else(|| Error::InvalidArgument("too few weight tensors".into()))?;
            if w.shape() != shape {
                return Err(Error::shape("Network::from_weights", shape, w.shape()));
            }
            Ok(w)
        })?;
        if it.next().is_some() {
            return Err(Error::InvalidArgument("too many weight tensors".into()));
        }
        Ok(net)
    }

    fn assemble(spec: &NetworkSpec, mut weight: impl FnMut(&[usize]) -> Result<Tensor>) -> Result<Network> {
        let shapes = spec.shapes()?;
        let weight_shapes = spec.weight_shapes(&shapes);
        let mut layers = Vec::with_capacity(spec.layers.len());
        for (i, layer) in spec.layers.iter().enumerate() {
            let plan = match *layer {
                LayerSpec::Conv {
                    filter,
                    stride,
                    padding,
                    ..
                } => {
                    let [h, w, c] = image_dims(&shapes[i]).map_err(Error::Architecture)?;
                    Some(PatchPlan::new((h, w, c), filter, stride, padding)?)
                }
                _ => None,
            };
            let (w, b) = match &weight_shapes[i] {
                Some(shape) => {
                    let w = weight(shape)?;
                    let out = *shape.last().expect("weight rank >= 2");
                    let b = if spec.bias {
                        Some(Tensor::zeros(vec![out])?)
                    } else {
                        None
                    };
                    (Some(w), b)
                }
                None => (None, None),
            };
            layers.push(Layer {
                spec: *layer,
                input_shape: shapes[i].clone(),
                output_shape: shapes[i + 1].clone(),
                plan,
                weight: w,
                bias: b,
            });
        }
        Ok(Network {
            spec: spec.clone(),
            layers,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layer(&self, index: usize) -> Result<&Layer> {
        self.layers.get(index).ok_or(Error::OutOfRange {
            what: "layer",
            index,
            limit: self.layers.len(),
        })
    }

    pub fn layer_mut(&mut self, index: usize) -> Result<&mut Layer> {
        let limit = self.layers.len();
        self.layers.get_mut(index).ok_or(Error::OutOfRange {
            what: "layer",
            index,
            limit,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.spec.input
    }

    /// `K`.
    pub fn logit_count(&self) -> usize {
        self.layers.last().map(|l| l.output_shape[0]).unwrap_or(0)
    }

    pub fn has_bias(&self) -> bool {
        self.layers.iter().any(|l| l.bias.is_some())
    }

    /// All parameter tensors in declaration order (per layer: weight, then bias).
    pub fn params(&self) -> impl Iterator<Item = &Tensor> {
        self.layers.iter().flat_map(|l| l.weight.iter().chain(l.bias.iter()))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weight.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn param_count(&self) -> usize {
        self.params().map(Tensor::len).sum()
    }

    /// Applies layer `index` to `input`; pools also return their argmax map.
    pub fn apply_layer(&self, index: usize, input: &Tensor) -> Result<(Tensor, Option<Vec<usize>>)> {
        let layer = self.layer(index)?;
        if input.shape() != layer.input_shape.as_slice() {
            return Err(Error::shape("forward", &layer.input_shape, input.shape()));
        }
        match layer.spec {
            LayerSpec::Conv { .. } => {
                let plan = layer.plan.as_ref().expect("conv layer has a plan");
                let w = layer.weight.as_ref().expect("conv layer has weights");
                let (j, p, n) = (plan.patch_count(), plan.patch_len(), w.shape()[3]);
                let patches = plan.gather_slice(input.data());
                let mut out = vec![0.0; j * n];
                if let Some(b) = &layer.bias {
                    for row in out.chunks_mut(n) {
                        row.copy_from_slice(b.data());
                    }
                }
                tensor::matmul_into(&patches, w.data(), &mut out, j, p, n);
                Ok((Tensor::new(layer.output_shape.clone(), out)?, None))
            }
            LayerSpec::Relu => Ok((input.map(|v| if v > 0.0 { v } else { 0.0 }), None)),
            LayerSpec::MaxPool { window, stride } => {
                let (out, idx) = max_pool(input, &layer.output_shape, window, stride)?;
                Ok((out, Some(idx)))
            }
            LayerSpec::Flatten => Ok((input.clone().reshape(layer.output_shape.clone())?, None)),
            LayerSpec::Dense { out_features } => {
                let w = layer.weight.as_ref().expect("dense layer has weights");
                let mut out = match &layer.bias {
                    Some(b) => b.data().to_vec(),
                    None => vec![0.0; out_features],
                };
                tensor::matmul_into(input.data(), w.data(), &mut out, 1, input.len(), out_features);
                Ok((Tensor::new(vec![out_features], out)?, None))
            }
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<ForwardTrace> {
        if x.shape() != self.spec.input.as_slice() {
            return Err(Error::shape("forward input", &self.spec.input, x.shape()));
        }
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        let mut argmax = Vec::with_capacity(self.layers.len());
        activations.push(x.clone());
        for i in 0..self.layers.len() {
            let (out, idx) = self.apply_layer(i, activations.last().expect("non-empty"))?;
            activations.push(out);
            argmax.push(idx);
        }
        Ok(ForwardTrace { activations, argmax })
    }

    /// Logits only.
    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        let mut act = x.clone();
        if act.shape() != self.spec.input.as_slice() {
            return Err(Error::shape("forward input", &self.spec.input, act.shape()));
        }
        for i in 0..self.layers.len() {
            act = self.apply_layer(i, &act)?.0;
        }
        Ok(act)
    }
}

fn max_pool(
    input: &Tensor,
    out_shape: &[usize],
    window: (usize, usize),
    stride: usize,
) -> Result<(Tensor, Vec<usize>)> {
    let (w, c) = (input.shape()[1], input.shape()[2]);
    let (oh, ow) = (out_shape[0], out_shape[1]);
    let x = input.data();
    let mut out = Vec::with_capacity(oh * ow * c);
    let mut idx = Vec::with_capacity(oh * ow * c);
    for oy in 0..oh {
        for ox in 0..ow {
            for ch in 0..c {
                let mut best = (oy * stride * w + ox * stride) * c + ch;
                for dy in 0..window.0 {
                    for dx in 0..window.1 {
                        let i = ((oy * stride + dy) * w + ox * stride + dx) * c + ch;
                        if x[i] > x[best] {
                            best = i;
                        }
                    }
                }
                out.push(x[best]);
                idx.push(best);
            }
        }
    }
    Ok((Tensor::new(out_shape.to_vec(), out)?, idx))
}

/// Everything the modified backward pass needs from one forward evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    /// `activations[0]` is the input, `activations[l + 1]` the output of layer `l`.
    activations: Vec<Tensor>,
    argmax: Vec<Option<Vec<usize>>>,
}

impl ForwardTrace {
    pub fn layer_count(&self) -> usize {
        self.argmax.len()
    }

    pub fn input(&self, layer: usize) -> &Tensor {
        &self.activations[layer]
    }

    pub fn output(&self, layer: usize) -> &Tensor {
        &self.activations[layer + 1]
    }

    /// Flat input index chosen by each window of a max-pool layer.
    pub fn pool_argmax(&self, layer: usize) -> Option<&[usize]> {
        self.argmax.get(layer)?.as_deref()
    }

    pub fn logits(&self) -> &Tensor {
        self.activations.last().expect("trace holds the input")
    }

    pub fn activations(&self) -> &[Tensor] {
        &self.activations
    }

    /// Re-runs every layer on its recorded input; true if all recorded outputs
    /// and pool choices reproduce bit-exactly.
    pub fn replay(&self, net: &Network) -> Result<bool> {
        if self.layer_count() != net.layers().len() {
            return Err(Error::Architecture(format!(
                "trace has {} layers, network {}",
                self.layer_count(),
                net.layers().len()
            )));
        }
        for l in 0..self.layer_count() {
            let (out, idx) = net.apply_layer(l, self.input(l))?;
            if out != *self.output(l) || idx != self.argmax[l] {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

/// Which layers take their parameters from the trained network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpliceMode {
    /// Layers `0..=index` trained, the rest random.
    UpTo(usize),
    /// Every layer trained except `index`.
    ExceptFor(usize),
}

pub fn splice_weights(trained: &Network, random: &Network, mode: SpliceMode) -> Result<Network> {
    if trained.spec != random.spec {
        return Err(Error::Architecture(
            "cannot splice networks with different specs".into(),
        ));
    }
    let limit = trained.layers.len();
    let (SpliceMode::UpTo(index) | SpliceMode::ExceptFor(index)) = mode;
    if index >= limit {
        return Err(Error::OutOfRange {
            what: "splice layer",
            index,
            limit,
        });
    }
    let mut out = trained.clone();
    for (l, layer) in out.layers.iter_mut().enumerate() {
        let from_trained = match mode {
            SpliceMode::UpTo(i) => l <= i,
            SpliceMode::ExceptFor(i) => l != i,
        };
        if !from_trained {
            layer.weight = random.layers[l].weight.clone();
            layer.bias = random.layers[l].bias.clone();
        }
    }
    Ok(out)
}
