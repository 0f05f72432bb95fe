//! Network families and measurement helpers shared by the experiments.

use crate::error::{Error, Result};
use crate::experiments::config::Target;
use crate::network::{ForwardTrace, LayerSpec, Network, NetworkSpec};
use crate::tensor::{RngSpec, Tensor};
use crate::theory::gbp_theorem1_oracle;
use crate::visualize::{backward_raw, VisMethod};

/// Hidden units per chunk when building wide fully-connected networks.
pub const FCN_CHUNK: usize = 2048;

/// conv (Valid) -> relu -> [maxpool] -> flatten -> dense, bias-free.
pub fn three_layer_spec(
    input: [usize; 3],
    filter: usize,
    stride: usize,
    filters: usize,
    classes: usize,
    pool: Option<usize>,
) -> NetworkSpec {
    let mut layers = vec![LayerSpec::conv(filter, stride, filters), LayerSpec::Relu];
    if let Some(w) = pool {
        layers.push(LayerSpec::max_pool(w));
    }
    layers.extend([LayerSpec::Flatten, LayerSpec::dense(classes)]);
    NetworkSpec::new(input.to_vec(), layers)
}

/// flatten -> dense(hidden) -> relu -> dense, bias-free.
pub fn fcn_spec(input: [usize; 3], hidden: usize, classes: usize) -> NetworkSpec {
    NetworkSpec::new(
        input.to_vec(),
        vec![
            LayerSpec::Flatten,
            LayerSpec::dense(hidden),
            LayerSpec::Relu,
            LayerSpec::dense(classes),
        ],
    )
}

/// Five 3x3 Same-padded conv layers in VGG order with two 2x2 pools,
/// bias-free: `c(first) c(width) p c(width) c(width) p c(width)`, then a
/// dense readout.
pub fn deep_spec(input: [usize; 3], first: usize, width: usize, classes: usize) -> NetworkSpec {
    let conv = |n| LayerSpec::conv_same(3, 1, n);
    NetworkSpec::new(
        input.to_vec(),
        vec![
            conv(first),
            LayerSpec::Relu,
            conv(width),
            LayerSpec::Relu,
            LayerSpec::max_pool(2),
            conv(width),
            LayerSpec::Relu,
            conv(width),
            LayerSpec::Relu,
            LayerSpec::max_pool(2),
            conv(width),
            LayerSpec::Relu,
            LayerSpec::Flatten,
            LayerSpec::dense(classes),
        ],
    )
}

/// A VGG-16-layout random network: 13 same-padded 3x3 convolutions in blocks
/// of 2, 2, 3, 3, 3, each block followed by a 2x2 max-pool while the feature
/// map is still at least 2 pixels wide.
pub fn vgg_spec(input: [usize; 3], first: usize, width: usize, classes: usize) -> NetworkSpec {
    let mut layers = Vec::new();
    let mut side = input[0].min(input[1]);
    let mut k = 0;
    for block in [2, 2, 3, 3, 3] {
        for _ in 0..block {
            layers.push(LayerSpec::conv_same(3, 1, if k == 0 { first } else { width }));
            layers.push(LayerSpec::Relu);
            k += 1;
        }
        if side >= 2 {
            layers.push(LayerSpec::max_pool(2));
            side /= 2;
        }
    }
    layers.push(LayerSpec::Flatten);
    layers.push(LayerSpec::dense(classes));
    NetworkSpec::new(input.to_vec(), layers)
}

/// The small trainable CNN used for the trained-weight experiments.
pub fn tiny_cnn_spec(input: [usize; 3], classes: usize) -> NetworkSpec {
    NetworkSpec::new(
        input.to_vec(),
        vec![
            LayerSpec::conv(3, 1, 16),
            LayerSpec::Relu,
            LayerSpec::max_pool(2),
            LayerSpec::conv(3, 1, 32),
            LayerSpec::Relu,
            LayerSpec::max_pool(2),
            LayerSpec::Flatten,
            LayerSpec::dense(classes),
        ],
    )
    .with_bias(true)
}

/// Optionally removes the mean, then scales to unit L2 norm. An all-zero
/// result is returned unscaled.
pub fn normalize_input(x: &Tensor, center: bool) -> Tensor {
    let mut y = x.clone();
    if center {
        let mean = y.data().iter().sum::<f64>() / y.len() as f64;
        y.data_mut().iter_mut().for_each(|v| *v -= mean);
    }
    unit(&y)
}

/// `t / |t|`, or `t` itself when its norm is zero.
pub fn unit(t: &Tensor) -> Tensor {
    let n = t.l2_norm();
    if n > 0.0 {
        t.scale(1.0 / n)
    } else {
        t.clone()
    }
}

/// L2 distance between the unit-normalized versions of two maps.
pub fn unit_distance(a: &Tensor, b: &Tensor) -> f64 {
    let (a, b) = (unit(a), unit(b));
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub fn resolve_target(logits: &Tensor, target: Target) -> Result<usize> {
    match target {
        Target::Max => logits
            .argmax()
            .ok_or_else(|| Error::Architecture("network has no logits".into())),
        Target::Logit(k) if k < logits.len() => Ok(k),
        Target::Logit(k) => Err(Error::OutOfRange {
            what: "target logit",
            index: k,
            limit: logits.len(),
        }),
    }
}

/// Large-N GBP direction for the first conv layer of `net`.
pub fn first_layer_oracle(net: &Network, x: &Tensor) -> Result<Tensor> {
    let plan = net
        .layers()
        .iter()
        .find_map(|l| l.plan.as_ref())
        .ok_or_else(|| Error::Architecture("network has no conv layer".into()))?;
    gbp_theorem1_oracle(x, plan)
}

/// Raw maps of one network for each method.
#[derive(Debug, Clone)]
pub struct Maps {
    pub target: usize,
    pub logits: Tensor,
    pub maps: Vec<(VisMethod, Tensor)>,
}

impl Maps {
    pub fn get(&self, method: VisMethod) -> Option<&Tensor> {
        self.maps.iter().find(|(m, _)| *m == method).map(|(_, t)| t)
    }
}

pub fn network_maps(net: &Network, x: &Tensor, target: Target, methods: &[VisMethod]) -> Result<Maps> {
    let trace: ForwardTrace = net.forward(x)?;
    let k = resolve_target(trace.logits(), target)?;
    let maps = methods
        .iter()
        .map(|&m| Ok((m, backward_raw(net, &trace, k, m)?)))
        .collect::<Result<_>>()?;
    Ok(Maps {
        target: k,
        logits: trace.logits().clone(),
        maps,
    })
}

/// Maps of a bias-free fully-connected network with `hidden` units, built
/// chunk by chunk so the full weight matrix never exists at once. Logits and
/// maps are sums over hidden units, so the chunked network is exactly a
/// single network whose hidden units come from independent streams
/// `init.derive(chunk)`.
pub fn fcn_maps(
    x: &Tensor,
    hidden: usize,
    classes: usize,
    init: &RngSpec,
    target: Target,
    methods: &[VisMethod],
) -> Result<Maps> {
    let input: [usize; 3] = x
        .shape()
        .try_into()
        .map_err(|_| Error::shape("fcn input", &[0, 0, 0], x.shape()))?;
    if hidden == 0 {
        return Err(Error::InvalidArgument("fcn needs at least one hidden unit".into()));
    }
    let mut logits = Tensor::zeros(vec![classes])?;
    let mut per_logit: Vec<Vec<Tensor>> = vec![vec![Tensor::zeros(x.shape().to_vec())?; classes]; methods.len()];
    let chunks = hidden.div_ceil(FCN_CHUNK);
    for c in 0..chunks {
        let width = FCN_CHUNK.min(hidden - c * FCN_CHUNK);
        let net = Network::build(&fcn_spec(input, width, classes), &init.derive(c as u64))?;
        let trace = net.forward(x)?;
        logits.add_assign(trace.logits())?;
        for (mi, &m) in methods.iter().enumerate() {
            for (k, acc) in per_logit[mi].iter_mut().enumerate() {
                acc.add_assign(&backward_raw(&net, &trace, k, m)?)?;
            }
        }
    }
    let k = resolve_target(&logits, target)?;
    let maps = methods
        .iter()
        .zip(per_logit)
        .map(|(&m, mut v)| (m, v.swap_remove(k)))
        .collect();
    Ok(Maps {
        target: k,
        logits,
        maps,
    })
}

/// For a `conv -> relu -> maxpool -> flatten -> dense` network, the
/// pool-free network with the same filters whose readout gives every
/// position the readout weight of the pooling window containing it
/// (positions outside every window get zero).
pub fn unpooled_counterpart(net: &Network) -> Result<Network> {
    let layers = net.layers();
    let shape_ok = layers.len() == 5
        && matches!(layers[0].spec, LayerSpec::Conv { .. })
        && matches!(layers[1].spec, LayerSpec::Relu)
        && matches!(layers[3].spec, LayerSpec::Flatten)
        && matches!(layers[4].spec, LayerSpec::Dense { .. })
        && !net.has_bias();
    let LayerSpec::MaxPool { window, stride } = layers[2].spec else {
        return Err(Error::Architecture(
            "expected conv, relu, maxpool, flatten, dense".into(),
        ));
    };
    if !shape_ok {
        return Err(Error::Architecture(
            "expected bias-free conv, relu, maxpool, flatten, dense".into(),
        ));
    }
    let (ho, wo, n) = (
        layers[1].output_shape[0],
        layers[1].output_shape[1],
        layers[1].output_shape[2],
    );
    let (hp, wp) = (layers[2].output_shape[0], layers[2].output_shape[1]);
    let v = layers[4].weight.as_ref().expect("dense layer has weights");
    let k = v.shape()[1];
    let mut u = vec![0.0; ho * wo * n * k];
    for py in 0..hp {
        for px in 0..wp {
            for dy in 0..window.0 {
                for dx in 0..window.1 {
                    let (y, x) = (py * stride + dy, px * stride + dx);
                    for i in 0..n {
                        let src = ((py * wp + px) * n + i) * k;
                        let dst = ((y * wo + x) * n + i) * k;
                        u[dst..dst + k].copy_from_slice(&v.data()[src..src + k]);
                    }
                }
            }
        }
    }
    let spec = NetworkSpec::new(
        net.input_shape().to_vec(),
        vec![layers[0].spec, LayerSpec::Relu, LayerSpec::Flatten, layers[4].spec],
    );
    let conv = layers[0].weight.clone().expect("conv layer has weights");
    Network::from_weights(&spec, vec![conv, Tensor::new(vec![ho * wo * n, k], u)?])
}

/// `x(y, x) - x(y, x - 1)` per channel, zero in the first column.
pub fn left_difference(img: &Tensor) -> Result<Tensor> {
    let [h, w, c] = *img.shape() else {
        return Err(Error::shape("edge detector input", &[0, 0, 0], img.shape()));
    };
    let d = img.data();
    let mut out = vec![0.0; d.len()];
    for y in 0..h {
        for x in 1..w {
            for ch in 0..c {
                let i = (y * w + x) * c + ch;
                out[i] = d[i] - d[i - c];
            }
        }
    }
    Tensor::new(img.shape().to_vec(), out)
}
