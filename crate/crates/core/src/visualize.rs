//! The unified modified backward pass behind saliency maps, DeconvNet and
//! guided backpropagation.
//!
//! The three methods only differ at ReLU layers, where the incoming top
//! gradient `R` and the recorded pre-activation `y` combine as
//! `T = h(R) * g'(y)`:
//!
//! | method    | `h(R)`     | `g'(y)`    |
//! |-----------|------------|------------|
//! | Saliency  | `R`        | `I(y > 0)` |
//! | DeconvNet | `max(R,0)` | `1`        |
//! | GBP       | `max(R,0)` | `I(y > 0)` |
//!
//! Conv and dense layers propagate through their plain transposes and max-pool
//! layers route each gradient to the recorded argmax.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::network::{ForwardTrace, LayerSpec, Network};
use crate::tensor::{self, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VisMethod {
    Saliency,
    DeconvNet,
    Gbp,
}

impl VisMethod {
    pub const ALL: [VisMethod; 3] = [VisMethod::Saliency, VisMethod::DeconvNet, VisMethod::Gbp];

    /// Applied to the top gradient.
    pub fn h(self, r: f64) -> f64 {
        match self {
            VisMethod::Saliency => r,
            VisMethod::DeconvNet | VisMethod::Gbp => relu(r),
        }
    }

    /// Derivative of `g` at the pre-activation. `I(0) = 0`.
    pub fn g_prime(self, y: f64) -> f64 {
        match self {
            VisMethod::DeconvNet => 1.0,
            VisMethod::Saliency | VisMethod::Gbp => indicator(y),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            VisMethod::Saliency => "saliency",
            VisMethod::DeconvNet => "deconvnet",
            VisMethod::Gbp => "gbp",
        }
    }
}

impl fmt::Display for VisMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for VisMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "saliency" | "sal" => Ok(VisMethod::Saliency),
            "deconvnet" | "deconv" => Ok(VisMethod::DeconvNet),
            "gbp" | "guided" => Ok(VisMethod::Gbp),
            _ => Err(Error::InvalidArgument(format!(
                "unknown method {s:?} (expected saliency, deconvnet or gbp)"
            ))),
        }
    }
}

fn relu(t: f64) -> f64 {
    if t > 0.0 {
        t
    } else {
        0.0
    }
}

fn indicator(t: f64) -> f64 {
    if t > 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Gradient after a ReLU given the top gradient `r` and the pre-activation `y`.
pub fn relu_rule(r: f64, y: f64, method: VisMethod) -> f64 {
    let t = method.h(r) * method.g_prime(y);
    // Keep -0.0 out of the maps so results compare equal to their hand values.
    if t == 0.0 {
        0.0
    } else {
        t
    }
}

/// A normalized input-space visualization plus the raw map it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct VisResult {
    /// `raw / z_k`; its L2 norm is at most one.
    pub map: Tensor,
    pub raw: Tensor,
    pub target_logit: usize,
    pub method: VisMethod,
    pub z_k: f64,
}

/// Gradients of one parameterized layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrad {
    pub weight: Option<Tensor>,
    pub bias: Option<Tensor>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct BackpropOptions {
    /// Accumulate parameter gradients (conv/dense).
    pub params: bool,
    /// Keep the gradient at every layer input.
    pub record: bool,
}

#[derive(Debug, Clone)]
pub struct Backprop {
    pub input_grad: Tensor,
    /// `layer_grads[l]` is the gradient with respect to the input of layer `l`
    /// (`T` for ReLU layers). Empty unless recording.
    pub layer_grads: Vec<Tensor>,
    /// One entry per layer; `None` for layers without parameters or when not requested.
    pub param_grads: Vec<Option<ParamGrad>>,
}

impl Backprop {
    /// Gradient with respect to the output of layer `l` (`R` for ReLU layers).
    pub fn output_grad<'a>(&'a self, seed: &'a Tensor, l: usize) -> &'a Tensor {
        self.layer_grads.get(l + 1).unwrap_or(seed)
    }
}

fn check_trace(net: &Network, trace: &ForwardTrace) -> Result<()> {
    if trace.layer_count() != net.layers().len() {
        return Err(Error::Architecture(format!(
            "trace has {} layers, network has {}",
            trace.layer_count(),
            net.layers().len()
        )));
    }
    for (l, layer) in net.layers().iter().enumerate() {
        if trace.input(l).shape() != layer.input_shape.as_slice() {
            return Err(Error::shape("trace", &layer.input_shape, trace.input(l).shape()));
        }
    }
    Ok(())
}

/// Propagates `seed` (a gradient at the logits) back to the input using the
/// given method's ReLU rule.
pub fn backpropagate(
    net: &Network,
    trace: &ForwardTrace,
    seed: &Tensor,
    method: VisMethod,
    opts: BackpropOptions,
) -> Result<Backprop> {
    check_trace(net, trace)?;
    let logits_shape = [net.logit_count()];
    if seed.shape() != logits_shape {
        return Err(Error::shape("backward seed", &logits_shape, seed.shape()));
    }

    let n_layers = net.layers().len();
    let mut layer_grads = if opts.record {
        vec![seed.clone(); n_layers]
    } else {
        Vec::new()
    };
    let mut param_grads = vec![None; n_layers];
    let mut grad = seed.clone();

    for l in (0..n_layers).rev() {
        let layer = &net.layers()[l];
        let input = trace.input(l);
        let mut out = vec![0.0; input.len()];
        match layer.spec {
            LayerSpec::Conv { .. } => {
                let plan = layer.plan.as_ref().expect("conv layer has a plan");
                let w = layer.weight.as_ref().expect("conv layer has weights");
                let (j, p, n) = (plan.patch_count(), plan.patch_len(), w.shape()[3]);
                let mut rows = vec![0.0; j * p];
                tensor::matmul_bt_into(grad.data(), w.data(), &mut rows, j, n, p);
                plan.scatter_into(&rows, &mut out);
                if opts.params {
                    let patches = plan.gather_slice(input.data());
                    let mut dw = vec![0.0; p * n];
                    tensor::matmul_at_into(&patches, grad.data(), &mut dw, j, p, n);
                    let bias = match layer.bias {
                        Some(_) => {
                            let mut db = vec![0.0; n];
                            for row in grad.data().chunks(n) {
                                for (d, g) in db.iter_mut().zip(row) {
                                    *d += g;
                                }
                            }
                            Some(Tensor::from_vec(db)?)
                        }
                        None => None,
                    };
                    param_grads[l] = Some(ParamGrad {
                        weight: Some(Tensor::new(w.shape().to_vec(), dw)?),
                        bias,
                    });
                }
            }
            LayerSpec::Dense { out_features } => {
                let w = layer.weight.as_ref().expect("dense layer has weights");
                tensor::matmul_bt_into(grad.data(), w.data(), &mut out, 1, out_features, input.len());
                if opts.params {
                    let mut dw = vec![0.0; input.len() * out_features];
                    tensor::matmul_into(input.data(), grad.data(), &mut dw, input.len(), 1, out_features);
                    param_grads[l] = Some(ParamGrad {
                        weight: Some(Tensor::new(w.shape().to_vec(), dw)?),
                        bias: layer.bias.as_ref().map(|_| grad.clone()),
                    });
                }
            }
            LayerSpec::Relu => {
                for ((o, &r), &y) in out.iter_mut().zip(grad.data()).zip(input.data()) {
                    *o = relu_rule(r, y, method);
                }
            }
            LayerSpec::MaxPool { .. } => {
                let idx = trace
                    .pool_argmax(l)
                    .ok_or_else(|| Error::Architecture(format!("trace has no pool indices for layer {l}")))?;
                for (&i, &g) in idx.iter().zip(grad.data()) {
                    out[i] += g;
                }
            }
            LayerSpec::Flatten => out.copy_from_slice(grad.data()),
        }
        grad = Tensor::new(layer.input_shape.clone(), out)?;
        if opts.record {
            layer_grads[l] = grad.clone();
        }
    }

    Ok(Backprop {
        input_grad: grad,
        layer_grads,
        param_grads,
    })
}

/// One-hot seed `e_k` at the logits.
pub fn logit_seed(net: &Network, k: usize) -> Result<Tensor> {
    let count = net.logit_count();
    if k >= count {
        return Err(Error::OutOfRange {
            what: "target logit",
            index: k,
            limit: count,
        });
    }
    let mut seed = Tensor::zeros(vec![count])?;
    seed.data_mut()[k] = 1.0;
    Ok(seed)
}

/// Unnormalized visualization `sum_j D_j^T sum_i h(..) w~` for logit `k`.
pub fn backward_raw(net: &Network, trace: &ForwardTrace, k: usize, method: VisMethod) -> Result<Tensor> {
    let seed = logit_seed(net, k)?;
    Ok(backpropagate(net, trace, &seed, method, BackpropOptions::default())?.input_grad)
}

/// Visualization of logit `k`, divided by `max(raw norm, 1)`.
pub fn backward(net: &Network, trace: &ForwardTrace, k: usize, method: VisMethod) -> Result<VisResult> {
    let raw = backward_raw(net, trace, k, method)?;
    let z_k = raw.l2_norm().max(1.0);
    Ok(VisResult {
        map: raw.scale(1.0 / z_k),
        raw,
        target_logit: k,
        method,
        z_k,
    })
}

/// Min-max rescale of the whole map to `[0, 1]` for image output.
pub fn normalize_for_display(map: &Tensor) -> Tensor {
    map.minmax_rescale()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::NetworkSpec;
    use crate::tensor::{sample, Padding, RngSpec};

    const SIGNS: [f64; 5] = [-2.0, -0.0, 0.0, 0.0, 2.0];

    #[test]
    fn relu_rule_examples() {
        for m in VisMethod::ALL {
            assert_eq!(relu_rule(3.0, 2.0, m), 3.0);
        }
        assert_eq!(relu_rule(-1.0, 2.0, VisMethod::Saliency), -1.0);
        assert_eq!(relu_rule(-1.0, 2.0, VisMethod::DeconvNet), 0.0);
        assert_eq!(relu_rule(-1.0, 2.0, VisMethod::Gbp), 0.0);
        assert_eq!(relu_rule(2.0, -1.0, VisMethod::Saliency), 0.0);
        assert_eq!(relu_rule(2.0, -1.0, VisMethod::DeconvNet), 2.0);
        assert_eq!(relu_rule(2.0, -1.0, VisMethod::Gbp), 0.0);
    }

    #[test]
    fn relu_rule_zero_conventions() {
        for &r in &SIGNS {
            for &y in &SIGNS {
                // At y == 0 only DeconvNet passes anything; at R == 0 nothing passes.
                if y == 0.0 {
                    assert_eq!(relu_rule(r, y, VisMethod::Saliency), 0.0);
                    assert_eq!(relu_rule(r, y, VisMethod::Gbp), 0.0);
                }
                if r == 0.0 {
                    for m in VisMethod::ALL {
                        assert_eq!(relu_rule(r, y, m).to_bits(), 0.0f64.to_bits());
                    }
                }
            }
        }
    }

    #[test]
    fn method_names_parse() {
        for m in VisMethod::ALL {
            assert_eq!(m.name().parse::<VisMethod>().unwrap(), m);
        }
        assert!("grad-cam".parse::<VisMethod>().is_err());
    }

    fn hand_net(v: [f64; 2]) -> Network {
        let spec = NetworkSpec::new(
            vec![1, 4, 1],
            vec![
                LayerSpec::Conv {
                    filter: (1, 2),
                    stride: 2,
                    padding: Padding::Valid,
                    out_channels: 1,
                },
                LayerSpec::Relu,
                LayerSpec::Flatten,
                LayerSpec::dense(1),
            ],
        );
        Network::from_weights(
            &spec,
            vec![
                Tensor::new(vec![1, 2, 1, 1], vec![1.0, 1.0]).unwrap(),
                Tensor::new(vec![2, 1], v.to_vec()).unwrap(),
            ],
        )
        .unwrap()
    }

    #[test]
    fn hand_network_gbp() {
        let net = hand_net([1.0, 1.0]);
        let x = Tensor::new(vec![1, 4, 1], vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let trace = net.forward(&x).unwrap();
        let res = backward(&net, &trace, 0, VisMethod::Gbp).unwrap();
        assert_eq!(res.raw.data(), &[1.0, 1.0, 0.0, 0.0]);
        let s = 1.0 / 2f64.sqrt();
        assert_eq!(res.z_k, 2f64.sqrt());
        for (a, b) in res.map.data().iter().zip([s, s, 0.0, 0.0]) {
            assert!((a - b).abs() < 1e-15);
        }
        // DeconvNet ignores the forward mask: both patches receive w.
        let d = backward_raw(&net, &trace, 0, VisMethod::DeconvNet).unwrap();
        assert_eq!(d.data(), &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn negative_readout_kills_gbp_and_deconv() {
        let spec = NetworkSpec::new(
            vec![8, 8, 3],
            vec![
                LayerSpec::conv(3, 1, 4),
                LayerSpec::Relu,
                LayerSpec::Flatten,
                LayerSpec::dense(2),
            ],
        );
        let mut net = Network::build(&spec, &RngSpec::gaussian(1, 0.0, 1.0)).unwrap();
        let v = net.layer_mut(3).unwrap().weight.as_mut().unwrap();
        for w in v.data_mut() {
            *w = -w.abs() - 1e-3;
        }
        let x = sample(&RngSpec::gaussian(2, 0.0, 1.0), vec![8, 8, 3]).unwrap();
        let trace = net.forward(&x).unwrap();
        for m in [VisMethod::Gbp, VisMethod::DeconvNet] {
            let r = backward(&net, &trace, 1, m).unwrap();
            assert!(r.raw.data().iter().all(|&v| v == 0.0));
            assert_eq!(r.z_k, 1.0);
        }
        assert!(backward_raw(&net, &trace, 1, VisMethod::Saliency).unwrap().l2_norm() > 0.0);
    }

    #[test]
    fn target_out_of_range() {
        let net = hand_net([1.0, 1.0]);
        let trace = net.forward(&Tensor::zeros(vec![1, 4, 1]).unwrap()).unwrap();
        assert!(matches!(
            backward(&net, &trace, 1, VisMethod::Gbp),
            Err(Error::OutOfRange { .. })
        ));
    }

    #[test]
    fn trace_from_another_architecture_rejected() {
        let net = hand_net([1.0, 1.0]);
        let spec = NetworkSpec::new(vec![1, 4, 1], vec![LayerSpec::Flatten, LayerSpec::dense(1)]);
        let other = Network::build(&spec, &RngSpec::gaussian(0, 0.0, 1.0)).unwrap();
        let trace = other.forward(&Tensor::zeros(vec![1, 4, 1]).unwrap()).unwrap();
        assert!(backward(&net, &trace, 0, VisMethod::Gbp).is_err());
    }

    #[test]
    fn normalization_bounds() {
        let net = hand_net([0.25, 0.25]);
        let x = Tensor::new(vec![1, 4, 1], vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let trace = net.forward(&x).unwrap();
        let small = backward(&net, &trace, 0, VisMethod::Gbp).unwrap();
        assert_eq!(small.z_k, 1.0);
        assert_eq!(small.map, small.raw);
        let big = backward(&hand_net([10.0, 10.0]), &trace, 0, VisMethod::Gbp).unwrap();
        assert!((big.map.l2_norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn display_normalization() {
        let t = Tensor::from_vec(vec![-1.0, 0.0, 1.0]).unwrap();
        assert_eq!(normalize_for_display(&t).data(), &[0.0, 0.5, 1.0]);
        let c = Tensor::full(vec![3], -2.0).unwrap();
        assert_eq!(normalize_for_display(&c).data(), &[0.5, 0.5, 0.5]);
    }
}
