use crate::error::{Error, Result};
use crate::network::{LayerSpec, Network};
use crate::tensor::{PatchPlan, Tensor};
use crate::visualize::VisMethod;

/// Conv -> ReLU -> dense model in matrix form.
///
/// `readout` rows use filter-major indexing `q(i, j) = i * J + j`, unlike the
/// engine's flattened `[Ho, Wo, N]` activations (`j * N + i`).
#[derive(Debug, Clone)]
pub struct ThreeLayerModel {
    /// `[p, N]`, column `i` is filter `w_i`.
    pub filters: Tensor,
    /// `[N * J, K]`.
    pub readout: Tensor,
    pub plan: PatchPlan,
    /// Weight standard deviation the model was drawn with.
    pub c: f64,
}

impl ThreeLayerModel {
    pub fn new(filters: Tensor, readout: Tensor, plan: PatchPlan, c: f64) -> Result<Self> {
        let p = plan.patch_len();
        if filters.rank() != 2 || filters.shape()[0] != p {
            return Err(Error::Shape {
                context: "ThreeLayerModel filters",
                expected: vec![p, 0],
                actual: filters.shape().to_vec(),
            });
        }
        let n = filters.shape()[1];
        let rows = n * plan.patch_count();
        if readout.rank() != 2 || readout.shape()[0] != rows {
            return Err(Error::Shape {
                context: "ThreeLayerModel readout",
                expected: vec![rows, 0],
                actual: readout.shape().to_vec(),
            });
        }
        Ok(ThreeLayerModel {
            filters,
            readout,
            plan,
            c,
        })
    }

    /// Extracts `W` and `V` from a bias-free `conv -> relu -> flatten -> dense` network.
    pub fn from_network(net: &Network, c: f64) -> Result<Self> {
        let specs: Vec<LayerSpec> = net.layers().iter().map(|l| l.spec).collect();
        match specs.as_slice() {
            [LayerSpec::Conv { .. }, LayerSpec::Relu, LayerSpec::Flatten, LayerSpec::Dense { .. }] => {}
            _ => {
                return Err(Error::Architecture(
                    "closed form needs exactly conv -> relu -> flatten -> dense".into(),
                ))
            }
        }
        if net.has_bias() {
            return Err(Error::Architecture("closed form assumes a bias-free network".into()));
        }
        let conv = &net.layers()[0];
        let plan = conv.plan.clone().expect("conv layer has a plan");
        let w = conv.weight.as_ref().expect("conv weights");
        let (p, n) = (plan.patch_len(), w.shape()[3]);
        let filters = w.clone().reshape(vec![p, n])?;

        let v = net.layers()[3].weight.as_ref().expect("dense weights");
        let (j_count, k) = (plan.patch_count(), v.shape()[1]);
        let mut readout = vec![0.0; n * j_count * k];
        for j in 0..j_count {
            for i in 0..n {
                let src = (j * n + i) * k;
                let dst = (i * j_count + j) * k;
                readout[dst..dst + k].copy_from_slice(&v.data()[src..src + k]);
            }
        }
        ThreeLayerModel::new(filters, Tensor::new(vec![n * j_count, k], readout)?, plan, c)
    }

    pub fn filter_count(&self) -> usize {
        self.filters.shape()[1]
    }

    pub fn logit_count(&self) -> usize {
        self.readout.shape()[1]
    }

    fn filter(&self, i: usize) -> impl Iterator<Item = f64> + '_ {
        let n = self.filter_count();
        self.filters.data().iter().skip(i).step_by(n).copied()
    }
}

/// Unnormalized `sum_j D_j^T sum_i h(V[q(i,j), k]) w~(i,j)`, evaluated by
/// explicit loops, with `w~ = w` for DeconvNet and `w I(w^T y_j > 0)` otherwise.
pub fn closed_form(model: &ThreeLayerModel, x: &Tensor, k: usize, method: VisMethod) -> Result<Tensor> {
    let plan = &model.plan;
    if x.shape() != plan.input_shape() {
        return Err(Error::shape("closed_form input", &plan.input_shape(), x.shape()));
    }
    if k >= model.logit_count() {
        return Err(Error::OutOfRange {
            what: "target logit",
            index: k,
            limit: model.logit_count(),
        });
    }
    let (p, n, j_count, kk) = (
        plan.patch_len(),
        model.filter_count(),
        plan.patch_count(),
        model.logit_count(),
    );
    let mut out = vec![0.0; plan.input_len()];
    let mut w = vec![0.0; p];
    let mut acc = vec![0.0; p];
    for j in 0..j_count {
        let taps: Vec<Option<usize>> = plan.patch_indices(j).collect();
        let y: Vec<f64> = taps.iter().map(|t| t.map_or(0.0, |i| x.data()[i])).collect();
        acc.iter_mut().for_each(|a| *a = 0.0);
        for i in 0..n {
            let v = model.readout.data()[(i * j_count + j) * kk + k];
            let hv = match method {
                VisMethod::Saliency => v,
                VisMethod::DeconvNet | VisMethod::Gbp => v.max(0.0),
            };
            if hv == 0.0 {
                continue;
            }
            for (dst, src) in w.iter_mut().zip(model.filter(i)) {
                *dst = src;
            }
            let active = match method {
                VisMethod::DeconvNet => true,
                VisMethod::Saliency | VisMethod::Gbp => w.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>() > 0.0,
            };
            if active {
                for (a, wv) in acc.iter_mut().zip(&w) {
                    *a += hv * wv;
                }
            }
        }
        for (t, a) in taps.iter().zip(&acc) {
            if let Some(i) = t {
                out[*i] += a;
            }
        }
    }
    Tensor::new(plan.input_shape().to_vec(), out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::NetworkSpec;
    use crate::tensor::{Padding, RngSpec};
    use crate::visualize::backward_raw;

    fn hand_model(v: [f64; 2]) -> ThreeLayerModel {
        let plan = PatchPlan::one_d(4, 2, 2, Padding::Valid).unwrap();
        ThreeLayerModel::new(
            Tensor::new(vec![2, 1], vec![1.0, 1.0]).unwrap(),
            Tensor::new(vec![2, 1], v.to_vec()).unwrap(),
            plan,
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn hand_gbp() {
        let x = Tensor::new(vec![1, 4, 1], vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let s = closed_form(&hand_model([1.0, 1.0]), &x, 0, VisMethod::Gbp).unwrap();
        assert_eq!(s.data(), &[1.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn dead_zone_zeroes_gbp_and_saliency() {
        // Every patch is anti-aligned with the only filter.
        let x = Tensor::new(vec![1, 4, 1], vec![-1.0, -2.0, -0.5, -3.0]).unwrap();
        let m = hand_model([0.7, -1.3]);
        for method in [VisMethod::Gbp, VisMethod::Saliency] {
            assert!(closed_form(&m, &x, 0, method).unwrap().data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn deconv_single_filter_ignores_input() {
        let m = hand_model([0.7, -1.3]);
        let expected = [0.7, 0.7, 0.0, 0.0];
        for xs in [[1.0, 2.0, 3.0, 4.0], [-5.0, 0.0, 2.0, -1.0], [0.0; 4]] {
            let x = Tensor::new(vec![1, 4, 1], xs.to_vec()).unwrap();
            assert_eq!(closed_form(&m, &x, 0, VisMethod::DeconvNet).unwrap().data(), &expected);
        }
    }

    #[test]
    fn readout_reindexing_matches_engine() {
        let spec = NetworkSpec::new(
            vec![6, 5, 2],
            vec![
                LayerSpec::conv(3, 1, 4),
                LayerSpec::Relu,
                LayerSpec::Flatten,
                LayerSpec::dense(3),
            ],
        );
        let net = Network::build(&spec, &RngSpec::gaussian(3, 0.0, 1.0)).unwrap();
        let model = ThreeLayerModel::from_network(&net, 1.0).unwrap();
        let x = crate::tensor::sample(&RngSpec::gaussian(4, 0.0, 1.0), vec![6, 5, 2]).unwrap();
        let trace = net.forward(&x).unwrap();
        for m in VisMethod::ALL {
            let a = closed_form(&model, &x, 2, m).unwrap();
            let b = backward_raw(&net, &trace, 2, m).unwrap();
            for (u, v) in a.data().iter().zip(b.data()) {
                assert!((u - v).abs() <= 1e-12 * (1.0 + v.abs()));
            }
        }
    }

    #[test]
    fn rejects_other_architectures() {
        let spec = NetworkSpec::new(
            vec![6, 6, 1],
            vec![
                LayerSpec::conv(3, 1, 2),
                LayerSpec::Relu,
                LayerSpec::max_pool(2),
                LayerSpec::Flatten,
                LayerSpec::dense(2),
            ],
        );
        let net = Network::build(&spec, &RngSpec::gaussian(0, 0.0, 1.0)).unwrap();
        assert!(ThreeLayerModel::from_network(&net, 1.0).is_err());
        let spec = NetworkSpec::new(
            vec![6, 6, 1],
            vec![
                LayerSpec::conv(3, 1, 2),
                LayerSpec::Relu,
                LayerSpec::Flatten,
                LayerSpec::dense(2),
            ],
        )
        .with_bias(true);
        let net = Network::build(&spec, &RngSpec::gaussian(0, 0.0, 1.0)).unwrap();
        assert!(ThreeLayerModel::from_network(&net, 1.0).is_err());
    }
}
