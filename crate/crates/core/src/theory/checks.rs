use rand::seq::index;

use crate::error::{Error, Result};
use crate::network::{LayerSpec, Network, NetworkSpec};
use crate::tensor::{self, seeded_rng, RngSpec, Tensor};
use crate::theory::StatReport;
use crate::visualize::{self, backpropagate, logit_seed, BackpropOptions, VisMethod};

/// Resampling experiment for the upstream coefficients that reach a ReLU
/// layer during the backward pass.
#[derive(Debug, Clone)]
pub struct IndependenceProbe {
    pub spec: NetworkSpec,
    /// Base initialization; resample `r` uses `init.derive(r)`.
    pub init: RngSpec,
    pub input: Tensor,
    pub target: usize,
    pub method: VisMethod,
    /// Index of the ReLU layer whose output gradient is probed.
    pub layer: usize,
    pub resamples: usize,
    pub pairs: usize,
    /// Seed for choosing entry pairs.
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct IndependenceReport {
    /// Per-pair sample correlations against zero, standard error `1/sqrt(R)`.
    pub correlations: StatReport,
    /// Fraction of non-degenerate pairs with `|corr| <= 4/sqrt(R)`.
    pub fraction_within: f64,
    /// Mean over probed entries of `|mean| / (sd / sqrt(R))`.
    pub mean_abs_z: f64,
    /// Pairs dropped because an entry never varied across resamples.
    pub degenerate: usize,
    pub pass: bool,
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        None
    } else {
        Some(sab / (saa * sbb).sqrt())
    }
}

/// Draws `resamples` networks, records the gradient at the probed ReLU output
/// for each, and tests sampled entry pairs for correlation. Passes when at
/// least 95% of the non-degenerate pairs lie within `4/sqrt(R)` of zero.
pub fn independence_stat_check(probe: &IndependenceProbe) -> Result<IndependenceReport> {
    if probe.spec.bias {
        return Err(Error::Architecture(
            "independence check needs a bias-free random network".into(),
        ));
    }
    if !matches!(probe.spec.layers.get(probe.layer), Some(LayerSpec::Relu)) {
        return Err(Error::Architecture(format!("layer {} is not a ReLU", probe.layer)));
    }
    if probe.resamples < 3 || probe.pairs == 0 {
        return Err(Error::InvalidArgument("need at least 3 resamples and 1 pair".into()));
    }
    let shapes = probe.spec.shapes()?;
    let width: usize = shapes[probe.layer + 1].iter().product();
    if width < 2 {
        return Err(Error::InvalidArgument("probed layer has fewer than two entries".into()));
    }

    let mut rng = seeded_rng(probe.seed);
    let pairs: Vec<(usize, usize)> = (0..probe.pairs)
        .map(|_| {
            let v = index::sample(&mut rng, width, 2);
            (v.index(0), v.index(1))
        })
        .collect();

    let r = probe.resamples;
    let mut columns = vec![vec![0.0; r]; 2 * pairs.len()];
    #[allow(clippy::needless_range_loop)] // `s` also seeds the resample.
    for s in 0..r {
        let net = Network::build(&probe.spec, &probe.init.derive(s as u64))?;
        let trace = net.forward(&probe.input)?;
        let seed = logit_seed(&net, probe.target)?;
        let opts = BackpropOptions {
            params: false,
            record: true,
        };
        let bp = backpropagate(&net, &trace, &seed, probe.method, opts)?;
        let v = bp.output_grad(&seed, probe.layer).data();
        for (p, &(a, b)) in pairs.iter().enumerate() {
            columns[2 * p][s] = v[a];
            columns[2 * p + 1][s] = v[b];
        }
    }

    let mut corrs = Vec::new();
    let mut degenerate = 0;
    for p in 0..pairs.len() {
        match pearson(&columns[2 * p], &columns[2 * p + 1]) {
            Some(c) => corrs.push(c),
            None => degenerate += 1,
        }
    }

    let mut z_sum = 0.0;
    let mut z_count = 0;
    for col in &columns {
        let m = col.iter().sum::<f64>() / r as f64;
        let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (r - 1) as f64;
        if var > 0.0 {
            z_sum += m.abs() / (var / r as f64).sqrt();
            z_count += 1;
        }
    }

    let bound = 4.0 / (r as f64).sqrt();
    let within = corrs.iter().filter(|c| c.abs() <= bound).count();
    let fraction_within = if corrs.is_empty() {
        0.0
    } else {
        within as f64 / corrs.len() as f64
    };
    let n = corrs.len();
    let correlations = StatReport::compare(
        format!("relu{}_{}_corr", probe.layer, probe.method),
        corrs,
        vec![0.0; n],
        r,
        vec![1.0 / (r as f64).sqrt(); n],
        bound,
    );
    Ok(IndependenceReport {
        correlations,
        fraction_within,
        mean_abs_z: if z_count == 0 { 0.0 } else { z_sum / z_count as f64 },
        degenerate,
        pass: n > 0 && fraction_within >= 0.95,
    })
}

/// Cosine between the DeconvNet and GBP maps of `net` on `x` for logit `k`.
/// The network must max-pool somewhere after its first ReLU.
pub fn deconv_pool_equals_gbp_check(net: &Network, x: &Tensor, k: usize) -> Result<f64> {
    let layers = &net.spec().layers;
    let first_relu = layers
        .iter()
        .position(|l| matches!(l, LayerSpec::Relu))
        .ok_or_else(|| Error::Architecture("network has no ReLU".into()))?;
    if !layers[first_relu..]
        .iter()
        .any(|l| matches!(l, LayerSpec::MaxPool { .. }))
    {
        return Err(Error::Architecture("no max-pool after the first ReLU".into()));
    }
    let trace = net.forward(x)?;
    let deconv = visualize::backward_raw(net, &trace, k, VisMethod::DeconvNet)?;
    let gbp = visualize::backward_raw(net, &trace, k, VisMethod::Gbp)?;
    Ok(tensor::cosine(deconv.data(), gbp.data()))
}
