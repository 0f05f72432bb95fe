use rand::seq::index;

use crate::error::{Error, Result};
use crate::experiments::config::{ExperimentConfig, ExperimentId, InputSource, Target};
use crate::experiments::image::read_image;
use crate::experiments::metrics::{find_metric, MetricsRow};
use crate::experiments::models::*;
use crate::experiments::{desk_batch, Sink};
use crate::network::{splice_weights, LayerSpec, Network, NetworkSpec, SpliceMode};
use crate::tensor::{mix_seed, seeded_rng, Tensor};
use crate::theory::{deconv_pool_equals_gbp_check, independence_stat_check, log_log_slope, IndependenceProbe};
use crate::trainer::{self, synth_shapes, Dataset, EpochStats, TrainConfig, SYNTH_SIZE};
use crate::visualize::VisMethod;

/// Classes of the synthetic shape data the tiny CNN is trained on.
pub const TINY_CLASSES: usize = 4;

/// Seed stream offsets so that different roles never share a random stream.
const FCN_STREAM: u64 = 1;
const TRAIN_DATA_STREAM: u64 = 2;
const TEST_DATA_STREAM: u64 = 3;
const RANDOM_TWIN_STREAM: u64 = 4;
const LOGIT_PICK_STREAM: u64 = 5;
const BATCH_STREAM: u64 = 6;
const PROBE_STREAM: u64 = 7;

/// The configured input image, unnormalized.
pub fn load_input(cfg: &ExperimentConfig) -> Result<Tensor> {
    let (s, c) = (cfg.image_size, cfg.channels);
    match &cfg.input {
        InputSource::Desk(d) => d.render(s, s, c, 0),
        InputSource::Constant(v) => Tensor::full(vec![s, s, c], *v),
        InputSource::File(p) => read_image(p),
    }
}

fn image_dims(x: &Tensor) -> [usize; 3] {
    [x.shape()[0], x.shape()[1], x.shape()[2]]
}

/// Trains the tiny CNN on synthetic shapes for `seed`.
pub fn train_tiny(cfg: &ExperimentConfig, seed: u64) -> Result<(Network, Vec<EpochStats>)> {
    let data = synth_shapes(cfg.train_samples, mix_seed(seed, TRAIN_DATA_STREAM))?;
    let input = [SYNTH_SIZE, SYNTH_SIZE, 1];
    let spec = match &cfg.architecture {
        Some(layers) => NetworkSpec::new(input.to_vec(), layers.clone()).with_bias(true),
        None => tiny_cnn_spec(input, TINY_CLASSES),
    };
    let tc = TrainConfig {
        learning_rate: cfg.learning_rate,
        batch_size: cfg.batch_size,
        epochs: cfg.epochs,
        seed,
        weight_init: cfg.init_spec(seed),
        l2_penalty: 0.0,
    };
    trainer::train_logged(tc.init_network(&spec)?, &data, &tc)
}

fn test_set(seed: u64, n: usize) -> Result<Dataset> {
    synth_shapes(n, mix_seed(seed, TEST_DATA_STREAM))
}

fn cos(a: &Tensor, b: &Tensor) -> Result<f64> {
    a.cosine(b)
}

pub(crate) fn dispatch(cfg: &ExperimentConfig, sink: &mut Sink) -> Result<()> {
    match cfg.experiment {
        ExperimentId::CnnVsFcn => cnn_vs_fcn(cfg, sink),
        ExperimentId::FiltersSweep => filters_sweep(cfg, sink),
        ExperimentId::MaxPool => maxpool(cfg, sink),
        ExperimentId::Depth => depth(cfg, sink),
        ExperimentId::L2Stats => l2_stats(cfg, sink),
        ExperimentId::Fgsm => fgsm(cfg, sink),
        ExperimentId::Splice => splice(cfg, sink),
        ExperimentId::EdgeDetector => edge_detector(cfg, sink),
    }
}

/// Rows derived from the per-seed medians.
pub(crate) fn summarize(cfg: &ExperimentConfig, sink: &mut Sink) -> Result<()> {
    if cfg.experiment != ExperimentId::FiltersSweep || cfg.n_sweep.len() < 2 {
        return Ok(());
    }
    let mut ns = Vec::new();
    let mut errs = Vec::new();
    for &n in &cfg.n_sweep {
        let m = find_metric(
            &sink.rows,
            None,
            Some(VisMethod::Gbp),
            &format!("cnn_n{n}_cos_oracle_median"),
        );
        if let Some(c) = m.filter(|c| *c < 1.0) {
            ns.push(n as f64);
            errs.push(1.0 - c);
        }
    }
    if ns.len() >= 2 {
        let slope = log_log_slope(&ns, &errs)?;
        sink.push(MetricsRow::new(sink.id, None, "cnn_oracle_error_slope", slope).method(VisMethod::Gbp));
    }
    Ok(())
}

/// The primary random CNN: the configured architecture, or `default`.
fn primary_spec(cfg: &ExperimentConfig, input: [usize; 3], default: NetworkSpec) -> NetworkSpec {
    match &cfg.architecture {
        Some(layers) => NetworkSpec::new(input.to_vec(), layers.clone()),
        None => default,
    }
}

fn oracle_cos(net: &Network, x: &Tensor, map: &Tensor) -> Result<f64> {
    match first_layer_oracle(net, x) {
        Ok(o) => cos(map, &o),
        // Every patch zero: nothing to recover.
        Err(Error::InvalidArgument(_)) => Ok(0.0),
        Err(e) => Err(e),
    }
}

fn cnn_vs_fcn(cfg: &ExperimentConfig, sink: &mut Sink) -> Result<()> {
    let id = sink.id;
    let raw = load_input(cfg)?;
    let x = normalize_input(&raw, cfg.center);
    let dims = image_dims(&x);
    sink.image("input", &raw)?;
    for &seed in &cfg.seeds {
        let spec = primary_spec(
            cfg,
            dims,
            three_layer_spec(dims, cfg.filter, cfg.stride, cfg.filters, cfg.classes, None),
        );
        let net = Network::build(&spec, &cfg.init_spec(seed))?;
        let cnn = network_maps(&net, &x, cfg.target, &cfg.methods)?;
        for (m, map) in &cnn.maps {
            sink.push(
                MetricsRow::new(id, Some(seed), "cnn_cos_input", cos(map, &x)?)
                    .method(*m)
                    .target(cnn.target),
            );
            sink.push(
                MetricsRow::new(id, Some(seed), "cnn_cos_oracle", oracle_cos(&net, &x, map)?)
                    .method(*m)
                    .target(cnn.target),
            );
            sink.map(&format!("cnn_{m}_s{seed}"), map)?;
        }
        let fcn_init = cfg.init_spec(mix_seed(seed, FCN_STREAM));
        let fcn = fcn_maps(&x, cfg.fcn_hidden, cfg.classes, &fcn_init, cfg.target, &cfg.methods)?;
        for (m, map) in &fcn.maps {
            sink.push(
                MetricsRow::new(id, Some(seed), "fcn_cos_input", cos(map, &x)?)
                    .method(*m)
                    .target(fcn.target),
            );
            sink.map(&format!("fcn_{m}_s{seed}"), map)?;
        }
    }
    Ok(())
}

fn filters_sweep(cfg: &ExperimentConfig, sink: &mut Sink) -> Result<()> {
    let id = sink.id;
    let raw = load_input(cfg)?;
    let x = normalize_input(&raw, cfg.center);
    let dims = image_dims(&x);
    let gbp = [VisMethod::Gbp];
    for (si, &seed) in cfg.seeds.iter().enumerate() {
        for &n in &cfg.n_sweep {
            let spec = three_layer_spec(dims, cfg.filter, cfg.stride, n, cfg.classes, None);
            let net = Network::build(&spec, &cfg.init_spec(seed))?;
            let maps = network_maps(&net, &x, cfg.target, &gbp)?;
            let map = maps.get(VisMethod::Gbp).expect("requested");
            let row = |metric: String, v: f64| {
                MetricsRow::new(id, Some(seed), metric, v)
                    .method(VisMethod::Gbp)
                    .target(maps.target)
            };
            let (ci, co) = (cos(map, &x)?, oracle_cos(&net, &x, map)?);
            sink.push(row(format!("cnn_n{n}_cos_input"), ci));
            sink.push(row(format!("cnn_n{n}_cos_oracle"), co));
            if si == 0 {
                sink.map(&format!("cnn_gbp_n{n}"), map)?;
            }
        }
        for &h in &cfg.fcn_sweep {
            let init = cfg.init_spec(mix_seed(seed, FCN_STREAM));
            let maps = fcn_maps(&x, h, cfg.classes, &init, cfg.target, &gbp)?;
            let map = maps.get(VisMethod::Gbp).expect("requested");
            sink.push(
                MetricsRow::new(id, Some(seed), format!("fcn_h{h}_cos_input"), cos(map, &x)?)
                    .method(VisMethod::Gbp)
                    .target(maps.target),
            );
            if si == 0 {
                sink.map(&format!("fcn_gbp_h{h}"), map)?;
            }
        }
    }
    Ok(())
}

fn pick(maps: &Maps, m: VisMethod) -> &Tensor {
    maps.get(m).expect("all methods requested")
}

fn maxpool(cfg: &ExperimentConfig, sink: &mut Sink) -> Result<()> {
    let id = sink.id;
    let raw = load_input(cfg)?;
    let x = normalize_input(&raw, cfg.center);
    let dims = image_dims(&x);
    for &seed in &cfg.seeds {
        let spec = three_layer_spec(dims, cfg.filter, cfg.stride, cfg.filters, cfg.classes, Some(cfg.pool));
        let pooled = Network::build(&spec, &cfg.init_spec(seed))?;
        let plain = unpooled_counterpart(&pooled)?;
        let pm = network_maps(&pooled, &x, cfg.target, &VisMethod::ALL)?;
        // The counterpart visualizes the same logit as the pooled network.
        let um = network_maps(&plain, &x, Target::Logit(pm.target), &VisMethod::ALL)?;
        let row = |metric: &str, v: f64| MetricsRow::new(id, Some(seed), metric, v).target(pm.target);
        sink.push(row(
            "deconv_gbp_cos",
            deconv_pool_equals_gbp_check(&pooled, &x, pm.target)?,
        ));
        sink.push(row(
            "deconv_gbp_cos_nopool",
            cos(pick(&um, VisMethod::DeconvNet), pick(&um, VisMethod::Gbp))?,
        ));
        sink.push(row(
            "gbp_pool_vs_nopool_cos",
            cos(pick(&pm, VisMethod::Gbp), pick(&um, VisMethod::Gbp))?,
        ));
        for m in VisMethod::ALL {
            if !cfg.methods.contains(&m) {
                continue;
            }
            let (p, u) = (pick(&pm, m), pick(&um, m));
            sink.push(row("pool_cos_input", cos(p, &x)?).method(m));
            sink.push(row("nopool_cos_input", cos(u, &x)?).method(m));
            sink.push(row("pool_cos_oracle", oracle_cos(&pooled, &x, p)?).method(m));
            sink.map(&format!("pool_{m}_s{seed}"), p)?;
            sink.map(&format!("nopool_{m}_s{seed}"), u)?;
        }
    }
    Ok(())
}

fn depth(cfg: &ExperimentConfig, sink: &mut Sink) -> Result<()> {
    let id = sink.id;
    let raw = load_input(cfg)?;
    let x = normalize_input(&raw, cfg.center);
    let dims = image_dims(&x);
    let spec = primary_spec(
        cfg,
        dims,
        deep_spec(dims, cfg.depth_filters, cfg.depth_width, cfg.classes),
    );
    let first_relu = spec
        .layers
        .iter()
        .position(|l| matches!(l, LayerSpec::Relu))
        .ok_or_else(|| Error::Architecture("depth network has no ReLU".into()))?;
    for (si, &seed) in cfg.seeds.iter().enumerate() {
        let net = Network::build(&spec, &cfg.init_spec(seed))?;
        let maps = network_maps(&net, &x, cfg.target, &VisMethod::ALL)?;
        let row = |metric: &str, v: f64| MetricsRow::new(id, Some(seed), metric, v).target(maps.target);
        for m in cfg.methods.iter().copied() {
            let map = maps.get(m).expect("all methods");
            sink.push(row("cos_input", cos(map, &x)?).method(m));
            sink.push(row("cos_oracle", oracle_cos(&net, &x, map)?).method(m));
            sink.map(&format!("deep_{m}_s{seed}"), map)?;
        }
        let (d, g) = (
            maps.get(VisMethod::DeconvNet).expect("all"),
            maps.get(VisMethod::Gbp).expect("all"),
        );
        sink.push(row("deconv_gbp_cos", cos(d, g)?));

        // The probe resamples whole networks, so one run covers the architecture.
        if si > 0 {
            continue;
        }
        let probe = IndependenceProbe {
            spec: spec.clone(),
            init: cfg.init_spec(mix_seed(seed, PROBE_STREAM)),
            input: x.clone(),
            target: maps.target,
            method: VisMethod::Gbp,
            layer: first_relu,
            resamples: cfg.resamples,
            pairs: cfg.pairs,
            seed,
        };
        let rep = independence_stat_check(&probe)?;
        let irow = |metric: &str, v: f64| row(metric, v).method(VisMethod::Gbp);
        sink.push(irow("independence_fraction", rep.fraction_within));
        sink.push(irow("independence_mean_abs_z", rep.mean_abs_z));
        sink.push(irow("independence_degenerate", rep.degenerate as f64));
        sink.push(irow("independence_pass", f64::from(u8::from(rep.pass))));
    }
    Ok(())
}

/// Two distinct logits for image `i`.
fn logit_pair(seed: u64, i: usize, classes: usize) -> Result<(usize, usize)> {
    if classes < 2 {
        return Err(Error::Config("l2-stats needs at least two classes".into()));
    }
    let v = index::sample(
        &mut seeded_rng(mix_seed(mix_seed(seed, LOGIT_PICK_STREAM), i as u64)),
        classes,
        2,
    );
    Ok((v.index(0), v.index(1)))
}

/// Mean over `images` of the unit-map distance between two random logits.
fn mean_logit_distance(net: &Network, images: &[Tensor], seed: u64, methods: &[VisMethod]) -> Result<Vec<f64>> {
    let mut sums = vec![0.0; methods.len()];
    for (i, x) in images.iter().enumerate() {
        let trace = net.forward(x)?;
        let (a, b) = logit_pair(seed, i, net.logit_count())?;
        for (s, &m) in sums.iter_mut().zip(methods) {
            let ma = crate::visualize::backward_raw(net, &trace, a, m)?;
            let mb = crate::visualize::backward_raw(net, &trace, b, m)?;
            *s += unit_distance(&ma, &mb);
        }
    }
    Ok(sums.into_iter().map(|s| s / images.len().max(1) as f64).collect())
}

fn l2_stats(cfg: &ExperimentConfig, sink: &mut Sink) -> Result<()> {
    let id = sink.id;
    let s = cfg.image_size;
    for &seed in &cfg.seeds {
        let images: Vec<Tensor> = desk_batch(cfg.batch, s, s, cfg.channels, mix_seed(seed, BATCH_STREAM))?
            .iter()
            .map(|x| normalize_input(x, cfg.center))
            .collect();
        let dims = [s, s, cfg.channels];
        let spec = primary_spec(
            cfg,
            dims,
            vgg_spec(dims, cfg.depth_filters, cfg.depth_width, cfg.classes),
        );
        let net = Network::build(&spec, &cfg.init_spec(seed))?;
        for (m, v) in cfg
            .methods
            .iter()
            .zip(mean_logit_distance(&net, &images, seed, &cfg.methods)?)
        {
            sink.push(MetricsRow::new(id, Some(seed), "random_mean_l2", v).method(*m));
        }

        let (trained, _) = train_tiny(cfg, seed)?;
        let test = test_set(seed, cfg.batch)?;
        let imgs: Vec<Tensor> = (0..test.len()).map(|i| test.image(i)).collect::<Result<_>>()?;
        for (m, v) in cfg
            .methods
            .iter()
            .zip(mean_logit_distance(&trained, &imgs, seed, &cfg.methods)?)
        {
            sink.push(MetricsRow::new(id, Some(seed), "trained_mean_l2", v).method(*m));
        }
    }
    Ok(())
}

fn fgsm(cfg: &ExperimentConfig, sink: &mut Sink) -> Result<()> {
    let id = sink.id;
    for &seed in &cfg.seeds {
        let (net, history) = train_tiny(cfg, seed)?;
        let train_acc = history.last().map_or(0.0, |h| h.accuracy);
        let test = test_set(seed, cfg.test_samples)?;
        let mut flips = 0;
        let mut changes = vec![0.0; cfg.methods.len()];
        for i in 0..test.len() {
            let x = test.image(i)?;
            let label = test.labels()[i];
            let adv = trainer::fgsm(&net, &x, label, cfg.epsilon)?;
            // Each image is visualized for its own target, as a user would see it.
            let clean = network_maps(&net, &x, cfg.target, &cfg.methods)?;
            let attacked = network_maps(&net, &adv, cfg.target, &cfg.methods)?;
            if clean.logits.argmax() != attacked.logits.argmax() {
                flips += 1;
            }
            for (c, ((m, a), (_, b))) in changes.iter_mut().zip(clean.maps.iter().zip(&attacked.maps)) {
                *c += unit_distance(a, b);
                if i == 0 {
                    sink.map(&format!("clean_{m}_s{seed}"), a)?;
                    sink.map(&format!("adv_{m}_s{seed}"), b)?;
                }
            }
            if i == 0 {
                sink.image(&format!("clean_s{seed}"), &x)?;
                sink.image(&format!("adv_s{seed}"), &adv)?;
            }
        }
        let n = test.len().max(1) as f64;
        sink.push(MetricsRow::new(id, Some(seed), "train_accuracy", train_acc));
        sink.push(MetricsRow::new(
            id,
            Some(seed),
            "test_accuracy",
            trainer::accuracy(&net, &test)?,
        ));
        sink.push(MetricsRow::new(id, Some(seed), "flip_rate", flips as f64 / n));
        for (m, c) in cfg.methods.iter().zip(changes) {
            sink.push(MetricsRow::new(id, Some(seed), "l2_change", c / n).method(*m));
        }
    }
    Ok(())
}

fn splice(cfg: &ExperimentConfig, sink: &mut Sink) -> Result<()> {
    let id = sink.id;
    const PROBES: usize = 8;
    for &seed in &cfg.seeds {
        let (trained, _) = train_tiny(cfg, seed)?;
        let random = Network::build(trained.spec(), &cfg.init_spec(mix_seed(seed, RANDOM_TWIN_STREAM)))?;
        let layers: Vec<usize> = if cfg.splice_layers.is_empty() {
            (0..trained.layers().len())
                .filter(|&l| trained.layers()[l].spec.has_params())
                .collect()
        } else {
            cfg.splice_layers.clone()
        };
        let test = test_set(seed, PROBES)?;
        let images: Vec<Tensor> = (0..test.len()).map(|i| test.image(i)).collect::<Result<_>>()?;
        let reference: Vec<_> = images
            .iter()
            .zip(test.labels())
            .map(|(x, &k)| network_maps(&trained, x, Target::Logit(k), &cfg.methods))
            .collect::<Result<_>>()?;
        for &l in &layers {
            for (tag, mode) in [("upto", SpliceMode::UpTo(l)), ("exceptfor", SpliceMode::ExceptFor(l))] {
                let net = splice_weights(&trained, &random, mode)?;
                let mut to_trained = vec![0.0; cfg.methods.len()];
                let mut to_input = vec![0.0; cfg.methods.len()];
                for (i, (x, &k)) in images.iter().zip(test.labels()).enumerate() {
                    let maps = network_maps(&net, x, Target::Logit(k), &cfg.methods)?;
                    for (mi, (m, map)) in maps.maps.iter().enumerate() {
                        to_trained[mi] += cos(map, reference[i].get(*m).expect("same methods"))?;
                        to_input[mi] += cos(map, x)?;
                        if i == 0 {
                            sink.map(&format!("{tag}_l{l}_{m}_s{seed}"), map)?;
                        }
                    }
                }
                let n = images.len() as f64;
                for (mi, m) in cfg.methods.iter().enumerate() {
                    let row = |metric: String, v: f64| MetricsRow::new(id, Some(seed), metric, v).method(*m);
                    sink.push(row(format!("{tag}_l{l}_cos_trained"), to_trained[mi] / n));
                    sink.push(row(format!("{tag}_l{l}_cos_input"), to_input[mi] / n));
                }
            }
        }
    }
    Ok(())
}

fn edge_detector(cfg: &ExperimentConfig, sink: &mut Sink) -> Result<()> {
    let id = sink.id;
    let raw = load_input(cfg)?;
    let x = normalize_input(&raw, cfg.center);
    let dims = image_dims(&x);
    let detector = left_difference(&raw)?;
    sink.image("input", &raw)?;
    sink.map("detector", &detector)?;
    for &seed in &cfg.seeds {
        let spec = primary_spec(
            cfg,
            dims,
            three_layer_spec(dims, cfg.filter, cfg.stride, cfg.filters, cfg.classes, None),
        );
        let net = Network::build(&spec, &cfg.init_spec(seed))?;
        let maps = network_maps(&net, &x, cfg.target, &cfg.methods)?;
        for (m, map) in &maps.maps {
            let row = |metric: &str, v: f64| {
                MetricsRow::new(id, Some(seed), metric, v)
                    .method(*m)
                    .target(maps.target)
            };
            sink.push(row("cos_detector", cos(map, &detector)?));
            sink.push(row(
                "cos_abs_detector",
                cos(&map.map(f64::abs), &detector.map(f64::abs))?,
            ));
            sink.push(row("cos_input", cos(map, &x)?));
            sink.map(&format!("{m}_s{seed}"), map)?;
        }
    }
    Ok(())
}
