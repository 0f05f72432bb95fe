//! Calibration runs behind the frozen statistical thresholds.
//!
//! `cargo run --release -p backvis-core --example calibrate -- <study> [seeds]`
//! where `<study>` is one of: recovery, noise, maxpool, depth, fcn, l2, fgsm, all.
//!
//! Variants: `CAL_IMAGE=<desk image>`, `CAL_CENTER=0`, `CAL_LAYOUT=deep` (l2),
//! `CAL_TARGET=max`, `CAL_ARCH=<layers>` and `CAL_EPOCHS=<n>` (fgsm).

use std::time::Instant;

use backvis::experiments::{
    deep_spec, desk_batch, fcn_maps, first_layer_oracle, network_maps, normalize_input, three_layer_spec, train_tiny,
    unit_distance, unpooled_counterpart, vgg_spec, DeskImage, ExperimentConfig, ExperimentId, Target,
};
use backvis::theory::{
    deconv_pool_equals_gbp_check, independence_stat_check, log_log_slope, median, moments, saliency_normalizer,
    IndependenceProbe,
};
use backvis::trainer::{accuracy, fgsm, synth_shapes};
use backvis::{Network, RngSpec, Tensor, VisMethod};

fn init(seed: u64) -> RngSpec {
    RngSpec::truncated(seed, 0.0, 0.1)
}

/// The calibration image; `CAL_IMAGE` and `CAL_CENTER=0` select variants.
fn scene(size: usize, c: usize) -> Tensor {
    let kind: DeskImage = std::env::var("CAL_IMAGE")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or(DeskImage::Scene);
    let center = std::env::var("CAL_CENTER").map_or(true, |v| v != "0");
    normalize_input(&kind.render(size, size, c, 0).unwrap(), center)
}

fn summary(label: &str, v: &[f64]) {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    println!(
        "{label:<40} median {:>9.5}  min {:>9.5}  max {:>9.5}  (n={})",
        median(v).unwrap(),
        s[0],
        s[s.len() - 1],
        v.len()
    );
}

fn recovery(seeds: u64, target: Target) {
    let x = scene(64, 3);
    let mut medians = Vec::new();
    let ns = [8usize, 16, 32, 64, 128, 256];
    for n in ns {
        let mut cs = Vec::new();
        for seed in 0..seeds {
            let net = Network::build(&three_layer_spec([64, 64, 3], 7, 2, n, 10, None), &init(seed)).unwrap();
            let m = network_maps(&net, &x, target, &[VisMethod::Gbp]).unwrap();
            let o = first_layer_oracle(&net, &x).unwrap();
            cs.push(m.get(VisMethod::Gbp).unwrap().cosine(&o).unwrap());
        }
        summary(&format!("gbp vs oracle N={n} {target}"), &cs);
        medians.push(median(&cs).unwrap());
    }
    let err: Vec<f64> = medians.iter().map(|c| 1.0 - c).collect();
    let nf: Vec<f64> = ns.iter().map(|&n| n as f64).collect();
    println!("log-log slope of 1-cos: {:.4}", log_log_slope(&nf, &err).unwrap());
}

fn noise(seeds: u64, target: Target) {
    let x = scene(64, 3);
    let (mut sal, mut dec, mut pooled) = (Vec::new(), Vec::new(), Vec::new());
    let mut pooled_all = Vec::new();
    for seed in 0..seeds {
        let net = Network::build(&three_layer_spec([64, 64, 3], 7, 2, 256, 10, None), &init(seed)).unwrap();
        let m = network_maps(&net, &x, target, &[VisMethod::Saliency, VisMethod::DeconvNet]).unwrap();
        let s = m.get(VisMethod::Saliency).unwrap();
        sal.push(s.cosine(&x).unwrap().abs());
        dec.push(m.get(VisMethod::DeconvNet).unwrap().cosine(&x).unwrap().abs());
        let z = saliency_normalizer(0.1, 256, 147);
        let plan = net.layers()[0].plan.as_ref().unwrap();
        let cov = plan.coverage();
        let full = *cov.iter().max().unwrap();
        for (i, v) in s.data().iter().enumerate() {
            pooled_all.push(v / z);
            if cov[i] == full {
                pooled.push(v / z);
            }
        }
    }
    summary("|cos(saliency, x)|", &sal);
    summary("|cos(deconvnet, x)|", &dec);
    let m = moments(&pooled).unwrap();
    println!("full-coverage pixels: {m:?}");
    let m = moments(&pooled_all).unwrap();
    println!("all pixels: {m:?}");
}

fn maxpool(seeds: u64) {
    let x = scene(64, 3);
    let (mut dg, mut gg, mut dg_plain) = (Vec::new(), Vec::new(), Vec::new());
    for seed in 0..seeds {
        let net = Network::build(&three_layer_spec([64, 64, 3], 7, 2, 256, 10, Some(2)), &init(seed)).unwrap();
        let pm = network_maps(&net, &x, Target::Max, &VisMethod::ALL).unwrap();
        dg.push(deconv_pool_equals_gbp_check(&net, &x, pm.target).unwrap());
        let plain = unpooled_counterpart(&net).unwrap();
        let um = network_maps(&plain, &x, Target::Logit(pm.target), &VisMethod::ALL).unwrap();
        gg.push(
            pm.get(VisMethod::Gbp)
                .unwrap()
                .cosine(um.get(VisMethod::Gbp).unwrap())
                .unwrap(),
        );
        dg_plain.push(
            um.get(VisMethod::DeconvNet)
                .unwrap()
                .cosine(um.get(VisMethod::Gbp).unwrap())
                .unwrap(),
        );
    }
    summary("cos(deconv, gbp) pooled", &dg);
    summary("cos(deconv, gbp) unpooled", &dg_plain);
    summary("cos(gbp pooled, gbp unpooled)", &gg);
}

fn depth(seeds: u64, size: usize, first: usize, width: usize) {
    let x = scene(size, 3);
    let spec = deep_spec([size, size, 3], first, width, 10);
    let (mut go, mut sx, mut dx) = (Vec::new(), Vec::new(), Vec::new());
    let t = Instant::now();
    for seed in 0..seeds {
        let net = Network::build(&spec, &init(seed)).unwrap();
        let m = network_maps(&net, &x, Target::Max, &VisMethod::ALL).unwrap();
        let o = first_layer_oracle(&net, &x).unwrap();
        go.push(m.get(VisMethod::Gbp).unwrap().cosine(&o).unwrap());
        sx.push(m.get(VisMethod::Saliency).unwrap().cosine(&x).unwrap().abs());
        dx.push(m.get(VisMethod::DeconvNet).unwrap().cosine(&x).unwrap().abs());
    }
    println!(
        "depth size {size} first {first} width {width}: {:.1}s",
        t.elapsed().as_secs_f64()
    );
    summary("deep gbp vs oracle", &go);
    summary("deep |cos(saliency, x)|", &sx);
    summary("deep |cos(deconv, x)|", &dx);
    let t = Instant::now();
    let probe = IndependenceProbe {
        spec,
        init: init(1000),
        input: x,
        target: 0,
        method: VisMethod::Gbp,
        layer: 1,
        resamples: 200,
        pairs: 50,
        seed: 0,
    };
    let r = independence_stat_check(&probe).unwrap();
    println!(
        "independence: fraction {:.3} mean|z| {:.3} degenerate {} pass {} ({:.1}s)",
        r.fraction_within,
        r.mean_abs_z,
        r.degenerate,
        r.pass,
        t.elapsed().as_secs_f64()
    );
}

fn fcn(seeds: u64) {
    let x = scene(64, 3);
    let mut cnn = Vec::new();
    for seed in 0..seeds {
        let net = Network::build(&three_layer_spec([64, 64, 3], 7, 2, 64, 10, None), &init(seed)).unwrap();
        let m = network_maps(&net, &x, Target::Max, &[VisMethod::Gbp]).unwrap();
        cnn.push(m.get(VisMethod::Gbp).unwrap().cosine(&x).unwrap());
    }
    summary("cnn N=64 gbp cos x", &cnn);
    for h in [5000usize, 10000, 40000] {
        let t = Instant::now();
        let mut v = Vec::new();
        for seed in 0..seeds {
            let m = fcn_maps(&x, h, 10, &init(seed + 100), Target::Max, &[VisMethod::Gbp]).unwrap();
            v.push(m.get(VisMethod::Gbp).unwrap().cosine(&x).unwrap());
        }
        summary(&format!("fcn h={h} gbp cos x ({:.0}s)", t.elapsed().as_secs_f64()), &v);
    }
}

/// Random-network class sensitivity; `CAL_LAYOUT=deep` uses the 5-conv network.
fn l2(seeds: u64, size: usize, first: usize, width: usize, batch: usize) {
    let deep = std::env::var("CAL_LAYOUT").is_ok_and(|v| v == "deep");
    l2_with(seeds, size, batch, |s| {
        if deep {
            deep_spec([s, s, 3], first, width, 10)
        } else {
            vgg_spec([s, s, 3], first, width, 10)
        }
    });
}

fn l2_with(seeds: u64, size: usize, batch: usize, spec: impl Fn(usize) -> backvis::network::NetworkSpec) {
    for seed in 0..seeds {
        let t = Instant::now();
        let images: Vec<Tensor> = desk_batch(batch, size, size, 3, seed)
            .unwrap()
            .iter()
            .map(|x| normalize_input(x, true))
            .collect();
        let net = Network::build(&spec(size), &init(seed)).unwrap();
        let mut sums = [0.0; 3];
        for (i, x) in images.iter().enumerate() {
            let tr = net.forward(x).unwrap();
            let (a, b) = (i % 10, (i + 1 + i / 10) % 10);
            let b = if a == b { (b + 1) % 10 } else { b };
            for (s, m) in sums.iter_mut().zip(VisMethod::ALL) {
                let ma = backvis::visualize::backward_raw(&net, &tr, a, m).unwrap();
                let mb = backvis::visualize::backward_raw(&net, &tr, b, m).unwrap();
                *s += unit_distance(&ma, &mb) / batch as f64;
            }
        }
        println!(
            "seed {seed}: sal {:.4} deconv {:.4} gbp {:.4}  ratios {:.2} {:.2} ({:.1}s)",
            sums[0],
            sums[1],
            sums[2],
            sums[0] / sums[2],
            sums[0] / sums[1],
            t.elapsed().as_secs_f64()
        );
    }
}

fn fgsm_study(seeds: u64, eps: &[f64]) {
    let mut cfg = ExperimentConfig::new(ExperimentId::Fgsm);
    if let Ok(a) = std::env::var("CAL_ARCH") {
        cfg = ExperimentConfig::parse(ExperimentId::Fgsm, &format!("architecture = {a}\n")).unwrap();
    }
    if let Ok(e) = std::env::var("CAL_EPOCHS") {
        cfg.epochs = e.parse().unwrap();
    }
    for seed in 0..seeds {
        let t = Instant::now();
        cfg.seeds = vec![seed];
        let (net, hist) = train_tiny(&cfg, seed).unwrap();
        let train_t = t.elapsed().as_secs_f64();
        let test = synth_shapes(128, seed + 999).unwrap();
        println!(
            "seed {seed}: train {:.1}s last epoch {:?} test acc {:.3}",
            train_t,
            hist.last().unwrap(),
            accuracy(&net, &test).unwrap()
        );
        for &e in eps {
            let mut flips = 0;
            let mut ch = [0.0; 3];
            let mut dx = 0.0;
            let max = std::env::var("CAL_TARGET").is_ok_and(|v| v == "max");
            for i in 0..test.len() {
                let x = test.image(i).unwrap();
                let k = test.labels()[i];
                let adv = fgsm(&net, &x, k, e).unwrap();
                let tgt = if max { Target::Max } else { Target::Logit(k) };
                let a = network_maps(&net, &x, tgt, &VisMethod::ALL).unwrap();
                let b = network_maps(&net, &adv, tgt, &VisMethod::ALL).unwrap();
                dx += unit_distance(&x, &adv) / test.len() as f64;
                if a.logits.argmax() != b.logits.argmax() {
                    flips += 1;
                }
                for (j, m) in VisMethod::ALL.into_iter().enumerate() {
                    ch[j] += unit_distance(a.get(m).unwrap(), b.get(m).unwrap()) / test.len() as f64;
                }
            }
            println!(
                "  eps {e}: flip {:.3} input {:.4} sal {:.4} deconv {:.4} gbp {:.4} ratio {:.2}",
                flips as f64 / test.len() as f64,
                dx,
                ch[0],
                ch[1],
                ch[2],
                ch[0] / ch[2]
            );
        }
    }
}

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let study = args.first().map(String::as_str).unwrap_or("all");
    let seeds: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(20);
    let extra: Vec<usize> = args.iter().skip(2).filter_map(|s| s.parse().ok()).collect();
    let t = Instant::now();
    match study {
        "recovery" => {
            recovery(seeds, Target::Max);
            recovery(seeds, Target::Logit(0));
        }
        "noise" => {
            noise(seeds, Target::Max);
            noise(seeds, Target::Logit(0));
        }
        "maxpool" => maxpool(seeds),
        "depth" => {
            let (s, f, w) = (
                extra.first().copied().unwrap_or(32),
                extra.get(1).copied().unwrap_or(256),
                extra.get(2).copied().unwrap_or(64),
            );
            depth(seeds, s, f, w)
        }
        "fcn" => fcn(seeds),
        "l2" => {
            let (s, f, w) = (
                extra.first().copied().unwrap_or(32),
                extra.get(1).copied().unwrap_or(64),
                extra.get(2).copied().unwrap_or(32),
            );
            l2(seeds, s, f, w, extra.get(3).copied().unwrap_or(100))
        }
        "fgsm" => fgsm_study(seeds, &[0.02, 0.05, 0.1, 0.2]),
        _ => {
            recovery(seeds, Target::Max);
            noise(seeds, Target::Max);
            maxpool(seeds);
            depth(seeds, 32, 256, 64);
            fcn(seeds.min(5));
            l2(seeds.min(3), 32, 64, 32, 100);
            fgsm_study(seeds.min(3), &[0.05, 0.1]);
        }
    }
    println!("total {:.1}s", t.elapsed().as_secs_f64());
}
