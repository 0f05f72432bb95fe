use std::fs;
use std::path::{Path, PathBuf};

use super::*;
use crate::visualize::VisMethod;

fn small(id: ExperimentId) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(id);
    cfg.image_size = 16;
    cfg.filter = 3;
    cfg.stride = 1;
    cfg.filters = 8;
    cfg.classes = 3;
    cfg.seeds = vec![0, 1];
    cfg.n_sweep = vec![4, 8];
    cfg.fcn_hidden = 40;
    cfg.fcn_sweep = vec![20, 40];
    cfg.depth_filters = 6;
    cfg.depth_width = 4;
    cfg.resamples = 10;
    cfg.pairs = 5;
    cfg.batch = 4;
    cfg.train_samples = 16;
    cfg.test_samples = 4;
    cfg.epochs = 1;
    cfg.batch_size = 4;
    cfg
}

fn metric(out: &RunOutput, seed: Option<u64>, method: Option<VisMethod>, name: &str) -> f64 {
    find_metric(&out.rows, seed, method, name).unwrap_or_else(|| panic!("missing metric {name}"))
}

#[test]
fn every_experiment_runs_and_is_byte_reproducible() {
    for id in ExperimentId::ALL {
        let cfg = small(id);
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let out = run(&cfg, a.path()).unwrap();
        run(&cfg, b.path()).unwrap();
        assert!(out.files.contains(&METRICS_FILE.to_string()), "{id}");
        assert!(out.rows.iter().any(|r| r.seed.is_none()), "{id}: no aggregate rows");
        for f in &out.files {
            let (x, y) = (fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap());
            assert!(x == y, "{id}: {f} differs between identical runs");
        }
        let csv = fs::read_to_string(a.path().join(METRICS_FILE)).unwrap();
        assert!(csv.starts_with(METRICS_HEADER));
        assert_eq!(csv.lines().count(), out.rows.len() + 1);
        let manifest = fs::read_to_string(a.path().join(MANIFEST_FILE)).unwrap();
        assert!(manifest.contains(&format!("experiment = {id}")));
        assert!(manifest.contains("metrics.csv"));
    }
}

#[test]
fn seeds_change_results() {
    let cfg = small(ExperimentId::CnnVsFcn);
    let dir = tempfile::tempdir().unwrap();
    let out = run(&cfg, dir.path()).unwrap();
    let a = metric(&out, Some(0), Some(VisMethod::Gbp), "cnn_cos_input");
    let b = metric(&out, Some(1), Some(VisMethod::Gbp), "cnn_cos_input");
    assert_ne!(a, b);
}

#[test]
fn zero_input_gives_zero_metrics() {
    let mut cfg = small(ExperimentId::CnnVsFcn);
    cfg.input = InputSource::Constant(0.0);
    let dir = tempfile::tempdir().unwrap();
    let out = run(&cfg, dir.path()).unwrap();
    for r in &out.rows {
        assert_eq!(r.value, 0.0, "{}", r.csv_line());
    }
    // Masked methods produce all-zero maps, which display as mid-gray.
    let img = read_image(dir.path().join("cnn_gbp_s0.ppm")).unwrap();
    assert!(img.data().iter().all(|&v| v == 128.0 / 255.0));
}

#[test]
fn constant_input_recovered_with_equal_patch_norms() {
    let mut cfg = small(ExperimentId::FiltersSweep);
    cfg.input = InputSource::Constant(0.5);
    cfg.center = false;
    cfg.channels = 1;
    cfg.filter = 2;
    cfg.stride = 2;
    cfg.n_sweep = vec![8, 64, 256];
    cfg.seeds = vec![0, 1, 2];
    let dir = tempfile::tempdir().unwrap();
    let out = run(&cfg, dir.path()).unwrap();
    let gbp = Some(VisMethod::Gbp);
    let mut last = 0.0;
    for n in [8, 64, 256] {
        let oracle = metric(&out, None, gbp, &format!("cnn_n{n}_cos_oracle_median"));
        let input = metric(&out, None, gbp, &format!("cnn_n{n}_cos_input_median"));
        // The oracle is proportional to the input, so both cosines agree.
        assert!((oracle - input).abs() < 1e-12);
        assert!(input > last, "N={n}: {input} <= {last}");
        last = input;
    }
    assert!(last > 0.9, "{last}");
    assert!(find_metric(&out.rows, None, gbp, "cnn_oracle_error_slope").is_some());
}

#[test]
fn edge_detector_on_step() {
    let mut cfg = small(ExperimentId::EdgeDetector);
    cfg.input = InputSource::Desk(DeskImage::Step);
    cfg.channels = 1;
    let dir = tempfile::tempdir().unwrap();
    let out = run(&cfg, dir.path()).unwrap();
    let det = read_image(dir.path().join("detector.pgm")).unwrap();
    // Display rescale maps 0 to black and the step column to white.
    for y in 0..16 {
        for x in 0..16 {
            let v = det.data()[y * 16 + x];
            assert_eq!(v, if x == 8 { 1.0 } else { 0.0 }, "({y}, {x})");
        }
    }
    assert!(metric(&out, None, Some(VisMethod::Gbp), "cos_detector_median").is_finite());
}

#[test]
fn maxpool_reports_checks() {
    let cfg = small(ExperimentId::MaxPool);
    let dir = tempfile::tempdir().unwrap();
    let out = run(&cfg, dir.path()).unwrap();
    for name in ["deconv_gbp_cos", "deconv_gbp_cos_nopool", "gbp_pool_vs_nopool_cos"] {
        let v = metric(&out, Some(0), None, name);
        assert!((-1.0..=1.0).contains(&v), "{name} = {v}");
    }
}

#[test]
fn fgsm_reports_flip_rate_and_changes() {
    let mut cfg = small(ExperimentId::Fgsm);
    cfg.epsilon = 0.0;
    let dir = tempfile::tempdir().unwrap();
    let out = run(&cfg, dir.path()).unwrap();
    assert_eq!(metric(&out, Some(0), None, "flip_rate"), 0.0);
    for m in VisMethod::ALL {
        assert_eq!(metric(&out, Some(0), Some(m), "l2_change"), 0.0);
    }
}

#[test]
fn splice_covers_parameter_layers() {
    let cfg = small(ExperimentId::Splice);
    let dir = tempfile::tempdir().unwrap();
    let out = run(&cfg, dir.path()).unwrap();
    // Splicing everything up to the last layer reproduces the trained net.
    let last = tiny_cnn_spec(
        [crate::trainer::SYNTH_SIZE, crate::trainer::SYNTH_SIZE, 1],
        TINY_CLASSES,
    )
    .layers
    .len()
        - 1;
    let v = metric(
        &out,
        Some(0),
        Some(VisMethod::Gbp),
        &format!("upto_l{last}_cos_trained"),
    );
    assert!((v - 1.0).abs() < 1e-12, "{v}");
    assert!(find_metric(&out.rows, Some(0), Some(VisMethod::Gbp), "exceptfor_l0_cos_trained").is_some());
}

#[test]
fn architecture_override_is_used() {
    let mut cfg = small(ExperimentId::Depth);
    cfg.architecture = Some(vec![
        crate::network::LayerSpec::conv(3, 1, 4),
        crate::network::LayerSpec::Relu,
        crate::network::LayerSpec::Flatten,
        crate::network::LayerSpec::dense(3),
    ]);
    let dir = tempfile::tempdir().unwrap();
    run(&cfg, dir.path()).unwrap();
    cfg.architecture = Some(vec![
        crate::network::LayerSpec::Flatten,
        crate::network::LayerSpec::dense(3),
    ]);
    assert!(run(&cfg, dir.path()).is_err());
}

#[test]
fn file_input_is_read() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("in.pgm");
    write_image_clamped(&DeskImage::Rings.render(12, 12, 1, 3).unwrap(), &path).unwrap();
    let mut cfg = small(ExperimentId::EdgeDetector);
    cfg.input = InputSource::File(path);
    cfg.seeds = vec![0];
    let out = run(&cfg, &dir.path().join("out")).unwrap();
    assert!(out.files.iter().any(|f| f == "input.pgm"));
}

#[test]
fn out_dir_precedence() {
    let mut cfg = small(ExperimentId::Depth);
    cfg.output = Some("from-config".into());
    assert_eq!(resolve_out_dir(Some(Path::new("cli")), &cfg), PathBuf::from("cli"));
    assert_eq!(resolve_out_dir(None, &cfg), PathBuf::from("from-config"));
}
