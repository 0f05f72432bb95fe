use super::*;
use crate::network::{LayerSpec, NetworkSpec};
use crate::tensor::sample;

fn tiny_spec(bias: bool) -> NetworkSpec {
    NetworkSpec::new(
        vec![6, 6, 1],
        vec![
            LayerSpec::conv(3, 1, 3),
            LayerSpec::Relu,
            LayerSpec::max_pool(2),
            LayerSpec::Flatten,
            LayerSpec::dense(3),
        ],
    )
    .with_bias(bias)
}

fn blobs(n: usize, seed: u64) -> Dataset {
    // Two classes: bright left half vs bright right half, plus noise.
    let noise = sample(&RngSpec::gaussian(seed, 0.0, 0.05), vec![n, 6, 6, 1]).unwrap();
    let mut data = noise.into_data();
    let mut labels = Vec::new();
    for i in 0..n {
        let label = i % 2;
        for y in 0..6 {
            for x in 0..6 {
                let on = (x < 3) == (label == 0);
                let v = &mut data[i * 36 + y * 6 + x];
                *v = (*v + if on { 0.8 } else { 0.1 }).clamp(0.0, 1.0);
            }
        }
        labels.push(label);
    }
    Dataset::new(vec![6, 6, 1], data, labels, 2).unwrap()
}

fn two_class_net(seed: u64) -> Network {
    let spec = NetworkSpec::new(
        vec![6, 6, 1],
        vec![
            LayerSpec::conv(3, 1, 4),
            LayerSpec::Relu,
            LayerSpec::max_pool(2),
            LayerSpec::Flatten,
            LayerSpec::dense(2),
        ],
    )
    .with_bias(true);
    Network::build(&spec, &RngSpec::gaussian(seed, 0.0, 0.3)).unwrap()
}

#[test]
fn dataset_validation() {
    let img = Tensor::zeros(vec![2, 2, 2, 1]).unwrap();
    assert!(Dataset::from_tensor(img.clone(), vec![0, 2], 2).is_err());
    assert!(Dataset::from_tensor(img.clone(), vec![0], 2).is_err());
    assert!(Dataset::from_tensor(Tensor::zeros(vec![2, 4]).unwrap(), vec![0, 1], 2).is_err());
    assert!(Dataset::new(vec![2, 2], vec![0.0; 8], vec![0, 1], 2).is_err());
    let d = Dataset::from_tensor(img.clone(), vec![0, 1], 2).unwrap();
    assert_eq!(d.images().unwrap(), img);
    assert_eq!(d.image(1).unwrap().shape(), &[2, 2, 1]);
    assert!(d.image(2).is_err());
}

#[test]
fn softmax_cross_entropy_stable() {
    let z = Tensor::from_vec(vec![1000.0, 0.0, -1000.0]).unwrap();
    let (loss, g) = softmax_cross_entropy(&z, 0).unwrap();
    assert!(loss.abs() < 1e-12);
    assert!(g.data().iter().all(|v| v.is_finite()));
    let (loss, g) = softmax_cross_entropy(&Tensor::from_vec(vec![0.0, 0.0]).unwrap(), 1).unwrap();
    assert!((loss - 2f64.ln()).abs() < 1e-15);
    assert_eq!(g.data(), &[0.5, -0.5]);
    assert!(softmax_cross_entropy(&z, 3).is_err());
}

fn example_loss(net: &Network, x: &Tensor, label: usize) -> f64 {
    softmax_cross_entropy(&net.logits(x).unwrap(), label).unwrap().0
}

#[test]
fn parameter_gradient_matches_finite_differences() {
    let mut net = Network::build(&tiny_spec(true), &RngSpec::gaussian(4, 0.0, 0.5)).unwrap();
    // Non-zero biases so their gradients are exercised at a generic point.
    for l in 0..net.layers().len() {
        if let Some(b) = net.layer_mut(l).unwrap().bias.as_mut() {
            for (i, v) in b.data_mut().iter_mut().enumerate() {
                *v = 0.1 * (i as f64 + 1.0);
            }
        }
    }
    let x = sample(&RngSpec::gaussian(9, 0.5, 0.3), vec![6, 6, 1]).unwrap();
    let (_, grads) = loss_gradient(&net, &x, 2).unwrap();

    let mut checked = 0;
    for (l, g) in grads.iter().enumerate() {
        let Some(g) = g else { continue };
        let parts = [(false, g.weight.as_ref()), (true, g.bias.as_ref())];
        for (is_bias, analytic) in parts {
            let Some(analytic) = analytic else { continue };
            for i in 0..analytic.len() {
                let eps = 1e-5;
                let probe = |delta: f64| {
                    let mut n = net.clone();
                    let layer = n.layer_mut(l).unwrap();
                    let t = if is_bias {
                        layer.bias.as_mut()
                    } else {
                        layer.weight.as_mut()
                    };
                    t.unwrap().data_mut()[i] += delta;
                    example_loss(&n, &x, 2)
                };
                let fd = (probe(eps) - probe(-eps)) / (2.0 * eps);
                let an = analytic.data()[i];
                assert!(
                    (fd - an).abs() <= 1e-4 * fd.abs().max(an.abs()).max(1e-3),
                    "layer {l} bias {is_bias} index {i}: fd {fd} analytic {an}"
                );
                checked += 1;
            }
        }
    }
    assert!(checked >= 40, "{checked}");
}

#[test]
fn input_gradient_matches_finite_differences() {
    let net = Network::build(&tiny_spec(false), &RngSpec::gaussian(1, 0.0, 0.5)).unwrap();
    let x = sample(&RngSpec::gaussian(2, 0.5, 0.3), vec![6, 6, 1]).unwrap();
    let g = input_gradient(&net, &x, 1).unwrap();
    for i in 0..x.len() {
        let mut a = x.clone();
        let mut b = x.clone();
        a.data_mut()[i] += 1e-5;
        b.data_mut()[i] -= 1e-5;
        let fd = (example_loss(&net, &a, 1) - example_loss(&net, &b, 1)) / 2e-5;
        assert!(
            (fd - g.data()[i]).abs() <= 1e-4 * fd.abs().max(1e-3),
            "{i}: {fd} vs {}",
            g.data()[i]
        );
    }
}

#[test]
fn zero_learning_rate_keeps_parameters() {
    let net = two_class_net(3);
    let cfg = TrainConfig {
        learning_rate: 0.0,
        batch_size: 4,
        epochs: 2,
        ..TrainConfig::default()
    };
    let trained = train(net.clone(), &blobs(12, 1), &cfg).unwrap();
    assert_eq!(trained, net);
}

#[test]
fn one_step_decreases_loss() {
    let net = two_class_net(5);
    let data = blobs(1, 2);
    let cfg = TrainConfig {
        learning_rate: 1e-3,
        batch_size: 1,
        epochs: 1,
        ..TrainConfig::default()
    };
    let before = dataset_loss(&net, &data, 0.0).unwrap();
    let after = dataset_loss(&train(net, &data, &cfg).unwrap(), &data, 0.0).unwrap();
    assert!(after < before, "{after} >= {before}");
}

#[test]
fn separable_blobs_learned_and_deterministic() {
    let data = blobs(64, 7);
    let cfg = TrainConfig {
        learning_rate: 0.1,
        batch_size: 8,
        epochs: 10,
        seed: 11,
        ..TrainConfig::default()
    };
    let (a, history) = train_logged(two_class_net(1), &data, &cfg).unwrap();
    assert_eq!(history.len(), 10);
    assert!(history.last().unwrap().accuracy >= 0.95, "{history:?}");
    let b = train(two_class_net(1), &data, &cfg).unwrap();
    assert_eq!(a, b);
    let other = train(two_class_net(1), &data, &TrainConfig { seed: 12, ..cfg }).unwrap();
    assert_ne!(a, other);
}

#[test]
fn divergence_is_reported() {
    let data = blobs(8, 3);
    let cfg = TrainConfig {
        learning_rate: 1e200,
        batch_size: 2,
        epochs: 3,
        ..TrainConfig::default()
    };
    assert!(matches!(
        train(two_class_net(2), &data, &cfg),
        Err(Error::Diverged { .. })
    ));
}

#[test]
fn incompatible_inputs_rejected() {
    let spec = NetworkSpec::new(vec![6, 6, 1], vec![LayerSpec::Flatten, LayerSpec::dense(3)]);
    let net = Network::build(&spec, &RngSpec::gaussian(0, 0.0, 1.0)).unwrap();
    assert!(train(net, &blobs(4, 0), &TrainConfig::default()).is_err());
    let bad = TrainConfig {
        batch_size: 0,
        ..TrainConfig::default()
    };
    assert!(train(two_class_net(0), &blobs(4, 0), &bad).is_err());
}

#[test]
fn fgsm_box_and_bound() {
    let net = two_class_net(4);
    let data = blobs(4, 5);
    for i in 0..4 {
        let x = data.image(i).unwrap();
        assert_eq!(fgsm(&net, &x, data.labels()[i], 0.0).unwrap(), x);
        let adv = fgsm(&net, &x, data.labels()[i], 0.1).unwrap();
        for (a, b) in adv.data().iter().zip(x.data()) {
            assert!((0.0..=1.0).contains(a));
            assert!((a - b).abs() <= 0.1 + 1e-15);
        }
        assert_ne!(adv, x);
    }
    assert!(fgsm(&net, &data.image(0).unwrap(), 0, -0.1).is_err());
}

#[test]
fn fgsm_zero_gradient_leaves_pixel() {
    // A dense net on a 1x2x1 input whose second pixel has zero weight.
    let spec = NetworkSpec::new(vec![1, 2, 1], vec![LayerSpec::Flatten, LayerSpec::dense(2)]);
    let w = Tensor::new(vec![2, 2], vec![1.0, -1.0, 0.0, 0.0]).unwrap();
    let net = Network::from_weights(&spec, vec![w]).unwrap();
    let x = Tensor::new(vec![1, 2, 1], vec![0.5, 0.5]).unwrap();
    let adv = fgsm(&net, &x, 0, 0.25).unwrap();
    assert_eq!(adv.data(), &[0.25, 0.5]);
}
