use cmdm::nn::{
    adam_step, grad_check, AdamConfig, FeatureMap, Gradients, LayerSpec, LossSpec, Network,
    OptimizerState,
};
use cmdm::RngStream;
use proptest::prelude::*;

const TOL: f64 = 1e-4;

fn random_map(rng: &mut RngStream, c: usize, h: usize, w: usize) -> FeatureMap {
    let mut m = FeatureMap::zeros(c, h, w);
    m.data.iter_mut().for_each(|v| *v = rng.gaussian());
    m
}

fn check(
    layers: Vec<LayerSpec>,
    c: usize,
    h: usize,
    w: usize,
    seed: u64,
) -> cmdm::nn::GradCheckReport {
    let mut rng = RngStream::derive(seed, &[]);
    let mut net = Network::new(layers, &mut rng).unwrap();
    // Non-zero biases so that Bias layers are exercised off the origin.
    for p in net.params_mut() {
        if p.iter().all(|&v| v == 0.0) {
            p.iter_mut().for_each(|v| *v = 0.1 * rng.gaussian());
        }
    }
    let inputs = vec![random_map(&mut rng, c, h, w), random_map(&mut rng, c, h, w)];
    let (out, _) = net.forward(&inputs).unwrap();
    let targets = out
        .iter()
        .map(|o| random_map(&mut rng, o.channels, o.height, o.width))
        .collect();
    grad_check(&net, &inputs, &LossSpec::SquaredError(targets), TOL).unwrap()
}

fn one_layer(kind: usize, c: usize, c2: usize) -> Vec<LayerSpec> {
    match kind {
        0 => vec![LayerSpec::conv(c, c2)],
        1 => vec![LayerSpec::conv_stride2(c, c2)],
        2 => vec![LayerSpec::upsample_conv(c, c2)],
        3 => vec![LayerSpec::relu(c)],
        4 => vec![LayerSpec::bias(c)],
        5 => vec![LayerSpec::global_mean(c)],
        _ => vec![LayerSpec::conv(c, c2), LayerSpec::concat(0, c2, c)],
    }
}

#[test]
fn identity_conv_net_passes() {
    let mut net = Network::zeros(vec![LayerSpec::conv(1, 1)]).unwrap();
    net.params_mut()[0][4] = 1.0;
    let mut rng = RngStream::derive(1, &[]);
    let x = vec![random_map(&mut rng, 1, 8, 8)];
    let t = vec![random_map(&mut rng, 1, 8, 8)];
    let r = grad_check(&net, &x, &LossSpec::SquaredError(t), TOL).unwrap();
    assert!(r.passed, "{r:?}");
}

#[test]
fn every_layer_kind_passes_on_8x8() {
    for kind in 0..7 {
        let r = check(one_layer(kind, 2, 3), 2, 8, 8, kind as u64);
        assert!(r.passed, "layer kind {kind}: {r:?}");
    }
}

#[test]
fn weighted_loss_passes() {
    let mut rng = RngStream::derive(4, &[]);
    let net = Network::new(
        vec![
            LayerSpec::conv(1, 2),
            LayerSpec::relu(2),
            LayerSpec::global_mean(2),
        ],
        &mut rng,
    )
    .unwrap();
    let x = vec![random_map(&mut rng, 1, 6, 6)];
    let w = vec![random_map(&mut rng, 2, 1, 1)];
    assert!(
        grad_check(&net, &x, &LossSpec::Weighted(w), TOL)
            .unwrap()
            .passed
    );
}

#[test]
fn sign_flipped_backward_fails() {
    let mut rng = RngStream::derive(2, &[]);
    let layers = vec![
        LayerSpec::conv(1, 2),
        LayerSpec::relu(2),
        LayerSpec::conv(2, 1),
    ];
    let mut net = Network::new(layers, &mut rng).unwrap();
    let x = vec![random_map(&mut rng, 1, 8, 8)];
    let t = vec![random_map(&mut rng, 1, 8, 8)];
    let loss = LossSpec::SquaredError(t);
    assert!(grad_check(&net, &x, &loss, TOL).unwrap().passed);
    net.inject_gradient_sign_flip(Some(2));
    assert!(!grad_check(&net, &x, &loss, TOL).unwrap().passed);
}

#[test]
fn zero_output_gradient_gives_zero_parameter_gradient() {
    let mut rng = RngStream::derive(3, &[]);
    let net = Network::new(cmdm::nn::arch::unet(2, 2, 1), &mut rng).unwrap();
    let x = vec![random_map(&mut rng, 2, 8, 8)];
    let (out, tape) = net.forward(&x).unwrap();
    let zero: Vec<FeatureMap> = out
        .iter()
        .map(|o| FeatureMap::zeros(o.channels, o.height, o.width))
        .collect();
    let (g, _) = net.backward(&tape, &zero).unwrap();
    assert!(g.flat().all(|v| v == 0.0));
}

#[test]
fn adam_fits_linear_regression() {
    // y = 2 x1 - 3 x2 + 0.5, fitted by a 1x1-equivalent conv on constant maps.
    let mut rng = RngStream::derive(9, &[]);
    let mut net = Network::new(
        vec![
            LayerSpec::global_mean(2),
            LayerSpec::conv(2, 1),
            LayerSpec::bias(1),
        ],
        &mut rng,
    )
    .unwrap();
    let mut opt = OptimizerState::new(
        &net,
        AdamConfig {
            lr: 0.05,
            warmup_steps: 1,
            ..AdamConfig::default()
        },
    )
    .unwrap();
    let data: Vec<(FeatureMap, f64)> = (0..16)
        .map(|_| {
            let (a, b) = (rng.uniform_range(-1.0, 1.0), rng.uniform_range(-1.0, 1.0));
            let mut m = FeatureMap::zeros(2, 3, 3);
            m.channel_mut(0).fill(a);
            m.channel_mut(1).fill(b);
            (m, 2.0 * a - 3.0 * b + 0.5)
        })
        .collect();
    let inputs: Vec<FeatureMap> = data.iter().map(|d| d.0.clone()).collect();
    let loss_and_grad = |net: &Network| {
        let (out, tape) = net.forward(&inputs).unwrap();
        let mut loss = 0.0;
        let seeds: Vec<FeatureMap> = out
            .iter()
            .zip(&data)
            .map(|(o, (_, y))| {
                let d = o.data[0] - y;
                loss += d * d / data.len() as f64;
                let mut g = o.clone();
                g.data[0] = 2.0 * d / data.len() as f64;
                g
            })
            .collect();
        (loss, net.backward(&tape, &seeds).unwrap().0)
    };
    let (initial, _) = loss_and_grad(&net);
    for _ in 0..200 {
        let (_, g): (f64, Gradients) = loss_and_grad(&net);
        adam_step(&mut net, &g, &mut opt).unwrap();
    }
    let (last, _) = loss_and_grad(&net);
    assert!(last * 100.0 <= initial, "loss {initial} -> {last}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn single_layers_pass_on_random_shapes(
        kind in 0usize..7,
        c in 1usize..3,
        c2 in 1usize..3,
        h in 2usize..5,
        w in 2usize..5,
        seed in any::<u64>(),
    ) {
        // Stride-2 layers need even sides.
        let (h, w) = (2 * h, 2 * w);
        let r = check(one_layer(kind, c, c2), c, h, w, seed);
        prop_assert!(r.passed, "{:?}", r);
    }

    #[test]
    fn three_layer_compositions_pass(
        kinds in proptest::collection::vec(0usize..6, 3),
        widths in proptest::collection::vec(1usize..3, 3),
        seed in any::<u64>(),
    ) {
        let mut layers = Vec::new();
        let mut c = 1;
        let mut side = 8usize;
        for (&k, &w) in kinds.iter().zip(&widths) {
            let k = match k {
                1 if side < 2 => 0,
                5 => 4,
                k => k,
            };
            let l = one_layer(k, c, w).remove(0);
            c = l.out_channels;
            side = match k { 1 => side / 2, 2 => side * 2, _ => side };
            layers.push(l);
        }
        layers.push(LayerSpec::global_mean(c));
        let r = check(layers, 1, 8, 8, seed);
        prop_assert!(r.passed, "{:?}", r);
    }
}
