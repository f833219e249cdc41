//! Check suites shared by the integration tests and the acceptance binary.

use super::{
    brute_force_auc, naive_avgpool, naive_conv2d, random_frame, random_tensor, rng,
    scalar_attention, scalar_crop_resize, scalar_normalized_difference,
};
use dfphys::evaluation::auc;
use dfphys::gradcheck::{finite_diff_grad, max_relative_error, DEFAULT_STEP};
use dfphys::layers::{
    activation, activation_backward, avgpool2d, bce_backward, bce_loss, conv2d_forward, dense,
    dense_backward, mse_backward, mse_loss, sigmoid, ActivationKind, AvgPool2d, Conv2d,
};
use dfphys::model::{
    attention_backward, attention_mask, backward, forward, forward_trace, CanConfig, CanWeights,
    Head, LayerParams, PARAM_NAMES,
};
use dfphys::preprocessing::{crop_and_resize, normalized_difference, BBox};
use dfphys::{Parameter, Tensor};
use rand::Rng;

/// Denominator floor for relative errors; gradients below it are compared absolutely.
pub const GRAD_FLOOR: f64 = 1e-7;

fn weighted_sum(out: &Tensor, r: &Tensor) -> f64 {
    out.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

fn layer(weight: &Tensor, bias: &Tensor) -> LayerParams {
    LayerParams {
        weight: Parameter::new(weight.clone()),
        bias: Parameter::new(bias.clone()),
    }
}

fn rel(analytic: &[Tensor], numeric: &[Tensor]) -> f64 {
    max_relative_error(analytic, numeric, GRAD_FLOOR)
}

/// Small network used for the end-to-end composition check.
pub fn small_config(head: Head) -> CanConfig {
    CanConfig {
        input_side: 8,
        input_channels: 3,
        conv_filters: (2, 3),
        kernel_size: 3,
        pool_window: 2,
        fc_size: 4,
        head,
    }
}

/// Max relative gradient error of each layer and of `bce(forward(.))` for one seed.
pub fn gradient_errors(seed: u64) -> Vec<(&'static str, f64)> {
    let mut g = rng(seed);
    let h = DEFAULT_STEP;
    let mut out = Vec::new();

    // conv2d with random geometry
    let c_in = g.random_range(1..=3);
    let c_out = g.random_range(1..=3);
    let k = [1usize, 3][g.random_range(0..2)];
    let pad = g.random_range(0..=k / 2);
    let stride = g.random_range(1..=2);
    let side = g.random_range(k.max(3)..=7);
    let x = random_tensor(&mut g, &[c_in, side, side], 1.0);
    let kern = random_tensor(&mut g, &[c_out, c_in, k, k], 1.0);
    let bias = random_tensor(&mut g, &[c_out], 1.0);
    let mut conv = Conv2d::new(pad, stride);
    let y = conv.forward(&x, &kern, &bias).unwrap();
    let r = random_tensor(&mut g, y.shape(), 1.0);
    let cg = conv.backward(&r, &kern).unwrap();
    let num = finite_diff_grad(
        |p| {
            weighted_sum(
                &conv2d_forward(&p[0], &p[1], &p[2], pad, stride).unwrap(),
                &r,
            )
        },
        &[x, kern.clone(), bias],
        h,
    );
    out.push((
        "conv2d",
        rel(&[cg.input.unwrap(), cg.kernel, cg.bias], &num),
    ));

    // average pooling
    let win = g.random_range(1..=3);
    let shape = [2, win * g.random_range(1..=3), win * 2];
    let x = random_tensor(&mut g, &shape, 1.0);
    let mut pool = AvgPool2d::new(win);
    let y = pool.forward(&x).unwrap();
    let r = random_tensor(&mut g, y.shape(), 1.0);
    let a = pool.backward(&r).unwrap();
    let num = finite_diff_grad(
        |p| weighted_sum(&avgpool2d(&p[0], win).unwrap(), &r),
        &[x],
        h,
    );
    out.push(("avgpool2d", rel(&[a], &num)));

    // dense
    let (n, m) = (g.random_range(1..=8), g.random_range(1..=5));
    let x = random_tensor(&mut g, &[n], 1.0);
    let w = random_tensor(&mut g, &[m, n], 1.0);
    let b = random_tensor(&mut g, &[m], 1.0);
    let r = random_tensor(&mut g, &[m], 1.0);
    let dg = dense_backward(&r, &x, &w).unwrap();
    let num = finite_diff_grad(
        |p| weighted_sum(&dense(&p[0], &p[1], &p[2]).unwrap(), &r),
        &[x, w, b],
        h,
    );
    out.push(("dense", rel(&[dg.input, dg.weights, dg.bias], &num)));

    // activations
    for (name, kind) in [
        ("tanh", ActivationKind::Tanh),
        ("sigmoid", ActivationKind::Sigmoid),
    ] {
        let x = random_tensor(&mut g, &[12], 3.0);
        let r = random_tensor(&mut g, &[12], 1.0);
        let y = activation(&x, kind);
        let a = activation_backward(&r, &y, kind).unwrap();
        let num = finite_diff_grad(|p| weighted_sum(&activation(&p[0], kind), &r), &[x], h);
        out.push((name, rel(&[a], &num)));
    }

    // attention mask
    let c = g.random_range(1..=4);
    let shape = [c, g.random_range(2..=6), g.random_range(2..=6)];
    let feats = random_tensor(&mut g, &shape, 1.0);
    let w = random_tensor(&mut g, &[1, c, 1, 1], 1.0);
    let b = random_tensor(&mut g, &[1], 1.0);
    let r = random_tensor(&mut g, &[1, feats.shape()[1], feats.shape()[2]], 1.0);
    let (gf, gw, gb) = attention_backward(&feats, &layer(&w, &b), &r).unwrap();
    let num = finite_diff_grad(
        |p| {
            weighted_sum(
                &attention_mask(&p[0], &layer(&p[1], &p[2])).unwrap().values,
                &r,
            )
        },
        &[feats, w, b],
        h,
    );
    out.push(("attention", rel(&[gf, gw, gb], &num)));

    // losses
    let s = g.random_range(0.05..0.95);
    let label = if g.random_bool(0.5) { 1.0 } else { 0.0 };
    let num = finite_diff_grad(
        |p| bce_loss(p[0].data()[0], label).unwrap(),
        &[Tensor::scalar(s)],
        h,
    );
    out.push((
        "bce",
        rel(&[Tensor::scalar(bce_backward(s, label).unwrap())], &num),
    ));
    let (pred, target) = (g.random_range(-2.0..2.0), g.random_range(-2.0..2.0));
    let num = finite_diff_grad(
        |p| mse_loss(p[0].data()[0], target),
        &[Tensor::scalar(pred)],
        h,
    );
    out.push((
        "mse",
        rel(&[Tensor::scalar(mse_backward(pred, target))], &num),
    ));

    out.push(("bce(forward)", end_to_end_error(seed)));
    out
}

/// Gradient check of `bce(forward(motion, appearance; weights), label)` over every parameter.
pub fn end_to_end_error(seed: u64) -> f64 {
    let mut g = rng(seed ^ 0xE2E);
    let cfg = small_config(Head::Classification);
    let weights = CanWeights::init(cfg, seed).unwrap();
    let side = cfg.input_side;
    let motion = random_tensor(&mut g, &[3, side, side], 1.0);
    let appearance = random_tensor(&mut g, &[3, side, side], 1.0);
    let label = if g.random_bool(0.5) { 1.0 } else { 0.0 };
    let trace = forward_trace(&motion, &appearance, &weights).unwrap();
    let p = sigmoid(trace.logit);
    let grad_logit = bce_backward(p, label).unwrap() * p * (1.0 - p);
    let analytic = backward(&trace, &weights, grad_logit).unwrap().tensors;
    let values: Vec<Tensor> = weights.params().iter().map(|q| q.value.clone()).collect();
    assert_eq!(values.len(), PARAM_NAMES.len());
    let numeric = finite_diff_grad(
        |ps| {
            let mut w = weights.clone();
            for (q, v) in w.params_mut().into_iter().zip(ps) {
                q.value = v.clone();
            }
            bce_loss(forward(&motion, &appearance, &w).unwrap(), label).unwrap()
        },
        &values,
        DEFAULT_STEP,
    );
    rel(&analytic, &numeric)
}

/// Largest deviation of `sum(mask)` from `H*W/2` over `n` random inputs, for both attention points.
pub fn attention_sum_deviation(n: usize, seed: u64) -> (f64, f64) {
    let mut g = rng(seed);
    let cfg = CanConfig::default();
    let (n1, n2) = cfg.conv_filters;
    let (s1, s2) = (cfg.input_side, cfg.block2_side());
    let mut worst = (0.0f64, 0.0f64);
    for i in 0..n {
        let scale = [0.1, 1.0, 10.0][i % 3];
        let weights = CanWeights::init(cfg, seed.wrapping_add(i as u64)).unwrap();
        let f1 = random_tensor(&mut g, &[n1, s1, s1], scale);
        let f2 = random_tensor(&mut g, &[n2, s2, s2], scale);
        let m1 = attention_mask(&f1, &weights.attention1)
            .unwrap()
            .values
            .sum();
        let m2 = attention_mask(&f2, &weights.attention2)
            .unwrap()
            .values
            .sum();
        worst.0 = worst.0.max((m1 - (s1 * s1) as f64 / 2.0).abs());
        worst.1 = worst.1.max((m2 - (s2 * s2) as f64 / 2.0).abs());
    }
    worst
}

/// Same deviation measured on the masks of full forward passes.
pub fn attention_sum_deviation_in_network(n: usize, seed: u64) -> f64 {
    let mut g = rng(seed);
    let cfg = CanConfig::default();
    let weights = CanWeights::init(cfg, seed).unwrap();
    let side = cfg.input_side;
    let b = cfg.block2_side();
    let mut worst = 0.0f64;
    for _ in 0..n {
        let m = random_tensor(&mut g, &[3, side, side], 2.0);
        let a = random_tensor(&mut g, &[3, side, side], 2.0);
        let t = forward_trace(&m, &a, &weights).unwrap();
        worst = worst
            .max((t.mask1().sum() - (side * side) as f64 / 2.0).abs())
            .max((t.mask2().sum() - (b * b) as f64 / 2.0).abs());
    }
    worst
}

/// Largest conv2d deviation from the naive loop over `n` random geometries.
pub fn conv_oracle_deviation(n: usize, seed: u64) -> f64 {
    let mut g = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..n {
        let c_in = g.random_range(1..=4);
        let c_out = g.random_range(1..=4);
        let k = [1usize, 3, 5][g.random_range(0..3)];
        let pad = g.random_range(0..=k / 2);
        let stride = g.random_range(1..=2);
        let hh = g.random_range(k..=12);
        let ww = g.random_range(k..=12);
        let x = random_tensor(&mut g, &[c_in, hh, ww], 1.0);
        let kern = random_tensor(&mut g, &[c_out, c_in, k, k], 1.0);
        let b = random_tensor(&mut g, &[c_out], 1.0);
        let fast = conv2d_forward(&x, &kern, &b, pad, stride).unwrap();
        let slow = naive_conv2d(&x, &kern, &b, pad, stride);
        assert_eq!(fast.shape(), slow.shape());
        for (a, b) in fast.data().iter().zip(slow.data()) {
            worst = worst.max((a - b).abs());
        }
        let win = g.random_range(1..=3);
        let shape = [
            c_in,
            win * g.random_range(1..=4),
            win * g.random_range(1..=4),
        ];
        let x = random_tensor(&mut g, &shape, 1.0);
        let fast = avgpool2d(&x, win).unwrap();
        for (a, b) in fast.data().iter().zip(naive_avgpool(&x, win).data()) {
            worst = worst.max((a - b).abs());
        }
    }
    worst
}

/// Number of random AUC cases (n <= 200, with ties) where the rank AUC differs from brute force.
pub fn auc_oracle_mismatches(n: usize, seed: u64) -> usize {
    let mut g = rng(seed);
    let mut bad = 0;
    for _ in 0..n {
        let len = g.random_range(2..=200);
        let levels = g.random_range(2..=20);
        let mut labels: Vec<bool> = (0..len).map(|_| g.random_bool(0.5)).collect();
        labels[0] = true;
        labels[1] = false;
        let scores: Vec<f64> = (0..len)
            .map(|_| g.random_range(0..levels) as f64 / levels as f64)
            .collect();
        if auc(&scores, &labels).unwrap() != brute_force_auc(&scores, &labels) {
            bad += 1;
        }
    }
    bad
}

/// Largest deviation of the preprocessing kernels from direct scalar formulas.
///
/// Crop-resize output is 8-bit, so it is compared for exact equality and any
/// mismatch counts as a deviation of 1.
pub fn preprocessing_oracle_deviation(n: usize, seed: u64) -> f64 {
    let mut g = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..n {
        let (hh, ww) = (g.random_range(4..=24), g.random_range(4..=24));
        let cur = random_frame(&mut g, hh, ww);
        let prev = random_frame(&mut g, hh, ww);
        let fast = normalized_difference(&cur, &prev).unwrap();
        for (a, b) in fast
            .data()
            .iter()
            .zip(scalar_normalized_difference(&cur, &prev))
        {
            worst = worst.max((a - b).abs());
        }
        let bw = g.random_range(1..=ww);
        let bh = g.random_range(1..=hh);
        let x0 = g.random_range(0..=ww - bw);
        let y0 = g.random_range(0..=hh - bh);
        let side = g.random_range(1..=16);
        let bbox = BBox {
            x: x0,
            y: y0,
            w: bw,
            h: bh,
        };
        let fast = crop_and_resize(&cur, bbox, side).unwrap();
        if fast.pixels() != scalar_crop_resize(&cur, x0, y0, bw, bh, side).as_slice() {
            worst = worst.max(1.0);
        }
    }
    worst
}

/// Largest deviation of the attention mask from its scalar definition.
pub fn attention_oracle_deviation(n: usize, seed: u64) -> f64 {
    let mut g = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..n {
        let c = g.random_range(1..=5);
        let shape = [c, g.random_range(1..=9), g.random_range(1..=9)];
        let f = random_tensor(&mut g, &shape, 2.0);
        let w = random_tensor(&mut g, &[1, c, 1, 1], 2.0);
        let b = random_tensor(&mut g, &[1], 2.0);
        let mask = attention_mask(&f, &layer(&w, &b)).unwrap().values;
        for (a, e) in mask
            .data()
            .iter()
            .zip(scalar_attention(&f, w.data(), b.data()[0]))
        {
            worst = worst.max((a - e).abs());
        }
    }
    worst
}
