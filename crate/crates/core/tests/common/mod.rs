//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

pub mod pipeline;
pub mod suites;

use dfphys::preprocessing::RawFrame;
use dfphys::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape,
        (0..n).map(|_| rng.random_range(-scale..scale)).collect(),
    )
    .unwrap()
}

pub fn random_frame(rng: &mut ChaCha8Rng, h: usize, w: usize) -> RawFrame {
    RawFrame::new(h, w, (0..h * w * 3).map(|_| rng.random()).collect()).unwrap()
}

/// Cross-correlation by explicit loops over output, channel and kernel taps.
pub fn naive_conv2d(
    input: &Tensor,
    kernel: &Tensor,
    bias: &Tensor,
    pad: usize,
    stride: usize,
) -> Tensor {
    let (c_in, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (c_out, kh, kw) = (kernel.shape()[0], kernel.shape()[2], kernel.shape()[3]);
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; c_out * oh * ow];
    for o in 0..c_out {
        for y in 0..oh {
            for x in 0..ow {
                let mut acc = bias.data()[o];
                for c in 0..c_in {
                    for i in 0..kh {
                        for j in 0..kw {
                            let sy = (y * stride + i) as isize - pad as isize;
                            let sx = (x * stride + j) as isize - pad as isize;
                            if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                continue;
                            }
                            acc +=
                                kernel.at(&[o, c, i, j]) * input.at(&[c, sy as usize, sx as usize]);
                        }
                    }
                }
                out[(o * oh + y) * ow + x] = acc;
            }
        }
    }
    Tensor::new(&[c_out, oh, ow], out).unwrap()
}

/// Non-overlapping window mean.
pub fn naive_avgpool(input: &Tensor, k: usize) -> Tensor {
    let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (oh, ow) = (h / k, w / k);
    let mut out = Vec::new();
    for ch in 0..c {
        for y in 0..oh {
            for x in 0..ow {
                let mut s = 0.0;
                for i in 0..k {
                    for j in 0..k {
                        s += input.at(&[ch, y * k + i, x * k + j]);
                    }
                }
                out.push(s / (k * k) as f64);
            }
        }
    }
    Tensor::new(&[c, oh, ow], out).unwrap()
}

/// Fraction of positive/negative pairs ordered correctly, ties counting half.
pub fn brute_force_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut twice = 0u64;
    let mut pairs = 0u64;
    for (i, &si) in scores.iter().enumerate() {
        if !labels[i] {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] {
                continue;
            }
            pairs += 1;
            twice += if si > sj {
                2
            } else if si == sj {
                1
            } else {
                0
            };
        }
    }
    twice as f64 / (2 * pairs) as f64
}

/// `(c - p) / (c + p + 1e-6)` on [0, 1] pixels, channel-first output.
pub fn scalar_normalized_difference(cur: &RawFrame, prev: &RawFrame) -> Vec<f64> {
    let (h, w) = (cur.height(), cur.width());
    let mut out = vec![0.0; 3 * h * w];
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                let a = cur.get(y, x, c) as f64 / 255.0;
                let b = prev.get(y, x, c) as f64 / 255.0;
                out[(c * h + y) * w + x] = (a - b) / (a + b + 1e-6);
            }
        }
    }
    out
}

/// Bilinear resize with half-pixel centers and edge clamping, rounded to 8 bits.
pub fn scalar_crop_resize(
    frame: &RawFrame,
    x0: usize,
    y0: usize,
    bw: usize,
    bh: usize,
    side: usize,
) -> Vec<u8> {
    let sample = |i: usize, start: usize, extent: usize| {
        let s = start as f64 + (i as f64 + 0.5) * extent as f64 / side as f64 - 0.5;
        let s = s.max(start as f64).min((start + extent - 1) as f64);
        let lo = s.floor();
        let hi = (lo as usize + 1).min(start + extent - 1);
        (lo as usize, hi, s - lo)
    };
    let mut out = Vec::new();
    for i in 0..side {
        let (ya, yb, fy) = sample(i, y0, bh);
        for j in 0..side {
            let (xa, xb, fx) = sample(j, x0, bw);
            for c in 0..3 {
                let p = |y, x| frame.get(y, x, c) as f64;
                let v = (1.0 - fy) * ((1.0 - fx) * p(ya, xa) + fx * p(ya, xb))
                    + fy * ((1.0 - fx) * p(yb, xa) + fx * p(yb, xb));
                out.push(v.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    out
}

/// Attention mask straight from its definition.
pub fn scalar_attention(features: &Tensor, weight: &[f64], bias: f64) -> Vec<f64> {
    let (c, h, w) = (
        features.shape()[0],
        features.shape()[1],
        features.shape()[2],
    );
    let sig: Vec<f64> = (0..h * w)
        .map(|i| {
            let z: f64 = (0..c)
                .map(|k| weight[k] * features.data()[k * h * w + i])
                .sum::<f64>()
                + bias;
            1.0 / (1.0 + (-z).exp())
        })
        .collect();
    let total: f64 = sig.iter().sum();
    sig.iter()
        .map(|s| (h * w) as f64 * s / (2.0 * total))
        .collect()
}

fn naive_tanh(t: &Tensor) -> Tensor {
    t.map(f64::tanh)
}

fn naive_gate(features: &Tensor, mask: &[f64]) -> Tensor {
    let plane = mask.len();
    let data = features
        .data()
        .iter()
        .enumerate()
        .map(|(i, f)| f * mask[i % plane])
        .collect();
    Tensor::new(features.shape(), data).unwrap()
}

fn naive_dense(x: &[f64], w: &Tensor, b: &Tensor) -> Vec<f64> {
    let (m, n) = (w.shape()[0], w.shape()[1]);
    (0..m)
        .map(|i| b.data()[i] + (0..n).map(|j| w.at(&[i, j]) * x[j]).sum::<f64>())
        .collect()
}

/// Network logit recomposed from the naive layer oracles.
pub fn naive_logit(motion: &Tensor, appearance: &Tensor, w: &dfphys::model::CanWeights) -> f64 {
    let cfg = &w.config;
    let pad = cfg.kernel_size / 2;
    let pw = cfg.pool_window;
    let conv = |x: &Tensor, l: &dfphys::model::LayerParams| {
        naive_tanh(&naive_conv2d(x, &l.weight.value, &l.bias.value, pad, 1))
    };
    let att = |f: &Tensor, l: &dfphys::model::LayerParams| {
        let c = f.shape()[0];
        scalar_attention(f, &l.weight.value.data()[..c], l.bias.value.data()[0])
    };
    let a1 = conv(appearance, &w.appearance1);
    let mask1 = att(&a1, &w.attention1);
    let a2 = conv(&naive_avgpool(&a1, pw), &w.appearance2);
    let mask2 = att(&a2, &w.attention2);
    let m1 = conv(motion, &w.motion1);
    let p1 = naive_avgpool(&naive_gate(&m1, &mask1), pw);
    let m2 = conv(&p1, &w.motion2);
    let p2 = naive_avgpool(&naive_gate(&m2, &mask2), pw);
    let hidden: Vec<f64> = naive_dense(p2.data(), &w.fc.weight.value, &w.fc.bias.value)
        .into_iter()
        .map(f64::tanh)
        .collect();
    naive_dense(&hidden, &w.head.weight.value, &w.head.bias.value)[0]
}
