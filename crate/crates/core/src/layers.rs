//! Forward and backward kernels for the layers used by the attention network.
//!
//! Convolutions use cross-correlation semantics (no kernel flip) and are
//! lowered to an im2col matrix product. Every layer object caches what its
//! backward pass needs; calling `backward` before `forward` is an error.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Clamp applied to scores before the binary cross-entropy.
pub const BCE_EPS: f64 = 1e-7;

/// `c = beta * c + op(a) * op(b)` with `op(a)` of shape `m x k`, `op(b)` of shape `k x n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_transposed: bool,
    b: &[f64],
    b_transposed: bool,
    c: &mut [f64],
    beta: f64,
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_transposed { (1, m) } else { (k, 1) };
    let (rsb, csb) = if b_transposed { (1, k) } else { (n, 1) };
    // SAFETY: slice lengths are checked above against the extents and strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn expect_rank(op: &'static str, t: &Tensor, rank: usize) -> Result<()> {
    if t.rank() != rank {
        return Err(Error::shape(
            op,
            format!("expected rank {rank}, got shape {:?}", t.shape()),
        ));
    }
    Ok(())
}

#[derive(Clone, Debug)]
struct ConvCache {
    input_shape: [usize; 3],
    cols: Vec<f64>,
    out_h: usize,
    out_w: usize,
}

/// 2-D convolution layer over `[C, H, W]` inputs.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub padding: usize,
    pub stride: usize,
    cache: Option<ConvCache>,
}

/// Gradients of a convolution with respect to its three arguments.
#[derive(Clone, Debug)]
pub struct Conv2dGrads {
    pub input: Option<Tensor>,
    pub kernel: Tensor,
    pub bias: Tensor,
}

impl Conv2d {
    pub fn new(padding: usize, stride: usize) -> Self {
        Conv2d {
            padding,
            stride,
            cache: None,
        }
    }

    fn geometry(&self, input: &Tensor, kernel: &Tensor, bias: &Tensor) -> Result<(usize, usize)> {
        expect_rank("conv2d", input, 3)?;
        expect_rank("conv2d", kernel, 4)?;
        let [c_in, h, w] = [input.shape()[0], input.shape()[1], input.shape()[2]];
        let ks = kernel.shape();
        if ks[1] != c_in {
            return Err(Error::shape(
                "conv2d",
                format!("kernel expects {} input channels, input has {c_in}", ks[1]),
            ));
        }
        if ks[2] != ks[3] {
            return Err(Error::shape("conv2d", format!("non-square kernel {ks:?}")));
        }
        if bias.shape() != [ks[0]] {
            return Err(Error::shape(
                "conv2d",
                format!("bias shape {:?} for {} filters", bias.shape(), ks[0]),
            ));
        }
        if self.stride == 0 {
            return Err(Error::InvalidArgument("conv2d stride must be >= 1".into()));
        }
        let k = ks[2];
        if k > h + 2 * self.padding || k > w + 2 * self.padding {
            return Err(Error::shape(
                "conv2d",
                format!(
                    "kernel {k} larger than padded input {h}x{w} (padding {})",
                    self.padding
                ),
            ));
        }
        let out_h = (h + 2 * self.padding - k) / self.stride + 1;
        let out_w = (w + 2 * self.padding - k) / self.stride + 1;
        Ok((out_h, out_w))
    }

    pub fn forward(&mut self, input: &Tensor, kernel: &Tensor, bias: &Tensor) -> Result<Tensor> {
        let (out_h, out_w) = self.geometry(input, kernel, bias)?;
        let [c_in, h, w] = [input.shape()[0], input.shape()[1], input.shape()[2]];
        let c_out = kernel.shape()[0];
        let k = kernel.shape()[2];
        let cols = im2col(
            input.data(),
            c_in,
            h,
            w,
            k,
            self.padding,
            self.stride,
            out_h,
            out_w,
        );

        let plane = out_h * out_w;
        let mut out = vec![0.0; c_out * plane];
        for (o, row) in out.chunks_mut(plane).enumerate() {
            row.fill(bias.data()[o]);
        }
        gemm(
            c_out,
            c_in * k * k,
            plane,
            kernel.data(),
            false,
            &cols,
            false,
            &mut out,
            1.0,
        );

        self.cache = Some(ConvCache {
            input_shape: [c_in, h, w],
            cols,
            out_h,
            out_w,
        });
        Tensor::new(&[c_out, out_h, out_w], out)
    }

    /// Gradients for input, kernel and bias.
    pub fn backward(&self, grad_out: &Tensor, kernel: &Tensor) -> Result<Conv2dGrads> {
        self.backward_with(grad_out, kernel, true)
    }

    /// Like [`Conv2d::backward`], skipping the input gradient when `need_input` is false.
    pub fn backward_with(
        &self,
        grad_out: &Tensor,
        kernel: &Tensor,
        need_input: bool,
    ) -> Result<Conv2dGrads> {
        let cache = self.cache.as_ref().ok_or(Error::MissingCache("conv2d"))?;
        let c_out = kernel.shape()[0];
        let k = kernel.shape()[2];
        let [c_in, h, w] = cache.input_shape;
        if grad_out.shape() != [c_out, cache.out_h, cache.out_w] {
            return Err(Error::shape(
                "conv2d backward",
                format!(
                    "grad_out {:?}, expected {:?}",
                    grad_out.shape(),
                    [c_out, cache.out_h, cache.out_w]
                ),
            ));
        }
        let plane = cache.out_h * cache.out_w;
        let patch = c_in * k * k;
        let g = grad_out.data();

        let bias: Vec<f64> = g.chunks(plane).map(|row| row.iter().sum()).collect();

        let mut grad_kernel = vec![0.0; c_out * patch];
        gemm(
            c_out,
            plane,
            patch,
            g,
            false,
            &cache.cols,
            true,
            &mut grad_kernel,
            0.0,
        );

        let input = if need_input {
            let mut grad_cols = vec![0.0; patch * plane];
            gemm(
                patch,
                c_out,
                plane,
                kernel.data(),
                true,
                g,
                false,
                &mut grad_cols,
                0.0,
            );
            let grad_in = col2im(
                &grad_cols,
                c_in,
                h,
                w,
                k,
                self.padding,
                self.stride,
                cache.out_h,
                cache.out_w,
            );
            Some(Tensor::new(&[c_in, h, w], grad_in)?)
        } else {
            None
        };

        Ok(Conv2dGrads {
            input,
            kernel: Tensor::new(kernel.shape(), grad_kernel)?,
            bias: Tensor::new(&[c_out], bias)?,
        })
    }
}

#[allow(clippy::too_many_arguments)]
fn im2col(
    input: &[f64],
    c_in: usize,
    h: usize,
    w: usize,
    k: usize,
    padding: usize,
    stride: usize,
    out_h: usize,
    out_w: usize,
) -> Vec<f64> {
    let plane = out_h * out_w;
    let mut cols = vec![0.0; c_in * k * k * plane];
    for c in 0..c_in {
        for ki in 0..k {
            for kj in 0..k {
                let row = &mut cols[((c * k + ki) * k + kj) * plane..][..plane];
                for oy in 0..out_h {
                    let iy = (oy * stride + ki) as isize - padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &input[(c * h + iy as usize) * w..][..w];
                    for ox in 0..out_w {
                        let ix = (ox * stride + kj) as isize - padding as isize;
                        if ix >= 0 && ix < w as isize {
                            row[oy * out_w + ox] = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

#[allow(clippy::too_many_arguments)]
fn col2im(
    cols: &[f64],
    c_in: usize,
    h: usize,
    w: usize,
    k: usize,
    padding: usize,
    stride: usize,
    out_h: usize,
    out_w: usize,
) -> Vec<f64> {
    let plane = out_h * out_w;
    let mut out = vec![0.0; c_in * h * w];
    for c in 0..c_in {
        for ki in 0..k {
            for kj in 0..k {
                let row = &cols[((c * k + ki) * k + kj) * plane..][..plane];
                for oy in 0..out_h {
                    let iy = (oy * stride + ki) as isize - padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut out[(c * h + iy as usize) * w..][..w];
                    for ox in 0..out_w {
                        let ix = (ox * stride + kj) as isize - padding as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += row[oy * out_w + ox];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Convolution without keeping a backward cache.
pub fn conv2d_forward(
    input: &Tensor,
    kernel: &Tensor,
    bias: &Tensor,
    padding: usize,
    stride: usize,
) -> Result<Tensor> {
    Conv2d::new(padding, stride).forward(input, kernel, bias)
}

/// Non-overlapping average pooling with a square window.
#[derive(Clone, Debug)]
pub struct AvgPool2d {
    pub window: usize,
    input_shape: Option<[usize; 3]>,
}

impl AvgPool2d {
    pub fn new(window: usize) -> Self {
        AvgPool2d {
            window,
            input_shape: None,
        }
    }

    pub fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        expect_rank("avgpool2d", input, 3)?;
        let [c, h, w] = [input.shape()[0], input.shape()[1], input.shape()[2]];
        let win = self.window;
        if win == 0 || h % win != 0 || w % win != 0 {
            return Err(Error::shape(
                "avgpool2d",
                format!("window {win} does not divide {h}x{w}"),
            ));
        }
        let (oh, ow) = (h / win, w / win);
        let norm = 1.0 / (win * win) as f64;
        let src = input.data();
        let mut out = vec![0.0; c * oh * ow];
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for dy in 0..win {
                        let row = (ch * h + oy * win + dy) * w + ox * win;
                        acc += src[row..row + win].iter().sum::<f64>();
                    }
                    out[(ch * oh + oy) * ow + ox] = acc * norm;
                }
            }
        }
        self.input_shape = Some([c, h, w]);
        Tensor::new(&[c, oh, ow], out)
    }

    pub fn backward(&self, grad_out: &Tensor) -> Result<Tensor> {
        let [c, h, w] = self.input_shape.ok_or(Error::MissingCache("avgpool2d"))?;
        let win = self.window;
        let (oh, ow) = (h / win, w / win);
        if grad_out.shape() != [c, oh, ow] {
            return Err(Error::shape(
                "avgpool2d backward",
                format!(
                    "grad_out {:?}, expected {:?}",
                    grad_out.shape(),
                    [c, oh, ow]
                ),
            ));
        }
        let norm = 1.0 / (win * win) as f64;
        let g = grad_out.data();
        let mut out = vec![0.0; c * h * w];
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    out[(ch * h + y) * w + x] = g[(ch * oh + y / win) * ow + x / win] * norm;
                }
            }
        }
        Tensor::new(&[c, h, w], out)
    }
}

pub fn avgpool2d(input: &Tensor, window: usize) -> Result<Tensor> {
    AvgPool2d::new(window).forward(input)
}

/// Fully-connected layer `y = W x + b`.
#[derive(Clone, Debug, Default)]
pub struct Dense {
    input: Option<Tensor>,
}

#[derive(Clone, Debug)]
pub struct DenseGrads {
    pub input: Tensor,
    pub weights: Tensor,
    pub bias: Tensor,
}

impl Dense {
    pub fn new() -> Self {
        Dense { input: None }
    }

    pub fn forward(&mut self, input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
        let out = dense(input, weights, bias)?;
        self.input = Some(input.clone());
        Ok(out)
    }

    pub fn backward(&self, grad_out: &Tensor, weights: &Tensor) -> Result<DenseGrads> {
        let input = self.input.as_ref().ok_or(Error::MissingCache("dense"))?;
        dense_backward(grad_out, input, weights)
    }
}

pub fn dense(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    expect_rank("dense", weights, 2)?;
    let (m, n) = (weights.shape()[0], weights.shape()[1]);
    if input.len() != n || bias.len() != m || bias.rank() != 1 {
        return Err(Error::shape(
            "dense",
            format!(
                "input {:?}, weights {:?}, bias {:?}",
                input.shape(),
                weights.shape(),
                bias.shape()
            ),
        ));
    }
    let x = input.data();
    let out = weights
        .data()
        .chunks(n)
        .zip(bias.data())
        .map(|(row, b)| dot(row, x) + b)
        .collect();
    Tensor::new(&[m], out)
}

/// Dot product with eight interleaved partial sums, reduced in a fixed order.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// Gradients of [`dense`] given the forward input.
pub fn dense_backward(grad_out: &Tensor, input: &Tensor, weights: &Tensor) -> Result<DenseGrads> {
    expect_rank("dense backward", weights, 2)?;
    let (m, n) = (weights.shape()[0], weights.shape()[1]);
    if grad_out.len() != m || input.len() != n {
        return Err(Error::shape(
            "dense backward",
            format!(
                "grad_out {:?}, input {:?}, weights {:?}",
                grad_out.shape(),
                input.shape(),
                weights.shape()
            ),
        ));
    }
    let g = grad_out.data();
    let x = input.data();
    let mut grad_w = vec![0.0; m * n];
    let mut grad_x = vec![0.0; n];
    for ((gw_row, w_row), &gi) in grad_w.chunks_mut(n).zip(weights.data().chunks(n)).zip(g) {
        for ((gw, xj), (gx, w)) in gw_row.iter_mut().zip(x).zip(grad_x.iter_mut().zip(w_row)) {
            *gw = gi * xj;
            *gx += w * gi;
        }
    }
    Ok(DenseGrads {
        input: Tensor::new(input.shape(), grad_x)?,
        weights: Tensor::new(&[m, n], grad_w)?,
        bias: Tensor::new(&[m], g.to_vec())?,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActivationKind {
    Tanh,
    Sigmoid,
}

/// Hyperbolic tangent, accurate to a few ulps and roughly twice as fast as
/// `f64::tanh` on the hot conv activations.
pub fn tanh(x: f64) -> f64 {
    let a = x.abs();
    if a < 0.02 {
        let x2 = x * x;
        return x * (1.0 + x2 * (-1.0 / 3.0 + x2 * (2.0 / 15.0 + x2 * (-17.0 / 315.0))));
    }
    if a > 19.0 {
        return 1.0f64.copysign(x);
    }
    let e = (2.0 * a).exp();
    ((e - 1.0) / (e + 1.0)).copysign(x)
}

/// Logistic function kept strictly inside (0, 1).
pub fn sigmoid(x: f64) -> f64 {
    let y = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    y.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

pub fn activation(input: &Tensor, kind: ActivationKind) -> Tensor {
    match kind {
        ActivationKind::Tanh => input.map(tanh),
        ActivationKind::Sigmoid => input.map(sigmoid),
    }
}

/// Backward through an activation, expressed in terms of its forward output.
pub fn activation_backward(
    grad_out: &Tensor,
    output: &Tensor,
    kind: ActivationKind,
) -> Result<Tensor> {
    if grad_out.shape() != output.shape() {
        return Err(Error::shape(
            "activation backward",
            format!("{:?} vs {:?}", grad_out.shape(), output.shape()),
        ));
    }
    let data = grad_out
        .data()
        .iter()
        .zip(output.data())
        .map(|(&g, &y)| match kind {
            ActivationKind::Tanh => g * (1.0 - y * y),
            ActivationKind::Sigmoid => g * y * (1.0 - y),
        })
        .collect();
    Tensor::new(output.shape(), data)
}

fn check_label(label: f64) -> Result<()> {
    if label != 0.0 && label != 1.0 {
        return Err(Error::InvalidArgument(format!(
            "binary label must be 0 or 1, got {label}"
        )));
    }
    Ok(())
}

/// Binary cross-entropy of a score in (0, 1) against a 0/1 label.
pub fn bce_loss(score: f64, label: f64) -> Result<f64> {
    check_label(label)?;
    let s = score.clamp(BCE_EPS, 1.0 - BCE_EPS);
    Ok(-label * s.ln() - (1.0 - label) * (1.0 - s).ln())
}

/// Derivative of [`bce_loss`] with respect to the score, evaluated at the clamped score.
pub fn bce_backward(score: f64, label: f64) -> Result<f64> {
    check_label(label)?;
    let s = score.clamp(BCE_EPS, 1.0 - BCE_EPS);
    Ok(-label / s + (1.0 - label) / (1.0 - s))
}

pub fn mse_loss(prediction: f64, target: f64) -> f64 {
    let d = prediction - target;
    d * d
}

pub fn mse_backward(prediction: f64, target: f64) -> f64 {
    2.0 * (prediction - target)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn conv_scalar_multiply() {
        let out = conv2d_forward(
            &t(&[1, 1, 1], &[5.0]),
            &t(&[1, 1, 1, 1], &[2.0]),
            &t(&[1], &[0.0]),
            0,
            1,
        )
        .unwrap();
        assert_eq!(out.shape(), &[1, 1, 1]);
        assert_eq!(out.data(), &[10.0]);
    }

    #[test]
    fn conv_window_sum() {
        let out = conv2d_forward(
            &Tensor::filled(&[1, 3, 3], 1.0),
            &Tensor::filled(&[1, 1, 3, 3], 1.0),
            &t(&[1], &[0.0]),
            0,
            1,
        )
        .unwrap();
        assert_eq!(out.data(), &[9.0]);
    }

    #[test]
    fn conv_output_extent_with_padding_and_stride() {
        let out = conv2d_forward(
            &Tensor::filled(&[2, 7, 5], 1.0),
            &Tensor::filled(&[3, 2, 3, 3], 1.0),
            &Tensor::zeros(&[3]),
            1,
            2,
        )
        .unwrap();
        assert_eq!(out.shape(), &[3, 4, 3]);
        // interior window covers 2 channels x 9 taps
        assert_eq!(out.at(&[0, 1, 1]), 18.0);
        // corner window sees 2 x 4 taps
        assert_eq!(out.at(&[0, 0, 0]), 8.0);
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let err = conv2d_forward(
            &Tensor::zeros(&[2, 4, 4]),
            &Tensor::zeros(&[1, 3, 3, 3]),
            &Tensor::zeros(&[1]),
            0,
            1,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Shape { op: "conv2d", .. }));
        assert!(conv2d_forward(
            &Tensor::zeros(&[1, 2, 2]),
            &Tensor::zeros(&[1, 1, 3, 3]),
            &Tensor::zeros(&[1]),
            0,
            1
        )
        .is_err());
    }

    #[test]
    fn conv_backward_requires_cache() {
        let conv = Conv2d::new(0, 1);
        let err = conv
            .backward(&Tensor::zeros(&[1, 1, 1]), &Tensor::zeros(&[1, 1, 1, 1]))
            .unwrap_err();
        assert!(matches!(err, Error::MissingCache("conv2d")));
    }

    #[test]
    fn conv_backward_zero_grad_out() {
        let mut conv = Conv2d::new(1, 1);
        let input = Tensor::new(&[2, 4, 4], (0..32).map(|i| (i as f64).sin()).collect()).unwrap();
        let kernel =
            Tensor::new(&[3, 2, 3, 3], (0..54).map(|i| (i as f64).cos()).collect()).unwrap();
        let out = conv.forward(&input, &kernel, &Tensor::zeros(&[3])).unwrap();
        let g = conv.backward(&Tensor::zeros(out.shape()), &kernel).unwrap();
        assert!(g.input.unwrap().data().iter().all(|&x| x == 0.0));
        assert!(g.kernel.data().iter().all(|&x| x == 0.0));
        assert!(g.bias.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn conv_backward_1x1_reduces_to_products() {
        let mut conv = Conv2d::new(0, 1);
        let input = t(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let kernel = t(&[1, 1, 1, 1], &[0.5]);
        conv.forward(&input, &kernel, &t(&[1], &[0.0])).unwrap();
        let grad_out = t(&[1, 2, 2], &[0.1, -0.2, 0.3, 0.4]);
        let g = conv.backward(&grad_out, &kernel).unwrap();
        let expected: f64 = input
            .data()
            .iter()
            .zip(grad_out.data())
            .map(|(a, b)| a * b)
            .sum();
        assert_abs_diff_eq!(g.kernel.data()[0], expected, epsilon = 1e-15);
        assert_abs_diff_eq!(g.bias.data()[0], 0.6, epsilon = 1e-15);
        let gi = g.input.unwrap();
        for (a, b) in gi.data().iter().zip(grad_out.data()) {
            assert_abs_diff_eq!(*a, 0.5 * b, epsilon = 1e-15);
        }
    }

    #[test]
    fn avgpool_mean_and_errors() {
        let out = avgpool2d(&t(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0]), 2).unwrap();
        assert_eq!(out.data(), &[2.5]);
        let c = avgpool2d(&Tensor::filled(&[3, 4, 6], 0.7), 2).unwrap();
        assert!(c.data().iter().all(|&x| (x - 0.7).abs() < 1e-15));
        assert!(avgpool2d(&Tensor::zeros(&[1, 3, 4]), 2).is_err());
        assert!(matches!(
            AvgPool2d::new(2).backward(&Tensor::zeros(&[1, 1, 1])),
            Err(Error::MissingCache(_))
        ));
    }

    #[test]
    fn dense_identity_and_bias() {
        let x = t(&[3], &[1.0, -2.0, 3.5]);
        let mut eye = Tensor::zeros(&[3, 3]);
        for i in 0..3 {
            eye.data_mut()[i * 3 + i] = 1.0;
        }
        assert_eq!(dense(&x, &eye, &Tensor::zeros(&[3])).unwrap(), x);
        let b = t(&[2], &[0.25, -4.0]);
        assert_eq!(dense(&x, &Tensor::zeros(&[2, 3]), &b).unwrap(), b);
        assert!(dense(&x, &Tensor::zeros(&[2, 4]), &b).is_err());
    }

    #[test]
    fn tanh_matches_std() {
        for i in -4000..=4000 {
            let x = i as f64 * 0.00731;
            let (a, b) = (tanh(x), x.tanh());
            assert!(
                (a - b).abs() <= 1e-14 * b.abs().max(1e-300),
                "{x}: {a} vs {b}"
            );
        }
        assert_eq!(tanh(0.0), 0.0);
        assert_eq!(tanh(50.0), 1.0);
        assert_eq!(tanh(-50.0), -1.0);
    }

    #[test]
    fn activations_at_zero() {
        let z = Tensor::zeros(&[1]);
        assert_eq!(activation(&z, ActivationKind::Sigmoid).data(), &[0.5]);
        assert_eq!(activation(&z, ActivationKind::Tanh).data(), &[0.0]);
        for x in [-1e3, -40.0, 40.0, 1e3] {
            let s = sigmoid(x);
            assert!(s > 0.0 && s < 1.0, "sigmoid({x}) = {s}");
        }
    }

    #[test]
    fn bce_values() {
        assert!(bce_loss(1.0 - BCE_EPS, 1.0).unwrap() < 1e-6);
        assert_abs_diff_eq!(
            bce_loss(0.5, 1.0).unwrap(),
            std::f64::consts::LN_2,
            epsilon = 1e-12
        );
        assert!(bce_loss(0.5, 2.0).is_err());
        assert!(bce_backward(0.5, -1.0).is_err());
        // clamp keeps the loss finite at the extremes
        assert!(bce_loss(0.0, 1.0).unwrap().is_finite());
        assert!(bce_loss(1.0, 0.0).unwrap().is_finite());
    }

    #[test]
    fn mse_values() {
        assert_eq!(mse_loss(1.25, 1.25), 0.0);
        assert_eq!(mse_loss(3.0, 1.0), 4.0);
        assert_eq!(mse_backward(3.0, 1.0), 4.0);
    }
}
