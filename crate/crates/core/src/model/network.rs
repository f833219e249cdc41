use super::{CanConfig, CanWeights, Head, LayerParams, PARAM_NAMES, TRUNK_PARAMS};
use crate::error::{Error, Result};
use crate::layers::{
    activation_backward, dense, gemm, sigmoid, tanh, ActivationKind, AvgPool2d, Conv2d,
};
use crate::tensor::Tensor;

/// Spatial attention mask `[1, H, W]`, normalized so its values sum to `H*W/2`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMask {
    pub values: Tensor,
}

#[derive(Clone, Debug)]
struct AttentionTrace {
    conv: Conv2d,
    sig: Tensor,
    sum: f64,
    mask: Tensor,
}

fn attention_forward(features: &Tensor, layer: &LayerParams) -> Result<AttentionTrace> {
    if features.rank() != 3 {
        return Err(Error::shape(
            "attention",
            format!("features must be [C,H,W], got {:?}", features.shape()),
        ));
    }
    if layer.weight.value.shape() != [1, features.shape()[0], 1, 1] {
        return Err(Error::shape(
            "attention",
            format!(
                "attention conv {:?} is not a 1x1 {}->1 convolution",
                layer.weight.value.shape(),
                features.shape()[0]
            ),
        ));
    }
    let mut conv = Conv2d::new(0, 1);
    let z = conv.forward(features, &layer.weight.value, &layer.bias.value)?;
    let sig = z.map(sigmoid);
    let sum = sig.sum();
    let area = (features.shape()[1] * features.shape()[2]) as f64;
    let scale = area / (2.0 * sum);
    let mask = sig.map(|s| s * scale);
    Ok(AttentionTrace {
        conv,
        sig,
        sum,
        mask,
    })
}

/// `mask = H*W*sigmoid(z) / (2 * sum(sigmoid(z)))` with `z` a 1x1 convolution of the features.
pub fn attention_mask(features: &Tensor, attention_conv: &LayerParams) -> Result<AttentionMask> {
    Ok(AttentionMask {
        values: attention_forward(features, attention_conv)?.mask,
    })
}

/// Backward pass of [`attention_mask`] on its own: given `d loss / d mask`,
/// returns gradients for the features, the 1x1 weight and its bias.
pub fn attention_backward(
    features: &Tensor,
    attention_conv: &LayerParams,
    grad_mask: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let trace = attention_forward(features, attention_conv)?;
    if grad_mask.len() != trace.mask.len() {
        return Err(Error::shape(
            "attention backward",
            format!(
                "mask gradient {:?} vs mask {:?}",
                grad_mask.shape(),
                trace.mask.shape()
            ),
        ));
    }
    let dz = attention_logit_grad(&trace, grad_mask.data())?;
    let g = trace.conv.backward(&dz, &attention_conv.weight.value)?;
    Ok((g.input.expect("input grad"), g.kernel, g.bias))
}

/// Gradient w.r.t. the attention logits given the gradient w.r.t. the mask.
fn attention_logit_grad(trace: &AttentionTrace, grad_mask: &[f64]) -> Result<Tensor> {
    let s = trace.sig.data();
    let area = s.len() as f64;
    let c = area / (2.0 * trace.sum);
    let dot: f64 = grad_mask.iter().zip(s).map(|(g, s)| g * s).sum();
    let data = grad_mask
        .iter()
        .zip(s)
        .map(|(&g, &s)| c * (g - dot / trace.sum) * s * (1.0 - s))
        .collect();
    Tensor::new(trace.sig.shape(), data)
}

fn gate(features: &Tensor, mask: &Tensor) -> Tensor {
    let plane = mask.len();
    let m = mask.data();
    let data = features
        .data()
        .chunks(plane)
        .flat_map(|ch| ch.iter().zip(m).map(|(f, w)| f * w))
        .collect();
    Tensor::new(features.shape(), data).expect("gate keeps shape")
}

/// Intermediate values of one forward pass, kept for backpropagation.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    app1: Conv2d,
    a1: Tensor,
    att1: AttentionTrace,
    pool_a: AvgPool2d,
    app2: Conv2d,
    a2: Tensor,
    att2: AttentionTrace,
    mot1: Conv2d,
    m1: Tensor,
    pool_m1: AvgPool2d,
    mot2: Conv2d,
    m2: Tensor,
    pool_m2: AvgPool2d,
    /// Flattened pooled motion features (input of the fc layer).
    pub features: Tensor,
    /// fc activations after tanh.
    pub hidden: Tensor,
    /// Head pre-activation.
    pub logit: f64,
}

impl ForwardTrace {
    pub fn mask1(&self) -> &Tensor {
        &self.att1.mask
    }

    pub fn mask2(&self) -> &Tensor {
        &self.att2.mask
    }
}

fn check_inputs(config: &CanConfig, motion: &Tensor, appearance: &Tensor) -> Result<()> {
    let want = [config.input_channels, config.input_side, config.input_side];
    for (name, t) in [("motion", motion), ("appearance", appearance)] {
        if t.shape() != want {
            return Err(Error::shape(
                "network input",
                format!(
                    "{name} input {:?} does not match config {:?}",
                    t.shape(),
                    want
                ),
            ));
        }
    }
    Ok(())
}

fn conv_tanh(conv: &mut Conv2d, input: &Tensor, layer: &LayerParams) -> Result<Tensor> {
    Ok(conv
        .forward(input, &layer.weight.value, &layer.bias.value)?
        .map(tanh))
}

/// Full forward pass with every intermediate retained.
pub fn forward_trace(
    motion: &Tensor,
    appearance: &Tensor,
    weights: &CanWeights,
) -> Result<ForwardTrace> {
    let cfg = &weights.config;
    check_inputs(cfg, motion, appearance)?;
    let pad = cfg.padding();

    let mut app1 = Conv2d::new(pad, 1);
    let a1 = conv_tanh(&mut app1, appearance, &weights.appearance1)?;
    let att1 = attention_forward(&a1, &weights.attention1)?;
    let mut pool_a = AvgPool2d::new(cfg.pool_window);
    let a1p = pool_a.forward(&a1)?;
    let mut app2 = Conv2d::new(pad, 1);
    let a2 = conv_tanh(&mut app2, &a1p, &weights.appearance2)?;
    let att2 = attention_forward(&a2, &weights.attention2)?;

    let mut mot1 = Conv2d::new(pad, 1);
    let m1 = conv_tanh(&mut mot1, motion, &weights.motion1)?;
    let mut pool_m1 = AvgPool2d::new(cfg.pool_window);
    let p1 = pool_m1.forward(&gate(&m1, &att1.mask))?;
    let mut mot2 = Conv2d::new(pad, 1);
    let m2 = conv_tanh(&mut mot2, &p1, &weights.motion2)?;
    let mut pool_m2 = AvgPool2d::new(cfg.pool_window);
    let p2 = pool_m2.forward(&gate(&m2, &att2.mask))?;
    let features = p2.reshape(&[cfg.feature_len()])?;

    let (hidden, logit) = head_forward(weights, &features)?;
    Ok(ForwardTrace {
        app1,
        a1,
        att1,
        pool_a,
        app2,
        a2,
        att2,
        mot1,
        m1,
        pool_m1,
        mot2,
        m2,
        pool_m2,
        features,
        hidden,
        logit,
    })
}

/// Flattened pooled motion features: everything the frozen trunk computes.
pub fn trunk_features(
    motion: &Tensor,
    appearance: &Tensor,
    weights: &CanWeights,
) -> Result<Tensor> {
    Ok(forward_trace(motion, appearance, weights)?.features)
}

/// fc layer with tanh, then the linear head. Returns `(hidden, logit)`.
pub fn head_forward(weights: &CanWeights, features: &Tensor) -> Result<(Tensor, f64)> {
    let hidden = dense(features, &weights.fc.weight.value, &weights.fc.bias.value)?.map(tanh);
    let logit = dense(
        &hidden,
        &weights.head.weight.value,
        &weights.head.bias.value,
    )?
    .data()[0];
    if !logit.is_finite() {
        return Err(Error::NonFinite {
            context: "network output".into(),
        });
    }
    Ok((hidden, logit))
}

/// Detection score in (0, 1): probability the face is real.
pub fn forward(motion: &Tensor, appearance: &Tensor, weights: &CanWeights) -> Result<f64> {
    if weights.config.head != Head::Classification {
        return Err(Error::InvalidArgument(
            "forward needs a classification head".into(),
        ));
    }
    Ok(sigmoid(forward_trace(motion, appearance, weights)?.logit))
}

/// Unbounded pulse-derivative estimate from the regression head.
pub fn forward_hr(motion: &Tensor, appearance: &Tensor, weights: &CanWeights) -> Result<f64> {
    if weights.config.head != Head::Regression {
        return Err(Error::InvalidArgument(
            "forward_hr needs a regression head".into(),
        ));
    }
    Ok(forward_trace(motion, appearance, weights)?.logit)
}

/// Gradients for every parameter, in [`PARAM_NAMES`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Tensor>,
}

impl Gradients {
    pub fn zeros_like(weights: &CanWeights) -> Self {
        Gradients {
            tensors: weights
                .params()
                .iter()
                .map(|p| Tensor::zeros(p.value.shape()))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) -> Result<()> {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.add_assign(b)?;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        self.tensors.iter_mut().for_each(|t| t.scale(factor));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        PARAM_NAMES
            .iter()
            .position(|&n| n == name)
            .map(|i| &self.tensors[i])
    }

    /// Copy into the parameters' gradient buffers.
    pub fn store(self, weights: &mut CanWeights) {
        for (p, g) in weights.params_mut().into_iter().zip(self.tensors) {
            p.grad = g;
        }
    }
}

/// `d loss / d fc pre-activation` given `d loss / d logit`.
pub fn fc_pre_grad(weights: &CanWeights, hidden: &Tensor, grad_logit: f64) -> Tensor {
    let data = weights
        .head
        .weight
        .value
        .data()
        .iter()
        .zip(hidden.data())
        .map(|(&v, &h)| grad_logit * v * (1.0 - h * h))
        .collect();
    Tensor::new(hidden.shape(), data).expect("head width matches fc")
}

/// One sample's gradients, with the fc weight gradient left in factored form
/// `grad_pre x features` so a batch can build it with one matrix product.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleGradients {
    /// Gradients of the trunk parameters; `None` when the trunk is frozen.
    pub trunk: Option<Vec<Tensor>>,
    /// `d loss / d fc pre-activation`.
    pub grad_pre: Tensor,
    pub grad_logit: f64,
}

/// Sum per-sample gradients into full parameter gradients, scaled by `scale`.
///
/// Each row holds the sample gradients with the fc input (features) and fc
/// output (hidden) of that sample. Sums run in row order.
pub fn combine_gradients(
    weights: &CanWeights,
    rows: &[(SampleGradients, &Tensor, &Tensor)],
    scale: f64,
) -> Result<Gradients> {
    let params = weights.params();
    let mut tensors: Vec<Tensor> = params[..TRUNK_PARAMS]
        .iter()
        .map(|p| Tensor::zeros(p.value.shape()))
        .collect();
    for (g, _, _) in rows {
        if let Some(trunk) = &g.trunk {
            for (acc, t) in tensors.iter_mut().zip(trunk) {
                acc.add_assign(t)?;
            }
        }
    }
    let (m, n) = (weights.config.fc_size, weights.config.feature_len());
    let k = rows.len();
    let mut pre = Vec::with_capacity(k * m);
    let mut feats = Vec::with_capacity(k * n);
    let mut fc_b = vec![0.0; m];
    let mut head_w = vec![0.0; m];
    let mut head_b = 0.0;
    for (g, features, hidden) in rows {
        if g.grad_pre.len() != m || features.len() != n || hidden.len() != m {
            return Err(Error::shape(
                "combine gradients",
                format!(
                    "grad_pre {:?}, features {:?}, hidden {:?}",
                    g.grad_pre.shape(),
                    features.shape(),
                    hidden.shape()
                ),
            ));
        }
        pre.extend_from_slice(g.grad_pre.data());
        feats.extend_from_slice(features.data());
        for ((b, w), (&p, &h)) in fc_b
            .iter_mut()
            .zip(head_w.iter_mut())
            .zip(g.grad_pre.data().iter().zip(hidden.data()))
        {
            *b += p;
            *w += g.grad_logit * h;
        }
        head_b += g.grad_logit;
    }
    let mut fc_w = vec![0.0; m * n];
    if k > 0 {
        gemm(m, k, n, &pre, true, &feats, false, &mut fc_w, 0.0);
    }
    tensors.push(Tensor::new(&[m, n], fc_w)?);
    tensors.push(Tensor::new(&[m], fc_b)?);
    tensors.push(Tensor::new(&[1, m], head_w)?);
    tensors.push(Tensor::new(&[1], vec![head_b])?);
    let mut grads = Gradients { tensors };
    if scale != 1.0 {
        grads.scale(scale);
    }
    Ok(grads)
}

fn ungate(grad: &Tensor, features: &Tensor, mask: &Tensor) -> (Tensor, Vec<f64>) {
    let plane = mask.len();
    let m = mask.data();
    let mut grad_mask = vec![0.0; plane];
    let mut grad_features = Vec::with_capacity(grad.len());
    for (g_ch, f_ch) in grad.data().chunks(plane).zip(features.data().chunks(plane)) {
        for i in 0..plane {
            grad_features.push(g_ch[i] * m[i]);
            grad_mask[i] += g_ch[i] * f_ch[i];
        }
    }
    (
        Tensor::new(grad.shape(), grad_features).expect("same shape"),
        grad_mask,
    )
}

/// Backpropagate `d loss / d logit` through a traced forward pass.
pub fn backward(trace: &ForwardTrace, weights: &CanWeights, grad_logit: f64) -> Result<Gradients> {
    let g = backward_sample(trace, weights, grad_logit)?;
    combine_gradients(weights, &[(g, &trace.features, &trace.hidden)], 1.0)
}

/// Per-sample backward pass. Trunk gradients are only computed when some
/// trunk parameter is trainable.
pub fn backward_sample(
    trace: &ForwardTrace,
    weights: &CanWeights,
    grad_logit: f64,
) -> Result<SampleGradients> {
    let grad_pre = fc_pre_grad(weights, &trace.hidden, grad_logit);
    if weights.trunk_frozen() {
        return Ok(SampleGradients {
            trunk: None,
            grad_pre,
            grad_logit,
        });
    }
    // d features = fc_weight^T grad_pre
    let (m, n) = (weights.config.fc_size, weights.config.feature_len());
    let mut grad_features = vec![0.0; n];
    gemm(
        1,
        m,
        n,
        grad_pre.data(),
        false,
        weights.fc.weight.value.data(),
        false,
        &mut grad_features,
        0.0,
    );
    let grad_features = Tensor::from_vec(grad_features);

    let cfg = &weights.config;
    let side2 = cfg.block2_side();
    let n2 = cfg.conv_filters.1;

    // motion block 2
    let grad_p2 = grad_features.reshape(&[n2, cfg.feature_side(), cfg.feature_side()])?;
    let grad_g2 = trace.pool_m2.backward(&grad_p2)?;
    let (grad_m2, grad_mask2) = ungate(&grad_g2, &trace.m2, &trace.att2.mask);
    let pre_m2 = activation_backward(&grad_m2, &trace.m2, ActivationKind::Tanh)?;
    let mot2 = trace
        .mot2
        .backward(&pre_m2, &weights.motion2.weight.value)?;

    // motion block 1
    let grad_g1 = trace
        .pool_m1
        .backward(mot2.input.as_ref().expect("input grad"))?;
    let (grad_m1, grad_mask1) = ungate(&grad_g1, &trace.m1, &trace.att1.mask);
    let pre_m1 = activation_backward(&grad_m1, &trace.m1, ActivationKind::Tanh)?;
    let mot1 = trace
        .mot1
        .backward_with(&pre_m1, &weights.motion1.weight.value, false)?;

    // attention 2 and appearance block 2
    let dz2 = attention_logit_grad(&trace.att2, &grad_mask2)?;
    let att2 = trace
        .att2
        .conv
        .backward(&dz2, &weights.attention2.weight.value)?;
    let grad_a2 = att2.input.expect("input grad");
    debug_assert_eq!(grad_a2.shape(), [n2, side2, side2]);
    let pre_a2 = activation_backward(&grad_a2, &trace.a2, ActivationKind::Tanh)?;
    let app2 = trace
        .app2
        .backward(&pre_a2, &weights.appearance2.weight.value)?;

    // attention 1 and appearance block 1
    let mut grad_a1 = trace
        .pool_a
        .backward(app2.input.as_ref().expect("input grad"))?;
    let dz1 = attention_logit_grad(&trace.att1, &grad_mask1)?;
    let att1 = trace
        .att1
        .conv
        .backward(&dz1, &weights.attention1.weight.value)?;
    grad_a1.add_assign(att1.input.as_ref().expect("input grad"))?;
    let pre_a1 = activation_backward(&grad_a1, &trace.a1, ActivationKind::Tanh)?;
    let app1 = trace
        .app1
        .backward_with(&pre_a1, &weights.appearance1.weight.value, false)?;

    let trunk = [
        app1.kernel,
        app1.bias,
        att1.kernel,
        att1.bias,
        app2.kernel,
        app2.bias,
        att2.kernel,
        att2.bias,
        mot1.kernel,
        mot1.bias,
        mot2.kernel,
        mot2.bias,
    ];
    Ok(SampleGradients {
        trunk: Some(Vec::from(trunk)),
        grad_pre,
        grad_logit,
    })
}
