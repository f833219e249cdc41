//! Two-branch convolutional attention network.
//!
//! The appearance branch looks at a standardized frame and emits a spatial
//! attention mask after each of its two conv blocks. The motion branch looks
//! at the normalized frame difference; its conv features are gated by those
//! masks, pooled, and passed through a fully-connected layer and an output
//! head (linear for pulse-derivative regression, sigmoid for detection).

mod io;
mod network;

pub use io::{
    load_weights, read_weights, save_weights, write_weights, WEIGHT_MAGIC, WEIGHT_VERSION,
};
pub use network::{
    attention_backward, attention_mask, backward, backward_sample, combine_gradients, fc_pre_grad,
    forward, forward_hr, forward_trace, head_forward, trunk_features, AttentionMask, ForwardTrace,
    Gradients, SampleGradients,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Parameter, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Head {
    Regression,
    Classification,
}

impl Head {
    pub(crate) fn code(self) -> u32 {
        match self {
            Head::Regression => 0,
            Head::Classification => 1,
        }
    }

    pub(crate) fn from_code(code: u32) -> Option<Head> {
        match code {
            0 => Some(Head::Regression),
            1 => Some(Head::Classification),
            _ => None,
        }
    }
}

/// Geometry of the network.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CanConfig {
    /// Side of the square model inputs.
    pub input_side: usize,
    pub input_channels: usize,
    /// Filter counts of the first and second conv block of each branch.
    pub conv_filters: (usize, usize),
    pub kernel_size: usize,
    pub pool_window: usize,
    pub fc_size: usize,
    pub head: Head,
}

impl Default for CanConfig {
    fn default() -> Self {
        CanConfig {
            input_side: 36,
            input_channels: 3,
            conv_filters: (32, 64),
            kernel_size: 3,
            pool_window: 2,
            fc_size: 128,
            head: Head::Regression,
        }
    }
}

impl CanConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |detail: String| Err(Error::InvalidArgument(format!("network config: {detail}")));
        let (n1, n2) = self.conv_filters;
        if [
            self.input_side,
            self.input_channels,
            n1,
            n2,
            self.kernel_size,
            self.pool_window,
            self.fc_size,
        ]
        .contains(&0)
        {
            return bad(format!("all sizes must be positive: {self:?}"));
        }
        if self.kernel_size.is_multiple_of(2) {
            return bad(format!("kernel size {} must be odd", self.kernel_size));
        }
        if self.input_side < self.kernel_size {
            return bad(format!(
                "input side {} smaller than kernel {}",
                self.input_side, self.kernel_size
            ));
        }
        let p = self.pool_window;
        if !self.input_side.is_multiple_of(p) || !(self.input_side / p).is_multiple_of(p) {
            return bad(format!(
                "pool window {p} must divide {} and {}",
                self.input_side,
                self.input_side / p
            ));
        }
        Ok(())
    }

    /// Same-size padding for the odd square kernels.
    pub fn padding(&self) -> usize {
        self.kernel_size / 2
    }

    pub fn block2_side(&self) -> usize {
        self.input_side / self.pool_window
    }

    pub fn feature_side(&self) -> usize {
        self.block2_side() / self.pool_window
    }

    /// Length of the flattened pooled motion features fed to the fc layer.
    pub fn feature_len(&self) -> usize {
        self.conv_filters.1 * self.feature_side() * self.feature_side()
    }

    /// Scalars updated during transfer fine-tuning (fc layer plus head).
    pub fn transfer_trainable_scalars(&self) -> usize {
        self.fc_size * self.feature_len() + self.fc_size + self.fc_size + 1
    }
}

/// Weight and bias of one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub weight: Parameter,
    pub bias: Parameter,
}

impl LayerParams {
    fn zeros(weight_shape: &[usize], bias_len: usize) -> Self {
        LayerParams {
            weight: Parameter::zeros(weight_shape),
            bias: Parameter::zeros(&[bias_len]),
        }
    }
}

/// Parameter names in serialization order.
pub const PARAM_NAMES: [&str; 16] = [
    "appearance.conv1.weight",
    "appearance.conv1.bias",
    "appearance.attention1.weight",
    "appearance.attention1.bias",
    "appearance.conv2.weight",
    "appearance.conv2.bias",
    "appearance.attention2.weight",
    "appearance.attention2.bias",
    "motion.conv1.weight",
    "motion.conv1.bias",
    "motion.conv2.weight",
    "motion.conv2.bias",
    "fc.weight",
    "fc.bias",
    "head.weight",
    "head.bias",
];

/// Index of the first non-trunk parameter in [`PARAM_NAMES`].
pub const TRUNK_PARAMS: usize = 12;

/// Full parameter set of the network.
#[derive(Clone, Debug, PartialEq)]
pub struct CanWeights {
    pub config: CanConfig,
    pub appearance1: LayerParams,
    pub attention1: LayerParams,
    pub appearance2: LayerParams,
    pub attention2: LayerParams,
    pub motion1: LayerParams,
    pub motion2: LayerParams,
    pub fc: LayerParams,
    pub head: LayerParams,
}

impl CanWeights {
    /// All-zero weights for a validated config.
    pub fn zeros(config: CanConfig) -> Result<Self> {
        config.validate()?;
        let c = config.input_channels;
        let (n1, n2) = config.conv_filters;
        let k = config.kernel_size;
        Ok(CanWeights {
            config,
            appearance1: LayerParams::zeros(&[n1, c, k, k], n1),
            attention1: LayerParams::zeros(&[1, n1, 1, 1], 1),
            appearance2: LayerParams::zeros(&[n2, n1, k, k], n2),
            attention2: LayerParams::zeros(&[1, n2, 1, 1], 1),
            motion1: LayerParams::zeros(&[n1, c, k, k], n1),
            motion2: LayerParams::zeros(&[n2, n1, k, k], n2),
            fc: LayerParams::zeros(&[config.fc_size, config.feature_len()], config.fc_size),
            head: LayerParams::zeros(&[1, config.fc_size], 1),
        })
    }

    /// Glorot-uniform weights and zero biases drawn from a seeded RNG.
    pub fn init(config: CanConfig, seed: u64) -> Result<Self> {
        let mut w = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in w.layers_mut() {
            glorot_fill(&mut layer.weight.value, &mut rng);
        }
        Ok(w)
    }

    fn layers(&self) -> [&LayerParams; 8] {
        [
            &self.appearance1,
            &self.attention1,
            &self.appearance2,
            &self.attention2,
            &self.motion1,
            &self.motion2,
            &self.fc,
            &self.head,
        ]
    }

    fn layers_mut(&mut self) -> [&mut LayerParams; 8] {
        [
            &mut self.appearance1,
            &mut self.attention1,
            &mut self.appearance2,
            &mut self.attention2,
            &mut self.motion1,
            &mut self.motion2,
            &mut self.fc,
            &mut self.head,
        ]
    }

    /// Parameters in [`PARAM_NAMES`] order.
    pub fn params(&self) -> Vec<&Parameter> {
        self.layers()
            .into_iter()
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        self.layers_mut()
            .into_iter()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn named_params(&self) -> impl Iterator<Item = (&'static str, &Parameter)> {
        PARAM_NAMES.into_iter().zip(self.params())
    }

    pub fn trainable_scalars(&self) -> usize {
        self.params()
            .iter()
            .filter(|p| !p.frozen)
            .map(|p| p.len())
            .sum()
    }

    /// True when every trunk (non fc, non head) parameter is frozen.
    pub fn trunk_frozen(&self) -> bool {
        self.params()[..TRUNK_PARAMS].iter().all(|p| p.frozen)
    }

    /// Swap the regression head for a freshly initialized classification head.
    ///
    /// Trunk and fc parameters are copied bitwise; the fc layer is kept since
    /// its shape does not depend on the head kind.
    pub fn convert_head(&self, seed: u64) -> Result<CanWeights> {
        if self.config.head != Head::Regression {
            return Err(Error::InvalidArgument(
                "convert_head expects a regression network".into(),
            ));
        }
        let mut out = self.clone();
        out.config.head = Head::Classification;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        out.head = LayerParams::zeros(&[1, self.config.fc_size], 1);
        glorot_fill(&mut out.head.weight.value, &mut rng);
        for p in out.params_mut() {
            p.zero_grad();
        }
        Ok(out)
    }

    /// Freeze everything except the fc layer and the classification head.
    pub fn freeze_for_transfer(&self) -> Result<CanWeights> {
        if self.config.head != Head::Classification {
            return Err(Error::InvalidArgument(
                "freeze_for_transfer expects a classification network".into(),
            ));
        }
        let mut out = self.clone();
        for (i, p) in out.params_mut().into_iter().enumerate() {
            p.frozen = i < TRUNK_PARAMS;
        }
        Ok(out)
    }
}

fn glorot_fill(t: &mut Tensor, rng: &mut impl Rng) {
    let shape = t.shape();
    let receptive: usize = shape[2..].iter().product();
    let fan_out = shape[0] * receptive;
    let fan_in = shape[1] * receptive;
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    for x in t.data_mut() {
        *x = rng.random_range(-limit..limit);
    }
}
