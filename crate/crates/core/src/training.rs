//! Heart-rate pretraining followed by frozen-trunk fine-tuning.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::KvConfig;
use crate::error::{Error, Result};
use crate::evaluation::auc;
use crate::layers::{bce_backward, bce_loss, mse_backward, mse_loss, sigmoid};
use crate::model::{
    backward_sample, combine_gradients, fc_pre_grad, forward_trace, head_forward, trunk_features,
    CanConfig, CanWeights, Gradients, Head, SampleGradients,
};
use crate::optim::sgd_step;
use crate::preprocessing::{ModelInputPair, PreparedClip};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate_pretrain: f64,
    pub learning_rate_finetune: f64,
    pub epochs_pretrain: usize,
    pub epochs_finetune: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub early_stop_patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate_pretrain: 1e-3,
            learning_rate_finetune: 0.1,
            epochs_pretrain: 5,
            epochs_finetune: 10,
            batch_size: 32,
            seed: 0,
            early_stop_patience: 3,
        }
    }
}

impl TrainConfig {
    /// Epoch counts may be zero; everything else must be positive.
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, detail: &str| {
            Err(Error::Config {
                key: key.into(),
                detail: detail.into(),
            })
        };
        for (key, lr) in [
            ("learning_rate_pretrain", self.learning_rate_pretrain),
            ("learning_rate_finetune", self.learning_rate_finetune),
        ] {
            if !(lr > 0.0 && lr.is_finite()) {
                return bad(key, "must be positive");
            }
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be positive");
        }
        if self.early_stop_patience == 0 {
            return bad("early_stop_patience", "must be positive");
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KvConfig {
        let mut kv = KvConfig::new();
        kv.set("learning_rate_pretrain", self.learning_rate_pretrain);
        kv.set("learning_rate_finetune", self.learning_rate_finetune);
        kv.set("epochs_pretrain", self.epochs_pretrain);
        kv.set("epochs_finetune", self.epochs_finetune);
        kv.set("batch_size", self.batch_size);
        kv.set("seed", self.seed);
        kv.set("early_stop_patience", self.early_stop_patience);
        kv
    }

    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        let d = TrainConfig::default();
        let cfg = TrainConfig {
            learning_rate_pretrain: kv
                .get_or("learning_rate_pretrain", d.learning_rate_pretrain)?,
            learning_rate_finetune: kv
                .get_or("learning_rate_finetune", d.learning_rate_finetune)?,
            epochs_pretrain: kv.get_or("epochs_pretrain", d.epochs_pretrain)?,
            epochs_finetune: kv.get_or("epochs_finetune", d.epochs_finetune)?,
            batch_size: kv.get_or("batch_size", d.batch_size)?,
            seed: kv.get_or("seed", d.seed)?,
            early_stop_patience: kv.get_or("early_stop_patience", d.early_stop_patience)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Pretrain,
    Finetune,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Pretrain => "pretrain",
            Phase::Finetune => "finetune",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub phase: Phase,
    pub loss: f64,
    /// Mean squared error when pretraining, dev AUC when fine-tuning.
    pub metric: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,phase,loss,metric,seconds\n");
        for e in &self.epochs {
            let _ = writeln!(
                s,
                "{},{},{:.12},{:.12},{:.3}",
                e.epoch,
                e.phase.as_str(),
                e.loss,
                e.metric,
                e.seconds
            );
        }
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    /// Per-epoch losses and metrics, without the timing column.
    pub fn numbers(&self) -> Vec<(f64, f64)> {
        self.epochs.iter().map(|e| (e.loss, e.metric)).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    /// Squared error of the raw regression output.
    Mse,
    /// Binary cross-entropy of the sigmoid score.
    Bce,
}

/// One training example, with the clip it came from for diagnostics.
#[derive(Clone, Copy, Debug)]
pub struct TrainSample<'a> {
    pub input: &'a ModelInputPair,
    pub target: f64,
    pub clip: &'a str,
}

fn loss_and_grad(logit: f64, target: f64, kind: LossKind) -> Result<(f64, f64)> {
    match kind {
        LossKind::Mse => Ok((mse_loss(logit, target), mse_backward(logit, target))),
        LossKind::Bce => {
            let p = sigmoid(logit);
            Ok((
                bce_loss(p, target)?,
                bce_backward(p, target)? * p * (1.0 - p),
            ))
        }
    }
}

fn non_finite(clip: &str, frame: usize) -> Error {
    Error::NonFinite {
        context: format!("loss of clip `{clip}` at frame {frame}"),
    }
}

struct SampleResult {
    loss: f64,
    grads: SampleGradients,
    features: Tensor,
    hidden: Tensor,
}

/// Mean loss and mean gradient over `items`. Samples are processed in
/// parallel but every sum runs in batch order, so the result does not depend
/// on the number of threads.
fn batch_gradients<T: Sync>(
    weights: &CanWeights,
    items: &[T],
    per_sample: impl Fn(&T) -> Result<SampleResult> + Sync + Send,
) -> Result<(f64, Gradients)> {
    if items.is_empty() {
        return Err(Error::InvalidArgument("empty training batch".into()));
    }
    let results = items
        .par_iter()
        .map(per_sample)
        .collect::<Result<Vec<_>>>()?;
    let n = items.len() as f64;
    let loss = results.iter().map(|r| r.loss).sum::<f64>() / n;
    let mut grads = Vec::with_capacity(results.len());
    let mut fc_in = Vec::with_capacity(results.len());
    let mut fc_out = Vec::with_capacity(results.len());
    for r in results {
        grads.push(r.grads);
        fc_in.push(r.features);
        fc_out.push(r.hidden);
    }
    let rows: Vec<_> = grads
        .into_iter()
        .zip(fc_in.iter().zip(&fc_out))
        .map(|(g, (f, h))| (g, f, h))
        .collect();
    Ok((loss, combine_gradients(weights, &rows, 1.0 / n)?))
}

fn apply(weights: &mut CanWeights, grads: Gradients, lr: f64) -> Result<()> {
    grads.store(weights);
    sgd_step(weights.params_mut(), lr)
}

/// One SGD step on the mean loss of `batch`; returns that mean loss.
pub fn train_step(
    weights: &mut CanWeights,
    batch: &[TrainSample<'_>],
    loss: LossKind,
    lr: f64,
) -> Result<f64> {
    let w = &*weights;
    let (mean, grads) = batch_gradients(w, batch, |s| {
        let frame = s.input.frame_index;
        let trace =
            forward_trace(&s.input.motion, &s.input.appearance, w).map_err(|e| match e {
                Error::NonFinite { .. } => non_finite(s.clip, frame),
                other => other,
            })?;
        let (l, dlogit) = loss_and_grad(trace.logit, s.target, loss)?;
        if !l.is_finite() {
            return Err(non_finite(s.clip, frame));
        }
        let grads = backward_sample(&trace, w, dlogit)?;
        Ok(SampleResult {
            loss: l,
            grads,
            features: trace.features,
            hidden: trace.hidden,
        })
    })?;
    apply(weights, grads, lr)?;
    Ok(mean)
}

/// Cached trunk output for head-only training.
struct FeatureSample<'a> {
    features: Tensor,
    target: f64,
    clip: &'a str,
    frame: usize,
}

/// Same update as [`train_step`] for a frozen trunk, starting from cached
/// trunk features. Produces bitwise the same weights.
fn head_train_step(
    weights: &mut CanWeights,
    batch: &[&FeatureSample<'_>],
    kind: LossKind,
    lr: f64,
) -> Result<f64> {
    let w = &*weights;
    let (mean, grads) = batch_gradients(w, batch, |s| {
        let (hidden, logit) =
            head_forward(w, &s.features).map_err(|_| non_finite(s.clip, s.frame))?;
        let (l, dlogit) = loss_and_grad(logit, s.target, kind)?;
        if !l.is_finite() {
            return Err(non_finite(s.clip, s.frame));
        }
        Ok(SampleResult {
            loss: l,
            grads: SampleGradients {
                trunk: None,
                grad_pre: fc_pre_grad(w, &hidden, dlogit),
                grad_logit: dlogit,
            },
            features: s.features.clone(),
            hidden,
        })
    })?;
    apply(weights, grads, lr)?;
    Ok(mean)
}

/// Pretraining targets: frame-to-frame change of the pulse at each pair.
pub fn pulse_targets(clip: &PreparedClip) -> Result<Vec<f64>> {
    let truth = clip.pulse_truth.as_ref().ok_or_else(|| {
        Error::InvalidArgument(format!("clip `{}` has no ground-truth pulse", clip.name))
    })?;
    clip.pairs
        .iter()
        .map(|p| {
            let t = p.frame_index;
            if t == 0 || t >= truth.len() {
                return Err(Error::InvalidArgument(format!(
                    "clip `{}`: frame {t} has no preceding pulse value",
                    clip.name
                )));
            }
            Ok(truth[t] - truth[t - 1])
        })
        .collect()
}

fn shuffled(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order
}

/// Seed offsets so the phases draw from unrelated streams.
const SHUFFLE_PRETRAIN: u64 = 0x5eed_0001;
const HEAD_INIT: u64 = 0x5eed_0002;
const SHUFFLE_FINETUNE: u64 = 0x5eed_0003;

/// Train a regression-head network to predict the pulse change between
/// consecutive frames.
pub fn pretrain_hr(
    config: &TrainConfig,
    model: CanConfig,
    dev_set: &[PreparedClip],
) -> Result<(CanWeights, TrainLog)> {
    config.validate()?;
    let model = CanConfig {
        head: Head::Regression,
        ..model
    };
    let mut samples = Vec::new();
    for clip in dev_set {
        for (pair, target) in clip.pairs.iter().zip(pulse_targets(clip)?) {
            samples.push(TrainSample {
                input: pair,
                target,
                clip: &clip.name,
            });
        }
    }
    let mut weights = CanWeights::init(model, config.seed)?;
    let mut log = TrainLog::default();
    if config.epochs_pretrain > 0 && samples.is_empty() {
        return Err(Error::InvalidArgument("no training samples".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ SHUFFLE_PRETRAIN);
    for epoch in 1..=config.epochs_pretrain {
        let start = Instant::now();
        let order = shuffled(samples.len(), &mut rng);
        let mut total = 0.0;
        let mut batch = Vec::with_capacity(config.batch_size);
        for idx in order.chunks(config.batch_size) {
            batch.clear();
            batch.extend(idx.iter().map(|&i| samples[i]));
            total += train_step(
                &mut weights,
                &batch,
                LossKind::Mse,
                config.learning_rate_pretrain,
            )? * idx.len() as f64;
        }
        let mse = total / samples.len() as f64;
        log.epochs.push(EpochRecord {
            epoch,
            phase: Phase::Pretrain,
            loss: mse,
            metric: mse,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok((weights, log))
}

fn detection_target(clip: &PreparedClip) -> Result<f64> {
    clip.label
        .target()
        .ok_or_else(|| Error::InvalidArgument(format!("clip `{}` is unlabeled", clip.name)))
}

/// Convert a pretrained regression network into a detector and train only
/// its last fc layer and head.
///
/// Returns the weights of the epoch with the best dev AUC; training stops
/// once the AUC has not improved for `early_stop_patience` epochs.
pub fn finetune_detector(
    config: &TrainConfig,
    pretrained: &CanWeights,
    dev_set: &[PreparedClip],
) -> Result<(CanWeights, TrainLog)> {
    config.validate()?;
    if pretrained.config.head != Head::Regression {
        return Err(Error::InvalidArgument(
            "fine-tuning starts from a regression-head network".into(),
        ));
    }
    let mut weights = pretrained
        .convert_head(config.seed ^ HEAD_INIT)?
        .freeze_for_transfer()?;
    let mut log = TrainLog::default();
    if config.epochs_finetune == 0 {
        return Ok((weights, log));
    }

    let mut jobs = Vec::new();
    for clip in dev_set {
        let target = detection_target(clip)?;
        jobs.extend(clip.pairs.iter().map(|p| (clip, p, target)));
    }
    if jobs.is_empty() {
        return Err(Error::InvalidArgument("no training samples".into()));
    }
    let trunk = &weights;
    let samples = jobs
        .par_iter()
        .map(|&(clip, pair, target)| {
            Ok(FeatureSample {
                features: trunk_features(&pair.motion, &pair.appearance, trunk)?,
                target,
                clip: &clip.name,
                frame: pair.frame_index,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<bool> = samples.iter().map(|s| s.target == 1.0).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ SHUFFLE_FINETUNE);
    let mut best: Option<(f64, CanWeights)> = None;
    let mut since_best = 0;
    for epoch in 1..=config.epochs_finetune {
        let start = Instant::now();
        let order = shuffled(samples.len(), &mut rng);
        let mut total = 0.0;
        let mut batch = Vec::with_capacity(config.batch_size);
        for idx in order.chunks(config.batch_size) {
            batch.clear();
            batch.extend(idx.iter().map(|&i| &samples[i]));
            total += head_train_step(
                &mut weights,
                &batch,
                LossKind::Bce,
                config.learning_rate_finetune,
            )? * idx.len() as f64;
        }
        let w = &weights;
        let scores = samples
            .par_iter()
            .map(|s| Ok(sigmoid(head_forward(w, &s.features)?.1)))
            .collect::<Result<Vec<_>>>()?;
        let dev_auc = auc(&scores, &labels)?;
        log.epochs.push(EpochRecord {
            epoch,
            phase: Phase::Finetune,
            loss: total / samples.len() as f64,
            metric: dev_auc,
            seconds: start.elapsed().as_secs_f64(),
        });
        if best.as_ref().is_none_or(|(a, _)| dev_auc > *a) {
            best = Some((dev_auc, weights.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.early_stop_patience {
                break;
            }
        }
    }
    Ok((best.expect("at least one epoch").1, log))
}

/// Labels of every pair in `clips`, real = 1.
pub fn frame_labels(clips: &[PreparedClip]) -> Result<Vec<bool>> {
    let mut out = Vec::new();
    for c in clips {
        let real = detection_target(c)? == 1.0;
        out.extend(std::iter::repeat_n(real, c.pairs.len()));
    }
    Ok(out)
}
