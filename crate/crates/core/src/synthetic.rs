//! Synthetic pulse videos with known ground truth.
//!
//! A "real" clip shows a skin-colored elliptical face whose color follows a
//! blood-volume pulse; a "fake" clip is the same scene with the pulse removed
//! from the face. Everything else (shading, noise, illumination) is drawn
//! from the clip seed only, so the two differ exactly by the pulse.

use std::collections::BTreeSet;
use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::config::KvConfig;
use crate::error::{Error, Result};
use crate::preprocessing::{FrameSequence, Label, RawFrame};

/// Relative pulse strength per RGB channel; green carries most of it.
pub const CHANNEL_WEIGHTS: [f64; 3] = [0.3, 1.0, 0.5];
/// Physiological heart-rate band in Hz.
pub const HEART_RATE_BAND: (f64, f64) = (0.7, 4.0);

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PulseParams {
    /// Hz.
    pub heart_rate: f64,
    /// Peak modulation as a fraction of full scale.
    pub amplitude: f64,
    /// Radians.
    pub phase: f64,
}

impl PulseParams {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = HEART_RATE_BAND;
        if !(lo..=hi).contains(&self.heart_rate) {
            return Err(Error::InvalidArgument(format!(
                "heart rate {} Hz outside [{lo}, {hi}]",
                self.heart_rate
            )));
        }
        if !(0.0..=1.0).contains(&self.amplitude) {
            return Err(Error::InvalidArgument(format!(
                "pulse amplitude {} outside [0, 1]",
                self.amplitude
            )));
        }
        Ok(())
    }
}

/// Fundamental plus a half-amplitude second harmonic.
pub fn bvp_signal(t: f64, p: &PulseParams) -> f64 {
    let w = 2.0 * PI * p.heart_rate * t + p.phase;
    w.sin() + 0.5 * (2.0 * w).sin()
}

/// Slow global gain `1 + amplitude * sin(2 pi f t)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IlluminationDrift {
    pub amplitude: f64,
    pub frequency: f64,
}

impl IlluminationDrift {
    pub fn gain(&self, t: f64) -> f64 {
        1.0 + self.amplitude * (2.0 * PI * self.frequency * t).sin()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticVideoSpec {
    pub identity_id: String,
    pub label: Label,
    /// Seconds.
    pub duration: f64,
    pub fps: f64,
    /// Rendered frames are `side x side`.
    pub side: usize,
    /// Face color in 8-bit units.
    pub base_skin_color: [f64; 3],
    pub background_color: [f64; 3],
    pub pulse: PulseParams,
    /// Per-pixel Gaussian noise, 8-bit units.
    pub noise_std: f64,
    pub illumination_drift: IlluminationDrift,
    pub seed: u64,
}

impl SyntheticVideoSpec {
    pub fn frame_count(&self) -> usize {
        (self.duration * self.fps).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        self.pulse.validate()?;
        if self.frame_count() < 2 {
            return Err(Error::InvalidArgument(format!(
                "{} s at {} fps gives fewer than 2 frames",
                self.duration, self.fps
            )));
        }
        if self.side < 4 {
            return Err(Error::InvalidArgument(format!(
                "frame side {} too small",
                self.side
            )));
        }
        if self.noise_std < 0.0 || !self.noise_std.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "noise std {}",
                self.noise_std
            )));
        }
        if self.label == Label::Unlabeled {
            return Err(Error::InvalidArgument(
                "synthetic clips are real or fake".into(),
            ));
        }
        Ok(())
    }

    /// Normalized ellipse coordinate: < 1 inside the face.
    fn face_radius(&self, y: usize, x: usize) -> f64 {
        let c = (self.side as f64 - 1.0) / 2.0;
        let (ry, rx) = (0.42 * self.side as f64, 0.32 * self.side as f64);
        let (dy, dx) = ((y as f64 - c) / ry, (x as f64 - c) / rx);
        dy * dy + dx * dx
    }

    pub fn in_face(&self, y: usize, x: usize) -> bool {
        self.face_radius(y, x) < 1.0
    }
}

/// Render a clip. Deterministic in the spec (including its seed).
pub fn render_video(spec: &SyntheticVideoSpec) -> Result<FrameSequence> {
    spec.validate()?;
    let n = spec.frame_count();
    let side = spec.side;
    let pulse_on = spec.label == Label::Real && spec.pulse.amplitude > 0.0;

    // static scene: shaded face on a flat background
    let mut scene = vec![0.0; side * side * 3];
    let mut face = vec![false; side * side];
    for y in 0..side {
        for x in 0..side {
            let r = spec.face_radius(y, x);
            let i = y * side + x;
            face[i] = r < 1.0;
            for c in 0..3 {
                scene[i * 3 + c] = if face[i] {
                    spec.base_skin_color[c] * (1.04 - 0.08 * r)
                } else {
                    spec.background_color[c]
                };
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut frames = Vec::with_capacity(n);
    let mut truth = Vec::with_capacity(n);
    for f in 0..n {
        let t = f as f64 / spec.fps;
        let bvp = bvp_signal(t, &spec.pulse);
        let gain = spec.illumination_drift.gain(t);
        let swing = if pulse_on {
            spec.pulse.amplitude * 255.0 * bvp
        } else {
            0.0
        };
        truth.push(if pulse_on { bvp } else { 0.0 });
        let mut pixels = Vec::with_capacity(side * side * 3);
        for i in 0..side * side {
            for c in 0..3 {
                let noise: f64 = rng.sample::<f64, _>(StandardNormal) * spec.noise_std;
                let pulse = if face[i] {
                    swing * CHANNEL_WEIGHTS[c]
                } else {
                    0.0
                };
                let v = (scene[i * 3 + c] + pulse) * gain + noise;
                pixels.push(v.round().clamp(0.0, 255.0) as u8);
            }
        }
        frames.push(RawFrame::new(side, side, pixels)?);
    }
    FrameSequence::new(
        frames,
        spec.fps,
        spec.identity_id.clone(),
        spec.label,
        Some(truth),
    )
}

/// Parameters of a whole synthetic dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetConfig {
    pub n_identities: usize,
    pub clips_per_identity: usize,
    pub real_fraction: f64,
    pub base_seed: u64,
    pub duration: f64,
    pub fps: f64,
    pub side: usize,
    pub noise_std: f64,
    /// Range of per-identity pulse amplitudes (fraction of full scale).
    pub amplitude_range: (f64, f64),
    /// Range of per-identity heart rates (Hz).
    pub heart_rate_range: (f64, f64),
    pub drift_amplitude: f64,
    pub drift_frequency: f64,
    /// Multiplies every pulse amplitude; 0 removes the pulse from real clips.
    pub pulse_scale: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            n_identities: 40,
            clips_per_identity: 4,
            real_fraction: 0.5,
            base_seed: 0,
            duration: 6.0,
            fps: 15.0,
            side: 64,
            noise_std: 1.0,
            amplitude_range: (0.01, 0.02),
            heart_rate_range: (1.0, 2.0),
            drift_amplitude: 0.0,
            drift_frequency: 0.1,
            pulse_scale: 1.0,
        }
    }
}

impl DatasetConfig {
    pub fn to_kv(&self) -> KvConfig {
        let mut kv = KvConfig::new();
        kv.set("identities", self.n_identities);
        kv.set("clips_per_identity", self.clips_per_identity);
        kv.set("real_fraction", self.real_fraction);
        kv.set("seed", self.base_seed);
        kv.set("duration", self.duration);
        kv.set("fps", self.fps);
        kv.set("frame_side", self.side);
        kv.set("noise_std", self.noise_std);
        kv.set("amplitude_min", self.amplitude_range.0);
        kv.set("amplitude_max", self.amplitude_range.1);
        kv.set("heart_rate_min", self.heart_rate_range.0);
        kv.set("heart_rate_max", self.heart_rate_range.1);
        kv.set("drift_amplitude", self.drift_amplitude);
        kv.set("drift_frequency", self.drift_frequency);
        kv.set("pulse_scale", self.pulse_scale);
        kv
    }

    /// Read the keys written by [`DatasetConfig::to_kv`], defaulting the rest.
    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        let d = DatasetConfig::default();
        Ok(DatasetConfig {
            n_identities: kv.get_or("identities", d.n_identities)?,
            clips_per_identity: kv.get_or("clips_per_identity", d.clips_per_identity)?,
            real_fraction: kv.get_or("real_fraction", d.real_fraction)?,
            base_seed: kv.get_or("seed", d.base_seed)?,
            duration: kv.get_or("duration", d.duration)?,
            fps: kv.get_or("fps", d.fps)?,
            side: kv.get_or("frame_side", d.side)?,
            noise_std: kv.get_or("noise_std", d.noise_std)?,
            amplitude_range: (
                kv.get_or("amplitude_min", d.amplitude_range.0)?,
                kv.get_or("amplitude_max", d.amplitude_range.1)?,
            ),
            heart_rate_range: (
                kv.get_or("heart_rate_min", d.heart_rate_range.0)?,
                kv.get_or("heart_rate_max", d.heart_rate_range.1)?,
            ),
            drift_amplitude: kv.get_or("drift_amplitude", d.drift_amplitude)?,
            drift_frequency: kv.get_or("drift_frequency", d.drift_frequency)?,
            pulse_scale: kv.get_or("pulse_scale", d.pulse_scale)?,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_identities < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 identities, got {}",
                self.n_identities
            )));
        }
        if self.clips_per_identity == 0 {
            return Err(Error::InvalidArgument(
                "clips_per_identity must be >= 1".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.real_fraction) {
            return Err(Error::InvalidArgument(format!(
                "real_fraction {} outside [0, 1]",
                self.real_fraction
            )));
        }
        let ordered = |(a, b): (f64, f64)| a <= b && a.is_finite() && b.is_finite();
        if !ordered(self.amplitude_range) || !ordered(self.heart_rate_range) {
            return Err(Error::InvalidArgument(
                "amplitude/heart-rate ranges must be ordered".into(),
            ));
        }
        if self.pulse_scale < 0.0 {
            return Err(Error::InvalidArgument("pulse_scale must be >= 0".into()));
        }
        Ok(())
    }
}

fn draw(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

/// Clip specs of a dataset: identity by identity, clip by clip.
///
/// Each identity has a fixed skin tone, background, heart rate and pulse
/// amplitude; the first `round(real_fraction * clips)` clips are real.
pub fn dataset_specs(cfg: &DatasetConfig) -> Result<Vec<SyntheticVideoSpec>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.base_seed);
    let n_real = (cfg.real_fraction * cfg.clips_per_identity as f64).round() as usize;
    let mut specs = Vec::with_capacity(cfg.n_identities * cfg.clips_per_identity);
    for id in 0..cfg.n_identities {
        let skin = [
            rng.random_range(150.0..225.0),
            rng.random_range(95.0..165.0),
            rng.random_range(75.0..140.0),
        ];
        let bg_level = rng.random_range(40.0..110.0);
        let background = [bg_level, bg_level * 0.95, bg_level * 1.05];
        let heart_rate = draw(&mut rng, cfg.heart_rate_range);
        let amplitude = draw(&mut rng, cfg.amplitude_range) * cfg.pulse_scale;
        for clip in 0..cfg.clips_per_identity {
            let phase = rng.random_range(0.0..2.0 * PI);
            let seed = rng.next_u64();
            specs.push(SyntheticVideoSpec {
                identity_id: format!("id{id:03}"),
                label: if clip < n_real {
                    Label::Real
                } else {
                    Label::Fake
                },
                duration: cfg.duration,
                fps: cfg.fps,
                side: cfg.side,
                base_skin_color: skin,
                background_color: background,
                pulse: PulseParams {
                    heart_rate,
                    amplitude,
                    phase,
                },
                noise_std: cfg.noise_std,
                illumination_drift: IlluminationDrift {
                    amplitude: cfg.drift_amplitude,
                    frequency: cfg.drift_frequency,
                },
                seed,
            });
        }
    }
    Ok(specs)
}

/// Render every clip of a dataset (in parallel, output in spec order).
pub fn generate_dataset(cfg: &DatasetConfig) -> Result<Vec<FrameSequence>> {
    dataset_specs(cfg)?.par_iter().map(render_video).collect()
}

/// Partition identities into (dev, eval) sets.
///
/// Unique identities are sorted, shuffled with `seed`, and the first
/// `ceil(dev_fraction * n)` go to dev.
pub fn split_identities<'a, I>(
    ids: I,
    dev_fraction: f64,
    seed: u64,
) -> Result<(BTreeSet<String>, BTreeSet<String>)>
where
    I: IntoIterator<Item = &'a str>,
{
    let unique: BTreeSet<&str> = ids.into_iter().collect();
    if unique.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "identity split needs at least 2 identities, got {}",
            unique.len()
        )));
    }
    if !(0.0..=1.0).contains(&dev_fraction) {
        return Err(Error::InvalidArgument(format!(
            "dev fraction {dev_fraction}"
        )));
    }
    let mut order: Vec<&str> = unique.into_iter().collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_dev = (dev_fraction * order.len() as f64).ceil() as usize;
    if n_dev == 0 || n_dev == order.len() {
        return Err(Error::InvalidArgument(format!(
            "dev fraction {dev_fraction} leaves an empty partition of {} identities",
            order.len()
        )));
    }
    let dev = order[..n_dev].iter().map(|s| s.to_string()).collect();
    let eval = order[n_dev..].iter().map(|s| s.to_string()).collect();
    Ok((dev, eval))
}

/// Split clips so that all clips of an identity land on the same side.
pub fn split_by_identity(
    dataset: Vec<FrameSequence>,
    dev_fraction: f64,
    seed: u64,
) -> Result<(Vec<FrameSequence>, Vec<FrameSequence>)> {
    let (dev_ids, _) = split_identities(
        dataset.iter().map(|s| s.identity_id.as_str()),
        dev_fraction,
        seed,
    )?;
    Ok(dataset
        .into_iter()
        .partition(|s| dev_ids.contains(&s.identity_id)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(label: Label) -> SyntheticVideoSpec {
        SyntheticVideoSpec {
            identity_id: "id".into(),
            label,
            duration: 2.0,
            fps: 15.0,
            side: 16,
            base_skin_color: [190.0, 130.0, 110.0],
            background_color: [60.0, 57.0, 63.0],
            pulse: PulseParams {
                heart_rate: 1.3,
                amplitude: 0.015,
                phase: 0.4,
            },
            noise_std: 1.0,
            illumination_drift: IlluminationDrift {
                amplitude: 0.0,
                frequency: 0.1,
            },
            seed: 42,
        }
    }

    #[test]
    fn bvp_at_origin() {
        let p = PulseParams {
            heart_rate: 1.0,
            amplitude: 0.01,
            phase: 0.0,
        };
        assert_eq!(bvp_signal(0.0, &p), 0.0);
    }

    #[test]
    fn same_seed_same_clip() {
        assert_eq!(
            render_video(&spec(Label::Real)).unwrap(),
            render_video(&spec(Label::Real)).unwrap()
        );
    }

    #[test]
    fn noiseless_fake_is_static() {
        let mut s = spec(Label::Fake);
        s.noise_std = 0.0;
        let v = render_video(&s).unwrap();
        assert!(v.frames.windows(2).all(|w| w[0] == w[1]));
        assert!(v.pulse_truth.unwrap().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn zero_amplitude_real_matches_fake_pixels() {
        let mut real = spec(Label::Real);
        real.pulse.amplitude = 0.0;
        let fake = spec(Label::Fake);
        assert_eq!(
            render_video(&real).unwrap().frames,
            render_video(&fake).unwrap().frames
        );
    }

    #[test]
    fn spec_validation() {
        let mut s = spec(Label::Real);
        s.pulse.heart_rate = 5.0;
        assert!(render_video(&s).is_err());
        let mut s = spec(Label::Real);
        s.duration = 0.05;
        assert!(render_video(&s).is_err());
    }

    #[test]
    fn dataset_counts_and_labels() {
        let cfg = DatasetConfig {
            n_identities: 2,
            clips_per_identity: 1,
            real_fraction: 1.0,
            duration: 0.5,
            side: 8,
            ..DatasetConfig::default()
        };
        let d = generate_dataset(&cfg).unwrap();
        assert_eq!(d.len(), 2);
        assert!(d.iter().all(|s| s.label == Label::Real));
        assert_ne!(d[0].identity_id, d[1].identity_id);

        let cfg = DatasetConfig {
            n_identities: 3,
            clips_per_identity: 4,
            ..DatasetConfig::default()
        };
        let specs = dataset_specs(&cfg).unwrap();
        assert_eq!(specs.len(), 12);
        assert_eq!(specs.iter().filter(|s| s.label == Label::Real).count(), 6);
        assert!(dataset_specs(&DatasetConfig {
            n_identities: 1,
            ..cfg
        })
        .is_err());
    }

    #[test]
    fn kv_roundtrip() {
        let cfg = DatasetConfig {
            base_seed: 99,
            pulse_scale: 0.0,
            drift_amplitude: 0.05,
            ..DatasetConfig::default()
        };
        assert_eq!(DatasetConfig::from_kv(&cfg.to_kv()).unwrap(), cfg);
    }

    #[test]
    fn split_sizes() {
        let ids: Vec<String> = (0..10).map(|i| format!("p{i}")).collect();
        let (dev, eval) = split_identities(ids.iter().map(String::as_str), 0.7, 3).unwrap();
        assert_eq!((dev.len(), eval.len()), (7, 3));
        assert!(dev.is_disjoint(&eval));
        let again = split_identities(ids.iter().map(String::as_str), 0.7, 3).unwrap();
        assert_eq!(again.0, dev);
        assert!(split_identities(["a", "a"], 0.5, 0).is_err());
        assert!(split_identities(["a", "b"], 1.0, 0).is_err());
    }
}
