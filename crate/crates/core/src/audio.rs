//! Synthetic sound-event corpus and the waveform composition operators.
//!
//! Each class owns a fixed spectral signature: three tones drawn from a
//! log-spaced frequency grid, one narrow noise band and an amplitude
//! envelope. Instances of a class differ in phase, small frequency jitter,
//! envelope timing and gain, so a linear model on band energies separates
//! classes while no two clips are sample-identical.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Peak amplitude every synthesized or mixed clip is held under.
pub const PEAK_LIMIT: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AudioRelation {
    Single,
    Concat,
    Overlay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
    pub class_ids: Vec<usize>,
    pub relation: AudioRelation,
}

impl Waveform {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0f64, |m, s| m.max(s.abs()))
    }

    /// Split a concatenated clip back into its two source halves.
    pub fn split_halves(&self) -> Result<(Waveform, Waveform)> {
        if self.relation != AudioRelation::Concat || !self.samples.len().is_multiple_of(2) {
            return Err(Error::InvalidArgument(
                "split_halves needs an even-length concatenated clip".into(),
            ));
        }
        let mid = self.samples.len() / 2;
        let half = |range: &[f64], class: usize| Waveform {
            samples: range.to_vec(),
            sample_rate: self.sample_rate,
            class_ids: vec![class],
            relation: AudioRelation::Single,
        };
        Ok((
            half(&self.samples[..mid], self.class_ids[0]),
            half(&self.samples[mid..], self.class_ids[1]),
        ))
    }

    fn check_single(&self, what: &str) -> Result<()> {
        if self.relation != AudioRelation::Single || self.class_ids.len() != 1 {
            return Err(Error::InvalidArgument(format!(
                "{what}: expected a single-event clip, got {:?}",
                self.relation
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSpec {
    pub num_classes: usize,
    pub clip_duration: f64,
    pub sample_rate: u32,
    pub seed: u64,
    pub clips_per_class: usize,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            num_classes: 10,
            clip_duration: 1.0,
            sample_rate: 8000,
            seed: 0,
            clips_per_class: 6,
        }
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Config(format!(
                "num_classes must be >= 2, got {}",
                self.num_classes
            )));
        }
        if self.clips_per_class < 2 {
            return Err(Error::Config(format!(
                "clips_per_class must be >= 2, got {}",
                self.clips_per_class
            )));
        }
        if self.sample_rate < 1000 {
            return Err(Error::Config(format!(
                "sample_rate {} too low",
                self.sample_rate
            )));
        }
        if !(self.clip_duration.is_finite() && self.clip_duration > 0.0) {
            return Err(Error::Config("clip_duration must be positive".into()));
        }
        Ok(())
    }

    pub fn clip_len(&self) -> usize {
        (f64::from(self.sample_rate) * self.clip_duration).round() as usize
    }

    /// Instances reserved for evaluation: the last third (at least one).
    pub fn held_out_clips(&self) -> usize {
        (self.clips_per_class / 3).max(1)
    }

    pub fn train_instances(&self) -> std::ops::Range<usize> {
        0..self.clips_per_class - self.held_out_clips()
    }

    pub fn held_out_instances(&self) -> std::ops::Range<usize> {
        self.clips_per_class - self.held_out_clips()..self.clips_per_class
    }
}

/// Deterministic per-class signature parameters.
#[derive(Debug, Clone)]
struct ClassSignature {
    tones: [f64; 3],
    tone_gains: [f64; 3],
    noise_center: f64,
    noise_width: f64,
    noise_gain: f64,
    attack: f64,
    mod_rate: f64,
    mod_depth: f64,
}

fn frequency_grid(spec: &CorpusSpec) -> Vec<f64> {
    let points = 3 * spec.num_classes;
    let lo = 180.0;
    let hi = 0.45 * f64::from(spec.sample_rate);
    (0..points)
        .map(|i| lo * (hi / lo).powf(i as f64 / (points - 1) as f64))
        .collect()
}

fn signature(class_id: usize, spec: &CorpusSpec) -> ClassSignature {
    let k = spec.num_classes;
    let grid = frequency_grid(spec);
    let mut rng = seed::rng_indexed(spec.seed, "class-signature", &[class_id as u64]);
    let tones = [grid[class_id], grid[class_id + k], grid[class_id + 2 * k]];
    let tone_gains = [
        rng.gen_range(0.5..1.0),
        rng.gen_range(0.5..1.0),
        rng.gen_range(0.5..1.0),
    ];
    // Noise band sits between two grid points owned by other classes.
    let slot = (class_id * 7 + 3) % (grid.len() - 1);
    let noise_center = (grid[slot] * grid[slot + 1]).sqrt();
    ClassSignature {
        tones,
        tone_gains,
        noise_center,
        noise_width: 0.04 * noise_center,
        noise_gain: rng.gen_range(0.15..0.3),
        attack: rng.gen_range(0.005..0.08),
        mod_rate: rng.gen_range(0.5..4.0),
        mod_depth: rng.gen_range(0.0..0.4),
    }
}

/// Synthesize one clip of `class_id`.
pub fn synth_clip(class_id: usize, instance_seed: u64, spec: &CorpusSpec) -> Result<Waveform> {
    spec.validate()?;
    if class_id >= spec.num_classes {
        return Err(Error::InvalidArgument(format!(
            "class id {class_id} out of range for {} classes",
            spec.num_classes
        )));
    }
    let sig = signature(class_id, spec);
    let mut rng = seed::rng_indexed(spec.seed, "clip", &[class_id as u64, instance_seed]);
    let sr = f64::from(spec.sample_rate);
    let n = spec.clip_len();

    let tones: Vec<(f64, f64, f64)> = sig
        .tones
        .iter()
        .zip(sig.tone_gains)
        .map(|(&f, g)| {
            let jitter = 1.0 + rng.gen_range(-0.003..0.003);
            (f * jitter, g, rng.gen_range(0.0..2.0 * PI))
        })
        .collect();
    let noise: Vec<(f64, f64)> = (0..12)
        .map(|_| {
            let f = sig.noise_center + rng.gen_range(-0.5..0.5) * sig.noise_width;
            (f, rng.gen_range(0.0..2.0 * PI))
        })
        .collect();
    let mod_phase = rng.gen_range(0.0..2.0 * PI);
    let attack = sig.attack * rng.gen_range(0.8..1.25);
    let gain = rng.gen_range(0.75..1.0);

    let mut samples: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 / sr;
            let tonal: f64 = tones
                .iter()
                .map(|&(f, g, ph)| g * (2.0 * PI * f * t + ph).sin())
                .sum();
            let band: f64 = noise
                .iter()
                .map(|&(f, ph)| (2.0 * PI * f * t + ph).sin())
                .sum::<f64>()
                / (noise.len() as f64).sqrt();
            let env = (1.0 - (-t / attack).exp())
                * (1.0 - sig.mod_depth
                    + sig.mod_depth * (2.0 * PI * sig.mod_rate * t + mod_phase).cos());
            env * (tonal + sig.noise_gain * band)
        })
        .collect();

    let peak = samples.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    if peak > 0.0 {
        let scale = PEAK_LIMIT * gain / peak;
        samples.iter_mut().for_each(|s| *s *= scale);
    }
    Ok(Waveform {
        samples,
        sample_rate: spec.sample_rate,
        class_ids: vec![class_id],
        relation: AudioRelation::Single,
    })
}

/// `a_i ⊕ a_j`: the second clip follows the first.
pub fn concat(first: &Waveform, second: &Waveform) -> Result<Waveform> {
    first.check_single("concat")?;
    second.check_single("concat")?;
    if first.sample_rate != second.sample_rate {
        return Err(Error::InvalidArgument(format!(
            "concat: sample rates differ ({} vs {})",
            first.sample_rate, second.sample_rate
        )));
    }
    let mut samples = Vec::with_capacity(first.len() + second.len());
    samples.extend_from_slice(&first.samples);
    samples.extend_from_slice(&second.samples);
    Ok(Waveform {
        samples,
        sample_rate: first.sample_rate,
        class_ids: vec![first.class_ids[0], second.class_ids[0]],
        relation: AudioRelation::Concat,
    })
}

/// `a_i ∧ a_j`: elementwise mean, rescaled to the peak limit only when the
/// mix exceeds it.
pub fn overlay(a: &Waveform, b: &Waveform) -> Result<Waveform> {
    a.check_single("overlay")?;
    b.check_single("overlay")?;
    if a.sample_rate != b.sample_rate {
        return Err(Error::InvalidArgument(format!(
            "overlay: sample rates differ ({} vs {})",
            a.sample_rate, b.sample_rate
        )));
    }
    if a.len() != b.len() {
        return Err(Error::InvalidArgument(format!(
            "overlay: lengths differ ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    let mut samples: Vec<f64> = a
        .samples
        .iter()
        .zip(&b.samples)
        .map(|(x, y)| 0.5 * (x + y))
        .collect();
    let peak = samples.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    if peak > PEAK_LIMIT {
        let scale = PEAK_LIMIT / peak;
        samples.iter_mut().for_each(|s| *s *= scale);
    }
    Ok(Waveform {
        samples,
        sample_rate: a.sample_rate,
        class_ids: vec![a.class_ids[0], b.class_ids[0]],
        relation: AudioRelation::Overlay,
    })
}

/// Temporal inversion of the pair `(a_i, a_j)`: returns `a_j ⊕ a_i`.
///
/// Event order is swapped; samples inside each event are never reversed.
pub fn apply_time_inversion(first: &Waveform, second: &Waveform) -> Result<Waveform> {
    concat(second, first)
}

/// Temporal inversion applied to an already concatenated clip.
pub fn invert_composite(w: &Waveform) -> Result<Waveform> {
    let (first, second) = w.split_halves()?;
    apply_time_inversion(&first, &second)
}
