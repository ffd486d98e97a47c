//! Toy audio and text encoders: a frozen random base followed by trainable
//! linear projections and L2 normalization.
//!
//! Audio: pooled band features `(2F)` → frozen tanh layers → `φ` → unit norm.
//! Text: token embeddings pooled as `[mean ; Σ_k (k/L)·e_k]` → frozen tanh
//! layers → `θ` → unit norm.
//!
//! Only the projections (`φ`, `θ` and their biases) are trainable. They live
//! in one flat vector so optimizers and finite-difference checks can address
//! every coordinate uniformly; the frozen block has no mutable accessor.

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::features::{pool_temporal, FeatureMatrix};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    /// Frequency bands `F` of the audio features.
    pub num_bands: usize,
    pub vocab_size: usize,
    pub token_dim: usize,
    pub hidden_dim: usize,
    /// Width of the frozen base output fed to each projection.
    pub base_dim: usize,
    /// Joint embedding dimension `d`.
    pub embed_dim: usize,
    /// Half-width of the uniform init of the trainable projections.
    pub projection_init: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            num_bands: 32,
            vocab_size: 28,
            token_dim: 64,
            hidden_dim: 256,
            base_dim: 256,
            embed_dim: 32,
            // LeCun-uniform half-width for the default base width.
            projection_init: (3.0f64 / 256.0).sqrt(),
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.num_bands,
            self.vocab_size,
            self.token_dim,
            self.hidden_dim,
            self.base_dim,
            self.embed_dim,
        ];
        if dims.contains(&0) {
            return Err(Error::Config(format!(
                "encoder dimensions must be positive: {self:?}"
            )));
        }
        if !(self.projection_init.is_finite() && self.projection_init > 0.0) {
            return Err(Error::Config("projection_init must be positive".into()));
        }
        Ok(())
    }
}

/// Dense layer `y = W x + b`, `W` row-major `out x in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn random(inputs: usize, outputs: usize, gain: f64, bias: f64, rng: &mut impl Rng) -> Self {
        let a = gain * (3.0 / inputs as f64).sqrt();
        Self {
            inputs,
            outputs,
            weight: (0..inputs * outputs)
                .map(|_| rng.gen_range(-a..a))
                .collect(),
            bias: (0..outputs).map(|_| rng.gen_range(-bias..bias)).collect(),
        }
    }

    fn forward_tanh(&self, x: &[f64]) -> Vec<f64> {
        self.weight
            .chunks_exact(self.inputs)
            .zip(&self.bias)
            .map(|(row, b)| (dot(row, x) + b).tanh())
            .collect()
    }

    fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Parameters that never change after initialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrozenBase {
    audio_hidden: Dense,
    audio_out: Dense,
    token_table: Vec<f64>,
    text_hidden: Dense,
    text_out: Dense,
}

impl FrozenBase {
    pub fn param_count(&self) -> usize {
        self.audio_hidden.param_count()
            + self.audio_out.param_count()
            + self.token_table.len()
            + self.text_hidden.param_count()
            + self.text_out.param_count()
    }

    /// SHA-256 over the little-endian bytes of every frozen value.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        let layers = [
            &self.audio_hidden,
            &self.audio_out,
            &self.text_hidden,
            &self.text_out,
        ];
        for l in layers {
            for v in l.weight.iter().chain(&l.bias) {
                h.update(v.to_le_bytes());
            }
        }
        for v in &self.token_table {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// Which side of the encoder pair a vector belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Modality {
    Audio,
    Text,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub config: EncoderConfig,
    pub seed: u64,
    frozen: FrozenBase,
    /// `[φ (d x base) | φ bias (d) | θ (d x base) | θ bias (d)]`.
    trainable: Vec<f64>,
}

/// Offsets of the trainable blocks inside the flat vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainableLayout {
    pub embed_dim: usize,
    pub base_dim: usize,
}

impl TrainableLayout {
    pub fn weight_len(&self) -> usize {
        self.embed_dim * self.base_dim
    }

    pub fn block_len(&self) -> usize {
        self.weight_len() + self.embed_dim
    }

    pub fn total(&self) -> usize {
        2 * self.block_len()
    }

    /// Start of the projection block for one modality.
    pub fn offset(&self, m: Modality) -> usize {
        match m {
            Modality::Audio => 0,
            Modality::Text => self.block_len(),
        }
    }
}

pub fn init_params(seed_value: u64, config: &EncoderConfig) -> Result<EncoderParams> {
    config.validate()?;
    let mut rng = seed::rng(seed_value, "init-frozen");
    let c = config;
    let frozen = FrozenBase {
        audio_hidden: Dense::random(2 * c.num_bands, c.hidden_dim, 1.5, 0.1, &mut rng),
        audio_out: Dense::random(c.hidden_dim, c.base_dim, 1.5, 0.1, &mut rng),
        token_table: (0..c.vocab_size * c.token_dim)
            .map(|_| rng.gen_range(-3f64.sqrt()..3f64.sqrt()))
            .collect(),
        text_hidden: Dense::random(2 * c.token_dim, c.hidden_dim, 1.5, 0.1, &mut rng),
        text_out: Dense::random(c.hidden_dim, c.base_dim, 1.5, 0.1, &mut rng),
    };
    let layout = TrainableLayout {
        embed_dim: c.embed_dim,
        base_dim: c.base_dim,
    };
    let mut rng = seed::rng(seed_value, "init-projection");
    let s = c.projection_init;
    let mut trainable = vec![0.0; layout.total()];
    for m in [Modality::Audio, Modality::Text] {
        let off = layout.offset(m);
        for w in &mut trainable[off..off + layout.weight_len()] {
            *w = rng.gen_range(-s..s);
        }
    }
    Ok(EncoderParams {
        config: config.clone(),
        seed: seed_value,
        frozen,
        trainable,
    })
}

impl EncoderParams {
    pub fn frozen(&self) -> &FrozenBase {
        &self.frozen
    }

    pub fn trainable(&self) -> &[f64] {
        &self.trainable
    }

    pub fn layout(&self) -> TrainableLayout {
        TrainableLayout {
            embed_dim: self.config.embed_dim,
            base_dim: self.config.base_dim,
        }
    }

    /// Replace the trainable vector; the frozen block is untouched.
    pub fn set_trainable(&mut self, values: Vec<f64>) -> Result<()> {
        if values.len() != self.trainable.len() {
            return Err(Error::Shape(format!(
                "trainable vector has {} entries, expected {}",
                values.len(),
                self.trainable.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite trainable parameter".into()));
        }
        self.trainable = values;
        Ok(())
    }

    pub fn trainable_mut(&mut self) -> &mut [f64] {
        &mut self.trainable
    }

    pub fn trainable_count(&self) -> usize {
        self.trainable.len()
    }

    pub fn total_count(&self) -> usize {
        self.trainable.len() + self.frozen.param_count()
    }

    pub fn trainable_fraction(&self) -> f64 {
        self.trainable_count() as f64 / self.total_count() as f64
    }

    /// Frozen audio base: pooled `2F` features → `base_dim`.
    pub fn audio_base(&self, features: &FeatureMatrix) -> Result<Vec<f64>> {
        if features.bands != self.config.num_bands {
            return Err(Error::Shape(format!(
                "features have {} bands, encoder expects {}",
                features.bands, self.config.num_bands
            )));
        }
        if features.frames == 0 || !features.is_finite() {
            return Err(Error::Numeric("empty or non-finite feature matrix".into()));
        }
        let pooled = pool_temporal(features);
        let h = self.frozen.audio_hidden.forward_tanh(&pooled);
        Ok(self.frozen.audio_out.forward_tanh(&h))
    }

    /// Frozen text base: token ids → `base_dim`.
    pub fn text_base(&self, tokens: &[usize]) -> Result<Vec<f64>> {
        if tokens.is_empty() {
            return Err(Error::InvalidArgument(
                "cannot encode an empty token sequence".into(),
            ));
        }
        let td = self.config.token_dim;
        let len = tokens.len() as f64;
        let mut pooled = vec![0.0; 2 * td];
        for (k, &tok) in tokens.iter().enumerate() {
            if tok >= self.config.vocab_size {
                return Err(Error::Shape(format!(
                    "token id {tok} outside vocabulary of {}",
                    self.config.vocab_size
                )));
            }
            let emb = &self.frozen.token_table[tok * td..(tok + 1) * td];
            let pos = (k as f64 + 1.0) / len;
            for (i, &e) in emb.iter().enumerate() {
                pooled[i] += e / len;
                pooled[td + i] += pos * e;
            }
        }
        let h = self.frozen.text_hidden.forward_tanh(&pooled);
        Ok(self.frozen.text_out.forward_tanh(&h))
    }

    /// Pre-normalization projection `W h + b`.
    pub fn project_raw(&self, m: Modality, base: &[f64]) -> Result<Vec<f64>> {
        let layout = self.layout();
        if base.len() != layout.base_dim {
            return Err(Error::Shape(format!(
                "base vector has {} entries, projection expects {}",
                base.len(),
                layout.base_dim
            )));
        }
        let off = layout.offset(m);
        let w = &self.trainable[off..off + layout.weight_len()];
        let b = &self.trainable[off + layout.weight_len()..off + layout.block_len()];
        Ok(w.chunks_exact(layout.base_dim)
            .zip(b)
            .map(|(row, bias)| dot(row, base) + bias)
            .collect())
    }

    /// Projection followed by L2 normalization.
    pub fn project(&self, m: Modality, base: &[f64]) -> Result<Vec<f64>> {
        let raw = self.project_raw(m, base)?;
        normalize(raw)
    }

    pub fn encode_audio(&self, features: &FeatureMatrix) -> Result<Vec<f64>> {
        self.project(Modality::Audio, &self.audio_base(features)?)
    }

    pub fn encode_text(&self, tokens: &[usize]) -> Result<Vec<f64>> {
        self.project(Modality::Text, &self.text_base(tokens)?)
    }
}

/// Scale to unit L2 norm; a zero or non-finite vector is an error.
pub fn normalize(mut v: Vec<f64>) -> Result<Vec<f64>> {
    let norm = dot(&v, &v).sqrt();
    if !norm.is_finite() {
        return Err(Error::Numeric(
            "non-finite vector before normalization".into(),
        ));
    }
    if norm == 0.0 {
        return Err(Error::Numeric("zero vector cannot be normalized".into()));
    }
    v.iter_mut().for_each(|x| *x /= norm);
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn features(seed_value: u64, frames: usize) -> FeatureMatrix {
        let mut rng = seed::rng(seed_value, "test-features");
        FeatureMatrix {
            bands: 32,
            frames,
            values: (0..32 * frames).map(|_| rng.gen_range(-2.0..2.0)).collect(),
        }
    }

    #[test]
    fn embeddings_are_unit_norm_and_deterministic() {
        let p = init_params(0, &EncoderConfig::default()).unwrap();
        for s in 0..5 {
            let z = p.encode_audio(&features(s, 30)).unwrap();
            assert!((dot(&z, &z).sqrt() - 1.0).abs() < 1e-9);
            assert_eq!(z, p.encode_audio(&features(s, 30)).unwrap());
        }
        let t = p.encode_text(&[3, 7, 19]).unwrap();
        assert!((dot(&t, &t).sqrt() - 1.0).abs() < 1e-9);
        assert_eq!(t, p.encode_text(&[3, 7, 19]).unwrap());
    }

    #[test]
    fn text_encoding_is_order_sensitive() {
        let p = init_params(0, &EncoderConfig::default()).unwrap();
        let ab = p.encode_text(&[20, 6, 21]).unwrap();
        let ba = p.encode_text(&[21, 6, 20]).unwrap();
        assert_ne!(ab, ba);
    }

    #[test]
    fn empty_text_and_zero_vectors_are_errors() {
        let p = init_params(0, &EncoderConfig::default()).unwrap();
        assert!(matches!(p.encode_text(&[]), Err(Error::InvalidArgument(_))));
        assert!(matches!(normalize(vec![0.0; 4]), Err(Error::Numeric(_))));
        let mut zeroed = p.clone();
        let n = zeroed.trainable_count();
        zeroed.set_trainable(vec![0.0; n]).unwrap();
        assert!(matches!(
            zeroed.encode_audio(&features(0, 10)),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn shape_errors() {
        let p = init_params(0, &EncoderConfig::default()).unwrap();
        let bad = FeatureMatrix {
            bands: 8,
            frames: 2,
            values: vec![0.0; 16],
        };
        assert!(matches!(p.encode_audio(&bad), Err(Error::Shape(_))));
        assert!(matches!(p.encode_text(&[999]), Err(Error::Shape(_))));
    }

    #[test]
    fn init_is_seeded_and_fraction_in_range() {
        let cfg = EncoderConfig::default();
        let a = init_params(5, &cfg).unwrap();
        assert_eq!(a, init_params(5, &cfg).unwrap());
        assert_ne!(a, init_params(6, &cfg).unwrap());
        let f = a.trainable_fraction();
        assert!((0.05..=0.15).contains(&f), "fraction {f}");
    }

    #[test]
    fn set_trainable_leaves_frozen_alone() {
        let mut p = init_params(1, &EncoderConfig::default()).unwrap();
        let before = p.frozen().digest();
        let n = p.trainable_count();
        p.set_trainable(vec![0.5; n]).unwrap();
        assert_eq!(p.frozen().digest(), before);
        assert!(p.set_trainable(vec![0.5; n - 1]).is_err());
        assert!(p.set_trainable(vec![f64::NAN; n]).is_err());
    }

    #[test]
    fn invalid_dims_rejected() {
        let cfg = EncoderConfig {
            embed_dim: 0,
            ..EncoderConfig::default()
        };
        assert!(init_params(0, &cfg).is_err());
    }
}
