//! A full audio/text model (feature frontend plus encoder parameters) and its
//! checkpoint file.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::audio::Waveform;
use crate::captions::{tokenize, Vocabulary};
use crate::encoder::{EncoderParams, Modality};
use crate::error::{Error, Result};
use crate::features::{BandStats, FeatureConfig, FeatureExtractor, FeatureMatrix};

/// Anything that maps clips and prompts into a shared unit-norm space.
pub trait Embedder {
    fn embed_audio(&self, w: &Waveform) -> Result<Vec<f64>>;
    fn embed_text(&self, text: &str) -> Result<Vec<f64>>;
    /// Scale applied to cosine similarities before the softmax.
    fn gamma(&self) -> f64;
}

/// Everything between raw inputs and the frozen base.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frontend {
    pub features: FeatureConfig,
    pub sample_rate: u32,
    pub band_stats: BandStats,
    pub vocabulary: Vocabulary,
}

pub struct Model {
    pub params: EncoderParams,
    pub frontend: Frontend,
    pub gamma: f64,
    extractor: FeatureExtractor,
}

impl std::fmt::Debug for Model {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Model")
            .field("params", &self.params)
            .field("frontend", &self.frontend)
            .field("gamma", &self.gamma)
            .finish()
    }
}

impl Clone for Model {
    fn clone(&self) -> Self {
        Self::new(self.params.clone(), self.frontend.clone(), self.gamma)
            .expect("a constructed model has a valid frontend")
    }
}

impl Model {
    pub fn new(params: EncoderParams, frontend: Frontend, gamma: f64) -> Result<Self> {
        if frontend.vocabulary.len() != params.config.vocab_size {
            return Err(Error::Shape(format!(
                "vocabulary has {} tokens, encoder expects {}",
                frontend.vocabulary.len(),
                params.config.vocab_size
            )));
        }
        if frontend.features.num_bands != params.config.num_bands {
            return Err(Error::Shape(
                "feature bands differ from encoder bands".into(),
            ));
        }
        let extractor = FeatureExtractor::new(&frontend.features, frontend.sample_rate)?;
        Ok(Self {
            params,
            frontend,
            gamma,
            extractor,
        })
    }

    /// Standardized log band energies of a clip.
    pub fn features(&self, w: &Waveform) -> Result<FeatureMatrix> {
        self.frontend
            .band_stats
            .normalize(&self.extractor.extract(w)?)
    }

    pub fn tokens(&self, text: &str) -> Vec<usize> {
        tokenize(text, &self.frontend.vocabulary)
    }

    /// Frozen-base output for a clip; constant while only projections train.
    pub fn audio_base(&self, w: &Waveform) -> Result<Vec<f64>> {
        self.params.audio_base(&self.features(w)?)
    }

    pub fn text_base(&self, text: &str) -> Result<Vec<f64>> {
        self.params.text_base(&self.tokens(text))
    }

    /// SHA-256 over frozen digest and trainable values.
    pub fn id(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.params.frozen().digest().as_bytes());
        for v in self.params.trainable() {
            h.update(v.to_le_bytes());
        }
        h.update(self.gamma.to_le_bytes());
        hex::encode(&h.finalize()[..8])
    }

    pub fn save(&self, path: &Path) -> Result<String> {
        let layout = self.params.layout();
        let cfg = &self.params.config;
        let file = CheckpointFile {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            id: self.id(),
            tensors: vec![
                TensorInfo::new("audio_hidden", &[cfg.hidden_dim, 2 * cfg.num_bands], false),
                TensorInfo::new("audio_out", &[cfg.base_dim, cfg.hidden_dim], false),
                TensorInfo::new("token_table", &[cfg.vocab_size, cfg.token_dim], false),
                TensorInfo::new("text_hidden", &[cfg.hidden_dim, 2 * cfg.token_dim], false),
                TensorInfo::new("text_out", &[cfg.base_dim, cfg.hidden_dim], false),
                TensorInfo::new(
                    "audio_projection",
                    &[layout.embed_dim, layout.base_dim + 1],
                    true,
                ),
                TensorInfo::new(
                    "text_projection",
                    &[layout.embed_dim, layout.base_dim + 1],
                    true,
                ),
            ],
            trainable_fraction: self.params.trainable_fraction(),
            gamma: self.gamma,
            params: self.params.clone(),
            frontend: self.frontend.clone(),
        };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let json = serde_json::to_string(&file)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))?;
        Ok(file.id)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: CheckpointFile = serde_json::from_str(&text)?;
        if file.format != CHECKPOINT_FORMAT || file.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!(
                "{}: unsupported checkpoint {} v{}",
                path.display(),
                file.format,
                file.version
            )));
        }
        let model = Self::new(file.params, file.frontend, file.gamma)?;
        if model.id() != file.id {
            return Err(Error::Config(format!(
                "{}: checkpoint id mismatch (file says {}, contents hash to {})",
                path.display(),
                file.id,
                model.id()
            )));
        }
        Ok(model)
    }
}

impl Embedder for Model {
    fn embed_audio(&self, w: &Waveform) -> Result<Vec<f64>> {
        self.params.project(Modality::Audio, &self.audio_base(w)?)
    }

    fn embed_text(&self, text: &str) -> Result<Vec<f64>> {
        self.params.project(Modality::Text, &self.text_base(text)?)
    }

    fn gamma(&self) -> f64 {
        self.gamma
    }
}

const CHECKPOINT_FORMAT: &str = "temporal-align-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
}

impl TensorInfo {
    fn new(name: &str, shape: &[usize], trainable: bool) -> Self {
        Self {
            name: name.into(),
            shape: shape.to_vec(),
            trainable,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointFile {
    format: String,
    version: u32,
    id: String,
    tensors: Vec<TensorInfo>,
    trainable_fraction: f64,
    gamma: f64,
    params: EncoderParams,
    frontend: Frontend,
}
