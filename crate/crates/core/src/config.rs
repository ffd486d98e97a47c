//! Run configuration and the end-to-end pipeline built from it.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::audio::CorpusSpec;
use crate::dataset::{Corpus, SplitMode};
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::features::FeatureConfig;
use crate::model::Model;
use crate::seed;
use crate::trainer::{
    fingerprint, init_model, run_two_stage, PreparedData, TrainConfig, TrainReport,
};
use crate::zste::{evaluate, EvalOptions, ReportMeta, ZsteReport};

/// Environment variable that overrides the output root of every command.
pub const OUTPUT_ENV: &str = "TEMPORAL_ALIGN_OUTPUT";

/// The JSON schema shipped with the crate.
pub const SCHEMA: &str = include_str!("../schema/run_config.schema.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub ratio: f64,
    pub mode: SplitMode,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            ratio: 0.7,
            mode: SplitMode::Pairs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Global seed; every component seed is derived from it by name.
    pub seed: u64,
    pub corpus: CorpusSpec,
    pub split: SplitConfig,
    pub features: FeatureConfig,
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    pub eval: EvalOptions,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            corpus: CorpusSpec::default(),
            split: SplitConfig::default(),
            features: FeatureConfig::default(),
            encoder: EncoderConfig::default(),
            train: TrainConfig::default(),
            eval: EvalOptions::default(),
            output_dir: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.corpus.validate()?;
        if !(self.split.ratio > 0.0 && self.split.ratio < 1.0) {
            return Err(Error::Config(format!(
                "split ratio {} not in (0, 1)",
                self.split.ratio
            )));
        }
        self.features.validate()?;
        self.encoder.validate()?;
        self.train.validate()?;
        self.eval.validate()
    }

    /// Copy with every component seed derived from the global seed.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        c.corpus.seed = seed::derive(self.seed, "corpus");
        c.train.seed = seed::derive(self.seed, "batch");
        c.eval.seed = seed::derive(self.seed, "eval");
        c
    }

    pub fn with_seed(&self, s: u64) -> Self {
        Self {
            seed: s,
            ..self.clone()
        }
    }

    pub fn split_seed(&self) -> u64 {
        seed::derive(self.seed, "split")
    }

    pub fn init_seed(&self) -> u64 {
        seed::derive(self.seed, "init")
    }

    pub fn fingerprint(&self) -> String {
        fingerprint(self)
    }

    /// Corpus, split and item sets for the resolved seeds.
    pub fn prepare(&self) -> Result<PreparedData> {
        let r = self.resolved();
        PreparedData::new(
            Corpus::new(r.corpus)?,
            r.split.ratio,
            self.split_seed(),
            r.split.mode,
        )
    }

    pub fn initial_model(&self, data: &PreparedData) -> Result<Model> {
        init_model(
            &data.corpus,
            &self.encoder,
            &self.features,
            self.init_seed(),
            self.train.coefficients.gamma,
        )
    }

    pub fn evaluate(
        &self,
        model: &Model,
        data: &PreparedData,
        checkpoint_id: Option<String>,
    ) -> Result<ZsteReport> {
        let r = self.resolved();
        evaluate(
            model,
            &data.corpus,
            &data.split,
            &r.eval,
            ReportMeta {
                checkpoint_id,
                encoder: "trained".into(),
                num_classes: data.corpus.num_classes(),
                config_fingerprint: self.fingerprint(),
            },
        )
    }

    /// Train from a fresh model on prepared data, then evaluate.
    pub fn train_and_evaluate(&self, data: &PreparedData, initial: Model) -> Result<Experiment> {
        let r = self.resolved();
        let (model, train) = run_two_stage(&r.train, data, initial)?;
        let eval = self.evaluate(&model, data, Some(train.checkpoint_id.clone()))?;
        Ok(Experiment { model, train, eval })
    }

    pub fn run(&self) -> Result<Experiment> {
        let data = self.prepare()?;
        let initial = self.initial_model(&data)?;
        self.train_and_evaluate(&data, initial)
    }
}

#[derive(Debug, Clone)]
pub struct Experiment {
    pub model: Model,
    pub train: TrainReport,
    pub eval: ZsteReport,
}

/// Output root: explicit flag, then the environment, then the config.
pub fn output_root(flag: Option<&Path>, cfg: &RunConfig) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    match std::env::var_os(OUTPUT_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => cfg.output_dir.clone(),
    }
}
