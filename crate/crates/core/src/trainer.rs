//! Two-stage post-training of the projections: stage A (single vs. dual
//! sounds) followed by stage B (temporal order), or stage B alone.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::captions::Vocabulary;
use crate::dataset::{
    build_stage_a_items, build_stage_b_items, epoch_batches, CompositeSample, Corpus, PairSplit,
    SplitMode, Stage, TrainingBatch,
};
use crate::encoder::{init_params, EncoderConfig};
use crate::error::{Error, Result};
use crate::features::{BandStats, FeatureConfig, FeatureExtractor};
use crate::gradient::{batch_loss, loss_and_grad, FeatureBatch};
use crate::loss::{LossCoefficients, StageALabels};
use crate::model::{Frontend, Model};
use crate::optim::{Optimizer, OptimizerKind};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// `[A, B]` for the two-stage run, `[B]` for the ablation.
    pub stages: Vec<Stage>,
    /// Epochs per stage.
    pub epochs: usize,
    /// Rows per block `n`.
    pub block_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    #[serde(default)]
    pub seed: u64,
    pub coefficients: LossCoefficients,
    #[serde(default)]
    pub checkpoint: Option<std::path::PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            stages: vec![Stage::A, Stage::B],
            epochs: 30,
            block_size: 16,
            learning_rate: 1e-4,
            optimizer: OptimizerKind::Adam,
            seed: 0,
            coefficients: LossCoefficients::unity(),
            checkpoint: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.validate_plan()?;
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }

    /// Everything except the learning-rate sign, which a direct stage call
    /// may set to zero.
    fn validate_plan(&self) -> Result<()> {
        match self.stages.as_slice() {
            [Stage::A, Stage::B] | [Stage::B] | [Stage::A] => {}
            other => {
                return Err(Error::Config(format!(
                    "stages must be [A, B], [B] or [A], got {other:?}"
                )))
            }
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.block_size < 2 {
            return Err(Error::Config("block_size must be at least 2".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::Config(format!(
                "learning_rate must be non-negative, got {}",
                self.learning_rate
            )));
        }
        self.coefficients.validate()
    }

    pub fn fingerprint(&self) -> String {
        fingerprint(self)
    }
}

/// Short SHA-256 of a value's JSON form.
pub fn fingerprint<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).unwrap_or_default();
    hex::encode(&Sha256::digest(&json)[..8])
}

pub fn parse_stages(s: &str) -> Result<Vec<Stage>> {
    match s.to_ascii_uppercase().as_str() {
        "AB" => Ok(vec![Stage::A, Stage::B]),
        "B" => Ok(vec![Stage::B]),
        "A" => Ok(vec![Stage::A]),
        other => Err(Error::Config(format!(
            "stages must be AB, B or A, got {other:?}"
        ))),
    }
}

pub fn stages_label(stages: &[Stage]) -> String {
    stages
        .iter()
        .map(|s| match s {
            Stage::A => 'A',
            Stage::B => 'B',
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct SplitItems {
    pub train: Vec<CompositeSample>,
    pub test: Vec<CompositeSample>,
}

/// Corpus, split and both stages' item sets.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub corpus: Corpus,
    pub split: PairSplit,
    pub stage_a: SplitItems,
    pub stage_b: SplitItems,
}

impl PreparedData {
    pub fn new(corpus: Corpus, ratio: f64, split_seed: u64, mode: SplitMode) -> Result<Self> {
        let split = PairSplit::new(corpus.num_classes(), ratio, split_seed, mode)?;
        let (a_train, a_test) = split.partition(&build_stage_a_items(&corpus)?);
        let (b_train, b_test) = split.partition(&build_stage_b_items(&corpus)?);
        Ok(Self {
            corpus,
            split,
            stage_a: SplitItems {
                train: a_train,
                test: a_test,
            },
            stage_b: SplitItems {
                train: b_train,
                test: b_test,
            },
        })
    }

    pub fn items(&self, stage: Stage) -> &SplitItems {
        match stage {
            Stage::A => &self.stage_a,
            Stage::B => &self.stage_b,
        }
    }
}

/// Fresh model: frozen base and projections from `init_seed`, band
/// statistics fitted on the training instances of every class.
pub fn init_model(
    corpus: &Corpus,
    encoder: &EncoderConfig,
    features: &FeatureConfig,
    init_seed: u64,
    gamma: f64,
) -> Result<Model> {
    let vocabulary = Vocabulary::build(&corpus.classes);
    let cfg = EncoderConfig {
        vocab_size: vocabulary.len(),
        num_bands: features.num_bands,
        ..encoder.clone()
    };
    let extractor = FeatureExtractor::new(features, corpus.spec.sample_rate)?;
    let mut mats = Vec::new();
    for class in 0..corpus.num_classes() {
        for inst in corpus.spec.train_instances() {
            mats.push(extractor.extract(&corpus.clip(class, inst)?)?);
        }
    }
    let band_stats = BandStats::fit(&mats)?;
    let frontend = Frontend {
        features: features.clone(),
        sample_rate: corpus.spec.sample_rate,
        band_stats,
        vocabulary,
    };
    Model::new(init_params(init_seed, &cfg)?, frontend, gamma)
}

/// Frozen-base outputs of every item; valid for as long as only the
/// projections change.
#[derive(Debug, Clone)]
pub struct BaseCache {
    pub audio: Vec<Vec<f64>>,
    pub text: Vec<Vec<f64>>,
}

impl BaseCache {
    pub fn build(model: &Model, corpus: &Corpus, items: &[CompositeSample]) -> Result<Self> {
        let mut audio = Vec::with_capacity(items.len());
        let mut text = Vec::with_capacity(items.len());
        for it in items {
            audio.push(model.audio_base(&it.audio.render(corpus)?)?);
            text.push(model.text_base(&it.caption.text)?);
        }
        Ok(Self { audio, text })
    }

    pub fn batch(&self, items: &[CompositeSample], b: &TrainingBatch) -> FeatureBatch {
        let flat = b.flat();
        let labels = (b.stage == Stage::A).then(|| StageALabels {
            single_class: b.blocks[0].iter().map(|&i| items[i].pair.0).collect(),
            dual_classes: b.blocks[1].iter().map(|&i| items[i].pair).collect(),
        });
        FeatureBatch {
            stage: b.stage,
            n: b.block_size(),
            audio: flat.iter().map(|&i| self.audio[i].clone()).collect(),
            text: flat.iter().map(|&i| self.text[i].clone()).collect(),
            labels,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub stage: Stage,
    /// 0 is the state before any update.
    pub epoch: usize,
    /// Mean batch loss; at epoch 0 evaluated on the first epoch's batches.
    pub train_loss: f64,
    pub heldout_loss: f64,
    pub wall_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: Stage,
    pub batches_per_epoch: Vec<usize>,
    pub heldout_batches: usize,
    pub epochs: Vec<EpochRecord>,
    pub frozen_digest: String,
}

impl StageReport {
    pub fn initial_train_loss(&self) -> f64 {
        self.epochs[0].train_loss
    }

    pub fn final_train_loss(&self) -> f64 {
        self.epochs.last().map_or(f64::NAN, |e| e.train_loss)
    }

    pub fn heldout_curve(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.heldout_loss).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub stages: Vec<StageReport>,
    pub wall_secs: f64,
    pub checkpoint_id: String,
    pub config_fingerprint: String,
    pub trainable_fraction: f64,
}

impl TrainReport {
    pub fn stage(&self, s: Stage) -> Option<&StageReport> {
        self.stages.iter().find(|r| r.stage == s)
    }

    /// Loss curves as CSV.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for e in self.stages.iter().flat_map(|s| &s.epochs) {
            w.serialize(e)?;
        }
        csv_string(w)
    }
}

pub(crate) fn csv_string(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Csv(e.into_error().into()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn mean_loss(
    model: &Model,
    cache: &BaseCache,
    items: &[CompositeSample],
    batches: &[TrainingBatch],
    c: &LossCoefficients,
) -> Result<f64> {
    let mut total = 0.0;
    for b in batches {
        total += batch_loss(&model.params, &cache.batch(items, b), c)?.total;
    }
    Ok(total / batches.len() as f64)
}

/// Train one stage in place. Only `model.params`' trainable vector changes.
pub fn train_stage(
    stage: Stage,
    model: &mut Model,
    data: &PreparedData,
    cfg: &TrainConfig,
) -> Result<StageReport> {
    cfg.validate_plan()?;
    let start = Instant::now();
    let items = data.items(stage);
    let c = &cfg.coefficients;
    let tag = match stage {
        Stage::A => "batches-a",
        Stage::B => "batches-b",
    };
    let batch_seed = seed::derive(cfg.seed, tag);
    let train_cache = BaseCache::build(model, &data.corpus, &items.train)?;
    let test_cache = BaseCache::build(model, &data.corpus, &items.test)?;
    let heldout = epoch_batches(
        stage,
        &items.test,
        cfg.block_size,
        seed::derive(cfg.seed, "heldout"),
        0,
    )?;
    let digest = model.params.frozen().digest();

    let mut optimizer = Optimizer::new(
        cfg.optimizer,
        cfg.learning_rate,
        model.params.trainable_count(),
    )?;
    let first = epoch_batches(stage, &items.train, cfg.block_size, batch_seed, 1)?;
    let mut records = vec![EpochRecord {
        stage,
        epoch: 0,
        train_loss: mean_loss(model, &train_cache, &items.train, &first, c)?,
        heldout_loss: mean_loss(model, &test_cache, &items.test, &heldout, c)?,
        wall_secs: start.elapsed().as_secs_f64(),
    }];
    let mut batches_per_epoch = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let batches = if epoch == 1 {
            first.clone()
        } else {
            epoch_batches(stage, &items.train, cfg.block_size, batch_seed, epoch)?
        };
        batches_per_epoch.push(batches.len());
        let mut sum = 0.0;
        for (bi, b) in batches.iter().enumerate() {
            let fb = train_cache.batch(&items.train, b);
            let (loss, grad) = loss_and_grad(&model.params, &fb, c).map_err(|e| {
                Error::Numeric(format!("stage {stage:?} epoch {epoch} batch {bi}: {e}"))
            })?;
            sum += loss.total;
            optimizer.step(model.params.trainable_mut(), &grad);
            if model.params.trainable().iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!(
                    "stage {stage:?} epoch {epoch} batch {bi}: parameters diverged (loss {})",
                    loss.total
                )));
            }
        }
        let heldout_loss = mean_loss(model, &test_cache, &items.test, &heldout, c)
            .map_err(|e| Error::Numeric(format!("stage {stage:?} epoch {epoch} held-out: {e}")))?;
        records.push(EpochRecord {
            stage,
            epoch,
            train_loss: sum / batches.len() as f64,
            heldout_loss,
            wall_secs: start.elapsed().as_secs_f64(),
        });
    }
    if model.params.frozen().digest() != digest {
        return Err(Error::Numeric(
            "frozen parameters changed during training".into(),
        ));
    }
    Ok(StageReport {
        stage,
        batches_per_epoch,
        heldout_batches: heldout.len(),
        epochs: records,
        frozen_digest: digest,
    })
}

/// Run every configured stage in order, each starting from the previous
/// stage's output with a fresh optimizer. Saves a checkpoint when
/// `cfg.checkpoint` is set.
pub fn run_two_stage(
    cfg: &TrainConfig,
    data: &PreparedData,
    mut model: Model,
) -> Result<(Model, TrainReport)> {
    cfg.validate()?;
    let start = Instant::now();
    let mut stages = Vec::new();
    for &stage in &cfg.stages {
        stages.push(train_stage(stage, &mut model, data, cfg)?);
    }
    let checkpoint_id = match &cfg.checkpoint {
        Some(path) => model.save(path)?,
        None => model.id(),
    };
    let report = TrainReport {
        stages,
        wall_secs: start.elapsed().as_secs_f64(),
        checkpoint_id,
        config_fingerprint: cfg.fingerprint(),
        trainable_fraction: model.params.trainable_fraction(),
    };
    Ok((model, report))
}
