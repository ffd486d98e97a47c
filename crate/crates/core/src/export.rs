//! Writing the generated corpus to disk: WAV clips, a manifest, the caption
//! vocabulary and the class-pair split.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::audio::CorpusSpec;
use crate::captions::{self, Vocabulary};
use crate::dataset::{CompositeSample, ManifestRow, PairKey, PairSplit, SampleRelation};
use crate::error::{Error, Result};
use crate::trainer::{csv_string, PreparedData};
use crate::wav;

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const VOCAB_FILE: &str = "vocabulary.json";
pub const CORPUS_FILE: &str = "corpus.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusInfo {
    pub spec: CorpusSpec,
    pub class_names: Vec<String>,
    pub train_pairs: Vec<PairKey>,
    pub test_pairs: Vec<PairKey>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportSummary {
    pub singles: usize,
    pub stage_a: usize,
    pub stage_b: usize,
    pub wav_files: usize,
}

fn relation_name(r: SampleRelation) -> &'static str {
    match r {
        SampleRelation::Single => "single",
        SampleRelation::Dual => "dual",
        SampleRelation::Before => "before",
        SampleRelation::After => "after",
        SampleRelation::While => "while",
    }
}

fn single_path(class: usize, instance: usize) -> String {
    format!("clips/c{class:03}_i{instance:02}.wav")
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn split_name(split: &PairSplit, item: &CompositeSample) -> &'static str {
    if split.train.contains(&item.key()) {
        "train"
    } else {
        "test"
    }
}

/// Write every single clip and the manifest of all items under `dir`.
///
/// With `composite_audio` false the composite rows still appear in the
/// manifest, pointing at the path they would be rendered to, but no composite
/// WAV is written. Re-running with the same inputs rewrites identical bytes.
pub fn export_dataset(
    data: &PreparedData,
    dir: &Path,
    composite_audio: bool,
) -> Result<ExportSummary> {
    let corpus = &data.corpus;
    let spec = &corpus.spec;
    let mut rows = Vec::new();
    let mut summary = ExportSummary::default();
    let held_out = spec.held_out_instances();

    for class in 0..corpus.num_classes() {
        let caption = captions::single_caption(&corpus.classes, class)?;
        for instance in 0..spec.clips_per_class {
            let rel = single_path(class, instance);
            let w = corpus.clip(class, instance)?;
            write_file(&dir.join(&rel), &wav::encode_wav(&w.samples, w.sample_rate))?;
            summary.wav_files += 1;
            summary.singles += 1;
            rows.push(ManifestRow {
                set: "single".into(),
                split: if held_out.contains(&instance) {
                    "held_out"
                } else {
                    "train"
                }
                .into(),
                relation: "single".into(),
                class_1: class,
                class_2: None,
                instance_1: instance,
                instance_2: None,
                wav_path: rel,
                caption: caption.text.clone(),
            });
        }
    }

    let sets = [("stage_a", &data.stage_a), ("stage_b", &data.stage_b)];
    for (set, items) in sets {
        let mut all: Vec<&CompositeSample> = items.train.iter().chain(&items.test).collect();
        all.sort_by_key(|it| (it.pair, relation_name(it.relation)));
        for item in all {
            let parts = &item.audio.parts;
            let rel = if item.relation == SampleRelation::Single {
                single_path(parts[0].class, parts[0].instance)
            } else {
                let path = format!(
                    "{set}/p{:03}_{:03}_{}.wav",
                    item.pair.0,
                    item.pair.1,
                    relation_name(item.relation)
                );
                if composite_audio {
                    let w = item.audio.render(corpus)?;
                    write_file(
                        &dir.join(&path),
                        &wav::encode_wav(&w.samples, w.sample_rate),
                    )?;
                    summary.wav_files += 1;
                }
                path
            };
            if set == "stage_a" {
                summary.stage_a += 1;
            } else {
                summary.stage_b += 1;
            }
            rows.push(ManifestRow {
                set: set.into(),
                split: split_name(&data.split, item).into(),
                relation: relation_name(item.relation).into(),
                class_1: parts[0].class,
                class_2: parts.get(1).map(|p| p.class),
                instance_1: parts[0].instance,
                instance_2: parts.get(1).map(|p| p.instance),
                wav_path: rel,
                caption: item.caption.text.clone(),
            });
        }
    }

    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &rows {
        w.serialize(r)?;
    }
    write_file(&dir.join(MANIFEST_FILE), csv_string(w)?.as_bytes())?;

    let vocab = Vocabulary::build(&corpus.classes);
    write_file(&dir.join(VOCAB_FILE), vocab.to_json()?.as_bytes())?;

    let info = CorpusInfo {
        spec: spec.clone(),
        class_names: corpus.classes.names().to_vec(),
        train_pairs: data.split.train.iter().copied().collect(),
        test_pairs: data.split.test.iter().copied().collect(),
    };
    write_file(
        &dir.join(CORPUS_FILE),
        serde_json::to_string_pretty(&info)?.as_bytes(),
    )?;
    Ok(summary)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize()
        .map(|row| row.map_err(Error::from))
        .collect()
}

/// Row counts by `set`.
pub fn manifest_counts(rows: &[ManifestRow]) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for r in rows {
        *out.entry(r.set.clone()).or_insert(0) += 1;
    }
    out
}

/// Every file under `dir` with its SHA-256, sorted by relative path.
pub fn tree_digest(dir: &Path) -> Result<Vec<(PathBuf, String)>> {
    use sha2::{Digest, Sha256};
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).map_err(|e| Error::io(&d, e))? {
            let p = entry.map_err(|e| Error::io(&d, e))?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
                let rel = p.strip_prefix(dir).unwrap_or(&p).to_path_buf();
                out.push((rel, hex::encode(Sha256::digest(&bytes))));
            }
        }
    }
    out.sort();
    Ok(out)
}
