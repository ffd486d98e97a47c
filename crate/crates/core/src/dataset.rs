//! Stage-A and stage-B item sets, the pair-level train/test split and
//! block-structured batches.
//!
//! Items carry an [`AudioRecipe`] instead of rendered samples: the 50-class
//! stage-B set alone would otherwise hold gigabytes of PCM. Rendering is
//! deterministic, so a recipe and its waveform are interchangeable.

use std::collections::{BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{self, AudioRelation, CorpusSpec, Waveform};
use crate::captions::{self, Caption, CaptionRelation, ClassNames};
use crate::error::{Error, Result};
use crate::seed;

/// Unordered class pair `(min, max)`; the unit of the train/test split.
pub type PairKey = (usize, usize);

pub fn pair_key(i: usize, j: usize) -> PairKey {
    (i.min(j), i.max(j))
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub spec: CorpusSpec,
    pub classes: ClassNames,
}

impl Corpus {
    pub fn new(spec: CorpusSpec) -> Result<Self> {
        spec.validate()?;
        let classes = ClassNames::default_for(spec.num_classes);
        Ok(Self { spec, classes })
    }

    pub fn num_classes(&self) -> usize {
        self.spec.num_classes
    }

    pub fn clip(&self, class: usize, instance: usize) -> Result<Waveform> {
        if instance >= self.spec.clips_per_class {
            return Err(Error::InvalidArgument(format!(
                "instance {instance} out of range ({} per class)",
                self.spec.clips_per_class
            )));
        }
        audio::synth_clip(class, instance as u64, &self.spec)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ClipRef {
    pub class: usize,
    pub instance: usize,
}

/// How to render an item's audio from corpus clips.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AudioRecipe {
    pub relation: AudioRelation,
    pub parts: Vec<ClipRef>,
}

impl AudioRecipe {
    pub fn single(class: usize, instance: usize) -> Self {
        Self {
            relation: AudioRelation::Single,
            parts: vec![ClipRef { class, instance }],
        }
    }

    pub fn concat(first: ClipRef, second: ClipRef) -> Self {
        Self {
            relation: AudioRelation::Concat,
            parts: vec![first, second],
        }
    }

    pub fn overlay(a: ClipRef, b: ClipRef) -> Self {
        Self {
            relation: AudioRelation::Overlay,
            parts: vec![a, b],
        }
    }

    pub fn render(&self, corpus: &Corpus) -> Result<Waveform> {
        let clips = self
            .parts
            .iter()
            .map(|p| corpus.clip(p.class, p.instance))
            .collect::<Result<Vec<_>>>()?;
        match (self.relation, clips.as_slice()) {
            (AudioRelation::Single, [a]) => Ok(a.clone()),
            (AudioRelation::Concat, [a, b]) => audio::concat(a, b),
            (AudioRelation::Overlay, [a, b]) => audio::overlay(a, b),
            _ => Err(Error::InvalidArgument(format!(
                "recipe {:?} has {} parts",
                self.relation,
                clips.len()
            ))),
        }
    }

    pub fn class_ids(&self) -> Vec<usize> {
        self.parts.iter().map(|p| p.class).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleRelation {
    Single,
    Dual,
    Before,
    After,
    While,
}

impl SampleRelation {
    fn caption_relation(self) -> CaptionRelation {
        match self {
            SampleRelation::Single => CaptionRelation::Single,
            SampleRelation::Dual => CaptionRelation::Dual,
            SampleRelation::Before => CaptionRelation::Before,
            SampleRelation::After => CaptionRelation::After,
            SampleRelation::While => CaptionRelation::While,
        }
    }

    fn audio_relation(self) -> AudioRelation {
        match self {
            SampleRelation::Single => AudioRelation::Single,
            SampleRelation::Dual | SampleRelation::Before | SampleRelation::After => {
                AudioRelation::Concat
            }
            SampleRelation::While => AudioRelation::Overlay,
        }
    }
}

/// One audio-text training pair.
///
/// `pair` is the ordered class pair the item was built from. For a stage-A
/// single item it is the row's pair even though only `pair.0` sounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositeSample {
    pub audio: AudioRecipe,
    pub caption: Caption,
    pub relation: SampleRelation,
    pub pair: (usize, usize),
}

impl CompositeSample {
    pub fn key(&self) -> PairKey {
        pair_key(self.pair.0, self.pair.1)
    }

    pub fn is_consistent(&self) -> bool {
        self.audio.relation == self.relation.audio_relation()
            && self.caption.relation == self.relation.caption_relation()
    }
}

pub fn enumerate_pairs(k: usize) -> Result<Vec<(usize, usize)>> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 classes, got {k}"
        )));
    }
    Ok((0..k)
        .flat_map(|i| (0..k).filter(move |&j| j != i).map(move |j| (i, j)))
        .collect())
}

fn pick_instance(corpus: &Corpus, rng: &mut impl Rng) -> usize {
    rng.gen_range(corpus.spec.train_instances())
}

/// Two items per ordered pair `(i, j)`: the single clip of `i` captioned
/// "single sound of i", then `a_i ⊕ a_j` captioned "combined sound of i and j".
pub fn build_stage_a_items(corpus: &Corpus) -> Result<Vec<CompositeSample>> {
    let mut out = Vec::new();
    for (i, j) in enumerate_pairs(corpus.num_classes())? {
        let mut rng =
            seed::rng_indexed(corpus.spec.seed, "stage-a-instance", &[i as u64, j as u64]);
        let single_inst = pick_instance(corpus, &mut rng);
        let a = ClipRef {
            class: i,
            instance: pick_instance(corpus, &mut rng),
        };
        let b = ClipRef {
            class: j,
            instance: pick_instance(corpus, &mut rng),
        };
        out.push(CompositeSample {
            audio: AudioRecipe::single(i, single_inst),
            caption: captions::single_caption(&corpus.classes, i)?,
            relation: SampleRelation::Single,
            pair: (i, j),
        });
        out.push(CompositeSample {
            audio: AudioRecipe::concat(a, b),
            caption: captions::dual_caption(&corpus.classes, i, j)?,
            relation: SampleRelation::Dual,
            pair: (i, j),
        });
    }
    Ok(out)
}

/// Three items per ordered pair `(i, j)`:
/// `("i before j", a_i ⊕ a_j)`, `("i after j", a_j ⊕ a_i)` and
/// `("i while j", a_i ∧ a_j)`.
///
/// Source instances are chosen per unordered pair so that the items of
/// `(j, i)` are exact temporal inversions of those of `(i, j)`.
pub fn build_stage_b_items(corpus: &Corpus) -> Result<Vec<CompositeSample>> {
    let mut out = Vec::new();
    for (i, j) in enumerate_pairs(corpus.num_classes())? {
        let (lo, hi) = pair_key(i, j);
        let mut rng = seed::rng_indexed(
            corpus.spec.seed,
            "stage-b-instance",
            &[lo as u64, hi as u64],
        );
        let lo_ref = ClipRef {
            class: lo,
            instance: pick_instance(corpus, &mut rng),
        };
        let hi_ref = ClipRef {
            class: hi,
            instance: pick_instance(corpus, &mut rng),
        };
        let (ci, cj) = if i == lo {
            (lo_ref, hi_ref)
        } else {
            (hi_ref, lo_ref)
        };
        let classes = &corpus.classes;
        out.push(CompositeSample {
            audio: AudioRecipe::concat(ci, cj),
            caption: captions::temporal_caption(classes, i, j, CaptionRelation::Before)?,
            relation: SampleRelation::Before,
            pair: (i, j),
        });
        out.push(CompositeSample {
            audio: AudioRecipe::concat(cj, ci),
            caption: captions::temporal_caption(classes, i, j, CaptionRelation::After)?,
            relation: SampleRelation::After,
            pair: (i, j),
        });
        out.push(CompositeSample {
            audio: AudioRecipe::overlay(ci, cj),
            caption: captions::temporal_caption(classes, i, j, CaptionRelation::While)?,
            relation: SampleRelation::While,
            pair: (i, j),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SplitMode {
    /// Held-out unordered class pairs; every class is seen in training.
    #[default]
    Pairs,
    /// Held-out classes; any pair touching one goes to the test side.
    Classes,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairSplit {
    pub train: BTreeSet<PairKey>,
    pub test: BTreeSet<PairKey>,
}

impl PairSplit {
    /// Seeded shuffle of the `K(K-1)/2` unordered pairs; the first
    /// `floor(ratio * total)` go to training.
    pub fn new(k: usize, ratio: f64, seed: u64, mode: SplitMode) -> Result<Self> {
        if !(ratio > 0.0 && ratio < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "split ratio {ratio} not in (0, 1)"
            )));
        }
        if k < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 classes, got {k}"
            )));
        }
        let mut rng = seed::rng(seed, "split");
        let keys: Vec<PairKey> = (0..k)
            .flat_map(|i| (i + 1..k).map(move |j| (i, j)))
            .collect();
        let (train, test): (BTreeSet<_>, BTreeSet<_>) = match mode {
            SplitMode::Pairs => {
                let mut shuffled = keys;
                shuffled.shuffle(&mut rng);
                let cut = (ratio * shuffled.len() as f64).floor() as usize;
                (
                    shuffled[..cut].iter().copied().collect(),
                    shuffled[cut..].iter().copied().collect(),
                )
            }
            SplitMode::Classes => {
                let mut classes: Vec<usize> = (0..k).collect();
                classes.shuffle(&mut rng);
                let cut = (ratio * k as f64).floor() as usize;
                let held: BTreeSet<usize> = classes[cut..].iter().copied().collect();
                keys.into_iter()
                    .partition(|(i, j)| !held.contains(i) && !held.contains(j))
            }
        };
        if train.is_empty() || test.is_empty() {
            return Err(Error::Insufficient(format!(
                "split of {k} classes at ratio {ratio} leaves an empty side"
            )));
        }
        Ok(Self { train, test })
    }

    pub fn partition(
        &self,
        items: &[CompositeSample],
    ) -> (Vec<CompositeSample>, Vec<CompositeSample>) {
        items
            .iter()
            .cloned()
            .partition(|it| self.train.contains(&it.key()))
    }
}

/// Split items on their unordered pair keys.
pub fn split(
    items: &[CompositeSample],
    k: usize,
    ratio: f64,
    seed: u64,
) -> Result<(Vec<CompositeSample>, Vec<CompositeSample>)> {
    Ok(PairSplit::new(k, ratio, seed, SplitMode::Pairs)?.partition(items))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Stage {
    A,
    B,
}

/// Index-aligned blocks into an item list.
///
/// Stage A: `blocks = [singles, duals]`, row `r` of both blocks comes from
/// one ordered pair. Stage B: `blocks = [forward, reversed, overlaid]`,
/// `reversed[r]` is the temporal inversion of `forward[r]` and `overlaid[r]`
/// the overlay of the same ordered pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingBatch {
    pub stage: Stage,
    pub blocks: Vec<Vec<usize>>,
}

impl TrainingBatch {
    pub fn block_size(&self) -> usize {
        self.blocks.first().map_or(0, Vec::len)
    }

    pub fn len(&self) -> usize {
        self.blocks.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All item indices in block order.
    pub fn flat(&self) -> Vec<usize> {
        self.blocks.iter().flatten().copied().collect()
    }
}

/// Lookup tables from (ordered pair, relation) to item index.
#[derive(Debug, Clone)]
pub struct ItemIndex {
    by_pair: HashMap<((usize, usize), SampleRelation), usize>,
}

impl ItemIndex {
    pub fn new(items: &[CompositeSample]) -> Self {
        let by_pair = items
            .iter()
            .enumerate()
            .map(|(idx, it)| ((it.pair, it.relation), idx))
            .collect();
        Self { by_pair }
    }

    pub fn get(&self, pair: (usize, usize), relation: SampleRelation) -> Option<usize> {
        self.by_pair.get(&(pair, relation)).copied()
    }

    /// Stage-A rows: `(single, dual)` index pairs sharing an ordered pair.
    pub fn stage_a_rows(&self, items: &[CompositeSample]) -> Vec<(usize, usize)> {
        items
            .iter()
            .enumerate()
            .filter(|(_, it)| it.relation == SampleRelation::Single)
            .filter_map(|(s, it)| self.get(it.pair, SampleRelation::Dual).map(|d| (s, d)))
            .collect()
    }

    /// Stage-B anchors: forward items whose inversion and overlay exist.
    pub fn stage_b_rows(&self, items: &[CompositeSample]) -> Vec<[usize; 3]> {
        items
            .iter()
            .enumerate()
            .filter(|(_, it)| matches!(it.relation, SampleRelation::Before | SampleRelation::After))
            .filter_map(|(f, it)| {
                let (i, j) = it.pair;
                let r = self.get((j, i), it.relation)?;
                let o = self.get((i, j), SampleRelation::While)?;
                Some([f, r, o])
            })
            .collect()
    }
}

fn batch_from_rows(stage: Stage, rows: &[Vec<usize>]) -> TrainingBatch {
    let width = rows.first().map_or(0, Vec::len);
    let blocks = (0..width)
        .map(|b| rows.iter().map(|r| r[b]).collect())
        .collect();
    TrainingBatch { stage, blocks }
}

fn candidate_rows(stage: Stage, items: &[CompositeSample]) -> Vec<Vec<usize>> {
    let index = ItemIndex::new(items);
    match stage {
        Stage::A => index
            .stage_a_rows(items)
            .into_iter()
            .map(|(s, d)| vec![s, d])
            .collect(),
        Stage::B => index
            .stage_b_rows(items)
            .into_iter()
            .map(|r| r.to_vec())
            .collect(),
    }
}

/// Group shuffled rows into batches of `n` with no repeated unordered pair
/// inside a batch. Rows that cannot be placed are dropped; a trailing batch
/// shorter than `n` is kept when it has at least two rows.
fn pack_rows(rows: Vec<Vec<usize>>, items: &[CompositeSample], n: usize) -> Vec<Vec<Vec<usize>>> {
    let mut open: Vec<(Vec<Vec<usize>>, BTreeSet<PairKey>)> = Vec::new();
    let mut done = Vec::new();
    for row in rows {
        let key = items[row[0]].key();
        match open.iter().position(|(_, keys)| !keys.contains(&key)) {
            Some(slot) => {
                open[slot].0.push(row);
                open[slot].1.insert(key);
                if open[slot].0.len() == n {
                    done.push(open.remove(slot).0);
                }
            }
            None => {
                let mut keys = BTreeSet::new();
                keys.insert(key);
                open.push((vec![row], keys));
            }
        }
    }
    done.extend(open.into_iter().map(|(r, _)| r).filter(|r| r.len() >= 2));
    done
}

/// Sample one batch of block size `n` without replacement.
pub fn make_batch(
    stage: Stage,
    items: &[CompositeSample],
    n: usize,
    seed: u64,
) -> Result<TrainingBatch> {
    if n == 0 {
        return Err(Error::InvalidArgument("block size must be positive".into()));
    }
    let mut rows = candidate_rows(stage, items);
    let mut rng = seed::rng(seed, "batch");
    rows.shuffle(&mut rng);
    let mut seen = BTreeSet::new();
    let picked: Vec<Vec<usize>> = rows
        .into_iter()
        .filter(|r| seen.insert(items[r[0]].key()))
        .take(n)
        .collect();
    if picked.len() < n {
        return Err(Error::Insufficient(format!(
            "stage {stage:?} batch of {n} needs {n} distinct pairs, only {} available",
            picked.len()
        )));
    }
    Ok(batch_from_rows(stage, &picked))
}

/// All batches of one epoch: every candidate row used at most once.
pub fn epoch_batches(
    stage: Stage,
    items: &[CompositeSample],
    n: usize,
    seed: u64,
    epoch: usize,
) -> Result<Vec<TrainingBatch>> {
    if n < 2 {
        return Err(Error::InvalidArgument(
            "block size must be at least 2".into(),
        ));
    }
    let mut rows = candidate_rows(stage, items);
    let mut rng = seed::rng_indexed(seed, "epoch", &[epoch as u64]);
    rows.shuffle(&mut rng);
    let batches: Vec<TrainingBatch> = pack_rows(rows, items, n)
        .iter()
        .map(|rows| batch_from_rows(stage, rows))
        .collect();
    if batches.is_empty() {
        return Err(Error::Insufficient(format!(
            "no stage {stage:?} batch can be formed from {} items",
            items.len()
        )));
    }
    Ok(batches)
}

/// One line of the on-disk manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    /// `single`, `stage_a` or `stage_b`.
    pub set: String,
    /// `train`, `test`, or `train`/`held_out` instance role for singles.
    pub split: String,
    pub relation: String,
    pub class_1: usize,
    pub class_2: Option<usize>,
    pub instance_1: usize,
    pub instance_2: Option<usize>,
    pub wav_path: String,
    pub caption: String,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus(k: usize) -> Corpus {
        Corpus::new(CorpusSpec {
            num_classes: k,
            ..CorpusSpec::default()
        })
        .unwrap()
    }

    #[test]
    fn pair_counts() {
        assert_eq!(enumerate_pairs(50).unwrap().len(), 2450);
        assert_eq!(enumerate_pairs(2).unwrap(), vec![(0, 1), (1, 0)]);
        assert_eq!(enumerate_pairs(10).unwrap().len(), 90);
        assert!(enumerate_pairs(1).is_err());
    }

    #[test]
    fn stage_counts() {
        let c = corpus(10);
        let a = build_stage_a_items(&c).unwrap();
        assert_eq!(a.len(), 2 * 90);
        let b = build_stage_b_items(&c).unwrap();
        assert_eq!(b.len(), 270);
        assert!(a.iter().chain(&b).all(CompositeSample::is_consistent));
    }

    #[test]
    fn stage_a_dual_is_twice_as_long() {
        let c = corpus(3);
        let items = build_stage_a_items(&c).unwrap();
        let single = items[0].audio.render(&c).unwrap();
        let dual = items[1].audio.render(&c).unwrap();
        assert_eq!(dual.len(), 2 * single.len());
    }

    #[test]
    fn stage_b_relations_per_pair() {
        let c = corpus(4);
        let items = build_stage_b_items(&c).unwrap();
        for chunk in items.chunks(3) {
            let rels: BTreeSet<_> = chunk.iter().map(|i| format!("{:?}", i.relation)).collect();
            assert_eq!(rels.len(), 3);
            assert!(chunk.iter().all(|i| i.pair == chunk[0].pair));
        }
    }

    #[test]
    fn stage_b_inversion_is_exact() {
        let c = corpus(4);
        let items = build_stage_b_items(&c).unwrap();
        let index = ItemIndex::new(&items);
        let fwd = &items[index.get((1, 3), SampleRelation::Before).unwrap()];
        let rev = &items[index.get((3, 1), SampleRelation::Before).unwrap()];
        let fwd_audio = fwd.audio.render(&c).unwrap();
        let rev_audio = rev.audio.render(&c).unwrap();
        assert_eq!(audio::invert_composite(&fwd_audio).unwrap(), rev_audio);
        assert_eq!(captions::invert_caption(&fwd.caption).unwrap(), rev.caption);
        // "i after j" sounds j first.
        let after = &items[index.get((1, 3), SampleRelation::After).unwrap()];
        assert_eq!(after.audio.class_ids(), vec![3, 1]);
    }

    #[test]
    fn split_partitions_pairs() {
        let s = PairSplit::new(10, 0.7, 0, SplitMode::Pairs).unwrap();
        assert_eq!(s.train.len(), 31);
        assert_eq!(s.test.len(), 14);
        assert!(s.train.is_disjoint(&s.test));
        assert_eq!(s, PairSplit::new(10, 0.7, 0, SplitMode::Pairs).unwrap());
        assert!(PairSplit::new(10, 1.0, 0, SplitMode::Pairs).is_err());
        assert!(PairSplit::new(2, 0.7, 0, SplitMode::Pairs).is_err());

        let items = build_stage_b_items(&corpus(10)).unwrap();
        let (train, test) = s.partition(&items);
        assert_eq!(train.len() + test.len(), items.len());
        assert_eq!(train.len(), 31 * 6);
        let train_keys: BTreeSet<_> = train.iter().map(CompositeSample::key).collect();
        assert!(test.iter().all(|t| !train_keys.contains(&t.key())));
    }

    #[test]
    fn class_split_holds_out_classes() {
        let s = PairSplit::new(10, 0.7, 3, SplitMode::Classes).unwrap();
        assert_eq!(s.train.len(), 21);
        assert_eq!(s.train.len() + s.test.len(), 45);
    }

    #[test]
    fn stage_b_batch_alignment() {
        let items = build_stage_b_items(&corpus(10)).unwrap();
        let batch = make_batch(Stage::B, &items, 4, 9).unwrap();
        assert_eq!(batch.len(), 12);
        assert_eq!(batch.blocks.len(), 3);
        for r in 0..4 {
            let f = &items[batch.blocks[0][r]];
            let rv = &items[batch.blocks[1][r]];
            let o = &items[batch.blocks[2][r]];
            assert_eq!(rv.pair, (f.pair.1, f.pair.0));
            assert_eq!(rv.relation, f.relation);
            assert_eq!(o.pair, f.pair);
            assert_eq!(o.relation, SampleRelation::While);
        }
        let keys: BTreeSet<_> = batch.blocks[0].iter().map(|&i| items[i].key()).collect();
        assert_eq!(keys.len(), 4);
        assert_eq!(batch, make_batch(Stage::B, &items, 4, 9).unwrap());
        assert!(make_batch(Stage::B, &items, 46, 9).is_err());
    }

    #[test]
    fn stage_a_batch_rows_share_pairs() {
        let items = build_stage_a_items(&corpus(6)).unwrap();
        let batch = make_batch(Stage::A, &items, 5, 1).unwrap();
        assert_eq!(batch.blocks.len(), 2);
        for r in 0..5 {
            let s = &items[batch.blocks[0][r]];
            let d = &items[batch.blocks[1][r]];
            assert_eq!(s.relation, SampleRelation::Single);
            assert_eq!(d.relation, SampleRelation::Dual);
            assert_eq!(s.pair, d.pair);
        }
    }

    #[test]
    fn epoch_batches_use_rows_once() {
        let items = build_stage_b_items(&corpus(10)).unwrap();
        let batches = epoch_batches(Stage::B, &items, 16, 0, 0).unwrap();
        let mut seen = BTreeSet::new();
        for b in &batches {
            assert!(b.block_size() >= 2 && b.block_size() <= 16);
            let keys: BTreeSet<_> = b.blocks[0].iter().map(|&i| items[i].key()).collect();
            assert_eq!(keys.len(), b.block_size());
            for &f in &b.blocks[0] {
                assert!(seen.insert(f));
            }
        }
        assert_ne!(batches, epoch_batches(Stage::B, &items, 16, 0, 1).unwrap());
    }
}
