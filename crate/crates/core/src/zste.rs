//! Zero-shot temporal evaluation: tasks 1-5 over held-out clips.
//!
//! Every task reduces to the same core: embed a clip, embed a prompt list,
//! softmax over `γ`-scaled cosines, then apply the task's scoring rule to
//! the probability vector.

use std::collections::{BTreeMap, HashMap};

use rand::seq::{IteratorRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::audio::{AudioRelation, Waveform};
use crate::captions::{
    self, ClassNames, FIRST_SOUND_PROMPT, SECOND_SOUND_PROMPT, SIMULTANEOUS_PROMPT, TASK1_PROMPT,
};
use crate::dataset::{Corpus, PairSplit};
use crate::encoder::dot;
use crate::error::{Error, Result};
use crate::model::Embedder;
use crate::seed;

/// Report keys, in table order.
pub const METRIC_KEYS: [&str; 11] = [
    "1A", "2A", "2B", "2C", "2D", "3A", "3B", "4A", "4B", "5A", "5B",
];

pub fn task_keys(task: u8) -> &'static [&'static str] {
    match task {
        1 => &METRIC_KEYS[0..1],
        2 => &METRIC_KEYS[1..5],
        3 => &METRIC_KEYS[5..7],
        4 => &METRIC_KEYS[7..9],
        5 => &METRIC_KEYS[9..11],
        _ => &[],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    pub tasks: Vec<u8>,
    pub task1_prompt: String,
    /// Distractor prompts in task 4.
    pub distractors: usize,
    /// Distractor class pairs added to the task-5B prompt list.
    pub task5b_distractors: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            tasks: vec![1, 2, 3, 4, 5],
            task1_prompt: TASK1_PROMPT.into(),
            distractors: 3,
            task5b_distractors: 48,
            seed: 0,
        }
    }
}

impl EvalOptions {
    pub fn validate(&self) -> Result<()> {
        if self.tasks.is_empty() || self.tasks.iter().any(|t| !(1..=5).contains(t)) {
            return Err(Error::Config(format!(
                "tasks must be a non-empty subset of 1..5, got {:?}",
                self.tasks
            )));
        }
        if !self.task1_prompt.contains("{class}") {
            return Err(Error::Config(
                "task1_prompt needs a {class} placeholder".into(),
            ));
        }
        if self.distractors != 3 {
            return Err(Error::Config(format!(
                "task 4 pairs each correct prompt with one distractor: distractors must be 3, got {}",
                self.distractors
            )));
        }
        Ok(())
    }
}

pub fn parse_tasks(s: &str) -> Result<Vec<u8>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<u8>()
                .ok()
                .filter(|t| (1..=5).contains(t))
                .ok_or_else(|| Error::Config(format!("bad task id {t:?}")))
        })
        .collect()
}

/// Candidate prompts of one clip and which of them are correct.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSet {
    pub prompts: Vec<String>,
    pub correct: Vec<usize>,
    pub task: String,
}

impl PromptSet {
    pub fn validate(&self) -> Result<()> {
        if self.prompts.is_empty() {
            return Err(Error::InvalidArgument("empty prompt set".into()));
        }
        if self.correct.is_empty()
            || self.correct.len() > 2
            || self.correct.iter().any(|&c| c >= self.prompts.len())
        {
            return Err(Error::InvalidArgument(format!(
                "correct indices {:?} invalid for {} prompts",
                self.correct,
                self.prompts.len()
            )));
        }
        Ok(())
    }
}

/// Softmax with max subtraction.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

/// First index of the maximum.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

/// Indices of the two largest entries; ties go to the lower index.
pub fn top2(p: &[f64]) -> [usize; 2] {
    let first = argmax(p);
    let mut second = if first == 0 { 1 } else { 0 };
    for (i, &v) in p.iter().enumerate() {
        if i != first && v > p[second] {
            second = i;
        }
    }
    [first, second]
}

fn probabilities(gamma: f64, audio: &[f64], texts: &[&Vec<f64>]) -> Vec<f64> {
    let scores: Vec<f64> = texts.iter().map(|t| gamma * dot(audio, t)).collect();
    softmax(&scores)
}

/// Probability of each prompt for one clip.
pub fn zs_classify(
    model: &dyn Embedder,
    audio: &Waveform,
    prompts: &PromptSet,
) -> Result<Vec<f64>> {
    prompts.validate()?;
    let a = model.embed_audio(audio)?;
    let t = prompts
        .prompts
        .iter()
        .map(|p| model.embed_text(p))
        .collect::<Result<Vec<_>>>()?;
    Ok(probabilities(
        model.gamma(),
        &a,
        &t.iter().collect::<Vec<_>>(),
    ))
}

/// Held-out evaluation clips. Composites are built from held-out class
/// pairs and held-out instances only.
#[derive(Debug, Clone)]
pub struct EvalClips {
    pub singles: Vec<Waveform>,
    /// Both orders of every held-out pair.
    pub concat: Vec<Waveform>,
    pub overlay: Vec<Waveform>,
}

impl EvalClips {
    pub fn build(corpus: &Corpus, split: &PairSplit) -> Result<Self> {
        let held: Vec<usize> = corpus.spec.held_out_instances().collect();
        let mut singles = Vec::new();
        for class in 0..corpus.num_classes() {
            for &inst in &held {
                singles.push(corpus.clip(class, inst)?);
            }
        }
        let mut concat = Vec::new();
        let mut overlay = Vec::new();
        for &(lo, hi) in &split.test {
            for &ia in &held {
                for &ib in &held {
                    let a = corpus.clip(lo, ia)?;
                    let b = corpus.clip(hi, ib)?;
                    concat.push(crate::audio::concat(&a, &b)?);
                    concat.push(crate::audio::concat(&b, &a)?);
                    overlay.push(crate::audio::overlay(&a, &b)?);
                }
            }
        }
        if concat.is_empty() {
            return Err(Error::Insufficient("no held-out pairs to evaluate".into()));
        }
        Ok(Self {
            singles,
            concat,
            overlay,
        })
    }
}

/// Per-clip scores of every metric.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TaskScores {
    pub scores: BTreeMap<String, Vec<f64>>,
}

impl TaskScores {
    fn push(&mut self, key: &str, v: f64) {
        self.scores.entry(key.to_string()).or_default().push(v);
    }

    pub fn mean(&self, key: &str) -> Option<f64> {
        self.scores
            .get(key)
            .filter(|v| !v.is_empty())
            .map(|v| v.iter().sum::<f64>() / v.len() as f64)
    }
}

struct Scorer<'a> {
    model: &'a dyn Embedder,
    classes: &'a ClassNames,
    opts: &'a EvalOptions,
    text: HashMap<String, Vec<f64>>,
}

impl<'a> Scorer<'a> {
    fn probs(&mut self, audio: &[f64], prompts: &[String]) -> Result<Vec<f64>> {
        for p in prompts {
            if !self.text.contains_key(p) {
                let e = self.model.embed_text(p)?;
                self.text.insert(p.clone(), e);
            }
        }
        let t: Vec<&Vec<f64>> = prompts.iter().map(|p| &self.text[p]).collect();
        Ok(probabilities(self.model.gamma(), audio, &t))
    }

    fn name(&self, c: usize) -> Result<&str> {
        self.classes.name(c)
    }

    fn temporal(&self, a: usize, kw: &str, b: usize) -> Result<String> {
        Ok(format!("{} {kw} {}", self.name(a)?, self.name(b)?))
    }
}

fn pair_of(w: &Waveform) -> Result<(usize, usize)> {
    match w.class_ids.as_slice() {
        [a, b] => Ok((*a, *b)),
        _ => Err(Error::InvalidArgument(
            "composite clip without two classes".into(),
        )),
    }
}

fn embed_all(model: &dyn Embedder, clips: &[Waveform]) -> Result<Vec<Vec<f64>>> {
    clips.iter().map(|c| model.embed_audio(c)).collect()
}

fn task1(s: &mut Scorer, clips: &[Waveform], emb: &[Vec<f64>], out: &mut TaskScores) -> Result<()> {
    let prompts = (0..s.classes.len())
        .map(|c| captions::fill_class(&s.opts.task1_prompt, s.classes, c))
        .collect::<Result<Vec<_>>>()?;
    for (w, e) in clips.iter().zip(emb) {
        let p = s.probs(e, &prompts)?;
        out.push("1A", f64::from(u8::from(argmax(&p) == w.class_ids[0])));
    }
    Ok(())
}

fn task2(
    s: &mut Scorer,
    clips: &[Waveform],
    emb: &[Vec<f64>],
    keys: [&str; 2],
    out: &mut TaskScores,
) -> Result<()> {
    let prompts = (0..s.classes.len())
        .map(|c| captions::fill_class(&s.opts.task1_prompt, s.classes, c))
        .collect::<Result<Vec<_>>>()?;
    for (w, e) in clips.iter().zip(emb) {
        let (a, b) = pair_of(w)?;
        let [x, y] = top2(&s.probs(e, &prompts)?);
        let hits = [x, y].iter().filter(|&&c| c == a || c == b).count();
        out.push(keys[0], f64::from(u8::from(hits == 2)));
        out.push(keys[1], f64::from(u8::from(hits >= 1)));
    }
    Ok(())
}

/// `["lo before hi", "hi before lo", "lo while hi"]` and the correct index.
fn task3_prompts(s: &Scorer, w: &Waveform) -> Result<(Vec<String>, usize, (usize, usize))> {
    let (a, b) = pair_of(w)?;
    let (lo, hi) = (a.min(b), a.max(b));
    let prompts = vec![
        s.temporal(lo, "before", hi)?,
        s.temporal(hi, "before", lo)?,
        s.temporal(lo, "while", hi)?,
    ];
    let correct = match w.relation {
        AudioRelation::Overlay => 2,
        _ if a == lo => 0,
        _ => 1,
    };
    Ok((prompts, correct, (lo, hi)))
}

fn task3(
    s: &mut Scorer,
    clips: &[Waveform],
    emb: &[Vec<f64>],
    key: &str,
    out: &mut TaskScores,
) -> Result<()> {
    for (w, e) in clips.iter().zip(emb) {
        let (prompts, correct, _) = task3_prompts(s, w)?;
        out.push(
            key,
            f64::from(u8::from(argmax(&s.probs(e, &prompts)?) == correct)),
        );
    }
    Ok(())
}

/// Three correct-pair prompts plus, for each, a copy with one of its two
/// classes swapped for a class absent from the clip.
fn task4(
    s: &mut Scorer,
    clips: &[Waveform],
    emb: &[Vec<f64>],
    offset: usize,
    out: &mut TaskScores,
) -> Result<()> {
    let k = s.classes.len();
    if k < 4 {
        return Err(Error::Insufficient(format!(
            "task 4 needs at least 4 classes, got {k}"
        )));
    }
    for (idx, (w, e)) in clips.iter().zip(emb).enumerate() {
        let (mut prompts, correct, (lo, hi)) = task3_prompts(s, w)?;
        let mut classes: Vec<[usize; 2]> = vec![[lo, hi], [hi, lo], [lo, hi]];
        let kws = ["before", "before", "while"];
        let mut rng = seed::rng_indexed(s.opts.seed, "task4", &[(offset + idx) as u64]);
        for t in 0..s.opts.distractors {
            let d = (0..k)
                .filter(|&c| c != lo && c != hi)
                .choose(&mut rng)
                .expect("k >= 4");
            let mut pair = classes[t];
            pair[rng.gen_range(0..2)] = d;
            prompts.push(s.temporal(pair[0], kws[t], pair[1])?);
            classes.push(pair);
        }
        let pick = argmax(&s.probs(e, &prompts)?);
        out.push("4A", f64::from(u8::from(pick == correct)));
        let shares = classes[pick].iter().any(|&c| c == lo || c == hi);
        out.push("4B", f64::from(u8::from(shares)));
    }
    Ok(())
}

/// The six unordered prompt pairs of a four-prompt list, in lexicographic order.
pub const FOUR_CHOOSE_TWO: [[usize; 2]; 6] = [[0, 1], [0, 2], [0, 3], [1, 2], [1, 3], [2, 3]];

/// Pair with the largest summed probability; ties go to the earlier pair.
pub fn best_pair(p: &[f64]) -> [usize; 2] {
    let mut best = FOUR_CHOOSE_TWO[0];
    for pair in FOUR_CHOOSE_TWO {
        if p[pair[0]] + p[pair[1]] > p[best[0]] + p[best[1]] {
            best = pair;
        }
    }
    best
}

fn half_credit(picked: [usize; 2], correct: &[usize]) -> f64 {
    picked.iter().filter(|i| correct.contains(i)).count() as f64 / 2.0
}

fn task5a(
    s: &mut Scorer,
    clips: &[Waveform],
    emb: &[Vec<f64>],
    out: &mut TaskScores,
) -> Result<()> {
    for (w, e) in clips.iter().zip(emb) {
        let (a, b) = pair_of(w)?;
        let (lo, hi) = (a.min(b), a.max(b));
        let prompts = vec![
            captions::fill_class(FIRST_SOUND_PROMPT, s.classes, lo)?,
            captions::fill_class(FIRST_SOUND_PROMPT, s.classes, hi)?,
            captions::fill_class(SECOND_SOUND_PROMPT, s.classes, lo)?,
            captions::fill_class(SECOND_SOUND_PROMPT, s.classes, hi)?,
        ];
        // first = a, second = b
        let correct = if a == lo { [0, 3] } else { [1, 2] };
        let picked = best_pair(&s.probs(e, &prompts)?);
        out.push("5A", half_credit(picked, &correct));
    }
    Ok(())
}

fn task5b(
    s: &mut Scorer,
    clips: &[Waveform],
    emb: &[Vec<f64>],
    out: &mut TaskScores,
) -> Result<()> {
    let k = s.classes.len();
    for (idx, (w, e)) in clips.iter().zip(emb).enumerate() {
        let (a, b) = pair_of(w)?;
        let mut rng = seed::rng_indexed(s.opts.seed, "task5b", &[idx as u64]);
        let mut pairs = vec![(a, b), (b, a)];
        let others: Vec<(usize, usize)> = (0..k)
            .flat_map(|x| (0..k).map(move |y| (x, y)))
            .filter(|&(x, y)| x != y && !pairs.contains(&(x, y)))
            .collect();
        let take = s.opts.task5b_distractors.min(others.len());
        pairs.extend(others.choose_multiple(&mut rng, take).copied());
        pairs.shuffle(&mut rng);
        let prompts = pairs
            .iter()
            .map(|&(x, y)| captions::fill_pair(SIMULTANEOUS_PROMPT, s.classes, x, y))
            .collect::<Result<Vec<_>>>()?;
        let correct: Vec<usize> = pairs
            .iter()
            .enumerate()
            .filter(|(_, &p)| p == (a, b) || p == (b, a))
            .map(|(i, _)| i)
            .collect();
        let picked = top2(&s.probs(e, &prompts)?);
        out.push("5B", half_credit(picked, &correct));
    }
    Ok(())
}

/// Per-clip scores for the requested tasks.
pub fn score_tasks(
    model: &dyn Embedder,
    classes: &ClassNames,
    clips: &EvalClips,
    opts: &EvalOptions,
) -> Result<TaskScores> {
    opts.validate()?;
    let mut s = Scorer {
        model,
        classes,
        opts,
        text: HashMap::new(),
    };
    let mut out = TaskScores::default();
    let needs = |t: u8| opts.tasks.contains(&t);
    let singles = if needs(1) {
        embed_all(model, &clips.singles)?
    } else {
        Vec::new()
    };
    let concat = if (2..=5).any(needs) {
        embed_all(model, &clips.concat)?
    } else {
        Vec::new()
    };
    let overlay = if (2..=5).any(needs) {
        embed_all(model, &clips.overlay)?
    } else {
        Vec::new()
    };
    if needs(1) {
        task1(&mut s, &clips.singles, &singles, &mut out)?;
    }
    if needs(2) {
        task2(&mut s, &clips.concat, &concat, ["2A", "2B"], &mut out)?;
        task2(&mut s, &clips.overlay, &overlay, ["2C", "2D"], &mut out)?;
    }
    if needs(3) {
        task3(&mut s, &clips.concat, &concat, "3A", &mut out)?;
        task3(&mut s, &clips.overlay, &overlay, "3B", &mut out)?;
    }
    if needs(4) {
        task4(&mut s, &clips.concat, &concat, 0, &mut out)?;
        task4(
            &mut s,
            &clips.overlay,
            &overlay,
            clips.concat.len(),
            &mut out,
        )?;
    }
    if needs(5) {
        task5a(&mut s, &clips.concat, &concat, &mut out)?;
        task5b(&mut s, &clips.overlay, &overlay, &mut out)?;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZsteReport {
    pub metrics: BTreeMap<String, f64>,
    pub counts: BTreeMap<String, usize>,
    pub tasks: Vec<u8>,
    pub seed: u64,
    pub checkpoint_id: Option<String>,
    pub encoder: String,
    pub num_classes: usize,
    pub task1_prompt: String,
    pub config_fingerprint: String,
    pub notes: Vec<String>,
}

impl ZsteReport {
    pub fn get(&self, key: &str) -> Option<f64> {
        self.metrics.get(key).copied()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn to_csv(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Row<'a> {
            metric: &'a str,
            accuracy: f64,
            count: usize,
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        for k in METRIC_KEYS {
            if let Some(&accuracy) = self.metrics.get(k) {
                w.serialize(Row {
                    metric: k,
                    accuracy,
                    count: self.counts[k],
                })?;
            }
        }
        crate::trainer::csv_string(w)
    }
}

/// Metadata carried into a report.
#[derive(Debug, Clone, Default)]
pub struct ReportMeta {
    pub checkpoint_id: Option<String>,
    pub encoder: String,
    pub num_classes: usize,
    pub config_fingerprint: String,
}

pub fn build_report(
    scores: &TaskScores,
    opts: &EvalOptions,
    meta: ReportMeta,
) -> Result<ZsteReport> {
    let mut metrics = BTreeMap::new();
    let mut counts = BTreeMap::new();
    for &t in &opts.tasks {
        for &k in task_keys(t) {
            let v = scores
                .scores
                .get(k)
                .filter(|v| !v.is_empty())
                .ok_or_else(|| Error::Insufficient(format!("no results for metric {k}")))?;
            let acc = v.iter().sum::<f64>() / v.len() as f64;
            if !(0.0..=1.0).contains(&acc) {
                return Err(Error::Numeric(format!(
                    "accuracy {acc} for {k} outside [0, 1]"
                )));
            }
            metrics.insert(k.to_string(), acc);
            counts.insert(k.to_string(), v.len());
        }
    }
    Ok(ZsteReport {
        metrics,
        counts,
        tasks: opts.tasks.clone(),
        seed: opts.seed,
        checkpoint_id: meta.checkpoint_id,
        encoder: meta.encoder,
        num_classes: meta.num_classes,
        task1_prompt: opts.task1_prompt.clone(),
        config_fingerprint: meta.config_fingerprint,
        notes: vec![
            "3A scores concatenated clips, 3B overlaid clips".into(),
            "held-out class pairs and held-out clip instances only".into(),
        ],
    })
}

pub fn evaluate(
    model: &dyn Embedder,
    corpus: &Corpus,
    split: &PairSplit,
    opts: &EvalOptions,
    meta: ReportMeta,
) -> Result<ZsteReport> {
    let clips = EvalClips::build(corpus, split)?;
    let scores = score_tasks(model, &corpus.classes, &clips, opts)?;
    build_report(&scores, opts, meta)
}

/// Label-aware test double: audio is embedded from its ground-truth
/// classes and arrangement, prompts from their parsed meaning.
///
/// Blocks: class presence (K), first event (K), second event (K), and a
/// one-hot arrangement (single / sequence / overlay).
#[derive(Debug, Clone)]
pub struct OracleEmbedder {
    pub classes: ClassNames,
    pub gamma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Meaning {
    Class(usize),
    Single(usize),
    Sequence(usize, usize),
    Overlay(usize, usize),
    First(usize),
    Second(usize),
}

impl OracleEmbedder {
    pub fn new(classes: ClassNames) -> Self {
        Self {
            classes,
            gamma: 10.0,
        }
    }

    fn dim(&self) -> usize {
        3 * self.classes.len() + 3
    }

    fn vector(&self, m: Meaning) -> Result<Vec<f64>> {
        let k = self.classes.len();
        let mut v = vec![0.0; self.dim()];
        let arrangement = 3 * k;
        match m {
            Meaning::Class(c) => v[c] = 1.0,
            Meaning::Single(c) => {
                v[c] = 1.0;
                v[k + c] = 1.0;
                v[arrangement] = 1.0;
            }
            Meaning::Sequence(a, b) => {
                v[a] += 1.0;
                v[b] += 1.0;
                v[k + a] = 1.0;
                v[2 * k + b] = 1.0;
                v[arrangement + 1] = 1.0;
            }
            Meaning::Overlay(a, b) => {
                v[a] += 1.0;
                v[b] += 1.0;
                v[arrangement + 2] = 1.0;
            }
            Meaning::First(c) => {
                v[c] = 1.0;
                v[k + c] = 1.0;
            }
            Meaning::Second(c) => {
                v[c] = 1.0;
                v[2 * k + c] = 1.0;
            }
        }
        crate::encoder::normalize(v)
    }

    fn parse(&self, text: &str) -> Option<Meaning> {
        let cleaned: String = text
            .to_lowercase()
            .chars()
            .map(|c| {
                if c.is_ascii_punctuation() && c != '_' {
                    ' '
                } else {
                    c
                }
            })
            .collect();
        let w: Vec<&str> = cleaned.split_whitespace().collect();
        let c = |s: &str| self.classes.index_of(s);
        Some(match w.as_slice() {
            ["the", "sound", "of", "a", x] | ["this", "is", "a", "sound", "of", x] => {
                Meaning::Class(c(x)?)
            }
            ["single", "sound", "of", x] => Meaning::Single(c(x)?),
            ["combined", "sound", "of", x, "and", y] => Meaning::Sequence(c(x)?, c(y)?),
            ["simultaneous", "sound", "of", x, "and", y] => Meaning::Overlay(c(x)?, c(y)?),
            [.., "first", "sound", "is", x] => Meaning::First(c(x)?),
            [.., "second", "sound", "is", x] => Meaning::Second(c(x)?),
            [x, "before", y] => Meaning::Sequence(c(x)?, c(y)?),
            [x, "after", y] => Meaning::Sequence(c(y)?, c(x)?),
            [x, "while", y] => Meaning::Overlay(c(x)?, c(y)?),
            _ => return None,
        })
    }
}

impl Embedder for OracleEmbedder {
    fn embed_audio(&self, w: &Waveform) -> Result<Vec<f64>> {
        let m = match (w.relation, w.class_ids.as_slice()) {
            (AudioRelation::Single, [c]) => Meaning::Single(*c),
            (AudioRelation::Concat, [a, b]) => Meaning::Sequence(*a, *b),
            (AudioRelation::Overlay, [a, b]) => Meaning::Overlay(*a, *b),
            _ => {
                return Err(Error::InvalidArgument(
                    "clip labels do not match its arrangement".into(),
                ))
            }
        };
        if w.class_ids.iter().any(|&c| c >= self.classes.len()) {
            return Err(Error::InvalidArgument(
                "clip class outside the oracle's class set".into(),
            ));
        }
        self.vector(m)
    }

    fn embed_text(&self, text: &str) -> Result<Vec<f64>> {
        let m = self.parse(text).ok_or_else(|| {
            Error::InvalidArgument(format!("oracle cannot parse prompt {text:?}"))
        })?;
        self.vector(m)
    }

    fn gamma(&self) -> f64 {
        self.gamma
    }
}

/// Independent random unit vector per distinct input, keyed by a hash of
/// the samples or the text. Its scores carry no information about the
/// labels, so every task sits at its chance level.
#[derive(Debug, Clone)]
pub struct HashedRandomEmbedder {
    pub dim: usize,
    pub seed: u64,
    pub gamma: f64,
}

impl HashedRandomEmbedder {
    fn vector(&self, key: u64) -> Result<Vec<f64>> {
        let mut rng = seed::rng_indexed(self.seed, "hashed-embedding", &[key]);
        let v: Vec<f64> = (0..self.dim)
            .map(|_| {
                let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
                let u2: f64 = rng.gen();
                (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
            })
            .collect();
        crate::encoder::normalize(v)
    }
}

fn hash_key(bytes: &[u8]) -> u64 {
    let d = Sha256::digest(bytes);
    u64::from_le_bytes(d[..8].try_into().expect("digest has 8 bytes"))
}

impl Embedder for HashedRandomEmbedder {
    fn embed_audio(&self, w: &Waveform) -> Result<Vec<f64>> {
        let bytes: Vec<u8> = w.samples.iter().flat_map(|s| s.to_le_bytes()).collect();
        self.vector(hash_key(&bytes))
    }

    fn embed_text(&self, text: &str) -> Result<Vec<f64>> {
        self.vector(hash_key(text.as_bytes()) ^ 0x5555_5555_5555_5555)
    }

    fn gamma(&self) -> f64 {
        self.gamma
    }
}

/// Chance levels and acceptance intervals for label-blind scorers.
pub mod chance {
    use rand::Rng;

    use super::{best_pair, top2, FOUR_CHOOSE_TWO};
    use crate::seed;

    /// Distribution of a sum of `n` i.i.d. draws from `outcomes`, where an
    /// outcome is `(units, probability)`.
    pub fn sum_distribution(outcomes: &[(usize, f64)], n: usize) -> Vec<f64> {
        let max_unit = outcomes.iter().map(|o| o.0).max().unwrap_or(0);
        let mut dist = vec![1.0];
        for _ in 0..n {
            let mut next = vec![0.0; dist.len() + max_unit];
            for (s, &p) in dist.iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                for &(u, q) in outcomes {
                    next[s + u] += p * q;
                }
            }
            dist = next;
        }
        dist
    }

    /// Central interval `[lo, hi]` of total units holding at least `level`
    /// of the mass, as per-draw means (`units / (n · scale)`).
    pub fn interval(outcomes: &[(usize, f64)], n: usize, level: f64, scale: f64) -> (f64, f64) {
        let dist = sum_distribution(outcomes, n);
        let tail = (1.0 - level) / 2.0;
        let mut acc = 0.0;
        let mut lo = 0;
        for (s, &p) in dist.iter().enumerate() {
            if acc + p > tail {
                lo = s;
                break;
            }
            acc += p;
        }
        acc = 0.0;
        let mut hi = dist.len() - 1;
        for (s, &p) in dist.iter().enumerate().rev() {
            if acc + p > tail {
                hi = s;
                break;
            }
            acc += p;
        }
        let denom = n as f64 * scale;
        (lo as f64 / denom, hi as f64 / denom)
    }

    pub fn binomial_interval(p: f64, n: usize, level: f64) -> (f64, f64) {
        interval(&[(0, 1.0 - p), (1, p)], n, level, 1.0)
    }

    /// Task 5A under a uniformly random choice among the six pairs: one pair
    /// scores 1, four score 0.5, one scores 0 (in half-credit units 2/1/0).
    pub fn task5a_outcomes() -> [(usize, f64); 3] {
        let mut counts = [0usize; 3];
        let correct = [0, 3];
        for pair in FOUR_CHOOSE_TWO {
            let hits = pair.iter().filter(|i| correct.contains(i)).count();
            counts[hits] += 1;
        }
        [
            (0, counts[0] as f64 / 6.0),
            (1, counts[1] as f64 / 6.0),
            (2, counts[2] as f64 / 6.0),
        ]
    }

    /// Monte-Carlo chance of a scoring rule under i.i.d. uniform scores.
    pub fn monte_carlo(
        trials: usize,
        prompts: usize,
        seed_value: u64,
        rule: impl Fn(&[f64]) -> f64,
    ) -> f64 {
        let mut rng = seed::rng(seed_value, "chance");
        let mut total = 0.0;
        let mut p = vec![0.0; prompts];
        for _ in 0..trials {
            p.iter_mut().for_each(|v| *v = rng.gen());
            total += rule(&p);
        }
        total / trials as f64
    }

    /// Task 2A rule with correct prompts 0 and 1.
    pub fn task2a_rule(p: &[f64]) -> f64 {
        let t = top2(p);
        f64::from(u8::from(t.contains(&0) && t.contains(&1)))
    }

    pub fn task5a_rule(p: &[f64]) -> f64 {
        let picked = best_pair(p);
        picked.iter().filter(|&&i| i == 0 || i == 3).count() as f64 / 2.0
    }
}
