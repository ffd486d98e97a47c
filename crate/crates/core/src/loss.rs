//! Temporal contrastive (TNCE) losses for both training stages.
//!
//! Every TNCE value has the shape
//!
//! ```text
//! -s(pos) + log Σ_cells w_cell · exp(s(cell))
//! ```
//!
//! where `s(a, c) = γ · z_a · z_c`. The stage-specific structure (which
//! blocks enter the denominator, with which coefficient) is compiled into a
//! list of [`Term`]s once per batch shape; evaluation and the gradient with
//! respect to the similarity matrix are shared by all terms.
//!
//! Row layout: stage B stacks `[forward | reversed | overlaid]`, stage A
//! `[singles | duals]`, each block `n` rows, identically for audio and text,
//! so row `r` of the audio matrix is paired with row `r` of the text matrix.

use serde::{Deserialize, Serialize};

use crate::dataset::Stage;
use crate::encoder::{dot, Modality};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossCoefficients {
    /// Own-pair time-reversed negative.
    pub alpha_st: f64,
    /// Other rows of the time-reversed block.
    pub alpha_ct: f64,
    /// Own-pair overlaid negative.
    pub alpha_so: f64,
    /// Other rows of the overlaid block.
    pub alpha_co: f64,
    /// Weight of the text-anchored stage-B loss.
    pub beta: f64,
    /// Weight of the text-anchored stage-A loss.
    #[serde(rename = "beta_A")]
    pub beta_a: f64,
    /// Stage A: opposite-block rows sharing a class with the anchor.
    pub alpha_same: f64,
    /// Stage A: opposite-block rows sharing no class with the anchor.
    pub alpha_diff: f64,
    /// Similarity scale applied to every dot product.
    pub gamma: f64,
    /// Add `exp(s(a, c))` of the anchor's own caption inside the `alpha_so`
    /// term, as in the expanded derivation of the forward denominator.
    #[serde(default)]
    pub appendix_a5_form: bool,
    /// Keep the un-weighted forward-block terms in the overlay denominator.
    #[serde(default = "default_true")]
    pub cross_blocks: bool,
}

fn default_true() -> bool {
    true
}

impl Default for LossCoefficients {
    fn default() -> Self {
        Self::unity()
    }
}

impl LossCoefficients {
    pub fn unity() -> Self {
        Self {
            alpha_st: 1.0,
            alpha_ct: 1.0,
            alpha_so: 1.0,
            alpha_co: 1.0,
            beta: 1.0,
            beta_a: 1.0,
            alpha_same: 1.0,
            alpha_diff: 1.0,
            gamma: 10.0,
            appendix_a5_form: false,
            cross_blocks: true,
        }
    }

    /// Unity coefficients with the four stage-B `α` set from a corner tuple.
    pub fn with_alphas(mut self, st: f64, ct: f64, so: f64, co: f64) -> Self {
        self.alpha_st = st;
        self.alpha_ct = ct;
        self.alpha_so = so;
        self.alpha_co = co;
        self
    }

    /// Every coefficient zero, cross blocks removed: plain per-block InfoNCE.
    pub fn infonce(gamma: f64) -> Self {
        Self {
            alpha_st: 0.0,
            alpha_ct: 0.0,
            alpha_so: 0.0,
            alpha_co: 0.0,
            beta: 0.0,
            beta_a: 0.0,
            alpha_same: 0.0,
            alpha_diff: 0.0,
            gamma,
            appendix_a5_form: false,
            cross_blocks: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(Error::Config(format!(
                "gamma must be positive, got {}",
                self.gamma
            )));
        }
        let named = [
            ("alpha_st", self.alpha_st),
            ("alpha_ct", self.alpha_ct),
            ("alpha_so", self.alpha_so),
            ("alpha_co", self.alpha_co),
            ("beta", self.beta),
            ("beta_A", self.beta_a),
            ("alpha_same", self.alpha_same),
            ("alpha_diff", self.alpha_diff),
        ];
        for (name, v) in named {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!(
                    "{name} must be a non-negative real, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Stage-A class metadata: row `r` of the singles block sounds
/// `single_class[r]`, row `r` of the duals block sounds `dual_classes[r]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageALabels {
    pub single_class: Vec<usize>,
    pub dual_classes: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch {
    pub stage: Stage,
    pub n: usize,
    pub audio: Vec<Vec<f64>>,
    pub text: Vec<Vec<f64>>,
    pub labels: Option<StageALabels>,
}

pub fn blocks_for(stage: Stage) -> usize {
    match stage {
        Stage::A => 2,
        Stage::B => 3,
    }
}

impl EmbeddingBatch {
    pub fn validate(&self) -> Result<()> {
        let rows = blocks_for(self.stage) * self.n;
        if self.n == 0 || self.audio.len() != rows || self.text.len() != rows {
            return Err(Error::Shape(format!(
                "stage {:?} batch with n = {} needs {rows} audio and text rows, got {} and {}",
                self.stage,
                self.n,
                self.audio.len(),
                self.text.len()
            )));
        }
        let d = self.audio[0].len();
        if self.audio.iter().chain(&self.text).any(|r| r.len() != d) {
            return Err(Error::Shape("embedding rows differ in dimension".into()));
        }
        if self
            .audio
            .iter()
            .chain(&self.text)
            .flatten()
            .any(|v| !v.is_finite())
        {
            return Err(Error::Numeric("non-finite embedding".into()));
        }
        if self.stage == Stage::A {
            match &self.labels {
                Some(l) if l.single_class.len() == self.n && l.dual_classes.len() == self.n => {}
                _ => {
                    return Err(Error::Shape(
                        "stage-A batch needs class labels for every row".into(),
                    ))
                }
            }
        }
        Ok(())
    }

    /// Exchange the audio and text sides.
    pub fn swapped(&self) -> Self {
        Self {
            audio: self.text.clone(),
            text: self.audio.clone(),
            ..self.clone()
        }
    }
}

/// `C[i][j] = γ · z_c(i) · z_a(j)`: text rows, audio columns.
pub fn similarity_matrix(
    text: &[Vec<f64>],
    audio: &[Vec<f64>],
    gamma: f64,
) -> Result<Vec<Vec<f64>>> {
    if let (Some(t), Some(a)) = (text.first(), audio.first()) {
        if text.iter().chain(audio).any(|r| r.len() != t.len()) || t.len() != a.len() {
            return Err(Error::Shape("embedding dimensions differ".into()));
        }
    }
    Ok(text
        .iter()
        .map(|t| audio.iter().map(|a| gamma * dot(t, a)).collect())
        .collect())
}

/// A cell of the audio-by-text score matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Cell {
    pub audio: usize,
    pub text: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Term {
    pub anchor: Modality,
    pub anchor_row: usize,
    pub positive: Cell,
    /// Weighted denominator cells; the positive is among them with weight ≥ 1.
    pub denominator: Vec<(Cell, f64)>,
    /// Multiplier in the stage total (1 or β).
    pub scale: f64,
}

/// Stage-B block of an anchor row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockB {
    Forward = 0,
    Reversed = 1,
    Overlaid = 2,
}

/// Stage-A block of an anchor row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockA {
    Singles = 0,
    Duals = 1,
}

/// Candidate-row weights of one stage-B anchor, indexed over all `3n` rows.
fn stage_b_weights(block: BlockB, k: usize, n: usize, c: &LossCoefficients) -> Vec<f64> {
    let mut w = vec![0.0; 3 * n];
    let own = block as usize * n;
    let rev = BlockB::Reversed as usize * n;
    let ovl = BlockB::Overlaid as usize * n;
    for m in 0..n {
        w[own + m] += 1.0;
    }
    let own_other = |w: &mut [f64], base: usize, single: f64, rest: f64| {
        for m in 0..n {
            w[base + m] += if m == k { single } else { rest };
        }
    };
    match block {
        BlockB::Forward | BlockB::Reversed => {
            let other = if block == BlockB::Forward { rev } else { 0 };
            own_other(&mut w, other, c.alpha_st, c.alpha_ct);
            own_other(&mut w, ovl, c.alpha_so, c.alpha_co);
            if c.appendix_a5_form {
                w[own + k] += c.alpha_so;
            }
        }
        BlockB::Overlaid => {
            let cross = if c.cross_blocks { 1.0 } else { 0.0 };
            own_other(&mut w, 0, cross, cross);
            own_other(&mut w, rev, c.alpha_st, c.alpha_ct);
        }
    }
    w
}

fn stage_a_weights(
    block: BlockA,
    k: usize,
    n: usize,
    labels: &StageALabels,
    c: &LossCoefficients,
) -> Vec<f64> {
    let mut w = vec![0.0; 2 * n];
    let (own, other) = match block {
        BlockA::Singles => (0, n),
        BlockA::Duals => (n, 0),
    };
    for m in 0..n {
        w[own + m] += 1.0;
        let shares = match block {
            BlockA::Singles => {
                let (i, j) = labels.dual_classes[m];
                i == labels.single_class[k] || j == labels.single_class[k]
            }
            BlockA::Duals => {
                let (i, j) = labels.dual_classes[k];
                labels.single_class[m] == i || labels.single_class[m] == j
            }
        };
        w[other + m] += if shares { c.alpha_same } else { c.alpha_diff };
    }
    w
}

fn make_term(anchor: Modality, row: usize, weights: Vec<f64>, scale: f64) -> Term {
    let cell = |cand: usize| match anchor {
        Modality::Audio => Cell {
            audio: row,
            text: cand,
        },
        Modality::Text => Cell {
            audio: cand,
            text: row,
        },
    };
    Term {
        anchor,
        anchor_row: row,
        positive: cell(row),
        denominator: weights
            .into_iter()
            .enumerate()
            .filter(|(_, w)| *w != 0.0)
            .map(|(j, w)| (cell(j), w))
            .collect(),
        scale,
    }
}

/// One stage-B TNCE term.
pub fn stage_b_term(
    anchor: Modality,
    block: BlockB,
    k: usize,
    n: usize,
    c: &LossCoefficients,
) -> Term {
    let scale = match anchor {
        Modality::Audio => 1.0,
        Modality::Text => c.beta,
    };
    make_term(
        anchor,
        block as usize * n + k,
        stage_b_weights(block, k, n, c),
        scale,
    )
}

pub fn stage_a_term(
    anchor: Modality,
    block: BlockA,
    k: usize,
    n: usize,
    labels: &StageALabels,
    c: &LossCoefficients,
) -> Term {
    let scale = match anchor {
        Modality::Audio => 1.0,
        Modality::Text => c.beta_a,
    };
    make_term(
        anchor,
        block as usize * n + k,
        stage_a_weights(block, k, n, labels, c),
        scale,
    )
}

/// Every term of a stage loss, audio-anchored first, in row order.
pub fn build_terms(
    stage: Stage,
    n: usize,
    labels: Option<&StageALabels>,
    c: &LossCoefficients,
) -> Result<Vec<Term>> {
    let mut terms = Vec::new();
    for anchor in [Modality::Audio, Modality::Text] {
        match stage {
            Stage::B => {
                for block in [BlockB::Forward, BlockB::Reversed, BlockB::Overlaid] {
                    terms.extend((0..n).map(|k| stage_b_term(anchor, block, k, n, c)));
                }
            }
            Stage::A => {
                let labels =
                    labels.ok_or_else(|| Error::Shape("stage-A terms need class labels".into()))?;
                for block in [BlockA::Singles, BlockA::Duals] {
                    terms.extend((0..n).map(|k| stage_a_term(anchor, block, k, n, labels, c)));
                }
            }
        }
    }
    Ok(terms)
}

/// Audio-by-text score matrix `S[a][c] = γ · z_a · z_c`.
pub fn score_matrix(batch: &EmbeddingBatch, gamma: f64) -> Vec<Vec<f64>> {
    batch
        .audio
        .iter()
        .map(|a| batch.text.iter().map(|t| gamma * dot(a, t)).collect())
        .collect()
}

/// Unscaled value of one term, with max-subtracted log-sum-exp.
pub fn term_value(term: &Term, scores: &[Vec<f64>]) -> f64 {
    let s = |c: &Cell| scores[c.audio][c.text];
    let max = term
        .denominator
        .iter()
        .map(|(c, _)| s(c))
        .fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = term
        .denominator
        .iter()
        .map(|(c, w)| w * (s(c) - max).exp())
        .sum();
    max + sum.ln() - s(&term.positive)
}

/// Accumulate `scale · ∂term/∂S` into `grad`.
fn term_grad(term: &Term, scores: &[Vec<f64>], grad: &mut [Vec<f64>]) {
    let s = |c: &Cell| scores[c.audio][c.text];
    let max = term
        .denominator
        .iter()
        .map(|(c, _)| s(c))
        .fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = term
        .denominator
        .iter()
        .map(|(c, w)| w * (s(c) - max).exp())
        .collect();
    let total: f64 = weights.iter().sum();
    for ((c, _), w) in term.denominator.iter().zip(&weights) {
        grad[c.audio][c.text] += term.scale * w / total;
    }
    grad[term.positive.audio][term.positive.text] -= term.scale;
}

/// Stage loss split into its two anchoring directions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    /// `L_A` or `L_B`.
    pub total: f64,
    /// Audio-anchored sum (the text-selection loss).
    pub audio_anchored: f64,
    /// Text-anchored sum before its `β` weight.
    pub text_anchored: f64,
}

fn evaluate(terms: &[Term], scores: &[Vec<f64>]) -> Result<LossBreakdown> {
    let mut out = LossBreakdown {
        total: 0.0,
        audio_anchored: 0.0,
        text_anchored: 0.0,
    };
    for t in terms {
        let v = term_value(t, scores);
        out.total += t.scale * v;
        match t.anchor {
            Modality::Audio => out.audio_anchored += v,
            Modality::Text => out.text_anchored += v,
        }
    }
    if !out.total.is_finite() {
        return Err(Error::Numeric(format!("loss is not finite: {out:?}")));
    }
    Ok(out)
}

fn check_stage(batch: &EmbeddingBatch, stage: Stage, c: &LossCoefficients) -> Result<()> {
    c.validate()?;
    batch.validate()?;
    if batch.stage != stage {
        return Err(Error::Shape(format!(
            "expected a stage {stage:?} batch, got {:?}",
            batch.stage
        )));
    }
    Ok(())
}

/// `L_B = L_cB + β · L_aB`.
pub fn loss_stage_b(batch: &EmbeddingBatch, c: &LossCoefficients) -> Result<LossBreakdown> {
    check_stage(batch, Stage::B, c)?;
    let terms = build_terms(Stage::B, batch.n, None, c)?;
    evaluate(&terms, &score_matrix(batch, c.gamma))
}

/// `L_A = L_cA + β_A · L_aA`.
pub fn loss_stage_a(batch: &EmbeddingBatch, c: &LossCoefficients) -> Result<LossBreakdown> {
    check_stage(batch, Stage::A, c)?;
    let terms = build_terms(Stage::A, batch.n, batch.labels.as_ref(), c)?;
    evaluate(&terms, &score_matrix(batch, c.gamma))
}

pub fn stage_loss(batch: &EmbeddingBatch, c: &LossCoefficients) -> Result<LossBreakdown> {
    match batch.stage {
        Stage::A => loss_stage_a(batch, c),
        Stage::B => loss_stage_b(batch, c),
    }
}

fn single_b_term(
    block: BlockB,
    k: usize,
    batch: &EmbeddingBatch,
    c: &LossCoefficients,
) -> Result<f64> {
    check_stage(batch, Stage::B, c)?;
    if k >= batch.n {
        return Err(Error::InvalidArgument(format!(
            "anchor {k} outside block of {}",
            batch.n
        )));
    }
    let term = stage_b_term(Modality::Audio, block, k, batch.n, c);
    let v = term_value(&term, &score_matrix(batch, c.gamma));
    if !v.is_finite() {
        return Err(Error::Numeric("TNCE term is not finite".into()));
    }
    Ok(v)
}

/// Audio-anchored TNCE of forward row `k`.
pub fn tnce_forward(k: usize, batch: &EmbeddingBatch, c: &LossCoefficients) -> Result<f64> {
    single_b_term(BlockB::Forward, k, batch, c)
}

/// Audio-anchored TNCE of reversed row `k`: the forward term with the
/// forward and reversed blocks exchanged.
pub fn tnce_reversed(k: usize, batch: &EmbeddingBatch, c: &LossCoefficients) -> Result<f64> {
    single_b_term(BlockB::Reversed, k, batch, c)
}

/// Audio-anchored TNCE of overlaid row `k`.
pub fn tnce_overlay(k: usize, batch: &EmbeddingBatch, c: &LossCoefficients) -> Result<f64> {
    single_b_term(BlockB::Overlaid, k, batch, c)
}

/// Loss and its gradient with respect to both embedding matrices.
#[derive(Debug, Clone)]
pub struct EmbeddingGrad {
    pub loss: LossBreakdown,
    pub audio: Vec<Vec<f64>>,
    pub text: Vec<Vec<f64>>,
}

pub fn loss_and_embedding_grad(
    batch: &EmbeddingBatch,
    c: &LossCoefficients,
) -> Result<EmbeddingGrad> {
    c.validate()?;
    batch.validate()?;
    let terms = build_terms(batch.stage, batch.n, batch.labels.as_ref(), c)?;
    let scores = score_matrix(batch, c.gamma);
    let loss = evaluate(&terms, &scores)?;
    let rows = batch.audio.len();
    let mut ds = vec![vec![0.0; rows]; rows];
    for t in &terms {
        term_grad(t, &scores, &mut ds);
    }
    let d = batch.audio[0].len();
    let mut ga = vec![vec![0.0; d]; rows];
    let mut gt = vec![vec![0.0; d]; rows];
    for (a, ds_row) in ds.iter().enumerate() {
        for (t, &g) in ds_row.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let g = c.gamma * g;
            for i in 0..d {
                ga[a][i] += g * batch.text[t][i];
                gt[t][i] += g * batch.audio[a][i];
            }
        }
    }
    Ok(EmbeddingGrad {
        loss,
        audio: ga,
        text: gt,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::normalize;
    use crate::seed;
    use rand::Rng;

    fn random_rows(count: usize, d: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
        (0..count)
            .map(|_| normalize((0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap())
            .collect()
    }

    fn batch_b(n: usize, d: usize, s: u64) -> EmbeddingBatch {
        let mut rng = seed::rng(s, "loss-test");
        EmbeddingBatch {
            stage: Stage::B,
            n,
            audio: random_rows(3 * n, d, &mut rng),
            text: random_rows(3 * n, d, &mut rng),
            labels: None,
        }
    }

    fn uniform_batch(stage: Stage, n: usize) -> EmbeddingBatch {
        let rows = blocks_for(stage) * n;
        let e = vec![1.0, 0.0, 0.0];
        EmbeddingBatch {
            stage,
            n,
            audio: vec![e.clone(); rows],
            text: vec![e; rows],
            labels: (stage == Stage::A).then(|| StageALabels {
                single_class: (0..n).collect(),
                dual_classes: (0..n).map(|i| (i, i + 1)).collect(),
            }),
        }
    }

    #[test]
    fn similarity_matrix_basics() {
        let rows = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let c = similarity_matrix(&rows, &rows, 1.0).unwrap();
        assert_eq!(c, vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let c10 = similarity_matrix(&rows, &rows, 10.0).unwrap();
        assert_eq!(c10[0][0], 10.0);
        assert!(similarity_matrix(&rows, &[vec![1.0]], 1.0).is_err());
    }

    #[test]
    fn single_row_all_zero_alpha_is_zero() {
        let b = batch_b(1, 4, 0);
        let c = LossCoefficients::infonce(10.0);
        assert!(tnce_forward(0, &b, &c).unwrap().abs() < 1e-15);
        assert!(tnce_reversed(0, &b, &c).unwrap().abs() < 1e-15);
        assert!(tnce_overlay(0, &b, &c).unwrap().abs() < 1e-15);
    }

    #[test]
    fn uniform_similarity_gives_log_n() {
        for n in [1, 2, 5, 8] {
            let b = uniform_batch(Stage::B, n);
            let c = LossCoefficients::infonce(10.0);
            for k in 0..n {
                for v in [
                    tnce_forward(k, &b, &c).unwrap(),
                    tnce_reversed(k, &b, &c).unwrap(),
                    tnce_overlay(k, &b, &c).unwrap(),
                ] {
                    assert!((v - (n as f64).ln()).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn overlay_keeps_forward_terms_without_alphas() {
        let b = uniform_batch(Stage::B, 3);
        let mut c = LossCoefficients::infonce(1.0);
        c.cross_blocks = true;
        // overlaid block (3) + forward block (3), reversed gated off.
        let v = tnce_overlay(0, &b, &c).unwrap();
        assert!((v - 6f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn beta_zero_leaves_audio_anchored_only() {
        let b = batch_b(3, 5, 1);
        let mut c = LossCoefficients::unity();
        c.beta = 0.0;
        let l = loss_stage_b(&b, &c).unwrap();
        assert_eq!(l.total, l.audio_anchored);
    }

    #[test]
    fn swapping_modalities_swaps_directions() {
        let b = batch_b(3, 5, 2);
        let c = LossCoefficients::unity();
        let l = loss_stage_b(&b, &c).unwrap();
        let s = loss_stage_b(&b.swapped(), &c).unwrap();
        assert!((l.audio_anchored - s.text_anchored).abs() < 1e-12);
        assert!((l.text_anchored - s.audio_anchored).abs() < 1e-12);
    }

    #[test]
    fn stage_a_degenerate_and_uniform() {
        let mut b = uniform_batch(Stage::A, 1);
        let c = LossCoefficients::infonce(10.0);
        let l = loss_stage_a(&b, &c).unwrap();
        assert!(l.audio_anchored.abs() < 1e-15);
        b = uniform_batch(Stage::A, 4);
        let l = loss_stage_a(&b, &c).unwrap();
        // 8 audio-anchored terms, each log 4.
        assert!((l.audio_anchored - 8.0 * 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn stage_a_same_and_diff_weights() {
        let labels = StageALabels {
            single_class: vec![0, 2],
            dual_classes: vec![(0, 1), (3, 4)],
        };
        let c = LossCoefficients {
            alpha_same: 0.25,
            alpha_diff: 0.5,
            ..LossCoefficients::unity()
        };
        let t = stage_a_term(Modality::Audio, BlockA::Singles, 0, 2, &labels, &c);
        let w: Vec<f64> = t.denominator.iter().map(|(_, w)| *w).collect();
        assert_eq!(w, vec![1.0, 1.0, 0.25, 0.5]);
        let t = stage_a_term(Modality::Audio, BlockA::Duals, 1, 2, &labels, &c);
        let w: Vec<f64> = t.denominator.iter().map(|(_, w)| *w).collect();
        assert_eq!(w, vec![0.5, 0.5, 1.0, 1.0]);
    }

    #[test]
    fn a5_form_adds_own_caption() {
        let c = LossCoefficients {
            appendix_a5_form: true,
            ..LossCoefficients::unity()
        };
        let t = stage_b_term(Modality::Audio, BlockB::Forward, 1, 3, &c);
        let own = t
            .denominator
            .iter()
            .find(|(cell, _)| *cell == t.positive)
            .unwrap()
            .1;
        assert_eq!(own, 2.0);
    }

    #[test]
    fn misaligned_batches_are_rejected() {
        let mut b = batch_b(3, 4, 0);
        b.audio.pop();
        assert!(matches!(
            loss_stage_b(&b, &LossCoefficients::unity()),
            Err(Error::Shape(_))
        ));
        let mut b = batch_b(2, 4, 0);
        b.text[0][0] = f64::NAN;
        assert!(matches!(
            loss_stage_b(&b, &LossCoefficients::unity()),
            Err(Error::Numeric(_))
        ));
        let mut a = uniform_batch(Stage::A, 2);
        a.labels = None;
        assert!(loss_stage_a(&a, &LossCoefficients::unity()).is_err());
        assert!(loss_stage_b(&a, &LossCoefficients::unity()).is_err());
    }

    #[test]
    fn large_gamma_stays_finite() {
        let b = batch_b(4, 6, 3);
        let c = LossCoefficients {
            gamma: 2000.0,
            ..LossCoefficients::unity()
        };
        assert!(loss_stage_b(&b, &c).unwrap().total.is_finite());
    }
}
