//! Analytic gradient of the stage losses with respect to the trainable
//! projections, and a central finite-difference check against it.

use serde::{Deserialize, Serialize};

use crate::dataset::Stage;
use crate::encoder::{dot, EncoderParams, Modality};
use crate::error::{Error, Result};
use crate::loss::{
    blocks_for, loss_and_embedding_grad, stage_loss, EmbeddingBatch, LossBreakdown,
    LossCoefficients, StageALabels,
};
use crate::seed;

/// A batch after the frozen base: one base vector per audio and text row.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBatch {
    pub stage: Stage,
    pub n: usize,
    pub audio: Vec<Vec<f64>>,
    pub text: Vec<Vec<f64>>,
    pub labels: Option<StageALabels>,
}

struct Projected {
    batch: EmbeddingBatch,
    audio_norms: Vec<f64>,
    text_norms: Vec<f64>,
}

fn project_rows(
    params: &EncoderParams,
    m: Modality,
    rows: &[Vec<f64>],
) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let mut out = Vec::with_capacity(rows.len());
    let mut norms = Vec::with_capacity(rows.len());
    for r in rows {
        let raw = params.project_raw(m, r)?;
        let norm = dot(&raw, &raw).sqrt();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::Numeric(
                "projection collapsed to zero or overflowed".into(),
            ));
        }
        out.push(raw.iter().map(|x| x / norm).collect());
        norms.push(norm);
    }
    Ok((out, norms))
}

fn project(params: &EncoderParams, fb: &FeatureBatch) -> Result<Projected> {
    let rows = blocks_for(fb.stage) * fb.n;
    if fb.audio.len() != rows || fb.text.len() != rows {
        return Err(Error::Shape(format!(
            "feature batch needs {rows} rows per modality, got {} and {}",
            fb.audio.len(),
            fb.text.len()
        )));
    }
    let (audio, audio_norms) = project_rows(params, Modality::Audio, &fb.audio)?;
    let (text, text_norms) = project_rows(params, Modality::Text, &fb.text)?;
    Ok(Projected {
        batch: EmbeddingBatch {
            stage: fb.stage,
            n: fb.n,
            audio,
            text,
            labels: fb.labels.clone(),
        },
        audio_norms,
        text_norms,
    })
}

pub fn embed_batch(params: &EncoderParams, fb: &FeatureBatch) -> Result<EmbeddingBatch> {
    Ok(project(params, fb)?.batch)
}

pub fn batch_loss(
    params: &EncoderParams,
    fb: &FeatureBatch,
    c: &LossCoefficients,
) -> Result<LossBreakdown> {
    stage_loss(&embed_batch(params, fb)?, c)
}

/// Push `dz` back through `z = u/‖u‖`, `u = W h + b` into the flat gradient.
fn backprop_rows(
    params: &EncoderParams,
    m: Modality,
    bases: &[Vec<f64>],
    embeds: &[Vec<f64>],
    norms: &[f64],
    dz: &[Vec<f64>],
    grad: &mut [f64],
) {
    let layout = params.layout();
    let off = layout.offset(m);
    let wl = layout.weight_len();
    let bd = layout.base_dim;
    for (((h, z), &norm), dz) in bases.iter().zip(embeds).zip(norms).zip(dz) {
        let proj = dot(z, dz);
        for (i, (&zi, &gi)) in z.iter().zip(dz).enumerate() {
            let du = (gi - zi * proj) / norm;
            if du == 0.0 {
                continue;
            }
            let row = &mut grad[off + i * bd..off + (i + 1) * bd];
            for (g, &hv) in row.iter_mut().zip(h) {
                *g += du * hv;
            }
            grad[off + wl + i] += du;
        }
    }
}

/// Loss and its gradient with respect to `params.trainable()`.
pub fn loss_and_grad(
    params: &EncoderParams,
    fb: &FeatureBatch,
    c: &LossCoefficients,
) -> Result<(LossBreakdown, Vec<f64>)> {
    let p = project(params, fb)?;
    let eg = loss_and_embedding_grad(&p.batch, c)?;
    let mut grad = vec![0.0; params.trainable_count()];
    backprop_rows(
        params,
        Modality::Audio,
        &fb.audio,
        &p.batch.audio,
        &p.audio_norms,
        &eg.audio,
        &mut grad,
    );
    backprop_rows(
        params,
        Modality::Text,
        &fb.text,
        &p.batch.text,
        &p.text_norms,
        &eg.text,
        &mut grad,
    );
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numeric("non-finite gradient".into()));
    }
    Ok((eg.loss, grad))
}

/// Central differences `(L(θ+h e_i) − L(θ−h e_i)) / 2h` over `coords`.
pub fn finite_diff_grad(
    params: &EncoderParams,
    fb: &FeatureBatch,
    c: &LossCoefficients,
    h: f64,
    coords: &[usize],
) -> Result<Vec<f64>> {
    let mut probe = params.clone();
    let mut out = Vec::with_capacity(coords.len());
    for &i in coords {
        let orig = params.trainable()[i];
        probe.trainable_mut()[i] = orig + h;
        let up = batch_loss(&probe, fb, c)?.total;
        probe.trainable_mut()[i] = orig - h;
        let down = batch_loss(&probe, fb, c)?.total;
        probe.trainable_mut()[i] = orig;
        out.push((up - down) / (2.0 * h));
    }
    Ok(out)
}

/// `|g − ĝ| / max(|g|, |ĝ|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradCheckCase {
    pub stage: Stage,
    /// `(α_st, α_ct, α_so, α_co)`.
    pub alphas: [f64; 4],
    pub appendix_a5_form: bool,
    pub coords_checked: usize,
    pub max_relative_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub step: f64,
    pub tolerance: f64,
    pub cases: Vec<GradCheckCase>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        !self.cases.is_empty() && self.cases.iter().all(|c| c.passed)
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    pub n: usize,
    pub base_dim: usize,
    pub embed_dim: usize,
    pub step: f64,
    pub tolerance: f64,
    pub floor: f64,
    /// Coordinates checked per case; `None` checks all.
    pub max_coords: Option<usize>,
    pub seed: u64,
    /// Test hook: perturb the analytic gradient so the check must fail.
    pub corrupt_analytic: bool,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            n: 4,
            base_dim: 8,
            embed_dim: 8,
            step: 1e-6,
            tolerance: 1e-5,
            floor: 1e-6,
            max_coords: None,
            seed: 0,
            corrupt_analytic: false,
        }
    }
}

/// Small random encoder and feature batch for gradient checks.
pub fn random_problem(
    stage: Stage,
    opts: &GradCheckOptions,
) -> Result<(EncoderParams, FeatureBatch)> {
    use crate::encoder::{init_params, EncoderConfig};
    use rand::Rng;
    let cfg = EncoderConfig {
        num_bands: 4,
        vocab_size: 4,
        token_dim: 4,
        hidden_dim: 4,
        base_dim: opts.base_dim,
        embed_dim: opts.embed_dim,
        projection_init: 0.5,
    };
    let mut params = init_params(opts.seed, &cfg)?;
    let mut rng = seed::rng(opts.seed, "grad-check");
    let t: Vec<f64> = (0..params.trainable_count())
        .map(|_| rng.gen_range(-0.5..0.5))
        .collect();
    params.set_trainable(t)?;
    let rows = blocks_for(stage) * opts.n;
    let mut draw = |count: usize| -> Vec<Vec<f64>> {
        (0..count)
            .map(|_| {
                (0..opts.base_dim)
                    .map(|_| rng.gen_range(-1.0..1.0))
                    .collect()
            })
            .collect()
    };
    let audio = draw(rows);
    let text = draw(rows);
    let labels = (stage == Stage::A).then(|| StageALabels {
        single_class: (0..opts.n).map(|k| k % 3).collect(),
        dual_classes: (0..opts.n).map(|k| (k % 3, (k + 1) % 4)).collect(),
    });
    Ok((
        params,
        FeatureBatch {
            stage,
            n: opts.n,
            audio,
            text,
            labels,
        },
    ))
}

pub const ALPHA_CORNERS: [[f64; 4]; 4] = [
    [0.0, 0.0, 0.0, 0.0],
    [1.0, 1.0, 1.0, 1.0],
    [1.0, 0.0, 1.0, 0.0],
    [0.0, 1.0, 0.0, 1.0],
];

/// Compare analytic and numeric gradients across `α` corners, both stages
/// and both forward-denominator forms.
pub fn run_grad_check(opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let mut cases = Vec::new();
    for stage in [Stage::A, Stage::B] {
        let (params, fb) = random_problem(stage, opts)?;
        let total = params.trainable_count();
        let coords: Vec<usize> = match opts.max_coords {
            Some(m) if m < total => {
                let stride = total as f64 / m as f64;
                (0..m).map(|i| (i as f64 * stride) as usize).collect()
            }
            _ => (0..total).collect(),
        };
        for alphas in ALPHA_CORNERS {
            for a5 in [false, true] {
                if stage == Stage::A && a5 {
                    continue;
                }
                let mut c = LossCoefficients::unity()
                    .with_alphas(alphas[0], alphas[1], alphas[2], alphas[3]);
                c.appendix_a5_form = a5;
                c.beta = 0.7;
                c.beta_a = 0.6;
                c.alpha_same = alphas[0];
                c.alpha_diff = alphas[1];
                // Smaller γ keeps the central difference well conditioned.
                c.gamma = 2.0;
                let (_, mut grad) = loss_and_grad(&params, &fb, &c)?;
                if opts.corrupt_analytic {
                    grad.iter_mut().for_each(|g| *g *= 1.01);
                }
                let numeric = finite_diff_grad(&params, &fb, &c, opts.step, &coords)?;
                let max_err = coords
                    .iter()
                    .zip(&numeric)
                    .map(|(&i, &g)| relative_error(grad[i], g, opts.floor))
                    .fold(0.0, f64::max);
                cases.push(GradCheckCase {
                    stage,
                    alphas,
                    appendix_a5_form: a5,
                    coords_checked: coords.len(),
                    max_relative_error: max_err,
                    passed: max_err <= opts.tolerance,
                });
            }
        }
    }
    Ok(GradCheckReport {
        step: opts.step,
        tolerance: opts.tolerance,
        cases,
    })
}
