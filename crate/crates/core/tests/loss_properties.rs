use proptest::prelude::*;

use temporal_align::dataset::Stage;
use temporal_align::loss::{stage_loss, EmbeddingBatch, LossCoefficients, StageALabels};

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    v.into_iter().map(|x| x / n).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Stage-B loss written out term by term with plain `exp`/`ln`.
fn naive_stage_b(b: &EmbeddingBatch, c: &LossCoefficients) -> f64 {
    let n = b.n;
    let (f, r, o) = (0, n, 2 * n);
    let one_direction = |rows: &[Vec<f64>], cols: &[Vec<f64>]| {
        let s = |i: usize, j: usize| (c.gamma * dot(&rows[i], &cols[j])).exp();
        let mut total = 0.0;
        for k in 0..n {
            // forward anchor
            let mut den: f64 = (0..n).map(|m| s(f + k, f + m)).sum();
            den += c.alpha_st * s(f + k, r + k)
                + c.alpha_ct
                    * (0..n)
                        .filter(|&m| m != k)
                        .map(|m| s(f + k, r + m))
                        .sum::<f64>();
            den += c.alpha_so * s(f + k, o + k)
                + c.alpha_co
                    * (0..n)
                        .filter(|&m| m != k)
                        .map(|m| s(f + k, o + m))
                        .sum::<f64>();
            if c.appendix_a5_form {
                den += c.alpha_so * s(f + k, f + k);
            }
            total += den.ln() - s(f + k, f + k).ln();
            // reversed anchor
            let mut den: f64 = (0..n).map(|m| s(r + k, r + m)).sum();
            den += c.alpha_st * s(r + k, f + k)
                + c.alpha_ct
                    * (0..n)
                        .filter(|&m| m != k)
                        .map(|m| s(r + k, f + m))
                        .sum::<f64>();
            den += c.alpha_so * s(r + k, o + k)
                + c.alpha_co
                    * (0..n)
                        .filter(|&m| m != k)
                        .map(|m| s(r + k, o + m))
                        .sum::<f64>();
            if c.appendix_a5_form {
                den += c.alpha_so * s(r + k, r + k);
            }
            total += den.ln() - s(r + k, r + k).ln();
            // overlaid anchor
            let mut den: f64 = (0..n).map(|m| s(o + k, o + m)).sum();
            if c.cross_blocks {
                den += (0..n).map(|m| s(o + k, f + m)).sum::<f64>();
            }
            den += c.alpha_st * s(o + k, r + k)
                + c.alpha_ct
                    * (0..n)
                        .filter(|&m| m != k)
                        .map(|m| s(o + k, r + m))
                        .sum::<f64>();
            total += den.ln() - s(o + k, o + k).ln();
        }
        total
    };
    one_direction(&b.audio, &b.text) + c.beta * one_direction(&b.text, &b.audio)
}

/// Stage-A loss written out term by term with plain `exp`/`ln`.
fn naive_stage_a(b: &EmbeddingBatch, c: &LossCoefficients) -> f64 {
    let n = b.n;
    let l = b.labels.as_ref().expect("labels");
    let shares = |single: usize, dual: usize| {
        let (i, j) = l.dual_classes[dual];
        if l.single_class[single] == i || l.single_class[single] == j {
            c.alpha_same
        } else {
            c.alpha_diff
        }
    };
    let one_direction = |rows: &[Vec<f64>], cols: &[Vec<f64>]| {
        let s = |i: usize, j: usize| (c.gamma * dot(&rows[i], &cols[j])).exp();
        let mut total = 0.0;
        for k in 0..n {
            let den: f64 = (0..n).map(|m| s(k, m) + shares(k, m) * s(k, n + m)).sum();
            total += den.ln() - s(k, k).ln();
            let den: f64 = (0..n)
                .map(|m| s(n + k, n + m) + shares(m, k) * s(n + k, m))
                .sum();
            total += den.ln() - s(n + k, n + k).ln();
        }
        total
    };
    one_direction(&b.audio, &b.text) + c.beta_a * one_direction(&b.text, &b.audio)
}

fn batch_strategy(stage: Stage) -> impl Strategy<Value = EmbeddingBatch> {
    let blocks = match stage {
        Stage::A => 2,
        Stage::B => 3,
    };
    (1usize..5, 2usize..6).prop_flat_map(move |(n, d)| {
        let rows = blocks * n;
        let vecs = prop::collection::vec(prop::collection::vec(-1.0f64..1.0, d), rows);
        let labels = (
            prop::collection::vec(0usize..4, n),
            prop::collection::vec((0usize..4, 0usize..4), n),
        );
        (vecs.clone(), vecs, labels).prop_map(move |(a, t, (single, dual))| EmbeddingBatch {
            stage,
            n,
            audio: a.into_iter().map(unit).collect(),
            text: t.into_iter().map(unit).collect(),
            labels: (stage == Stage::A).then_some(StageALabels {
                single_class: single,
                dual_classes: dual,
            }),
        })
    })
}

fn coef_strategy() -> impl Strategy<Value = LossCoefficients> {
    (
        prop::array::uniform4(0.0f64..2.0),
        0.0f64..2.0,
        0.0f64..2.0,
        (0.0f64..2.0, 0.0f64..2.0),
        0.5f64..8.0,
        any::<bool>(),
        any::<bool>(),
    )
        .prop_map(
            |(a, beta, beta_a, (same, diff), gamma, a5, cross)| LossCoefficients {
                alpha_st: a[0],
                alpha_ct: a[1],
                alpha_so: a[2],
                alpha_co: a[3],
                beta,
                beta_a,
                alpha_same: same,
                alpha_diff: diff,
                gamma,
                appendix_a5_form: a5,
                cross_blocks: cross,
            },
        )
}

fn permuted(b: &EmbeddingBatch, perm: &[usize]) -> EmbeddingBatch {
    let n = b.n;
    let remap = |rows: &[Vec<f64>]| -> Vec<Vec<f64>> {
        (0..rows.len())
            .map(|i| rows[(i / n) * n + perm[i % n]].clone())
            .collect()
    };
    EmbeddingBatch {
        audio: remap(&b.audio),
        text: remap(&b.text),
        labels: b.labels.as_ref().map(|l| StageALabels {
            single_class: perm.iter().map(|&p| l.single_class[p]).collect(),
            dual_classes: perm.iter().map(|&p| l.dual_classes[p]).collect(),
        }),
        ..b.clone()
    }
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn stage_b_matches_naive_formula(b in batch_strategy(Stage::B), c in coef_strategy()) {
        let l = stage_loss(&b, &c).unwrap();
        prop_assert!(close(l.total, naive_stage_b(&b, &c)), "{} vs {}", l.total, naive_stage_b(&b, &c));
    }

    #[test]
    fn stage_a_matches_naive_formula(b in batch_strategy(Stage::A), c in coef_strategy()) {
        let l = stage_loss(&b, &c).unwrap();
        prop_assert!(close(l.total, naive_stage_a(&b, &c)));
    }

    #[test]
    fn loss_is_non_negative(b in batch_strategy(Stage::B), a in batch_strategy(Stage::A), c in coef_strategy()) {
        for batch in [&b, &a] {
            let l = stage_loss(batch, &c).unwrap();
            prop_assert!(l.audio_anchored >= -1e-12 && l.text_anchored >= -1e-12);
        }
    }

    #[test]
    fn raising_a_coefficient_never_lowers_the_loss(
        b in batch_strategy(Stage::B),
        a in batch_strategy(Stage::A),
        c in coef_strategy(),
        which in 0usize..6,
        bump in 0.0f64..3.0,
    ) {
        let mut up = c.clone();
        match which {
            0 => up.alpha_st += bump,
            1 => up.alpha_ct += bump,
            2 => up.alpha_so += bump,
            3 => up.alpha_co += bump,
            4 => up.alpha_same += bump,
            _ => up.alpha_diff += bump,
        }
        for batch in [&b, &a] {
            let lo = stage_loss(batch, &c).unwrap().total;
            let hi = stage_loss(batch, &up).unwrap().total;
            prop_assert!(hi >= lo - 1e-9 * lo.abs().max(1.0));
        }
    }

    #[test]
    fn permuting_pairs_leaves_loss_unchanged(
        b in batch_strategy(Stage::B),
        a in batch_strategy(Stage::A),
        c in coef_strategy(),
        seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        for batch in [&b, &a] {
            let mut perm: Vec<usize> = (0..batch.n).collect();
            perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let x = stage_loss(batch, &c).unwrap().total;
            let y = stage_loss(&permuted(batch, &perm), &c).unwrap().total;
            prop_assert!(close(x, y));
        }
    }
}
