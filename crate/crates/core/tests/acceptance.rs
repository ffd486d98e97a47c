//! End-to-end acceptance checks. Runs without the libtest harness so every
//! criterion prints a PASS/FAIL line even when all of them pass.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use temporal_align::audio::{self, CorpusSpec};
use temporal_align::captions::{self, CaptionRelation};
use temporal_align::config::RunConfig;
use temporal_align::dataset::{
    build_stage_a_items, build_stage_b_items, enumerate_pairs, Corpus, Stage,
};
use temporal_align::gradient::{run_grad_check, GradCheckOptions};
use temporal_align::loss::{
    blocks_for, build_terms, score_matrix, term_value, EmbeddingBatch, LossCoefficients,
    StageALabels,
};
use temporal_align::model::Embedder;
use temporal_align::sweep::{run_sweep, sweep_metric_keys, SWEEP_COEFFICIENTS};
use temporal_align::trainer::run_two_stage;
use temporal_align::wav;
use temporal_align::zste::{
    self, chance, HashedRandomEmbedder, OracleEmbedder, ReportMeta, METRIC_KEYS,
};

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within_budget(start: Instant, budget: Duration, what: &str) -> Result<(), String> {
    let t = start.elapsed();
    ensure(
        t <= budget,
        format!("{what} took {t:.1?}, budget {budget:?}"),
    )
}

fn counting_identities() -> Check {
    let start = Instant::now();
    let mut detail = Vec::new();
    for k in [50usize, 10] {
        let pairs = enumerate_pairs(k).map_err(|e| e.to_string())?;
        let corpus = Corpus::new(CorpusSpec {
            num_classes: k,
            ..CorpusSpec::default()
        })
        .map_err(|e| e.to_string())?;
        let b = build_stage_b_items(&corpus).map_err(|e| e.to_string())?;
        let a = build_stage_a_items(&corpus).map_err(|e| e.to_string())?;
        // Ordered pairs of distinct classes, counted directly.
        let mut ordered = 0;
        for i in 0..k {
            for j in 0..k {
                ordered += usize::from(i != j);
            }
        }
        ensure(
            pairs.len() == ordered,
            format!("K={k}: {} pairs, expected {ordered}", pairs.len()),
        )?;
        ensure(
            b.len() == 3 * ordered,
            format!("K={k}: {} stage-B items", b.len()),
        )?;
        ensure(
            a.len() == 2 * ordered,
            format!("K={k}: {} stage-A items", a.len()),
        )?;
        detail.push(format!(
            "K={k}: {} pairs, {} stage-B items",
            pairs.len(),
            b.len()
        ));
    }
    ensure(
        detail[0] == "K=50: 2450 pairs, 7350 stage-B items",
        detail[0].clone(),
    )?;
    ensure(
        detail[1] == "K=10: 90 pairs, 270 stage-B items",
        detail[1].clone(),
    )?;
    within_budget(start, Duration::from_secs(1), "counting")?;
    Ok(detail.join("; "))
}

fn gradient_verification() -> Check {
    let start = Instant::now();
    let opts = GradCheckOptions::default();
    ensure(
        opts.n == 4 && opts.embed_dim == 8 && opts.step == 1e-6 && opts.tolerance == 1e-5,
        "grad-check defaults drifted",
    )?;
    let r = run_grad_check(&opts).map_err(|e| e.to_string())?;
    let b_cases: Vec<_> = r.cases.iter().filter(|c| c.stage == Stage::B).collect();
    for corner in [
        [0.0, 0.0, 0.0, 0.0],
        [1.0, 0.0, 1.0, 0.0],
        [0.0, 1.0, 0.0, 1.0],
        [1.0, 1.0, 1.0, 1.0],
    ] {
        for a5 in [false, true] {
            ensure(
                b_cases
                    .iter()
                    .any(|c| c.alphas == corner && c.appendix_a5_form == a5),
                format!("no stage-B case for {corner:?} a5={a5}"),
            )?;
        }
        ensure(
            r.cases
                .iter()
                .any(|c| c.stage == Stage::A && c.alphas == corner),
            format!("no stage-A case for {corner:?}"),
        )?;
    }
    let worst = r
        .cases
        .iter()
        .map(|c| c.max_relative_error)
        .fold(0.0, f64::max);
    ensure(r.passed(), format!("max relative error {worst:.3e}"))?;
    let corrupted = run_grad_check(&GradCheckOptions {
        corrupt_analytic: true,
        ..opts
    })
    .map_err(|e| e.to_string())?;
    ensure(!corrupted.passed(), "a corrupted gradient passed the check")?;
    within_budget(start, Duration::from_secs(30), "gradient check")?;
    Ok(format!(
        "{} cases, max relative error {worst:.2e}",
        r.cases.len()
    ))
}

fn uniform_batch(stage: Stage, n: usize, dim: usize) -> EmbeddingBatch {
    let mut v = vec![0.0; dim];
    v[0] = 0.6;
    v[1] = 0.8;
    let rows = blocks_for(stage) * n;
    EmbeddingBatch {
        stage,
        n,
        audio: vec![v.clone(); rows],
        text: vec![v; rows],
        labels: (stage == Stage::A).then(|| StageALabels {
            single_class: (0..n).collect(),
            dual_classes: (0..n).map(|i| (i, i + 1)).collect(),
        }),
    }
}

fn infonce_reduction() -> Check {
    let mut terms_checked = 0;
    let mut worst = 0.0f64;
    for stage in [Stage::A, Stage::B] {
        for n in [1usize, 2, 3, 4, 8, 16, 32] {
            for gamma in [1.0, 10.0, 100.0] {
                let c = LossCoefficients::infonce(gamma);
                let batch = uniform_batch(stage, n, 8);
                let scores = score_matrix(&batch, gamma);
                let terms =
                    build_terms(stage, n, batch.labels.as_ref(), &c).map_err(|e| e.to_string())?;
                ensure(terms.len() == 2 * blocks_for(stage) * n, "term count")?;
                for t in &terms {
                    let err = (term_value(t, &scores) - (n as f64).ln()).abs();
                    worst = worst.max(err);
                    terms_checked += 1;
                }
            }
        }
    }
    ensure(
        worst <= 1e-12,
        format!("max deviation from log N: {worst:.3e}"),
    )?;
    Ok(format!(
        "{terms_checked} terms, max |term - log N| = {worst:.1e}"
    ))
}

fn operator_algebra() -> Check {
    let cfg = RunConfig::default();
    let data = cfg.prepare().map_err(|e| e.to_string())?;
    let corpus = &data.corpus;
    let classes = &corpus.classes;
    let items = build_stage_b_items(corpus).map_err(|e| e.to_string())?;

    let mut inversions = 0;
    for item in items
        .iter()
        .filter(|it| it.audio.relation == audio::AudioRelation::Concat)
    {
        let w = item.audio.render(corpus).map_err(|e| e.to_string())?;
        let once = audio::invert_composite(&w).map_err(|e| e.to_string())?;
        let twice = audio::invert_composite(&once).map_err(|e| e.to_string())?;
        ensure(
            twice.samples == w.samples,
            "audio inversion is not an involution",
        )?;
        ensure(
            once.samples != w.samples,
            "audio inversion left a clip unchanged",
        )?;
        let inv = captions::invert_caption(&item.caption).map_err(|e| e.to_string())?;
        let back = captions::invert_caption(&inv).map_err(|e| e.to_string())?;
        ensure(
            back == item.caption,
            format!("caption inversion of {:?}", item.caption.text),
        )?;
        inversions += 1;
    }
    // Inverting the "i before j" clip yields the clip captioned "j before i".
    for (i, j) in [(0usize, 1usize), (3, 7), (9, 2)] {
        let before = |a: usize, b: usize| {
            items
                .iter()
                .find(|it| it.pair == (a, b) && it.caption.relation == CaptionRelation::Before)
                .expect("item exists")
        };
        let w = before(i, j)
            .audio
            .render(corpus)
            .map_err(|e| e.to_string())?;
        let mirrored = before(j, i)
            .audio
            .render(corpus)
            .map_err(|e| e.to_string())?;
        let inv = audio::invert_composite(&w).map_err(|e| e.to_string())?;
        ensure(
            inv.samples == mirrored.samples,
            format!("inverted ({i},{j}) differs from ({j},{i})"),
        )?;
    }

    let k = corpus.num_classes();
    let mut overlays = 0;
    let mut wav_err = 0.0f64;
    for a in 0..k {
        for b in 0..k {
            if a == b {
                continue;
            }
            let x = corpus.clip(a, 0).map_err(|e| e.to_string())?;
            let y = corpus.clip(b, 1).map_err(|e| e.to_string())?;
            let xy = audio::overlay(&x, &y).map_err(|e| e.to_string())?;
            let yx = audio::overlay(&y, &x).map_err(|e| e.to_string())?;
            ensure(
                xy.samples
                    .iter()
                    .zip(&yx.samples)
                    .all(|(p, q)| p.to_bits() == q.to_bits()),
                format!("overlay of {a},{b} not commutative"),
            )?;
            overlays += 1;
            if b == (a + 1) % k {
                for w in [&x, &xy, &audio::concat(&x, &y).map_err(|e| e.to_string())?] {
                    let back = wav::decode_wav(&wav::encode_wav(&w.samples, w.sample_rate))
                        .map_err(|e| e.to_string())?;
                    ensure(back.samples.len() == w.samples.len(), "wav length changed")?;
                    for (p, q) in back.samples.iter().zip(&w.samples) {
                        wav_err = wav_err.max((p - q).abs());
                    }
                }
            }
        }
    }
    ensure(
        wav_err <= 2f64.powi(-15),
        format!("wav round-trip error {wav_err:.3e}"),
    )?;

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut softmax_err = 0.0f64;
    for len in [1usize, 2, 6, 50, 500] {
        for scale in [1.0, 100.0, 1e4] {
            let s: Vec<f64> = (0..len).map(|_| scale * rng.gen_range(-1.0..1.0)).collect();
            let p = zste::softmax(&s);
            softmax_err = softmax_err.max((p.iter().sum::<f64>() - 1.0).abs());
            ensure(
                p.iter().all(|v| (0.0..=1.0).contains(v)),
                "softmax left [0, 1]",
            )?;
        }
    }
    ensure(
        softmax_err <= 1e-9,
        format!("softmax sum error {softmax_err:.3e}"),
    )?;

    let model = cfg.initial_model(&data).map_err(|e| e.to_string())?;
    let oracle = OracleEmbedder::new(classes.clone());
    let hashed = HashedRandomEmbedder {
        dim: 32,
        seed: 0,
        gamma: 10.0,
    };
    let encoders: [&dyn Embedder; 3] = [&model, &oracle, &hashed];
    let mut norm_err = 0.0f64;
    let mut embedded = 0;
    for item in items.iter().step_by(7) {
        let w = item.audio.render(corpus).map_err(|e| e.to_string())?;
        for e in encoders {
            for z in [
                e.embed_audio(&w).map_err(|e| e.to_string())?,
                e.embed_text(&item.caption.text)
                    .map_err(|e| e.to_string())?,
            ] {
                norm_err = norm_err.max((z.iter().map(|v| v * v).sum::<f64>().sqrt() - 1.0).abs());
                embedded += 1;
            }
        }
    }
    ensure(
        norm_err <= 1e-9,
        format!("embedding norm error {norm_err:.3e}"),
    )?;
    Ok(format!(
        "{inversions} inversions, {overlays} overlays, wav err {wav_err:.2e}, softmax err {softmax_err:.1e}, {embedded} embeddings norm err {norm_err:.1e}"
    ))
}

fn harness_calibration() -> Check {
    let start = Instant::now();
    let base = RunConfig::default();
    let data = base.prepare().map_err(|e| e.to_string())?;
    let meta = |encoder: &str| ReportMeta {
        checkpoint_id: None,
        encoder: encoder.into(),
        num_classes: data.corpus.num_classes(),
        config_fingerprint: base.fingerprint(),
    };
    let opts = base.resolved().eval;
    let oracle = OracleEmbedder::new(data.corpus.classes.clone());
    let rep = zste::evaluate(&oracle, &data.corpus, &data.split, &opts, meta("oracle"))
        .map_err(|e| e.to_string())?;
    for k in METRIC_KEYS {
        let v = rep.get(k).ok_or(format!("oracle report lacks {k}"))?;
        ensure(v == 1.0, format!("oracle scored {v} on {k}"))?;
    }

    // Chance of task 5A from the enumerated outcomes, cross-checked by sampling.
    let outcomes = chance::task5a_outcomes();
    let analytic: f64 = outcomes.iter().map(|(u, p)| *u as f64 / 2.0 * p).sum();
    ensure(
        (analytic - 0.5).abs() < 1e-12,
        format!("5A analytic chance {analytic}"),
    )?;
    let mc = chance::monte_carlo(200_000, 4, 11, chance::task5a_rule);
    ensure(
        (mc - analytic).abs() < 0.01,
        format!("5A Monte-Carlo chance {mc:.4}"),
    )?;

    let mut checked = 0;
    let mut info = Vec::new();
    for s in 0..5u64 {
        let cfg = base.with_seed(s);
        let data = cfg.prepare().map_err(|e| e.to_string())?;
        let clips = zste::EvalClips::build(&data.corpus, &data.split).map_err(|e| e.to_string())?;
        let opts = cfg.resolved().eval;
        let k = data.corpus.num_classes() as f64;
        let hashed = HashedRandomEmbedder {
            dim: 32,
            seed: s,
            gamma: 10.0,
        };
        let init = cfg.initial_model(&data).map_err(|e| e.to_string())?;
        for (name, enc) in [("hashed", &hashed as &dyn Embedder), ("init", &init)] {
            let sc = zste::score_tasks(enc, &data.corpus.classes, &clips, &opts)
                .map_err(|e| e.to_string())?;
            for (key, p) in [
                ("1A", 1.0 / k),
                ("3A", 1.0 / 3.0),
                ("3B", 1.0 / 3.0),
                ("4A", 1.0 / 6.0),
                ("5A", analytic),
            ] {
                let n = sc.scores[key].len();
                let (lo, hi) = if key == "5A" {
                    chance::interval(&outcomes, n, 0.99, 2.0)
                } else {
                    chance::binomial_interval(p, n, 0.99)
                };
                let v = sc.mean(key).ok_or(format!("no {key} scores"))?;
                let inside = v >= lo && v <= hi;
                if name == "hashed" {
                    ensure(
                        inside,
                        format!("seed {s} {key} = {v:.3} outside [{lo:.3}, {hi:.3}]"),
                    )?;
                    checked += 1;
                } else if !inside {
                    info.push(format!("s{s} {key}={v:.3}"));
                }
            }
        }
    }
    within_budget(start, Duration::from_secs(120), "calibration")?;
    println!(
        "    info: untrained projection model outside its chance interval on {} of 25 seed/task cells{}",
        info.len(),
        if info.is_empty() { String::new() } else { format!(" ({})", info.join(", ")) }
    );
    Ok(format!("oracle 1.0 on all {} metrics; {checked} random-encoder cells inside 99% intervals; 5A chance MC {mc:.4}", METRIC_KEYS.len()))
}

fn training_sanity() -> Check {
    let start = Instant::now();
    let cfg = RunConfig::default();
    ensure(
        cfg.seed == 0
            && cfg.corpus.num_classes == 10
            && cfg.train.learning_rate == 1e-4
            && cfg.train.epochs == 30,
        "default run is not K=10, lr 1e-4, 30 epochs, seed 0",
    )?;
    ensure(
        cfg.train.stages == vec![Stage::A, Stage::B],
        "default schedule is not A then B",
    )?;
    let data = cfg.prepare().map_err(|e| e.to_string())?;
    let initial = cfg.initial_model(&data).map_err(|e| e.to_string())?;
    let frozen_before = initial.params.frozen().digest();
    let (model, report) =
        run_two_stage(&cfg.resolved().train, &data, initial).map_err(|e| e.to_string())?;
    ensure(
        model.params.frozen().digest() == frozen_before,
        "frozen weights changed",
    )?;
    let mut detail = Vec::new();
    for s in &report.stages {
        ensure(
            s.frozen_digest == frozen_before,
            format!("stage {:?} saw different frozen weights", s.stage),
        )?;
        let h = s.heldout_curve();
        for e in 1..=5 {
            ensure(
                h[e] < h[e - 1],
                format!(
                    "stage {:?} held-out loss rose at epoch {e}: {:.4} -> {:.4}",
                    s.stage,
                    h[e - 1],
                    h[e]
                ),
            )?;
        }
        detail.push(format!(
            "stage {:?} train {:.1} -> {:.1}, held-out {:.1} -> {:.1}",
            s.stage,
            s.initial_train_loss(),
            s.final_train_loss(),
            h[0],
            h[5]
        ));
    }
    let a = report.stage(Stage::A).ok_or("no stage A report")?;
    ensure(
        a.final_train_loss() <= 0.5 * a.initial_train_loss(),
        format!(
            "stage A loss {:.3} -> {:.3} did not halve",
            a.initial_train_loss(),
            a.final_train_loss()
        ),
    )?;
    let f = report.trainable_fraction;
    ensure(
        (0.05..=0.15).contains(&f),
        format!("trainable fraction {f:.4}"),
    )?;
    within_budget(start, Duration::from_secs(300), "training run")?;
    Ok(format!(
        "{}; trainable fraction {:.2}%",
        detail.join("; "),
        100.0 * f
    ))
}

fn trend_reproduction() -> Check {
    let start = Instant::now();
    let seeds = 0..5u64;
    let mut ab = Vec::new();
    let mut b_only = Vec::new();
    let mut ab_zero = Vec::new();
    let mut runs = 0;
    for s in seeds {
        let cfg = RunConfig::default().with_seed(s);
        let data = cfg.prepare().map_err(|e| e.to_string())?;
        let initial = cfg.initial_model(&data).map_err(|e| e.to_string())?;
        let mut b_cfg = cfg.clone();
        b_cfg.train.stages = vec![Stage::B];
        let mut zero_cfg = cfg.clone();
        zero_cfg.train.coefficients = zero_cfg.train.coefficients.with_alphas(0.0, 0.0, 0.0, 0.0);
        for (c, sink) in [
            (&cfg, &mut ab),
            (&b_cfg, &mut b_only),
            (&zero_cfg, &mut ab_zero),
        ] {
            let exp = c
                .train_and_evaluate(&data, initial.clone())
                .map_err(|e| e.to_string())?;
            let m = &exp.eval.metrics;
            for (hi, lo) in [("2B", "2A"), ("2D", "2C"), ("4B", "4A")] {
                ensure(
                    m[hi] >= m[lo],
                    format!("seed {s}: {hi} {:.3} < {lo} {:.3}", m[hi], m[lo]),
                )?;
            }
            sink.push(m.clone());
            runs += 1;
        }
    }
    let mean = |v: &[std::collections::BTreeMap<String, f64>], k: &str| {
        v.iter().map(|m| m[k]).sum::<f64>() / v.len() as f64
    };
    let (ab2a, b2a) = (mean(&ab, "2A"), mean(&b_only, "2A"));
    let (u3a, z3a) = (mean(&ab, "3A"), mean(&ab_zero, "3A"));
    ensure(
        ab2a - b2a >= 0.10,
        format!("2A: AB {ab2a:.3} vs B {b2a:.3}"),
    )?;
    ensure(
        u3a - z3a >= 0.05,
        format!("3A: unity {u3a:.3} vs zero {z3a:.3}"),
    )?;
    within_budget(start, Duration::from_secs(600), "trend runs")?;
    Ok(format!(
        "2A AB {:.1}% vs B {:.1}%; 3A unity {:.1}% vs zero {:.1}%; containments hold on {runs} runs",
        100.0 * ab2a,
        100.0 * b2a,
        100.0 * u3a,
        100.0 * z3a
    ))
}

fn sweep_artifact() -> Check {
    let mut base = RunConfig::default();
    base.train.epochs = 2;
    let seeds = [0u64, 1];
    let rep = run_sweep(&base, &seeds, 1).map_err(|e| e.to_string())?;
    ensure(rep.cells.len() == 8, format!("{} cells", rep.cells.len()))?;
    ensure(rep.seeds == seeds, "seed echo")?;
    ensure(
        rep.config.train.epochs == 2 && rep.config.seed == base.seed,
        "config echo",
    )?;
    let keys = sweep_metric_keys();
    ensure(keys.len() == 12, format!("{} metric columns", keys.len()))?;
    for (i, cell) in rep.cells.iter().enumerate() {
        ensure(
            cell.coefficients == SWEEP_COEFFICIENTS[i / 2],
            format!("row {i} coefficients"),
        )?;
        ensure(
            cell.stages == if i % 2 == 0 { "B" } else { "AB" },
            format!("row {i} schedule"),
        )?;
        ensure(cell.runs.len() == seeds.len(), format!("row {i} runs"))?;
        for k in &keys {
            let vals: Vec<f64> = cell.runs.iter().map(|r| r.metrics[*k]).collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let sd = ((vals[0] - m).powi(2) + (vals[1] - m).powi(2)).sqrt();
            ensure(
                (cell.mean[*k] - m).abs() < 1e-12,
                format!("row {i} {k} mean"),
            )?;
            ensure(
                (cell.std[*k] - sd).abs() < 1e-12,
                format!("row {i} {k} std"),
            )?;
        }
    }
    let csv = rep.to_csv().map_err(|e| e.to_string())?;
    let mut reader = csv::Reader::from_reader(csv.as_bytes());
    let header = reader.headers().map_err(|e| e.to_string())?.clone();
    ensure(
        header.len() == 7 + 2 * keys.len(),
        format!("{} csv columns", header.len()),
    )?;
    for k in &keys {
        ensure(header.iter().any(|h| h == *k), format!("csv lacks {k}"))?;
        ensure(
            header.iter().any(|h| h == format!("{k}_std")),
            format!("csv lacks {k}_std"),
        )?;
    }
    let rows = reader.records().count();
    ensure(rows == 8, format!("{rows} csv rows"))?;
    Ok(format!(
        "8 rows x {} metrics, {} columns, {} seeds per cell",
        keys.len(),
        header.len(),
        seeds.len()
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("counting identities", counting_identities),
        ("gradient verification", gradient_verification),
        ("InfoNCE reduction", infonce_reduction),
        ("operator algebra", operator_algebra),
        ("harness calibration", harness_calibration),
        ("training sanity", training_sanity),
        ("trend reproduction", trend_reproduction),
        ("sweep artifact", sweep_artifact),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("criterion {} {name}: PASS ({secs:.1}s) {d}", i + 1),
            Err(e) => {
                failed += 1;
                println!("criterion {} {name}: FAIL ({secs:.1}s) {e}", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
