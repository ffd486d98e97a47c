use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use temporal_align::config::{output_root, RunConfig};
use temporal_align::error::{Error, Result};
use temporal_align::export::export_dataset;
use temporal_align::gradient::{run_grad_check, GradCheckOptions};
use temporal_align::model::{Embedder, Model};
use temporal_align::sweep::run_sweep;
use temporal_align::trainer::{parse_stages, run_two_stage};
use temporal_align::zste::{self, parse_tasks, HashedRandomEmbedder, OracleEmbedder, ReportMeta};

const RUN_CONFIG_FILE: &str = "run_config.json";
const MODEL_FILE: &str = "model.json";

#[derive(Parser)]
#[command(
    name = "temporal-align",
    version,
    about = "Temporal contrastive post-training on a synthetic audio-text corpus"
)]
struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output root (otherwise $TEMPORAL_ALIGN_OUTPUT, then the config's output_dir).
    #[arg(long, global = true)]
    output: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Overrides {
    /// Global seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of sound classes.
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    block_size: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Write clips, composite WAVs, the manifest and the vocabulary.
    GenData {
        #[command(flatten)]
        overrides: Overrides,
        /// Destination directory (default: <output>/data).
        #[arg(long)]
        out: Option<PathBuf>,
        /// List composites in the manifest without rendering their audio.
        #[arg(long)]
        manifest_only: bool,
    },
    /// Train the projection heads and save a checkpoint.
    Train {
        #[command(flatten)]
        overrides: Overrides,
        /// AB for both stages, B for the ablation.
        #[arg(long, default_value = "AB")]
        stages: String,
        /// Checkpoint directory (default: <output>/ckpt).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score the zero-shot temporal tasks.
    Eval {
        /// Checkpoint file or directory; required for the trained encoder.
        #[arg(long)]
        ckpt: Option<PathBuf>,
        /// Comma-separated task ids.
        #[arg(long, default_value = "1,2,3,4,5")]
        tasks: String,
        /// Seed for distractor sampling.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value = "trained")]
        encoder: EncoderChoice,
        /// JSON report path; a CSV is written next to it.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Compare analytic and finite-difference gradients.
    GradCheck {
        #[arg(long, default_value_t = 4)]
        n: usize,
        #[arg(long, default_value_t = 8)]
        dim: usize,
        #[arg(long, default_value_t = 1e-6)]
        step: f64,
        #[arg(long, default_value_t = 1e-5)]
        tolerance: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Scale the analytic gradient so the check fails.
        #[arg(long, hide = true)]
        corrupt: bool,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Train and evaluate the coefficient grid over several seeds.
    Sweep {
        #[command(flatten)]
        overrides: Overrides,
        /// Comma-separated seeds.
        #[arg(long, default_value = "0,1,2,3,4")]
        seeds: String,
        /// Worker threads (default: available cores).
        #[arg(long)]
        jobs: Option<usize>,
        /// Destination directory (default: <output>/sweep).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum EncoderChoice {
    Trained,
    Oracle,
    Random,
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn apply(mut cfg: RunConfig, o: &Overrides) -> Result<RunConfig> {
    if let Some(s) = o.seed {
        cfg.seed = s;
    }
    if let Some(k) = o.classes {
        cfg.corpus.num_classes = k;
    }
    if let Some(e) = o.epochs {
        cfg.train.epochs = e;
    }
    if let Some(lr) = o.lr {
        cfg.train.learning_rate = lr;
    }
    if let Some(b) = o.block_size {
        cfg.train.block_size = b;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.into(),
            source: e,
        })?;
    }
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.into(),
        source: e,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

fn checkpoint_file(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join(MODEL_FILE)
    } else {
        p.to_path_buf()
    }
}

fn run(cli: Cli) -> Result<()> {
    let base = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::GenData {
            overrides,
            out,
            manifest_only,
        } => {
            let cfg = apply(base, &overrides)?;
            let dir = out.unwrap_or_else(|| output_root(cli.output.as_deref(), &cfg).join("data"));
            let data = cfg.prepare()?;
            let summary = export_dataset(&data, &dir, !manifest_only)?;
            println!("{}", serde_json::to_string(&summary)?);
            eprintln!("wrote {}", dir.display());
        }
        Command::Train {
            overrides,
            stages,
            out,
        } => {
            let mut cfg = apply(base, &overrides)?;
            cfg.train.stages = parse_stages(&stages)?;
            let dir = out.unwrap_or_else(|| output_root(cli.output.as_deref(), &cfg).join("ckpt"));
            let data = cfg.prepare()?;
            let initial = cfg.initial_model(&data)?;
            let mut train = cfg.resolved().train;
            train.checkpoint = Some(dir.join(MODEL_FILE));
            let (_, report) = run_two_stage(&train, &data, initial)?;
            write_json(&dir.join(RUN_CONFIG_FILE), &cfg)?;
            write_json(&dir.join("train_report.json"), &report)?;
            write(&dir.join("loss_curves.csv"), &report.to_csv()?)?;
            for s in &report.stages {
                eprintln!(
                    "stage {:?}: train loss {:.4} -> {:.4}",
                    s.stage,
                    s.initial_train_loss(),
                    s.final_train_loss()
                );
            }
            println!("{}", report.checkpoint_id);
        }
        Command::Eval {
            ckpt,
            tasks,
            seed,
            encoder,
            report,
        } => {
            let ckpt = ckpt.map(|p| checkpoint_file(&p));
            // The checkpoint directory carries the config it was trained with.
            let cfg = match (&cli.config, &ckpt) {
                (None, Some(p)) => {
                    let sibling = p.parent().unwrap_or(Path::new(".")).join(RUN_CONFIG_FILE);
                    if sibling.exists() {
                        RunConfig::load(&sibling)?
                    } else {
                        base
                    }
                }
                _ => base,
            };
            let data = cfg.prepare()?;
            let mut opts = cfg.resolved().eval;
            opts.tasks = parse_tasks(&tasks)?;
            if let Some(s) = seed {
                opts.seed = s;
            }
            opts.validate()?;
            let trained;
            let oracle;
            let random;
            let (model, name, id): (&dyn Embedder, &str, Option<String>) = match encoder {
                EncoderChoice::Trained => {
                    let p = ckpt.ok_or_else(|| {
                        Error::Config("--ckpt is required for the trained encoder".into())
                    })?;
                    trained = Model::load(&p)?;
                    let id = trained.id();
                    (&trained, "trained", Some(id))
                }
                EncoderChoice::Oracle => {
                    oracle = OracleEmbedder::new(data.corpus.classes.clone());
                    (&oracle, "oracle", None)
                }
                EncoderChoice::Random => {
                    random = HashedRandomEmbedder {
                        dim: cfg.encoder.embed_dim,
                        seed: opts.seed,
                        gamma: cfg.train.coefficients.gamma,
                    };
                    (&random, "random", None)
                }
            };
            let meta = ReportMeta {
                checkpoint_id: id,
                encoder: name.into(),
                num_classes: data.corpus.num_classes(),
                config_fingerprint: cfg.fingerprint(),
            };
            let rep = zste::evaluate(model, &data.corpus, &data.split, &opts, meta)?;
            let path = report.unwrap_or_else(|| {
                output_root(cli.output.as_deref(), &cfg)
                    .join("eval")
                    .join("report.json")
            });
            write(&path, &(rep.to_json()? + "\n"))?;
            write(&path.with_extension("csv"), &rep.to_csv()?)?;
            for (k, v) in &rep.metrics {
                println!("{k}\t{v:.4}");
            }
        }
        Command::GradCheck {
            n,
            dim,
            step,
            tolerance,
            seed,
            corrupt,
            report,
        } => {
            let opts = GradCheckOptions {
                n,
                base_dim: dim,
                embed_dim: dim,
                step,
                tolerance,
                seed,
                corrupt_analytic: corrupt,
                ..GradCheckOptions::default()
            };
            let r = run_grad_check(&opts)?;
            for c in &r.cases {
                println!(
                    "stage {:?} alphas {:?} a5 {} coords {} max_rel_err {:.3e} {}",
                    c.stage,
                    c.alphas,
                    c.appendix_a5_form,
                    c.coords_checked,
                    c.max_relative_error,
                    if c.passed { "ok" } else { "FAIL" }
                );
            }
            let worst = r
                .cases
                .iter()
                .map(|c| c.max_relative_error)
                .fold(0.0, f64::max);
            println!("max relative error: {worst:.3e}");
            if let Some(p) = report {
                write_json(&p, &r)?;
            }
            if !r.passed() {
                return Err(Error::Numeric(format!(
                    "gradient check failed: {worst:.3e} exceeds {tolerance:.1e}"
                )));
            }
        }
        Command::Sweep {
            overrides,
            seeds,
            jobs,
            out,
        } => {
            let cfg = apply(base, &overrides)?;
            let seeds = seeds
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse::<u64>()
                        .map_err(|_| Error::Config(format!("bad seed {s:?}")))
                })
                .collect::<Result<Vec<_>>>()?;
            let jobs =
                jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
            let dir = out.unwrap_or_else(|| output_root(cli.output.as_deref(), &cfg).join("sweep"));
            let rep = run_sweep(&cfg, &seeds, jobs)?;
            write_json(&dir.join("sweep.json"), &rep)?;
            let table = rep.to_csv()?;
            write(&dir.join("sweep.csv"), &table)?;
            print!("{table}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
