//! Coefficient sweep: four `(α_st, α_ct, α_so, α_co, β)` settings crossed
//! with the stage-B-only and two-stage schedules, averaged over seeds.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::dataset::Stage;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::trainer::{csv_string, stages_label, PreparedData};
use crate::zste::METRIC_KEYS;

/// `(α_st, α_ct, α_so, α_co, β)` rows of the grid.
pub const SWEEP_COEFFICIENTS: [[f64; 5]; 4] = [
    [0.0, 0.0, 0.0, 0.0, 1.0],
    [1.0, 0.0, 1.0, 0.0, 1.0],
    [0.0, 1.0, 0.0, 1.0, 1.0],
    [1.0, 1.0, 1.0, 1.0, 1.0],
];

pub const MEAN_KEY: &str = "mean";

/// The eleven task metrics and their mean.
pub fn sweep_metric_keys() -> Vec<&'static str> {
    METRIC_KEYS.iter().copied().chain([MEAN_KEY]).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRun {
    pub seed: u64,
    pub checkpoint_id: String,
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub stages: String,
    pub coefficients: [f64; 5],
    pub runs: Vec<CellRun>,
    pub mean: BTreeMap<String, f64>,
    /// Sample standard deviation across seeds (0 for a single seed).
    pub std: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub config: RunConfig,
    pub seeds: Vec<u64>,
    pub cells: Vec<SweepCell>,
}

/// Cell configuration for one grid point.
pub fn cell_config(base: &RunConfig, coefficients: [f64; 5], stages: &[Stage]) -> RunConfig {
    let mut c = base.clone();
    let [st, ct, so, co, beta] = coefficients;
    c.train.coefficients = c.train.coefficients.with_alphas(st, ct, so, co);
    c.train.coefficients.beta = beta;
    c.train.stages = stages.to_vec();
    c.train.checkpoint = None;
    c
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Run one grid cell for one seed.
pub fn run_cell(cfg: &RunConfig, data: &PreparedData, initial: Model) -> Result<CellRun> {
    let exp = cfg.train_and_evaluate(data, initial)?;
    let mut metrics = exp.eval.metrics.clone();
    let task_mean = METRIC_KEYS
        .iter()
        .filter_map(|k| metrics.get(*k))
        .sum::<f64>()
        / METRIC_KEYS.len() as f64;
    metrics.insert(MEAN_KEY.into(), task_mean);
    Ok(CellRun {
        seed: cfg.seed,
        checkpoint_id: exp.train.checkpoint_id,
        metrics,
    })
}

/// Train and evaluate every cell for every seed on up to `jobs` threads.
pub fn run_sweep(base: &RunConfig, seeds: &[u64], jobs: usize) -> Result<SweepReport> {
    if seeds.is_empty() {
        return Err(Error::Config("sweep needs at least one seed".into()));
    }
    let mut base = base.clone();
    base.eval.tasks = vec![1, 2, 3, 4, 5];
    base.validate()?;
    let schedules = [vec![Stage::B], vec![Stage::A, Stage::B]];
    let grid: Vec<([f64; 5], &Vec<Stage>)> = SWEEP_COEFFICIENTS
        .iter()
        .flat_map(|c| schedules.iter().map(move |s| (*c, s)))
        .collect();

    let mut prepared = Vec::with_capacity(seeds.len());
    for &s in seeds {
        let cfg = base.with_seed(s);
        let data = cfg.prepare()?;
        let model = cfg.initial_model(&data)?;
        prepared.push((cfg, data, model));
    }

    let jobs_list: Vec<(usize, usize)> = (0..grid.len())
        .flat_map(|g| (0..seeds.len()).map(move |s| (g, s)))
        .collect();
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<CellRun>>>> =
        Mutex::new((0..jobs_list.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..jobs.clamp(1, jobs_list.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(&(g, s)) = jobs_list.get(i) else {
                    break;
                };
                let (cfg, data, model) = &prepared[s];
                let (coefs, stages) = grid[g];
                let cell_cfg = cell_config(cfg, coefs, stages);
                let r = run_cell(&cell_cfg, data, model.clone());
                results.lock().expect("results lock")[i] = Some(r);
            });
        }
    });
    let mut results = results.into_inner().expect("results lock").into_iter();

    let mut cells = Vec::with_capacity(grid.len());
    for (coefs, stages) in &grid {
        let runs = (0..seeds.len())
            .map(|_| results.next().flatten().expect("every job ran"))
            .collect::<Result<Vec<_>>>()?;
        let mut mean = BTreeMap::new();
        let mut std = BTreeMap::new();
        for k in sweep_metric_keys() {
            let vals: Vec<f64> = runs.iter().map(|r| r.metrics[k]).collect();
            let (m, s) = mean_std(&vals);
            mean.insert(k.to_string(), m);
            std.insert(k.to_string(), s);
        }
        cells.push(SweepCell {
            stages: stages_label(stages),
            coefficients: *coefs,
            runs,
            mean,
            std,
        });
    }
    Ok(SweepReport {
        config: base,
        seeds: seeds.to_vec(),
        cells,
    })
}

impl SweepReport {
    pub fn cell(&self, stages: &str, coefficients: [f64; 5]) -> Option<&SweepCell> {
        self.cells
            .iter()
            .find(|c| c.stages == stages && c.coefficients == coefficients)
    }

    /// One row per cell: configuration echo, seed count, then each metric's
    /// mean followed by its standard deviation.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header: Vec<String> = [
            "stages", "alpha_st", "alpha_ct", "alpha_so", "alpha_co", "beta", "seeds",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        for k in sweep_metric_keys() {
            header.push(k.to_string());
            header.push(format!("{k}_std"));
        }
        w.write_record(&header)?;
        for c in &self.cells {
            let mut row = vec![c.stages.clone()];
            row.extend(c.coefficients.iter().map(|v| v.to_string()));
            row.push(self.seeds.len().to_string());
            for k in sweep_metric_keys() {
                row.push(c.mean[k].to_string());
                row.push(c.std[k].to_string());
            }
            w.write_record(&row)?;
        }
        csv_string(w)
    }
}
