//! Multi-seed comparison runs: one cell per (arm, seed), each trained with
//! the grid search and scored on the test split.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::graph::{split_targets, HeteroGraph, SplitPart};
use crate::metrics::EvalMetric;
use crate::model::{Model, ModelConfig, ModelSchema, Variant};
use crate::synth::{generate, SynthConfig, SynthError};
use crate::trainer::{evaluate_params, grid_search, TrainConfig, TrainError};

/// Split ratios used for every experiment cell.
pub const SPLIT: (f64, f64, f64) = (0.6, 0.2, 0.2);

/// One configuration under comparison. A single-task arm trains one model
/// per task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Arm {
    pub label: String,
    pub model: ModelConfig,
}

impl Arm {
    pub fn new(label: impl Into<String>, model: ModelConfig) -> Self {
        Self { label: label.into(), model }
    }

    /// One arm per variant, labeled by the variant name.
    pub fn variants(variants: &[Variant], base: &ModelConfig) -> Vec<Arm> {
        variants.iter().map(|&v| Arm::new(v.name(), ModelConfig { variant: v, ..base.clone() })).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub variant: String,
    pub task: String,
    pub seed: u64,
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub auc: Option<f64>,
    pub ap: Option<f64>,
}

impl ResultRow {
    /// Value of `metric`; AUC and AP fall back to macro F1 when undefined.
    pub fn get(&self, metric: EvalMetric) -> f64 {
        match metric {
            EvalMetric::MicroF1 => self.micro_f1,
            EvalMetric::MacroF1 => self.macro_f1,
            EvalMetric::Auc => self.auc.unwrap_or(self.macro_f1),
            EvalMetric::Ap => self.ap.unwrap_or(self.macro_f1),
        }
    }
}

/// Runs every (arm, seed) cell on `threads` worker threads. Each seed fixes
/// the split, the parameter initialization and the sampling stream. Rows
/// come back in (arm, seed, task) order whatever the thread count.
pub fn run_arms(
    graph: &HeteroGraph,
    arms: &[Arm],
    seeds: &[u64],
    train: &TrainConfig,
    threads: usize,
) -> Result<Vec<ResultRow>, TrainError> {
    let cells: Vec<(usize, u64)> = arms.iter().enumerate().flat_map(|(a, _)| seeds.iter().map(move |&s| (a, s))).collect();
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<Vec<ResultRow>, TrainError>>>> = Mutex::new((0..cells.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..threads.clamp(1, cells.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(a, seed)) = cells.get(i) else { break };
                let out = run_cell(graph, &arms[a], seed, train);
                let failed = out.is_err();
                results.lock().expect("no worker panicked")[i] = Some(out);
                if failed {
                    next.store(cells.len(), Ordering::Relaxed);
                }
            });
        }
    });
    let mut rows = Vec::new();
    for r in results.into_inner().expect("no worker panicked").into_iter().flatten() {
        rows.extend(r?);
    }
    Ok(rows)
}

fn run_cell(graph: &HeteroGraph, arm: &Arm, seed: u64, train: &TrainConfig) -> Result<Vec<ResultRow>, TrainError> {
    let split = split_targets(graph, SPLIT, seed)?;
    let cfg = TrainConfig { seed, ..train.clone() };
    let models: Vec<ModelConfig> = if arm.model.variant == Variant::Stl {
        (0..graph.num_tasks()).map(|t| ModelConfig { stl_task: t, seed, ..arm.model.clone() }).collect()
    } else {
        vec![ModelConfig { seed, ..arm.model.clone() }]
    };
    let mut rows = Vec::new();
    for mc in models {
        let model = Model::new(mc, ModelSchema::of(graph))?;
        let grid = grid_search(graph, &split, &model, &cfg)?;
        let report = evaluate_params(&model, &grid.outcome.params, graph, &split, SplitPart::Test, &cfg)?;
        for m in report.tasks {
            rows.push(ResultRow {
                variant: arm.label.clone(),
                task: m.task,
                seed,
                micro_f1: m.micro_f1,
                macro_f1: m.macro_f1,
                auc: m.auc,
                ap: m.ap,
            });
        }
    }
    rows.sort_by(|a, b| a.task.cmp(&b.task));
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub variant: String,
    pub task: String,
    pub seeds: usize,
    pub macro_f1_mean: f64,
    pub macro_f1_std: f64,
    pub micro_f1_mean: f64,
    pub micro_f1_std: f64,
}

/// Sample mean and standard deviation (n − 1 denominator; 0 for one value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Mean ± std per (variant, task), in first-appearance order.
pub fn summarize(rows: &[ResultRow]) -> Vec<SummaryRow> {
    let mut keys: Vec<(String, String)> = Vec::new();
    for r in rows {
        let k = (r.variant.clone(), r.task.clone());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(variant, task)| {
            let sel: Vec<&ResultRow> = rows.iter().filter(|r| r.variant == variant && r.task == task).collect();
            let (ma, ms) = mean_std(&sel.iter().map(|r| r.macro_f1).collect::<Vec<_>>());
            let (mi, mis) = mean_std(&sel.iter().map(|r| r.micro_f1).collect::<Vec<_>>());
            SummaryRow { variant, task, seeds: sel.len(), macro_f1_mean: ma, macro_f1_std: ms, micro_f1_mean: mi, micro_f1_std: mis }
        })
        .collect()
}

/// Mean macro F1 of one (variant, task).
pub fn mean_macro(summary: &[SummaryRow], variant: &str, task: &str) -> Option<f64> {
    summary.iter().find(|s| s.variant == variant && s.task == task).map(|s| s.macro_f1_mean)
}

/// Variants of each task sorted by mean macro F1, best first.
pub fn orderings(summary: &[SummaryRow]) -> Vec<(String, Vec<String>)> {
    let mut tasks: Vec<String> = Vec::new();
    for s in summary {
        if !tasks.contains(&s.task) {
            tasks.push(s.task.clone());
        }
    }
    tasks
        .into_iter()
        .map(|t| {
            let mut v: Vec<&SummaryRow> = summary.iter().filter(|s| s.task == t).collect();
            v.sort_by(|a, b| b.macro_f1_mean.total_cmp(&a.macro_f1_mean));
            (t, v.into_iter().map(|s| s.variant.clone()).collect())
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub rows: Vec<ResultRow>,
    pub summary: Vec<SummaryRow>,
    pub orderings: Vec<(String, Vec<String>)>,
}

impl ExperimentReport {
    pub fn new(rows: Vec<ResultRow>) -> Self {
        let summary = summarize(&rows);
        let orderings = orderings(&summary);
        Self { rows, summary, orderings }
    }

    /// `results.csv` (variant,task,seed,micro_f1,macro_f1,auc,ap) plus
    /// `results.json` with the summary.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<(), TrainError> {
        let dir = dir.as_ref();
        let io = |p: &Path, e: &dyn std::fmt::Display| TrainError::Io { path: p.display().to_string(), message: e.to_string() };
        let csv_path = dir.join("results.csv");
        let mut w = csv::Writer::from_path(&csv_path).map_err(|e| io(&csv_path, &e))?;
        for r in &self.rows {
            w.serialize(r).map_err(|e| io(&csv_path, &e))?;
        }
        w.flush().map_err(|e| io(&csv_path, &e))?;
        let json_path = dir.join("results.json");
        let text = serde_json::to_string_pretty(self).expect("report serializes");
        std::fs::write(&json_path, text + "\n").map_err(|e| io(&json_path, &e))
    }
}

/// Per-epoch training cost of one variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub variant: String,
    /// Models trained: one per task for the single-task variant, else one.
    pub models: usize,
    /// Scalar parameters summed over the models.
    pub params: usize,
    pub epochs: usize,
    /// Median epoch wall time (training steps plus validation), summed over
    /// the models.
    pub seconds_per_epoch: f64,
}

/// Trains each variant for exactly `epochs` epochs with the first grid
/// cell and records the median epoch time.
pub fn bench_time(
    graph: &HeteroGraph,
    variants: &[Variant],
    base: &ModelConfig,
    train: &TrainConfig,
    epochs: usize,
) -> Result<Vec<BenchRow>, TrainError> {
    let split = split_targets(graph, SPLIT, train.seed)?;
    let cfg = TrainConfig { max_epochs: epochs, patience: epochs.max(1), ..train.clone() };
    let (lr, wd) = match (cfg.lr_grid.first(), cfg.wd_grid.first()) {
        (Some(&lr), Some(&wd)) => (lr, wd),
        _ => return Err(TrainError::Config("lr_grid and wd_grid must be nonempty".into())),
    };
    let mut rows = Vec::new();
    for &variant in variants {
        let tasks: Vec<usize> = if variant == Variant::Stl { (0..graph.num_tasks()).collect() } else { vec![0] };
        let mut row = BenchRow { variant: variant.name().into(), models: tasks.len(), params: 0, epochs, seconds_per_epoch: 0.0 };
        for t in tasks {
            let model = Model::new(ModelConfig { variant, stl_task: t, ..base.clone() }, ModelSchema::of(graph))?;
            let outcome = crate::trainer::train(graph, &split, &model, &cfg, lr, wd)?;
            let mut secs: Vec<f64> = outcome.log.iter().map(|r| r.seconds).collect();
            secs.sort_by(f64::total_cmp);
            row.seconds_per_epoch += secs[secs.len() / 2];
            row.params += model.census().total;
        }
        rows.push(row);
    }
    Ok(rows)
}

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("need at least 3 seeds, got {0}")]
    TooFewSeeds(usize),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

/// Generates the synthetic graph and compares `variants` on it.
pub fn interference_experiment(
    config: &SynthConfig,
    variants: &[Variant],
    base: &ModelConfig,
    train: &TrainConfig,
    seeds: &[u64],
    threads: usize,
) -> Result<ExperimentReport, ExperimentError> {
    if seeds.len() < 3 {
        return Err(ExperimentError::TooFewSeeds(seeds.len()));
    }
    let (graph, _) = generate(config)?;
    let rows = run_arms(&graph, &Arm::variants(variants, base), seeds, train, threads)?;
    Ok(ExperimentReport::new(rows))
}

/// Sharing masks `{1}, {1,2}, …, {1..L}` for the progressive curve.
pub fn progressive_masks(num_layers: usize) -> Vec<Vec<bool>> {
    (1..=num_layers).map(|k| (0..num_layers).map(|l| l < k).collect()).collect()
}

/// Progressive-mask struchis arms (`mask_1`, `mask_1_2`, …) followed by the
/// two ablations, single-task and shared-backbone arms.
pub fn ablation_arms(base: &ModelConfig) -> Vec<Arm> {
    let mut arms: Vec<Arm> = progressive_masks(base.num_layers)
        .into_iter()
        .map(|m| {
            let label = format!("mask_{}", (1..=m.iter().filter(|&&x| x).count()).map(|l| l.to_string()).collect::<Vec<_>>().join("_"));
            Arm::new(label, ModelConfig { variant: Variant::Struchis, layer_share_mask: Some(m), ..base.clone() })
        })
        .collect();
    arms.extend(Arm::variants(&[Variant::AblationNoR, Variant::AblationNoRNoL, Variant::Stl, Variant::SharedBackbone], base));
    arms
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::SynthPreset;
    use crate::trainer::Preset;

    #[test]
    fn masks_and_arms() {
        assert_eq!(progressive_masks(3), vec![vec![true, false, false], vec![true, true, false], vec![true, true, true]]);
        let arms = ablation_arms(&ModelConfig::new(Variant::Struchis, 3, 8));
        let labels: Vec<&str> = arms.iter().map(|a| a.label.as_str()).collect();
        assert_eq!(labels, ["mask_1", "mask_1_2", "mask_1_2_3", "ablation_no_r", "ablation_no_r_no_l", "stl", "shared_backbone"]);
    }

    #[test]
    fn summary_statistics() {
        assert_eq!(mean_std(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!((m, s), (2.0, 1.0));
        let row = |v: &str, seed, f| ResultRow { variant: v.into(), task: "t".into(), seed, micro_f1: f, macro_f1: f, auc: None, ap: None };
        let rows = vec![row("a", 0, 0.5), row("a", 1, 0.7), row("b", 0, 0.9), row("b", 1, 0.9)];
        let s = summarize(&rows);
        assert_eq!(s.len(), 2);
        assert!((mean_macro(&s, "a", "t").unwrap() - 0.6).abs() < 1e-12);
        assert_eq!(orderings(&s), vec![("t".to_string(), vec!["b".to_string(), "a".to_string()])]);
    }

    #[test]
    fn cells_are_thread_count_independent() {
        let cfg = SynthConfig { num_targets: 60, ..SynthConfig::preset(SynthPreset::Shared) };
        let (graph, _) = generate(&cfg).unwrap();
        let mut train = Preset::Desk.train_config();
        train.max_epochs = 3;
        train.full_graph = true;
        let base = ModelConfig::new(Variant::Struchis, 2, 4);
        let arms = Arm::variants(&[Variant::Stl, Variant::SharedBackbone], &base);
        let one = run_arms(&graph, &arms, &[0, 1], &train, 1).unwrap();
        let two = run_arms(&graph, &arms, &[0, 1], &train, 2).unwrap();
        assert_eq!(one, two);
        // stl trains one model per task, both tasks reported
        assert_eq!(one.iter().filter(|r| r.variant == "stl").count(), 4);
        let report = ExperimentReport::new(one);
        let dir = tempfile::tempdir().unwrap();
        report.write(dir.path()).unwrap();
        let text = std::fs::read_to_string(dir.path().join("results.csv")).unwrap();
        assert_eq!(text.lines().next(), Some("variant,task,seed,micro_f1,macro_f1,auc,ap"));
        assert_eq!(text.lines().count(), 9);
    }

    #[test]
    fn experiment_needs_three_seeds() {
        let cfg = SynthConfig::preset(SynthPreset::Shared);
        let train = Preset::Desk.train_config();
        let err = interference_experiment(&cfg, &[Variant::Stl], &ModelConfig::new(Variant::Stl, 2, 4), &train, &[0, 1], 1);
        assert!(matches!(err, Err(ExperimentError::TooFewSeeds(2))));
    }

    #[test]
    fn bench_rows_count_models_and_params() {
        let cfg = SynthConfig { num_targets: 60, ..SynthConfig::preset(SynthPreset::Disjoint) };
        let (graph, _) = generate(&cfg).unwrap();
        let mut train = Preset::Desk.train_config();
        train.full_graph = true;
        let base = ModelConfig::new(Variant::Struchis, 2, 4);
        let rows = bench_time(&graph, &[Variant::Struchis, Variant::Stl], &base, &train, 2).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!((rows[0].models, rows[1].models), (1, 2));
        assert!(rows.iter().all(|r| r.epochs == 2 && r.seconds_per_epoch > 0.0 && r.params > 0));
        let m = Model::new(base, ModelSchema::of(&graph)).unwrap();
        assert_eq!(rows[0].params, m.census().total);
    }

    #[test]
    fn result_row_metric_fallback() {
        let r = ResultRow { variant: "v".into(), task: "t".into(), seed: 0, micro_f1: 0.9, macro_f1: 0.8, auc: None, ap: Some(0.7) };
        assert_eq!(r.get(EvalMetric::Auc), 0.8);
        assert_eq!(r.get(EvalMetric::Ap), 0.7);
        assert_eq!(r.get(EvalMetric::MicroF1), 0.9);
    }
}
