//! Training loop: per-epoch subgraph sampling, validation-based early
//! stopping, and grid search over learning rate and weight decay.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::autodiff::Tape;
use crate::graph::{induce_subgraph, sample_targets, GraphError, HeteroGraph, SplitAssignment, SplitPart};
use crate::metrics::{evaluate_task, EvalMetric, MetricsReport};
use crate::model::{forward, loss, task_labels, Batch, Model, ModelError};
use crate::optim::{AdamConfig, AdamState, OptimError};
use crate::params::ParamStore;
use crate::seed::derive_seed;
use crate::tensor::Real;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid train config: {0}")]
    Config(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error("non-finite training loss at epoch {epoch} (lr {lr}, wd {wd})")]
    NonFinite { epoch: usize, lr: f64, wd: f64 },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

/// Which validation score drives model selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selection {
    /// Mean over the tasks the model predicts.
    Mean,
    Task(usize),
}

impl Serialize for Selection {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Selection::Mean => s.serialize_str("mean"),
            Selection::Task(t) => s.serialize_u64(*t as u64),
        }
    }
}

impl<'de> Deserialize<'de> for Selection {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Id(usize),
            Name(String),
        }
        match Raw::deserialize(d)? {
            Raw::Id(t) => Ok(Selection::Task(t)),
            Raw::Name(s) if s == "mean" => Ok(Selection::Mean),
            Raw::Name(s) => Err(serde::de::Error::custom(format!("selection_task must be a task id or \"mean\", got \"{s}\""))),
        }
    }
}

/// Neighbors kept per `(node, relation)` at each hop: one list for every
/// node type, or a list per node type name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum HopBudgets {
    Uniform(Vec<usize>),
    PerType(BTreeMap<String, Vec<usize>>),
}

impl HopBudgets {
    /// `budgets[node_type][hop]` for `graph`, each list `hops` long.
    pub fn resolve(&self, graph: &HeteroGraph, hops: usize) -> Result<Vec<Vec<usize>>, TrainError> {
        let out: Vec<Vec<usize>> = match self {
            HopBudgets::Uniform(b) => vec![b.clone(); graph.num_node_types()],
            HopBudgets::PerType(m) => {
                if let Some(extra) = m.keys().find(|k| graph.node_type_id(k).is_none()) {
                    return Err(TrainError::Config(format!("hop_budgets names unknown node type `{extra}`")));
                }
                graph
                    .node_types
                    .iter()
                    .map(|t| {
                        m.get(&t.name)
                            .cloned()
                            .ok_or_else(|| TrainError::Config(format!("hop_budgets has no entry for node type `{}`", t.name)))
                    })
                    .collect::<Result<_, _>>()?
            }
        };
        if let Some(b) = out.iter().find(|b| b.len() != hops) {
            return Err(TrainError::Config(format!("hop_budgets lists have {} entries, need one per layer ({hops})", b.len())));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    Single,
    Double,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub max_epochs: usize,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
    pub lr_grid: Vec<f64>,
    pub wd_grid: Vec<f64>,
    /// Targets drawn per task and step.
    pub batch_targets: usize,
    pub pos_ratio: f64,
    pub hop_budgets: HopBudgets,
    pub eval_metric: EvalMetric,
    pub selection_task: Selection,
    #[serde(default)]
    pub seed: u64,
    /// Train on every training target of the whole graph instead of sampled
    /// subgraphs; validation then also runs on the whole graph.
    #[serde(default)]
    pub full_graph: bool,
    #[serde(default = "one")]
    pub steps_per_epoch: usize,
    #[serde(default)]
    pub precision: Precision,
}

/// Learning-rate and weight-decay grid shipped with every preset.
pub const DEFAULT_LR_GRID: [f64; 3] = [1e-2, 1e-3, 1e-4];
pub const DEFAULT_WD_GRID: [f64; 3] = [0.0, 1e-4, 1e-3];

impl TrainConfig {
    pub fn check(&self, model: &Model) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.patience == 0 {
            return bad("patience must be at least 1".into());
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1".into());
        }
        if self.steps_per_epoch == 0 {
            return bad("steps_per_epoch must be at least 1".into());
        }
        if self.lr_grid.is_empty() || self.wd_grid.is_empty() {
            return bad("lr_grid and wd_grid must be nonempty".into());
        }
        if self.lr_grid.iter().any(|x| !(x.is_finite() && *x > 0.0)) || self.wd_grid.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return bad("learning rates must be positive and weight decays non-negative".into());
        }
        if !self.full_graph && (self.batch_targets == 0 || !(self.pos_ratio > 0.0 && self.pos_ratio < 1.0)) {
            return bad("sampled training needs batch_targets ≥ 1 and pos_ratio in (0, 1)".into());
        }
        if let Selection::Task(t) = self.selection_task {
            if !model.active_tasks().contains(&t) {
                return bad(format!("selection_task {t} is not predicted by this model"));
            }
        }
        Ok(())
    }
}

/// Named settings: model depth and width plus a train config.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Academic graphs of DBLP/Aminer size: L=3, d=64, full-graph input.
    Academic,
    /// Large logistics-shaped graphs: L=4, d=128, sampled subgraphs.
    Logistics,
    /// Small synthetic benchmarks that train in seconds.
    Desk,
}

impl Preset {
    /// `(num_layers, hidden_dim)`.
    pub fn model_dims(self) -> (usize, usize) {
        match self {
            Preset::Academic => (3, 64),
            Preset::Logistics => (4, 128),
            Preset::Desk => (2, 16),
        }
    }

    pub fn train_config(self) -> TrainConfig {
        let (layers, _) = self.model_dims();
        let base = TrainConfig {
            max_epochs: 500,
            patience: 40,
            lr_grid: DEFAULT_LR_GRID.to_vec(),
            wd_grid: DEFAULT_WD_GRID.to_vec(),
            batch_targets: 256,
            pos_ratio: 0.5,
            hop_budgets: HopBudgets::Uniform(vec![10; layers]),
            eval_metric: EvalMetric::MacroF1,
            selection_task: Selection::Mean,
            seed: 0,
            full_graph: false,
            steps_per_epoch: 1,
            precision: Precision::Single,
        };
        match self {
            Preset::Academic => TrainConfig { full_graph: true, ..base },
            Preset::Logistics => TrainConfig { eval_metric: EvalMetric::Auc, ..base },
            Preset::Desk => TrainConfig {
                max_epochs: 150,
                patience: 20,
                lr_grid: vec![1e-2],
                wd_grid: vec![0.0],
                batch_targets: 64,
                hop_budgets: HopBudgets::Uniform(vec![5; layers]),
                steps_per_epoch: 4,
                ..base
            },
        }
    }
}

/// Early-stopping bookkeeping. `epochs_since_best = epoch − best_epoch`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrainState {
    pub epoch: usize,
    pub best_val_score: f64,
    /// 0 until a finite score arrives.
    pub best_epoch: usize,
    pub epochs_since_best: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Observation {
    pub improved: bool,
    pub stop: bool,
}

impl Default for TrainState {
    fn default() -> Self {
        Self { epoch: 0, best_val_score: f64::NEG_INFINITY, best_epoch: 0, epochs_since_best: 0 }
    }
}

impl TrainState {
    /// Records the validation score of the next epoch. Only a strictly
    /// higher score counts as an improvement, so ties keep the earliest
    /// epoch; NaN never improves.
    pub fn observe(&mut self, score: f64, patience: usize, max_epochs: usize) -> Observation {
        self.epoch += 1;
        let improved = score > self.best_val_score;
        if improved {
            self.best_val_score = score;
            self.best_epoch = self.epoch;
        }
        self.epochs_since_best = self.epoch - self.best_epoch;
        Observation { improved, stop: self.epochs_since_best >= patience || self.epoch >= max_epochs }
    }
}

/// Replays `scores` through [`TrainState`]: `(stop epoch, best epoch)`.
pub fn early_stop_trace(scores: &[f64], patience: usize, max_epochs: usize) -> (usize, usize) {
    let mut s = TrainState::default();
    for &x in scores.iter().take(max_epochs) {
        if s.observe(x, patience, max_epochs).stop {
            break;
        }
    }
    (s.epoch, s.best_epoch)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val: MetricsReport,
    pub val_score: f64,
    pub lr: f64,
    pub wd: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters after the best validation epoch, widened to f64.
    pub params: ParamStore<f64>,
    pub log: Vec<EpochRecord>,
    pub state: TrainState,
    pub lr: f64,
    pub wd: f64,
}

impl TrainOutcome {
    pub fn best_record(&self) -> Option<&EpochRecord> {
        self.log.iter().find(|r| r.epoch == self.state.best_epoch)
    }
}

pub fn write_log(records: &[EpochRecord], path: impl AsRef<Path>) -> Result<(), TrainError> {
    let path = path.as_ref();
    let io = |e: std::io::Error| TrainError::Io { path: path.display().to_string(), message: e.to_string() };
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    for r in records {
        let line = serde_json::to_string(r).expect("records serialize");
        writeln!(f, "{line}").map_err(io)?;
    }
    f.flush().map_err(io)
}

/// Selection score of a validation report.
pub fn selection_score(report: &MetricsReport, model: &Model, metric: EvalMetric, selection: Selection) -> f64 {
    let active = model.active_tasks();
    let score_of = |t: usize| {
        let name = &model.schema.tasks[t].name;
        report.tasks.iter().find(|m| &m.task == name).map_or(f64::NAN, |m| m.get(metric))
    };
    match selection {
        Selection::Task(t) => score_of(t),
        Selection::Mean => active.iter().map(|&t| score_of(t)).sum::<f64>() / active.len() as f64,
    }
}

/// Scores one split part. With `budgets` the targets are evaluated on a
/// subgraph expanded under those budgets, otherwise on the whole graph.
pub fn evaluate<F: Real>(
    model: &Model,
    params: &ParamStore<F>,
    graph: &HeteroGraph,
    split: &SplitAssignment,
    part: SplitPart,
    budgets: Option<&[Vec<usize>]>,
    seed: u64,
) -> Result<MetricsReport, TrainError> {
    let active = model.active_tasks();
    let mut entries = vec![Vec::new(); model.num_tasks()];
    for &t in &active {
        entries[t] = split.task(t).part(part).to_vec();
    }
    let (sub, entries) = match budgets {
        Some(b) => {
            let s = induce_subgraph(graph, &entries, b, derive_seed(seed, &["eval"]))?;
            let local: Vec<Vec<usize>> = s.graph.targets.iter().map(|ts| (0..ts.len()).collect()).collect();
            (Some(s.graph), local)
        }
        None => (None, entries),
    };
    let g = sub.as_ref().unwrap_or(graph);
    let batch = Batch::<F>::new(g);
    let mut nodes = Vec::with_capacity(entries.len());
    let mut labels = Vec::with_capacity(entries.len());
    for (t, e) in entries.iter().enumerate() {
        let (n, l) = task_labels(g, t, e);
        nodes.push(n);
        labels.push(l);
    }
    let mut tape = Tape::new();
    let out = forward(&mut tape, model, params, &batch, &nodes, false)?;
    let mut report = MetricsReport::default();
    for &t in &active {
        if let Some(z) = out.logits[t] {
            report.tasks.push(evaluate_task(&model.schema.tasks[t], tape.value(z), &labels[t]));
        }
    }
    Ok(report)
}

/// Scores stored parameters the way training validates: in the configured
/// precision, on the whole graph in full-graph mode and otherwise on a
/// subgraph under four times the training budgets.
pub fn evaluate_params(
    model: &Model,
    params: &ParamStore<f64>,
    graph: &HeteroGraph,
    split: &SplitAssignment,
    part: SplitPart,
    cfg: &TrainConfig,
) -> Result<MetricsReport, TrainError> {
    let budgets = eval_budgets(cfg, graph, model)?;
    let b = budgets.as_deref();
    match cfg.precision {
        Precision::Single => evaluate(model, &params.cast::<f32>(), graph, split, part, b, cfg.seed),
        Precision::Double => evaluate(model, params, graph, split, part, b, cfg.seed),
    }
}

fn eval_budgets(cfg: &TrainConfig, graph: &HeteroGraph, model: &Model) -> Result<Option<Vec<Vec<usize>>>, TrainError> {
    if cfg.full_graph {
        return Ok(None);
    }
    let b = model_budgets(cfg, graph, model)?;
    Ok(Some(b.iter().map(|h| h.iter().map(|x| x * 4).collect()).collect()))
}

/// Trains one `(lr, wd)` cell. All tasks the model predicts are trained
/// jointly with one optimizer step per sampled subgraph.
pub fn train(
    graph: &HeteroGraph,
    split: &SplitAssignment,
    model: &Model,
    cfg: &TrainConfig,
    lr: f64,
    wd: f64,
) -> Result<TrainOutcome, TrainError> {
    match cfg.precision {
        Precision::Single => run::<f32>(graph, split, model, cfg, lr, wd),
        Precision::Double => run::<f64>(graph, split, model, cfg, lr, wd),
    }
}

fn run<F: Real>(
    graph: &HeteroGraph,
    split: &SplitAssignment,
    model: &Model,
    cfg: &TrainConfig,
    lr: f64,
    wd: f64,
) -> Result<TrainOutcome, TrainError> {
    cfg.check(model)?;
    model.schema.check(graph)?;
    let active = model.active_tasks();
    for &t in &active {
        if split.task(t).val.is_empty() {
            return Err(TrainError::Config(format!("task `{}` has an empty validation set", graph.tasks[t].name)));
        }
    }
    let budgets = model_budgets(cfg, graph, model)?;
    let val_budgets = eval_budgets(cfg, graph, model)?;

    let mut params = model.init_params::<F>();
    let mut adam = AdamState::new(&params, AdamConfig { learning_rate: lr, weight_decay: wd, ..AdamConfig::default() });
    let mut state = TrainState::default();
    let mut best = params.clone();
    let mut log = Vec::new();

    let full = cfg.full_graph.then(|| {
        let batch = Batch::<F>::new(graph);
        let mut nodes = vec![Vec::new(); model.num_tasks()];
        let mut labels = vec![Vec::new(); model.num_tasks()];
        for &t in &active {
            let (n, l) = task_labels(graph, t, &split.task(t).train);
            nodes[t] = n;
            labels[t] = l;
        }
        (batch, nodes, labels)
    });

    loop {
        let epoch = state.epoch + 1;
        let started = Instant::now();
        let mut total = 0.0;
        for step in 0..cfg.steps_per_epoch {
            let step_seed = derive_seed(cfg.seed, &["epoch", &epoch.to_string(), &step.to_string()]);
            let mut tape = Tape::new();
            let l = match &full {
                Some((batch, nodes, labels)) => {
                    let out = forward(&mut tape, model, &params, batch, nodes, false)?;
                    loss(&mut tape, model, &out.logits, labels)?
                }
                None => {
                    let mut seeds = vec![Vec::new(); model.num_tasks()];
                    for &t in &active {
                        seeds[t] = sample_targets(graph, t, split, cfg.batch_targets, cfg.pos_ratio, step_seed)?;
                    }
                    let sub = induce_subgraph(graph, &seeds, &budgets, step_seed)?.graph;
                    let batch = Batch::<F>::new(&sub);
                    let mut nodes = Vec::new();
                    let mut labels = Vec::new();
                    for t in 0..model.num_tasks() {
                        let (n, y) = task_labels(&sub, t, &(0..sub.targets[t].len()).collect::<Vec<_>>());
                        nodes.push(n);
                        labels.push(y);
                    }
                    let out = forward(&mut tape, model, &params, &batch, &nodes, false)?;
                    loss(&mut tape, model, &out.logits, &labels)?
                }
            };
            let value = tape.value(l).data()[0].to_f64().unwrap_or(f64::NAN);
            if !value.is_finite() {
                return Err(TrainError::NonFinite { epoch, lr, wd });
            }
            total += value;
            tape.backward(l);
            adam.step(&mut params, &tape.param_grads()).map_err(|e| match e {
                OptimError::NonFiniteGradient(_) => TrainError::NonFinite { epoch, lr, wd },
                other => TrainError::Optim(other),
            })?;
        }

        let val = evaluate(model, &params, graph, split, SplitPart::Val, val_budgets.as_deref(), cfg.seed)?;
        let score = selection_score(&val, model, cfg.eval_metric, cfg.selection_task);
        let obs = state.observe(score, cfg.patience, cfg.max_epochs);
        if obs.improved {
            best = params.clone();
        }
        log.push(EpochRecord {
            epoch,
            train_loss: total / cfg.steps_per_epoch as f64,
            val,
            val_score: score,
            lr,
            wd,
            seconds: started.elapsed().as_secs_f64(),
        });
        if obs.stop {
            break;
        }
    }
    Ok(TrainOutcome { params: best.cast(), log, state, lr, wd })
}

fn model_budgets(cfg: &TrainConfig, graph: &HeteroGraph, model: &Model) -> Result<Vec<Vec<usize>>, TrainError> {
    cfg.hop_budgets.resolve(graph, model.config.num_layers)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub lr: f64,
    pub wd: f64,
    pub best_val_score: f64,
    pub best_epoch: usize,
    pub epochs: usize,
}

#[derive(Debug, Clone)]
pub struct GridResult {
    pub cells: Vec<GridCell>,
    /// Index of the selected cell.
    pub best: usize,
    pub outcome: TrainOutcome,
}

/// Index of the best `(lr, wd, score)` cell: highest score, ties broken by
/// the smaller learning rate, then the smaller weight decay. NaN scores
/// rank below everything.
pub fn select_cell(cells: &[(f64, f64, f64)]) -> Option<usize> {
    let key = |s: f64| if s.is_nan() { f64::NEG_INFINITY } else { s };
    (0..cells.len()).reduce(|a, b| {
        let (la, wa, sa) = cells[a];
        let (lb, wb, sb) = cells[b];
        let better = key(sb) > key(sa) || (key(sb) == key(sa) && (lb < la || (lb == la && wb < wa)));
        if better {
            b
        } else {
            a
        }
    })
}

/// Trains every `(lr, wd)` cell and keeps the best by validation score.
pub fn grid_search(graph: &HeteroGraph, split: &SplitAssignment, model: &Model, cfg: &TrainConfig) -> Result<GridResult, TrainError> {
    cfg.check(model)?;
    let mut cells = Vec::new();
    let mut outcomes = Vec::new();
    for &lr in &cfg.lr_grid {
        for &wd in &cfg.wd_grid {
            let o = train(graph, split, model, cfg, lr, wd)?;
            cells.push(GridCell { lr, wd, best_val_score: o.state.best_val_score, best_epoch: o.state.best_epoch, epochs: o.state.epoch });
            outcomes.push(o);
        }
    }
    let keys: Vec<_> = cells.iter().map(|c| (c.lr, c.wd, c.best_val_score)).collect();
    let best = select_cell(&keys).expect("grid is nonempty");
    let outcome = outcomes.swap_remove(best);
    Ok(GridResult { cells, best, outcome })
}

#[cfg(test)]
mod tests;
