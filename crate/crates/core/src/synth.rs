//! Synthetic heterogeneous graphs with planted shared and task-specific
//! relation signals.
//!
//! Targets `target` receive neighbors over three relations: `r_shared`
//! (from `a`), `r_task1` (from `b`) and `r_task2` (from `c`). Neighbor
//! features are standard normal. Each task scores a target by the weighted
//! sum, over the relations in its plan, of the mean neighbor feature
//! projected on that relation's hidden unit direction, adds Gaussian noise,
//! and thresholds the score at the quantile that gives the configured
//! positive rate (the median by default).

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{
    write_graph, EdgeList, GraphError, HeteroGraph, Label, NodeRef, NodeTypeInfo, RelationSchema, Target, TaskKind, TaskSpec,
};
use crate::seed::derive_seed;
use crate::tensor::Mat;

pub const RELATIONS: [&str; 3] = ["r_shared", "r_task1", "r_task2"];
const SOURCE_TYPES: [&str; 3] = ["a", "b", "c"];

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic config: {0}")]
    Config(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub num_targets: usize,
    pub neighbors_per_relation: usize,
    pub feature_dim: usize,
    /// Nodes per neighbor type; defaults to `num_targets`.
    #[serde(default)]
    pub pool_size: Option<usize>,
    pub noise_std: f64,
    /// Per task: relation name → weight, weights summing to 1.
    pub signal_plan: Vec<BTreeMap<String, f64>>,
    /// Per task fraction of positive targets; empty means 0.5 each.
    #[serde(default)]
    pub positive_rate: Vec<f64>,
    /// Per task fraction of targets that carry a label; empty means all.
    #[serde(default)]
    pub label_fraction: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthPreset {
    /// Each task reads the shared relation plus its own; task 2 sees only a
    /// fifth of the labels.
    Disjoint,
    /// Both tasks read the same relations with the same weights.
    Shared,
    /// One task only.
    SingleTask,
    /// Disjoint plans with 2% positives on task 2.
    Sparse,
    /// Disjoint plans with 0.2% positives on task 2.
    VerySparse,
}

fn plan(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

impl SynthConfig {
    pub fn preset(p: SynthPreset) -> Self {
        let disjoint = vec![plan(&[("r_shared", 0.5), ("r_task1", 0.5)]), plan(&[("r_shared", 0.5), ("r_task2", 0.5)])];
        let base = SynthConfig {
            num_targets: 1000,
            neighbors_per_relation: 5,
            feature_dim: 8,
            pool_size: None,
            noise_std: 0.0,
            signal_plan: disjoint,
            positive_rate: Vec::new(),
            label_fraction: vec![1.0, 0.2],
            seed: 0,
        };
        match p {
            SynthPreset::Disjoint => base,
            SynthPreset::Shared => SynthConfig {
                signal_plan: vec![plan(&[("r_shared", 0.5), ("r_task1", 0.5)]); 2],
                label_fraction: Vec::new(),
                ..base
            },
            SynthPreset::SingleTask => {
                SynthConfig { signal_plan: vec![plan(&[("r_shared", 0.5), ("r_task1", 0.5)])], label_fraction: Vec::new(), ..base }
            }
            SynthPreset::Sparse => SynthConfig { positive_rate: vec![0.5, 0.02], label_fraction: Vec::new(), ..base },
            SynthPreset::VerySparse => {
                SynthConfig { num_targets: 5000, positive_rate: vec![0.5, 0.002], label_fraction: Vec::new(), ..base }
            }
        }
    }

    pub fn num_tasks(&self) -> usize {
        self.signal_plan.len()
    }

    pub fn pool(&self) -> usize {
        self.pool_size.unwrap_or(self.num_targets)
    }

    fn per_task(&self, values: &[f64], default: f64) -> Vec<f64> {
        if values.is_empty() {
            vec![default; self.num_tasks()]
        } else {
            values.to_vec()
        }
    }

    pub fn check(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Config(m));
        if self.num_tasks() == 0 {
            return bad("signal_plan needs at least one task".into());
        }
        if self.num_targets < 3 || self.feature_dim == 0 || self.neighbors_per_relation == 0 {
            return bad("need ≥3 targets, feature_dim ≥ 1 and neighbors_per_relation ≥ 1".into());
        }
        if self.neighbors_per_relation > self.pool() {
            return bad(format!("{} neighbors per relation from a pool of {}", self.neighbors_per_relation, self.pool()));
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return bad("noise_std must be finite and ≥ 0".into());
        }
        for (t, p) in self.signal_plan.iter().enumerate() {
            if p.is_empty() {
                return bad(format!("task {} has an empty signal plan", t + 1));
            }
            if let Some(r) = p.keys().find(|r| !RELATIONS.contains(&r.as_str())) {
                return bad(format!("task {} plan names unknown relation `{r}`", t + 1));
            }
            let sum: f64 = p.values().sum();
            if p.values().any(|w| !(w.is_finite() && *w >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
                return bad(format!("task {} plan weights must be non-negative and sum to 1 (got {sum})", t + 1));
            }
        }
        for (name, v, max) in [("positive_rate", &self.positive_rate, 1.0 - f64::EPSILON), ("label_fraction", &self.label_fraction, 1.0)] {
            if !v.is_empty() && v.len() != self.num_tasks() {
                return bad(format!("{name} has {} entries for {} tasks", v.len(), self.num_tasks()));
            }
            if v.iter().any(|&x| !(x > 0.0 && x <= max)) {
                return bad(format!("{name} entries must lie in (0, 1)"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskTruth {
    pub task: String,
    pub weights: BTreeMap<String, f64>,
    /// Scores above this value are positive.
    pub threshold: f64,
    pub positive_rate: f64,
    pub label_fraction: f64,
    pub positives: usize,
    pub labeled: usize,
}

/// Everything needed to recompute the labels from the graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Unit hidden direction per relation.
    pub directions: BTreeMap<String, Vec<f64>>,
    pub tasks: Vec<TaskTruth>,
    pub noise_std: f64,
    pub seed: u64,
}

impl GroundTruth {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), SynthError> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("ground truth serializes");
        std::fs::write(path, text + "\n").map_err(|e| SynthError::Io { path: path.display().to_string(), message: e.to_string() })
    }
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Mean neighbor feature of every target over one relation, projected on
/// `direction`.
pub fn projected_means(graph: &HeteroGraph, relation: usize, direction: &[f64]) -> Vec<f64> {
    let rel = &graph.relations[relation];
    let x = &graph.node_features[rel.src_type];
    let n = graph.node_count(rel.dst_type);
    let (mut sum, mut deg) = (vec![0.0; n], vec![0usize; n]);
    let e = &graph.edges[relation];
    for (&s, &d) in e.src.iter().zip(&e.dst) {
        sum[d] += x.row(s).iter().zip(direction).map(|(a, b)| a * b).sum::<f64>();
        deg[d] += 1;
    }
    sum.iter().zip(&deg).map(|(s, &k)| if k == 0 { 0.0 } else { s / k as f64 }).collect()
}

/// Builds the graph and its ground truth. Deterministic in `config.seed`.
pub fn generate(config: &SynthConfig) -> Result<(HeteroGraph, GroundTruth), SynthError> {
    config.check()?;
    let n = config.num_targets;
    let dim = config.feature_dim;
    let pool = config.pool();
    let tasks = config.num_tasks();
    let rng_for = |part: &str| ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &["synth", part]));

    let mut node_types = vec![NodeTypeInfo { name: "target".into(), feature_dim: dim, count: n }];
    let mut feat_rng = rng_for("features");
    let mut node_features = vec![Mat::from_vec(n, dim, normal_vec(&mut feat_rng, n * dim))];
    let mut relations = Vec::new();
    let mut edges = Vec::new();
    let mut edge_rng = rng_for("edges");
    for (r, (name, src)) in RELATIONS.iter().zip(SOURCE_TYPES).enumerate() {
        node_types.push(NodeTypeInfo { name: src.into(), feature_dim: dim, count: pool });
        node_features.push(Mat::from_vec(pool, dim, normal_vec(&mut feat_rng, pool * dim)));
        relations.push(RelationSchema { edge_type_id: r, name: name.to_string(), src_type: r + 1, dst_type: 0, edge_feature_dim: 0 });
        let mut list = EdgeList::default();
        for d in 0..n {
            for s in sample(&mut edge_rng, pool, config.neighbors_per_relation) {
                list.src.push(s);
                list.dst.push(d);
            }
        }
        edges.push(list);
    }
    let mut graph = HeteroGraph {
        node_types,
        node_features,
        relations,
        edges,
        tasks: (0..tasks)
            .map(|t| TaskSpec {
                task_id: t,
                name: format!("task{}", t + 1),
                target_node_type: 0,
                kind: TaskKind::SingleLabel,
                num_classes: 2,
            })
            .collect(),
        targets: vec![Vec::new(); tasks],
    };
    graph.canonicalize();

    let mut dir_rng = rng_for("directions");
    let mut directions = BTreeMap::new();
    let mut projected = Vec::new();
    for (r, name) in RELATIONS.iter().enumerate() {
        let mut u = normal_vec(&mut dir_rng, dim);
        let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        u.iter_mut().for_each(|x| *x /= norm);
        projected.push(projected_means(&graph, r, &u));
        directions.insert(name.to_string(), u);
    }

    let rates = config.per_task(&config.positive_rate, 0.5);
    let fractions = config.per_task(&config.label_fraction, 1.0);
    let mut truths = Vec::new();
    for t in 0..tasks {
        let mut noise_rng = rng_for(&format!("noise{t}"));
        let scores: Vec<f64> = (0..n)
            .map(|i| {
                let s: f64 = config.signal_plan[t].iter().map(|(r, w)| w * projected[relation_index(r)][i]).sum();
                let eps: f64 = noise_rng.sample(StandardNormal);
                s + config.noise_std * eps
            })
            .collect();
        let threshold = quantile_threshold(&scores, rates[t]);
        let labeled = ((fractions[t] * n as f64).round() as usize).clamp(1, n);
        // stratified, so the labeled subset keeps the positive rate
        let (pos, neg): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| scores[i] > threshold);
        let k_pos = ((labeled as f64 * pos.len() as f64 / n as f64).round() as usize).clamp(1.min(pos.len()), pos.len());
        let k_neg = (labeled - k_pos.min(labeled)).min(neg.len());
        let mut lrng = rng_for(&format!("labeled{t}"));
        let mut chosen: Vec<usize> = sample(&mut lrng, pos.len(), k_pos).into_iter().map(|i| pos[i]).collect();
        chosen.extend(sample(&mut lrng, neg.len(), k_neg).into_iter().map(|i| neg[i]));
        chosen.sort_unstable();
        let labeled = chosen.len();
        let targets: Vec<Target> = chosen
            .iter()
            .map(|&i| Target { node: NodeRef { node_type: 0, index: i }, label: Label::Single((scores[i] > threshold) as usize) })
            .collect();
        truths.push(TaskTruth {
            task: graph.tasks[t].name.clone(),
            weights: config.signal_plan[t].clone(),
            threshold,
            positive_rate: rates[t],
            label_fraction: fractions[t],
            positives: targets.iter().filter(|x| x.label.is_positive()).count(),
            labeled,
        });
        graph.targets[t] = targets;
    }
    Ok((graph, GroundTruth { directions, tasks: truths, noise_std: config.noise_std, seed: config.seed }))
}

fn relation_index(name: &str) -> usize {
    RELATIONS.iter().position(|r| *r == name).expect("plan relations are checked")
}

/// Midpoint between the `k`-th and `(k+1)`-th largest score, `k = round(rate·n)`
/// clamped to `1..n`, so exactly `k` distinct-valued scores lie above it.
fn quantile_threshold(scores: &[f64], rate: f64) -> f64 {
    let n = scores.len();
    let k = ((rate * n as f64).round() as usize).clamp(1, n - 1);
    let mut s = scores.to_vec();
    s.sort_by(|a, b| b.total_cmp(a));
    0.5 * (s[k - 1] + s[k])
}

/// Writes the graph directory plus `ground_truth.json`.
pub fn write_synth(graph: &HeteroGraph, truth: &GroundTruth, dir: impl AsRef<Path>) -> Result<(), SynthError> {
    let dir = dir.as_ref();
    write_graph(graph, dir)?;
    truth.save(dir.join("ground_truth.json"))
}
