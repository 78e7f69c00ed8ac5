//! Evaluation metrics, prediction decoding and attention-importance export.

use std::cmp::Ordering;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{Label, TaskKind, TaskSpec};
use crate::model::{AttentionTrace, TraceKind};
use crate::tensor::{Mat, Real};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("metric undefined: only one class present among {0} labels")]
    SingleClass(usize),
    #[error("metric undefined: no positive labels")]
    NoPositives,
    #[error("{scores} scores for {labels} labels")]
    Length { scores: usize, labels: usize },
    #[error("non-finite score at position {0}")]
    NonFinite(usize),
    #[error("trace has no alpha or beta records")]
    EmptyTrace,
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMetric {
    MicroF1,
    MacroF1,
    Auc,
    Ap,
}

/// Predicted labels from one row of logits per target. Single-label tasks
/// take the argmax (ties to the lowest class), multi-label tasks every class
/// with `sigmoid(logit) ≥ 0.5`, i.e. `logit ≥ 0`.
pub fn decode<F: Real>(logits: &Mat<F>, task: &TaskSpec) -> Vec<Label> {
    (0..logits.rows())
        .map(|i| {
            let row = logits.row(i);
            match task.kind {
                TaskKind::SingleLabel => {
                    let mut best = 0;
                    for (c, &z) in row.iter().enumerate() {
                        if z > row[best] {
                            best = c;
                        }
                    }
                    Label::Single(best)
                }
                TaskKind::MultiLabel => Label::Multi((0..row.len()).filter(|&c| row[c] >= F::zero()).collect()),
            }
        })
        .collect()
}

fn classes_of(label: &Label) -> &[usize] {
    match label {
        Label::Single(c) => std::slice::from_ref(c),
        Label::Multi(s) => s,
    }
}

/// `(micro, macro)` F1 over classes `0..num_classes`. Micro pools TP/FP/FN
/// over all classes; macro is the unweighted mean of per-class F1, where a
/// class with no true and no predicted members scores 0.
pub fn f1_scores(pred: &[Label], truth: &[Label], num_classes: usize) -> (f64, f64) {
    let mut tp = vec![0usize; num_classes];
    let mut fp = vec![0usize; num_classes];
    let mut fn_ = vec![0usize; num_classes];
    for (p, t) in pred.iter().zip(truth) {
        let (p, t) = (classes_of(p), classes_of(t));
        for c in 0..num_classes {
            match (p.contains(&c), t.contains(&c)) {
                (true, true) => tp[c] += 1,
                (true, false) => fp[c] += 1,
                (false, true) => fn_[c] += 1,
                (false, false) => {}
            }
        }
    }
    let f1 = |tp: usize, fp: usize, fn_: usize| {
        let denom = 2 * tp + fp + fn_;
        if denom == 0 {
            0.0
        } else {
            2.0 * tp as f64 / denom as f64
        }
    };
    let micro = f1(tp.iter().sum(), fp.iter().sum(), fn_.iter().sum());
    let macro_ = if num_classes == 0 {
        0.0
    } else {
        (0..num_classes).map(|c| f1(tp[c], fp[c], fn_[c])).sum::<f64>() / num_classes as f64
    };
    (micro, macro_)
}

fn check_scores(scores: &[f64], labels: &[bool]) -> Result<(), MetricError> {
    if scores.len() != labels.len() {
        return Err(MetricError::Length { scores: scores.len(), labels: labels.len() });
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(MetricError::NonFinite(i));
    }
    Ok(())
}

/// Area under the ROC curve as the Mann–Whitney statistic: the fraction of
/// (positive, negative) pairs ranked correctly, ties counting one half.
/// Computed from tie-averaged ranks in `O(n log n)`.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64, MetricError> {
    check_scores(scores, labels)?;
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricError::SingleClass(labels.len()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the rank sum keeps tie-averaged ranks integral.
    let mut rank_sum2 = 0u64;
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end + 1 < order.len() && scores[order[end + 1]] == scores[order[start]] {
            end += 1;
        }
        let pos = order[start..=end].iter().filter(|&&i| labels[i]).count() as u64;
        rank_sum2 += pos * (start + end + 2) as u64;
        start = end + 1;
    }
    let u2 = rank_sum2 - (n_pos * (n_pos + 1)) as u64;
    Ok(u2 as f64 / (2 * n_pos * n_neg) as f64)
}

/// Average precision with step interpolation: `Σ (R_n − R_{n−1})·P_n` over
/// descending score thresholds. Tied scores form one threshold, so the
/// order within a tie (index order here) does not affect the value.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<f64, MetricError> {
    check_scores(scores, labels)?;
    let total_pos = labels.iter().filter(|&&l| l).count();
    if total_pos == 0 {
        return Err(MetricError::NoPositives);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| match scores[b].total_cmp(&scores[a]) {
        Ordering::Equal => a.cmp(&b),
        o => o,
    });
    let (mut tp, mut seen, mut ap) = (0usize, 0usize, 0.0);
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end + 1 < order.len() && scores[order[end + 1]] == scores[order[start]] {
            end += 1;
        }
        let pos = order[start..=end].iter().filter(|&&i| labels[i]).count();
        tp += pos;
        seen += end - start + 1;
        if pos > 0 {
            ap += (pos as f64 / total_pos as f64) * (tp as f64 / seen as f64);
        }
        start = end + 1;
    }
    Ok(ap)
}

/// Ranking score of the positive class of a binary task: `z₁ − z₀`, which
/// orders targets exactly like the softmax probability of class 1.
pub fn binary_scores<F: Real>(logits: &Mat<F>) -> Vec<f64> {
    (0..logits.rows())
        .map(|i| {
            let r = logits.row(i);
            (r[1] - r[0]).to_f64().unwrap_or(f64::NAN)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub task: String,
    pub n: usize,
    pub positives: usize,
    pub micro_f1: f64,
    pub macro_f1: f64,
    /// Binary tasks with both classes present only.
    pub auc: Option<f64>,
    pub ap: Option<f64>,
}

impl TaskMetrics {
    /// The requested metric; AUC and AP fall back to macro F1 where they are
    /// undefined.
    pub fn get(&self, metric: EvalMetric) -> f64 {
        match metric {
            EvalMetric::MicroF1 => self.micro_f1,
            EvalMetric::MacroF1 => self.macro_f1,
            EvalMetric::Auc => self.auc.unwrap_or(self.macro_f1),
            EvalMetric::Ap => self.ap.unwrap_or(self.macro_f1),
        }
    }
}

pub fn evaluate_task<F: Real>(task: &TaskSpec, logits: &Mat<F>, truth: &[Label]) -> TaskMetrics {
    let pred = decode(logits, task);
    let (micro_f1, macro_f1) = f1_scores(&pred, truth, task.num_classes);
    let positives = truth.iter().filter(|l| l.is_positive()).count();
    let (mut auc_v, mut ap_v) = (None, None);
    if task.is_binary() {
        let scores = binary_scores(logits);
        let labels: Vec<bool> = truth.iter().map(Label::is_positive).collect();
        auc_v = auc(&scores, &labels).ok();
        ap_v = average_precision(&scores, &labels).ok().filter(|_| auc_v.is_some());
    }
    TaskMetrics { task: task.name.clone(), n: truth.len(), positives, micro_f1, macro_f1, auc: auc_v, ap: ap_v }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsReport {
    pub tasks: Vec<TaskMetrics>,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), MetricError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json() + "\n").map_err(|e| io_err(path, e))
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> MetricError {
    MetricError::Io { path: path.display().to_string(), message: e.to_string() }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImportanceRow {
    /// Backbone the weight belongs to (`task0`, `expert1`, ...).
    pub task: String,
    pub layer: usize,
    pub relation: String,
    pub kind: &'static str,
    pub weight: f64,
}

/// Alpha and beta records of a trace as CSV rows, in trace order.
///
/// Layer-`l` alpha weights of a relation measure how much the `l`-hop
/// structural patterns ending in that relation contribute to a node: layer 1
/// covers 1-hop patterns, layer 2 the 2-hop patterns whose last edge is that
/// relation. Beta rows give the share of each relation per node and layer.
/// Weights are exported raw, without degree normalization. With several
/// attention heads every head contributes its own alpha rows.
pub fn importance_rows(trace: &AttentionTrace) -> Vec<ImportanceRow> {
    trace
        .records
        .iter()
        .filter(|r| r.kind != TraceKind::Gate)
        .map(|r| ImportanceRow {
            task: trace.backbone_names.get(r.task).cloned().unwrap_or_else(|| r.task.to_string()),
            layer: r.layer,
            relation: r.relation.and_then(|i| trace.relation_names.get(i).cloned()).unwrap_or_default(),
            kind: r.kind.name(),
            weight: r.weight,
        })
        .collect()
}

/// Writes `task,layer,relation,kind,weight` rows; returns the row count.
pub fn export_importance(trace: &AttentionTrace, path: impl AsRef<Path>) -> Result<usize, MetricError> {
    let path = path.as_ref();
    let rows = importance_rows(trace);
    if rows.is_empty() {
        return Err(MetricError::EmptyTrace);
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    for row in &rows {
        w.serialize(row).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))?;
    Ok(rows.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec(kind: TaskKind, classes: usize) -> TaskSpec {
        TaskSpec { task_id: 0, name: "t".into(), target_node_type: 0, kind, num_classes: classes }
    }

    fn singles(xs: &[usize]) -> Vec<Label> {
        xs.iter().map(|&c| Label::Single(c)).collect()
    }

    fn pairs_auc(scores: &[f64], labels: &[bool]) -> f64 {
        let (mut hits, mut n) = (0.0, 0.0);
        for i in 0..scores.len() {
            for j in 0..scores.len() {
                if labels[i] && !labels[j] {
                    n += 1.0;
                    hits += match scores[i].partial_cmp(&scores[j]).unwrap() {
                        Ordering::Greater => 1.0,
                        Ordering::Equal => 0.5,
                        Ordering::Less => 0.0,
                    };
                }
            }
        }
        hits / n
    }

    fn sweep_ap(scores: &[f64], labels: &[bool]) -> f64 {
        let total = labels.iter().filter(|&&l| l).count() as f64;
        let mut thresholds = scores.to_vec();
        thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
        thresholds.dedup();
        let (mut ap, mut prev_recall) = (0.0, 0.0);
        for th in thresholds {
            let (mut tp, mut k) = (0.0, 0.0);
            for (s, &l) in scores.iter().zip(labels) {
                if *s >= th {
                    k += 1.0;
                    if l {
                        tp += 1.0;
                    }
                }
            }
            let recall = tp / total;
            ap += (recall - prev_recall) * (tp / k);
            prev_recall = recall;
        }
        ap
    }

    #[test]
    fn decode_rules() {
        let z = Mat::from_rows(&[[0.0, 0.0, 0.0], [0.1, 3.0, -1.0]]);
        assert_eq!(decode(&z, &spec(TaskKind::SingleLabel, 3)), singles(&[0, 1]));
        let m = Mat::from_rows(&[[-1.0, 0.0, 1.0]]);
        assert_eq!(decode(&m, &spec(TaskKind::MultiLabel, 3)), vec![Label::Multi(vec![1, 2])]);
    }

    #[test]
    fn f1_cases() {
        let y = singles(&[0, 1, 2, 2]);
        let p = singles(&[0, 2, 2, 1]);
        let (mi, ma) = f1_scores(&p, &y, 3);
        assert!((mi - 0.5).abs() < 1e-15 && (ma - 0.5).abs() < 1e-15);
        assert_eq!(f1_scores(&y, &y, 3), (1.0, 1.0));
        assert_eq!(f1_scores(&singles(&[1, 0, 1]), &singles(&[0, 1, 0]), 2), (0.0, 0.0));
        // class 2 never appears: it scores 0 in the macro mean
        let (_, ma) = f1_scores(&singles(&[0, 1]), &singles(&[0, 1]), 3);
        assert!((ma - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn multi_label_f1_pools_classes() {
        let y = vec![Label::Multi(vec![0, 2]), Label::Multi(vec![])];
        let p = vec![Label::Multi(vec![0]), Label::Multi(vec![1])];
        // tp 1, fp 1, fn 1
        let (mi, ma) = f1_scores(&p, &y, 3);
        assert!((mi - 0.5).abs() < 1e-15);
        assert!((ma - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn auc_cases() {
        assert_eq!(auc(&[0.9, 0.4, 0.6], &[true, false, true]).unwrap(), 1.0);
        assert_eq!(auc(&[0.9, 0.4, 0.6], &[true, true, false]).unwrap(), 0.5);
        assert_eq!(auc(&[0.1, 0.9], &[true, false]).unwrap(), 0.0);
        assert_eq!(auc(&[0.5, 0.5], &[true, false]).unwrap(), 0.5);
        assert_eq!(auc(&[0.5, 0.7], &[true, true]), Err(MetricError::SingleClass(2)));
    }

    #[test]
    fn ap_cases() {
        let ap = average_precision(&[0.9, 0.8, 0.7], &[true, false, true]).unwrap();
        assert!((ap - 5.0 / 6.0).abs() < 1e-15);
        assert_eq!(average_precision(&[0.9, 0.8, 0.1], &[true, true, false]).unwrap(), 1.0);
        let last = average_precision(&[0.9, 0.8, 0.7, 0.1], &[false, false, false, true]).unwrap();
        assert!((last - 0.25).abs() < 1e-15);
        assert_eq!(average_precision(&[0.3], &[false]), Err(MetricError::NoPositives));
    }

    #[test]
    fn evaluate_binary_task_counts_and_scores() {
        let z = Mat::from_rows(&[[0.0, 1.0], [1.0, 0.0], [0.0, 2.0]]);
        let m = evaluate_task(&spec(TaskKind::SingleLabel, 2), &z, &singles(&[1, 0, 0]));
        assert_eq!((m.n, m.positives), (3, 1));
        assert_eq!(m.auc, Some(0.5));
        assert_eq!(m.get(EvalMetric::Auc), 0.5);
        let one_class = evaluate_task(&spec(TaskKind::SingleLabel, 2), &z, &singles(&[1, 1, 1]));
        assert_eq!(one_class.auc, None);
        assert_eq!(one_class.get(EvalMetric::Ap), one_class.macro_f1);
    }

    #[test]
    fn importance_export_census() {
        use crate::autodiff::Tape;
        use crate::graph::fixtures::tiny;
        use crate::model::{forward, Batch, Model, ModelConfig, ModelSchema, Variant};
        let g = tiny();
        let m = Model::new(ModelConfig::new(Variant::Stl, 2, 4), ModelSchema::of(&g)).unwrap();
        let mut p = m.init_params::<f64>();
        for (_, name, v) in p.iter_mut_named() {
            if name.contains("ragg_a") {
                *v = Mat::zeros(v.rows(), v.cols());
            }
        }
        let mut t = Tape::new();
        let out = forward(&mut t, &m, &p, &Batch::new(&g), &[vec![0, 1]], true).unwrap();
        let trace = out.trace.unwrap();
        let rows = importance_rows(&trace);
        // per layer: 3 edges + 2 (node, relation) pairs
        assert_eq!(rows.len(), 2 * (3 + 2));
        let layer1: Vec<f64> = rows.iter().filter(|r| r.layer == 1 && r.kind == "alpha").map(|r| r.weight).collect();
        assert_eq!(layer1, vec![0.5, 0.5, 1.0]);
        assert!(rows.iter().filter(|r| r.kind == "beta").all(|r| r.weight == 1.0));
        assert!(rows.iter().all(|r| r.task == "task0" && r.relation == "writes"));

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("importance.csv");
        assert_eq!(export_importance(&trace, &path).unwrap(), 10);
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().next(), Some("task,layer,relation,kind,weight"));
        assert_eq!(text.lines().count(), 11);
        let empty = AttentionTrace::default();
        assert_eq!(export_importance(&empty, &path), Err(MetricError::EmptyTrace));
    }

    fn scored(max: usize) -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
        (2..max).prop_flat_map(|n| {
            (
                prop::collection::vec((0..12u8).prop_map(|k| k as f64 / 4.0), n),
                prop::collection::vec(any::<bool>(), n),
            )
        })
    }

    proptest! {
        #[test]
        fn auc_matches_all_pairs((s, mut l) in scored(200)) {
            l[0] = true;
            l[1] = false;
            prop_assert!((auc(&s, &l).unwrap() - pairs_auc(&s, &l)).abs() < 1e-12);
        }

        #[test]
        fn ap_matches_threshold_sweep((s, mut l) in scored(200)) {
            l[0] = true;
            prop_assert!((average_precision(&s, &l).unwrap() - sweep_ap(&s, &l)).abs() < 1e-12);
        }

        #[test]
        fn metrics_ignore_pair_order((s, mut l) in scored(60), seed in any::<u64>()) {
            use rand::{seq::SliceRandom, SeedableRng};
            l[0] = true;
            l[1] = false;
            let mut idx: Vec<usize> = (0..s.len()).collect();
            idx.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let s2: Vec<f64> = idx.iter().map(|&i| s[i]).collect();
            let l2: Vec<bool> = idx.iter().map(|&i| l[i]).collect();
            prop_assert_eq!(auc(&s, &l).unwrap(), auc(&s2, &l2).unwrap());
            prop_assert!((average_precision(&s, &l).unwrap() - average_precision(&s2, &l2).unwrap()).abs() < 1e-15);
            let y: Vec<Label> = l.iter().map(|&b| Label::Single(b as usize)).collect();
            let p: Vec<Label> = s.iter().map(|&x| Label::Single((x > 1.0) as usize)).collect();
            let y2: Vec<Label> = idx.iter().map(|&i| y[i].clone()).collect();
            let p2: Vec<Label> = idx.iter().map(|&i| p[i].clone()).collect();
            prop_assert_eq!(f1_scores(&p, &y, 2), f1_scores(&p2, &y2, 2));
        }

        #[test]
        fn single_label_micro_f1_is_accuracy(pairs in prop::collection::vec((0..4usize, 0..4usize), 1..80)) {
            let p: Vec<Label> = pairs.iter().map(|x| Label::Single(x.0)).collect();
            let y: Vec<Label> = pairs.iter().map(|x| Label::Single(x.1)).collect();
            let acc = pairs.iter().filter(|x| x.0 == x.1).count() as f64 / pairs.len() as f64;
            prop_assert!((f1_scores(&p, &y, 4).0 - acc).abs() < 1e-12);
        }
    }
}
