use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{GraphError, HeteroGraph};
use crate::seed::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitPart {
    Train,
    Val,
    Test,
}

/// Indices into `graph.targets[task]`, each list ascending.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TaskSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl TaskSplit {
    pub fn part(&self, part: SplitPart) -> &[usize] {
        match part {
            SplitPart::Train => &self.train,
            SplitPart::Val => &self.val,
            SplitPart::Test => &self.test,
        }
    }

    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.val.len(), self.test.len())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub tasks: Vec<TaskSplit>,
}

impl SplitAssignment {
    pub fn task(&self, task: usize) -> &TaskSplit {
        &self.tasks[task]
    }

    /// Which part target entry `index` of `task` belongs to.
    pub fn assignment(&self, task: usize, index: usize) -> Option<SplitPart> {
        let s = &self.tasks[task];
        [SplitPart::Train, SplitPart::Val, SplitPart::Test]
            .into_iter()
            .find(|&p| s.part(p).binary_search(&index).is_ok())
    }
}

/// Random per-task train/val/test split.
///
/// Validation and test receive `max(1, ⌊n·ratio⌋)` targets each; every
/// remaining target goes to train.
pub fn split_targets(graph: &HeteroGraph, ratios: (f64, f64, f64), seed: u64) -> Result<SplitAssignment, GraphError> {
    let (tr, va, te) = ratios;
    if !(tr > 0.0 && va > 0.0 && te > 0.0) || ((tr + va + te) - 1.0).abs() > 1e-9 {
        return Err(GraphError::Split(format!("ratios {ratios:?} must be positive and sum to 1")));
    }
    let mut tasks = Vec::with_capacity(graph.num_tasks());
    for (t, task) in graph.tasks.iter().enumerate() {
        let n = graph.targets[t].len();
        if n < 3 {
            return Err(GraphError::Split(format!("task `{}` has {n} labeled targets, need at least 3", task.name)));
        }
        let n_val = ((n as f64 * va).floor() as usize).max(1);
        let n_test = ((n as f64 * te).floor() as usize).max(1);
        if n_val + n_test >= n {
            return Err(GraphError::Split(format!("task `{}`: no training targets left for {n} targets", task.name)));
        }
        let mut perm: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &["split", &t.to_string()]));
        perm.shuffle(&mut rng);
        let mut val = perm[..n_val].to_vec();
        let mut test = perm[n_val..n_val + n_test].to_vec();
        let mut train = perm[n_val + n_test..].to_vec();
        val.sort_unstable();
        test.sort_unstable();
        train.sort_unstable();
        tasks.push(TaskSplit { train, val, test });
    }
    Ok(SplitAssignment { tasks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{fixtures::tiny, Label, NodeRef, NodeTypeInfo, Target};
    use crate::tensor::Mat;

    fn with_targets(n: usize) -> HeteroGraph {
        let mut g = tiny();
        g.node_types[0] = NodeTypeInfo { name: "paper".into(), feature_dim: 2, count: n };
        g.node_features[0] = Mat::zeros(n, 2);
        g.targets[0] = (0..n)
            .map(|i| Target { node: NodeRef { node_type: 0, index: i }, label: Label::Single(i % 2) })
            .collect();
        g
    }

    #[test]
    fn ten_targets_split_six_two_two() {
        for seed in 0..5 {
            let s = split_targets(&with_targets(10), (0.6, 0.2, 0.2), seed).unwrap();
            assert_eq!(s.task(0).sizes(), (6, 2, 2));
        }
    }

    #[test]
    fn three_targets_split_one_each() {
        let s = split_targets(&with_targets(3), (0.6, 0.2, 0.2), 9).unwrap();
        assert_eq!(s.task(0).sizes(), (1, 1, 1));
    }

    #[test]
    fn too_few_targets_is_an_error() {
        assert!(matches!(split_targets(&with_targets(2), (0.6, 0.2, 0.2), 0), Err(GraphError::Split(_))));
    }

    #[test]
    fn deterministic_disjoint_and_covering() {
        let g = with_targets(37);
        let a = split_targets(&g, (0.6, 0.2, 0.2), 42).unwrap();
        assert_eq!(a, split_targets(&g, (0.6, 0.2, 0.2), 42).unwrap());
        let s = a.task(0);
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..37).collect::<Vec<_>>());
        assert_eq!(a.assignment(0, s.val[0]), Some(SplitPart::Val));
    }
}
