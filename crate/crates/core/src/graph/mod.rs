//! Heterogeneous graph data model.
//!
//! Nodes are addressed per type with dense local indices. Edges are directed
//! and grouped by relation; within a relation they are kept sorted by
//! `(dst, src)` so that every per-node reduction downstream visits neighbors
//! in a fixed order. An undirected relation is declared as two mirrored
//! relations.

mod io;
mod sample;
mod split;
mod validate;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::Mat;

pub use io::{load_graph, read_graph_unchecked, write_graph};
pub use sample::{sample_subgraph, sample_targets, induce_subgraph, SampledGraph, SamplingRequest};
pub use split::{split_targets, SplitAssignment, SplitPart, TaskSplit};
pub use validate::{validate, Finding, FindingKind, ValidationReport};

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("missing graph file {0}")]
    MissingFile(String),
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{file}:{line}: {message}")]
    Parse { file: String, line: usize, message: String },
    #[error("schema error in {file}{}: {message}", .line.map(|l| format!(":{l}")).unwrap_or_default())]
    Schema { file: String, line: Option<usize>, message: String },
    #[error("graph failed validation:\n{0}")]
    Invalid(ValidationReport),
    #[error("split error: {0}")]
    Split(String),
    #[error("sampling error: {0}")]
    Sampling(String),
    #[error("label starvation: task `{task}` has no {class} training targets")]
    LabelStarvation { task: String, class: &'static str },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeTypeInfo {
    pub name: String,
    pub feature_dim: usize,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationSchema {
    pub edge_type_id: usize,
    pub name: String,
    pub src_type: usize,
    pub dst_type: usize,
    pub edge_feature_dim: usize,
}

impl RelationSchema {
    pub fn has_edge_features(&self) -> bool {
        self.edge_feature_dim > 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    SingleLabel,
    MultiLabel,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: usize,
    pub name: String,
    pub target_node_type: usize,
    pub kind: TaskKind,
    pub num_classes: usize,
}

impl TaskSpec {
    pub fn is_binary(&self) -> bool {
        self.kind == TaskKind::SingleLabel && self.num_classes == 2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeRef {
    pub node_type: usize,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Label {
    Single(usize),
    Multi(Vec<usize>),
}

impl Label {
    /// Positive means class 1 for single-label tasks and a nonempty class
    /// set for multi-label tasks.
    pub fn is_positive(&self) -> bool {
        match self {
            Label::Single(c) => *c != 0,
            Label::Multi(s) => !s.is_empty(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Target {
    pub node: NodeRef,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EdgeList {
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
    /// `edges × edge_feature_dim`, present iff the relation declares features.
    pub features: Option<Mat<f64>>,
}

impl EdgeList {
    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeteroGraph {
    pub node_types: Vec<NodeTypeInfo>,
    /// One `count × feature_dim` matrix per node type.
    pub node_features: Vec<Mat<f64>>,
    pub relations: Vec<RelationSchema>,
    pub edges: Vec<EdgeList>,
    pub tasks: Vec<TaskSpec>,
    pub targets: Vec<Vec<Target>>,
}

impl HeteroGraph {
    pub fn num_node_types(&self) -> usize {
        self.node_types.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }

    pub fn node_count(&self, node_type: usize) -> usize {
        self.node_types[node_type].count
    }

    pub fn edge_count(&self) -> usize {
        self.edges.iter().map(EdgeList::len).sum()
    }

    pub fn node_type_id(&self, name: &str) -> Option<usize> {
        self.node_types.iter().position(|t| t.name == name)
    }

    pub fn relation_id(&self, name: &str) -> Option<usize> {
        self.relations.iter().position(|r| r.name == name)
    }

    pub fn task_id(&self, name: &str) -> Option<usize> {
        self.tasks.iter().position(|t| t.name == name)
    }

    /// Relations whose destination is `node_type`, ascending by id.
    pub fn incoming_relations(&self, node_type: usize) -> Vec<usize> {
        self.relations.iter().filter(|r| r.dst_type == node_type).map(|r| r.edge_type_id).collect()
    }

    /// Sorts every relation by `(dst, src)`, permuting edge features along.
    pub fn canonicalize(&mut self) {
        for edges in &mut self.edges {
            let mut order: Vec<usize> = (0..edges.len()).collect();
            order.sort_by_key(|&i| (edges.dst[i], edges.src[i], i));
            if order.iter().enumerate().all(|(i, &o)| i == o) {
                continue;
            }
            edges.src = order.iter().map(|&i| edges.src[i]).collect();
            edges.dst = order.iter().map(|&i| edges.dst[i]).collect();
            if let Some(f) = &edges.features {
                let mut out = Mat::zeros(f.rows(), f.cols());
                for (new, &old) in order.iter().enumerate() {
                    out.row_mut(new).copy_from_slice(f.row(old));
                }
                edges.features = Some(out);
            }
        }
    }

    /// Incoming neighbor lists of one relation: `out[dst]` is the sorted
    /// list of `(src, edge index)`.
    pub fn in_neighbors(&self, relation: usize) -> Vec<Vec<(usize, usize)>> {
        let rel = &self.relations[relation];
        let edges = &self.edges[relation];
        let mut out = vec![Vec::new(); self.node_count(rel.dst_type)];
        for e in 0..edges.len() {
            out[edges.dst[e]].push((edges.src[e], e));
        }
        for list in &mut out {
            list.sort_unstable();
        }
        out
    }
}

/// Small hand-written graphs for tests, examples and smoke runs.
pub mod fixtures {
    use super::*;

    /// Two node types (`paper` ×2, `author` ×3), relation `writes`
    /// author→paper with 3 edges, one single-label task on papers.
    pub fn tiny() -> HeteroGraph {
        HeteroGraph {
            node_types: vec![
                NodeTypeInfo { name: "paper".into(), feature_dim: 2, count: 2 },
                NodeTypeInfo { name: "author".into(), feature_dim: 3, count: 3 },
            ],
            node_features: vec![
                Mat::from_rows(&[[1.0, 0.0], [0.0, 1.0]]),
                Mat::from_rows(&[[0.5, 0.5, 0.0], [1.0, -1.0, 2.0], [0.0, 0.0, 1.0]]),
            ],
            relations: vec![RelationSchema {
                edge_type_id: 0,
                name: "writes".into(),
                src_type: 1,
                dst_type: 0,
                edge_feature_dim: 0,
            }],
            edges: vec![EdgeList { src: vec![0, 1, 2], dst: vec![0, 0, 1], features: None }],
            tasks: vec![TaskSpec {
                task_id: 0,
                name: "venue".into(),
                target_node_type: 0,
                kind: TaskKind::SingleLabel,
                num_classes: 2,
            }],
            targets: vec![vec![
                Target { node: NodeRef { node_type: 0, index: 0 }, label: Label::Single(1) },
                Target { node: NodeRef { node_type: 0, index: 1 }, label: Label::Single(0) },
            ]],
        }
    }

    /// Six nodes: `item` ×3 (dim 2), `user` ×2 (dim 3), `tag` ×1 (dim 2).
    /// `bought` user→item without edge features, `tagged` tag→item with
    /// 2-dim edge features. Item 0 has only `bought`, item 1 both, item 2
    /// only `tagged`. Tasks: binary `churn` and 3-class multi-label `genre`,
    /// both on every item.
    pub fn two_task() -> HeteroGraph {
        HeteroGraph {
            node_types: vec![
                NodeTypeInfo { name: "item".into(), feature_dim: 2, count: 3 },
                NodeTypeInfo { name: "user".into(), feature_dim: 3, count: 2 },
                NodeTypeInfo { name: "tag".into(), feature_dim: 2, count: 1 },
            ],
            node_features: vec![
                Mat::from_rows(&[[0.2, -0.4], [1.0, 0.5], [-0.7, 0.9]]),
                Mat::from_rows(&[[0.3, 0.8, -0.5], [-1.2, 0.1, 0.6]]),
                Mat::from_rows(&[[0.9, -0.3]]),
            ],
            relations: vec![
                RelationSchema { edge_type_id: 0, name: "bought".into(), src_type: 1, dst_type: 0, edge_feature_dim: 0 },
                RelationSchema { edge_type_id: 1, name: "tagged".into(), src_type: 2, dst_type: 0, edge_feature_dim: 2 },
            ],
            edges: vec![
                EdgeList { src: vec![0, 1, 0], dst: vec![0, 0, 1], features: None },
                EdgeList { src: vec![0, 0], dst: vec![1, 2], features: Some(Mat::from_rows(&[[0.5, -1.0], [1.0, 0.3]])) },
            ],
            tasks: vec![
                TaskSpec { task_id: 0, name: "churn".into(), target_node_type: 0, kind: TaskKind::SingleLabel, num_classes: 2 },
                TaskSpec { task_id: 1, name: "genre".into(), target_node_type: 0, kind: TaskKind::MultiLabel, num_classes: 3 },
            ],
            targets: vec![
                (0..3)
                    .map(|i| Target { node: NodeRef { node_type: 0, index: i }, label: Label::Single((i + 1) % 2) })
                    .collect(),
                vec![
                    Target { node: NodeRef { node_type: 0, index: 0 }, label: Label::Multi(vec![0, 2]) },
                    Target { node: NodeRef { node_type: 0, index: 1 }, label: Label::Multi(vec![]) },
                    Target { node: NodeRef { node_type: 0, index: 2 }, label: Label::Multi(vec![1]) },
                ],
            ],
        }
    }
}
