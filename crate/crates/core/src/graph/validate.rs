use std::collections::HashSet;
use std::fmt;

use serde::Serialize;

use super::{HeteroGraph, Label, TaskKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FindingKind {
    Schema,
    FeatureShape,
    NonFiniteFeature,
    DanglingEndpoint,
    UnsortedEdges,
    DuplicateEdge,
    TaskTargetType,
    LabelRange,
    DuplicateTarget,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Finding {
    pub kind: FindingKind,
    pub location: String,
    pub message: String,
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?} at {}: {}", self.kind, self.location, self.message)
    }
}

/// Every invariant violation found in a graph; empty iff the graph is valid.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.findings.is_empty()
    }

    pub fn count(&self, kind: FindingKind) -> usize {
        self.findings.iter().filter(|f| f.kind == kind).count()
    }

    fn push(&mut self, kind: FindingKind, location: impl Into<String>, message: impl Into<String>) {
        self.findings.push(Finding { kind, location: location.into(), message: message.into() });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for finding in &self.findings {
            writeln!(f, "{finding}")?;
        }
        Ok(())
    }
}

pub fn validate(graph: &HeteroGraph) -> ValidationReport {
    let mut report = ValidationReport::default();
    let ntypes = graph.node_types.len();

    if graph.node_features.len() != ntypes {
        report.push(FindingKind::Schema, "node_types", "one feature matrix per node type required");
    }
    for (t, info) in graph.node_types.iter().enumerate() {
        let Some(x) = graph.node_features.get(t) else { continue };
        if x.shape() != (info.count, info.feature_dim) {
            report.push(
                FindingKind::FeatureShape,
                format!("nodes_{}", info.name),
                format!("features are {:?}, schema declares {:?}", x.shape(), (info.count, info.feature_dim)),
            );
        }
        if let Some(bad) = x.data().iter().position(|v| !v.is_finite()) {
            let row = bad / x.cols().max(1);
            report.push(FindingKind::NonFiniteFeature, format!("nodes_{}[{row}]", info.name), "non-finite feature value");
        }
    }

    if graph.edges.len() != graph.relations.len() {
        report.push(FindingKind::Schema, "relations", "one edge list per relation required");
    }
    for (r, rel) in graph.relations.iter().enumerate() {
        if rel.edge_type_id != r {
            report.push(FindingKind::Schema, format!("relation {}", rel.name), format!("edge_type_id {} should be {r}", rel.edge_type_id));
        }
        if rel.src_type >= ntypes || rel.dst_type >= ntypes {
            report.push(FindingKind::Schema, format!("relation {}", rel.name), "endpoint type is not declared");
            continue;
        }
        let Some(edges) = graph.edges.get(r) else { continue };
        let loc = format!("edges_{}", rel.name);
        if edges.src.len() != edges.dst.len() {
            report.push(FindingKind::Schema, loc.clone(), "src/dst length mismatch");
            continue;
        }
        match (&edges.features, rel.has_edge_features()) {
            (Some(f), true) if f.shape() != (edges.len(), rel.edge_feature_dim) => report.push(
                FindingKind::FeatureShape,
                loc.clone(),
                format!("edge features are {:?}, expected {:?}", f.shape(), (edges.len(), rel.edge_feature_dim)),
            ),
            (Some(f), true) if !f.is_finite() => {
                report.push(FindingKind::NonFiniteFeature, loc.clone(), "non-finite edge feature value")
            }
            (None, true) => report.push(FindingKind::FeatureShape, loc.clone(), "missing edge features"),
            (Some(_), false) => report.push(FindingKind::FeatureShape, loc.clone(), "unexpected edge features"),
            _ => {}
        }
        let (ns, nd) = (graph.node_count(rel.src_type), graph.node_count(rel.dst_type));
        let mut seen = HashSet::new();
        for e in 0..edges.len() {
            let (s, d) = (edges.src[e], edges.dst[e]);
            if s >= ns || d >= nd {
                report.push(FindingKind::DanglingEndpoint, format!("{loc}[{e}]"), format!("edge ({s},{d}) outside ({ns},{nd})"));
                continue;
            }
            if e > 0 && (edges.dst[e - 1], edges.src[e - 1]) > (d, s) {
                report.push(FindingKind::UnsortedEdges, format!("{loc}[{e}]"), "edges not sorted by (dst, src)");
            }
            if !seen.insert((s, d)) {
                report.push(FindingKind::DuplicateEdge, format!("{loc}[{e}]"), format!("duplicate edge ({s},{d})"));
            }
        }
    }

    if graph.targets.len() != graph.tasks.len() {
        report.push(FindingKind::Schema, "tasks", "one target list per task required");
    }
    for (t, task) in graph.tasks.iter().enumerate() {
        let loc = format!("labels_{}", task.name);
        if task.task_id != t {
            report.push(FindingKind::Schema, loc.clone(), format!("task_id {} should be {t}", task.task_id));
        }
        if task.num_classes < 2 {
            report.push(FindingKind::Schema, loc.clone(), "num_classes must be at least 2");
        }
        if task.target_node_type >= ntypes {
            report.push(FindingKind::Schema, loc.clone(), "target type is not declared");
            continue;
        }
        let Some(targets) = graph.targets.get(t) else { continue };
        let mut seen = HashSet::new();
        for (i, target) in targets.iter().enumerate() {
            let at = format!("{loc}[{i}]");
            if target.node.node_type != task.target_node_type {
                report.push(
                    FindingKind::TaskTargetType,
                    at.clone(),
                    format!("node type {} differs from task target type {}", target.node.node_type, task.target_node_type),
                );
                continue;
            }
            if target.node.index >= graph.node_count(task.target_node_type) {
                report.push(FindingKind::DanglingEndpoint, at.clone(), format!("node {} out of range", target.node.index));
            }
            if !seen.insert(target.node.index) {
                report.push(FindingKind::DuplicateTarget, at.clone(), format!("node {} labeled twice", target.node.index));
            }
            let ok = match (&target.label, task.kind) {
                (Label::Single(c), TaskKind::SingleLabel) => *c < task.num_classes,
                (Label::Multi(s), TaskKind::MultiLabel) => s.iter().all(|&c| c < task.num_classes),
                _ => false,
            };
            if !ok {
                report.push(FindingKind::LabelRange, at, format!("label {:?} invalid for {:?} with {} classes", target.label, task.kind, task.num_classes));
            }
        }
    }
    report
}
