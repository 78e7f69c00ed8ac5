use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceKind {
    /// Neighbor weight within one (node, relation) group.
    Alpha,
    /// Relation weight within one node.
    Beta,
    /// Weight a task gate puts on one source (task or expert).
    Gate,
}

impl TraceKind {
    pub fn name(self) -> &'static str {
        match self {
            TraceKind::Alpha => "alpha",
            TraceKind::Beta => "beta",
            TraceKind::Gate => "gate",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRecord {
    /// Backbone for alpha/beta (the task for per-task backbones), the
    /// gating task for gate records.
    pub task: usize,
    /// 1-based layer; final-output gates use `num_layers + 1`.
    pub layer: usize,
    pub relation: Option<usize>,
    pub kind: TraceKind,
    /// Central node (local index within its type).
    pub node: usize,
    /// Neighbor node, alpha only.
    pub neighbor: Option<usize>,
    /// Gate column (source task or expert), gate only.
    pub source: Option<usize>,
    pub head: usize,
    pub weight: f64,
}

/// Every attention and gate weight of one forward pass.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct AttentionTrace {
    pub relation_names: Vec<String>,
    /// Path prefix of each backbone (`task0`, `expert1`, ...), indexed by
    /// the `task` field of alpha and beta records.
    pub backbone_names: Vec<String>,
    pub records: Vec<TraceRecord>,
}

impl AttentionTrace {
    pub fn of_kind(&self, kind: TraceKind) -> impl Iterator<Item = &TraceRecord> {
        self.records.iter().filter(move |r| r.kind == kind)
    }

    /// Mean gate weight `task` puts on `source` for `relation` (relation
    /// gates only), over all layers and nodes.
    pub fn mean_gate_weight(&self, task: usize, relation: usize, source: usize) -> Option<f64> {
        let (mut sum, mut n) = (0.0, 0usize);
        for r in self.of_kind(TraceKind::Gate) {
            if r.task == task && r.relation == Some(relation) && r.source == Some(source) {
                sum += r.weight;
                n += 1;
            }
        }
        (n > 0).then(|| sum / n as f64)
    }
}
