//! The computational stages of one selective-sharing layer.
//!
//! Stage functions take explicit tape handles; the model decides which
//! parameters feed them. Row conventions: embeddings are `n×d` row blocks,
//! a linear map is `x·W` with `W` of shape `d_in×d_out`.
//!
//! Relation embeddings are *compact*: for relation `r`, row `i` belongs to
//! destination node `present[i]`, the i-th node (ascending) with at least
//! one incoming `r` edge. Nodes without such edges have no row.

use std::rc::Rc;

use crate::autodiff::{DiffError, DiffResult, Segments, Tape, Var};
use crate::graph::HeteroGraph;
use crate::tensor::{Mat, Real};

/// Slope of the post-aggregation leaky rectifier.
pub const LEAKY_SLOPE: f64 = 0.01;
/// Slope used when attention logits pass through a leaky rectifier.
pub const ATTENTION_SLOPE: f64 = 0.2;

#[derive(Debug, Clone)]
pub struct RelationIndex {
    pub relation: usize,
    pub src_type: usize,
    pub dst_type: usize,
    pub src: Rc<[usize]>,
    pub dst: Rc<[usize]>,
    /// Destination nodes with at least one edge, ascending.
    pub present: Rc<[usize]>,
    /// Edge → position of its destination in `present`.
    pub groups: Rc<Segments>,
    /// All-zero index of edge length, broadcasts a constant edge row.
    pub broadcast: Rc<[usize]>,
}

impl RelationIndex {
    pub fn num_edges(&self) -> usize {
        self.src.len()
    }
}

/// Cross-relation layout for one node type: the present rows of every
/// incoming relation stacked in relation order.
#[derive(Debug, Clone)]
pub struct TypeIndex {
    /// Incoming relations with at least one edge, ascending.
    pub relations: Vec<usize>,
    /// Node of every stacked row.
    pub nodes: Rc<[usize]>,
    /// Stacked row → dense id among nodes with any present relation.
    pub softmax_groups: Rc<Segments>,
    /// Stacked row → node id; nodes without relations form empty groups.
    pub node_groups: Rc<Segments>,
}

/// Index structures of one graph (or sampled batch) shared by all layers.
#[derive(Debug, Clone)]
pub struct GraphIndex {
    pub node_counts: Vec<usize>,
    pub relations: Vec<RelationIndex>,
    pub types: Vec<TypeIndex>,
}

impl GraphIndex {
    pub fn new(graph: &HeteroGraph) -> Self {
        let mut relations = Vec::with_capacity(graph.num_relations());
        for (r, rel) in graph.relations.iter().enumerate() {
            let e = &graph.edges[r];
            let mut present: Vec<usize> = Vec::new();
            let mut ids = Vec::with_capacity(e.len());
            // edges are sorted by dst, so equal dsts are contiguous
            for &d in &e.dst {
                if present.last() != Some(&d) {
                    present.push(d);
                }
                ids.push(present.len() - 1);
            }
            let groups = Segments::new(ids, present.len()).expect("group ids are dense");
            relations.push(RelationIndex {
                relation: r,
                src_type: rel.src_type,
                dst_type: rel.dst_type,
                src: e.src.clone().into(),
                dst: e.dst.clone().into(),
                present: present.into(),
                groups: Rc::new(groups),
                broadcast: vec![0; e.len()].into(),
            });
        }

        let mut types = Vec::with_capacity(graph.num_node_types());
        for t in 0..graph.num_node_types() {
            let n = graph.node_count(t);
            let rels: Vec<usize> = graph
                .incoming_relations(t)
                .into_iter()
                .filter(|&r| !relations[r].present.is_empty())
                .collect();
            let mut compact = vec![usize::MAX; n];
            let mut next = 0;
            let mut nodes = Vec::new();
            for &r in &rels {
                nodes.extend_from_slice(&relations[r].present);
            }
            let mut seen: Vec<usize> = nodes.clone();
            seen.sort_unstable();
            seen.dedup();
            for v in seen {
                compact[v] = next;
                next += 1;
            }
            let softmax = nodes.iter().map(|&v| compact[v]).collect();
            types.push(TypeIndex {
                relations: rels,
                softmax_groups: Rc::new(Segments::new(softmax, next).expect("dense")),
                node_groups: Rc::new(Segments::new(nodes.clone(), n).expect("nodes in range")),
                nodes: nodes.into(),
            });
        }
        Self { node_counts: graph.node_types.iter().map(|t| t.count).collect(), relations, types }
    }
}

/// Typed projection `x·W + b` into the shared width.
pub fn project_features<F: Real>(tape: &mut Tape<F>, x: Var, w: Var, b: Var) -> DiffResult<Var> {
    tape.linear(x, w, Some(b))
}

/// Per-edge embedding: projected edge features, or the learned constant
/// row repeated once per edge for featureless relations.
pub enum EdgeSource {
    Features { x: Var, w: Var, b: Var },
    Constant(Var),
}

pub fn edge_embedding<F: Real>(tape: &mut Tape<F>, ri: &RelationIndex, source: EdgeSource) -> DiffResult<Var> {
    match source {
        EdgeSource::Features { x, w, b } => tape.linear(x, w, Some(b)),
        EdgeSource::Constant(c) => tape.gather(c, ri.broadcast.clone()),
    }
}

/// Messages `ĥ_u = h_u·W` for every edge of the relation (one row per edge).
pub fn message<F: Real>(tape: &mut Tape<F>, ri: &RelationIndex, h_src: Var, w_mes: Var) -> DiffResult<Var> {
    let m = tape.matmul(h_src, w_mes)?;
    tape.gather(m, ri.src.clone())
}

pub struct RelationOutput {
    /// `present × d` relation embeddings.
    pub embedding: Var,
    /// One `edges × 1` attention column per head.
    pub alpha: Vec<Var>,
}

/// Attention over the edges of one relation, grouped by destination.
///
/// The logit of edge `(v,u)` is `[h_v ∥ h_u ∥ h_e]·W·a` with the raw
/// neighbor embedding inside the concatenation; the result is the
/// α-weighted sum of the messages. With `heads > 1`, the columns of `W`,
/// `a` and the messages are split evenly and the head outputs concatenated.
///
/// Terms that are constant within a destination group (the `h_v` block,
/// and `h_e` when `edge_is_constant`) shift every logit of the group
/// equally and cancel in the softmax. With linear logits they are left
/// out, so their parameters get an exact zero gradient instead of
/// rounding noise. With `leaky_logits` they no longer cancel and are kept.
#[allow(clippy::too_many_arguments)]
pub fn relation_aggregate<F: Real>(
    tape: &mut Tape<F>,
    ri: &RelationIndex,
    h_dst: Var,
    h_src: Var,
    h_edge: Var,
    edge_is_constant: bool,
    messages: Var,
    w_ragg: Var,
    a: Var,
    heads: usize,
    leaky_logits: bool,
) -> DiffResult<RelationOutput> {
    let (rows, d) = tape.shape(w_ragg);
    if heads == 0 || d % heads != 0 {
        return Err(DiffError::Contract(format!("{heads} heads do not divide width {d}")));
    }
    if rows != 3 * d {
        return Err(DiffError::Shape { op: "relation_aggregate", left: (rows, d), right: (3 * d, d) });
    }
    let hu = tape.gather(h_src, ri.src.clone())?;
    let (cat, used): (Var, Rc<[usize]>) = if leaky_logits {
        let hv = tape.gather(h_dst, ri.dst.clone())?;
        (tape.concat(&[hv, hu, h_edge])?, (0..3 * d).collect())
    } else if edge_is_constant {
        (hu, (d..2 * d).collect())
    } else {
        (tape.concat(&[hu, h_edge])?, (d..3 * d).collect())
    };
    let dh = d / heads;
    let mut alpha = Vec::with_capacity(heads);
    let mut parts = Vec::with_capacity(heads);
    for k in 0..heads {
        let (w_k, a_k, m_k) = if heads == 1 {
            (w_ragg, a, messages)
        } else {
            let rows: Rc<[usize]> = (k * dh..(k + 1) * dh).collect();
            (tape.slice_cols(w_ragg, k * dh, dh)?, tape.gather(a, rows)?, tape.slice_cols(messages, k * dh, dh)?)
        };
        let wa = tape.matmul(w_k, a_k)?;
        let wa = tape.gather(wa, used.clone())?;
        let mut logits = tape.matmul(cat, wa)?;
        if leaky_logits {
            logits = tape.leaky_relu(logits, ATTENTION_SLOPE);
        }
        let al = tape.masked_softmax(logits, ri.groups.clone())?;
        parts.push(tape.weighted_sum(al, m_k, ri.groups.clone())?);
        alpha.push(al);
    }
    let embedding = if heads == 1 { parts[0] } else { tape.concat(&parts)? };
    Ok(RelationOutput { embedding, alpha })
}

/// Structure-aware gate weights: `softmax(selector·W + b)` per row, one
/// column per task.
pub fn gate_weights<F: Real>(tape: &mut Tape<F>, selector: Var, w: Var, b: Var) -> DiffResult<Var> {
    let z = tape.linear(selector, w, Some(b))?;
    Ok(tape.softmax_rows(z))
}

/// Gate fixed one-hot on column `own`, used to pin a task to its own
/// embeddings.
pub fn one_hot_gate<F: Real>(tape: &mut Tape<F>, rows: usize, tasks: usize, own: usize) -> Var {
    let mut m = Mat::zeros(rows, tasks);
    for r in 0..rows {
        m.set(r, own, F::one());
    }
    tape.constant(m)
}

/// `h̄ = Σ_j w_j·h^j`, row by row.
pub fn gate_combine<F: Real>(tape: &mut Tape<F>, w: Var, per_task: &[Var]) -> DiffResult<Var> {
    if per_task.is_empty() {
        return Err(DiffError::Contract("gate over zero task embeddings".into()));
    }
    tape.mix_rows(w, per_task)
}

pub struct CrossOutput {
    /// `nodes × d`; rows of nodes without relations are zero.
    pub aggregated: Var,
    /// `stacked rows × 1` relation weights.
    pub beta: Var,
}

/// Attention across the present relations of every node of one type,
/// before the residual. `logit_inputs[k]` and `sum_inputs[k]` are the
/// compact embeddings of relation `ti.relations[k]`; logits are
/// `[h_v ∥ logit_input]·W·b`, the output sums `β·sum_input`. The `h_v`
/// block is constant per node and cancels in the softmax, so only the
/// lower half of `W·b` is evaluated.
#[allow(clippy::too_many_arguments)]
pub fn cross_relation_attention<F: Real>(
    tape: &mut Tape<F>,
    ti: &TypeIndex,
    h_prev: Var,
    logit_inputs: &[Var],
    sum_inputs: &[Var],
    w_agg: Var,
    b_agg: Var,
) -> DiffResult<Option<CrossOutput>> {
    if ti.relations.is_empty() {
        return Ok(None);
    }
    if logit_inputs.len() != ti.relations.len() || sum_inputs.len() != ti.relations.len() {
        return Err(DiffError::Contract("one embedding per present relation required".into()));
    }
    let (rows, d) = tape.shape(w_agg);
    if rows != 2 * d || tape.shape(h_prev).1 != d {
        return Err(DiffError::Shape { op: "cross_relation_attention", left: (rows, d), right: tape.shape(h_prev) });
    }
    let hl = if logit_inputs.len() == 1 { logit_inputs[0] } else { tape.stack_rows(logit_inputs)? };
    let hs = if sum_inputs.len() == 1 { sum_inputs[0] } else { tape.stack_rows(sum_inputs)? };
    let wb = tape.matmul(w_agg, b_agg)?;
    let lower: Rc<[usize]> = (d..2 * d).collect();
    let wb = tape.gather(wb, lower)?;
    let logits = tape.matmul(hl, wb)?;
    let beta = tape.masked_softmax(logits, ti.softmax_groups.clone())?;
    let aggregated = tape.weighted_sum(beta, hs, ti.node_groups.clone())?;
    Ok(Some(CrossOutput { aggregated, beta }))
}

/// Residual plus leaky rectifier; nodes without relations pass through
/// the rectifier alone.
pub fn finish_layer<F: Real>(tape: &mut Tape<F>, aggregated: Option<Var>, h_prev: Var) -> DiffResult<Var> {
    let pre = match aggregated {
        Some(a) => tape.add(a, h_prev)?,
        None => h_prev,
    };
    Ok(tape.leaky_relu(pre, LEAKY_SLOPE))
}

/// Full cross-relation stage: attention, residual, rectifier.
#[allow(clippy::too_many_arguments)]
pub fn cross_relation_aggregate<F: Real>(
    tape: &mut Tape<F>,
    ti: &TypeIndex,
    h_prev: Var,
    logit_inputs: &[Var],
    sum_inputs: &[Var],
    w_agg: Var,
    b_agg: Var,
) -> DiffResult<(Var, Option<Var>)> {
    let out = cross_relation_attention(tape, ti, h_prev, logit_inputs, sum_inputs, w_agg, b_agg)?;
    let beta = out.as_ref().map(|o| o.beta);
    Ok((finish_layer(tape, out.map(|o| o.aggregated), h_prev)?, beta))
}
