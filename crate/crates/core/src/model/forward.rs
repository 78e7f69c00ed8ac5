use std::collections::HashMap;
use std::rc::Rc;

use super::trace::{AttentionTrace, TraceKind, TraceRecord};
use super::{Model, ModelError, Variant};
use crate::autodiff::{Tape, Var};
use crate::graph::{HeteroGraph, Label, TaskKind};
use crate::layers::{
    cross_relation_aggregate, cross_relation_attention, edge_embedding, finish_layer, gate_combine, gate_weights, message,
    one_hot_gate, project_features, relation_aggregate, EdgeSource, GraphIndex,
};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Mat, Real};

/// A graph prepared for repeated forward passes at precision `F`.
#[derive(Debug, Clone)]
pub struct Batch<F> {
    pub index: GraphIndex,
    node_features: Vec<Mat<F>>,
    edge_features: Vec<Option<Mat<F>>>,
}

impl<F: Real> Batch<F> {
    pub fn new(graph: &HeteroGraph) -> Self {
        Self {
            index: GraphIndex::new(graph),
            node_features: graph.node_features.iter().map(Mat::cast).collect(),
            edge_features: graph.edges.iter().map(|e| e.features.as_ref().map(Mat::cast)).collect(),
        }
    }
}

pub struct ForwardOutput {
    /// Per task, logits of the requested target nodes in request order;
    /// `None` for inactive tasks and empty requests.
    pub logits: Vec<Option<Var>>,
    pub trace: Option<AttentionTrace>,
}

struct Bound<'a, F> {
    store: &'a ParamStore<F>,
    vars: HashMap<ParamId, Var>,
}

impl<'a, F: Real> Bound<'a, F> {
    fn get(&mut self, tape: &mut Tape<F>, name: &str) -> Result<Var, ModelError> {
        let id = self.store.id(name).ok_or_else(|| ModelError::MissingParam(name.to_string()))?;
        Ok(*self.vars.entry(id).or_insert_with(|| tape.param(id, self.store.get(id))))
    }
}

enum Pending {
    Alpha { task: usize, layer: usize, relation: usize, head: usize, var: Var },
    Beta { task: usize, layer: usize, node_type: usize, var: Var },
    Gate { task: usize, layer: usize, relation: Option<usize>, nodes: Rc<[usize]>, var: Var },
}

/// Runs the model on `batch` and returns logits for `targets[task]`
/// (node indices of each task's target type).
pub fn forward<F: Real>(
    tape: &mut Tape<F>,
    model: &Model,
    params: &ParamStore<F>,
    batch: &Batch<F>,
    targets: &[Vec<usize>],
    keep_trace: bool,
) -> Result<ForwardOutput, ModelError> {
    let cfg = &model.config;
    let schema = &model.schema;
    let gi = &batch.index;
    let nt = schema.node_types.len();
    let nr = schema.relations.len();
    let tasks = model.num_tasks();
    if targets.len() != tasks {
        return Err(ModelError::Schema(format!("{} target lists for {tasks} tasks", targets.len())));
    }
    if gi.node_counts.len() != nt || gi.relations.len() != nr {
        return Err(ModelError::Schema("batch layout differs from the model schema".into()));
    }
    let mut p = Bound { store: params, vars: HashMap::new() };
    let mut pending = Vec::new();
    let backbones = model.backbones();
    let nb = backbones.len();

    let x: Vec<Var> = batch.node_features.iter().map(|m| tape.constant(m.clone())).collect();
    let mut h: Vec<Vec<Var>> = Vec::with_capacity(nb);
    let mut he: Vec<Vec<Option<Var>>> = Vec::with_capacity(nb);
    for prefix in &backbones {
        let mut hb = Vec::with_capacity(nt);
        for (ty, ts) in schema.node_types.iter().enumerate() {
            let w = p.get(tape, &format!("{prefix}/proj/node_w/{}", ts.name))?;
            let b = p.get(tape, &format!("{prefix}/proj/node_b/{}", ts.name))?;
            hb.push(project_features(tape, x[ty], w, b)?);
        }
        let mut eb = Vec::with_capacity(nr);
        for (r, rel) in schema.relations.iter().enumerate() {
            let ri = &gi.relations[r];
            if ri.num_edges() == 0 {
                eb.push(None);
                continue;
            }
            let source = match &batch.edge_features[r] {
                Some(xe) if rel.has_edge_features() => EdgeSource::Features {
                    x: tape.constant(xe.clone()),
                    w: p.get(tape, &format!("{prefix}/proj/edge_w/{}", rel.name))?,
                    b: p.get(tape, &format!("{prefix}/proj/edge_b/{}", rel.name))?,
                },
                _ => EdgeSource::Constant(p.get(tape, &format!("{prefix}/proj/edge_const/{}", rel.name))?),
            };
            eb.push(Some(edge_embedding(tape, ri, source)?));
        }
        h.push(hb);
        he.push(eb);
    }

    let mask = cfg.mask();
    for l in 1..=cfg.num_layers {
        // relation embeddings of every backbone
        let mut rel: Vec<Vec<Option<Var>>> = vec![vec![None; nr]; nb];
        for (b, prefix) in backbones.iter().enumerate() {
            for (r, rs) in schema.relations.iter().enumerate() {
                let ri = &gi.relations[r];
                let Some(h_edge) = he[b][r] else { continue };
                let w_mes = p.get(tape, &format!("{prefix}/layer{l}/mes_w/{}", rs.name))?;
                let w_ragg = p.get(tape, &format!("{prefix}/layer{l}/ragg_w/{}", rs.name))?;
                let a = p.get(tape, &format!("{prefix}/layer{l}/ragg_a/{}", rs.name))?;
                let msgs = message(tape, ri, h[b][ri.src_type], w_mes)?;
                let out = relation_aggregate(
                    tape,
                    ri,
                    h[b][ri.dst_type],
                    h[b][ri.src_type],
                    h_edge,
                    !rs.has_edge_features(),
                    msgs,
                    w_ragg,
                    a,
                    cfg.attention_heads,
                    cfg.attention_leaky,
                )?;
                if keep_trace {
                    for (head, &var) in out.alpha.iter().enumerate() {
                        pending.push(Pending::Alpha { task: b, layer: l, relation: r, head, var });
                    }
                }
                rel[b][r] = Some(out.embedding);
            }
        }

        let mut next: Vec<Vec<Var>> = Vec::with_capacity(nb);
        match cfg.variant {
            Variant::AblationNoR => {
                let mut per_task: Vec<Vec<Var>> = vec![Vec::with_capacity(nt); nb];
                for ty in 0..nt {
                    let ti = &gi.types[ty];
                    let mut agg = Vec::with_capacity(nb);
                    for (b, prefix) in backbones.iter().enumerate() {
                        let own: Vec<Var> = ti.relations.iter().map(|&r| rel[b][r].expect("present")).collect();
                        let w = p.get(tape, &format!("{prefix}/layer{l}/agg_w"))?;
                        let v = p.get(tape, &format!("{prefix}/layer{l}/agg_b"))?;
                        let out = cross_relation_attention(tape, ti, h[b][ty], &own, &own, w, v)?;
                        if let Some(o) = &out {
                            if keep_trace {
                                pending.push(Pending::Beta { task: b, layer: l, node_type: ty, var: o.beta });
                            }
                        }
                        agg.push(out.map(|o| o.aggregated));
                    }
                    for t in 0..nb {
                        let mixed = match agg[0] {
                            None => None,
                            Some(_) => {
                                let parts: Vec<Var> = agg.iter().map(|a| a.expect("same graph")).collect();
                                let n = gi.node_counts[ty];
                                let w = if cfg.force_own_gate {
                                    one_hot_gate(tape, n, nb, t)
                                } else {
                                    let name = &schema.node_types[ty].name;
                                    let gw = p.get(tape, &format!("task{t}/layer{l}/node_gate_w/{name}"))?;
                                    let gb = p.get(tape, &format!("task{t}/layer{l}/node_gate_b/{name}"))?;
                                    gate_weights(tape, h[t][ty], gw, gb)?
                                };
                                if keep_trace {
                                    let nodes: Rc<[usize]> = (0..n).collect();
                                    pending.push(Pending::Gate { task: t, layer: l, relation: None, nodes, var: w });
                                }
                                Some(gate_combine(tape, w, &parts)?)
                            }
                        };
                        per_task[t].push(finish_layer(tape, mixed, h[t][ty])?);
                    }
                }
                next = per_task;
            }
            _ => {
                let gated = cfg.variant == Variant::Struchis && mask[l - 1];
                for (b, prefix) in backbones.iter().enumerate() {
                    let mut hb = Vec::with_capacity(nt);
                    for ty in 0..nt {
                        let ti = &gi.types[ty];
                        let own: Vec<Var> = ti.relations.iter().map(|&r| rel[b][r].expect("present")).collect();
                        let mut sums = own.clone();
                        if gated {
                            for (k, &r) in ti.relations.iter().enumerate() {
                                let ri = &gi.relations[r];
                                let w = if cfg.force_own_gate {
                                    one_hot_gate(tape, ri.present.len(), nb, b)
                                } else {
                                    let name = &schema.relations[r].name;
                                    let gw = p.get(tape, &format!("task{b}/layer{l}/gate_w/{name}"))?;
                                    let gb = p.get(tape, &format!("task{b}/layer{l}/gate_b/{name}"))?;
                                    let sel = tape.gather(h[b][ty], ri.present.clone())?;
                                    gate_weights(tape, sel, gw, gb)?
                                };
                                if keep_trace {
                                    pending.push(Pending::Gate {
                                        task: b,
                                        layer: l,
                                        relation: Some(r),
                                        nodes: ri.present.clone(),
                                        var: w,
                                    });
                                }
                                let parts: Vec<Var> = (0..nb).map(|j| rel[j][r].expect("present")).collect();
                                sums[k] = gate_combine(tape, w, &parts)?;
                            }
                        }
                        let w = p.get(tape, &format!("{prefix}/layer{l}/agg_w"))?;
                        let v = p.get(tape, &format!("{prefix}/layer{l}/agg_b"))?;
                        let (out, beta) = cross_relation_aggregate(tape, ti, h[b][ty], &own, &sums, w, v)?;
                        if let (Some(var), true) = (beta, keep_trace) {
                            pending.push(Pending::Beta { task: b, layer: l, node_type: ty, var });
                        }
                        hb.push(out);
                    }
                    next.push(hb);
                }
            }
        }
        h = next;
    }

    let mut logits = vec![None; tasks];
    for t in model.active_tasks() {
        if targets[t].is_empty() {
            continue;
        }
        let ty = schema.tasks[t].target_node_type;
        let idx: Rc<[usize]> = targets[t].clone().into();
        let z = match cfg.variant {
            Variant::Stl | Variant::SharedBackbone => tape.gather(h[0][ty], idx.clone())?,
            Variant::Struchis | Variant::AblationNoR => tape.gather(h[t][ty], idx.clone())?,
            Variant::AblationNoRNoL => {
                let parts = (0..nb).map(|j| tape.gather(h[j][ty], idx.clone())).collect::<Result<Vec<_>, _>>()?;
                let w = if cfg.force_own_gate {
                    one_hot_gate(tape, idx.len(), nb, t)
                } else {
                    let gw = p.get(tape, &format!("task{t}/final_gate_w"))?;
                    let gb = p.get(tape, &format!("task{t}/final_gate_b"))?;
                    gate_weights(tape, parts[t], gw, gb)?
                };
                if keep_trace {
                    pending.push(Pending::Gate { task: t, layer: cfg.num_layers + 1, relation: None, nodes: idx.clone(), var: w });
                }
                gate_combine(tape, w, &parts)?
            }
            Variant::MoeExperts => {
                let name = &schema.node_types[ty].name;
                let xs = tape.gather(x[ty], idx.clone())?;
                let sw = p.get(tape, &format!("moe/selector_w/{name}"))?;
                let sb = p.get(tape, &format!("moe/selector_b/{name}"))?;
                let sel = project_features(tape, xs, sw, sb)?;
                let gw = p.get(tape, &format!("moe/gate{t}/w"))?;
                let gb = p.get(tape, &format!("moe/gate{t}/b"))?;
                let w = gate_weights(tape, sel, gw, gb)?;
                if keep_trace {
                    pending.push(Pending::Gate { task: t, layer: cfg.num_layers + 1, relation: None, nodes: idx.clone(), var: w });
                }
                let parts = (0..nb).map(|j| tape.gather(h[j][ty], idx.clone())).collect::<Result<Vec<_>, _>>()?;
                gate_combine(tape, w, &parts)?
            }
        };
        let mut z = z;
        for k in 1..=cfg.head_hidden_layers {
            let w = p.get(tape, &format!("head{t}/hidden{k}/w"))?;
            let b = p.get(tape, &format!("head{t}/hidden{k}/b"))?;
            let lin = tape.linear(z, w, Some(b))?;
            z = tape.leaky_relu(lin, 0.0);
        }
        let w = p.get(tape, &format!("head{t}/out/w"))?;
        let b = p.get(tape, &format!("head{t}/out/b"))?;
        logits[t] = Some(tape.linear(z, w, Some(b))?);
    }

    let trace = keep_trace.then(|| collect_trace(tape, model, gi, pending));
    Ok(ForwardOutput { logits, trace })
}

fn collect_trace<F: Real>(tape: &Tape<F>, model: &Model, gi: &GraphIndex, pending: Vec<Pending>) -> AttentionTrace {
    let mut records = Vec::new();
    let to_f64 = |x: F| x.to_f64().expect("finite weight");
    for item in pending {
        match item {
            Pending::Alpha { task, layer, relation, head, var } => {
                let ri = &gi.relations[relation];
                for (e, &w) in tape.value(var).data().iter().enumerate() {
                    records.push(TraceRecord {
                        task,
                        layer,
                        relation: Some(relation),
                        kind: TraceKind::Alpha,
                        node: ri.dst[e],
                        neighbor: Some(ri.src[e]),
                        source: None,
                        head,
                        weight: to_f64(w),
                    });
                }
            }
            Pending::Beta { task, layer, node_type, var } => {
                let ti = &gi.types[node_type];
                let rels = ti.relations.iter().flat_map(|&r| std::iter::repeat(r).take(gi.relations[r].present.len()));
                for ((&w, &node), r) in tape.value(var).data().iter().zip(ti.nodes.iter()).zip(rels) {
                    records.push(TraceRecord {
                        task,
                        layer,
                        relation: Some(r),
                        kind: TraceKind::Beta,
                        node,
                        neighbor: None,
                        source: None,
                        head: 0,
                        weight: to_f64(w),
                    });
                }
            }
            Pending::Gate { task, layer, relation, nodes, var } => {
                let m = tape.value(var);
                for (i, &node) in nodes.iter().enumerate() {
                    for (j, &w) in m.row(i).iter().enumerate() {
                        records.push(TraceRecord {
                            task,
                            layer,
                            relation,
                            kind: TraceKind::Gate,
                            node,
                            neighbor: None,
                            source: Some(j),
                            head: 0,
                            weight: to_f64(w),
                        });
                    }
                }
            }
        }
    }
    AttentionTrace {
        relation_names: model.schema.relations.iter().map(|r| r.name.clone()).collect(),
        backbone_names: model.backbones(),
        records,
    }
}

/// Node indices and labels of the given target entries of `task`.
pub fn task_labels(graph: &HeteroGraph, task: usize, entries: &[usize]) -> (Vec<usize>, Vec<Label>) {
    entries
        .iter()
        .map(|&i| {
            let t = &graph.targets[task][i];
            (t.node.index, t.label.clone())
        })
        .unzip()
}

/// Weighted sum over tasks of the mean task loss: softmax cross entropy for
/// single-label tasks, binary cross entropy over all classes for
/// multi-label tasks. Tasks without logits or labels contribute nothing.
pub fn loss<F: Real>(
    tape: &mut Tape<F>,
    model: &Model,
    logits: &[Option<Var>],
    labels: &[Vec<Label>],
) -> Result<Var, ModelError> {
    let mut total: Option<Var> = None;
    for (t, spec) in model.schema.tasks.iter().enumerate() {
        let (Some(z), Some(y)) = (logits.get(t).copied().flatten(), labels.get(t)) else { continue };
        if y.is_empty() {
            continue;
        }
        let term = match spec.kind {
            TaskKind::SingleLabel => {
                let ys = y
                    .iter()
                    .map(|l| match l {
                        Label::Single(c) => Ok(*c),
                        Label::Multi(_) => Err(ModelError::Config(format!("task `{}` expects single labels", spec.name))),
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                tape.cross_entropy(z, &ys)?
            }
            TaskKind::MultiLabel => {
                let c = spec.num_classes;
                let mut flat = vec![0u8; y.len() * c];
                for (i, l) in y.iter().enumerate() {
                    let Label::Multi(set) = l else {
                        return Err(ModelError::Config(format!("task `{}` expects label sets", spec.name)));
                    };
                    for &k in set {
                        if k >= c {
                            return Err(ModelError::Config(format!("class {k} out of range in task `{}`", spec.name)));
                        }
                        flat[i * c + k] = 1;
                    }
                }
                tape.binary_cross_entropy(z, &flat)?
            }
        };
        let w = model.task_weight(t);
        let term = if w == 1.0 { term } else { tape.scale(term, w) };
        total = Some(match total {
            None => term,
            Some(acc) => tape.add(acc, term)?,
        });
    }
    Ok(match total {
        Some(v) => v,
        None => tape.constant(Mat::zeros(1, 1)),
    })
}
