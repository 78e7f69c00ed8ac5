//! Straight-line dense forward pass with explicit loops over nodes, edges
//! and relations. Parameters are read by path; nothing from the model's
//! layer code is reused.

use struchis::graph::HeteroGraph;
use struchis::model::{Model, Variant};
use struchis::params::ParamStore;

type Rows = Vec<Vec<f64>>;

fn mat(p: &ParamStore<f64>, name: &str) -> Rows {
    let m = p.by_name(name).unwrap_or_else(|| panic!("missing {name}"));
    (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
}

fn vector(p: &ParamStore<f64>, name: &str) -> Vec<f64> {
    p.by_name(name).unwrap_or_else(|| panic!("missing {name}")).data().to_vec()
}

fn vecmat(x: &[f64], w: &Rows) -> Vec<f64> {
    let cols = w[0].len();
    let mut out = vec![0.0; cols];
    for (i, xi) in x.iter().enumerate() {
        for j in 0..cols {
            out[j] += xi * w[i][j];
        }
    }
    out
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn leaky(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

fn softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

/// Logits of every labeled target, per task, in target-list order. Covers
/// the gated model (any sharing mask) and the single-backbone variants.
pub fn logits(model: &Model, p: &ParamStore<f64>, g: &HeteroGraph) -> Vec<Option<Rows>> {
    let c = &model.config;
    let d = c.hidden_dim;
    let heads = c.attention_heads;
    let dh = d / heads;
    let tasks = g.tasks.len();
    let backbones: Vec<String> = match c.variant {
        Variant::Struchis => (0..tasks).map(|t| format!("task{t}")).collect(),
        Variant::Stl => vec![format!("task{}", c.stl_task)],
        Variant::SharedBackbone => vec!["task0".into()],
        v => panic!("oracle does not cover {v:?}"),
    };
    let nb = backbones.len();
    let mask = c.layer_share_mask.clone().unwrap_or_else(|| vec![true; c.num_layers]);

    // h[b][type][node]
    let mut h: Vec<Vec<Rows>> = Vec::new();
    let mut he: Vec<Vec<Rows>> = Vec::new();
    for pre in &backbones {
        let mut hb = Vec::new();
        for (ty, info) in g.node_types.iter().enumerate() {
            let w = mat(p, &format!("{pre}/proj/node_w/{}", info.name));
            let b = vector(p, &format!("{pre}/proj/node_b/{}", info.name));
            let x = &g.node_features[ty];
            hb.push((0..info.count).map(|v| add(&vecmat(x.row(v), &w), &b)).collect());
        }
        let mut eb = Vec::new();
        for (r, rel) in g.relations.iter().enumerate() {
            let edges = &g.edges[r];
            let rows: Rows = match &edges.features {
                Some(xe) if rel.edge_feature_dim > 0 => {
                    let w = mat(p, &format!("{pre}/proj/edge_w/{}", rel.name));
                    let b = vector(p, &format!("{pre}/proj/edge_b/{}", rel.name));
                    (0..edges.len()).map(|e| add(&vecmat(xe.row(e), &w), &b)).collect()
                }
                _ => {
                    let k = vector(p, &format!("{pre}/proj/edge_const/{}", rel.name));
                    vec![k; edges.len()]
                }
            };
            eb.push(rows);
        }
        h.push(hb);
        he.push(eb);
    }

    for l in 1..=c.num_layers {
        // emb[b][r][dst] for destinations with at least one edge
        let mut emb: Vec<Vec<Vec<Option<Vec<f64>>>>> = Vec::new();
        for (b, pre) in backbones.iter().enumerate() {
            let mut per_rel = Vec::new();
            for (r, rel) in g.relations.iter().enumerate() {
                let edges = &g.edges[r];
                let w_mes = mat(p, &format!("{pre}/layer{l}/mes_w/{}", rel.name));
                let w = mat(p, &format!("{pre}/layer{l}/ragg_w/{}", rel.name));
                let a = vector(p, &format!("{pre}/layer{l}/ragg_a/{}", rel.name));
                let mut out = vec![None; g.node_types[rel.dst_type].count];
                for (v, slot) in out.iter_mut().enumerate() {
                    let es: Vec<usize> = (0..edges.len()).filter(|&e| edges.dst[e] == v).collect();
                    if es.is_empty() {
                        continue;
                    }
                    let mut row = vec![0.0; d];
                    for k in 0..heads {
                        let wa: Vec<f64> = (0..3 * d).map(|i| (0..dh).map(|j| w[i][k * dh + j] * a[k * dh + j]).sum()).collect();
                        let scores: Vec<f64> = es
                            .iter()
                            .map(|&e| {
                                let u = edges.src[e];
                                let mut cat = h[b][rel.dst_type][v].clone();
                                cat.extend_from_slice(&h[b][rel.src_type][u]);
                                cat.extend_from_slice(&he[b][r][e]);
                                let s = dot(&cat, &wa);
                                if c.attention_leaky {
                                    leaky(s, 0.2)
                                } else {
                                    s
                                }
                            })
                            .collect();
                        let alpha = softmax(&scores);
                        for (&e, al) in es.iter().zip(&alpha) {
                            let msg = vecmat(&h[b][rel.src_type][edges.src[e]], &w_mes);
                            for j in k * dh..(k + 1) * dh {
                                row[j] += al * msg[j];
                            }
                        }
                    }
                    *slot = Some(row);
                }
                per_rel.push(out);
            }
            emb.push(per_rel);
        }

        let gated = c.variant == Variant::Struchis && mask[l - 1];
        let mut next = Vec::new();
        for (b, pre) in backbones.iter().enumerate() {
            let w_agg = mat(p, &format!("{pre}/layer{l}/agg_w"));
            let b_agg = vector(p, &format!("{pre}/layer{l}/agg_b"));
            let wb: Vec<f64> = (0..2 * d).map(|i| dot(&w_agg[i], &b_agg)).collect();
            let mut hb = Vec::new();
            for (ty, info) in g.node_types.iter().enumerate() {
                let mut rows = Vec::new();
                for v in 0..info.count {
                    let hv = &h[b][ty][v];
                    let rels: Vec<usize> =
                        (0..g.relations.len()).filter(|&r| g.relations[r].dst_type == ty && emb[b][r][v].is_some()).collect();
                    if rels.is_empty() {
                        rows.push(hv.iter().map(|&x| leaky(x, 0.01)).collect());
                        continue;
                    }
                    let scores: Vec<f64> = rels
                        .iter()
                        .map(|&r| {
                            let mut cat = hv.clone();
                            cat.extend_from_slice(emb[b][r][v].as_ref().unwrap());
                            dot(&cat, &wb)
                        })
                        .collect();
                    let beta = softmax(&scores);
                    let mut agg = vec![0.0; d];
                    for (&r, be) in rels.iter().zip(&beta) {
                        let summand = if gated {
                            let name = &g.relations[r].name;
                            let gw = mat(p, &format!("task{b}/layer{l}/gate_w/{name}"));
                            let gb = vector(p, &format!("task{b}/layer{l}/gate_b/{name}"));
                            let gate = softmax(&add(&vecmat(hv, &gw), &gb));
                            let mut mix = vec![0.0; d];
                            for (j, gj) in gate.iter().enumerate() {
                                for (m, x) in mix.iter_mut().zip(emb[j][r][v].as_ref().unwrap()) {
                                    *m += gj * x;
                                }
                            }
                            mix
                        } else {
                            emb[b][r][v].clone().unwrap()
                        };
                        for (a, x) in agg.iter_mut().zip(&summand) {
                            *a += be * x;
                        }
                    }
                    rows.push(add(&agg, hv).into_iter().map(|x| leaky(x, 0.01)).collect());
                }
                hb.push(rows);
            }
            next.push(hb);
        }
        h = next;
        debug_assert_eq!(h.len(), nb);
    }

    let active: Vec<usize> = if c.variant == Variant::Stl { vec![c.stl_task] } else { (0..tasks).collect() };
    let mut out = vec![None; tasks];
    for t in active {
        let b = if c.variant == Variant::Struchis { t } else { 0 };
        let ty = g.tasks[t].target_node_type;
        let mut rows = Vec::new();
        for target in &g.targets[t] {
            let mut z = h[b][ty][target.node.index].clone();
            for k in 1..=c.head_hidden_layers {
                let w = mat(p, &format!("head{t}/hidden{k}/w"));
                let bias = vector(p, &format!("head{t}/hidden{k}/b"));
                z = add(&vecmat(&z, &w), &bias).into_iter().map(|x| x.max(0.0)).collect();
            }
            let w = mat(p, &format!("head{t}/out/w"));
            let bias = vector(p, &format!("head{t}/out/b"));
            rows.push(add(&vecmat(&z, &w), &bias));
        }
        out[t] = Some(rows);
    }
    out
}
