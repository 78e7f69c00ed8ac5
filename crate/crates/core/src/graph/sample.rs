//! Budgeted hop-by-hop neighbor sampling with positive-ratio target draws.
//!
//! Neighbor draws use one seeded permutation per `(relation, node)`; a hop
//! takes a prefix of it. Raising any budget therefore only extends
//! prefixes, and the sampled node set grows monotonically.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{EdgeList, GraphError, HeteroGraph, NodeTypeInfo, SplitAssignment, Target};
use crate::seed::derive_seed;
use crate::tensor::Mat;

#[derive(Debug, Clone)]
pub struct SamplingRequest<'a> {
    pub batch_targets: usize,
    pub pos_ratio: f64,
    /// `hop_budgets[node_type][hop]`: neighbors of that type kept per
    /// `(node, relation)` at each hop. All lists share the hop count.
    pub hop_budgets: &'a [Vec<usize>],
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampledGraph {
    pub graph: HeteroGraph,
    /// `original[node_type][new index]` = index in the source graph.
    pub original: Vec<Vec<usize>>,
}

/// Draws `round(batch·pos_ratio)` positive and the rest negative training
/// targets of `task` (indices into `graph.targets[task]`). Each class is
/// drawn without replacement while it lasts, with replacement otherwise.
pub fn sample_targets(
    graph: &HeteroGraph,
    task: usize,
    split: &SplitAssignment,
    batch_targets: usize,
    pos_ratio: f64,
    seed: u64,
) -> Result<Vec<usize>, GraphError> {
    if !(pos_ratio > 0.0 && pos_ratio < 1.0) {
        return Err(GraphError::Sampling(format!("pos_ratio {pos_ratio} must lie in (0, 1)")));
    }
    let targets = &graph.targets[task];
    let (pos, neg): (Vec<usize>, Vec<usize>) =
        split.task(task).train.iter().partition(|&&i| targets[i].label.is_positive());
    let name = graph.tasks[task].name.clone();
    if pos.is_empty() {
        return Err(GraphError::LabelStarvation { task: name, class: "positive" });
    }
    if neg.is_empty() {
        return Err(GraphError::LabelStarvation { task: name, class: "negative" });
    }
    let n_pos = (batch_targets as f64 * pos_ratio).round() as usize;
    let n_neg = batch_targets - n_pos.min(batch_targets);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &["targets", &task.to_string()]));
    let mut out = draw(&pos, n_pos, &mut rng);
    out.extend(draw(&neg, n_neg, &mut rng));
    Ok(out)
}

fn draw(pool: &[usize], k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if k <= pool.len() {
        let mut p = pool.to_vec();
        p.shuffle(rng);
        p.truncate(k);
        p
    } else {
        (0..k).map(|_| pool[rng.gen_range(0..pool.len())]).collect()
    }
}

/// Expands the seed targets hop by hop under `hop_budgets` and returns the
/// induced subgraph. `seeds[task]` lists target entries of each task; they
/// become the subgraph's targets (repeats kept).
pub fn induce_subgraph(
    graph: &HeteroGraph,
    seeds: &[Vec<usize>],
    hop_budgets: &[Vec<usize>],
    seed: u64,
) -> Result<SampledGraph, GraphError> {
    let nt = graph.num_node_types();
    if hop_budgets.len() != nt {
        return Err(GraphError::Sampling(format!("hop_budgets has {} entries for {nt} node types", hop_budgets.len())));
    }
    let hops = hop_budgets.first().map_or(0, Vec::len);
    if hop_budgets.iter().any(|b| b.len() != hops) {
        return Err(GraphError::Sampling("hop_budgets lists differ in length".into()));
    }
    if seeds.len() != graph.num_tasks() {
        return Err(GraphError::Sampling("one seed list per task required".into()));
    }

    let mut member: Vec<Vec<bool>> = graph.node_types.iter().map(|t| vec![false; t.count]).collect();
    for (task, list) in seeds.iter().enumerate() {
        for &i in list {
            let node = graph.targets[task][i].node;
            member[node.node_type][node.index] = true;
        }
    }

    let neighbors: Vec<Vec<Vec<(usize, usize)>>> = (0..graph.num_relations()).map(|r| graph.in_neighbors(r)).collect();
    let incoming: Vec<Vec<usize>> = (0..nt).map(|t| graph.incoming_relations(t)).collect();
    let mut perms: HashMap<(usize, usize), Vec<usize>> = HashMap::new();

    for hop in 0..hops {
        let mut next = member.clone();
        for (t, rels) in incoming.iter().enumerate() {
            for v in (0..graph.node_count(t)).filter(|&v| member[t][v]) {
                for &r in rels {
                    let list = &neighbors[r][v];
                    let src_type = graph.relations[r].src_type;
                    let budget = hop_budgets[src_type][hop];
                    if budget == 0 || list.is_empty() {
                        continue;
                    }
                    if budget >= list.len() {
                        for &(u, _) in list {
                            next[src_type][u] = true;
                        }
                        continue;
                    }
                    let perm = perms.entry((r, v)).or_insert_with(|| {
                        let mut p: Vec<usize> = (0..list.len()).collect();
                        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &["hop", &r.to_string(), &v.to_string()]));
                        p.shuffle(&mut rng);
                        p
                    });
                    for &k in &perm[..budget] {
                        next[src_type][list[k].0] = true;
                    }
                }
            }
        }
        member = next;
    }

    let mut remap: Vec<Vec<Option<usize>>> = Vec::with_capacity(nt);
    let mut original = Vec::with_capacity(nt);
    for m in &member {
        let mut map = vec![None; m.len()];
        let mut orig = Vec::new();
        for (i, &keep) in m.iter().enumerate() {
            if keep {
                map[i] = Some(orig.len());
                orig.push(i);
            }
        }
        remap.push(map);
        original.push(orig);
    }

    let node_types: Vec<NodeTypeInfo> = graph
        .node_types
        .iter()
        .zip(&original)
        .map(|(t, o)| NodeTypeInfo { name: t.name.clone(), feature_dim: t.feature_dim, count: o.len() })
        .collect();
    let node_features = graph
        .node_features
        .iter()
        .zip(&original)
        .map(|(x, o)| {
            let mut m = Mat::zeros(o.len(), x.cols());
            for (new, &old) in o.iter().enumerate() {
                m.row_mut(new).copy_from_slice(x.row(old));
            }
            m
        })
        .collect();

    let mut edges = Vec::with_capacity(graph.num_relations());
    for (r, rel) in graph.relations.iter().enumerate() {
        let src = &graph.edges[r];
        let mut out = EdgeList::default();
        let mut feats = Vec::new();
        for e in 0..src.len() {
            if let (Some(s), Some(d)) = (remap[rel.src_type][src.src[e]], remap[rel.dst_type][src.dst[e]]) {
                out.src.push(s);
                out.dst.push(d);
                if let Some(f) = &src.features {
                    feats.extend_from_slice(f.row(e));
                }
            }
        }
        if rel.has_edge_features() {
            out.features = Some(Mat::from_vec(out.len(), rel.edge_feature_dim, feats));
        }
        edges.push(out);
    }

    let targets = seeds
        .iter()
        .enumerate()
        .map(|(task, list)| {
            list.iter()
                .map(|&i| {
                    let t = &graph.targets[task][i];
                    let mut node = t.node;
                    node.index = remap[node.node_type][node.index].expect("seed node is a member");
                    Target { node, label: t.label.clone() }
                })
                .collect()
        })
        .collect();

    let mut sub = HeteroGraph {
        node_types,
        node_features,
        relations: graph.relations.clone(),
        edges,
        tasks: graph.tasks.clone(),
        targets,
    };
    sub.canonicalize();
    Ok(SampledGraph { graph: sub, original })
}

/// Samples a training subgraph for one task: positive-ratio target draw,
/// then budgeted expansion. Other tasks get no targets.
pub fn sample_subgraph(
    graph: &HeteroGraph,
    task: usize,
    split: &SplitAssignment,
    request: &SamplingRequest<'_>,
) -> Result<SampledGraph, GraphError> {
    let picked = sample_targets(graph, task, split, request.batch_targets, request.pos_ratio, request.seed)?;
    let mut seeds = vec![Vec::new(); graph.num_tasks()];
    seeds[task] = picked;
    induce_subgraph(graph, &seeds, request.hop_budgets, request.seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{split_targets, validate, Label, NodeRef, RelationSchema, TaskKind, TaskSpec};
    use std::collections::{BTreeSet, VecDeque};

    /// Targets `t` ×20 with alternating labels; `a` ×12 and `b` ×8 with
    /// relations a→t, b→a, b→t and a→a, deterministic pseudo-random edges.
    fn layered() -> HeteroGraph {
        let mut edges = vec![EdgeList::default(), EdgeList::default(), EdgeList::default(), EdgeList::default()];
        let mut add = |r: usize, s: usize, d: usize| {
            edges[r].src.push(s);
            edges[r].dst.push(d);
        };
        for d in 0..20 {
            for k in 0..4 {
                add(0, (d * 5 + k * 3) % 12, d);
            }
            if d % 3 == 0 {
                add(2, (d * 7) % 8, d);
            }
        }
        for d in 0..12 {
            add(1, d % 8, d);
            add(1, (d + 3) % 8, d);
            add(3, (d + 1) % 12, d);
        }
        let mut g = HeteroGraph {
            node_types: vec![
                NodeTypeInfo { name: "t".into(), feature_dim: 1, count: 20 },
                NodeTypeInfo { name: "a".into(), feature_dim: 1, count: 12 },
                NodeTypeInfo { name: "b".into(), feature_dim: 1, count: 8 },
            ],
            node_features: vec![Mat::zeros(20, 1), Mat::zeros(12, 1), Mat::zeros(8, 1)],
            relations: vec![
                RelationSchema { edge_type_id: 0, name: "a_t".into(), src_type: 1, dst_type: 0, edge_feature_dim: 0 },
                RelationSchema { edge_type_id: 1, name: "b_a".into(), src_type: 2, dst_type: 1, edge_feature_dim: 0 },
                RelationSchema { edge_type_id: 2, name: "b_t".into(), src_type: 2, dst_type: 0, edge_feature_dim: 0 },
                RelationSchema { edge_type_id: 3, name: "a_a".into(), src_type: 1, dst_type: 1, edge_feature_dim: 0 },
            ],
            edges,
            tasks: vec![TaskSpec { task_id: 0, name: "y".into(), target_node_type: 0, kind: TaskKind::SingleLabel, num_classes: 2 }],
            targets: vec![(0..20)
                .map(|i| Target { node: NodeRef { node_type: 0, index: i }, label: Label::Single(i % 2) })
                .collect()],
        };
        // dedupe then sort
        for e in &mut g.edges {
            let set: BTreeSet<(usize, usize)> = e.dst.iter().zip(&e.src).map(|(&d, &s)| (d, s)).collect();
            e.dst = set.iter().map(|p| p.0).collect();
            e.src = set.iter().map(|p| p.1).collect();
        }
        assert!(validate(&g).is_clean());
        g
    }

    fn bfs_closure(g: &HeteroGraph, seeds: &[usize], hops: usize) -> Vec<BTreeSet<usize>> {
        let mut seen: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); g.num_node_types()];
        let mut queue = VecDeque::new();
        for &s in seeds {
            let n = g.targets[0][s].node;
            if seen[n.node_type].insert(n.index) {
                queue.push_back((n.node_type, n.index, 0));
            }
        }
        while let Some((t, v, d)) = queue.pop_front() {
            if d == hops {
                continue;
            }
            for (r, rel) in g.relations.iter().enumerate() {
                if rel.dst_type != t {
                    continue;
                }
                for e in 0..g.edges[r].len() {
                    if g.edges[r].dst[e] == v && seen[rel.src_type].insert(g.edges[r].src[e]) {
                        queue.push_back((rel.src_type, g.edges[r].src[e], d + 1));
                    }
                }
            }
        }
        seen
    }

    #[test]
    fn zero_budgets_keep_only_targets() {
        let g = layered();
        let split = split_targets(&g, (0.6, 0.2, 0.2), 1).unwrap();
        let budgets = vec![vec![0, 0]; 3];
        let s = sample_subgraph(&g, 0, &split, &SamplingRequest { batch_targets: 6, pos_ratio: 0.5, hop_budgets: &budgets, seed: 3 }).unwrap();
        assert_eq!(s.graph.edge_count(), 0);
        assert_eq!(s.graph.node_count(1) + s.graph.node_count(2), 0);
        let distinct: BTreeSet<_> = s.graph.targets[0].iter().map(|t| t.node).collect();
        assert_eq!(s.graph.node_count(0), distinct.len());
    }

    #[test]
    fn positive_count_follows_ratio() {
        let g = layered();
        let split = split_targets(&g, (0.6, 0.2, 0.2), 1).unwrap();
        let budgets = vec![vec![1, 1]; 3];
        let s = sample_subgraph(&g, 0, &split, &SamplingRequest { batch_targets: 10, pos_ratio: 0.5, hop_budgets: &budgets, seed: 8 }).unwrap();
        assert_eq!(s.graph.targets[0].len(), 10);
        assert_eq!(s.graph.targets[0].iter().filter(|t| t.label.is_positive()).count(), 5);
    }

    #[test]
    fn full_budgets_match_bfs_closure() {
        let g = layered();
        let budgets = vec![vec![100, 100, 100]; 3];
        let seeds = vec![0usize, 3, 7];
        let s = induce_subgraph(&g, &[seeds.clone()], &budgets, 0).unwrap();
        let oracle = bfs_closure(&g, &seeds, 3);
        for t in 0..3 {
            let got: BTreeSet<usize> = s.original[t].iter().copied().collect();
            assert_eq!(got, oracle[t], "type {t}");
        }
    }

    #[test]
    fn starvation_without_positives() {
        let mut g = layered();
        for t in &mut g.targets[0] {
            t.label = Label::Single(0);
        }
        let split = split_targets(&g, (0.6, 0.2, 0.2), 1).unwrap();
        let budgets = vec![vec![1]; 3];
        let err = sample_subgraph(&g, 0, &split, &SamplingRequest { batch_targets: 4, pos_ratio: 0.5, hop_budgets: &budgets, seed: 0 });
        assert!(matches!(err, Err(GraphError::LabelStarvation { class: "positive", .. })));
    }

    #[test]
    fn deterministic_for_seed() {
        let g = layered();
        let split = split_targets(&g, (0.6, 0.2, 0.2), 5).unwrap();
        let budgets = vec![vec![2, 1]; 3];
        let req = SamplingRequest { batch_targets: 8, pos_ratio: 0.25, hop_budgets: &budgets, seed: 11 };
        assert_eq!(sample_subgraph(&g, 0, &split, &req).unwrap(), sample_subgraph(&g, 0, &split, &req).unwrap());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn sampled_graphs_are_valid_and_ratio_exact(seed in 0u64..1000, batch in 2usize..16, b0 in 0usize..4, b1 in 0usize..4) {
                let g = layered();
                let split = split_targets(&g, (0.6, 0.2, 0.2), seed).unwrap();
                let budgets = vec![vec![b0, b1]; 3];
                let s = sample_subgraph(&g, 0, &split, &SamplingRequest { batch_targets: batch, pos_ratio: 0.5, hop_budgets: &budgets, seed }).unwrap();
                prop_assert!(validate(&s.graph).findings.iter().all(|f| f.kind == crate::graph::FindingKind::DuplicateTarget));
                let pos = s.graph.targets[0].iter().filter(|t| t.label.is_positive()).count();
                prop_assert_eq!(pos, (batch as f64 * 0.5).round() as usize);
            }

            #[test]
            fn raising_budgets_never_removes_nodes(seed in 0u64..1000, lo in proptest::collection::vec(0usize..3, 6), bump in proptest::collection::vec(0usize..3, 6)) {
                let g = layered();
                let small: Vec<Vec<usize>> = lo.chunks(2).map(|c| c.to_vec()).collect();
                let big: Vec<Vec<usize>> = lo.chunks(2).zip(bump.chunks(2)).map(|(a, b)| vec![a[0] + b[0], a[1] + b[1]]).collect();
                let seeds = vec![vec![1usize, 4, 9, 16]];
                let a = induce_subgraph(&g, &seeds, &small, seed).unwrap();
                let b = induce_subgraph(&g, &seeds, &big, seed).unwrap();
                for t in 0..3 {
                    let bs: BTreeSet<usize> = b.original[t].iter().copied().collect();
                    prop_assert!(a.original[t].iter().all(|v| bs.contains(v)));
                }
            }
        }
    }
}
