use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::graph::{split_targets, EdgeList, Label, NodeRef, NodeTypeInfo, RelationSchema, Target, TaskKind, TaskSpec};
use crate::model::{ModelConfig, ModelSchema, Variant};
use crate::tensor::Mat;

/// `n` items whose label is the sign of their first feature, each with two
/// user neighbors carrying noise.
fn separable(n: usize, seed: u64) -> HeteroGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let users = 10;
    let mut items = Mat::zeros(n, 2);
    let mut targets = Vec::new();
    let mut edges = EdgeList::default();
    for i in 0..n {
        let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
        items.set(i, 0, sign * rng.gen_range(0.5..1.5));
        items.set(i, 1, rng.gen_range(-1.0..1.0));
        targets.push(Target { node: NodeRef { node_type: 0, index: i }, label: Label::Single((sign > 0.0) as usize) });
        for k in 0..2 {
            edges.src.push((i + 3 * k) % users);
            edges.dst.push(i);
        }
    }
    let user_x = Mat::from_vec(users, 2, (0..users * 2).map(|_| rng.gen_range(-1.0..1.0)).collect());
    let mut g = HeteroGraph {
        node_types: vec![
            NodeTypeInfo { name: "item".into(), feature_dim: 2, count: n },
            NodeTypeInfo { name: "user".into(), feature_dim: 2, count: users },
        ],
        node_features: vec![items, user_x],
        relations: vec![RelationSchema { edge_type_id: 0, name: "rated".into(), src_type: 1, dst_type: 0, edge_feature_dim: 0 }],
        edges: vec![edges],
        tasks: vec![TaskSpec { task_id: 0, name: "sign".into(), target_node_type: 0, kind: TaskKind::SingleLabel, num_classes: 2 }],
        targets: vec![targets],
    };
    g.canonicalize();
    g
}

fn config(full: bool) -> TrainConfig {
    TrainConfig {
        max_epochs: 50,
        patience: 50,
        lr_grid: vec![1e-2],
        wd_grid: vec![0.0],
        batch_targets: 16,
        pos_ratio: 0.5,
        hop_budgets: HopBudgets::Uniform(vec![2, 2]),
        eval_metric: EvalMetric::MacroF1,
        selection_task: Selection::Mean,
        seed: 3,
        full_graph: full,
        steps_per_epoch: 1,
        precision: Precision::Single,
    }
}

fn model_for(g: &HeteroGraph, seed: u64) -> Model {
    let mut c = ModelConfig::new(Variant::Stl, 2, 8);
    c.seed = seed;
    Model::new(c, ModelSchema::of(g)).unwrap()
}

/// Stop epoch straight from the definition: the first epoch whose distance
/// to the earliest best-so-far epoch reaches `patience`, capped at
/// `max_epochs`.
fn reference_stop(scores: &[f64], patience: usize, max_epochs: usize) -> (usize, usize) {
    let mut best = 0;
    for e in 1..=max_epochs {
        if best == 0 || scores[e - 1] > scores[best - 1] {
            best = e;
        }
        if e - best >= patience {
            return (e, best);
        }
    }
    (max_epochs, best)
}

#[test]
fn stub_scores_plateau() {
    let scores = [1.0, 2.0, 3.0, 3.0, 3.0, 3.0, 3.0];
    assert_eq!(early_stop_trace(&scores, 2, 100), (5, 3));
}

#[test]
fn monotone_scores_run_to_the_cap() {
    let scores: Vec<f64> = (1..=20).map(f64::from).collect();
    assert_eq!(early_stop_trace(&scores, 3, 10), (10, 10));
}

#[test]
fn state_tracks_distance_to_best() {
    let mut s = TrainState::default();
    for x in [0.5, 0.7, 0.6, 0.6] {
        s.observe(x, 10, 100);
        assert_eq!(s.epochs_since_best, s.epoch - s.best_epoch);
    }
    assert_eq!((s.best_epoch, s.best_val_score), (2, 0.7));
}

proptest! {
    #[test]
    fn early_stopping_matches_reference(
        scores in prop::collection::vec(0..6u8, 1..120),
        patience in 1..45usize,
    ) {
        let scores: Vec<f64> = scores.into_iter().map(f64::from).collect();
        let max_epochs = scores.len();
        prop_assert_eq!(early_stop_trace(&scores, patience, max_epochs), reference_stop(&scores, patience, max_epochs));
    }
}

#[test]
fn grid_selection_rules() {
    assert_eq!(select_cell(&[(1e-3, 0.0, 0.4)]), Some(0));
    assert_eq!(select_cell(&[(0.01, 0.0, 0.8), (0.001, 0.0, 0.8)]), Some(1));
    assert_eq!(select_cell(&[(0.001, 1e-3, 0.8), (0.001, 0.0, 0.8)]), Some(1));
    let cells = [(0.01, 0.0, 0.5), (0.01, 1e-4, 0.9), (0.001, 0.0, 0.7), (0.001, 1e-4, 0.6)];
    assert_eq!(select_cell(&cells), Some(1));
    assert_eq!(select_cell(&[(0.01, 0.0, f64::NAN), (0.1, 0.0, 0.1)]), Some(1));
    assert_eq!(select_cell(&[]), None);
}

#[test]
fn selection_parses_mean_or_id() {
    assert_eq!(serde_json::from_str::<Selection>("\"mean\"").unwrap(), Selection::Mean);
    assert_eq!(serde_json::from_str::<Selection>("1").unwrap(), Selection::Task(1));
    assert!(serde_json::from_str::<Selection>("\"best\"").is_err());
    assert_eq!(serde_json::to_string(&Selection::Task(2)).unwrap(), "2");
}

#[test]
fn budgets_resolve_per_type() {
    let g = separable(10, 0);
    assert_eq!(HopBudgets::Uniform(vec![3, 1]).resolve(&g, 2).unwrap(), vec![vec![3, 1], vec![3, 1]]);
    let m: BTreeMap<String, Vec<usize>> = [("item".to_string(), vec![1]), ("user".to_string(), vec![4])].into();
    assert_eq!(HopBudgets::PerType(m.clone()).resolve(&g, 1).unwrap(), vec![vec![1], vec![4]]);
    assert!(HopBudgets::PerType(m).resolve(&g, 2).is_err());
    let partial: BTreeMap<String, Vec<usize>> = [("item".to_string(), vec![1])].into();
    assert!(HopBudgets::PerType(partial).resolve(&g, 1).is_err());
}

#[test]
fn presets_carry_standard_settings() {
    assert_eq!(Preset::Academic.model_dims(), (3, 64));
    assert_eq!(Preset::Logistics.model_dims(), (4, 128));
    for p in [Preset::Academic, Preset::Logistics] {
        let c = p.train_config();
        assert_eq!(c.patience, 40);
        assert_eq!(c.lr_grid, DEFAULT_LR_GRID);
        assert_eq!(c.wd_grid, DEFAULT_WD_GRID);
    }
}

#[test]
fn loss_halves_on_separable_graph() {
    for seed in 0..3 {
        let g = separable(40, seed);
        let split = split_targets(&g, (0.6, 0.2, 0.2), seed).unwrap();
        let out = train(&g, &split, &model_for(&g, seed), &config(true), 1e-2, 0.0).unwrap();
        let first = out.log[0].train_loss;
        let last = out.log.last().unwrap().train_loss;
        assert!(last < 0.5 * first, "seed {seed}: {first} -> {last}");
    }
}

#[test]
fn sampled_training_is_deterministic_and_keeps_best_epoch() {
    let g = separable(40, 7);
    let split = split_targets(&g, (0.6, 0.2, 0.2), 1).unwrap();
    let mut cfg = config(false);
    cfg.max_epochs = 12;
    let m = model_for(&g, 1);
    let a = train(&g, &split, &m, &cfg, 1e-2, 1e-4).unwrap();
    let b = train(&g, &split, &m, &cfg, 1e-2, 1e-4).unwrap();
    let strip = |o: &TrainOutcome| o.log.iter().map(|r| EpochRecord { seconds: 0.0, ..r.clone() }).collect::<Vec<_>>();
    assert_eq!(strip(&a), strip(&b));
    assert_eq!(a.params.to_bytes(), b.params.to_bytes());

    // the returned parameters reproduce the best epoch's validation report
    let budgets = cfg.hop_budgets.resolve(&g, 2).unwrap();
    let val_budgets: Vec<Vec<usize>> = budgets.iter().map(|b| b.iter().map(|x| x * 4).collect()).collect();
    let p32: ParamStore<f32> = a.params.cast();
    let again = evaluate(&m, &p32, &g, &split, SplitPart::Val, Some(&val_budgets), cfg.seed).unwrap();
    let best = a.best_record().unwrap();
    assert_eq!(again, best.val);
    let max = a.log.iter().map(|r| r.val_score).fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(best.val_score, max);
    assert_eq!(a.log.iter().position(|r| r.val_score == max).unwrap() + 1, a.state.best_epoch);
}

#[test]
fn non_finite_loss_aborts_with_epoch_and_lr() {
    let mut g = separable(20, 2);
    g.node_features[0].set(0, 0, f64::NAN);
    let split = split_targets(&g, (0.6, 0.2, 0.2), 0).unwrap();
    let err = train(&g, &split, &model_for(&g, 0), &config(true), 0.5, 0.0).unwrap_err();
    assert!(matches!(err, TrainError::NonFinite { epoch: 1, lr, .. } if lr == 0.5), "{err}");
    assert!(err.to_string().contains("epoch 1"));
}

#[test]
fn grid_search_returns_selected_cell() {
    let g = separable(30, 4);
    let split = split_targets(&g, (0.6, 0.2, 0.2), 0).unwrap();
    let mut cfg = config(true);
    cfg.max_epochs = 5;
    cfg.lr_grid = vec![1e-2, 1e-3];
    cfg.wd_grid = vec![0.0];
    let m = model_for(&g, 0);
    let r = grid_search(&g, &split, &m, &cfg).unwrap();
    assert_eq!(r.cells.len(), 2);
    let keys: Vec<_> = r.cells.iter().map(|c| (c.lr, c.wd, c.best_val_score)).collect();
    assert_eq!(Some(r.best), select_cell(&keys));
    assert_eq!(r.outcome.lr, r.cells[r.best].lr);
}

#[test]
fn config_checks() {
    let g = separable(10, 0);
    let m = model_for(&g, 0);
    let mut c = config(false);
    c.patience = 0;
    assert!(c.check(&m).is_err());
    let mut c = config(false);
    c.lr_grid.clear();
    assert!(c.check(&m).is_err());
    let mut c = config(false);
    c.selection_task = Selection::Task(3);
    assert!(c.check(&m).is_err());
    let json = r#"{"max_epochs":3,"patience":1,"lr_grid":[0.01],"wd_grid":[0],"batch_targets":4,"pos_ratio":0.5,
        "hop_budgets":[2,2],"eval_metric":"auc","selection_task":"mean","learning_rate":1}"#;
    assert!(serde_json::from_str::<TrainConfig>(json).is_err());
}

#[test]
fn log_is_one_json_object_per_line() {
    let g = separable(20, 0);
    let split = split_targets(&g, (0.6, 0.2, 0.2), 0).unwrap();
    let mut cfg = config(true);
    cfg.max_epochs = 3;
    let out = train(&g, &split, &model_for(&g, 0), &cfg, 1e-2, 0.0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("log.jsonl");
    write_log(&out.log, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 3);
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        for key in ["epoch", "train_loss", "val", "lr", "wd", "seconds"] {
            assert!(v.get(key).is_some(), "{key}");
        }
    }
}
