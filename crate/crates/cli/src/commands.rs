use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use anyhow::{anyhow, Context};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use struchis::autodiff::Tape;
use struchis::experiment::{ablation_arms, bench_time, run_arms, Arm, ExperimentReport, SPLIT};
use struchis::graph::{read_graph_unchecked, split_targets, GraphError, HeteroGraph, SplitPart};
use struchis::metrics::{export_importance, MetricError};
use struchis::model::{forward, task_labels, Batch, Model, ModelConfig, ModelSchema, Variant};
use struchis::params::ParamStore;
use struchis::synth::{generate, write_synth, SynthConfig, SynthPreset};
use struchis::trainer::{evaluate_params, grid_search, write_log, TrainConfig};

use crate::exit::{from_train, Classify, CliError, FINDINGS, OK};
use crate::manifest::RunManifest;

/// Parses a JSON config, reporting the path of the offending field.
pub fn read_json<T: DeserializeOwned>(path: &Path, what: &str) -> Result<T, CliError> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {what} {}", path.display())).or_usage()?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de)
        .map_err(|e| CliError::usage(anyhow!("{what} {}: field `{}`: {}", path.display(), e.path(), e.inner())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("value serializes");
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display())).or_runtime()
}

fn load_graph(dir: &Path) -> Result<HeteroGraph, CliError> {
    struchis::graph::load_graph(dir).map_err(|e| match e {
        GraphError::Invalid(_) => CliError::new(FINDINGS, e),
        _ => CliError::usage(e),
    })
}

/// Worker threads from `STRUCHIS_THREADS`, else the available cores.
pub fn threads() -> Result<usize, CliError> {
    match std::env::var("STRUCHIS_THREADS") {
        Ok(v) => v
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| CliError::usage(anyhow!("STRUCHIS_THREADS must be a positive integer, got `{v}`"))),
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

/// Replaces a seed list by consecutive seeds starting at `base`.
/// Prints `text` as one line; a reader that closed the pipe early is not an
/// error.
fn emit(text: &str) -> Result<(), CliError> {
    match writeln!(io::stdout().lock(), "{text}") {
        Err(e) if e.kind() != io::ErrorKind::BrokenPipe => Err(CliError::runtime(e)),
        _ => Ok(()),
    }
}

fn reseed(seeds: Vec<u64>, base: Option<u64>) -> Vec<u64> {
    match base {
        Some(b) => (0..seeds.len() as u64).map(|i| b + i).collect(),
        None => seeds,
    }
}

pub fn validate(graph_dir: &Path) -> Result<u8, CliError> {
    let mut graph = read_graph_unchecked(graph_dir).or_usage()?;
    graph.canonicalize();
    let report = struchis::graph::validate(&graph);
    for f in &report.findings {
        emit(&f.to_string())?;
    }
    if !report.is_clean() {
        return Ok(FINDINGS);
    }
    println!(
        "ok: {} node types, {} relations, {} edges, {} tasks",
        graph.num_node_types(),
        graph.num_relations(),
        graph.edge_count(),
        graph.num_tasks()
    );
    Ok(OK)
}

pub fn synth(config: Option<&Path>, preset: Option<SynthPreset>, out_dir: &Path, seed: Option<u64>) -> Result<u8, CliError> {
    let mut cfg = match (config, preset) {
        (Some(p), _) => read_json::<SynthConfig>(p, "synth config")?,
        (None, Some(p)) => SynthConfig::preset(p),
        (None, None) => return Err(CliError::usage(anyhow!("give --config or --preset"))),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.check().or_usage()?;
    let outputs = [out_dir.join("schema.json"), out_dir.join("ground_truth.json")];
    let manifest = RunManifest::begin(out_dir, "synth", json!({ "synth": cfg }), cfg.seed, &outputs)?;
    let (graph, truth) = generate(&cfg).or_runtime()?;
    write_synth(&graph, &truth, out_dir).or_runtime()?;
    for t in &truth.tasks {
        println!("{}: {} positives, {} labeled", t.task, t.positives, t.labeled);
    }
    manifest.finish()?;
    Ok(OK)
}

pub struct TrainArgs<'a> {
    pub graph: &'a Path,
    pub model: &'a Path,
    pub train: &'a Path,
    pub out_dir: &'a Path,
    pub seed: Option<u64>,
}

fn read_configs(model: &Path, train: &Path, seed: Option<u64>) -> Result<(ModelConfig, TrainConfig), CliError> {
    let mut mc: ModelConfig = read_json(model, "model config")?;
    let mut tc: TrainConfig = read_json(train, "train config")?;
    if let Some(s) = seed {
        mc.seed = s;
        tc.seed = s;
    }
    Ok((mc, tc))
}

fn build_model(config: ModelConfig, graph: &HeteroGraph, train: &TrainConfig) -> Result<Model, CliError> {
    let model = Model::new(config, ModelSchema::of(graph)).or_usage()?;
    train.check(&model).or_usage()?;
    Ok(model)
}

pub fn train(a: &TrainArgs) -> Result<u8, CliError> {
    let (mc, tc) = read_configs(a.model, a.train, a.seed)?;
    let graph = load_graph(a.graph)?;
    let model = build_model(mc.clone(), &graph, &tc)?;
    let ckpt = a.out_dir.join("checkpoint");
    let outputs = [
        ckpt.join("model.json"),
        ckpt.join("params.bin"),
        ckpt.join("train.json"),
        a.out_dir.join("log.jsonl"),
        a.out_dir.join("grid.json"),
        a.out_dir.join("metrics.json"),
    ];
    let snapshot = json!({ "graph": a.graph.display().to_string(), "model": mc, "train": tc });
    let manifest = RunManifest::begin(a.out_dir, "train", snapshot, tc.seed, &outputs)?;

    let split = split_targets(&graph, SPLIT, tc.seed).or_runtime()?;
    let grid = grid_search(&graph, &split, &model, &tc).map_err(from_train)?;
    fs::create_dir_all(&ckpt).or_runtime()?;
    model.save_json(&outputs[0]).or_runtime()?;
    grid.outcome.params.save(&outputs[1]).or_runtime()?;
    write_json(&outputs[2], &tc)?;
    write_log(&grid.outcome.log, &outputs[3]).map_err(from_train)?;
    write_json(&outputs[4], &json!({ "cells": grid.cells, "best": grid.best }))?;
    let report = evaluate_params(&model, &grid.outcome.params, &graph, &split, SplitPart::Test, &tc).map_err(from_train)?;
    report.save(&outputs[5]).or_runtime()?;

    let cell = &grid.cells[grid.best];
    println!("best cell lr={} wd={} epoch {} of {}", cell.lr, cell.wd, cell.best_epoch, cell.epochs);
    for m in &report.tasks {
        println!("test {}: micro_f1 {:.4} macro_f1 {:.4}", m.task, m.micro_f1, m.macro_f1);
    }
    manifest.finish()?;
    Ok(OK)
}

/// A trained model as written by `train`.
struct Checkpoint {
    model: Model,
    params: ParamStore<f64>,
    train: TrainConfig,
}

fn load_checkpoint(dir: &Path, graph: &HeteroGraph) -> Result<Checkpoint, CliError> {
    let model = Model::load_json(dir.join("model.json")).or_usage()?;
    model.schema.check(graph).context("checkpoint does not match the graph").or_usage()?;
    let stored = ParamStore::<f64>::load(dir.join("params.bin")).context("reading params.bin").or_usage()?;
    let mut params = model.init_params::<f64>();
    params.load_from(&stored).context("checkpoint parameters do not match the model").or_usage()?;
    let train = read_json(&dir.join("train.json"), "train config")?;
    Ok(Checkpoint { model, params, train })
}

pub fn evaluate(checkpoint: &Path, graph_dir: &Path, part: SplitPart, out: Option<&Path>) -> Result<u8, CliError> {
    let graph = load_graph(graph_dir)?;
    let c = load_checkpoint(checkpoint, &graph)?;
    let split = split_targets(&graph, SPLIT, c.train.seed).or_runtime()?;
    let report = evaluate_params(&c.model, &c.params, &graph, &split, part, &c.train).map_err(from_train)?;
    match out {
        Some(p) => {
            report.save(p).or_runtime()?;
            for m in &report.tasks {
                println!("{}: micro_f1 {:.4} macro_f1 {:.4}", m.task, m.micro_f1, m.macro_f1);
            }
        }
        None => emit(&report.to_json())?,
    }
    Ok(OK)
}

pub fn importance(checkpoint: &Path, graph_dir: &Path, part: Option<SplitPart>, out: &Path) -> Result<u8, CliError> {
    let graph = load_graph(graph_dir)?;
    let c = load_checkpoint(checkpoint, &graph)?;
    let split = match part {
        Some(_) => Some(split_targets(&graph, SPLIT, c.train.seed).or_runtime()?),
        None => None,
    };
    let mut nodes = vec![Vec::new(); graph.num_tasks()];
    for t in c.model.active_tasks() {
        let entries: Vec<usize> = match (&split, part) {
            (Some(s), Some(p)) => s.task(t).part(p).to_vec(),
            _ => (0..graph.targets[t].len()).collect(),
        };
        nodes[t] = task_labels(&graph, t, &entries).0;
    }
    if nodes.iter().all(Vec::is_empty) {
        return Err(CliError::usage(anyhow!("no target nodes to explain")));
    }
    let mut tape = Tape::new();
    let batch = Batch::<f64>::new(&graph);
    let fwd = forward(&mut tape, &c.model, &c.params, &batch, &nodes, true).or_runtime()?;
    let trace = fwd.trace.expect("trace requested");
    let rows = export_importance(&trace, out).map_err(|e| match e {
        MetricError::EmptyTrace => CliError::usage(anyhow!("targets have no incoming edges, nothing to export")),
        e => CliError::runtime(e),
    })?;
    println!("{rows} importance rows written to {}", out.display());
    Ok(OK)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedPlan {
    pub seeds: Vec<u64>,
}

impl Default for SeedPlan {
    fn default() -> Self {
        Self { seeds: vec![0, 1, 2] }
    }
}

#[derive(Debug, Serialize)]
struct AblationRow<'a> {
    mask: &'a str,
    task: &'a str,
    metric: f64,
}

pub struct AblateArgs<'a> {
    pub graph: &'a Path,
    pub model: &'a Path,
    pub train: &'a Path,
    pub plan: Option<&'a Path>,
    pub out_dir: &'a Path,
    pub seed: Option<u64>,
}

pub fn ablate(a: &AblateArgs) -> Result<u8, CliError> {
    let (base, tc) = read_configs(a.model, a.train, None)?;
    let plan: SeedPlan = match a.plan {
        Some(p) => read_json(p, "seed plan")?,
        None => SeedPlan::default(),
    };
    let seeds = reseed(plan.seeds, a.seed);
    if seeds.is_empty() {
        return Err(CliError::usage(anyhow!("seed plan lists no seeds")));
    }
    let graph = load_graph(a.graph)?;
    let arms = ablation_arms(&base);
    let mut census = BTreeMap::new();
    for arm in &arms {
        census.insert(arm.label.clone(), build_model(arm.model.clone(), &graph, &tc)?.census());
    }
    let outputs = [
        a.out_dir.join("ablation.csv"),
        a.out_dir.join("results.csv"),
        a.out_dir.join("results.json"),
        a.out_dir.join("census.json"),
    ];
    let snapshot = json!({ "graph": a.graph.display().to_string(), "model": base, "train": tc, "seeds": seeds });
    let manifest = RunManifest::begin(a.out_dir, "ablate", snapshot, seeds[0], &outputs)?;

    let rows = run_arms(&graph, &arms, &seeds, &tc, threads()?).map_err(from_train)?;
    let report = ExperimentReport::new(rows);
    report.write(a.out_dir).map_err(from_train)?;
    write_json(&outputs[3], &census)?;

    let mut w = csv::Writer::from_path(&outputs[0]).or_runtime()?;
    for task in graph.tasks.iter().map(|t| t.name.as_str()) {
        for arm in &arms {
            let vals: Vec<f64> =
                report.rows.iter().filter(|r| r.variant == arm.label && r.task == task).map(|r| r.get(tc.eval_metric)).collect();
            if vals.is_empty() {
                continue;
            }
            let metric = vals.iter().sum::<f64>() / vals.len() as f64;
            w.serialize(AblationRow { mask: &arm.label, task, metric }).or_runtime()?;
            println!("{task:12} {:20} {metric:.4}", arm.label);
        }
    }
    w.flush().or_runtime()?;
    manifest.finish()?;
    Ok(OK)
}

/// Synthetic graph: a preset name or a full config.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SynthSource {
    Preset(SynthPreset),
    Config(SynthConfig),
}

impl SynthSource {
    fn config(&self) -> SynthConfig {
        match self {
            SynthSource::Preset(p) => SynthConfig::preset(*p),
            SynthSource::Config(c) => c.clone(),
        }
    }
}

fn default_variants() -> Vec<Variant> {
    vec![Variant::Struchis, Variant::SharedBackbone, Variant::Stl]
}

fn default_seeds() -> Vec<u64> {
    (0..5).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    pub synth: SynthSource,
    #[serde(default = "default_variants")]
    pub variants: Vec<Variant>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
}

pub fn experiment(plan: &Path, model: &Path, train: &Path, out_dir: &Path, seed: Option<u64>) -> Result<u8, CliError> {
    let plan: ExperimentPlan = read_json(plan, "experiment plan")?;
    let (base, tc) = read_configs(model, train, None)?;
    let seeds = reseed(plan.seeds.clone(), seed);
    if seeds.len() < 3 {
        return Err(CliError::usage(anyhow!("an experiment needs at least 3 seeds, got {}", seeds.len())));
    }
    let synth = plan.synth.config();
    synth.check().or_usage()?;
    let outputs = [out_dir.join("results.csv"), out_dir.join("results.json"), out_dir.join("ground_truth.json")];
    let snapshot = json!({ "synth": synth, "variants": plan.variants, "model": base, "train": tc, "seeds": seeds });
    let manifest = RunManifest::begin(out_dir, "experiment", snapshot, seeds[0], &outputs)?;

    let (graph, truth) = generate(&synth).or_runtime()?;
    let arms = Arm::variants(&plan.variants, &base);
    for arm in &arms {
        build_model(arm.model.clone(), &graph, &tc)?;
    }
    let rows = run_arms(&graph, &arms, &seeds, &tc, threads()?).map_err(from_train)?;
    let report = ExperimentReport::new(rows);
    report.write(out_dir).map_err(from_train)?;
    truth.save(&outputs[2]).or_runtime()?;
    for s in &report.summary {
        println!("{:20} {:8} macro_f1 {:.4} ± {:.4}", s.variant, s.task, s.macro_f1_mean, s.macro_f1_std);
    }
    manifest.finish()?;
    Ok(OK)
}

#[derive(Debug, Serialize)]
struct BenchLine {
    variant: String,
    models: usize,
    params: usize,
    epochs: usize,
    seconds_per_epoch: f64,
    ratio_to_struchis: f64,
}

pub struct BenchArgs<'a> {
    pub graph: Option<&'a Path>,
    pub preset: Option<SynthPreset>,
    pub model: &'a Path,
    pub train: &'a Path,
    pub out_dir: &'a Path,
    pub seed: Option<u64>,
}

pub fn bench(a: &BenchArgs) -> Result<u8, CliError> {
    let (base, tc) = read_configs(a.model, a.train, a.seed)?;
    let graph = match a.graph {
        Some(dir) => load_graph(dir)?,
        None => generate(&SynthConfig::preset(a.preset.unwrap_or(SynthPreset::Disjoint))).or_usage()?.0,
    };
    let variants = [
        Variant::Struchis,
        Variant::MoeExperts,
        Variant::SharedBackbone,
        Variant::Stl,
        Variant::AblationNoR,
        Variant::AblationNoRNoL,
    ];
    for &v in &variants {
        build_model(ModelConfig { variant: v, ..base.clone() }, &graph, &tc)?;
    }
    let out = a.out_dir.join("bench_time.csv");
    let source = a.graph.map_or_else(|| format!("{:?}", a.preset.unwrap_or(SynthPreset::Disjoint)), |g| g.display().to_string());
    let snapshot = json!({ "graph": source, "model": base, "train": tc });
    let manifest = RunManifest::begin(a.out_dir, "bench-time", snapshot, tc.seed, &[out.clone()])?;

    let rows = bench_time(&graph, &variants, &base, &tc, tc.max_epochs).map_err(from_train)?;
    let reference = rows[0].seconds_per_epoch;
    let mut w = csv::Writer::from_path(&out).or_runtime()?;
    for r in rows {
        let ratio = r.seconds_per_epoch / reference;
        println!("{:20} {:>8} params {:.4} s/epoch ({ratio:.2}x)", r.variant, r.params, r.seconds_per_epoch);
        w.serialize(BenchLine {
            variant: r.variant,
            models: r.models,
            params: r.params,
            epochs: r.epochs,
            seconds_per_epoch: r.seconds_per_epoch,
            ratio_to_struchis: ratio,
        })
        .or_runtime()?;
    }
    w.flush().or_runtime()?;
    manifest.finish()?;
    Ok(OK)
}
