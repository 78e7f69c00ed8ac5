//! JSONL directory format.
//!
//! ```text
//! schema.json            {"node_types":[{"name","feature_dim"}],
//!                         "relations":[{"name","src","dst","edge_feature_dim"}],
//!                         "tasks":[{"name","target_type","kind","num_classes"}]}
//! nodes_<type>.jsonl     {"id": 0, "x": [..]}
//! edges_<relation>.jsonl {"src": 0, "dst": 1, "x": [..]}   ("x" only with edge features)
//! labels_<task>.jsonl    {"node": 0, "y": 1} or {"node": 0, "y": [0, 3]}
//! ```

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    validate, EdgeList, GraphError, HeteroGraph, Label, NodeRef, NodeTypeInfo, RelationSchema, Target, TaskKind,
    TaskSpec,
};
use crate::tensor::Mat;

#[derive(Debug, Serialize, Deserialize)]
struct SchemaFile {
    node_types: Vec<NodeTypeEntry>,
    relations: Vec<RelationEntry>,
    tasks: Vec<TaskEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct NodeTypeEntry {
    name: String,
    feature_dim: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct RelationEntry {
    name: String,
    src: String,
    dst: String,
    #[serde(default)]
    edge_feature_dim: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct TaskEntry {
    name: String,
    target_type: String,
    kind: TaskKind,
    num_classes: usize,
}

/// JSON has no NaN/inf literals; such values may appear as strings.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(untagged)]
enum Value {
    Num(f64),
    #[serde(with = "text_float")]
    Text(f64),
}

mod text_float {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&v.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        let s = String::deserialize(d)?;
        s.trim().parse::<f64>().map_err(|_| D::Error::custom(format!("not a number: {s:?}")))
    }
}

impl Value {
    fn get(self) -> f64 {
        match self {
            Value::Num(v) | Value::Text(v) => v,
        }
    }

    fn of(v: f64) -> Self {
        if v.is_finite() {
            Value::Num(v)
        } else {
            Value::Text(v)
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct NodeLine {
    id: usize,
    x: Vec<Value>,
}

#[derive(Debug, Serialize, Deserialize)]
struct EdgeLine {
    src: usize,
    dst: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    x: Option<Vec<Value>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct LabelLine {
    node: usize,
    y: Label,
}

fn read_lines<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<(usize, T)>, GraphError> {
    let name = path.display().to_string();
    let file = fs::File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => GraphError::MissingFile(name.clone()),
        _ => GraphError::Io { path: name.clone(), source: e },
    })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| GraphError::Io { path: name.clone(), source: e })?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line)
            .map_err(|e| GraphError::Parse { file: name.clone(), line: i + 1, message: e.to_string() })?;
        out.push((i + 1, value));
    }
    Ok(out)
}

fn schema_err(file: &Path, line: Option<usize>, message: impl Into<String>) -> GraphError {
    GraphError::Schema { file: file.display().to_string(), line, message: message.into() }
}

/// Parses a graph directory without sorting or invariant checks beyond
/// what parsing needs (dimensions, dense ids, endpoint ranges).
pub fn read_graph_unchecked(root: impl AsRef<Path>) -> Result<HeteroGraph, GraphError> {
    let root = root.as_ref();
    let schema_path = root.join("schema.json");
    let text = fs::read_to_string(&schema_path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => GraphError::MissingFile(schema_path.display().to_string()),
        _ => GraphError::Io { path: schema_path.display().to_string(), source: e },
    })?;
    let schema: SchemaFile = serde_json::from_str(&text)
        .map_err(|e| GraphError::Parse { file: schema_path.display().to_string(), line: e.line(), message: e.to_string() })?;

    let type_id = |name: &str| -> Result<usize, GraphError> {
        schema
            .node_types
            .iter()
            .position(|t| t.name == name)
            .ok_or_else(|| schema_err(&schema_path, None, format!("unknown node type `{name}`")))
    };

    let mut node_types = Vec::new();
    let mut node_features = Vec::new();
    for nt in &schema.node_types {
        let path = root.join(format!("nodes_{}.jsonl", nt.name));
        let lines: Vec<(usize, NodeLine)> = read_lines(&path)?;
        let n = lines.len();
        let mut x = Mat::zeros(n, nt.feature_dim);
        let mut filled = vec![false; n];
        for (line, node) in lines {
            if node.id >= n || filled[node.id] {
                return Err(schema_err(&path, Some(line), format!("node id {} is not a dense unique index below {n}", node.id)));
            }
            if node.x.len() != nt.feature_dim {
                return Err(schema_err(&path, Some(line), format!("feature length {} != feature_dim {}", node.x.len(), nt.feature_dim)));
            }
            filled[node.id] = true;
            for (c, v) in node.x.iter().enumerate() {
                x.set(node.id, c, v.get());
            }
        }
        node_types.push(NodeTypeInfo { name: nt.name.clone(), feature_dim: nt.feature_dim, count: n });
        node_features.push(x);
    }

    let mut relations = Vec::new();
    let mut edges = Vec::new();
    for (r, rel) in schema.relations.iter().enumerate() {
        let (src_type, dst_type) = (type_id(&rel.src)?, type_id(&rel.dst)?);
        let path = root.join(format!("edges_{}.jsonl", rel.name));
        let lines: Vec<(usize, EdgeLine)> = read_lines(&path)?;
        let (ns, nd) = (node_types[src_type].count, node_types[dst_type].count);
        let mut list = EdgeList {
            src: Vec::with_capacity(lines.len()),
            dst: Vec::with_capacity(lines.len()),
            features: None,
        };
        let mut feats = Vec::new();
        for (line, e) in lines {
            if e.src >= ns || e.dst >= nd {
                return Err(schema_err(&path, Some(line), format!("dangling endpoint ({}, {}) for node counts ({ns}, {nd})", e.src, e.dst)));
            }
            match (&e.x, rel.edge_feature_dim) {
                (None, 0) => {}
                (Some(x), d) if x.len() == d && d > 0 => feats.extend(x.iter().map(|v| v.get())),
                (x, d) => {
                    return Err(schema_err(
                        &path,
                        Some(line),
                        format!("edge feature length {} != edge_feature_dim {d}", x.as_ref().map_or(0, Vec::len)),
                    ))
                }
            }
            list.src.push(e.src);
            list.dst.push(e.dst);
        }
        if rel.edge_feature_dim > 0 {
            list.features = Some(Mat::from_vec(list.len(), rel.edge_feature_dim, feats));
        }
        relations.push(RelationSchema {
            edge_type_id: r,
            name: rel.name.clone(),
            src_type,
            dst_type,
            edge_feature_dim: rel.edge_feature_dim,
        });
        edges.push(list);
    }

    let mut tasks = Vec::new();
    let mut targets = Vec::new();
    for (t, task) in schema.tasks.iter().enumerate() {
        let target_type = type_id(&task.target_type)?;
        let path = root.join(format!("labels_{}.jsonl", task.name));
        let lines: Vec<(usize, LabelLine)> = read_lines(&path)?;
        let n = node_types[target_type].count;
        let mut list = Vec::with_capacity(lines.len());
        for (line, l) in lines {
            if l.node >= n {
                return Err(schema_err(&path, Some(line), format!("label for node {} outside {n} `{}` nodes", l.node, task.target_type)));
            }
            list.push(Target { node: NodeRef { node_type: target_type, index: l.node }, label: l.y });
        }
        tasks.push(TaskSpec {
            task_id: t,
            name: task.name.clone(),
            target_node_type: target_type,
            kind: task.kind,
            num_classes: task.num_classes,
        });
        targets.push(list);
    }

    Ok(HeteroGraph { node_types, node_features, relations, edges, tasks, targets })
}

/// Reads, canonicalizes and validates a graph directory.
pub fn load_graph(root: impl AsRef<Path>) -> Result<HeteroGraph, GraphError> {
    let mut graph = read_graph_unchecked(root)?;
    graph.canonicalize();
    let report = validate(&graph);
    if report.is_clean() {
        Ok(graph)
    } else {
        Err(GraphError::Invalid(report))
    }
}

fn io_err(path: &Path, e: std::io::Error) -> GraphError {
    GraphError::Io { path: path.display().to_string(), source: e }
}

fn write_jsonl<T: Serialize>(path: &Path, rows: impl Iterator<Item = T>) -> Result<(), GraphError> {
    let file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    for row in rows {
        serde_json::to_writer(&mut w, &row).map_err(|e| io_err(path, e.into()))?;
        w.write_all(b"\n").map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Writes `graph` in canonical form (the directory is created if needed).
pub fn write_graph(graph: &HeteroGraph, root: impl AsRef<Path>) -> Result<(), GraphError> {
    let root = root.as_ref();
    fs::create_dir_all(root).map_err(|e| io_err(root, e))?;
    let mut graph = graph.clone();
    graph.canonicalize();

    let schema = SchemaFile {
        node_types: graph.node_types.iter().map(|t| NodeTypeEntry { name: t.name.clone(), feature_dim: t.feature_dim }).collect(),
        relations: graph
            .relations
            .iter()
            .map(|r| RelationEntry {
                name: r.name.clone(),
                src: graph.node_types[r.src_type].name.clone(),
                dst: graph.node_types[r.dst_type].name.clone(),
                edge_feature_dim: r.edge_feature_dim,
            })
            .collect(),
        tasks: graph
            .tasks
            .iter()
            .map(|t| TaskEntry {
                name: t.name.clone(),
                target_type: graph.node_types[t.target_node_type].name.clone(),
                kind: t.kind,
                num_classes: t.num_classes,
            })
            .collect(),
    };
    let schema_path = root.join("schema.json");
    let text = serde_json::to_string_pretty(&schema).expect("schema serializes");
    fs::write(&schema_path, text + "\n").map_err(|e| io_err(&schema_path, e))?;

    for (t, info) in graph.node_types.iter().enumerate() {
        let x = &graph.node_features[t];
        write_jsonl(
            &root.join(format!("nodes_{}.jsonl", info.name)),
            (0..info.count).map(|i| NodeLine { id: i, x: x.row(i).iter().map(|&v| Value::of(v)).collect() }),
        )?;
    }
    for (r, rel) in graph.relations.iter().enumerate() {
        let e = &graph.edges[r];
        write_jsonl(
            &root.join(format!("edges_{}.jsonl", rel.name)),
            (0..e.len()).map(|i| EdgeLine {
                src: e.src[i],
                dst: e.dst[i],
                x: e.features.as_ref().map(|f| f.row(i).iter().map(|&v| Value::of(v)).collect()),
            }),
        )?;
    }
    for (t, task) in graph.tasks.iter().enumerate() {
        write_jsonl(
            &root.join(format!("labels_{}.jsonl", task.name)),
            graph.targets[t].iter().map(|tg| LabelLine { node: tg.node.index, y: tg.label.clone() }),
        )?;
    }
    Ok(())
}
