//! Model assembly: configuration, parameter layout, forward pass and loss
//! for the selective-sharing model and its comparison variants.

mod forward;
mod layout;
mod trace;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::DiffError;
use crate::graph::{HeteroGraph, RelationSchema, TaskSpec};
use crate::params::CheckpointError;

pub use forward::{forward, loss, task_labels, Batch, ForwardOutput};
pub use layout::{Census, Init, ParamGroup, ParamSpec};
pub use trace::{AttentionTrace, TraceKind, TraceRecord};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("graph does not match the model schema: {0}")]
    Schema(String),
    #[error("parameter `{0}` missing from the store")]
    MissingParam(String),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("{path}: {message}")]
    File { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Per-task backbones with relation-wise gates at every masked layer.
    Struchis,
    /// One backbone and head for a single task.
    Stl,
    /// One backbone for all tasks, one head per task.
    SharedBackbone,
    /// Shared expert backbones mixed per task by a gate on input features.
    MoeExperts,
    /// Per-task backbones gated after cross-relation aggregation.
    AblationNoR,
    /// Per-task backbones gated once at the final target embedding.
    AblationNoRNoL,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Struchis,
        Variant::Stl,
        Variant::SharedBackbone,
        Variant::MoeExperts,
        Variant::AblationNoR,
        Variant::AblationNoRNoL,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Struchis => "struchis",
            Variant::Stl => "stl",
            Variant::SharedBackbone => "shared_backbone",
            Variant::MoeExperts => "moe_experts",
            Variant::AblationNoR => "ablation_no_r",
            Variant::AblationNoRNoL => "ablation_no_r_no_l",
        }
    }
}

fn default_experts() -> usize {
    3
}
fn default_head_layers() -> usize {
    2
}
fn default_heads() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    pub num_layers: usize,
    pub hidden_dim: usize,
    /// Checked against the graph when given.
    #[serde(default)]
    pub num_tasks: Option<usize>,
    /// Relation-wise sharing per layer; absent means every layer.
    #[serde(default)]
    pub layer_share_mask: Option<Vec<bool>>,
    #[serde(default = "default_experts")]
    pub moe_num_experts: usize,
    #[serde(default = "default_head_layers")]
    pub head_hidden_layers: usize,
    #[serde(default = "default_heads")]
    pub attention_heads: usize,
    /// Leaky rectifier on relation attention logits.
    #[serde(default)]
    pub attention_leaky: bool,
    /// Per-task loss weights, default 1 each.
    #[serde(default)]
    pub task_weights: Option<Vec<f64>>,
    /// Task trained by the single-task variant.
    #[serde(default)]
    pub stl_task: usize,
    /// Pins every task gate one-hot on the task itself.
    #[serde(default)]
    pub force_own_gate: bool,
    #[serde(default)]
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(variant: Variant, num_layers: usize, hidden_dim: usize) -> Self {
        Self {
            variant,
            num_layers,
            hidden_dim,
            num_tasks: None,
            layer_share_mask: None,
            moe_num_experts: default_experts(),
            head_hidden_layers: default_head_layers(),
            attention_heads: default_heads(),
            attention_leaky: false,
            task_weights: None,
            stl_task: 0,
            force_own_gate: false,
            seed: 0,
        }
    }

    pub fn mask(&self) -> Vec<bool> {
        self.layer_share_mask.clone().unwrap_or_else(|| vec![true; self.num_layers])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypeSchema {
    pub name: String,
    pub feature_dim: usize,
}

/// The parts of a graph that fix parameter shapes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSchema {
    pub node_types: Vec<TypeSchema>,
    pub relations: Vec<RelationSchema>,
    pub tasks: Vec<TaskSpec>,
}

impl ModelSchema {
    pub fn of(graph: &HeteroGraph) -> Self {
        Self {
            node_types: graph
                .node_types
                .iter()
                .map(|t| TypeSchema { name: t.name.clone(), feature_dim: t.feature_dim })
                .collect(),
            relations: graph.relations.clone(),
            tasks: graph.tasks.clone(),
        }
    }

    pub fn check(&self, graph: &HeteroGraph) -> Result<(), ModelError> {
        let other = Self::of(graph);
        if &other != self {
            return Err(ModelError::Schema(format!(
                "model expects {} node types, {} relations, {} tasks with matching names and dims",
                self.node_types.len(),
                self.relations.len(),
                self.tasks.len()
            )));
        }
        Ok(())
    }
}

/// A configuration bound to a graph schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub config: ModelConfig,
    pub schema: ModelSchema,
}

impl Model {
    pub fn new(config: ModelConfig, schema: ModelSchema) -> Result<Self, ModelError> {
        let c = &config;
        let t = schema.tasks.len();
        let bad = |m: String| Err(ModelError::Config(m));
        if c.num_layers == 0 {
            return bad("num_layers must be at least 1".into());
        }
        if c.hidden_dim == 0 {
            return bad("hidden_dim must be positive".into());
        }
        if t == 0 {
            return bad("graph declares no tasks".into());
        }
        if let Some(n) = c.num_tasks {
            if n != t {
                return bad(format!("num_tasks is {n} but the graph declares {t}"));
            }
        }
        if c.attention_heads == 0 || c.hidden_dim % c.attention_heads != 0 {
            return bad(format!("attention_heads {} must divide hidden_dim {}", c.attention_heads, c.hidden_dim));
        }
        if let Some(m) = &c.layer_share_mask {
            if m.len() != c.num_layers {
                return bad(format!("layer_share_mask has {} entries for {} layers", m.len(), c.num_layers));
            }
            if c.variant == Variant::Struchis && m.iter().all(|x| !x) {
                return bad("all-false layer_share_mask is not a struchis model; use ablation_no_r_no_l".into());
            }
        }
        if c.variant == Variant::MoeExperts && c.moe_num_experts == 0 {
            return bad("moe_num_experts must be positive".into());
        }
        if c.variant == Variant::Stl && c.stl_task >= t {
            return bad(format!("stl_task {} out of range for {t} tasks", c.stl_task));
        }
        if let Some(w) = &c.task_weights {
            if w.len() != t || w.iter().any(|x| !x.is_finite() || *x < 0.0) {
                return bad(format!("task_weights needs {t} finite non-negative entries"));
            }
        }
        Ok(Self { config, schema })
    }

    pub fn num_tasks(&self) -> usize {
        self.schema.tasks.len()
    }

    /// Tasks that receive predictions.
    pub fn active_tasks(&self) -> Vec<usize> {
        match self.config.variant {
            Variant::Stl => vec![self.config.stl_task],
            _ => (0..self.num_tasks()).collect(),
        }
    }

    pub fn task_weight(&self, task: usize) -> f64 {
        self.config.task_weights.as_ref().map_or(1.0, |w| w[task])
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("model serializes");
        std::fs::write(path, text).map_err(|e| ModelError::File { path: path.display().to_string(), message: e.to_string() })
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let path = path.as_ref();
        let err = |m: String| ModelError::File { path: path.display().to_string(), message: m };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let raw: Model = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
        Model::new(raw.config, raw.schema)
    }
}
