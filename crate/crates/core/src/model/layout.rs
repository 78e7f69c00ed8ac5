//! Parameter layout, initialization and census.
//!
//! Every parameter is seeded from `(model seed, path)` alone, so two
//! variants that share a path start from identical values.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{Model, Variant};
use crate::params::ParamStore;
use crate::seed::derive_seed;
use crate::tensor::{lit, Mat, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// Uniform in `±1/√rows`.
    Uniform,
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Projection,
    Layer,
    Gate,
    Head,
    Selector,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub init: Init,
    pub group: ParamGroup,
}

/// Scalar counts per parameter group, plus the number of gate groups
/// (one weight/bias pair each).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Census {
    pub projection: usize,
    pub layer: usize,
    pub gate: usize,
    pub head: usize,
    pub selector: usize,
    pub gate_groups: usize,
    pub total: usize,
}

impl Model {
    /// Backbone path prefixes.
    pub fn backbones(&self) -> Vec<String> {
        let t = self.num_tasks();
        match self.config.variant {
            Variant::Stl => vec![format!("task{}", self.config.stl_task)],
            Variant::SharedBackbone => vec!["task0".into()],
            Variant::MoeExperts => (0..self.config.moe_num_experts).map(|k| format!("expert{k}")).collect(),
            _ => (0..t).map(|i| format!("task{i}")).collect(),
        }
    }

    pub fn layout(&self) -> Vec<ParamSpec> {
        let c = &self.config;
        let s = &self.schema;
        let d = c.hidden_dim;
        let t = self.num_tasks();
        let mut out = Vec::new();
        let mut push = |name: String, rows: usize, cols: usize, init: Init, group: ParamGroup| {
            out.push(ParamSpec { name, rows, cols, init, group });
        };

        for p in self.backbones() {
            for ty in &s.node_types {
                push(format!("{p}/proj/node_w/{}", ty.name), ty.feature_dim, d, Init::Uniform, ParamGroup::Projection);
                push(format!("{p}/proj/node_b/{}", ty.name), 1, d, Init::Zero, ParamGroup::Projection);
            }
            for rel in &s.relations {
                if rel.has_edge_features() {
                    push(format!("{p}/proj/edge_w/{}", rel.name), rel.edge_feature_dim, d, Init::Uniform, ParamGroup::Projection);
                    push(format!("{p}/proj/edge_b/{}", rel.name), 1, d, Init::Zero, ParamGroup::Projection);
                } else {
                    push(format!("{p}/proj/edge_const/{}", rel.name), 1, d, Init::Zero, ParamGroup::Projection);
                }
            }
            for l in 1..=c.num_layers {
                for rel in &s.relations {
                    push(format!("{p}/layer{l}/mes_w/{}", rel.name), d, d, Init::Uniform, ParamGroup::Layer);
                    push(format!("{p}/layer{l}/ragg_w/{}", rel.name), 3 * d, d, Init::Uniform, ParamGroup::Layer);
                    push(format!("{p}/layer{l}/ragg_a/{}", rel.name), d, 1, Init::Uniform, ParamGroup::Layer);
                }
                push(format!("{p}/layer{l}/agg_w"), 2 * d, d, Init::Uniform, ParamGroup::Layer);
                push(format!("{p}/layer{l}/agg_b"), d, 1, Init::Uniform, ParamGroup::Layer);
            }
        }

        match c.variant {
            Variant::Struchis => {
                for task in 0..t {
                    for (l, on) in c.mask().into_iter().enumerate() {
                        if !on {
                            continue;
                        }
                        for rel in &s.relations {
                            push(format!("task{task}/layer{}/gate_w/{}", l + 1, rel.name), d, t, Init::Zero, ParamGroup::Gate);
                            push(format!("task{task}/layer{}/gate_b/{}", l + 1, rel.name), 1, t, Init::Zero, ParamGroup::Gate);
                        }
                    }
                }
            }
            Variant::AblationNoR => {
                for task in 0..t {
                    for l in 1..=c.num_layers {
                        for (ty_id, ty) in s.node_types.iter().enumerate() {
                            if s.relations.iter().any(|r| r.dst_type == ty_id) {
                                push(format!("task{task}/layer{l}/node_gate_w/{}", ty.name), d, t, Init::Zero, ParamGroup::Gate);
                                push(format!("task{task}/layer{l}/node_gate_b/{}", ty.name), 1, t, Init::Zero, ParamGroup::Gate);
                            }
                        }
                    }
                }
            }
            Variant::AblationNoRNoL => {
                for task in 0..t {
                    push(format!("task{task}/final_gate_w"), d, t, Init::Zero, ParamGroup::Gate);
                    push(format!("task{task}/final_gate_b"), 1, t, Init::Zero, ParamGroup::Gate);
                }
            }
            Variant::MoeExperts => {
                let k = c.moe_num_experts;
                let mut types: Vec<usize> = s.tasks.iter().map(|x| x.target_node_type).collect();
                types.sort_unstable();
                types.dedup();
                for ty in types {
                    let ty = &s.node_types[ty];
                    push(format!("moe/selector_w/{}", ty.name), ty.feature_dim, d, Init::Uniform, ParamGroup::Selector);
                    push(format!("moe/selector_b/{}", ty.name), 1, d, Init::Zero, ParamGroup::Selector);
                }
                for task in 0..t {
                    push(format!("moe/gate{task}/w"), d, k, Init::Zero, ParamGroup::Gate);
                    push(format!("moe/gate{task}/b"), 1, k, Init::Zero, ParamGroup::Gate);
                }
            }
            Variant::Stl | Variant::SharedBackbone => {}
        }

        for task in self.active_tasks() {
            for k in 1..=c.head_hidden_layers {
                push(format!("head{task}/hidden{k}/w"), d, d, Init::Uniform, ParamGroup::Head);
                push(format!("head{task}/hidden{k}/b"), 1, d, Init::Zero, ParamGroup::Head);
            }
            let classes = s.tasks[task].num_classes;
            push(format!("head{task}/out/w"), d, classes, Init::Uniform, ParamGroup::Head);
            push(format!("head{task}/out/b"), 1, classes, Init::Zero, ParamGroup::Head);
        }
        out
    }

    /// Fresh parameters for this model, seeded from `config.seed`.
    pub fn init_params<F: Real>(&self) -> ParamStore<F> {
        let mut store = ParamStore::new();
        for spec in self.layout() {
            let value = match spec.init {
                Init::Zero => Mat::zeros(spec.rows, spec.cols),
                Init::Uniform => {
                    let bound = 1.0 / (spec.rows.max(1) as f64).sqrt();
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.config.seed, &[&spec.name]));
                    let data = (0..spec.rows * spec.cols).map(|_| lit(rng.gen_range(-bound..bound))).collect();
                    Mat::from_vec(spec.rows, spec.cols, data)
                }
            };
            store.insert(spec.name, value).expect("layout paths are unique");
        }
        store
    }

    pub fn census(&self) -> Census {
        let mut c = Census::default();
        for spec in self.layout() {
            let n = spec.rows * spec.cols;
            match spec.group {
                ParamGroup::Projection => c.projection += n,
                ParamGroup::Layer => c.layer += n,
                ParamGroup::Gate => {
                    c.gate += n;
                    // weight and bias specs alternate
                    c.gate_groups += 1;
                }
                ParamGroup::Head => c.head += n,
                ParamGroup::Selector => c.selector += n,
            }
            c.total += n;
        }
        c.gate_groups /= 2;
        c
    }
}
