//! Multi-task heterogeneous graph learning with relation-level attention
//! and learned cross-task layer sharing.

pub mod autodiff;
pub mod experiment;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod seed;
pub mod synth;
pub mod tensor;
pub mod trainer;
