//! Personalized task difficulty as a heterogeneous treatment effect over a
//! reaching workspace.
//!
//! A task is a target position `(x, y, z, dist)`. Reach times of one
//! individual are compared with reach times of a control population, and an
//! honest causal tree partitions the workspace into regions of roughly
//! constant extra time `τ`.

pub mod baselines;
pub mod causal_tree;
pub mod domain;
pub mod error;
pub mod eval;
pub mod io;
pub mod mapgen;
pub mod model;
pub mod seed;
pub mod split_rule;
pub mod synth;

pub use causal_tree::{fit_causal_forest, fit_causal_tree, CausalForest, CausalTree, CausalTreeParams};
pub use domain::{features_from_xyz, Dataset, GroupLabel, Sample, TaskFeatures, Workspace};
pub use error::{Error, Result};
pub use model::{parse_model, serialize_model, DifficultyEstimate, EffectModel, FittedModel};
