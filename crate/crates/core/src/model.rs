//! Fitted effect models and their JSON document format.
//!
//! A document is `{"format_version": 1, "seed_derivation": ..., "model": M}`
//! where `M` carries a `kind` tag: `causal_tree`, `causal_forest` or
//! `t_learner`. Tree nodes carry `kind: internal | leaf`. Floats are written
//! in shortest round-trip form, so a parsed model predicts bit-for-bit like
//! the one that was written.

use serde::{Deserialize, Serialize};

use crate::baselines::{RegressionNode, Regressor, TLearner};
use crate::causal_tree::{CausalForest, CausalTree, TreeNode};
use crate::domain::{TaskFeatures, N_FEATURES};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
pub const SEED_DERIVATION: &str =
    "splitmix64(parent + (stream + 1) * 0x9E3779B97F4A7C15); forest member i: stream 2^32 + i, \
     subsample i: stream 2^33 + i; t-learner control: stream 0, individual: stream 1";

/// Estimated extra reach time at a task point. Positive means slower than
/// the control baseline. Only single trees report a leaf.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DifficultyEstimate {
    pub tau_hat: f64,
    pub leaf_id: Option<usize>,
}

/// Anything that maps a task point to an effect estimate.
pub trait EffectModel: Send + Sync {
    fn predict(&self, p: &TaskFeatures) -> DifficultyEstimate;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FittedModel {
    CausalTree(CausalTree),
    CausalForest(CausalForest),
    TLearner(TLearner),
}

impl FittedModel {
    pub fn kind(&self) -> &'static str {
        match self {
            FittedModel::CausalTree(_) => "causal_tree",
            FittedModel::CausalForest(_) => "causal_forest",
            FittedModel::TLearner(_) => "t_learner",
        }
    }
}

impl EffectModel for FittedModel {
    fn predict(&self, p: &TaskFeatures) -> DifficultyEstimate {
        match self {
            FittedModel::CausalTree(t) => t.predict(p),
            FittedModel::CausalForest(f) => f.predict(p),
            FittedModel::TLearner(t) => t.predict(p),
        }
    }
}

impl From<CausalTree> for FittedModel {
    fn from(t: CausalTree) -> Self {
        FittedModel::CausalTree(t)
    }
}

impl From<CausalForest> for FittedModel {
    fn from(f: CausalForest) -> Self {
        FittedModel::CausalForest(f)
    }
}

impl From<TLearner> for FittedModel {
    fn from(t: TLearner) -> Self {
        FittedModel::TLearner(t)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Document {
    format_version: u32,
    seed_derivation: String,
    model: FittedModel,
}

#[derive(Serialize)]
struct DocumentRef<'a> {
    format_version: u32,
    seed_derivation: &'a str,
    model: &'a FittedModel,
}

pub fn serialize_model(model: &FittedModel) -> String {
    let doc = DocumentRef {
        format_version: FORMAT_VERSION,
        seed_derivation: SEED_DERIVATION,
        model,
    };
    let mut text = serde_json::to_string_pretty(&doc).expect("model documents always serialize");
    text.push('\n');
    text
}

pub fn parse_model(text: &str) -> Result<FittedModel> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let doc: Document = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::MalformedModel {
            path: if path == "." { "$".into() } else { format!("$.{path}") },
            reason: e.into_inner().to_string(),
        }
    })?;
    if doc.format_version != FORMAT_VERSION {
        return Err(malformed(
            "$.format_version",
            format!("unsupported version {}, expected {FORMAT_VERSION}", doc.format_version),
        ));
    }
    validate_model(&doc.model)?;
    Ok(doc.model)
}

fn malformed(path: impl Into<String>, reason: impl Into<String>) -> Error {
    Error::MalformedModel {
        path: path.into(),
        reason: reason.into(),
    }
}

fn validate_model(model: &FittedModel) -> Result<()> {
    match model {
        FittedModel::CausalTree(t) => validate_causal_tree(t, "$.model"),
        FittedModel::CausalForest(f) => {
            if f.trees.is_empty() || f.trees.len() != f.n_trees {
                return Err(malformed(
                    "$.model.trees",
                    format!("expected {} trees, found {}", f.n_trees, f.trees.len()),
                ));
            }
            f.trees
                .iter()
                .enumerate()
                .try_for_each(|(i, t)| validate_causal_tree(t, &format!("$.model.trees[{i}]")))
        }
        FittedModel::TLearner(t) => {
            validate_regressor(&t.model_individual, "$.model.model_individual")?;
            validate_regressor(&t.model_control, "$.model.model_control")
        }
    }
}

fn validate_causal_tree(tree: &CausalTree, path: &str) -> Result<()> {
    tree.params
        .validate()
        .map_err(|e| malformed(format!("{path}.params"), e.to_string()))?;
    let mut next_leaf = 0;
    validate_node(
        &tree.root,
        &format!("{path}.root"),
        tree.params.max_depth,
        tree.params.min_group_leaf,
        &mut next_leaf,
    )
}

fn validate_node(
    node: &TreeNode,
    path: &str,
    depth_left: usize,
    min_group_leaf: usize,
    next_leaf: &mut usize,
) -> Result<()> {
    match node {
        TreeNode::Internal { split, left, right } => {
            if depth_left == 0 {
                return Err(malformed(path, "tree deeper than params.max_depth"));
            }
            if split.feature_index >= N_FEATURES {
                return Err(malformed(
                    format!("{path}.split.feature_index"),
                    format!("{} is not a feature index", split.feature_index),
                ));
            }
            if !split.threshold.is_finite() || !(split.gain >= 0.0) {
                return Err(malformed(format!("{path}.split"), "threshold must be finite and gain non-negative"));
            }
            validate_node(left, &format!("{path}.left"), depth_left - 1, min_group_leaf, next_leaf)?;
            validate_node(right, &format!("{path}.right"), depth_left - 1, min_group_leaf, next_leaf)
        }
        TreeNode::Leaf {
            leaf_id,
            tau_hat,
            n_individual,
            n_control,
            mean_individual,
            mean_control,
        } => {
            if *leaf_id != *next_leaf {
                return Err(malformed(
                    format!("{path}.leaf_id"),
                    format!("expected {next_leaf} (left-to-right order), found {leaf_id}"),
                ));
            }
            *next_leaf += 1;
            if *n_individual < min_group_leaf || *n_control < min_group_leaf {
                return Err(malformed(path, "leaf holds fewer than min_group_leaf samples of a group"));
            }
            if (mean_individual - mean_control).to_bits() != tau_hat.to_bits() {
                return Err(malformed(
                    format!("{path}.tau_hat"),
                    "tau_hat must equal mean_individual - mean_control",
                ));
            }
            Ok(())
        }
    }
}

fn validate_regressor(r: &Regressor, path: &str) -> Result<()> {
    match r {
        Regressor::Cart { root, .. } => validate_regression_node(root, &format!("{path}.root")),
        Regressor::Forest { trees, .. } => {
            if trees.is_empty() {
                return Err(malformed(format!("{path}.trees"), "forest has no trees"));
            }
            trees
                .iter()
                .enumerate()
                .try_for_each(|(i, t)| validate_regression_node(t, &format!("{path}.trees[{i}]")))
        }
        Regressor::Knn { params, points, .. } => {
            if params.k == 0 {
                return Err(malformed(format!("{path}.params.k"), "k must be at least 1"));
            }
            if points.is_empty() {
                return Err(malformed(format!("{path}.points"), "no training points"));
            }
            Ok(())
        }
    }
}

fn validate_regression_node(node: &RegressionNode, path: &str) -> Result<()> {
    match node {
        RegressionNode::Internal {
            feature_index,
            threshold,
            left,
            right,
            ..
        } => {
            if *feature_index >= N_FEATURES || !threshold.is_finite() {
                return Err(malformed(path, "invalid split"));
            }
            validate_regression_node(left, &format!("{path}.left"))?;
            validate_regression_node(right, &format!("{path}.right"))
        }
        RegressionNode::Leaf { value, n } => {
            if !value.is_finite() || *n == 0 {
                return Err(malformed(path, "leaf needs a finite value and at least one sample"));
            }
            Ok(())
        }
    }
}
