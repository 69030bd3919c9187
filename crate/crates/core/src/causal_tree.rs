//! Honest causal trees.
//!
//! The partition is grown greedily on one half of the data; leaf effects
//! are the difference of group means computed on the other half. A leaf's
//! effect `tau_hat` is the mean Individual outcome minus the mean Control
//! outcome among the estimation samples routed to it.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{
    require_both, stratified_honest_split, stratified_subsample, validate_dataset, Dataset,
    GroupCounts, GroupLabel, Sample, TaskFeatures, FEATURE_NAMES, N_FEATURES,
};
use crate::error::{Error, Result};
use crate::model::{DifficultyEstimate, EffectModel};
use crate::seed::{derive_seed, stream};
use crate::split_rule::{beats, midpoint, outcome_scale, snap_gap, sorted_mean, TIE_TOL};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CausalTreeParams {
    pub max_depth: usize,
    pub min_group_leaf: usize,
    pub honest_fraction: f64,
    pub seed: u64,
}

impl Default for CausalTreeParams {
    fn default() -> Self {
        CausalTreeParams {
            max_depth: 6,
            min_group_leaf: 5,
            honest_fraction: 0.5,
            seed: 0,
        }
    }
}

impl CausalTreeParams {
    pub fn with_seed(seed: u64) -> Self {
        CausalTreeParams {
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.min_group_leaf == 0 {
            return Err(Error::InvalidParameter("min_group_leaf must be at least 1".into()));
        }
        if !(self.honest_fraction > 0.0 && self.honest_fraction < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "honest_fraction must lie in (0, 1), got {}",
                self.honest_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Split {
    pub feature_index: usize,
    pub threshold: f64,
    pub gain: f64,
}

impl Split {
    pub fn goes_left(&self, p: &TaskFeatures) -> bool {
        p.get(self.feature_index) < self.threshold
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeafEstimate {
    pub tau_hat: f64,
    pub n_individual: usize,
    pub n_control: usize,
    pub mean_individual: f64,
    pub mean_control: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TreeNode {
    Internal {
        split: Split,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf {
        leaf_id: usize,
        tau_hat: f64,
        n_individual: usize,
        n_control: usize,
        mean_individual: f64,
        mean_control: f64,
    },
}

impl TreeNode {
    fn leaf(leaf_id: usize, est: LeafEstimate) -> Self {
        TreeNode::Leaf {
            leaf_id,
            tau_hat: est.tau_hat,
            n_individual: est.n_individual,
            n_control: est.n_control,
            mean_individual: est.mean_individual,
            mean_control: est.mean_control,
        }
    }

    /// Same splits (feature and threshold) and same leaf ids; ignores gains
    /// and leaf values.
    pub fn same_structure(&self, other: &TreeNode) -> bool {
        match (self, other) {
            (
                TreeNode::Internal { split: a, left: al, right: ar },
                TreeNode::Internal { split: b, left: bl, right: br },
            ) => {
                a.feature_index == b.feature_index
                    && a.threshold.to_bits() == b.threshold.to_bits()
                    && al.same_structure(bl)
                    && ar.same_structure(br)
            }
            (TreeNode::Leaf { leaf_id: a, .. }, TreeNode::Leaf { leaf_id: b, .. }) => a == b,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CausalTree {
    pub root: TreeNode,
    pub params: CausalTreeParams,
    pub feature_names: [String; N_FEATURES],
}

pub fn default_feature_names() -> [String; N_FEATURES] {
    FEATURE_NAMES.map(String::from)
}

impl CausalTree {
    pub fn leaf_for(&self, p: &TaskFeatures) -> &TreeNode {
        let mut node = &self.root;
        while let TreeNode::Internal { split, left, right } = node {
            node = if split.goes_left(p) { left } else { right };
        }
        node
    }

    pub fn predict_tau(&self, p: &TaskFeatures) -> DifficultyEstimate {
        match self.leaf_for(p) {
            TreeNode::Leaf { leaf_id, tau_hat, .. } => DifficultyEstimate {
                tau_hat: *tau_hat,
                leaf_id: Some(*leaf_id),
            },
            TreeNode::Internal { .. } => unreachable!("routing always ends at a leaf"),
        }
    }

    /// Leaves in left-to-right order.
    pub fn leaves(&self) -> Vec<&TreeNode> {
        fn walk<'a>(node: &'a TreeNode, out: &mut Vec<&'a TreeNode>) {
            match node {
                TreeNode::Internal { left, right, .. } => {
                    walk(left, out);
                    walk(right, out);
                }
                leaf => out.push(leaf),
            }
        }
        let mut out = Vec::new();
        walk(&self.root, &mut out);
        out
    }

    pub fn n_leaves(&self) -> usize {
        self.leaves().len()
    }

    /// Length of the longest root-to-leaf path, in edges.
    pub fn depth(&self) -> usize {
        fn depth(node: &TreeNode) -> usize {
            match node {
                TreeNode::Internal { left, right, .. } => 1 + depth(left).max(depth(right)),
                TreeNode::Leaf { .. } => 0,
            }
        }
        depth(&self.root)
    }
}

impl EffectModel for CausalTree {
    fn predict(&self, p: &TaskFeatures) -> DifficultyEstimate {
        self.predict_tau(p)
    }
}

/// Difference of group means over `samples`.
pub fn leaf_estimate(samples: &[Sample]) -> Result<LeafEstimate> {
    let counts = GroupCounts::of(samples);
    require_both(counts)?;
    let outcomes = |g: GroupLabel| -> Vec<f64> {
        samples
            .iter()
            .filter(|s| s.group == g)
            .map(|s| s.outcome)
            .collect()
    };
    let mean_individual = sorted_mean(outcomes(GroupLabel::Individual));
    let mean_control = sorted_mean(outcomes(GroupLabel::Control));
    Ok(LeafEstimate {
        tau_hat: mean_individual - mean_control,
        n_individual: counts.individual,
        n_control: counts.control,
        mean_individual,
        mean_control,
    })
}

/// Running per-group count and outcome sum.
#[derive(Debug, Clone, Copy, Default)]
struct GroupSums {
    n: [usize; 2],
    sum: [f64; 2],
}

impl GroupSums {
    fn add(&mut self, s: &Sample) {
        let g = s.group as usize;
        self.n[g] += 1;
        self.sum[g] += s.outcome;
    }

    fn minus(&self, other: &GroupSums) -> GroupSums {
        GroupSums {
            n: [self.n[0] - other.n[0], self.n[1] - other.n[1]],
            sum: [self.sum[0] - other.sum[0], self.sum[1] - other.sum[1]],
        }
    }

    fn total(&self) -> usize {
        self.n[0] + self.n[1]
    }

    fn tau(&self) -> f64 {
        self.sum[1] / self.n[1] as f64 - self.sum[0] / self.n[0] as f64
    }
}

/// Best effect-difference split of `split_samples`, if any candidate both
/// improves on zero gain and leaves `min_group_leaf` samples of each group
/// on each side in both halves.
///
/// Gain is `n_L n_R / (n_L + n_R)² · (τ_L − τ_R)²`, with counts and
/// effects taken from `split_samples` only.
pub fn best_split(
    split_samples: &[Sample],
    estimation_samples: &[Sample],
    params: &CausalTreeParams,
) -> Option<Split> {
    let min_leaf = params.min_group_leaf.max(1);
    let mut totals = GroupSums::default();
    split_samples.iter().for_each(|s| totals.add(s));
    let n = totals.total() as f64;
    let scale = outcome_scale(split_samples.iter().map(|s| &s.outcome));
    let tie_tol = TIE_TOL * scale * scale;

    let mut best: Option<Split> = None;
    let mut order: Vec<&Sample> = split_samples.iter().collect();
    for feature in 0..N_FEATURES {
        order.sort_by(|a, b| a.features.get(feature).total_cmp(&b.features.get(feature)));
        let est_sorted = |g: GroupLabel| {
            let mut v: Vec<f64> = estimation_samples
                .iter()
                .filter(|s| s.group == g)
                .map(|s| s.features.get(feature))
                .collect();
            v.sort_by(f64::total_cmp);
            v
        };
        let est_values = [est_sorted(GroupLabel::Control), est_sorted(GroupLabel::Individual)];

        let mut left = GroupSums::default();
        for pair in order.windows(2) {
            left.add(pair[0]);
            let (lo, hi) = (pair[0].features.get(feature), pair[1].features.get(feature));
            if lo == hi {
                continue;
            }
            let Some(threshold) = midpoint(lo, hi) else {
                continue;
            };
            let right = totals.minus(&left);
            if left.n.iter().chain(&right.n).any(|&c| c < min_leaf) {
                continue;
            }
            let est_ok = est_values.iter().all(|vals| {
                let n_left = vals.partition_point(|&v| v < threshold);
                n_left >= min_leaf && vals.len() - n_left >= min_leaf
            });
            if !est_ok {
                continue;
            }
            let gap = snap_gap(left.tau() - right.tau(), scale);
            let (nl, nr) = (left.total() as f64, right.total() as f64);
            let gain = nl * nr / (n * n) * gap * gap;
            if beats(gain, best.map(|b| b.gain), tie_tol) {
                best = Some(Split {
                    feature_index: feature,
                    threshold,
                    gain,
                });
            }
        }
    }
    best
}

fn partition(samples: &[Sample], split: &Split) -> (Vec<Sample>, Vec<Sample>) {
    samples.iter().partition(|s| split.goes_left(&s.features))
}

struct Grower<'a> {
    params: &'a CausalTreeParams,
    next_leaf: usize,
}

impl Grower<'_> {
    fn grow(&mut self, split_half: &[Sample], est_half: &[Sample], depth: usize) -> Result<TreeNode> {
        if depth < self.params.max_depth {
            if let Some(split) = best_split(split_half, est_half, self.params) {
                let (split_l, split_r) = partition(split_half, &split);
                let (est_l, est_r) = partition(est_half, &split);
                let left = self.grow(&split_l, &est_l, depth + 1)?;
                let right = self.grow(&split_r, &est_r, depth + 1)?;
                return Ok(TreeNode::Internal {
                    split,
                    left: Box::new(left),
                    right: Box::new(right),
                });
            }
        }
        let id = self.next_leaf;
        self.next_leaf += 1;
        Ok(TreeNode::leaf(id, leaf_estimate(est_half)?))
    }
}

fn check_root(split_half: &Dataset, est_half: &Dataset, min_group_leaf: usize) -> Result<()> {
    for (name, half) in [("split", split_half), ("estimation", est_half)] {
        let counts = half.counts();
        if counts.min() < min_group_leaf {
            return Err(Error::DegenerateSplit(format!(
                "{name} half has {} control and {} individual samples, need {min_group_leaf} of each",
                counts.control, counts.individual
            )));
        }
    }
    Ok(())
}

/// Fits an honest causal tree. Deterministic in `(d as a multiset, params)`.
pub fn fit_causal_tree(d: &Dataset, params: &CausalTreeParams) -> Result<CausalTree> {
    params.validate()?;
    validate_dataset(d, true)?;
    let (split_half, est_half) = stratified_honest_split(d, params.honest_fraction, params.seed)?;
    check_root(&split_half, &est_half, params.min_group_leaf)?;
    let mut grower = Grower {
        params,
        next_leaf: 0,
    };
    let root = grower.grow(&split_half.samples, &est_half.samples, 0)?;
    Ok(CausalTree {
        root,
        params: *params,
        feature_names: default_feature_names(),
    })
}

/// Average of honest trees, each fit on a stratified subsample drawn
/// without replacement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CausalForest {
    pub params: CausalTreeParams,
    pub n_trees: usize,
    pub subsample_ratio: f64,
    pub trees: Vec<CausalTree>,
}

impl CausalForest {
    pub fn predict_tau(&self, p: &TaskFeatures) -> DifficultyEstimate {
        let total: f64 = self.trees.iter().map(|t| t.predict_tau(p).tau_hat).sum();
        DifficultyEstimate {
            tau_hat: total / self.trees.len() as f64,
            leaf_id: None,
        }
    }
}

impl EffectModel for CausalForest {
    fn predict(&self, p: &TaskFeatures) -> DifficultyEstimate {
        self.predict_tau(p)
    }
}

/// Member `i` draws its subsample with seed
/// `derive_seed(seed, SUBSAMPLE_BASE + i)` and grows with
/// `derive_seed(seed, MEMBER_BASE + i)`.
pub fn fit_causal_forest(
    d: &Dataset,
    params: &CausalTreeParams,
    n_trees: usize,
    subsample_ratio: f64,
) -> Result<CausalForest> {
    params.validate()?;
    if n_trees == 0 {
        return Err(Error::InvalidParameter("n_trees must be at least 1".into()));
    }
    if !(subsample_ratio > 0.0 && subsample_ratio <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "subsample_ratio must lie in (0, 1], got {subsample_ratio}"
        )));
    }
    validate_dataset(d, true)?;
    let trees = (0..n_trees)
        .into_par_iter()
        .map(|i| {
            let sub = stratified_subsample(
                d,
                subsample_ratio,
                derive_seed(params.seed, stream::SUBSAMPLE_BASE + i as u64),
            )?;
            let member = CausalTreeParams {
                seed: derive_seed(params.seed, stream::MEMBER_BASE + i as u64),
                ..*params
            };
            fit_causal_tree(&sub, &member)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CausalForest {
        params: *params,
        n_trees,
        subsample_ratio,
        trees,
    })
}
