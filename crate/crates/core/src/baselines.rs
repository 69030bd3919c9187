//! T-learner baselines: one outcome regressor per group, effect = difference
//! of their predictions.
//!
//! Base learners are CART (variance-reduction splits), a bagged CART forest
//! with per-split feature sampling, and brute-force k-nearest neighbours.
//! CART uses the same threshold, routing and tie conventions as the causal
//! tree (see [`crate::split_rule`]).

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{validate_dataset, Dataset, GroupLabel, Sample, TaskFeatures, N_FEATURES};
use crate::error::{Error, Result};
use crate::model::{DifficultyEstimate, EffectModel};
use crate::seed::{derive_seed, rng_from_seed, stream};
use crate::split_rule::{beats, midpoint, outcome_scale, snap_gap, sorted_mean, TIE_TOL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CartParams {
    pub max_depth: usize,
    pub min_leaf: usize,
    pub seed: u64,
}

impl Default for CartParams {
    fn default() -> Self {
        CartParams {
            max_depth: 8,
            min_leaf: 5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub features_per_split: usize,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 100,
            max_depth: 8,
            min_leaf: 5,
            features_per_split: 2,
            seed: 0,
        }
    }
}

/// `standardize` z-scores each feature with the training mean and standard
/// deviation before measuring distances. kNN uses no randomness, so `seed`
/// is unused.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KnnParams {
    pub k: usize,
    pub standardize: bool,
    pub seed: u64,
}

impl Default for KnnParams {
    fn default() -> Self {
        KnnParams {
            k: 5,
            standardize: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RegressorSpec {
    Cart(CartParams),
    Forest(ForestParams),
    Knn(KnnParams),
}

impl RegressorSpec {
    pub fn seed(&self) -> u64 {
        match self {
            RegressorSpec::Cart(p) => p.seed,
            RegressorSpec::Forest(p) => p.seed,
            RegressorSpec::Knn(p) => p.seed,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        match &mut self {
            RegressorSpec::Cart(p) => p.seed = seed,
            RegressorSpec::Forest(p) => p.seed = seed,
            RegressorSpec::Knn(p) => p.seed = seed,
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidParameter(msg.to_string()));
        match self {
            RegressorSpec::Cart(p) if p.min_leaf == 0 => bad("min_leaf must be at least 1"),
            RegressorSpec::Forest(p) if p.min_leaf == 0 => bad("min_leaf must be at least 1"),
            RegressorSpec::Forest(p) if p.n_trees == 0 => bad("n_trees must be at least 1"),
            RegressorSpec::Forest(p) if !(1..=N_FEATURES).contains(&p.features_per_split) => {
                bad("features_per_split must lie in 1..=4")
            }
            RegressorSpec::Knn(p) if p.k == 0 => bad("k must be at least 1"),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RegressionNode {
    Internal {
        feature_index: usize,
        threshold: f64,
        gain: f64,
        left: Box<RegressionNode>,
        right: Box<RegressionNode>,
    },
    Leaf {
        value: f64,
        n: usize,
    },
}

impl RegressionNode {
    pub fn predict(&self, p: &TaskFeatures) -> f64 {
        let mut node = self;
        loop {
            match node {
                RegressionNode::Internal {
                    feature_index,
                    threshold,
                    left,
                    right,
                    ..
                } => node = if p.get(*feature_index) < *threshold { left } else { right },
                RegressionNode::Leaf { value, .. } => return *value,
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KnnPoint {
    pub features: [f64; N_FEATURES],
    pub outcome: f64,
}

/// A fitted base regressor together with the parameters it was fit with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Regressor {
    Cart {
        params: CartParams,
        root: RegressionNode,
    },
    Forest {
        params: ForestParams,
        trees: Vec<RegressionNode>,
    },
    Knn {
        params: KnnParams,
        center: [f64; N_FEATURES],
        scale: [f64; N_FEATURES],
        /// Training points in canonical order; distance ties go to the
        /// earlier point.
        points: Vec<KnnPoint>,
    },
}

impl Regressor {
    pub fn spec(&self) -> RegressorSpec {
        match self {
            Regressor::Cart { params, .. } => RegressorSpec::Cart(*params),
            Regressor::Forest { params, .. } => RegressorSpec::Forest(*params),
            Regressor::Knn { params, .. } => RegressorSpec::Knn(*params),
        }
    }

    pub fn predict(&self, p: &TaskFeatures) -> f64 {
        match self {
            Regressor::Cart { root, .. } => root.predict(p),
            Regressor::Forest { trees, .. } => {
                trees.iter().map(|t| t.predict(p)).sum::<f64>() / trees.len() as f64
            }
            Regressor::Knn {
                params,
                center,
                scale,
                points,
            } => {
                let q = standardized(&p.as_array(), center, scale);
                let mut ranked: Vec<(f64, usize)> = points
                    .iter()
                    .enumerate()
                    .map(|(i, pt)| (squared_distance(&q, &standardized(&pt.features, center, scale)), i))
                    .collect();
                ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                let k = params.k.min(points.len());
                sorted_mean(ranked[..k].iter().map(|&(_, i)| points[i].outcome).collect())
            }
        }
    }
}

pub fn predict_base(r: &Regressor, p: &TaskFeatures) -> f64 {
    r.predict(p)
}

fn standardized(f: &[f64; N_FEATURES], center: &[f64; N_FEATURES], scale: &[f64; N_FEATURES]) -> [f64; N_FEATURES] {
    std::array::from_fn(|j| (f[j] - center[j]) / scale[j])
}

fn squared_distance(a: &[f64; N_FEATURES], b: &[f64; N_FEATURES]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Greedy variance-reduction tree builder. With `features_per_split` below
/// 4, each node draws that many distinct features from `rng`.
struct CartGrower<'a, R: Rng> {
    max_depth: usize,
    min_leaf: usize,
    features_per_split: usize,
    rng: &'a mut R,
}

impl<R: Rng> CartGrower<'_, R> {
    fn grow(&mut self, rows: &[Sample], depth: usize) -> RegressionNode {
        if depth < self.max_depth && rows.len() >= 2 * self.min_leaf {
            let features: Vec<usize> = if self.features_per_split >= N_FEATURES {
                (0..N_FEATURES).collect()
            } else {
                let mut f = index::sample(self.rng, N_FEATURES, self.features_per_split).into_vec();
                f.sort_unstable();
                f
            };
            if let Some((feature_index, threshold, gain)) =
                best_regression_split(rows, &features, self.min_leaf)
            {
                let (l, r): (Vec<Sample>, Vec<Sample>) = rows
                    .iter()
                    .partition(|s| s.features.get(feature_index) < threshold);
                let left = self.grow(&l, depth + 1);
                let right = self.grow(&r, depth + 1);
                return RegressionNode::Internal {
                    feature_index,
                    threshold,
                    gain,
                    left: Box::new(left),
                    right: Box::new(right),
                };
            }
        }
        RegressionNode::Leaf {
            value: sorted_mean(rows.iter().map(|s| s.outcome).collect()),
            n: rows.len(),
        }
    }
}

/// Variance reduction `SSE_parent − SSE_L − SSE_R`, computed in the
/// equivalent form `n_L n_R / n · (ȳ_L − ȳ_R)²`. Returns
/// `(feature, threshold, gain)` of the best valid candidate with positive
/// gain among `features`.
pub(crate) fn best_regression_split(
    rows: &[Sample],
    features: &[usize],
    min_leaf: usize,
) -> Option<(usize, f64, f64)> {
    let n = rows.len();
    let total: f64 = rows.iter().map(|s| s.outcome).sum();
    let scale = outcome_scale(rows.iter().map(|s| &s.outcome));
    let tie_tol = TIE_TOL * scale * scale * n as f64;
    let mut best: Option<(usize, f64, f64)> = None;
    let mut order: Vec<&Sample> = rows.iter().collect();
    for &feature in features {
        order.sort_by(|a, b| a.features.get(feature).total_cmp(&b.features.get(feature)));
        let mut left_sum = 0.0;
        for (i, pair) in order.windows(2).enumerate() {
            left_sum += pair[0].outcome;
            let n_left = i + 1;
            let n_right = n - n_left;
            let (lo, hi) = (pair[0].features.get(feature), pair[1].features.get(feature));
            if lo == hi || n_left < min_leaf || n_right < min_leaf {
                continue;
            }
            let Some(threshold) = midpoint(lo, hi) else {
                continue;
            };
            let gap = snap_gap(
                left_sum / n_left as f64 - (total - left_sum) / n_right as f64,
                scale,
            );
            let gain = (n_left * n_right) as f64 / n as f64 * gap * gap;
            if beats(gain, best.map(|b| b.2), tie_tol) {
                best = Some((feature, threshold, gain));
            }
        }
    }
    best
}

/// Fits one base learner on single-group data. Group labels are ignored.
pub fn fit_base_regressor(spec: &RegressorSpec, data: &[Sample]) -> Result<Regressor> {
    spec.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut rows = data.to_vec();
    rows.sort_by(Sample::canonical_cmp);
    match *spec {
        RegressorSpec::Cart(params) => {
            check_min(rows.len(), params.min_leaf)?;
            let mut rng = rng_from_seed(params.seed);
            let mut grower = CartGrower {
                max_depth: params.max_depth,
                min_leaf: params.min_leaf,
                features_per_split: N_FEATURES,
                rng: &mut rng,
            };
            Ok(Regressor::Cart {
                params,
                root: grower.grow(&rows, 0),
            })
        }
        RegressorSpec::Forest(params) => {
            check_min(rows.len(), params.min_leaf)?;
            let trees = (0..params.n_trees)
                .into_par_iter()
                .map(|i| {
                    let mut rng = rng_from_seed(derive_seed(params.seed, stream::MEMBER_BASE + i as u64));
                    let bag: Vec<Sample> = (0..rows.len())
                        .map(|_| rows[rng.random_range(0..rows.len())])
                        .collect();
                    let mut grower = CartGrower {
                        max_depth: params.max_depth,
                        min_leaf: params.min_leaf,
                        features_per_split: params.features_per_split,
                        rng: &mut rng,
                    };
                    grower.grow(&bag, 0)
                })
                .collect();
            Ok(Regressor::Forest { params, trees })
        }
        RegressorSpec::Knn(params) => {
            let points: Vec<KnnPoint> = rows
                .iter()
                .map(|s| KnnPoint {
                    features: s.features.as_array(),
                    outcome: s.outcome,
                })
                .collect();
            let (center, scale) = if params.standardize {
                feature_moments(&points)
            } else {
                ([0.0; N_FEATURES], [1.0; N_FEATURES])
            };
            Ok(Regressor::Knn {
                params,
                center,
                scale,
                points,
            })
        }
    }
}

fn check_min(got: usize, needed: usize) -> Result<()> {
    if got < needed {
        return Err(Error::InsufficientSamples { needed, got });
    }
    Ok(())
}

fn feature_moments(points: &[KnnPoint]) -> ([f64; N_FEATURES], [f64; N_FEATURES]) {
    let n = points.len() as f64;
    let center: [f64; N_FEATURES] =
        std::array::from_fn(|j| points.iter().map(|p| p.features[j]).sum::<f64>() / n);
    let scale = std::array::from_fn(|j| {
        let var = points
            .iter()
            .map(|p| (p.features[j] - center[j]).powi(2))
            .sum::<f64>()
            / n;
        let sd = var.sqrt();
        if sd.is_finite() && sd > 0.0 {
            sd
        } else {
            1.0
        }
    });
    (center, scale)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TLearner {
    pub spec: RegressorSpec,
    pub model_individual: Regressor,
    pub model_control: Regressor,
}

impl TLearner {
    pub fn predict_tau(&self, p: &TaskFeatures) -> DifficultyEstimate {
        DifficultyEstimate {
            tau_hat: self.model_individual.predict(p) - self.model_control.predict(p),
            leaf_id: None,
        }
    }
}

impl EffectModel for TLearner {
    fn predict(&self, p: &TaskFeatures) -> DifficultyEstimate {
        self.predict_tau(p)
    }
}

/// Fits the individual-side learner on Individual samples and the control
/// side on Control samples, with seeds derived from `spec`'s seed (streams
/// 1 and 0 respectively).
pub fn fit_t_learner(d: &Dataset, spec: &RegressorSpec) -> Result<TLearner> {
    validate_dataset(d, true)?;
    let side = |g: GroupLabel, s: u64| {
        let data = d.group(g);
        fit_base_regressor(&spec.with_seed(derive_seed(spec.seed(), s)), &data.samples)
    };
    Ok(TLearner {
        spec: *spec,
        model_individual: side(GroupLabel::Individual, stream::INDIVIDUAL_SIDE)?,
        model_control: side(GroupLabel::Control, stream::CONTROL_SIDE)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::features_from_xyz;

    fn row(x: f64, y: f64, z: f64, out: f64) -> Sample {
        Sample::new(features_from_xyz(x, y, z).unwrap(), GroupLabel::Control, out)
    }

    fn grid_rows(f: impl Fn(f64, f64) -> f64) -> Vec<Sample> {
        let mut v = Vec::new();
        for i in 0..8 {
            for j in 0..5 {
                let x = -0.2 + 0.05 * i as f64;
                let y = 0.02 + 0.05 * j as f64;
                v.push(row(x, y, 0.1, f(x, y)));
            }
        }
        v
    }

    fn relabel(rows: &[Sample], g: GroupLabel) -> Vec<Sample> {
        rows.iter().map(|s| Sample { group: g, ..*s }).collect()
    }

    #[test]
    fn cart_constant_outcome_is_single_leaf() {
        let rows = grid_rows(|_, _| 0.7);
        let r = fit_base_regressor(&RegressorSpec::Cart(CartParams::default()), &rows).unwrap();
        match &r {
            Regressor::Cart { root: RegressionNode::Leaf { value, n }, .. } => {
                assert_eq!(*n, rows.len());
                assert!((value - 0.7).abs() < 1e-12);
            }
            other => panic!("expected a single leaf, got {other:?}"),
        }
    }

    #[test]
    fn cart_depth_zero_is_mean() {
        let rows = vec![row(0.1, 0.1, 0.0, 1.0), row(0.2, 0.1, 0.0, 2.0), row(0.3, 0.0, 0.0, 3.0)];
        let spec = RegressorSpec::Cart(CartParams { max_depth: 0, min_leaf: 1, seed: 0 });
        let r = fit_base_regressor(&spec, &rows).unwrap();
        for x in [-0.2, 0.0, 0.25] {
            assert_eq!(r.predict(&features_from_xyz(x, 0.1, 0.0).unwrap()), 2.0);
        }
    }

    #[test]
    fn cart_finds_a_step() {
        let rows = grid_rows(|x, _| if x < 0.0 { 1.0 } else { 2.0 });
        let r = fit_base_regressor(&RegressorSpec::Cart(CartParams::default()), &rows).unwrap();
        match &r {
            Regressor::Cart { root: RegressionNode::Internal { feature_index, threshold, left, right, .. }, .. } => {
                assert_eq!(*feature_index, 0);
                assert!((threshold - (-0.025)).abs() < 1e-12);
                assert!(matches!(**left, RegressionNode::Leaf { value, .. } if value == 1.0));
                assert!(matches!(**right, RegressionNode::Leaf { value, .. } if value == 2.0));
            }
            other => panic!("unexpected tree {other:?}"),
        }
    }

    #[test]
    fn knn_exact_recall_and_fallbacks() {
        let rows = vec![
            row(0.1, 0.0, 0.0, 1.0),
            row(0.0, 0.3, 0.0, 2.0),
            row(-0.2, 0.1, 0.1, 3.0),
            row(0.05, 0.2, 0.3, 4.0),
            row(0.2, 0.2, 0.2, 5.0),
        ];
        let k1 = fit_base_regressor(&RegressorSpec::Knn(KnnParams { k: 1, ..Default::default() }), &rows).unwrap();
        for s in &rows {
            assert_eq!(k1.predict(&s.features), s.outcome);
        }
        let k5 = fit_base_regressor(&RegressorSpec::Knn(KnnParams::default()), &rows).unwrap();
        let q = features_from_xyz(0.3, 0.0, 0.4).unwrap();
        assert_eq!(k5.predict(&q), 3.0);

        let two = vec![row(0.1, 0.0, 0.0, 1.0), row(0.3, 0.0, 0.0, 2.0)];
        let k2 = fit_base_regressor(&RegressorSpec::Knn(KnnParams { k: 2, ..Default::default() }), &two).unwrap();
        assert_eq!(k2.predict(&q), 1.5);
        let k9 = fit_base_regressor(&RegressorSpec::Knn(KnnParams { k: 9, ..Default::default() }), &two).unwrap();
        assert_eq!(k9.predict(&q), 1.5);
    }

    #[test]
    fn knn_standardize_changes_metric_only() {
        let rows = grid_rows(|x, y| 1.0 + x + 2.0 * y);
        let plain = fit_base_regressor(&RegressorSpec::Knn(KnnParams { k: 1, ..Default::default() }), &rows).unwrap();
        let std = fit_base_regressor(
            &RegressorSpec::Knn(KnnParams { k: 1, standardize: true, seed: 0 }),
            &rows,
        )
        .unwrap();
        for s in &rows {
            assert_eq!(plain.predict(&s.features), std.predict(&s.features));
        }
    }

    #[test]
    fn forest_stays_within_outcome_range_and_is_seeded() {
        let rows = grid_rows(|x, y| 0.5 + (7.0 * x).sin().abs() + y);
        let (lo, hi) = rows
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), s| (a.min(s.outcome), b.max(s.outcome)));
        let spec = RegressorSpec::Forest(ForestParams { n_trees: 20, min_leaf: 2, seed: 5, ..Default::default() });
        let f1 = fit_base_regressor(&spec, &rows).unwrap();
        let f2 = fit_base_regressor(&spec, &rows).unwrap();
        let f3 = fit_base_regressor(&spec.with_seed(6), &rows).unwrap();
        let mut differs = false;
        for i in 0..30 {
            let p = features_from_xyz(-0.3 + 0.02 * i as f64, 0.01 * i as f64, 0.1).unwrap();
            let v = f1.predict(&p);
            assert!(v >= lo && v <= hi);
            assert_eq!(v, f2.predict(&p));
            differs |= v != f3.predict(&p);
        }
        assert!(differs);
    }

    #[test]
    fn base_errors() {
        let spec = RegressorSpec::Cart(CartParams::default());
        assert!(matches!(fit_base_regressor(&spec, &[]), Err(Error::EmptyDataset)));
        let rows = vec![row(0.1, 0.1, 0.1, 1.0); 3];
        assert!(matches!(
            fit_base_regressor(&spec, &rows),
            Err(Error::InsufficientSamples { needed: 5, got: 3 })
        ));
        let bad = RegressorSpec::Forest(ForestParams { features_per_split: 5, ..Default::default() });
        assert!(matches!(fit_base_regressor(&bad, &rows), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn t_learner_constant_groups() {
        let mut rows = relabel(&grid_rows(|_, _| 2.0), GroupLabel::Individual);
        rows.extend(relabel(&grid_rows(|_, _| 1.5), GroupLabel::Control));
        let t = fit_t_learner(&Dataset::new(rows), &RegressorSpec::Cart(CartParams::default())).unwrap();
        let e = t.predict_tau(&features_from_xyz(0.0, 0.1, 0.2).unwrap());
        assert_eq!(e.leaf_id, None);
        assert!((e.tau_hat - 0.5).abs() < 1e-12);
    }

    #[test]
    fn t_learner_identical_groups_is_zero() {
        let base = grid_rows(|x, y| 1.0 + x * x + y);
        let mut rows = relabel(&base, GroupLabel::Individual);
        rows.extend(relabel(&base, GroupLabel::Control));
        let d = Dataset::new(rows);
        for spec in [RegressorSpec::Cart(CartParams::default()), RegressorSpec::Knn(KnnParams::default())] {
            let t = fit_t_learner(&d, &spec).unwrap();
            for i in 0..10 {
                let p = features_from_xyz(-0.25 + 0.05 * i as f64, 0.12, 0.1).unwrap();
                assert_eq!(t.predict_tau(&p).tau_hat, 0.0);
            }
        }
    }

    #[test]
    fn t_learner_single_point_knn() {
        let d = Dataset::new(vec![
            Sample::new(features_from_xyz(0.1, 0.1, 0.1).unwrap(), GroupLabel::Individual, 1.9),
            Sample::new(features_from_xyz(0.2, 0.1, 0.1).unwrap(), GroupLabel::Control, 1.2),
        ]);
        let t = fit_t_learner(&d, &RegressorSpec::Knn(KnnParams { k: 1, ..Default::default() })).unwrap();
        let tau = t.predict_tau(&features_from_xyz(0.0, 0.0, 0.0).unwrap()).tau_hat;
        assert!((tau - 0.7).abs() < 1e-12);
    }

    #[test]
    fn t_learner_needs_both_groups() {
        let d = Dataset::new(grid_rows(|_, _| 1.0));
        assert!(matches!(
            fit_t_learner(&d, &RegressorSpec::Knn(KnnParams::default())),
            Err(Error::MissingGroup(GroupLabel::Individual))
        ));
    }
}
