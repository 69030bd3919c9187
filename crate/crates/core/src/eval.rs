//! Held-out r² against ground truth, repeated over seeded runs, with
//! standard errors and paired t-tests against a reference model.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::baselines::{fit_t_learner, CartParams, ForestParams, KnnParams, RegressorSpec};
use crate::causal_tree::{fit_causal_forest, fit_causal_tree, CausalTreeParams};
use crate::domain::{require_both, Dataset, GroupLabel, TaskFeatures};
use crate::error::{Error, Result};
use crate::model::{EffectModel, FittedModel};
use crate::seed::{derive_seed, rng_from_seed, stream};
use crate::split_rule::sorted_mean;
use crate::synth::{generate_dataset, sample_workspace_point, true_tau, DgpSpec};

fn same_length(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(())
}

fn all_equal(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[0] == w[1])
}

/// Coefficient of determination `1 − SS_res / SS_tot`. May be negative.
pub fn r_squared(truth: &[f64], pred: &[f64]) -> Result<f64> {
    same_length(truth, pred)?;
    if truth.len() < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            got: truth.len(),
        });
    }
    if all_equal(truth) {
        return Err(Error::ZeroVariance);
    }
    let mean = truth.iter().sum::<f64>() / truth.len() as f64;
    let ss_tot: f64 = truth.iter().map(|t| (t - mean).powi(2)).sum();
    let ss_res: f64 = truth.iter().zip(pred).map(|(t, p)| (t - p).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Sample standard deviation (n − 1) over √n.
pub fn std_error(values: &[f64]) -> Result<f64> {
    let n = values.len();
    if n < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: n });
    }
    if all_equal(values) {
        return Ok(0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    Ok(var.sqrt() / (n as f64).sqrt())
}

/// Two-sided paired t-test on `a − b` with `n − 1` degrees of freedom.
///
/// When every difference is the same the statistic is undefined; the
/// p-value is then 1 if that difference is zero and 0 otherwise.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<f64> {
    same_length(a, b)?;
    let n = a.len();
    if n < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: n });
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    if all_equal(&d) {
        return Ok(if d[0] == 0.0 { 1.0 } else { 0.0 });
    }
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let t = mean / (var / n as f64).sqrt();
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("n >= 2 gives a valid t distribution");
    Ok((2.0 * dist.sf(t.abs())).clamp(0.0, 1.0))
}

/// Stand-in ground truth for data without a known effect surface: each
/// held-out individual reach minus the mean of its `k` nearest held-out
/// control reaches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchedTruth {
    pub features: TaskFeatures,
    pub tau: f64,
}

/// Neighbours are ranked by Euclidean distance over `(x, y, z, dist)`, ties
/// by canonical order; fewer than `k` controls means all are used.
pub fn matched_holdout_truth(holdout: &Dataset, k: usize) -> Result<Vec<MatchedTruth>> {
    if k == 0 {
        return Err(Error::InvalidParameter("k must be at least 1".into()));
    }
    require_both(holdout.counts())?;
    let controls = holdout.group(GroupLabel::Control).canonical().samples;
    let k = k.min(controls.len());
    Ok(holdout
        .iter()
        .filter(|s| s.group == GroupLabel::Individual)
        .map(|s| {
            let q = s.features.as_array();
            let mut ranked: Vec<(f64, usize)> = controls
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    let d2 = q
                        .iter()
                        .zip(c.features.as_array())
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>();
                    (d2, i)
                })
                .collect();
            ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let matched = sorted_mean(ranked[..k].iter().map(|&(_, i)| controls[i].outcome).collect());
            MatchedTruth {
                features: s.features,
                tau: s.outcome - matched,
            }
        })
        .collect())
}

/// r² of `model` against matched-control truth on an external holdout set.
pub fn score_against_matched(model: &dyn EffectModel, holdout: &Dataset, k: usize) -> Result<f64> {
    let truth = matched_holdout_truth(holdout, k)?;
    let t: Vec<f64> = truth.iter().map(|m| m.tau).collect();
    let p: Vec<f64> = truth.iter().map(|m| model.predict(&m.features).tau_hat).collect();
    r_squared(&t, &p)
}

/// Honest causal forest settings: tree parameters plus ensemble size and
/// per-tree subsample ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CausalForestSpec {
    pub max_depth: usize,
    pub min_group_leaf: usize,
    pub honest_fraction: f64,
    pub seed: u64,
    pub n_trees: usize,
    pub subsample_ratio: f64,
}

impl Default for CausalForestSpec {
    fn default() -> Self {
        let t = CausalTreeParams::default();
        CausalForestSpec {
            max_depth: t.max_depth,
            min_group_leaf: t.min_group_leaf,
            honest_fraction: t.honest_fraction,
            seed: t.seed,
            n_trees: 50,
            subsample_ratio: 0.5,
        }
    }
}

impl CausalForestSpec {
    pub fn tree_params(&self) -> CausalTreeParams {
        CausalTreeParams {
            max_depth: self.max_depth,
            min_group_leaf: self.min_group_leaf,
            honest_fraction: self.honest_fraction,
            seed: self.seed,
        }
    }
}

/// One estimator configuration, tagged by `kind`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelKind {
    CausalTree(CausalTreeParams),
    CausalForest(CausalForestSpec),
    TCart(CartParams),
    TForest(ForestParams),
    TKnn(KnnParams),
}

impl ModelKind {
    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::CausalTree(_) => "causal_tree",
            ModelKind::CausalForest(_) => "causal_forest",
            ModelKind::TCart(_) => "t_cart",
            ModelKind::TForest(_) => "t_forest",
            ModelKind::TKnn(_) => "t_knn",
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            ModelKind::CausalTree(p) => p.seed,
            ModelKind::CausalForest(p) => p.seed,
            ModelKind::TCart(p) => p.seed,
            ModelKind::TForest(p) => p.seed,
            ModelKind::TKnn(p) => p.seed,
        }
    }

    /// Fits with the configured seed.
    pub fn fit(&self, d: &Dataset) -> Result<FittedModel> {
        Ok(match *self {
            ModelKind::CausalTree(p) => fit_causal_tree(d, &p)?.into(),
            ModelKind::CausalForest(f) => {
                fit_causal_forest(d, &f.tree_params(), f.n_trees, f.subsample_ratio)?.into()
            }
            ModelKind::TCart(p) => fit_t_learner(d, &RegressorSpec::Cart(p))?.into(),
            ModelKind::TForest(p) => fit_t_learner(d, &RegressorSpec::Forest(p))?.into(),
            ModelKind::TKnn(p) => fit_t_learner(d, &RegressorSpec::Knn(p))?.into(),
        })
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        match &mut self {
            ModelKind::CausalTree(p) => p.seed = seed,
            ModelKind::CausalForest(p) => p.seed = seed,
            ModelKind::TCart(p) => p.seed = seed,
            ModelKind::TForest(p) => p.seed = seed,
            ModelKind::TKnn(p) => p.seed = seed,
        }
        self
    }
}

/// Something the benchmark can fit once per run.
pub trait Estimator: Send + Sync {
    /// `run_seed` is the per-run seed; implementations derive their own
    /// randomness from it.
    fn fit_run(&self, train: &Dataset, run_seed: u64) -> Result<Box<dyn EffectModel>>;
}

impl Estimator for ModelKind {
    /// Uses `derive_seed(run_seed, configured seed)`, so two entries with the
    /// same configuration fit identical models.
    fn fit_run(&self, train: &Dataset, run_seed: u64) -> Result<Box<dyn EffectModel>> {
        let seeded = self.with_seed(derive_seed(run_seed, self.seed()));
        Ok(Box::new(seeded.fit(train)?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub name: String,
    pub model: ModelKind,
}

impl ModelSpec {
    pub fn new(name: impl Into<String>, model: ModelKind) -> Self {
        ModelSpec {
            name: name.into(),
            model,
        }
    }
}

fn default_runs() -> usize {
    10
}

fn default_holdout() -> usize {
    500
}

/// The first model is the reference that every other row is tested
/// against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    pub dgp: DgpSpec,
    pub models: Vec<ModelSpec>,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default = "default_holdout")]
    pub holdout_points: usize,
    pub n_control: usize,
    pub n_individual: usize,
    pub master_seed: u64,
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        self.dgp.validate()?;
        if self.models.is_empty() {
            return Err(Error::InvalidParameter("bench needs at least one model".into()));
        }
        if self.runs < 2 {
            return Err(Error::InvalidParameter("bench needs at least 2 runs".into()));
        }
        if self.holdout_points < 2 {
            return Err(Error::InvalidParameter("bench needs at least 2 holdout points".into()));
        }
        if self.n_control == 0 || self.n_individual == 0 {
            return Err(Error::InvalidParameter("group counts must be at least 1".into()));
        }
        Ok(())
    }

    pub fn from_toml(text: &str, origin: &str) -> Result<Self> {
        let cfg: BenchConfig = toml::from_str(text).map_err(|e| Error::Config {
            path: origin.to_string(),
            reason: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("bench config always serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub model_name: String,
    pub mean_r2: f64,
    pub stderr_r2: f64,
    /// `None` for the reference row.
    pub p_vs_reference: Option<f64>,
    /// Per-run r², in run order.
    pub run_r2: Vec<f64>,
}

/// Per-run training set and holdout points with analytic truth.
pub struct RunData {
    pub train: Dataset,
    pub holdout: Vec<TaskFeatures>,
    pub truth: Vec<f64>,
}

/// Run `run` draws training data with `derive_seed(run_seed, DATA)` and
/// holdout points with `derive_seed(run_seed, HOLDOUT)`, where
/// `run_seed = derive_seed(master_seed, run)`.
pub fn run_data(cfg: &BenchConfig, run: usize) -> Result<(u64, RunData)> {
    let run_seed = derive_seed(cfg.master_seed, run as u64);
    let (train, _) = generate_dataset(
        &cfg.dgp,
        cfg.n_control,
        cfg.n_individual,
        derive_seed(run_seed, stream::DATA),
    )?;
    let mut rng = rng_from_seed(derive_seed(run_seed, stream::HOLDOUT));
    let holdout: Vec<TaskFeatures> = (0..cfg.holdout_points)
        .map(|_| sample_workspace_point(&cfg.dgp.workspace, &mut rng))
        .collect();
    let truth = holdout
        .iter()
        .map(|p| true_tau(&cfg.dgp, p))
        .collect::<Result<Vec<_>>>()?;
    Ok((run_seed, RunData { train, holdout, truth }))
}

pub fn run_benchmark(cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    let estimators: Vec<(&str, &dyn Estimator)> = cfg
        .models
        .iter()
        .map(|m| (m.name.as_str(), &m.model as &dyn Estimator))
        .collect();
    run_benchmark_with(cfg, &estimators)
}

/// Like [`run_benchmark`] but with arbitrary estimators; `cfg.models` is
/// ignored. Every estimator sees the same training data and holdout points
/// within a run.
pub fn run_benchmark_with(cfg: &BenchConfig, estimators: &[(&str, &dyn Estimator)]) -> Result<Vec<BenchRow>> {
    cfg.validate()?;
    let per_run: Vec<Vec<f64>> = (0..cfg.runs)
        .into_par_iter()
        .map(|run| {
            let annotate = |e: Error| Error::Run {
                run,
                source: Box::new(e),
            };
            let (run_seed, data) = run_data(cfg, run).map_err(annotate)?;
            estimators
                .iter()
                .map(|(_, est)| {
                    let model = est.fit_run(&data.train, run_seed)?;
                    let pred: Vec<f64> = data.holdout.iter().map(|p| model.predict(p).tau_hat).collect();
                    r_squared(&data.truth, &pred)
                })
                .collect::<Result<Vec<f64>>>()
                .map_err(annotate)
        })
        .collect::<Result<_>>()?;

    let column = |m: usize| -> Vec<f64> { per_run.iter().map(|r| r[m]).collect() };
    let reference = column(0);
    estimators
        .iter()
        .enumerate()
        .map(|(m, (name, _))| {
            let r2 = column(m);
            Ok(BenchRow {
                model_name: name.to_string(),
                mean_r2: r2.iter().sum::<f64>() / r2.len() as f64,
                stderr_r2: std_error(&r2)?,
                p_vs_reference: if m == 0 { None } else { Some(paired_t_test(&r2, &reference)?) },
                run_r2: r2,
            })
        })
        .collect()
}

/// `model,mean_r2,stderr_r2,p_vs_reference`; the reference p-value is blank.
pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["model", "mean_r2", "stderr_r2", "p_vs_reference"])
        .expect("in-memory csv write");
    for r in rows {
        w.write_record([
            r.model_name.clone(),
            format!("{:.9}", r.mean_r2),
            format!("{:.9}", r.stderr_r2),
            r.p_vs_reference.map(|p| format!("{p:.9}")).unwrap_or_default(),
        ])
        .expect("in-memory csv write");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("csv is utf-8")
}

/// Three decimals without the leading zero, e.g. `.656` or `-.120`.
fn table_number(v: f64) -> String {
    let s = format!("{v:.3}");
    if let Some(rest) = s.strip_prefix("0.") {
        format!(".{rest}")
    } else if let Some(rest) = s.strip_prefix("-0.") {
        format!("-.{rest}")
    } else {
        s
    }
}

fn table_p(p: Option<f64>) -> String {
    match p {
        None => "--".into(),
        Some(p) if p < 0.001 => "<.001".into(),
        Some(p) => table_number(p),
    }
}

/// Aligned text table: model, avg. r², std. err. r², p-value.
pub fn bench_table(rows: &[BenchRow], truth_label: &str) -> String {
    let width = rows
        .iter()
        .map(|r| r.model_name.chars().count())
        .chain(["Model".len()])
        .max()
        .unwrap_or(5);
    let mut out = format!("# ground truth: {truth_label}\n");
    let header = format!(
        "{:<width$}  {:>8}  {:>13}  {:>7}",
        "Model", "avg. r2", "std. err. r2", "p-value"
    );
    let rule = "-".repeat(header.len());
    out.push_str(&format!("{rule}\n{header}\n{rule}\n"));
    for r in rows {
        out.push_str(&format!(
            "{:<width$}  {:>8}  {:>13}  {:>7}\n",
            r.model_name,
            table_number(r.mean_r2),
            table_number(r.stderr_r2),
            table_p(r.p_vs_reference)
        ));
    }
    out.push_str(&format!("{rule}\n"));
    out
}

/// Table plus the run settings and every model's full parameter set.
pub fn bench_report(cfg: &BenchConfig, rows: &[BenchRow]) -> String {
    let mut out = bench_table(rows, SYNTHETIC_TRUTH_LABEL);
    out.push_str(&format!(
        "# runs: {}, holdout points: {}, n_control: {}, n_individual: {}, master_seed: {}\n",
        cfg.runs, cfg.holdout_points, cfg.n_control, cfg.n_individual, cfg.master_seed
    ));
    for m in &cfg.models {
        let params = serde_json::to_string(&m.model).expect("model parameters always serialize");
        out.push_str(&format!("# {}: {params}\n", m.name));
    }
    out
}

/// Label used for analytic synthetic ground truth in bench output.
pub const SYNTHETIC_TRUTH_LABEL: &str = "analytic true_tau of the synthetic generator";
