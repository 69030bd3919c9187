mod common;

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::sync::Mutex;

use proptest::prelude::*;

use taskdiff::causal_tree::CausalTreeParams;
use taskdiff::domain::Dataset;
use taskdiff::eval::{
    paired_t_test, r_squared, run_benchmark_with, std_error, BenchConfig, Estimator, ModelKind, ModelSpec,
};
use taskdiff::model::{DifficultyEstimate, EffectModel};
use taskdiff::synth::{DgpSpec, EffectPreset};
use taskdiff::{Error, Result, TaskFeatures};

fn values(n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-5.0f64..5.0, n)
}

proptest! {
    #[test]
    fn r_squared_ignores_common_permutation(pairs in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 2..40), rot in 0usize..40) {
        let truth: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        prop_assume!(truth.windows(2).any(|w| w[0] != w[1]));
        let pred: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let mut rotated = pairs.clone();
        rotated.rotate_left(rot % pairs.len());
        rotated.reverse();
        let t2: Vec<f64> = rotated.iter().map(|p| p.0).collect();
        let p2: Vec<f64> = rotated.iter().map(|p| p.1).collect();
        let a = r_squared(&truth, &pred).unwrap();
        let b = r_squared(&t2, &p2).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
        prop_assert!(a <= 1.0);
    }

    #[test]
    fn r_squared_is_one_only_for_exact_predictions(truth in values(2..30), i in 0usize..30, eps in 1e-6f64..1.0) {
        prop_assume!(truth.windows(2).any(|w| w[0] != w[1]));
        prop_assert_eq!(r_squared(&truth, &truth).unwrap(), 1.0);
        let mut pred = truth.clone();
        let i = i % pred.len();
        pred[i] += eps;
        prop_assert!(r_squared(&truth, &pred).unwrap() < 1.0);
    }

    #[test]
    fn paired_t_is_symmetric_and_matches_oracle(a in values(2..30), shift in values(30..31)) {
        let b: Vec<f64> = a.iter().zip(&shift).map(|(x, s)| x + 0.3 * s).collect();
        let p = paired_t_test(&a, &b).unwrap();
        prop_assert_eq!(p, paired_t_test(&b, &a).unwrap());
        prop_assert!((0.0..=1.0).contains(&p));
        prop_assert!((p - common::paired_t_oracle(&a, &b)).abs() <= 1e-6);
    }

    #[test]
    fn std_error_non_negative(v in values(2..30)) {
        prop_assert!(std_error(&v).unwrap() >= 0.0);
    }
}

#[test]
fn t_oracle_agrees_with_closed_forms() {
    // one degree of freedom is Cauchy: P(|T| > t) = 1 - 2 atan(t) / pi
    for t in [0.3, 1.0, 4.0] {
        let exact = 1.0 - 2.0 * f64::atan(t) / std::f64::consts::PI;
        assert!((common::t_two_sided(t, 1.0) - exact).abs() < 1e-9);
    }
    // two degrees of freedom: P(|T| > t) = 1 - t / sqrt(2 + t²)
    for t in [0.5f64, 2.0, 10.0] {
        let exact = 1.0 - t / (2.0 + t * t).sqrt();
        assert!((common::t_two_sided(t, 2.0) - exact).abs() < 1e-9);
    }
}

#[test]
fn paired_t_reference_vector() {
    let d = [0.02, 0.03, 0.01, 0.04, 0.02, 0.03, 0.02, 0.01, 0.03, 0.02];
    let zeros = [0.0; 10];
    let p = paired_t_test(&d, &zeros).unwrap();
    assert!((p - common::paired_t_oracle(&d, &zeros)).abs() < 1e-6);
}

/// Records a digest of every training set and always predicts zero.
struct Recorder {
    seen: Mutex<Vec<(u64, u64)>>,
}

struct Zero;

impl EffectModel for Zero {
    fn predict(&self, _: &TaskFeatures) -> DifficultyEstimate {
        DifficultyEstimate {
            tau_hat: 0.0,
            leaf_id: None,
        }
    }
}

fn digest(d: &Dataset) -> u64 {
    let mut h = DefaultHasher::new();
    for s in d {
        for v in [s.features.x, s.features.y, s.features.z, s.features.dist, s.outcome] {
            v.to_bits().hash(&mut h);
        }
        s.group.hash(&mut h);
    }
    h.finish()
}

impl Estimator for Recorder {
    fn fit_run(&self, train: &Dataset, run_seed: u64) -> Result<Box<dyn EffectModel>> {
        self.seen.lock().unwrap().push((run_seed, digest(train)));
        Ok(Box::new(Zero))
    }
}

#[test]
fn every_model_sees_the_same_run_data() {
    let cfg = BenchConfig {
        dgp: DgpSpec::new(EffectPreset::Regional),
        models: vec![ModelSpec::new("unused", ModelKind::CausalTree(CausalTreeParams::default()))],
        runs: 4,
        holdout_points: 50,
        n_control: 40,
        n_individual: 40,
        master_seed: 8,
    };
    let (a, b) = (
        Recorder {
            seen: Mutex::new(vec![]),
        },
        Recorder {
            seen: Mutex::new(vec![]),
        },
    );
    let rows = run_benchmark_with(&cfg, &[("a", &a), ("b", &b)]).unwrap();
    assert_eq!(rows.len(), 2);
    let mut sa = a.seen.into_inner().unwrap();
    let mut sb = b.seen.into_inner().unwrap();
    sa.sort();
    sb.sort();
    assert_eq!(sa.len(), 4);
    assert_eq!(sa, sb);
    let distinct: std::collections::BTreeSet<u64> = sa.iter().map(|x| x.1).collect();
    assert_eq!(distinct.len(), 4);
    // zero predictions against a positive-mean truth score below zero
    assert!(rows.iter().all(|r| r.mean_r2 < 0.0));
    assert_eq!(rows[1].p_vs_reference, Some(1.0));
}

#[test]
fn metric_errors() {
    assert!(matches!(r_squared(&[1.0, 2.0], &[1.0]), Err(Error::LengthMismatch { .. })));
    assert!(matches!(paired_t_test(&[1.0], &[1.0]), Err(Error::InsufficientSamples { .. })));
}
