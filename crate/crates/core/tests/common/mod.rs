//! Reference implementations used to check the library: slow, direct, and
//! written without the library's fitting or metric code.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::Rng;
use taskdiff::causal_tree::TreeNode;
use taskdiff::domain::{features_from_xyz, Dataset, GroupLabel, Sample, TaskFeatures};

pub const ZERO_TOL: f64 = 1e-10;
pub const TIE_TOL: f64 = 1e-10;

fn feature(p: &TaskFeatures, f: usize) -> f64 {
    [p.x, p.y, p.z, p.dist][f]
}

/// Leaf reached by `p`, as `(leaf_id, tau_hat)`.
pub fn route(node: &TreeNode, p: &TaskFeatures) -> (usize, f64) {
    match node {
        TreeNode::Internal { split, left, right } => {
            if feature(p, split.feature_index) < split.threshold {
                route(left, p)
            } else {
                route(right, p)
            }
        }
        TreeNode::Leaf { leaf_id, tau_hat, .. } => (*leaf_id, *tau_hat),
    }
}

/// All leaves as `leaf_id -> (tau_hat, n_individual, n_control)`.
pub fn leaf_table(node: &TreeNode) -> BTreeMap<usize, (f64, usize, usize)> {
    let mut out = BTreeMap::new();
    let mut stack = vec![node];
    while let Some(n) = stack.pop() {
        match n {
            TreeNode::Internal { left, right, .. } => {
                stack.push(left);
                stack.push(right);
            }
            TreeNode::Leaf {
                leaf_id,
                tau_hat,
                n_individual,
                n_control,
                ..
            } => {
                out.insert(*leaf_id, (*tau_hat, *n_individual, *n_control));
            }
        }
    }
    out
}

/// Recomputes every leaf's two-mean difference from the estimation samples
/// routed to it and compares with the stored leaf.
pub fn check_leaf_means(root: &TreeNode, estimation: &[Sample], min_group_leaf: usize) -> Result<(), String> {
    let mut sums: BTreeMap<usize, [(f64, usize); 2]> = BTreeMap::new();
    for s in estimation {
        let (leaf, _) = route(root, &s.features);
        let slot = &mut sums.entry(leaf).or_insert([(0.0, 0); 2])[(s.group == GroupLabel::Individual) as usize];
        slot.0 += s.outcome;
        slot.1 += 1;
    }
    let leaves = leaf_table(root);
    for (id, (tau, n_i, n_c)) in &leaves {
        let [(sum_c, cnt_c), (sum_i, cnt_i)] = sums.get(id).copied().unwrap_or([(0.0, 0); 2]);
        if (cnt_i, cnt_c) != (*n_i, *n_c) {
            return Err(format!("leaf {id}: counts ({n_i}, {n_c}), routed ({cnt_i}, {cnt_c})"));
        }
        if cnt_i < min_group_leaf || cnt_c < min_group_leaf {
            return Err(format!("leaf {id}: below min_group_leaf"));
        }
        let expected = sum_i / cnt_i as f64 - sum_c / cnt_c as f64;
        if (expected - tau).abs() > 1e-12 {
            return Err(format!("leaf {id}: tau {tau}, oracle {expected}"));
        }
    }
    if sums.keys().any(|k| !leaves.contains_key(k)) {
        return Err("sample routed to an unknown leaf".into());
    }
    Ok(())
}

fn group_stats(samples: &[&Sample]) -> ([usize; 2], [f64; 2]) {
    let mut n = [0; 2];
    let mut sum = [0.0; 2];
    for s in samples {
        let g = (s.group == GroupLabel::Individual) as usize;
        n[g] += 1;
        sum[g] += s.outcome;
    }
    (n, sum)
}

fn candidate_thresholds(samples: &[Sample], f: usize) -> Vec<f64> {
    let mut values: Vec<f64> = samples.iter().map(|s| feature(&s.features, f)).collect();
    values.sort_by(f64::total_cmp);
    values.dedup();
    values
        .windows(2)
        .filter_map(|w| {
            let t = (w[0] + w[1]) / 2.0;
            (w[0] < t && t <= w[1]).then_some(t)
        })
        .collect()
}

fn snapped(diff: f64, scale: f64) -> f64 {
    if diff.abs() <= ZERO_TOL * scale {
        0.0
    } else {
        diff
    }
}

/// Exhaustive causal split search: every feature, every midpoint, both
/// halves checked for group minimums, ties kept by the earlier candidate.
pub fn exhaustive_causal_split(
    split: &[Sample],
    estimation: &[Sample],
    min_group_leaf: usize,
) -> Option<(usize, f64, f64)> {
    let min_leaf = min_group_leaf.max(1);
    let scale = split.iter().map(|s| s.outcome.abs()).fold(0.0, f64::max);
    let n = split.len() as f64;
    let mut best: Option<(usize, f64, f64)> = None;
    for f in 0..4 {
        for t in candidate_thresholds(split, f) {
            let (l, r): (Vec<&Sample>, Vec<&Sample>) = split.iter().partition(|s| feature(&s.features, f) < t);
            let (el, er): (Vec<&Sample>, Vec<&Sample>) =
                estimation.iter().partition(|s| feature(&s.features, f) < t);
            let (nl, sl) = group_stats(&l);
            let (nr, sr) = group_stats(&r);
            let (enl, _) = group_stats(&el);
            let (enr, _) = group_stats(&er);
            if [nl, nr, enl, enr].iter().flatten().any(|&c| c < min_leaf) {
                continue;
            }
            let tau_l = sl[1] / nl[1] as f64 - sl[0] / nl[0] as f64;
            let tau_r = sr[1] / nr[1] as f64 - sr[0] / nr[0] as f64;
            let gap = snapped(tau_l - tau_r, scale);
            let gain = (l.len() * r.len()) as f64 / (n * n) * gap * gap;
            let better = match best {
                None => gain > 0.0,
                Some((_, _, g)) => gain > g + TIE_TOL * scale * scale,
            };
            if better {
                best = Some((f, t, gain));
            }
        }
    }
    best
}

/// Exhaustive variance-reduction split over all four features.
pub fn exhaustive_regression_split(rows: &[Sample], min_leaf: usize) -> Option<(usize, f64, f64)> {
    let n = rows.len();
    let scale = rows.iter().map(|s| s.outcome.abs()).fold(0.0, f64::max);
    let mut best: Option<(usize, f64, f64)> = None;
    for f in 0..4 {
        for t in candidate_thresholds(rows, f) {
            let (l, r): (Vec<&Sample>, Vec<&Sample>) = rows.iter().partition(|s| feature(&s.features, f) < t);
            if l.len() < min_leaf || r.len() < min_leaf {
                continue;
            }
            let ml = l.iter().map(|s| s.outcome).sum::<f64>() / l.len() as f64;
            let mr = r.iter().map(|s| s.outcome).sum::<f64>() / r.len() as f64;
            let gap = snapped(ml - mr, scale);
            let gain = (l.len() * r.len()) as f64 / n as f64 * gap * gap;
            let better = match best {
                None => gain > 0.0,
                Some((_, _, g)) => gain > g + TIE_TOL * scale * scale * n as f64,
            };
            if better {
                best = Some((f, t, gain));
            }
        }
    }
    best
}

/// Mean outcome of the `k` nearest rows (squared Euclidean distance over all
/// four features), ties resolved towards rows that sort first by
/// `(x, y, z, outcome, dist)`.
pub fn knn_mean(rows: &[Sample], q: &TaskFeatures, k: usize) -> f64 {
    let mut ranked: Vec<(f64, [f64; 5])> = rows
        .iter()
        .map(|s| {
            let d2 = (0..4).map(|f| (feature(&s.features, f) - feature(q, f)).powi(2)).sum::<f64>();
            let p = s.features;
            (d2, [p.x, p.y, p.z, s.outcome, p.dist])
        })
        .collect();
    ranked.sort_by(|a, b| {
        a.0.total_cmp(&b.0).then_with(|| {
            a.1.iter()
                .zip(&b.1)
                .map(|(u, v)| u.total_cmp(v))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        })
    });
    let k = k.min(ranked.len());
    ranked[..k].iter().map(|r| r.1[3]).sum::<f64>() / k as f64
}

/// Composite Simpson rule on `[a, b]` with `n` (even) intervals.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let inner: f64 = (1..n)
        .map(|i| f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 })
        .sum();
    (f(a) + inner + f(b)) * h / 3.0
}

/// `P(|T| > t)` for Student's t with `nu` degrees of freedom, by
/// integrating the unnormalised density after `x = tan θ`.
pub fn t_two_sided(t: f64, nu: f64) -> f64 {
    // density · sec²θ, written with cos and sin so it stays finite at π/2
    let g = |theta: f64| {
        let (s, c) = theta.sin_cos();
        c.max(0.0).powf(nu - 1.0) * (c * c + s * s / nu).powf(-(nu + 1.0) / 2.0)
    };
    let half = std::f64::consts::FRAC_PI_2;
    let total = simpson(g, 0.0, half, 20_000);
    let tail = simpson(g, t.abs().atan(), half, 20_000);
    (tail / total).clamp(0.0, 1.0)
}

pub fn paired_t_oracle(a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    t_two_sided(mean / (var / n).sqrt(), n - 1.0)
}

/// Number of face-connected components of a set of lattice cells.
pub fn flood_fill_components(cells: &[(i64, i64, i64)]) -> usize {
    let all: HashSet<(i64, i64, i64)> = cells.iter().copied().collect();
    let mut seen: HashSet<(i64, i64, i64)> = HashSet::new();
    let mut components = 0;
    for &start in cells {
        if seen.contains(&start) {
            continue;
        }
        components += 1;
        let mut stack = vec![start];
        seen.insert(start);
        while let Some((i, j, k)) = stack.pop() {
            for n in [
                (i + 1, j, k),
                (i - 1, j, k),
                (i, j + 1, k),
                (i, j - 1, k),
                (i, j, k + 1),
                (i, j, k - 1),
            ] {
                if all.contains(&n) && seen.insert(n) {
                    stack.push(n);
                }
            }
        }
    }
    components
}

/// Cell centers of the semicircle lattice at one height, by scanning a
/// generous index range.
pub fn brute_force_slice(radius: f64, resolution: f64) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for j in 0..1000 {
        for i in 0..2000 {
            let x = -radius + resolution / 2.0 + i as f64 * resolution;
            let y = resolution / 2.0 + j as f64 * resolution;
            if x * x + y * y <= radius * radius {
                out.push((x, y));
            }
        }
    }
    out
}

/// Small dataset with deliberately repeated coordinates and outcomes, so
/// ties and empty searches come up often.
pub fn tie_heavy_samples<R: Rng>(rng: &mut R, n: usize) -> Vec<Sample> {
    const COORDS: [f64; 4] = [-0.1, 0.0, 0.1, 0.2];
    const OUTCOMES: [f64; 3] = [0.5, 1.0, 1.5];
    let coarse = rng.random_bool(0.5);
    (0..n)
        .map(|_| {
            let coord = |rng: &mut R, lo: f64, hi: f64| {
                if coarse {
                    COORDS[rng.random_range(0..COORDS.len())].clamp(lo, hi)
                } else {
                    rng.random_range(lo..hi)
                }
            };
            let x = coord(rng, -0.2, 0.2);
            let y = coord(rng, 0.0, 0.2);
            let z = coord(rng, 0.0, 0.2);
            let outcome = if rng.random_bool(0.5) {
                OUTCOMES[rng.random_range(0..OUTCOMES.len())]
            } else {
                rng.random_range(0.2..2.0)
            };
            let group = if rng.random_bool(0.5) {
                GroupLabel::Individual
            } else {
                GroupLabel::Control
            };
            Sample::new(features_from_xyz(x, y, z).unwrap(), group, outcome)
        })
        .collect()
}

pub fn distinct_leaves(map_leaf_ids: impl IntoIterator<Item = Option<usize>>) -> BTreeSet<usize> {
    map_leaf_ids.into_iter().flatten().collect()
}

pub fn dataset(samples: Vec<Sample>) -> Dataset {
    Dataset::new(samples)
}
