//! Tasks, samples, datasets and the reaching workspace.

use std::cmp::Ordering;
use std::fmt;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::rng_from_seed;

pub const N_FEATURES: usize = 4;
pub const FEATURE_NAMES: [&str; N_FEATURES] = ["x", "y", "z", "dist"];

/// Position of a reach target relative to the home position, in meters.
///
/// `x` is lateral (positive to the participant's right), `y` forward and `z`
/// vertical. `dist` is the Euclidean distance from home; it is stored rather
/// than recomputed so that external data may carry a measured distance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskFeatures {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub dist: f64,
}

impl TaskFeatures {
    /// Builds features with an externally supplied distance. No consistency
    /// check is made between `dist` and the coordinates.
    pub fn with_dist(x: f64, y: f64, z: f64, dist: f64) -> Result<Self> {
        for (name, value) in [("x", x), ("y", y), ("z", z), ("dist", dist)] {
            if !value.is_finite() {
                return Err(Error::InvalidFeature { name, value });
            }
        }
        Ok(TaskFeatures { x, y, z, dist })
    }

    pub fn get(&self, feature: usize) -> f64 {
        match feature {
            0 => self.x,
            1 => self.y,
            2 => self.z,
            3 => self.dist,
            _ => panic!("feature index {feature} out of range"),
        }
    }

    pub fn as_array(&self) -> [f64; N_FEATURES] {
        [self.x, self.y, self.z, self.dist]
    }

    pub fn is_finite(&self) -> bool {
        self.as_array().iter().all(|v| v.is_finite())
    }
}

/// Features for a target at `(x, y, z)`, with the distance measured from the
/// origin.
pub fn features_from_xyz(x: f64, y: f64, z: f64) -> Result<TaskFeatures> {
    TaskFeatures::with_dist(x, y, z, 0.0)?;
    let dist = (x * x + y * y + z * z).sqrt();
    TaskFeatures::with_dist(x, y, z, dist)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupLabel {
    Control = 0,
    Individual = 1,
}

impl GroupLabel {
    pub const BOTH: [GroupLabel; 2] = [GroupLabel::Control, GroupLabel::Individual];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(GroupLabel::Control),
            1 => Some(GroupLabel::Individual),
            _ => None,
        }
    }
}

impl fmt::Display for GroupLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GroupLabel::Control => f.write_str("Control"),
            GroupLabel::Individual => f.write_str("Individual"),
        }
    }
}

/// One observed reach: where, by whom, and how long it took (seconds).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub features: TaskFeatures,
    pub group: GroupLabel,
    pub outcome: f64,
}

impl Sample {
    pub fn new(features: TaskFeatures, group: GroupLabel, outcome: f64) -> Self {
        Sample {
            features,
            group,
            outcome,
        }
    }

    /// Total order on `(group, x, y, z, outcome, dist)`. Used wherever a
    /// result must not depend on input row order.
    pub fn canonical_cmp(&self, other: &Sample) -> Ordering {
        self.group
            .cmp(&other.group)
            .then(self.features.x.total_cmp(&other.features.x))
            .then(self.features.y.total_cmp(&other.features.y))
            .then(self.features.z.total_cmp(&other.features.z))
            .then(self.outcome.total_cmp(&other.outcome))
            .then(self.features.dist.total_cmp(&other.features.dist))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct GroupCounts {
    pub control: usize,
    pub individual: usize,
}

impl GroupCounts {
    pub fn of(samples: &[Sample]) -> Self {
        let individual = samples
            .iter()
            .filter(|s| s.group == GroupLabel::Individual)
            .count();
        GroupCounts {
            control: samples.len() - individual,
            individual,
        }
    }

    pub fn get(&self, group: GroupLabel) -> usize {
        match group {
            GroupLabel::Control => self.control,
            GroupLabel::Individual => self.individual,
        }
    }

    pub fn min(&self) -> usize {
        self.control.min(self.individual)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>) -> Self {
        Dataset { samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Sample> {
        self.samples.iter()
    }

    pub fn counts(&self) -> GroupCounts {
        GroupCounts::of(&self.samples)
    }

    pub fn group(&self, group: GroupLabel) -> Dataset {
        Dataset::new(
            self.samples
                .iter()
                .filter(|s| s.group == group)
                .copied()
                .collect(),
        )
    }

    /// Copy sorted by [`Sample::canonical_cmp`].
    pub fn canonical(&self) -> Dataset {
        let mut samples = self.samples.clone();
        samples.sort_by(Sample::canonical_cmp);
        Dataset { samples }
    }
}

impl FromIterator<Sample> for Dataset {
    fn from_iter<I: IntoIterator<Item = Sample>>(iter: I) -> Self {
        Dataset::new(iter.into_iter().collect())
    }
}

impl<'a> IntoIterator for &'a Dataset {
    type Item = &'a Sample;
    type IntoIter = std::slice::Iter<'a, Sample>;

    fn into_iter(self) -> Self::IntoIter {
        self.samples.iter()
    }
}

/// Checks every sample and returns the per-group counts.
pub fn validate_dataset(d: &Dataset, require_both_groups: bool) -> Result<GroupCounts> {
    if d.is_empty() {
        return Err(Error::EmptyDataset);
    }
    for (index, s) in d.iter().enumerate() {
        if !s.features.is_finite() {
            return Err(Error::InvalidSample {
                index,
                reason: "non-finite feature".into(),
            });
        }
        if !(s.outcome.is_finite() && s.outcome > 0.0) {
            return Err(Error::InvalidSample {
                index,
                reason: format!("outcome {} is not a positive finite time", s.outcome),
            });
        }
    }
    let counts = d.counts();
    if require_both_groups {
        require_both(counts)?;
    }
    Ok(counts)
}

pub(crate) fn require_both(counts: GroupCounts) -> Result<()> {
    for g in GroupLabel::BOTH {
        if counts.get(g) == 0 {
            return Err(Error::MissingGroup(g));
        }
    }
    Ok(())
}

/// Reachable region: the half cylinder `x² + y² ≤ r²`, `y ≥ 0`, `0 ≤ z ≤ h`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Workspace {
    pub radius: f64,
    pub height: f64,
}

impl Default for Workspace {
    fn default() -> Self {
        Workspace {
            radius: 0.30,
            height: 0.40,
        }
    }
}

impl Workspace {
    pub fn new(radius: f64, height: f64) -> Result<Self> {
        let ws = Workspace { radius, height };
        ws.validate()?;
        Ok(ws)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius.is_finite() && self.radius > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "workspace radius must be positive, got {}",
                self.radius
            )));
        }
        if !(self.height.is_finite() && self.height > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "workspace height must be positive, got {}",
                self.height
            )));
        }
        Ok(())
    }

    pub fn contains(&self, p: &TaskFeatures) -> bool {
        p.x * p.x + p.y * p.y <= self.radius * self.radius
            && p.y >= 0.0
            && p.z >= 0.0
            && p.z <= self.height
    }
}

/// Splits `d` into a structure-choosing half and an estimation half.
///
/// Samples are put in canonical order, then each group is shuffled with a
/// generator seeded from `seed` (Control first, then Individual, from one
/// stream). The first `floor(fraction * n_g)` samples of each group go to
/// the split half. The result depends on `d` only as a multiset.
pub fn stratified_honest_split(
    d: &Dataset,
    fraction: f64,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "honest fraction must lie in (0, 1), got {fraction}"
        )));
    }
    require_both(d.counts())?;

    let canonical = d.canonical();
    let mut rng = rng_from_seed(seed);
    let mut split_half = Vec::new();
    let mut estimation_half = Vec::new();
    for g in GroupLabel::BOTH {
        let mut members: Vec<Sample> = canonical
            .iter()
            .filter(|s| s.group == g)
            .copied()
            .collect();
        members.shuffle(&mut rng);
        let n_split = (fraction * members.len() as f64).floor() as usize;
        let rest = members.split_off(n_split);
        split_half.extend(members);
        estimation_half.extend(rest);
    }

    let split_half = Dataset::new(split_half);
    let estimation_half = Dataset::new(estimation_half);
    for (name, half) in [("split", &split_half), ("estimation", &estimation_half)] {
        let counts = half.counts();
        if counts.min() == 0 {
            return Err(Error::DegenerateSplit(format!(
                "{name} half has {} control and {} individual samples",
                counts.control, counts.individual
            )));
        }
    }
    Ok((split_half, estimation_half))
}

/// Per-group sample without replacement keeping `floor(ratio * n_g)` of
/// each group, in canonical-then-shuffled order.
pub fn stratified_subsample(d: &Dataset, ratio: f64, seed: u64) -> Result<Dataset> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "subsample ratio must lie in (0, 1], got {ratio}"
        )));
    }
    let canonical = d.canonical();
    let mut rng = rng_from_seed(seed);
    let mut out = Vec::new();
    for g in GroupLabel::BOTH {
        let mut members: Vec<Sample> = canonical
            .iter()
            .filter(|s| s.group == g)
            .copied()
            .collect();
        members.shuffle(&mut rng);
        members.truncate((ratio * members.len() as f64).floor() as usize);
        out.extend(members);
    }
    Ok(Dataset::new(out))
}
