//! Synthetic reaching data with a known effect surface.
//!
//! Reach targets are uniform over the workspace. The control reach time is
//! a Fitts-style law `μ₀ = a + b·log₂(1 + dist/w)`; the individual adds the
//! preset effect `τ(p)`. Both get independent `Normal(0, σ²)` noise and are
//! clamped below at `floor`.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::domain::{features_from_xyz, Dataset, GroupLabel, Sample, TaskFeatures, Workspace};
use crate::error::{Error, Result};
use crate::seed::rng_from_seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Baseline {
    pub a: f64,
    pub b: f64,
    pub w: f64,
}

impl Default for Baseline {
    fn default() -> Self {
        Baseline {
            a: 0.4,
            b: 0.3,
            w: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectPreset {
    /// No effect anywhere.
    Null,
    /// +1.0 s on the right above 20 cm, +0.5 s on the far left, 0 elsewhere.
    Regional,
    /// Gaussian bump of 0.8 s centred at (0.15, 0.15, 0.10), width 0.1 m.
    Smooth,
}

/// Config file keys: `effect_preset`, `noise_sigma`, `floor`,
/// `[workspace] radius, height` and `[baseline] a, b, w`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DgpSpec {
    #[serde(default)]
    pub workspace: Workspace,
    #[serde(default)]
    pub baseline: Baseline,
    pub effect_preset: EffectPreset,
    #[serde(default = "default_noise")]
    pub noise_sigma: f64,
    #[serde(default = "default_floor")]
    pub floor: f64,
}

fn default_noise() -> f64 {
    0.1
}

fn default_floor() -> f64 {
    0.05
}

impl DgpSpec {
    pub fn new(effect_preset: EffectPreset) -> Self {
        DgpSpec {
            workspace: Workspace::default(),
            baseline: Baseline::default(),
            effect_preset,
            noise_sigma: default_noise(),
            floor: default_floor(),
        }
    }

    pub fn with_noise(mut self, noise_sigma: f64) -> Self {
        self.noise_sigma = noise_sigma;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.workspace.validate()?;
        let Baseline { a, b, w } = self.baseline;
        for (name, v) in [("a", a), ("b", b), ("noise_sigma", self.noise_sigma)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidParameter(format!("{name} must be >= 0, got {v}")));
            }
        }
        // log2(1 + dist / w) is undefined at w = 0.
        if !(w.is_finite() && w > 0.0) {
            return Err(Error::InvalidParameter(format!("w must be > 0, got {w}")));
        }
        if !(self.floor.is_finite() && self.floor > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "floor must be > 0, got {}",
                self.floor
            )));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("dgp spec always serializes")
    }

    pub fn from_toml(text: &str, origin: &str) -> Result<Self> {
        let spec: DgpSpec = toml::from_str(text).map_err(|e| Error::Config {
            path: origin.to_string(),
            reason: e.to_string(),
        })?;
        spec.validate()?;
        Ok(spec)
    }

    /// Control-group mean reach time at `p`.
    pub fn baseline_time(&self, p: &TaskFeatures) -> f64 {
        let Baseline { a, b, w } = self.baseline;
        a + b * (1.0 + p.dist / w).log2()
    }
}

/// Analytic effect of the preset at `p`.
pub fn true_tau(spec: &DgpSpec, p: &TaskFeatures) -> Result<f64> {
    if !spec.workspace.contains(p) {
        return Err(Error::OutOfWorkspace {
            x: p.x,
            y: p.y,
            z: p.z,
        });
    }
    Ok(preset_tau(spec.effect_preset, p))
}

fn preset_tau(preset: EffectPreset, p: &TaskFeatures) -> f64 {
    match preset {
        EffectPreset::Null => 0.0,
        EffectPreset::Regional => {
            if p.x >= 0.0 && p.z >= 0.2 {
                1.0
            } else if p.x < 0.0 && p.dist >= 0.2 {
                0.5
            } else {
                0.0
            }
        }
        EffectPreset::Smooth => {
            let d2 = (p.x - 0.15).powi(2) + (p.y - 0.15).powi(2) + (p.z - 0.10).powi(2);
            0.8 * (-d2 / (2.0 * 0.1 * 0.1)).exp()
        }
    }
}

/// The effect surface a dataset was drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub spec: DgpSpec,
}

impl GroundTruth {
    pub fn true_tau(&self, p: &TaskFeatures) -> Result<f64> {
        true_tau(&self.spec, p)
    }
}

/// Uniform point in the half cylinder: `(x, y)` by rejection from the
/// bounding box `[-r, r] × [0, r]`, then `z` uniform in `[0, h]`.
pub fn sample_workspace_point<R: Rng + ?Sized>(ws: &Workspace, rng: &mut R) -> TaskFeatures {
    let r = ws.radius;
    loop {
        let x = -r + 2.0 * r * rng.random::<f64>();
        let y = r * rng.random::<f64>();
        if x * x + y * y <= r * r {
            let z = ws.height * rng.random::<f64>();
            return features_from_xyz(x, y, z).expect("workspace draws are finite");
        }
    }
}

/// Draws `n_control` control reaches followed by `n_individual` individual
/// reaches.
pub fn generate_dataset(
    spec: &DgpSpec,
    n_control: usize,
    n_individual: usize,
    seed: u64,
) -> Result<(Dataset, GroundTruth)> {
    spec.validate()?;
    if n_control == 0 || n_individual == 0 {
        return Err(Error::InvalidParameter(
            "both group counts must be at least 1".into(),
        ));
    }
    let noise = Normal::new(0.0, spec.noise_sigma)
        .map_err(|e| Error::InvalidParameter(format!("noise_sigma: {e}")))?;
    let mut rng = rng_from_seed(seed);
    let mut samples = Vec::with_capacity(n_control + n_individual);
    let groups = std::iter::repeat_n(GroupLabel::Control, n_control)
        .chain(std::iter::repeat_n(GroupLabel::Individual, n_individual));
    for group in groups {
        let p = sample_workspace_point(&spec.workspace, &mut rng);
        let eps = noise.sample(&mut rng);
        let effect = match group {
            GroupLabel::Control => 0.0,
            GroupLabel::Individual => preset_tau(spec.effect_preset, &p),
        };
        let outcome = (spec.baseline_time(&p) + effect + eps).max(spec.floor);
        samples.push(Sample::new(p, group, outcome));
    }
    Ok((Dataset::new(samples), GroundTruth { spec: *spec }))
}

/// Sidecar written next to generated data so it can be scored later.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruthRecord {
    pub seed: u64,
    pub n_control: usize,
    pub n_individual: usize,
    pub dgp: DgpSpec,
}

impl GroundTruthRecord {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("ground truth record always serializes")
    }

    pub fn from_toml(text: &str, origin: &str) -> Result<Self> {
        let rec: GroundTruthRecord = toml::from_str(text).map_err(|e| Error::Config {
            path: origin.to_string(),
            reason: e.to_string(),
        })?;
        rec.dgp.validate()?;
        Ok(rec)
    }
}
