//! Experiment configuration: one TOML file with full defaults per family.
//! The effective config (after CLI overrides) is digested and recorded in
//! every artifact.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use opline_core::operator::{OperatorConfig, TrainObjective};
use opline_core::select::{AlphaBank, PrefixObjective, SelectorMode};
use opline_core::sim::{EvalRegime, FamilyKind, FamilySpec, SampleCounts, TimeStepPolicy};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub family: FamilySection,
    pub data: DataSection,
    pub operator: OperatorSection,
    pub train: TrainSection,
    pub select: SelectSection,
    #[serde(default)]
    pub theory: TheorySection,
    #[serde(default)]
    pub baselines: BaselineSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FamilySection {
    pub kind: FamilyKind,
    pub axis: String,
    pub lambda_low: f64,
    pub lambda_high: f64,
    pub lambda_center: Option<f64>,
    pub support: Vec<f64>,
    #[serde(default)]
    pub eval: Vec<EvalEntry>,
    #[serde(default)]
    pub fixed: BTreeMap<String, f64>,
    pub grid: usize,
    pub frames: usize,
    pub step: TimeStepPolicy,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalEntry {
    pub lambda: f64,
    #[serde(default)]
    pub validation: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DataSection {
    pub train_samples: usize,
    pub eval_samples: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OperatorSection {
    pub width: usize,
    pub modes: usize,
    pub layers: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSection {
    pub anchor_steps: usize,
    pub anchor_lr: f64,
    pub expert_steps: usize,
    pub expert_lr: f64,
    pub batch_size: usize,
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    #[serde(default = "default_objective")]
    pub objective: TrainObjective,
}

fn default_eval_every() -> usize {
    50
}

fn default_objective() -> TrainObjective {
    TrainObjective::OneStep
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectSection {
    pub mode: SelectorMode,
    #[serde(default)]
    pub bank: Option<Vec<f64>>,
    #[serde(default = "default_prefix_len")]
    pub prefix_len: usize,
    #[serde(default = "default_prefix_objective")]
    pub objective: PrefixObjective,
    #[serde(default = "default_gamma_grid")]
    pub gamma_grid: Vec<f64>,
    /// Average per-sample prefix losses before the argmin instead of
    /// selecting per trajectory.
    #[serde(default)]
    pub per_task_prefix: bool,
}

fn default_prefix_len() -> usize {
    4
}

fn default_prefix_objective() -> PrefixObjective {
    PrefixObjective::FullPrefixL2
}

fn default_gamma_grid() -> Vec<f64> {
    vec![0.6, 0.8, 1.0, 1.2, 1.4, 1.6]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TheorySection {
    #[serde(default = "default_probe_count")]
    pub probe_count: usize,
    #[serde(default = "default_probe_seed")]
    pub probe_seed: u64,
}

impl Default for TheorySection {
    fn default() -> Self {
        Self {
            probe_count: default_probe_count(),
            probe_seed: default_probe_seed(),
        }
    }
}

fn default_probe_count() -> usize {
    8
}

fn default_probe_seed() -> u64 {
    9000
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BaselineSection {
    #[serde(default = "default_ties_trim")]
    pub ties_trim: f64,
    #[serde(default = "default_dare_drop")]
    pub dare_drop: f64,
    #[serde(default = "default_dare_seed")]
    pub dare_seed: u64,
}

impl Default for BaselineSection {
    fn default() -> Self {
        Self {
            ties_trim: default_ties_trim(),
            dare_drop: default_dare_drop(),
            dare_seed: default_dare_seed(),
        }
    }
}

fn default_ties_trim() -> f64 {
    0.2
}

fn default_dare_drop() -> f64 {
    0.9
}

fn default_dare_seed() -> u64 {
    7
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let cfg: ExperimentConfig =
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        cfg.family_spec()?.validate()?;
        cfg.alpha_bank()?;
        Ok(cfg)
    }

    pub fn family_spec(&self) -> Result<FamilySpec> {
        let f = &self.family;
        let spec = FamilySpec {
            kind: f.kind,
            axis_name: f.axis.clone(),
            lambda_low: f.lambda_low,
            lambda_high: f.lambda_high,
            lambda_center: f.lambda_center,
            support: f.support.clone(),
            evaluation: f
                .eval
                .iter()
                .map(|e| EvalRegime {
                    lambda: e.lambda,
                    validation: e.validation,
                })
                .collect(),
            fixed: f.fixed.clone(),
            grid: f.grid,
            frames: f.frames,
            step: f.step,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn sample_counts(&self) -> SampleCounts {
        SampleCounts {
            train: self.data.train_samples,
            eval: self.data.eval_samples,
        }
    }

    pub fn anchor_operator_config(&self) -> OperatorConfig {
        OperatorConfig {
            grid_h: self.family.grid,
            grid_w: self.family.grid,
            channels: self.family.kind.channels(),
            width: self.operator.width,
            modes: self.operator.modes,
            layers: self.operator.layers,
            lr: self.train.anchor_lr,
            steps: self.train.anchor_steps,
            batch_size: self.train.batch_size,
            seed: self.data.seed,
            objective: self.train.objective,
            eval_every: self.train.eval_every,
        }
    }

    pub fn expert_operator_config(&self, endpoint_seed_offset: u64) -> OperatorConfig {
        let mut cfg = self.anchor_operator_config();
        cfg.lr = self.train.expert_lr;
        cfg.steps = self.train.expert_steps;
        cfg.seed = self.data.seed.wrapping_add(endpoint_seed_offset);
        cfg
    }

    pub fn alpha_bank(&self) -> Result<AlphaBank> {
        match &self.select.bank {
            Some(values) => Ok(AlphaBank::new(values.clone())?),
            None => Ok(AlphaBank::thirteen_point()),
        }
    }

    /// Stable digest of the effective configuration.
    pub fn digest(&self) -> String {
        crate::manifest::digest_bytes(&serde_json::to_vec(self).expect("config serializes"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_presets_parse_and_validate() {
        let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
        for name in ["diffreact-dense", "ns2d-viscosity", "rdb-high-center"] {
            let path = root.join(format!("{name}.toml"));
            let cfg = ExperimentConfig::load(&path)
                .unwrap_or_else(|e| panic!("preset {name}: {e:#}"));
            assert_eq!(cfg.name, name);
            cfg.anchor_operator_config().validate().unwrap();
        }
    }

    #[test]
    fn digest_tracks_seed_changes() {
        let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
        let mut cfg = ExperimentConfig::load(&root.join("diffreact-dense.toml")).unwrap();
        let d1 = cfg.digest();
        cfg.data.seed += 1;
        assert_ne!(d1, cfg.digest());
    }
}
