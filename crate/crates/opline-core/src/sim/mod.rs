//! Ground-truth simulators for the three PDE families, physical-axis
//! bookkeeping (support / endpoint / OOD regimes, normalized coordinate), and
//! seeded dataset generation.

pub mod diffreact;
pub mod ns2d;
pub mod rdb;
mod store;

pub use store::{read_trajectory, write_trajectory};

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid::GridField;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FamilyKind {
    DiffReact,
    Ns2d,
    Rdb,
}

impl FamilyKind {
    pub fn id(&self) -> &'static str {
        match self {
            FamilyKind::DiffReact => "diffreact",
            FamilyKind::Ns2d => "ns2d",
            FamilyKind::Rdb => "rdb",
        }
    }

    /// State channels: (u, v) for reaction-diffusion, vorticity for the flow
    /// family, (h, hu, hv) for shallow water.
    pub fn channels(&self) -> usize {
        match self {
            FamilyKind::DiffReact => 2,
            FamilyKind::Ns2d => 1,
            FamilyKind::Rdb => 3,
        }
    }
}

/// Solver time-step policy per stored frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TimeStepPolicy {
    /// Fixed number of equal substeps per frame (spectral families).
    FixedSubsteps { frame_dt: f64, substeps: usize },
    /// Adaptive CFL-limited substeps per frame (finite-volume family).
    AdaptiveCfl { frame_dt: f64, cfl: f64 },
}

impl TimeStepPolicy {
    pub fn frame_dt(&self) -> f64 {
        match self {
            TimeStepPolicy::FixedSubsteps { frame_dt, .. } => *frame_dt,
            TimeStepPolicy::AdaptiveCfl { frame_dt, .. } => *frame_dt,
        }
    }

    /// The same policy with the effective time step halved.
    pub fn halved(&self) -> TimeStepPolicy {
        match *self {
            TimeStepPolicy::FixedSubsteps { frame_dt, substeps } => {
                TimeStepPolicy::FixedSubsteps {
                    frame_dt,
                    substeps: substeps * 2,
                }
            }
            TimeStepPolicy::AdaptiveCfl { frame_dt, cfl } => TimeStepPolicy::AdaptiveCfl {
                frame_dt,
                cfl: cfl / 2.0,
            },
        }
    }
}

/// Role of a regime along the family axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegimeRole {
    Support,
    EndpointLow,
    EndpointHigh,
    Interpolation,
    OodLow,
    OodHigh,
}

/// An evaluation regime: a lambda plus whether it belongs to the held-out
/// calibration/validation pool (used by scale calibration, never by the final
/// reported evaluation).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalRegime {
    pub lambda: f64,
    #[serde(default)]
    pub validation: bool,
}

/// A PDE family's physical axis: endpoints, support set, evaluation regimes,
/// fixed non-axis coefficients, grid and horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilySpec {
    pub kind: FamilyKind,
    pub axis_name: String,
    pub lambda_low: f64,
    pub lambda_high: f64,
    /// Optional axis center; when its low/high half-gaps differ the
    /// normalization switches to the piecewise form around the center.
    pub lambda_center: Option<f64>,
    pub support: Vec<f64>,
    pub evaluation: Vec<EvalRegime>,
    pub fixed: BTreeMap<String, f64>,
    pub grid: usize,
    pub frames: usize,
    pub step: TimeStepPolicy,
}

impl FamilySpec {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_high == self.lambda_low {
            return Err(Error::DegenerateAxis);
        }
        if self.lambda_high < self.lambda_low {
            return Err(Error::InvalidParam(
                "lambda_low must be below lambda_high".into(),
            ));
        }
        if let Some(c) = self.lambda_center {
            if !(self.lambda_low < c && c < self.lambda_high) {
                return Err(Error::InvalidParam(
                    "axis center must lie strictly between the endpoints".into(),
                ));
            }
        }
        if self.grid < 4 || !self.grid.is_power_of_two() {
            return Err(Error::BadGrid {
                h: self.grid,
                w: self.grid,
            });
        }
        if self.frames == 0 {
            return Err(Error::InvalidParam("frames must be >= 1".into()));
        }
        for lambda in self.all_lambdas() {
            self.validate_lambda(lambda)?;
        }
        Ok(())
    }

    fn validate_lambda(&self, lambda: f64) -> Result<()> {
        match self.kind {
            FamilyKind::DiffReact => {
                if self.axis_name == "d_u" || self.axis_name == "d_v" {
                    if lambda <= 0.0 {
                        return Err(Error::InvalidParam(format!(
                            "diffusivity must be positive, got {lambda}"
                        )));
                    }
                }
                Ok(())
            }
            FamilyKind::Ns2d => {
                if lambda <= 0.0 {
                    return Err(Error::InvalidParam(format!(
                        "viscosity must be positive, got {lambda}"
                    )));
                }
                Ok(())
            }
            FamilyKind::Rdb => {
                if lambda <= 1.0 {
                    return Err(Error::InvalidParam(format!(
                        "inner height must exceed the outer height 1.0, got {lambda}"
                    )));
                }
                Ok(())
            }
        }
    }

    fn all_lambdas(&self) -> Vec<f64> {
        let mut v = vec![self.lambda_low, self.lambda_high];
        v.extend(self.support.iter().copied());
        v.extend(self.evaluation.iter().map(|e| e.lambda));
        v
    }

    pub fn fixed_coeff(&self, name: &str) -> Result<f64> {
        self.fixed
            .get(name)
            .copied()
            .ok_or_else(|| Error::InvalidParam(format!("missing fixed coefficient '{name}'")))
    }

    /// Physical wavelengths of the square domain (dimensionless unit box).
    pub fn domain(&self) -> (f64, f64) {
        (1.0, 1.0)
    }

    /// Regimes in construction order: endpoints first, then support, then
    /// evaluation regimes.
    pub fn regimes(&self) -> Result<Vec<RegimeTask>> {
        self.validate()?;
        let mut out = Vec::new();
        out.push(self.task_for(self.lambda_low)?);
        out.push(self.task_for(self.lambda_high)?);
        for &l in &self.support {
            let mut t = self.task_for(l)?;
            t.role = RegimeRole::Support;
            out.push(t);
        }
        for e in &self.evaluation {
            let mut t = self.task_for(e.lambda)?;
            t.validation = e.validation;
            out.push(t);
        }
        Ok(out)
    }

    pub fn task_for(&self, lambda: f64) -> Result<RegimeTask> {
        let s = normalize_coordinate(lambda, self)?;
        let role = if lambda == self.lambda_low {
            RegimeRole::EndpointLow
        } else if lambda == self.lambda_high {
            RegimeRole::EndpointHigh
        } else if s.abs() <= 1.0 {
            RegimeRole::Interpolation
        } else if s < 0.0 {
            RegimeRole::OodLow
        } else {
            RegimeRole::OodHigh
        };
        Ok(RegimeTask {
            lambda,
            role,
            s,
            seeds: Vec::new(),
            validation: false,
        })
    }

    /// The lambda at a given normalized coordinate (inverse of
    /// `normalize_coordinate` on the symmetric axis).
    pub fn lambda_at(&self, s: f64) -> f64 {
        let mid = 0.5 * (self.lambda_low + self.lambda_high);
        mid + s * 0.5 * (self.lambda_high - self.lambda_low)
    }
}

/// A single regime: lambda, role, normalized coordinate, and the seeds of its
/// samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeTask {
    pub lambda: f64,
    pub role: RegimeRole,
    pub s: f64,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub validation: bool,
}

/// Normalized physical coordinate: affine rescaling placing the endpoint
/// regimes at -1 and +1. When the axis declares a center with unequal
/// half-gaps, the piecewise form around the center is used instead.
pub fn normalize_coordinate(lambda: f64, spec: &FamilySpec) -> Result<f64> {
    if spec.lambda_high == spec.lambda_low {
        return Err(Error::DegenerateAxis);
    }
    // Endpoint coordinates are exact by definition.
    if lambda == spec.lambda_low {
        return Ok(-1.0);
    }
    if lambda == spec.lambda_high {
        return Ok(1.0);
    }
    if let Some(c) = spec.lambda_center {
        let low_gap = c - spec.lambda_low;
        let high_gap = spec.lambda_high - c;
        let scale = low_gap.abs().max(high_gap.abs());
        if (low_gap - high_gap).abs() > 1e-12 * scale {
            return Ok(if lambda >= c {
                (lambda - c) / high_gap
            } else {
                -(c - lambda) / low_gap
            });
        }
    }
    let mid = 0.5 * (spec.lambda_low + spec.lambda_high);
    Ok(2.0 * (lambda - mid) / (spec.lambda_high - spec.lambda_low))
}

/// One simulated sample: the seed that produced it and its (T+1)-frame
/// trajectory including the initial condition.
#[derive(Debug, Clone)]
pub struct TrajectorySample {
    pub seed: u64,
    pub frames: Vec<GridField>,
}

/// Seeded trajectories for one regime.
#[derive(Debug, Clone)]
pub struct TrajectoryDataset {
    pub task: RegimeTask,
    pub samples: Vec<TrajectorySample>,
}

impl TrajectoryDataset {
    /// One-step (u_t, u_{t+1}) training pairs across all samples.
    pub fn one_step_pairs(&self) -> Vec<(&GridField, &GridField)> {
        let mut pairs = Vec::new();
        for s in &self.samples {
            for t in 0..s.frames.len().saturating_sub(1) {
                pairs.push((&s.frames[t], &s.frames[t + 1]));
            }
        }
        pairs
    }
}

fn ic_rng(kind: FamilyKind, seed: u64) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(kind.id().as_bytes());
    hasher.update(seed.to_le_bytes());
    let digest = hasher.finalize();
    let mut b = [0u8; 8];
    b.copy_from_slice(&digest[..8]);
    ChaCha8Rng::seed_from_u64(u64::from_le_bytes(b))
}

/// Deterministic initial condition for (family, seed). The same pair always
/// yields a bit-identical field; lambda enters only through the shallow-water
/// dam height (the seed is shared across regimes so that a fixed sample id
/// corresponds to the same initial condition at every lambda).
pub fn sample_initial_condition(spec: &FamilySpec, lambda: f64, seed: u64) -> Result<GridField> {
    let n = spec.grid;
    let (lx, ly) = spec.domain();
    match spec.kind {
        FamilyKind::DiffReact => {
            let mut rng = ic_rng(spec.kind, seed);
            diffreact::smoothed_noise_ic(n, lx, ly, &mut rng)
        }
        FamilyKind::Ns2d => {
            let mut rng = ic_rng(spec.kind, seed);
            ns2d::band_limited_vorticity_ic(n, lx, ly, &mut rng)
        }
        FamilyKind::Rdb => rdb::dam_break_ic(lambda, n, lx, ly),
    }
}

/// Run the family's solver for one regime from a given initial condition.
pub fn simulate(spec: &FamilySpec, lambda: f64, ic: &GridField) -> Result<Vec<GridField>> {
    spec.validate_lambda(lambda)?;
    match spec.kind {
        FamilyKind::DiffReact => {
            let axis = spec.axis_name.as_str();
            let params = diffreact::DiffReactParams {
                d_u: if axis == "d_u" { lambda } else { spec.fixed_coeff("d_u")? },
                d_v: if axis == "d_v" { lambda } else { spec.fixed_coeff("d_v")? },
                k: if axis == "k" { lambda } else { spec.fixed_coeff("k")? },
                reaction_enabled: true,
            };
            diffreact::simulate_diffreact(&params, ic, spec.frames, &spec.step)
        }
        FamilyKind::Ns2d => {
            let params = ns2d::Ns2dParams {
                nu: lambda,
                forcing_amp: spec.fixed_coeff("forcing_amp").unwrap_or(0.1),
            };
            ns2d::simulate_ns2d(&params, ic, spec.frames, &spec.step)
        }
        FamilyKind::Rdb => rdb::simulate_rdb(ic, spec.frames, &spec.step),
    }
}

/// Generate datasets for every regime of the family, `samples_per_regime`
/// seeded trajectories each. Seed banks are shared across regimes.
pub fn build_family(
    spec: &FamilySpec,
    samples_per_regime: usize,
    base_seed: u64,
) -> Result<Vec<TrajectoryDataset>> {
    let counts = SampleCounts {
        train: samples_per_regime,
        eval: samples_per_regime,
    };
    build_family_with(spec, &counts, base_seed)
}

/// Sample counts: training regimes (support and endpoints) versus
/// evaluation-only regimes.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SampleCounts {
    pub train: usize,
    pub eval: usize,
}

pub fn build_family_with(
    spec: &FamilySpec,
    counts: &SampleCounts,
    base_seed: u64,
) -> Result<Vec<TrajectoryDataset>> {
    let mut out = Vec::new();
    for mut task in spec.regimes()? {
        let n = match task.role {
            RegimeRole::Support | RegimeRole::EndpointLow | RegimeRole::EndpointHigh => {
                counts.train
            }
            _ => counts.eval,
        };
        task.seeds = (0..n as u64).map(|i| base_seed.wrapping_add(i)).collect();
        let mut samples = Vec::with_capacity(n);
        for &seed in &task.seeds {
            let ic = sample_initial_condition(spec, task.lambda, seed)?;
            let frames = simulate(spec, task.lambda, &ic).map_err(|e| {
                Error::InvalidParam(format!(
                    "regime {} (lambda={}): {e}",
                    spec.axis_name, task.lambda
                ))
            })?;
            samples.push(TrajectorySample { seed, frames });
        }
        out.push(TrajectoryDataset { task, samples });
    }
    Ok(out)
}
