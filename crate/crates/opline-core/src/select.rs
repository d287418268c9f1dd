//! Coordinate selectors over a fixed endpoint-defined line: direct coordinate
//! readout, globally rescaled coordinate with a calibrated gamma, prefix
//! selection over a finite alpha bank under the future-only protocol, the
//! full-rollout diagnostic oracle, and the wrong-sign negative control.
//!
//! Every selector deploys exactly one composed checkpoint: selection returns
//! a coordinate, and the subsequent rollout uses a single forward path.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid::GridField;
use crate::merge::CoordinateLine;
use crate::metrics::{frame_rel_l2, rollout_l2, IndexSet};
use crate::weights::hex_digest;

/// Sorted candidate coordinates. Must contain -1, 0, and +1; the clip bounds
/// are its extreme values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaBank {
    values: Vec<f64>,
}

impl AlphaBank {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParam(
                "alpha bank must be strictly increasing".into(),
            ));
        }
        for needle in [-1.0, 0.0, 1.0] {
            if !values.contains(&needle) {
                return Err(Error::InvalidParam(format!(
                    "alpha bank must contain {needle}"
                )));
            }
        }
        Ok(Self { values })
    }

    /// The default 13-point bank: -1.50, -1.25, ..., +1.50.
    pub fn thirteen_point() -> Self {
        Self {
            values: (0..13).map(|i| -1.5 + 0.25 * i as f64).collect(),
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn bounds(&self) -> (f64, f64) {
        (self.values[0], *self.values.last().unwrap())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectorMode {
    Coord,
    Scale,
    Prefix,
    Oracle,
    WrongSign,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PrefixObjective {
    /// One norm ratio over all K calibration steps.
    FullPrefixL2,
    /// Mean of per-step relative errors.
    MeanStep,
    FirstStep,
    FinalStep,
    /// Linearly increasing weight toward recent steps.
    RecencyWeighted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectorConfig {
    pub mode: SelectorMode,
    pub gamma: f64,
    pub prefix_len: usize,
    pub objective: PrefixObjective,
}

impl SelectorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.gamma <= 0.0 {
            return Err(Error::InvalidParam("gamma must be positive".into()));
        }
        if self.prefix_len < 1 {
            return Err(Error::InvalidParam("prefix length must be >= 1".into()));
        }
        Ok(())
    }
}

/// A selected coordinate with per-candidate losses (bank modes only) and a
/// digest of the selection inputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectionResult {
    pub alpha_hat: f64,
    pub per_candidate: Vec<(f64, f64)>,
    pub inputs_digest: String,
}

fn clip(x: f64, bounds: (f64, f64)) -> f64 {
    x.clamp(bounds.0, bounds.1)
}

/// Known-coordinate selector: alpha = clip(s).
pub fn select_coord(s: f64, bounds: (f64, f64)) -> f64 {
    clip(s, bounds)
}

/// Scaled-coordinate selector: alpha = clip(gamma * s). gamma = 1 reduces to
/// the plain coordinate selector.
pub fn select_scale(s: f64, gamma: f64, bounds: (f64, f64)) -> f64 {
    clip(gamma * s, bounds)
}

/// Negative control: the coordinate with its sign flipped.
pub fn wrong_sign(s: f64, bounds: (f64, f64)) -> f64 {
    clip(-s, bounds)
}

/// Argmin over (alpha, loss) pairs with the tie rule: smaller loss, then
/// smaller |alpha|, then smaller alpha.
fn argmin_alpha(cands: &[(f64, f64)]) -> f64 {
    let mut best = cands[0];
    for &(a, l) in &cands[1..] {
        let better = l < best.1
            || (l == best.1 && (a.abs() < best.0.abs() || (a.abs() == best.0.abs() && a < best.0)));
        if better {
            best = (a, l);
        }
    }
    best.0
}

fn digest_selection(parts: &[&[u8]]) -> String {
    let mut hasher = Sha256::new();
    for p in parts {
        hasher.update(p);
    }
    hex_digest(hasher)
}

fn frames_bytes(frames: &[GridField]) -> Vec<u8> {
    let mut out = Vec::new();
    for f in frames {
        for v in f.values().iter() {
            out.extend(v.to_le_bytes());
        }
    }
    out
}

/// Score a K-step prediction against the observed prefix under an objective.
fn prefix_score(
    pred: &[GridField],
    prefix: &[GridField],
    objective: PrefixObjective,
) -> Result<f64> {
    let k = prefix.len();
    match objective {
        PrefixObjective::FullPrefixL2 => {
            let mut num = 0.0;
            let mut den = 0.0;
            for (p, t) in pred.iter().zip(prefix.iter()) {
                for (a, b) in p.values().iter().zip(t.values().iter()) {
                    let d = a - b;
                    num += d * d;
                    den += b * b;
                }
            }
            if den == 0.0 {
                return Err(Error::DegenerateTruth { frame: 1 });
            }
            Ok((num / den).sqrt())
        }
        PrefixObjective::MeanStep => {
            let mut acc = 0.0;
            for (t, (p, g)) in pred.iter().zip(prefix.iter()).enumerate() {
                acc += frame_rel_l2(p, g, t + 1)?;
            }
            Ok(acc / k as f64)
        }
        PrefixObjective::FirstStep => frame_rel_l2(&pred[0], &prefix[0], 1),
        PrefixObjective::FinalStep => frame_rel_l2(&pred[k - 1], &prefix[k - 1], k),
        PrefixObjective::RecencyWeighted => {
            let mut acc = 0.0;
            let mut wsum = 0.0;
            for (t, (p, g)) in pred.iter().zip(prefix.iter()).enumerate() {
                let w = (t + 1) as f64;
                acc += w * frame_rel_l2(p, g, t + 1)?;
                wsum += w;
            }
            Ok(acc / wsum)
        }
    }
}

/// Prefix selector: for each bank coordinate, roll the composed checkpoint
/// K steps from u0 and score against the K observed frames. Only the prefix
/// is ever passed in, so later frames cannot leak into selection, and no
/// weight update takes place.
pub fn select_prefix(
    line: &CoordinateLine,
    bank: &AlphaBank,
    u0: &GridField,
    prefix: &[GridField],
    objective: PrefixObjective,
) -> Result<SelectionResult> {
    if prefix.is_empty() {
        return Err(Error::InvalidParam("empty calibration prefix".into()));
    }
    if !u0.all_finite() || prefix.iter().any(|f| !f.all_finite()) {
        return Err(Error::NonFinite("calibration prefix".into()));
    }
    let k = prefix.len();
    let mut per_candidate = Vec::with_capacity(bank.values().len());
    for &alpha in bank.values() {
        let op = line.compose_operator(alpha)?;
        let rollout = op.rollout(u0, k)?;
        let loss = prefix_score(&rollout.frames, prefix, objective)?;
        per_candidate.push((alpha, loss));
    }
    let alpha_hat = argmin_alpha(&per_candidate);
    let digest = digest_selection(&[
        b"prefix",
        &(k as u64).to_le_bytes(),
        &frames_bytes(prefix),
        &bank_bytes(bank),
    ]);
    Ok(SelectionResult {
        alpha_hat,
        per_candidate,
        inputs_digest: digest,
    })
}

/// Per-task aggregation: average per-sample prefix losses over all cases
/// before the argmin.
pub fn select_prefix_per_task(
    line: &CoordinateLine,
    bank: &AlphaBank,
    cases: &[(&GridField, &[GridField])],
    objective: PrefixObjective,
) -> Result<SelectionResult> {
    if cases.is_empty() {
        return Err(Error::InvalidParam("no calibration cases".into()));
    }
    let mut sums = vec![0.0; bank.values().len()];
    let mut digest_parts: Vec<u8> = Vec::new();
    for (u0, prefix) in cases {
        let r = select_prefix(line, bank, u0, prefix, objective)?;
        for (i, (_, l)) in r.per_candidate.iter().enumerate() {
            sums[i] += l / cases.len() as f64;
        }
        digest_parts.extend(r.inputs_digest.as_bytes());
    }
    let per_candidate: Vec<(f64, f64)> = bank
        .values()
        .iter()
        .copied()
        .zip(sums)
        .collect();
    let alpha_hat = argmin_alpha(&per_candidate);
    Ok(SelectionResult {
        alpha_hat,
        per_candidate,
        inputs_digest: digest_selection(&[b"prefix-per-task", &digest_parts]),
    })
}

fn bank_bytes(bank: &AlphaBank) -> Vec<u8> {
    bank.values()
        .iter()
        .flat_map(|v| v.to_le_bytes())
        .collect()
}

/// Diagnostic oracle: argmin of the full evaluation-window loss over the
/// bank. Requires ground truth and is never a deployable policy.
pub fn oracle_alpha(
    line: &CoordinateLine,
    bank: &AlphaBank,
    u0: &GridField,
    truth: &[GridField],
    iset: &IndexSet,
) -> Result<SelectionResult> {
    let t = truth.len();
    let mut per_candidate = Vec::with_capacity(bank.values().len());
    for &alpha in bank.values() {
        let op = line.compose_operator(alpha)?;
        let rollout = op.rollout(u0, t)?;
        let loss = rollout_l2(&rollout.frames, truth, iset)?;
        per_candidate.push((alpha, loss));
    }
    let alpha_hat = argmin_alpha(&per_candidate);
    let digest = digest_selection(&[b"oracle", &frames_bytes(truth), &bank_bytes(bank)]);
    Ok(SelectionResult {
        alpha_hat,
        per_candidate,
        inputs_digest: digest,
    })
}

/// One held-out validation case for gamma calibration.
pub struct GammaCase<'a> {
    pub s: f64,
    pub u0: &'a GridField,
    /// Ground-truth frames u_1..u_T of the validation regime.
    pub truth: &'a [GridField],
}

/// Outcome of a gamma calibration: the chosen scale and the mean validation
/// loss of every grid candidate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub gamma: f64,
    pub per_gamma: Vec<(f64, f64)>,
}

/// Scale calibration: the gamma from the grid minimizing the mean validation
/// rollout L2 of the checkpoint composed at clip(gamma * s). Selected once,
/// then fixed; ties resolve to the smallest gamma.
pub fn calibrate_gamma(
    line: &CoordinateLine,
    cases: &[GammaCase<'_>],
    gamma_grid: &[f64],
) -> Result<CalibrationResult> {
    if gamma_grid.is_empty() || cases.is_empty() {
        return Err(Error::InvalidParam(
            "gamma grid and validation regimes must be non-empty".into(),
        ));
    }
    let bounds = (line.alpha_min, line.alpha_max);
    let mut best: Option<(f64, f64)> = None;
    let mut grid = gamma_grid.to_vec();
    grid.sort_by(|a, b| a.partial_cmp(b).expect("finite gammas"));
    let mut per_gamma = Vec::with_capacity(grid.len());
    for &gamma in &grid {
        if gamma <= 0.0 {
            return Err(Error::InvalidParam("gamma must be positive".into()));
        }
        let mut acc = 0.0;
        for case in cases {
            let alpha = select_scale(case.s, gamma, bounds);
            let op = line.compose_operator(alpha)?;
            let rollout = op.rollout(case.u0, case.truth.len())?;
            acc += rollout_l2(&rollout.frames, case.truth, &IndexSet::full(case.truth.len()))?;
        }
        let mean = acc / cases.len() as f64;
        per_gamma.push((gamma, mean));
        // Strict improvement only: equal losses keep the smaller gamma.
        if best.map_or(true, |(_, l)| mean < l) {
            best = Some((gamma, mean));
        }
    }
    Ok(CalibrationResult {
        gamma: best.expect("non-empty grid").0,
        per_gamma,
    })
}
