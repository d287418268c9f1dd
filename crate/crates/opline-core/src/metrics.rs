//! Rollout metrics over time-index sets, the future-only protocol arithmetic,
//! physics-aware diagnostics, coordinate-law correlation, win/loss-regret
//! tables, and percentile bootstrap intervals.
//!
//! Per-sample rollout error is the frame mean of relative L2 (norm ratio over
//! grid and channels); sample means are taken by the caller. Reports state
//! this aggregation order in their headers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridField;
use crate::sim::RegimeRole;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IndexTag {
    Full,
    Calibration,
    Future,
}

/// Sorted 1-based time indices within {1..T}.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexSet {
    pub indices: Vec<usize>,
    pub tag: IndexTag,
}

impl IndexSet {
    pub fn full(t: usize) -> Self {
        Self {
            indices: (1..=t).collect(),
            tag: IndexTag::Full,
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Partition {1..T} into the K-step calibration prefix and the future
/// indices {K+1..T} whose metric excludes every calibration frame.
pub fn split_protocol(t: usize, k: usize) -> Result<(IndexSet, IndexSet)> {
    if k < 1 || k >= t {
        return Err(Error::InvalidParam(format!(
            "prefix length must satisfy 1 <= K < T, got K={k}, T={t}"
        )));
    }
    Ok((
        IndexSet {
            indices: (1..=k).collect(),
            tag: IndexTag::Calibration,
        },
        IndexSet {
            indices: (k + 1..=t).collect(),
            tag: IndexTag::Future,
        },
    ))
}

/// Relative L2 of one frame: ||pred - truth|| / ||truth||.
pub fn frame_rel_l2(pred: &GridField, truth: &GridField, frame: usize) -> Result<f64> {
    if !pred.same_shape(truth) {
        return Err(Error::ShapeMismatch {
            context: "metric frames".into(),
            expected: format!("{:?}", truth.values().dim()),
            got: format!("{:?}", pred.values().dim()),
        });
    }
    let denom = truth.norm();
    if denom == 0.0 {
        return Err(Error::DegenerateTruth { frame });
    }
    let mut num = 0.0;
    for (p, t) in pred.values().iter().zip(truth.values().iter()) {
        let d = p - t;
        num += d * d;
    }
    Ok(num.sqrt() / denom)
}

/// Mean over t in the index set of the per-frame relative L2. `pred` and
/// `truth` hold frames u_1..u_T (the initial condition excluded), so index
/// t addresses slot t-1.
pub fn rollout_l2(pred: &[GridField], truth: &[GridField], iset: &IndexSet) -> Result<f64> {
    if iset.is_empty() {
        return Err(Error::InvalidParam("empty index set".into()));
    }
    if pred.len() != truth.len() {
        return Err(Error::ShapeMismatch {
            context: "rollout lengths".into(),
            expected: format!("{}", truth.len()),
            got: format!("{}", pred.len()),
        });
    }
    let mut acc = 0.0;
    for &t in &iset.indices {
        if t < 1 || t > pred.len() {
            return Err(Error::InvalidParam(format!(
                "index {t} outside 1..={}",
                pred.len()
            )));
        }
        acc += frame_rel_l2(&pred[t - 1], &truth[t - 1], t)?;
    }
    Ok(acc / iset.len() as f64)
}

/// Per-regime rollout numbers for one method.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegimeMetric {
    pub lambda: f64,
    pub s: f64,
    pub role: RegimeRole,
    pub per_sample: Vec<f64>,
    pub mean: f64,
}

impl RegimeMetric {
    pub fn new(lambda: f64, s: f64, role: RegimeRole, per_sample: Vec<f64>) -> Self {
        let mean = per_sample.iter().sum::<f64>() / per_sample.len().max(1) as f64;
        Self {
            lambda,
            s,
            role,
            per_sample,
            mean,
        }
    }
}

/// Rollout metrics for one method across regimes, with the OOD summaries
/// used in the comparison tables.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub method: String,
    pub regimes: Vec<RegimeMetric>,
}

impl MetricReport {
    fn ood_regimes(&self) -> impl Iterator<Item = &RegimeMetric> {
        self.regimes
            .iter()
            .filter(|r| matches!(r.role, RegimeRole::OodLow | RegimeRole::OodHigh))
    }

    pub fn ood_mean(&self) -> Option<f64> {
        let v: Vec<f64> = self.ood_regimes().map(|r| r.mean).collect();
        if v.is_empty() {
            None
        } else {
            Some(v.iter().sum::<f64>() / v.len() as f64)
        }
    }

    pub fn ood_worst(&self) -> Option<f64> {
        self.ood_regimes().map(|r| r.mean).fold(None, |acc, m| {
            Some(acc.map_or(m, |a: f64| a.max(m)))
        })
    }

    /// Relative gain (base - method) / base on the OOD mean.
    pub fn ood_gain_vs(&self, base: &MetricReport) -> Option<f64> {
        match (self.ood_mean(), base.ood_mean()) {
            (Some(m), Some(b)) if b != 0.0 => Some((b - m) / b),
            _ => None,
        }
    }
}

/// Family-specific physics diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhysicsReport {
    pub entries: Vec<(String, f64)>,
}

impl PhysicsReport {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| *v)
    }
}

fn frame_mass(f: &GridField) -> f64 {
    f.channel_mean(0)
}

fn frame_std(f: &GridField) -> f64 {
    let mean = f.channel_mean(0);
    let (h, w) = (f.height(), f.width());
    let mut ss = 0.0;
    for i in 0..h {
        for j in 0..w {
            let d = f.values()[[i, j, 0]] - mean;
            ss += d * d;
        }
    }
    (ss / (h * w) as f64).sqrt()
}

/// Azimuthally averaged height profile around the domain center, with linear
/// interpolation between radial bins when locating the front.
fn front_radius(f: &GridField) -> f64 {
    let (h, w) = (f.height(), f.width());
    let (lx, ly) = f.lengths();
    let (cx, cy) = (0.5 * lx, 0.5 * ly);
    let nbins = (h.min(w)) / 2;
    let rmax = 0.5 * lx.min(ly);
    let dr = rmax / nbins as f64;
    let mut sums = vec![0.0; nbins];
    let mut counts = vec![0usize; nbins];
    for i in 0..h {
        for j in 0..w {
            let x = (j as f64 + 0.5) * lx / w as f64;
            let y = (i as f64 + 0.5) * ly / h as f64;
            let r = ((x - cx).powi(2) + (y - cy).powi(2)).sqrt();
            let b = ((r / dr) as usize).min(nbins - 1);
            sums[b] += f.values()[[i, j, 0]];
            counts[b] += 1;
        }
    }
    let profile: Vec<f64> = sums
        .iter()
        .zip(&counts)
        .map(|(s, c)| if *c > 0 { s / *c as f64 } else { f64::NAN })
        .collect();
    let center = profile.iter().find(|v| v.is_finite()).copied().unwrap_or(0.0);
    let outer = profile
        .iter()
        .rev()
        .find(|v| v.is_finite())
        .copied()
        .unwrap_or(0.0);
    let threshold = 0.5 * (outer + center);
    // Largest radius where the profile crosses the threshold.
    for b in (0..nbins - 1).rev() {
        let (p0, p1) = (profile[b], profile[b + 1]);
        if !p0.is_finite() || !p1.is_finite() {
            continue;
        }
        let d0 = p0 - threshold;
        let d1 = p1 - threshold;
        if d0 == 0.0 {
            return (b as f64 + 0.5) * dr;
        }
        if d0 * d1 < 0.0 {
            let frac = d0 / (d0 - d1);
            return (b as f64 + 0.5 + frac) * dr;
        }
    }
    0.0
}

/// Shallow-water diagnostics: MAE of per-frame mass, spatial standard
/// deviation, and front radius against the truth, over the index set.
pub fn physics_rdb(
    pred: &[GridField],
    truth: &[GridField],
    iset: &IndexSet,
) -> Result<PhysicsReport> {
    if pred.is_empty() || pred[0].channels() < 1 {
        return Err(Error::InvalidParam("missing height channel".into()));
    }
    let mut mass_mae = 0.0;
    let mut std_mae = 0.0;
    let mut front_mae = 0.0;
    for &t in &iset.indices {
        let (p, g) = (&pred[t - 1], &truth[t - 1]);
        mass_mae += (frame_mass(p) - frame_mass(g)).abs();
        std_mae += (frame_std(p) - frame_std(g)).abs();
        front_mae += (front_radius(p) - front_radius(g)).abs();
    }
    let n = iset.len() as f64;
    Ok(PhysicsReport {
        entries: vec![
            ("mass_mae".into(), mass_mae / n),
            ("std_mae".into(), std_mae / n),
            ("front_mae".into(), front_mae / n),
        ],
    })
}

/// Spatial mean of squared vorticity.
pub fn enstrophy(f: &GridField) -> f64 {
    let (h, w) = (f.height(), f.width());
    let mut s = 0.0;
    for i in 0..h {
        for j in 0..w {
            let v = f.values()[[i, j, 0]];
            s += v * v;
        }
    }
    s / (h * w) as f64
}

/// Flow diagnostics: vorticity-mean MAE and enstrophy MAE over the index
/// set, plus the final-frame enstrophy of the prediction.
pub fn physics_ns2d(
    pred: &[GridField],
    truth: &[GridField],
    iset: &IndexSet,
) -> Result<PhysicsReport> {
    if pred.is_empty() || pred[0].channels() < 1 {
        return Err(Error::InvalidParam("missing vorticity channel".into()));
    }
    let mut mean_mae = 0.0;
    let mut ens_mae = 0.0;
    for &t in &iset.indices {
        let (p, g) = (&pred[t - 1], &truth[t - 1]);
        mean_mae += (p.channel_mean(0) - g.channel_mean(0)).abs();
        ens_mae += (enstrophy(p) - enstrophy(g)).abs();
    }
    let n = iset.len() as f64;
    Ok(PhysicsReport {
        entries: vec![
            ("vorticity_mean_mae".into(), mean_mae / n),
            ("enstrophy_mae".into(), ens_mae / n),
            ("final_enstrophy".into(), enstrophy(pred.last().unwrap())),
        ],
    })
}

/// Sample Pearson correlation between paired coordinates.
pub fn coordinate_correlation(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.len() < 3 {
        return Err(Error::InvalidParam(
            "need at least 3 pairs for a correlation".into(),
        ));
    }
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|(x, _)| x).sum::<f64>() / n;
    let my = pairs.iter().map(|(_, y)| y).sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (x, y) in pairs {
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
        sxy += (x - mx) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::InvalidParam(
            "undefined correlation: zero variance".into(),
        ));
    }
    Ok(sxy / (sxx.sqrt() * syy.sqrt()))
}

/// Task-level comparison: wins (method strictly better), losses (strictly
/// worse), and negative regret (total excess error over the base).
pub fn win_loss_regret(base: &[f64], method: &[f64]) -> Result<(usize, usize, f64)> {
    if base.len() != method.len() {
        return Err(Error::ShapeMismatch {
            context: "win/loss task lists".into(),
            expected: format!("{}", base.len()),
            got: format!("{}", method.len()),
        });
    }
    let mut wins = 0;
    let mut losses = 0;
    let mut regret = 0.0;
    for (b, m) in base.iter().zip(method.iter()) {
        if m < b {
            wins += 1;
        } else if m > b {
            losses += 1;
        }
        regret += (m - b).max(0.0);
    }
    Ok((wins, losses, regret))
}

/// Percentile bootstrap over sample resampling; deterministic given the seed.
pub fn bootstrap_ci(
    values: &[f64],
    resamples: usize,
    level: f64,
    seed: u64,
) -> Result<(f64, f64, f64)> {
    use rand::{Rng, SeedableRng};
    if values.len() < 2 {
        return Err(Error::InvalidParam(
            "need at least 2 samples for a bootstrap".into(),
        ));
    }
    if !(0.0 < level && level < 1.0) {
        return Err(Error::InvalidParam("level must lie in (0, 1)".into()));
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut means = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        let mut s = 0.0;
        for _ in 0..values.len() {
            s += values[rng.gen_range(0..values.len())];
        }
        means.push(s / values.len() as f64);
    }
    means.sort_by(|a, b| a.partial_cmp(b).expect("finite means"));
    let q = |p: f64| -> f64 {
        let idx = ((p * resamples as f64).ceil() as usize).clamp(1, resamples) - 1;
        means[idx]
    };
    let lo = q((1.0 - level) / 2.0);
    let hi = q((1.0 + level) / 2.0);
    Ok((mean, lo, hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn const_frames(v: f64, n: usize) -> Vec<GridField> {
        (0..n)
            .map(|_| GridField::from_fn(4, 4, 1, 1.0, 1.0, |_, _, _| v).unwrap())
            .collect()
    }

    #[test]
    fn exact_prediction_scores_zero() {
        let truth = const_frames(2.0, 5);
        let iset = IndexSet::full(5);
        assert_eq!(rollout_l2(&truth, &truth, &iset).unwrap(), 0.0);
    }

    #[test]
    fn doubled_prediction_scores_one() {
        let truth = const_frames(1.5, 4);
        let pred = const_frames(3.0, 4);
        let iset = IndexSet::full(4);
        let v = rollout_l2(&pred, &truth, &iset).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_frame_matches_the_direct_formula() {
        // 2x2 single-channel scalar oracle.
        let truth = vec![GridField::from_fn(4, 4, 1, 1.0, 1.0, |i, j, _| {
            if i == 0 && j == 0 { 3.0 } else if i == 0 && j == 1 { 4.0 } else { 0.0 }
        })
        .unwrap()];
        let pred = vec![GridField::from_fn(4, 4, 1, 1.0, 1.0, |i, j, _| {
            if i == 0 && j == 0 { 3.0 } else if i == 0 && j == 1 { 4.0 } else if i == 1 && j == 0 { 1.0 } else { 0.0 }
        })
        .unwrap()];
        let iset = IndexSet::full(1);
        let v = rollout_l2(&pred, &truth, &iset).unwrap();
        // ||pred - truth|| = 1, ||truth|| = 5.
        assert!((v - 0.2).abs() < 1e-12);
    }

    #[test]
    fn zero_truth_is_a_degenerate_error() {
        let truth = const_frames(0.0, 2);
        let pred = const_frames(1.0, 2);
        let iset = IndexSet::full(2);
        assert!(matches!(
            rollout_l2(&pred, &truth, &iset),
            Err(Error::DegenerateTruth { .. })
        ));
    }

    #[test]
    fn split_protocol_partitions_the_window() {
        let (cal, fut) = split_protocol(10, 4).unwrap();
        assert_eq!(cal.indices, vec![1, 2, 3, 4]);
        assert_eq!(fut.indices, (5..=10).collect::<Vec<_>>());
        let (cal, fut) = split_protocol(6, 1).unwrap();
        assert_eq!(cal.indices, vec![1]);
        assert_eq!(fut.indices, (2..=6).collect::<Vec<_>>());
        assert!(split_protocol(5, 5).is_err());
        assert!(split_protocol(5, 0).is_err());
    }

    #[test]
    fn full_window_metric_is_the_weighted_split_mean() {
        // Index-arithmetic oracle: full = |cal|/T * cal + |fut|/T * fut.
        let t = 7;
        let k = 3;
        let truth: Vec<GridField> = (0..t)
            .map(|i| GridField::from_fn(4, 4, 1, 1.0, 1.0, |a, b, _| (a + b + i) as f64 + 1.0).unwrap())
            .collect();
        let pred: Vec<GridField> = truth
            .iter()
            .enumerate()
            .map(|(i, f)| f.map(|v| v + 0.1 * (i as f64 + 1.0)))
            .collect();
        let full = rollout_l2(&pred, &truth, &IndexSet::full(t)).unwrap();
        let (cal, fut) = split_protocol(t, k).unwrap();
        let lc = rollout_l2(&pred, &truth, &cal).unwrap();
        let lf = rollout_l2(&pred, &truth, &fut).unwrap();
        let combined = (k as f64 / t as f64) * lc + ((t - k) as f64 / t as f64) * lf;
        assert!((full - combined).abs() < 1e-12);
    }

    #[test]
    fn scale_invariance_of_the_relative_metric() {
        let truth: Vec<GridField> = (0..3)
            .map(|i| GridField::from_fn(4, 4, 2, 1.0, 1.0, |a, b, c| {
                1.0 + (a * 2 + b + c + i) as f64
            })
            .unwrap())
            .collect();
        let pred: Vec<GridField> = truth.iter().map(|f| f.map(|v| v * 1.1)).collect();
        let iset = IndexSet::full(3);
        let v1 = rollout_l2(&pred, &truth, &iset).unwrap();
        let scale = -3.7;
        let pred_s: Vec<GridField> = pred.iter().map(|f| f.map(|v| v * scale)).collect();
        let truth_s: Vec<GridField> = truth.iter().map(|f| f.map(|v| v * scale)).collect();
        let v2 = rollout_l2(&pred_s, &truth_s, &iset).unwrap();
        assert!((v1 - v2).abs() < 1e-12);
    }

    #[test]
    fn physics_zero_for_perfect_prediction_and_shift_behaves() {
        let ic = crate::sim::rdb::dam_break_ic(3.0, 16, 1.0, 1.0).unwrap();
        let truth = vec![ic.clone(), ic.clone()];
        let iset = IndexSet::full(2);
        let rep = physics_rdb(&truth, &truth, &iset).unwrap();
        for (_, v) in &rep.entries {
            assert_eq!(*v, 0.0);
        }
        // Constant height shift: mass MAE = |c|, std MAE = 0.
        let c = 0.3;
        let shifted: Vec<GridField> = truth
            .iter()
            .map(|f| {
                GridField::from_fn(16, 16, 3, 1.0, 1.0, |i, j, ch| {
                    f.values()[[i, j, ch]] + if ch == 0 { c } else { 0.0 }
                })
                .unwrap()
            })
            .collect();
        let rep = physics_rdb(&shifted, &truth, &iset).unwrap();
        assert!((rep.get("mass_mae").unwrap() - c).abs() < 1e-12);
        assert!(rep.get("std_mae").unwrap().abs() < 1e-12);
    }

    #[test]
    fn enstrophy_of_unit_sine_is_half() {
        let n = 32;
        let f = GridField::from_fn(n, n, 1, 1.0, 1.0, |_, j, _| {
            (2.0 * std::f64::consts::PI * j as f64 / n as f64).sin()
        })
        .unwrap();
        assert!((enstrophy(&f) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn correlation_signs_and_scalar_oracle() {
        let pairs: Vec<(f64, f64)> = (0..5).map(|i| (i as f64, i as f64)).collect();
        assert!((coordinate_correlation(&pairs).unwrap() - 1.0).abs() < 1e-12);
        let anti: Vec<(f64, f64)> = (0..5).map(|i| (i as f64, -(i as f64))).collect();
        assert!((coordinate_correlation(&anti).unwrap() + 1.0).abs() < 1e-12);

        // Hand-set 4-point cloud against the direct formula.
        let cloud = [(0.0, 1.0), (1.0, 3.0), (2.0, 2.0), (3.0, 5.0)];
        let r = coordinate_correlation(&cloud).unwrap();
        let expect = {
            let (mx, my) = (1.5, 2.75);
            let mut sxx = 0.0;
            let mut syy = 0.0;
            let mut sxy = 0.0;
            for (x, y) in cloud {
                sxx += (x - mx) * (x - mx);
                syy += (y - my) * (y - my);
                sxy += (x - mx) * (y - my);
            }
            sxy / (sxx * syy).sqrt()
        };
        assert!((r - expect).abs() < 1e-12);

        let flat = [(1.0, 2.0), (1.0, 3.0), (1.0, 4.0)];
        assert!(coordinate_correlation(&flat).is_err());
    }

    #[test]
    fn win_loss_regret_cases() {
        let base = [1.0, 2.0, 3.0];
        assert_eq!(win_loss_regret(&base, &base).unwrap(), (0, 0, 0.0));
        let better = [0.5, 1.0, 2.0];
        assert_eq!(win_loss_regret(&base, &better).unwrap(), (3, 0, 0.0));
        // Mixed 3-task example computed by hand.
        let mixed = [0.8, 2.5, 3.0];
        let (w, l, r) = win_loss_regret(&base, &mixed).unwrap();
        assert_eq!((w, l), (1, 1));
        assert!((r - 0.5).abs() < 1e-12);
        assert!(win_loss_regret(&base, &[1.0]).is_err());
    }

    #[test]
    fn bootstrap_degenerate_and_containment() {
        let vals = [0.25; 6];
        let (mean, lo, hi) = bootstrap_ci(&vals, 200, 0.95, 1).unwrap();
        assert_eq!((mean, lo, hi), (0.25, 0.25, 0.25));

        let vals = [0.1, 0.5, 0.9, 0.3];
        let (mean, lo, hi) = bootstrap_ci(&vals, 500, 0.9, 2).unwrap();
        assert!(lo <= mean && mean <= hi);
    }

    #[test]
    fn two_point_bootstrap_matches_the_closed_form() {
        // Resample means of {0, 1} follow Binomial(2, 1/2)/2; the 2.5% and
        // 97.5% percentiles of that distribution are 0 and 1.
        let vals = [0.0, 1.0];
        let (_, lo, hi) = bootstrap_ci(&vals, 10_000, 0.95, 3).unwrap();
        assert!(lo.abs() < 0.02, "lo = {lo}");
        assert!((hi - 1.0).abs() < 0.02, "hi = {hi}");
    }

    #[test]
    fn report_summaries() {
        let base = MetricReport {
            method: "base".into(),
            regimes: vec![
                RegimeMetric::new(0.9, -0.5, RegimeRole::Interpolation, vec![0.1, 0.2]),
                RegimeMetric::new(1.4, 1.5, RegimeRole::OodHigh, vec![0.4, 0.6]),
                RegimeMetric::new(0.6, -1.5, RegimeRole::OodLow, vec![0.2, 0.4]),
            ],
        };
        let method = MetricReport {
            method: "m".into(),
            regimes: vec![
                RegimeMetric::new(0.9, -0.5, RegimeRole::Interpolation, vec![0.1, 0.1]),
                RegimeMetric::new(1.4, 1.5, RegimeRole::OodHigh, vec![0.3, 0.3]),
                RegimeMetric::new(0.6, -1.5, RegimeRole::OodLow, vec![0.1, 0.3]),
            ],
        };
        let bm = base.ood_mean().unwrap();
        assert!((bm - 0.4).abs() < 1e-12);
        assert!(base.ood_worst().unwrap() >= bm);
        let gain = method.ood_gain_vs(&base).unwrap();
        assert!((gain - (0.4 - 0.25) / 0.4).abs() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn split_invariants_hold(t in 2usize..64, k_raw in 1usize..64) {
            let k = 1 + k_raw % (t - 1);
            let (cal, fut) = split_protocol(t, k).unwrap();
            prop_assert_eq!(cal.indices.len() + fut.indices.len(), t);
            prop_assert!(cal.indices.iter().all(|i| *i <= k));
            prop_assert!(fut.indices.iter().all(|i| *i > k));
            let mut merged: Vec<usize> = cal.indices.iter().chain(fut.indices.iter()).copied().collect();
            merged.sort_unstable();
            prop_assert_eq!(merged, IndexSet::full(t).indices);
        }

        #[test]
        fn future_metric_is_monotone_in_future_noise(amp in 0.0f64..0.5) {
            let t = 6;
            let truth: Vec<GridField> = (0..t)
                .map(|i| GridField::from_fn(4, 4, 1, 1.0, 1.0, |a, b, _| 1.0 + ((a + b + i) % 3) as f64).unwrap())
                .collect();
            let (cal, fut) = split_protocol(t, 2).unwrap();
            let pred: Vec<GridField> = truth.iter().map(|f| f.map(|v| v + 0.05)).collect();
            let noisier: Vec<GridField> = pred
                .iter()
                .enumerate()
                .map(|(i, f)| if i + 1 > 2 { f.map(|v| v + amp) } else { f.clone() })
                .collect();
            let before = rollout_l2(&pred, &truth, &fut).unwrap();
            let after = rollout_l2(&noisier, &truth, &fut).unwrap();
            prop_assert!(after + 1e-12 >= before);
            // Calibration metric untouched by future-frame noise.
            let c1 = rollout_l2(&pred, &truth, &cal).unwrap();
            let c2 = rollout_l2(&noisier, &truth, &cal).unwrap();
            prop_assert!((c1 - c2).abs() < 1e-15);
        }
    }
}
