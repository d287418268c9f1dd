//! Weight-space algebra over same-lineage checkpoints: endpoint residuals,
//! their shared/signed decomposition, the one-parameter coordinate line, the
//! generic merge baselines, and the output-space ensemble reference.
//!
//! All merges operate on the flattened canonical vector after name-wise
//! schema equality has been enforced.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{assert_same_lineage, Checkpoint, Lineage, Role};
use crate::error::{Error, Result};
use crate::grid::GridField;
use crate::operator::StepMap;
use crate::weights::WeightSet;

/// Anchor, endpoint residuals, and their shared/signed split:
/// shared = (d_low + d_high)/2, signed = (d_high - d_low)/2.
#[derive(Debug, Clone)]
pub struct Decomposition {
    pub anchor: Checkpoint,
    pub expert_low: Checkpoint,
    pub expert_high: Checkpoint,
    pub delta_low: WeightSet,
    pub delta_high: WeightSet,
    pub shared: WeightSet,
    pub signed: WeightSet,
}

/// A coordinate line with its clip bounds, fixed before any evaluation.
#[derive(Debug, Clone)]
pub struct CoordinateLine {
    pub decomposition: Decomposition,
    pub alpha_min: f64,
    pub alpha_max: f64,
}

pub fn decompose(
    anchor: &Checkpoint,
    expert_low: &Checkpoint,
    expert_high: &Checkpoint,
) -> Result<Decomposition> {
    assert_same_lineage(anchor, expert_low)?;
    assert_same_lineage(anchor, expert_high)?;
    assert_same_lineage(expert_low, expert_high)?;

    let (a, schema) = anchor.weights.flatten();
    let (lo, _) = expert_low.weights.flatten();
    let (hi, _) = expert_high.weights.flatten();
    let n = a.len();
    let mut d_low = vec![0.0; n];
    let mut d_high = vec![0.0; n];
    let mut shared = vec![0.0; n];
    let mut signed = vec![0.0; n];
    for i in 0..n {
        d_low[i] = lo[i] - a[i];
        d_high[i] = hi[i] - a[i];
        shared[i] = (d_low[i] + d_high[i]) / 2.0;
        signed[i] = (d_high[i] - d_low[i]) / 2.0;
    }
    Ok(Decomposition {
        anchor: anchor.clone(),
        expert_low: expert_low.clone(),
        expert_high: expert_high.clone(),
        delta_low: WeightSet::unflatten(&d_low, &schema)?,
        delta_high: WeightSet::unflatten(&d_high, &schema)?,
        shared: WeightSet::unflatten(&shared, &schema)?,
        signed: WeightSet::unflatten(&signed, &schema)?,
    })
}

impl CoordinateLine {
    /// Bounds must contain the endpoints: alpha_min <= -1 < 1 <= alpha_max.
    pub fn new(decomposition: Decomposition, alpha_min: f64, alpha_max: f64) -> Result<Self> {
        if !(alpha_min <= -1.0 && 1.0 <= alpha_max) {
            return Err(Error::InvalidParam(format!(
                "clip bounds [{alpha_min}, {alpha_max}] must contain [-1, 1]"
            )));
        }
        Ok(Self {
            decomposition,
            alpha_min,
            alpha_max,
        })
    }

    pub fn clip(&self, alpha: f64) -> f64 {
        alpha.clamp(self.alpha_min, self.alpha_max)
    }

    pub fn compose_operator(&self, alpha: f64) -> Result<crate::operator::Operator> {
        compose_at(self, alpha)?.operator()
    }
}

fn merged_lineage(d: &Decomposition, alpha: f64, note: &str) -> Lineage {
    Lineage {
        role: Role::Merged,
        family: d.anchor.lineage.family.clone(),
        lambda: None,
        parent: None,
        anchor: Some(d.anchor.content_hash()),
        seed: d.anchor.lineage.seed,
        config_digest: d.anchor.config.digest(),
        alpha: Some(alpha),
        sources: Some((
            d.expert_low.content_hash(),
            d.expert_high.content_hash(),
        )),
        note: note.to_string(),
    }
}

/// The composed checkpoint at coordinate alpha. Computed in the convex form
/// ((1-alpha)/2) low + ((1+alpha)/2) high, which equals the anchor form
/// anchor + shared + alpha*signed and recovers the endpoint experts exactly
/// at alpha = -1 and +1. Clipping is the selector's job, not this one's.
pub fn compose_at(line: &CoordinateLine, alpha: f64) -> Result<Checkpoint> {
    if !alpha.is_finite() {
        return Err(Error::InvalidParam("alpha must be finite".into()));
    }
    let d = &line.decomposition;
    let (lo, schema) = d.expert_low.weights.flatten();
    let (hi, _) = d.expert_high.weights.flatten();
    let c_lo = (1.0 - alpha) / 2.0;
    let c_hi = (1.0 + alpha) / 2.0;
    let merged: Vec<f64> = lo
        .iter()
        .zip(hi.iter())
        .map(|(l, h)| c_lo * l + c_hi * h)
        .collect();
    Ok(Checkpoint::new(
        WeightSet::unflatten(&merged, &schema)?,
        d.anchor.config.clone(),
        d.anchor.normalizer.clone(),
        merged_lineage(d, alpha, "compose-at"),
    ))
}

/// The endpoint average: compose_at(0).
pub fn endpoint_average(line: &CoordinateLine) -> Result<Checkpoint> {
    compose_at(line, 0.0)
}

/// Generic task arithmetic: anchor + sum of weighted residuals.
pub fn task_arithmetic(anchor: &Checkpoint, terms: &[(&WeightSet, f64)]) -> Result<Checkpoint> {
    let (mut acc, schema) = anchor.weights.flatten();
    for (delta, weight) in terms {
        if delta.schema() != anchor.weights.schema() {
            return Err(Error::SchemaMismatch(
                "residual schema differs from the anchor".into(),
            ));
        }
        let (d, _) = delta.flatten();
        for (a, v) in acc.iter_mut().zip(d.iter()) {
            *a += weight * v;
        }
    }
    Ok(Checkpoint::new(
        WeightSet::unflatten(&acc, &schema)?,
        anchor.config.clone(),
        anchor.normalizer.clone(),
        baseline_lineage(anchor, "task-arithmetic"),
    ))
}

fn baseline_lineage(anchor: &Checkpoint, note: &str) -> Lineage {
    Lineage {
        role: Role::Baseline,
        family: anchor.lineage.family.clone(),
        lambda: None,
        parent: Some(anchor.content_hash()),
        anchor: Some(anchor.content_hash()),
        seed: anchor.lineage.seed,
        config_digest: anchor.config.digest(),
        alpha: None,
        sources: None,
        note: note.to_string(),
    }
}

/// Keep the top `trim_fraction` of coordinates of a vector by magnitude,
/// zeroing the rest. Ties at the threshold resolve by index order.
fn trim_by_magnitude(v: &[f64], trim_fraction: f64) -> Vec<f64> {
    let n = v.len();
    let keep = ((trim_fraction * n as f64).ceil() as usize).clamp(1, n);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| {
        v[b].abs()
            .partial_cmp(&v[a].abs())
            .expect("finite weights")
            .then(a.cmp(&b))
    });
    let mut out = vec![0.0; n];
    for &i in idx.iter().take(keep) {
        out[i] = v[i];
    }
    out
}

/// TIES: per-residual magnitude trim, per-coordinate sign election by summed
/// mass, then the mean of sign-consistent survivors.
pub fn ties_merge(
    anchor: &Checkpoint,
    deltas: &[&WeightSet],
    trim_fraction: f64,
) -> Result<Checkpoint> {
    if !(trim_fraction > 0.0 && trim_fraction <= 1.0) {
        return Err(Error::InvalidParam(format!(
            "trim fraction must lie in (0, 1], got {trim_fraction}"
        )));
    }
    if deltas.is_empty() {
        return Err(Error::InvalidParam("need at least one residual".into()));
    }
    let (anchor_vec, schema) = anchor.weights.flatten();
    let trimmed: Vec<Vec<f64>> = deltas
        .iter()
        .map(|d| {
            if d.schema() != anchor.weights.schema() {
                return Err(Error::SchemaMismatch(
                    "residual schema differs from the anchor".into(),
                ));
            }
            Ok(trim_by_magnitude(&d.flatten().0, trim_fraction))
        })
        .collect::<Result<_>>()?;
    let n = anchor_vec.len();
    let mut merged = anchor_vec;
    for c in 0..n {
        let mass: f64 = trimmed.iter().map(|t| t[c]).sum();
        if mass == 0.0 {
            continue;
        }
        let sign = mass.signum();
        let survivors: Vec<f64> = trimmed
            .iter()
            .map(|t| t[c])
            .filter(|v| *v != 0.0 && v.signum() == sign)
            .collect();
        if !survivors.is_empty() {
            merged[c] += survivors.iter().sum::<f64>() / survivors.len() as f64;
        }
    }
    Ok(Checkpoint::new(
        WeightSet::unflatten(&merged, &schema)?,
        anchor.config.clone(),
        anchor.normalizer.clone(),
        baseline_lineage(anchor, &format!("ties trim={trim_fraction}")),
    ))
}

/// DARE: drop residual coordinates with probability `drop_prob`, rescale
/// survivors by 1/(1-p), sum onto the anchor. Seeded and deterministic.
pub fn dare_merge(
    anchor: &Checkpoint,
    deltas: &[&WeightSet],
    drop_prob: f64,
    seed: u64,
) -> Result<Checkpoint> {
    if !(0.0..1.0).contains(&drop_prob) {
        return Err(Error::InvalidParam(format!(
            "drop probability must lie in [0, 1), got {drop_prob}"
        )));
    }
    if deltas.is_empty() {
        return Err(Error::InvalidParam("need at least one residual".into()));
    }
    let (mut merged, schema) = anchor.weights.flatten();
    let rescale = 1.0 / (1.0 - drop_prob);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for d in deltas {
        if d.schema() != anchor.weights.schema() {
            return Err(Error::SchemaMismatch(
                "residual schema differs from the anchor".into(),
            ));
        }
        let (v, _) = d.flatten();
        for (acc, x) in merged.iter_mut().zip(v.iter()) {
            let u: f64 = rng.gen();
            if u >= drop_prob {
                *acc += x * rescale;
            }
        }
    }
    Ok(Checkpoint::new(
        WeightSet::unflatten(&merged, &schema)?,
        anchor.config.clone(),
        anchor.normalizer.clone(),
        baseline_lineage(anchor, &format!("dare p={drop_prob} seed={seed}")),
    ))
}

/// Output-space ensemble reference: the weighted combination of expert
/// predictions is formed at every rollout step and fed back into all experts.
pub fn output_ensemble(
    experts: &[&dyn StepMap],
    weights: &[f64],
    u0: &GridField,
    t: usize,
) -> Result<Vec<GridField>> {
    if experts.is_empty() || experts.len() != weights.len() {
        return Err(Error::InvalidParam(
            "experts and weights must be non-empty and matched".into(),
        ));
    }
    let mut state = u0.clone();
    let mut out = Vec::with_capacity(t);
    for _ in 0..t {
        let mut combined: Option<GridField> = None;
        for (expert, wgt) in experts.iter().zip(weights.iter()) {
            let pred = expert.step(&state)?;
            if !pred.same_shape(&state) {
                return Err(Error::ShapeMismatch {
                    context: "ensemble member output".into(),
                    expected: format!("{:?}", state.values().dim()),
                    got: format!("{:?}", pred.values().dim()),
                });
            }
            combined = Some(match combined {
                None => pred.map(|v| v * wgt),
                Some(acc) => acc.lin_comb(1.0, &pred, *wgt)?,
            });
        }
        state = combined.expect("at least one expert");
        out.push(state.clone());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checkpoint::tests::{anchor_ckpt, expert_from};
    use crate::error::Error;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_line(seed: u64) -> CoordinateLine {
        let anchor = anchor_ckpt(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        let mut low = expert_from(&anchor, Role::EndpointLow, 0.0);
        for (_, t) in low.weights.iter_mut() {
            for v in t.data.iter_mut() {
                *v += rng.gen_range(-0.1..0.1);
            }
        }
        let mut high = expert_from(&anchor, Role::EndpointHigh, 0.0);
        for (_, t) in high.weights.iter_mut() {
            for v in t.data.iter_mut() {
                *v += rng.gen_range(-0.1..0.1);
            }
        }
        let d = decompose(&anchor, &low, &high).unwrap();
        CoordinateLine::new(d, -1.5, 1.5).unwrap()
    }

    #[test]
    fn identical_experts_have_zero_components() {
        let anchor = anchor_ckpt(1);
        let low = expert_from(&anchor, Role::EndpointLow, 0.0);
        let high = expert_from(&anchor, Role::EndpointHigh, 0.0);
        let d = decompose(&anchor, &low, &high).unwrap();
        assert_eq!(d.shared.max_abs(), 0.0);
        assert_eq!(d.signed.max_abs(), 0.0);
    }

    #[test]
    fn one_sided_expert_splits_evenly() {
        let anchor = anchor_ckpt(2);
        let low = expert_from(&anchor, Role::EndpointLow, 0.0);
        let high = expert_from(&anchor, Role::EndpointHigh, 0.25);
        let d = decompose(&anchor, &low, &high).unwrap();
        for (_, t) in d.shared.iter() {
            for v in &t.data {
                assert!((v - 0.125).abs() < 1e-15);
            }
        }
        for (_, t) in d.signed.iter() {
            for v in &t.data {
                assert!((v - 0.125).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn components_reconstruct_the_residuals() {
        let line = random_line(3);
        let d = &line.decomposition;
        let sum = d.shared.add(&d.signed).unwrap();
        assert!(sum.max_rel_diff(&d.delta_high).unwrap() < 1e-15);
        let diff = d.shared.sub(&d.signed).unwrap();
        assert!(diff.max_rel_diff(&d.delta_low).unwrap() < 1e-15);
    }

    #[test]
    fn endpoints_are_recovered_exactly() {
        let line = random_line(4);
        let low = compose_at(&line, -1.0).unwrap();
        let high = compose_at(&line, 1.0).unwrap();
        let avg = endpoint_average(&line).unwrap();
        let d = &line.decomposition;
        for (name, t) in low.weights.iter() {
            let e = d.expert_low.weights.get(name).unwrap();
            for (a, b) in t.data.iter().zip(e.data.iter()) {
                assert_eq!(a, b);
            }
        }
        for (name, t) in high.weights.iter() {
            let e = d.expert_high.weights.get(name).unwrap();
            for (a, b) in t.data.iter().zip(e.data.iter()) {
                assert_eq!(a, b);
            }
        }
        for (name, t) in avg.weights.iter() {
            let lo = d.expert_low.weights.get(name).unwrap();
            let hi = d.expert_high.weights.get(name).unwrap();
            for ((m, l), h) in t.data.iter().zip(lo.data.iter()).zip(hi.data.iter()) {
                assert_eq!(*m, (l + h) / 2.0);
            }
        }
        assert_eq!(low.lineage.alpha, Some(-1.0));
        assert_eq!(low.lineage.role, Role::Merged);
    }

    #[test]
    fn extrapolation_uses_the_stated_coefficients() {
        let line = random_line(5);
        let merged = compose_at(&line, 1.5).unwrap();
        let d = &line.decomposition;
        for (name, t) in merged.weights.iter() {
            let lo = d.expert_low.weights.get(name).unwrap();
            let hi = d.expert_high.weights.get(name).unwrap();
            for ((m, l), h) in t.data.iter().zip(lo.data.iter()).zip(hi.data.iter()) {
                let expect = -0.25 * l + 1.25 * h;
                assert!((m - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn swapping_experts_negates_the_signed_component() {
        let line = random_line(6);
        let d = &line.decomposition;
        let swapped = decompose(&d.anchor, &d.expert_high, &d.expert_low).unwrap();
        for (name, t) in swapped.shared.iter() {
            let orig = d.shared.get(name).unwrap();
            for (a, b) in t.data.iter().zip(orig.data.iter()) {
                assert_eq!(a, b);
            }
        }
        for (name, t) in swapped.signed.iter() {
            let orig = d.signed.get(name).unwrap();
            for (a, b) in t.data.iter().zip(orig.data.iter()) {
                assert_eq!(*a, -b);
            }
        }
    }

    #[test]
    fn lineage_mismatch_blocks_decomposition() {
        let a = anchor_ckpt(7);
        let b = anchor_ckpt(8);
        let low = expert_from(&a, Role::EndpointLow, -0.1);
        let high = expert_from(&b, Role::EndpointHigh, 0.1);
        assert!(matches!(
            decompose(&a, &low, &high),
            Err(Error::LineageMismatch(_))
        ));
    }

    #[test]
    fn task_arithmetic_recovers_single_expert() {
        let line = random_line(9);
        let d = &line.decomposition;
        let merged = task_arithmetic(&d.anchor, &[(&d.delta_high, 1.0)]).unwrap();
        assert!(
            merged
                .weights
                .max_rel_diff(&d.expert_high.weights)
                .unwrap()
                < 1e-15
        );
    }

    #[test]
    fn half_half_task_arithmetic_equals_the_average() {
        let line = random_line(10);
        let d = &line.decomposition;
        let ta = task_arithmetic(&d.anchor, &[(&d.delta_low, 0.5), (&d.delta_high, 0.5)]).unwrap();
        let avg = endpoint_average(&line).unwrap();
        assert!(ta.weights.max_rel_diff(&avg.weights).unwrap() < 1e-14);
    }

    #[test]
    fn task_arithmetic_matches_brute_force_sum() {
        let line = random_line(11);
        let d = &line.decomposition;
        let merged = task_arithmetic(&d.anchor, &[(&d.delta_low, 1.0), (&d.delta_high, 1.0)]).unwrap();
        // Brute-force oracle: elementwise sums without the flatten machinery.
        for (name, t) in merged.weights.iter() {
            let a = d.anchor.weights.get(name).unwrap();
            let dl = d.delta_low.get(name).unwrap();
            let dh = d.delta_high.get(name).unwrap();
            for i in 0..t.data.len() {
                let expect = a.data[i] + dl.data[i] + dh.data[i];
                assert!((t.data[i] - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn degenerate_ties_is_task_arithmetic() {
        let line = random_line(12);
        let d = &line.decomposition;
        let ties = ties_merge(&d.anchor, &[&d.delta_high], 1.0).unwrap();
        let ta = task_arithmetic(&d.anchor, &[(&d.delta_high, 1.0)]).unwrap();
        assert!(ties.weights.max_rel_diff(&ta.weights).unwrap() < 1e-15);
    }

    #[test]
    fn dare_with_zero_drop_is_the_exact_sum() {
        let line = random_line(13);
        let d = &line.decomposition;
        let dare = dare_merge(&d.anchor, &[&d.delta_low, &d.delta_high], 0.0, 99).unwrap();
        let ta = task_arithmetic(&d.anchor, &[(&d.delta_low, 1.0), (&d.delta_high, 1.0)]).unwrap();
        assert!(dare.weights.max_rel_diff(&ta.weights).unwrap() < 1e-15);
    }

    #[test]
    fn dare_is_unbiased_in_expectation() {
        // Monte-Carlo oracle on a 10-parameter toy.
        use crate::operator::{Normalizer, OperatorConfig, TrainObjective};
        use crate::weights::Tensor;
        let cfg = OperatorConfig {
            grid_h: 8,
            grid_w: 8,
            channels: 1,
            width: 1,
            modes: 1,
            layers: 1,
            lr: 0.0,
            steps: 0,
            batch_size: 1,
            seed: 0,
            objective: TrainObjective::OneStep,
            eval_every: 1,
        };
        let mut anchor_ws = WeightSet::new();
        anchor_ws.insert("w", Tensor::from_vec(&[10], vec![0.0; 10]).unwrap());
        let anchor = Checkpoint::new(
            anchor_ws.clone(),
            cfg,
            Normalizer::identity(1),
            crate::checkpoint::Lineage {
                role: Role::Anchor,
                family: "toy".into(),
                lambda: None,
                parent: None,
                anchor: None,
                seed: 0,
                config_digest: "toy".into(),
                alpha: None,
                sources: None,
                note: "toy".into(),
            },
        );
        let mut delta = anchor_ws.zeros_like();
        for (i, v) in delta.get_mut("w").unwrap().data.iter_mut().enumerate() {
            *v = (i as f64 + 1.0) * 0.1;
        }
        let p = 0.5;
        let trials = 1000;
        let mut mean = vec![0.0; 10];
        for seed in 0..trials {
            let merged = dare_merge(&anchor, &[&delta], p, seed).unwrap();
            for (m, v) in mean.iter_mut().zip(&merged.weights.get("w").unwrap().data) {
                *m += v / trials as f64;
            }
        }
        let exact = &delta.get("w").unwrap().data;
        for (c, (m, e)) in mean.iter().zip(exact.iter()).enumerate() {
            // Per-coordinate variance of the estimator: e^2 * p/(1-p) / trials.
            let se = (e * e * p / (1.0 - p) / trials as f64).sqrt();
            assert!(
                (m - e).abs() <= 3.0 * se,
                "coordinate {c}: mean {m} vs {e} (3se = {:.3e})",
                3.0 * se
            );
        }
    }

    #[test]
    fn invalid_hyperparameters_are_rejected() {
        let line = random_line(14);
        let d = &line.decomposition;
        assert!(ties_merge(&d.anchor, &[&d.delta_low], 0.0).is_err());
        assert!(ties_merge(&d.anchor, &[&d.delta_low], 1.5).is_err());
        assert!(dare_merge(&d.anchor, &[&d.delta_low], 1.0, 1).is_err());
        assert!(dare_merge(&d.anchor, &[&d.delta_low], -0.1, 1).is_err());
    }

    struct LinearMap {
        scale: f64,
    }

    impl StepMap for LinearMap {
        fn step(&self, u: &GridField) -> crate::error::Result<GridField> {
            Ok(u.map(|v| v * self.scale))
        }
    }

    #[test]
    fn ensemble_weight_one_is_that_expert() {
        let a = LinearMap { scale: 0.5 };
        let b = LinearMap { scale: 2.0 };
        let u0 = GridField::from_fn(4, 4, 1, 1.0, 1.0, |i, j, _| (i + 2 * j) as f64).unwrap();
        let ens = output_ensemble(&[&a, &b], &[1.0, 0.0], &u0, 3).unwrap();
        let mut state = u0.clone();
        for f in &ens {
            state = a.step(&state).unwrap();
            assert_eq!(f.values(), state.values());
        }
    }

    #[test]
    fn identical_experts_average_to_themselves() {
        let a = LinearMap { scale: 0.7 };
        let b = LinearMap { scale: 0.7 };
        let u0 = GridField::from_fn(4, 4, 1, 1.0, 1.0, |i, _, _| i as f64 - 1.5).unwrap();
        let ens = output_ensemble(&[&a, &b], &[0.5, 0.5], &u0, 4).unwrap();
        let solo = output_ensemble(&[&a], &[1.0], &u0, 4).unwrap();
        for (x, y) in ens.iter().zip(solo.iter()) {
            let diff = x
                .values()
                .iter()
                .zip(y.values().iter())
                .map(|(p, q)| (p - q).abs())
                .fold(0.0, f64::max);
            assert!(diff < 1e-15);
        }
    }

    #[test]
    fn linear_maps_ensemble_like_the_averaged_map() {
        let a = LinearMap { scale: 0.4 };
        let b = LinearMap { scale: 1.2 };
        let avg = LinearMap { scale: 0.8 };
        let u0 = GridField::from_fn(4, 4, 1, 1.0, 1.0, |i, j, _| (i * j) as f64 * 0.1 + 1.0).unwrap();
        let ens = output_ensemble(&[&a, &b], &[0.5, 0.5], &u0, 5).unwrap();
        let direct = output_ensemble(&[&avg], &[1.0], &u0, 5).unwrap();
        for (x, y) in ens.iter().zip(direct.iter()) {
            let diff = x
                .values()
                .iter()
                .zip(y.values().iter())
                .map(|(p, q)| (p - q).abs())
                .fold(0.0, f64::max);
            assert!(diff < 1e-12);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn dual_forms_agree(seed in 0u64..5_000, alpha_idx in 0usize..13) {
            let line = random_line(seed);
            let alpha = -1.5 + 0.25 * alpha_idx as f64;
            let convex = compose_at(&line, alpha).unwrap();
            // Anchor form oracle: anchor + shared + alpha * signed.
            let d = &line.decomposition;
            let anchor_form = d
                .anchor
                .weights
                .add(&d.shared)
                .unwrap()
                .add(&d.signed.scaled(alpha))
                .unwrap();
            prop_assert!(convex.weights.max_rel_diff(&anchor_form).unwrap() < 1e-12);
        }

        #[test]
        fn compose_is_affine_in_alpha(seed in 0u64..5_000, a in -1.5f64..1.5, b in -1.5f64..1.5) {
            let line = random_line(seed);
            let ca = compose_at(&line, a).unwrap().weights;
            let cb = compose_at(&line, b).unwrap().weights;
            let mid = compose_at(&line, (a + b) / 2.0).unwrap().weights;
            let lhs = ca.add(&cb).unwrap();
            let rhs = mid.scaled(2.0);
            prop_assert!(lhs.max_rel_diff(&rhs).unwrap() < 1e-12);
        }

        #[test]
        fn decompose_of_composed_endpoints_is_idempotent(seed in 0u64..5_000) {
            let line = random_line(seed);
            let d = &line.decomposition;
            let low = compose_at(&line, -1.0).unwrap();
            let high = compose_at(&line, 1.0).unwrap();
            let again = decompose(&d.anchor, &low, &high).unwrap();
            prop_assert!(again.shared.max_rel_diff(&d.shared).unwrap() < 1e-12);
            prop_assert!(again.signed.max_rel_diff(&d.signed).unwrap() < 1e-12);
        }
    }
}
