//! Numerical verification harness for the continuation mathematics: the
//! two-point interpolation inequality, the a-posteriori bound with empirical
//! curvature, finite-difference order checks for the shared/signed residual
//! components, and the end-to-end bound audit on a trained line.
//!
//! The dataset norm is the root-mean-square over a fixed seeded probe batch
//! of stacked rollout values, which makes every quantity reproducible.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::merge::CoordinateLine;
use crate::sim::{sample_initial_condition, simulate, FamilySpec};

/// Root-mean-square norm of a stacked value vector.
pub fn rms_norm(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
}

fn rms_diff(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len();
    (a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n as f64)
        .sqrt()
}

/// Function-space samples along the coordinate grid: one stacked value
/// vector per alpha.
#[derive(Debug, Clone)]
pub struct CurveSamples {
    pub alphas: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl CurveSamples {
    pub fn new(alphas: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self> {
        if alphas.len() != values.len() || alphas.len() < 3 {
            return Err(Error::InvalidParam(
                "curve needs >= 3 matched (alpha, value) samples".into(),
            ));
        }
        if alphas.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParam(
                "alpha grid must be strictly increasing".into(),
            ));
        }
        for needle in [-1.0, 1.0] {
            if !alphas.iter().any(|a| (a - needle).abs() < 1e-12) {
                return Err(Error::InvalidParam(format!(
                    "alpha grid must contain {needle}"
                )));
            }
        }
        Ok(Self { alphas, values })
    }

    fn index_of(&self, alpha: f64) -> Option<usize> {
        self.alphas.iter().position(|a| (a - alpha).abs() < 1e-9)
    }
}

/// Second central difference in the dataset norm:
/// K(alpha, delta) = ||F(a+d) - 2 F(a) + F(a-d)|| / d^2, at every grid alpha
/// where both neighbors exist.
pub fn empirical_curvature(curve: &CurveSamples, delta: f64) -> Result<Vec<(f64, f64)>> {
    if delta <= 0.0 {
        return Err(Error::InvalidParam("delta must be positive".into()));
    }
    let mut out = Vec::new();
    for (i, &alpha) in curve.alphas.iter().enumerate() {
        let (lo, hi) = match (curve.index_of(alpha - delta), curve.index_of(alpha + delta)) {
            (Some(l), Some(h)) => (l, h),
            _ => continue,
        };
        let n = curve.values[i].len();
        let mut acc = 0.0;
        for k in 0..n {
            let d = curve.values[hi][k] - 2.0 * curve.values[i][k] + curve.values[lo][k];
            acc += d * d;
        }
        let khat = (acc / n as f64).sqrt() / (delta * delta);
        out.push((alpha, khat));
    }
    if out.is_empty() {
        return Err(Error::InvalidParam(
            "grid too coarse for the requested delta".into(),
        ));
    }
    Ok(out)
}

/// The two-point continuation value:
/// |1-a|/2 eps_minus + |1+a|/2 eps_plus + |a^2-1|/2 K_E.
pub fn continuation_bound(eps_minus: f64, eps_plus: f64, k_e: f64, alpha: f64) -> f64 {
    0.5 * (1.0 - alpha).abs() * eps_minus
        + 0.5 * (1.0 + alpha).abs() * eps_plus
        + 0.5 * (alpha * alpha - 1.0).abs() * k_e
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LemmaRow {
    pub alpha: f64,
    pub error: f64,
    pub bound: f64,
    pub slack: f64,
}

/// Check the interpolation inequality
/// ||phi(a) - ell_phi(a)|| <= |a^2-1|/2 * sup ||phi''||
/// on every grid point, for a curve with a known second-derivative sup over
/// the enclosing interval conv{-1, 1, a}.
pub fn verify_lemma_synthetic(
    phi: impl Fn(f64) -> Vec<f64>,
    second_derivative_sup: impl Fn(f64) -> f64,
    grid: &[f64],
) -> Result<Vec<LemmaRow>> {
    if grid.len() < 3 {
        return Err(Error::InvalidParam("need at least 3 grid points".into()));
    }
    let at_minus = phi(-1.0);
    let at_plus = phi(1.0);
    let mut rows = Vec::with_capacity(grid.len());
    for &alpha in grid {
        let value = phi(alpha);
        let n = value.len();
        let mut acc = 0.0;
        for k in 0..n {
            let interp = 0.5 * (1.0 - alpha) * at_minus[k] + 0.5 * (1.0 + alpha) * at_plus[k];
            let d = value[k] - interp;
            acc += d * d;
        }
        let error = (acc / n as f64).sqrt();
        let bound = 0.5 * (alpha * alpha - 1.0).abs() * second_derivative_sup(alpha);
        rows.push(LemmaRow {
            alpha,
            error,
            bound,
            slack: bound - error,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OrderRow {
    pub h: f64,
    pub shared_err: f64,
    pub signed_err: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OrdersReport {
    pub rows: Vec<OrderRow>,
    pub shared_slope: Option<f64>,
    pub signed_slope: Option<f64>,
}

/// Least-squares slope of ln(err) against ln(h).
pub fn fit_loglog_slope(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 2 || points.iter().any(|(h, e)| *h <= 0.0 || *e <= 0.0) {
        return Err(Error::InvalidParam(
            "degenerate fit: need >= 2 strictly positive points".into(),
        ));
    }
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|(h, _)| h.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|(_, e)| e.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, y) in xs.iter().zip(ys.iter()) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    if sxx == 0.0 {
        return Err(Error::InvalidParam("degenerate fit: zero spread".into()));
    }
    Ok(sxy / sxx)
}

/// Finite-difference order check on an analytic branch U(q): the shared
/// component (U(h)+U(-h))/2 approximates U(0) to second order, the signed
/// component (U(h)-U(-h))/2 approximates h U'(0) to third order.
pub fn finite_difference_orders(
    branch: impl Fn(f64) -> Vec<f64>,
    u_at_zero: &[f64],
    du_at_zero: &[f64],
    h_grid: &[f64],
) -> Result<OrdersReport> {
    if h_grid.is_empty() || h_grid.iter().any(|h| *h <= 0.0) {
        return Err(Error::InvalidParam("h grid must be positive".into()));
    }
    let mut rows = Vec::with_capacity(h_grid.len());
    for &h in h_grid {
        let up = branch(h);
        let um = branch(-h);
        let n = up.len();
        let mut shared_acc = 0.0;
        let mut signed_acc = 0.0;
        for k in 0..n {
            let shared = 0.5 * (up[k] + um[k]) - u_at_zero[k];
            let signed = 0.5 * (up[k] - um[k]) - h * du_at_zero[k];
            shared_acc += shared * shared;
            signed_acc += signed * signed;
        }
        rows.push(OrderRow {
            h,
            shared_err: (shared_acc / n as f64).sqrt(),
            signed_err: (signed_acc / n as f64).sqrt(),
        });
    }
    let shared_pts: Vec<(f64, f64)> = rows.iter().map(|r| (r.h, r.shared_err)).collect();
    let signed_pts: Vec<(f64, f64)> = rows.iter().map(|r| (r.h, r.signed_err)).collect();
    Ok(OrdersReport {
        shared_slope: fit_loglog_slope(&shared_pts).ok(),
        signed_slope: fit_loglog_slope(&signed_pts).ok(),
        rows,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundRow {
    pub alpha: f64,
    pub measured: f64,
    pub bound: f64,
    pub slack: f64,
    pub k_e: f64,
    pub k_f: f64,
    pub k_s: f64,
    /// Richardson-style estimate of the curvature discretization error's
    /// contribution to the bound at this alpha.
    pub tolerance: f64,
    /// ||F_alpha - S_{alpha+delta}||, the mismatch experiment's left side.
    pub mismatch_measured: f64,
    /// measured + L_S * delta, its right side.
    pub mismatch_bound: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundReport {
    pub rows: Vec<BoundRow>,
    pub eps_minus: f64,
    pub eps_plus: f64,
    pub lipschitz_s: f64,
    pub delta: f64,
}

fn sup_over_interval(curvatures: &[(f64, f64)], lo: f64, hi: f64) -> f64 {
    curvatures
        .iter()
        .filter(|(a, _)| *a >= lo - 1e-12 && *a <= hi + 1e-12)
        .map(|(_, k)| *k)
        .fold(0.0, f64::max)
}

/// The bound arithmetic on precomputed model and truth curves; the curves
/// must share the alpha grid. `delta` is the curvature probe spacing.
pub fn audit_curves(
    model: &CurveSamples,
    truth: &CurveSamples,
    delta: f64,
) -> Result<BoundReport> {
    if model.alphas != truth.alphas {
        return Err(Error::InvalidParam(
            "model and truth curves must share the alpha grid".into(),
        ));
    }
    let n_alpha = model.alphas.len();
    let errors: Vec<Vec<f64>> = (0..n_alpha)
        .map(|i| {
            model.values[i]
                .iter()
                .zip(truth.values[i].iter())
                .map(|(f, s)| f - s)
                .collect()
        })
        .collect();
    let error_curve = CurveSamples {
        alphas: model.alphas.clone(),
        values: errors,
    };

    let idx_minus = model
        .index_of(-1.0)
        .ok_or_else(|| Error::InvalidParam("grid must contain -1".into()))?;
    let idx_plus = model
        .index_of(1.0)
        .ok_or_else(|| Error::InvalidParam("grid must contain +1".into()))?;
    let eps_minus = rms_norm(&error_curve.values[idx_minus]);
    let eps_plus = rms_norm(&error_curve.values[idx_plus]);

    let k_e = empirical_curvature(&error_curve, delta)?;
    let k_f = empirical_curvature(model, delta)?;
    let k_s = empirical_curvature(truth, delta)?;
    // A coarser probe for the discretization-error estimate; absent when the
    // grid has too few points.
    let k_fs_coarse = match (
        empirical_curvature(model, 2.0 * delta),
        empirical_curvature(truth, 2.0 * delta),
    ) {
        (Ok(f), Ok(s)) => Some((f, s)),
        _ => None,
    };

    // Lipschitz estimate of the truth curve from first differences.
    let mut lipschitz_s: f64 = 0.0;
    for i in 0..n_alpha - 1 {
        let d = rms_diff(&truth.values[i + 1], &truth.values[i]);
        let da = truth.alphas[i + 1] - truth.alphas[i];
        lipschitz_s = lipschitz_s.max(d / da);
    }

    let mut rows = Vec::with_capacity(n_alpha);
    for (i, &alpha) in model.alphas.iter().enumerate() {
        let measured = rms_norm(&error_curve.values[i]);
        let lo = (-1.0f64).min(alpha);
        let hi = 1.0f64.max(alpha);
        let kf_sup = sup_over_interval(&k_f, lo, hi);
        let ks_sup = sup_over_interval(&k_s, lo, hi);
        let ke_sup = sup_over_interval(&k_e, lo, hi);
        let bound = continuation_bound(eps_minus, eps_plus, kf_sup + ks_sup, alpha);
        let tolerance = match &k_fs_coarse {
            Some((fc, sc)) => {
                let coarse = sup_over_interval(fc, lo, hi) + sup_over_interval(sc, lo, hi);
                0.5 * (alpha * alpha - 1.0).abs() * ((kf_sup + ks_sup) - coarse).abs()
            }
            None => 0.0,
        };
        // Coordinate-mismatch penalty against the neighboring target.
        let (mismatch_measured, mismatch_bound) = if i + 1 < n_alpha {
            let lhs = rms_diff(&model.values[i], &truth.values[i + 1]);
            let gap = model.alphas[i + 1] - alpha;
            (lhs, measured + lipschitz_s * gap)
        } else {
            (measured, measured)
        };
        rows.push(BoundRow {
            alpha,
            measured,
            bound,
            slack: bound - measured,
            k_e: ke_sup,
            k_f: kf_sup,
            k_s: ks_sup,
            tolerance,
            mismatch_measured,
            mismatch_bound,
        });
    }
    Ok(BoundReport {
        rows,
        eps_minus,
        eps_plus,
        lipschitz_s,
        delta,
    })
}

/// Stack the rollout of one operator over the probe batch into a single
/// value vector.
fn stack_rollout(
    op: &crate::operator::Operator,
    probes: &[crate::grid::GridField],
    frames: usize,
) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for ic in probes {
        let r = op.rollout(ic, frames)?;
        for f in &r.frames {
            out.extend(f.values().iter());
        }
    }
    Ok(out)
}

/// Full bound audit of a trained line against its family's ground truth:
/// model curve from composed rollouts on a frozen probe batch, truth curve
/// from the simulator at lambda(alpha), curvature from second differences
/// with the grid spacing, and the mismatch penalty against shifted targets.
/// The audit stays within the line's clip bounds.
pub fn bound_audit(
    line: &CoordinateLine,
    family: &FamilySpec,
    alpha_grid: &[f64],
    probe_count: usize,
    probe_seed: u64,
) -> Result<BoundReport> {
    if alpha_grid.len() < 3 {
        return Err(Error::InvalidParam("alpha grid too small".into()));
    }
    if alpha_grid
        .iter()
        .any(|a| *a < line.alpha_min - 1e-12 || *a > line.alpha_max + 1e-12)
    {
        return Err(Error::InvalidParam(
            "audit grid must stay within the clip bounds".into(),
        ));
    }
    let delta = alpha_grid[1] - alpha_grid[0];
    let probes: Vec<_> = (0..probe_count as u64)
        .map(|i| sample_initial_condition(family, family.lambda_at(0.0), probe_seed + i))
        .collect::<Result<_>>()?;

    let mut model_vals = Vec::with_capacity(alpha_grid.len());
    let mut truth_vals = Vec::with_capacity(alpha_grid.len());
    for &alpha in alpha_grid {
        let op = line.compose_operator(alpha)?;
        model_vals.push(stack_rollout(&op, &probes, family.frames)?);

        let lambda = family.lambda_at(alpha);
        let mut stacked = Vec::new();
        for ic in &probes {
            let frames = simulate(family, lambda, ic)?;
            for f in &frames[1..] {
                stacked.extend(f.values().iter());
            }
        }
        truth_vals.push(stacked);
    }
    let model = CurveSamples::new(alpha_grid.to_vec(), model_vals)?;
    let truth = CurveSamples::new(alpha_grid.to_vec(), truth_vals)?;
    audit_curves(&model, &truth, delta)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_25() -> Vec<f64> {
        (0..25).map(|i| -1.5 + i as f64 * 0.125).collect()
    }

    #[test]
    fn curvature_of_linear_curve_is_zero() {
        let alphas: Vec<f64> = (0..13).map(|i| -1.5 + 0.25 * i as f64).collect();
        let values: Vec<Vec<f64>> = alphas.iter().map(|a| vec![2.0 * a + 1.0, -a]).collect();
        let curve = CurveSamples::new(alphas, values).unwrap();
        for (_, k) in empirical_curvature(&curve, 0.25).unwrap() {
            assert!(k < 1e-10, "curvature {k}");
        }
    }

    #[test]
    fn curvature_of_quadratic_curve_is_twice_the_coefficient_norm() {
        let alphas: Vec<f64> = (0..13).map(|i| -1.5 + 0.25 * i as f64).collect();
        // F(alpha) = alpha^2 * v with rms ||v|| = 5.
        let v = [3.0, 4.0, 5.0, 6.0];
        let vnorm = rms_norm(&v);
        let values: Vec<Vec<f64>> = alphas
            .iter()
            .map(|a| v.iter().map(|x| a * a * x).collect())
            .collect();
        let curve = CurveSamples::new(alphas, values).unwrap();
        for (_, k) in empirical_curvature(&curve, 0.25).unwrap() {
            assert!((k - 2.0 * vnorm).abs() < 1e-12, "k = {k}");
        }
    }

    #[test]
    fn curvature_error_shrinks_quadratically_in_delta() {
        // Richardson check on a smooth synthetic curve F(alpha) = sin(alpha).
        let alphas: Vec<f64> = (0..41).map(|i| -2.5 + i as f64 * 0.125).collect();
        let values: Vec<Vec<f64>> = alphas.iter().map(|a| vec![a.sin()]).collect();
        let curve = CurveSamples::new(alphas, values).unwrap();
        let k_at = |delta: f64| -> f64 {
            empirical_curvature(&curve, delta)
                .unwrap()
                .iter()
                .find(|(a, _)| a.abs() < 1e-12)
                .unwrap()
                .1
        };
        // True |F''(0)| = 0 at alpha = 0 for sin; use alpha = 0.5 instead.
        let k_at_half = |delta: f64| -> f64 {
            empirical_curvature(&curve, delta)
                .unwrap()
                .iter()
                .find(|(a, _)| (a - 0.5).abs() < 1e-12)
                .unwrap()
                .1
        };
        let truth = 0.5f64.sin();
        let e1 = (k_at_half(0.5) - truth).abs();
        let e2 = (k_at_half(0.25) - truth).abs();
        let e3 = (k_at_half(0.125) - truth).abs();
        assert!(e2 < e1 && e3 < e2);
        let ratio = e1 / e2;
        assert!((ratio - 4.0).abs() < 0.5, "ratio {ratio}");
        let _ = k_at(0.25);
    }

    #[test]
    fn continuation_bound_closed_forms() {
        assert_eq!(continuation_bound(0.3, 0.7, 9.0, 1.0), 0.7);
        let eps = 0.4;
        let v = continuation_bound(eps, eps, 1.0, 0.0);
        assert!((v - (eps + 0.5)).abs() < 1e-15);
        let v = continuation_bound(0.1, 0.2, 0.4, 1.5);
        assert!((v - 0.525).abs() < 1e-15, "got {v}");
    }

    #[test]
    fn bound_is_exact_at_endpoints_and_piecewise_convex_outside() {
        let (em, ep, ke) = (0.11, 0.23, 0.5);
        assert!((continuation_bound(em, ep, ke, -1.0) - em).abs() < 1e-15);
        assert!((continuation_bound(em, ep, ke, 1.0) - ep).abs() < 1e-15);
        // Midpoint convexity on the extrapolation pieces, where the
        // curvature term is alpha^2 - 1.
        for (a, b) in [(1.0, 1.5), (1.1, 2.0), (-1.5, -1.0), (-2.0, -1.2)] {
            let mid = continuation_bound(em, ep, ke, (a + b) / 2.0);
            let avg = 0.5 * (continuation_bound(em, ep, ke, a) + continuation_bound(em, ep, ke, b));
            assert!(mid <= avg + 1e-15);
        }
        // Inside the endpoint interval the curvature term 1 - alpha^2 makes
        // the bound concave; it still dominates the chord through the
        // endpoint values.
        let mid = continuation_bound(em, ep, ke, 0.0);
        assert!(mid >= 0.5 * (em + ep));
    }

    #[test]
    fn quadratic_curve_saturates_the_lemma() {
        let rows = verify_lemma_synthetic(|t| vec![t * t], |_| 2.0, &grid_25()).unwrap();
        for r in rows {
            assert!(
                (r.error - (r.alpha * r.alpha - 1.0).abs()).abs() < 1e-12,
                "alpha {}",
                r.alpha
            );
            assert!(r.slack.abs() < 1e-12);
        }
    }

    #[test]
    fn linear_curve_has_zero_interpolation_error() {
        let rows = verify_lemma_synthetic(|t| vec![3.0 * t - 0.5], |_| 0.0, &grid_25()).unwrap();
        for r in rows {
            assert!(r.error < 1e-14);
        }
    }

    #[test]
    fn sine_curve_satisfies_the_lemma_with_slack() {
        // sup |phi''| = sup |sin| over conv{-1, 1, alpha}, attained at the
        // largest |t| (all |t| <= 1.5 < pi/2).
        let rows = verify_lemma_synthetic(
            |t| vec![t.sin()],
            |alpha| alpha.abs().max(1.0).sin(),
            &grid_25(),
        )
        .unwrap();
        for r in rows {
            assert!(r.slack >= -1e-14, "alpha {}: slack {}", r.alpha, r.slack);
        }
    }

    #[test]
    fn quadratic_branch_is_exact_for_the_signed_component() {
        // U(q) = a + b q + c q^2 has no cubic term: the signed error is zero
        // and the shared error saturates (h^2/2) M2 with M2 = 2c.
        let (a, b, c) = (0.7, -1.3, 0.8);
        let branch = |q: f64| vec![a + b * q + c * q * q];
        let report = finite_difference_orders(
            branch,
            &[a],
            &[b],
            &[0.4, 0.2, 0.1, 0.05],
        )
        .unwrap();
        for row in &report.rows {
            assert!(row.signed_err < 1e-15, "h {}: {}", row.h, row.signed_err);
            let exact = c * row.h * row.h;
            assert!((row.shared_err - exact).abs() < 1e-14);
        }
        // Degenerate signed fit reported as absent.
        assert!(report.signed_slope.is_none());
        assert!((report.shared_slope.unwrap() - 2.0).abs() < 1e-6);
    }

    #[test]
    fn shifted_sine_branch_shows_second_and_third_order() {
        // A pure sine through the origin is odd, which zeroes the shared
        // error identically; the phase-shifted branch has nonvanishing
        // second and third derivatives at q = 0.
        let phase = std::f64::consts::FRAC_PI_4;
        let branch = |q: f64| vec![(q + phase).sin()];
        let report = finite_difference_orders(
            branch,
            &[phase.sin()],
            &[phase.cos()],
            &[0.4, 0.2, 0.1, 0.05],
        )
        .unwrap();
        let s2 = report.shared_slope.unwrap();
        let s3 = report.signed_slope.unwrap();
        assert!((s2 - 2.0).abs() < 0.1, "shared slope {s2}");
        assert!((s3 - 3.0).abs() < 0.1, "signed slope {s3}");
    }

    #[test]
    fn affine_curves_reduce_the_audit_to_endpoint_interpolation() {
        let alphas: Vec<f64> = (0..13).map(|i| -1.5 + 0.25 * i as f64).collect();
        // F and S affine in alpha with different slopes and offsets.
        let f_vals: Vec<Vec<f64>> = alphas.iter().map(|a| vec![1.0 + 0.5 * a, -a]).collect();
        let s_vals: Vec<Vec<f64>> = alphas.iter().map(|a| vec![0.8 + 0.4 * a, -1.1 * a]).collect();
        let model = CurveSamples::new(alphas.clone(), f_vals).unwrap();
        let truth = CurveSamples::new(alphas, s_vals).unwrap();
        let report = audit_curves(&model, &truth, 0.25).unwrap();
        for row in &report.rows {
            // Curvature terms vanish; inside [-1, 1] the bound is the convex
            // interpolation of endpoint errors and must dominate the measured
            // error of the affine difference curve.
            assert!(row.k_f < 1e-10 && row.k_s < 1e-10);
            if row.alpha.abs() <= 1.0 {
                let interp = continuation_bound(report.eps_minus, report.eps_plus, 0.0, row.alpha);
                assert!((row.bound - interp).abs() < 1e-12);
                assert!(row.slack >= -1e-12, "alpha {}: {}", row.alpha, row.slack);
            }
        }
    }

    #[test]
    fn endpoint_rows_match_measured_errors_exactly() {
        let alphas: Vec<f64> = (0..13).map(|i| -1.5 + 0.25 * i as f64).collect();
        let f_vals: Vec<Vec<f64>> = alphas
            .iter()
            .map(|a| vec![a.sin() + 0.3, a * a * 0.2])
            .collect();
        let s_vals: Vec<Vec<f64>> = alphas.iter().map(|a| vec![a.sin(), 0.15 * a]).collect();
        let model = CurveSamples::new(alphas.clone(), f_vals).unwrap();
        let truth = CurveSamples::new(alphas, s_vals).unwrap();
        let report = audit_curves(&model, &truth, 0.25).unwrap();
        let at = |alpha: f64| {
            report
                .rows
                .iter()
                .find(|r| (r.alpha - alpha).abs() < 1e-12)
                .unwrap()
        };
        assert!((at(-1.0).bound - report.eps_minus).abs() < 1e-15);
        assert!((at(1.0).bound - report.eps_plus).abs() < 1e-15);
        assert!((at(-1.0).measured - report.eps_minus).abs() < 1e-15);
        // Mismatch inequality holds with the measured Lipschitz constant.
        for row in &report.rows {
            assert!(row.mismatch_measured <= row.mismatch_bound + 1e-12);
        }
    }
}
