//! A compact Fourier-type neural operator with an additive input skip:
//! lift (1x1 linear) -> L spectral layers (truncated-mode complex multiply +
//! pointwise linear bypass + GELU) -> project (1x1 linear), plus the input
//! itself, so that all-zero learned tensors give the identity step.
//!
//! The backward pass is hand-written (no autodiff); finite differences are
//! the source of truth for its correctness.

mod backward;
mod train;

pub use backward::{loss_and_grad, multi_step_loss_and_grad};
pub use train::{finetune_endpoint, train_anchor, AdamParams, TrainLogRow};

use ndarray::{Array2, Array3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid::{fft2_inplace, GridField};
use crate::weights::{hex_digest, Tensor, WeightSet};

/// Teacher-forcing policy for training: plain one-step supervision or a
/// rollout-aware multi-step loss over short windows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TrainObjective {
    OneStep,
    MultiStep { horizon: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorConfig {
    pub grid_h: usize,
    pub grid_w: usize,
    pub channels: usize,
    pub width: usize,
    pub modes: usize,
    pub layers: usize,
    pub lr: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub objective: TrainObjective,
    /// Cadence of best-checkpoint evaluations during training.
    pub eval_every: usize,
}

impl OperatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width < 1 || self.layers < 1 {
            return Err(Error::InvalidParam("width and layers must be >= 1".into()));
        }
        if self.channels < 1 {
            return Err(Error::InvalidParam("channels must be >= 1".into()));
        }
        let nyquist = self.grid_h.min(self.grid_w) / 2;
        if self.modes < 1 || self.modes > nyquist {
            return Err(Error::InvalidParam(format!(
                "modes must lie in 1..={nyquist} for a {}x{} grid",
                self.grid_h, self.grid_w
            )));
        }
        if self.batch_size < 1 {
            return Err(Error::InvalidParam("batch_size must be >= 1".into()));
        }
        if let TrainObjective::MultiStep { horizon } = self.objective {
            if horizon < 2 {
                return Err(Error::InvalidParam(
                    "multi-step horizon must be >= 2".into(),
                ));
            }
        }
        Ok(())
    }

    /// Stable digest of the configuration, recorded in checkpoint lineage.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(serde_json::to_vec(self).expect("config serializes"));
        hex_digest(hasher)
    }
}

/// Per-channel affine input normalization, fit once on support data and then
/// carried unchanged through every checkpoint of a lineage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl Normalizer {
    pub fn identity(channels: usize) -> Self {
        Self {
            mu: vec![0.0; channels],
            sigma: vec![1.0; channels],
        }
    }

    /// Fit per-channel mean and standard deviation over a set of frames.
    pub fn fit<'a>(frames: impl Iterator<Item = &'a GridField> + Clone, channels: usize) -> Self {
        let mut sum = vec![0.0; channels];
        let mut count = vec![0usize; channels];
        for f in frames.clone() {
            for c in 0..channels {
                for i in 0..f.height() {
                    for j in 0..f.width() {
                        sum[c] += f.values()[[i, j, c]];
                        count[c] += 1;
                    }
                }
            }
        }
        let mu: Vec<f64> = sum
            .iter()
            .zip(&count)
            .map(|(s, n)| if *n > 0 { s / *n as f64 } else { 0.0 })
            .collect();
        let mut ss = vec![0.0; channels];
        for f in frames {
            for c in 0..channels {
                for i in 0..f.height() {
                    for j in 0..f.width() {
                        let d = f.values()[[i, j, c]] - mu[c];
                        ss[c] += d * d;
                    }
                }
            }
        }
        let sigma: Vec<f64> = ss
            .iter()
            .zip(&count)
            .map(|(s, n)| {
                if *n > 0 {
                    (s / *n as f64).sqrt().max(1e-8)
                } else {
                    1.0
                }
            })
            .collect();
        Self { mu, sigma }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

pub(crate) fn gelu(x: f64) -> f64 {
    let q = GELU_C * (x + GELU_A * x * x * x);
    0.5 * x * (1.0 + q.tanh())
}

pub(crate) fn gelu_prime(x: f64) -> f64 {
    let x2 = x * x;
    let q = GELU_C * (x + GELU_A * x * x2);
    let t = q.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x2)
}

fn layer_prefix(l: usize) -> String {
    format!("spec{l:02}")
}

/// Seeded weight initialization matching the operator schema.
pub fn init_weights(cfg: &OperatorConfig) -> Result<WeightSet> {
    use rand::SeedableRng;
    use rand_distr::Distribution;
    cfg.validate()?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed);
    let normal = rand_distr::StandardNormal;
    let mut draw = |scale: f64| -> f64 {
        let v: f64 = normal.sample(&mut rng);
        v * scale
    };
    let (c, w, m, l) = (cfg.channels, cfg.width, cfg.modes, cfg.layers);
    let mut ws = WeightSet::new();

    let lift_scale = 1.0 / (c as f64).sqrt();
    let data: Vec<f64> = (0..c * w).map(|_| draw(lift_scale)).collect();
    ws.insert("lift.weight", Tensor::from_vec(&[c, w], data)?);
    ws.insert("lift.bias", Tensor::zeros(&[w]));

    let spec_scale = 1.0 / (w as f64 * m as f64);
    let bypass_scale = 1.0 / (w as f64).sqrt();
    for li in 0..l {
        let p = layer_prefix(li);
        for part in ["kernel_re", "kernel_im"] {
            let data: Vec<f64> = (0..w * w * m * m).map(|_| draw(spec_scale)).collect();
            ws.insert(
                format!("{p}.{part}"),
                Tensor::from_vec(&[w, w, m, m], data)?,
            );
        }
        let data: Vec<f64> = (0..w * w).map(|_| draw(bypass_scale)).collect();
        ws.insert(format!("{p}.bypass.weight"), Tensor::from_vec(&[w, w], data)?);
        ws.insert(format!("{p}.bypass.bias"), Tensor::zeros(&[w]));
    }

    let project_scale = 0.02 / (w as f64).sqrt();
    let data: Vec<f64> = (0..w * c).map(|_| draw(project_scale)).collect();
    ws.insert("project.weight", Tensor::from_vec(&[w, c], data)?);
    ws.insert("project.bias", Tensor::zeros(&[c]));
    Ok(ws)
}

/// Intermediate state of one forward step, retained for the backward pass.
pub(crate) struct StepCache {
    pub z: Array3<f64>,
    /// Layer inputs h_0..h_L (the last entry is the projection input).
    pub hs: Vec<Array3<f64>>,
    /// Per layer, per hidden channel: FFT of the layer input.
    pub hhats: Vec<Vec<Array2<Complex64>>>,
    /// Pre-activation values per layer.
    pub pres: Vec<Array3<f64>>,
    pub out: Array3<f64>,
}

/// One-step prediction model: configuration, weights, and the lineage-fixed
/// normalizer.
#[derive(Debug, Clone)]
pub struct Operator {
    pub cfg: OperatorConfig,
    pub weights: WeightSet,
    pub norm: Normalizer,
}

impl Operator {
    pub fn new(cfg: OperatorConfig, weights: WeightSet, norm: Normalizer) -> Result<Self> {
        cfg.validate()?;
        let expected = init_weights(&cfg)?;
        if weights.schema() != expected.schema() {
            return Err(Error::SchemaMismatch(format!(
                "weights {} do not match the operator schema {}",
                weights.schema_hash(),
                expected.schema_hash()
            )));
        }
        if norm.mu.len() != cfg.channels || norm.sigma.len() != cfg.channels {
            return Err(Error::ShapeMismatch {
                context: "normalizer".into(),
                expected: format!("{} channels", cfg.channels),
                got: format!("{}", norm.mu.len()),
            });
        }
        Ok(Self { cfg, weights, norm })
    }

    pub fn seeded(cfg: OperatorConfig, norm: Normalizer) -> Result<Self> {
        let weights = init_weights(&cfg)?;
        Self::new(cfg, weights, norm)
    }

    pub fn with_weights(&self, weights: WeightSet) -> Result<Self> {
        Self::new(self.cfg.clone(), weights, self.norm.clone())
    }

    fn check_input(&self, u: &GridField) -> Result<()> {
        if u.height() != self.cfg.grid_h
            || u.width() != self.cfg.grid_w
            || u.channels() != self.cfg.channels
        {
            return Err(Error::ShapeMismatch {
                context: "operator input".into(),
                expected: format!(
                    "{}x{}x{}",
                    self.cfg.grid_h, self.cfg.grid_w, self.cfg.channels
                ),
                got: format!("{}x{}x{}", u.height(), u.width(), u.channels()),
            });
        }
        Ok(())
    }

    /// One-step prediction u_t -> u_{t+1}.
    pub fn forward_step(&self, u: &GridField) -> Result<GridField> {
        self.check_input(u)?;
        let (out, _) = self.forward_impl(u.values(), false)?;
        let (lx, ly) = u.lengths();
        Ok(GridField::raw(out, lx, ly))
    }

    pub(crate) fn forward_cached(&self, u: &Array3<f64>) -> Result<(Array3<f64>, StepCache)> {
        let (out, cache) = self.forward_impl(u, true)?;
        Ok((out, cache.expect("cache requested")))
    }

    fn forward_impl(
        &self,
        u: &Array3<f64>,
        want_cache: bool,
    ) -> Result<(Array3<f64>, Option<StepCache>)> {
        let (h, w, cin) = u.dim();
        let width = self.cfg.width;
        let m = self.cfg.modes;
        let scale = 1.0 / (h * w) as f64;

        let mut z = Array3::zeros((h, w, cin));
        for c in 0..cin {
            let (mu, sg) = (self.norm.mu[c], self.norm.sigma[c]);
            for i in 0..h {
                for j in 0..w {
                    z[[i, j, c]] = (u[[i, j, c]] - mu) / sg;
                }
            }
        }

        let lw = &self.weights.get("lift.weight").unwrap().data;
        let lb = &self.weights.get("lift.bias").unwrap().data;
        let mut hid = Array3::zeros((h, w, width));
        {
            let zs = z.as_slice().unwrap();
            let hsl = hid.as_slice_mut().unwrap();
            for p in 0..h * w {
                let zrow = &zs[p * cin..(p + 1) * cin];
                let hrow = &mut hsl[p * width..(p + 1) * width];
                hrow.copy_from_slice(lb);
                for (c, zc) in zrow.iter().enumerate() {
                    let wrow = &lw[c * width..(c + 1) * width];
                    for (o, wv) in wrow.iter().enumerate() {
                        hrow[o] += zc * wv;
                    }
                }
            }
        }

        let mut hs = Vec::new();
        let mut hhats = Vec::new();
        let mut pres = Vec::new();

        for l in 0..self.cfg.layers {
            let p = layer_prefix(l);
            let kr = &self.weights.get(&format!("{p}.kernel_re")).unwrap().data;
            let kim = &self.weights.get(&format!("{p}.kernel_im")).unwrap().data;
            let pw = &self.weights.get(&format!("{p}.bypass.weight")).unwrap().data;
            let pb = &self.weights.get(&format!("{p}.bypass.bias")).unwrap().data;

            // FFT of every hidden channel.
            let hhat: Vec<Array2<Complex64>> = (0..width)
                .map(|ch| {
                    let mut plane = Array2::from_shape_fn((h, w), |(i, j)| {
                        Complex64::new(hid[[i, j, ch]], 0.0)
                    });
                    fft2_inplace(&mut plane, false);
                    plane
                })
                .collect();

            let mut pre = Array3::zeros((h, w, width));
            // Truncated-mode complex multiply, then inverse transform per
            // output channel.
            let mut plane = Array2::from_elem((h, w), Complex64::new(0.0, 0.0));
            for o in 0..width {
                plane.fill(Complex64::new(0.0, 0.0));
                for i_in in 0..width {
                    let base = (i_in * width + o) * m * m;
                    for ki in 0..m {
                        for kj in 0..m {
                            let idx = base + ki * m + kj;
                            let wgt = Complex64::new(kr[idx], kim[idx]);
                            plane[[ki, kj]] += wgt * hhat[i_in][[ki, kj]];
                        }
                    }
                }
                fft2_inplace(&mut plane, true);
                for i in 0..h {
                    for j in 0..w {
                        pre[[i, j, o]] = plane[[i, j]].re * scale;
                    }
                }
            }

            // Pointwise linear bypass.
            {
                let hsl = hid.as_slice().unwrap();
                let psl = pre.as_slice_mut().unwrap();
                for px in 0..h * w {
                    let hrow = &hsl[px * width..(px + 1) * width];
                    let prow = &mut psl[px * width..(px + 1) * width];
                    for (o, b) in pb.iter().enumerate() {
                        prow[o] += b;
                    }
                    for (i_in, hv) in hrow.iter().enumerate() {
                        let wrow = &pw[i_in * width..(i_in + 1) * width];
                        for (o, wv) in wrow.iter().enumerate() {
                            prow[o] += hv * wv;
                        }
                    }
                }
            }

            let next = pre.mapv(gelu);
            if !next.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite(format!("activation of layer {p}")));
            }
            if want_cache {
                hs.push(hid);
                hhats.push(hhat);
                pres.push(pre);
            }
            hid = next;
        }

        let qw = &self.weights.get("project.weight").unwrap().data;
        let qb = &self.weights.get("project.bias").unwrap().data;
        let mut out = Array3::zeros((h, w, cin));
        {
            let hsl = hid.as_slice().unwrap();
            let osl = out.as_slice_mut().unwrap();
            for px in 0..h * w {
                let hrow = &hsl[px * width..(px + 1) * width];
                for c in 0..cin {
                    let mut y = qb[c];
                    for (o, hv) in hrow.iter().enumerate() {
                        y += hv * qw[o * cin + c];
                    }
                    osl[px * cin + c] = y;
                }
            }
        }
        // Input skip with de-normalized residual.
        for c in 0..cin {
            let sg = self.norm.sigma[c];
            for i in 0..h {
                for j in 0..w {
                    out[[i, j, c]] = u[[i, j, c]] + sg * out[[i, j, c]];
                }
            }
        }

        let cache = if want_cache {
            hs.push(hid);
            Some(StepCache {
                z,
                hs,
                hhats,
                pres,
                out: out.clone(),
            })
        } else {
            None
        };
        Ok((out, cache))
    }

    /// Autoregressive composition of `forward_step`, `t` times.
    pub fn rollout(&self, u0: &GridField, t: usize) -> Result<RolloutResult> {
        self.check_input(u0)?;
        let mut frames = Vec::with_capacity(t);
        let mut step_norms = Vec::with_capacity(t);
        let mut state = u0.clone();
        for k in 0..t {
            state = self.forward_step(&state).map_err(|e| match e {
                Error::NonFinite(msg) => Error::NonFinite(format!("{msg} (rollout step {k})")),
                other => other,
            })?;
            step_norms.push(state.norm());
            frames.push(state.clone());
        }
        Ok(RolloutResult { frames, step_norms })
    }
}

/// Predicted frames u_1..u_T and their per-step norms.
#[derive(Debug, Clone)]
pub struct RolloutResult {
    pub frames: Vec<GridField>,
    pub step_norms: Vec<f64>,
}

/// A one-step state map. The neural operator implements it; test oracles
/// and output-space ensembles supply their own.
pub trait StepMap {
    fn step(&self, u: &GridField) -> Result<GridField>;
}

impl StepMap for Operator {
    fn step(&self, u: &GridField) -> Result<GridField> {
        self.forward_step(u)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn tiny_cfg() -> OperatorConfig {
        OperatorConfig {
            grid_h: 8,
            grid_w: 8,
            channels: 2,
            width: 4,
            modes: 2,
            layers: 2,
            lr: 1e-3,
            steps: 10,
            batch_size: 2,
            seed: 17,
            objective: TrainObjective::OneStep,
            eval_every: 5,
        }
    }

    pub(crate) fn random_input(seed: u64, cfg: &OperatorConfig) -> GridField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        GridField::from_fn(cfg.grid_h, cfg.grid_w, cfg.channels, 1.0, 1.0, |_, _, _| {
            rng.gen_range(-1.0..1.0)
        })
        .unwrap()
    }

    #[test]
    fn zero_weights_give_the_identity_step() {
        let cfg = tiny_cfg();
        let zeros = init_weights(&cfg).unwrap().zeros_like();
        let op = Operator::new(cfg.clone(), zeros, Normalizer::identity(2)).unwrap();
        let u = random_input(1, &cfg);
        let out = op.forward_step(&u).unwrap();
        assert_eq!(out.values(), u.values());
    }

    #[test]
    fn forward_is_deterministic() {
        let cfg = tiny_cfg();
        let op = Operator::seeded(cfg.clone(), Normalizer::identity(2)).unwrap();
        let u = random_input(2, &cfg);
        let a = op.forward_step(&u).unwrap();
        let b = op.forward_step(&u).unwrap();
        assert_eq!(a.values(), b.values());
    }

    #[test]
    fn doubling_the_projection_doubles_the_residual() {
        let cfg = tiny_cfg();
        let op = Operator::seeded(cfg.clone(), Normalizer::identity(2)).unwrap();
        let u = random_input(3, &cfg);
        let base = op.forward_step(&u).unwrap();

        let mut doubled = op.weights.clone();
        for name in ["project.weight", "project.bias"] {
            for v in doubled.get_mut(name).unwrap().data.iter_mut() {
                *v *= 2.0;
            }
        }
        let op2 = op.with_weights(doubled).unwrap();
        let twice = op2.forward_step(&u).unwrap();

        for ((o2, o1), u0) in twice
            .values()
            .iter()
            .zip(base.values().iter())
            .zip(u.values().iter())
        {
            let r1 = o1 - u0;
            let r2 = o2 - u0;
            assert!((r2 - 2.0 * r1).abs() < 1e-12, "r1={r1} r2={r2}");
        }
    }

    #[test]
    fn rollout_composes_forward_steps() {
        let cfg = tiny_cfg();
        let op = Operator::seeded(cfg.clone(), Normalizer::identity(2)).unwrap();
        let u = random_input(4, &cfg);

        let r1 = op.rollout(&u, 1).unwrap();
        let direct = op.forward_step(&u).unwrap();
        assert_eq!(r1.frames[0].values(), direct.values());

        let r3 = op.rollout(&u, 3).unwrap();
        let composed = op
            .forward_step(&op.forward_step(&direct).unwrap())
            .unwrap();
        assert_eq!(r3.frames[2].values(), composed.values());
        assert!(r3.step_norms.iter().all(|n| n.is_finite()));
    }

    #[test]
    fn schema_mismatch_is_rejected() {
        let cfg = tiny_cfg();
        let mut other = cfg.clone();
        other.width = 6;
        let wrong = init_weights(&other).unwrap();
        assert!(Operator::new(cfg, wrong, Normalizer::identity(2)).is_err());
    }

    #[test]
    fn normalizer_fit_centers_support_frames() {
        let cfg = tiny_cfg();
        let frames: Vec<GridField> = (0..4).map(|s| random_input(s, &cfg)).collect();
        let norm = Normalizer::fit(frames.iter(), 2);
        assert_eq!(norm.mu.len(), 2);
        assert!(norm.sigma.iter().all(|s| *s > 0.0));
    }
}
