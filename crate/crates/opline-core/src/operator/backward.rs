//! Exact gradients of the mean-squared rollout losses with respect to every
//! weight tensor, by reverse accumulation through the skip, projection,
//! spectral, bypass, and lift stages.

use ndarray::{Array2, Array3};
use num_complex::Complex64;

use super::{gelu_prime, layer_prefix, Operator, StepCache};
use crate::error::{Error, Result};
use crate::grid::{fft2_inplace, GridField};
use crate::weights::WeightSet;

impl Operator {
    /// Reverse pass for one step. `dout` is dL/d(prediction); gradients are
    /// accumulated into `grads`; the return value is dL/d(input), needed when
    /// steps are chained.
    pub(crate) fn backward_step(
        &self,
        cache: &StepCache,
        dout: &Array3<f64>,
        grads: &mut WeightSet,
    ) -> Array3<f64> {
        let (h, w, cin) = dout.dim();
        let width = self.cfg.width;
        let m = self.cfg.modes;
        let hw = (h * w) as f64;

        // Skip: out = u + sigma_c * y.
        let mut dy = Array3::zeros((h, w, cin));
        for c in 0..cin {
            let sg = self.norm.sigma[c];
            for i in 0..h {
                for j in 0..w {
                    dy[[i, j, c]] = sg * dout[[i, j, c]];
                }
            }
        }

        // Projection: y = h_L Qw + Qb.
        let h_last = cache.hs.last().expect("cached layers");
        let qw = &self.weights.get("project.weight").unwrap().data;
        {
            let hsl = h_last.as_slice().unwrap();
            let dysl = dy.as_slice().unwrap();
            {
                let dqb = &mut grads.get_mut("project.bias").unwrap().data;
                for px in 0..h * w {
                    for (c, dv) in dysl[px * cin..(px + 1) * cin].iter().enumerate() {
                        dqb[c] += dv;
                    }
                }
            }
            let dqw = &mut grads.get_mut("project.weight").unwrap().data;
            for px in 0..h * w {
                let hrow = &hsl[px * width..(px + 1) * width];
                let dyrow = &dysl[px * cin..(px + 1) * cin];
                for (c, dv) in dyrow.iter().enumerate() {
                    for (o, hv) in hrow.iter().enumerate() {
                        dqw[o * cin + c] += hv * dv;
                    }
                }
            }
        }
        let mut dh = Array3::zeros((h, w, width));
        {
            let dhsl = dh.as_slice_mut().unwrap();
            let dysl = dy.as_slice().unwrap();
            for px in 0..h * w {
                let dyrow = &dysl[px * cin..(px + 1) * cin];
                let dhrow = &mut dhsl[px * width..(px + 1) * width];
                for (c, dv) in dyrow.iter().enumerate() {
                    for (o, dhv) in dhrow.iter_mut().enumerate() {
                        *dhv += dv * qw[o * cin + c];
                    }
                }
            }
        }

        // Layers, reversed.
        for l in (0..self.cfg.layers).rev() {
            let p = layer_prefix(l);
            let pre = &cache.pres[l];
            let h_in = &cache.hs[l];
            let hhat = &cache.hhats[l];
            let kr = &self.weights.get(&format!("{p}.kernel_re")).unwrap().data;
            let kim = &self.weights.get(&format!("{p}.kernel_im")).unwrap().data;
            let pw = &self.weights.get(&format!("{p}.bypass.weight")).unwrap().data;

            // Through the activation.
            let mut dpre = Array3::zeros((h, w, width));
            for i in 0..h {
                for j in 0..w {
                    for o in 0..width {
                        dpre[[i, j, o]] = dh[[i, j, o]] * gelu_prime(pre[[i, j, o]]);
                    }
                }
            }

            let mut dh_in = Array3::zeros((h, w, width));

            // Bypass gradients and input contribution.
            {
                let hsl = h_in.as_slice().unwrap();
                let dpsl = dpre.as_slice().unwrap();
                let dhsl = dh_in.as_slice_mut().unwrap();
                {
                    let dpb = &mut grads.get_mut(&format!("{p}.bypass.bias")).unwrap().data;
                    for px in 0..h * w {
                        for (o, dv) in dpsl[px * width..(px + 1) * width].iter().enumerate() {
                            dpb[o] += dv;
                        }
                    }
                }
                let dpw = &mut grads
                    .get_mut(&format!("{p}.bypass.weight"))
                    .unwrap()
                    .data;
                for px in 0..h * w {
                    let hrow = &hsl[px * width..(px + 1) * width];
                    let dprow = &dpsl[px * width..(px + 1) * width];
                    let dhrow = &mut dhsl[px * width..(px + 1) * width];
                    for (i_in, hv) in hrow.iter().enumerate() {
                        let wrow = &pw[i_in * width..(i_in + 1) * width];
                        let gwrow = &mut dpw[i_in * width..(i_in + 1) * width];
                        let mut acc = 0.0;
                        for (o, dv) in dprow.iter().enumerate() {
                            gwrow[o] += hv * dv;
                            acc += dv * wrow[o];
                        }
                        dhrow[i_in] += acc;
                    }
                }
            }

            // Spectral adjoint. For S = Re(IFFT2(M)) with the 1/(H*W) inverse
            // convention, the mode gradient is gM = FFT2(dS) / (H*W) on the
            // retained block; weight and input gradients follow the complex
            // product rule with conjugates.
            let mut ghat: Vec<Array2<Complex64>> = (0..width)
                .map(|_| Array2::from_elem((m, m), Complex64::new(0.0, 0.0)))
                .collect();
            {
                let mut dkr_local = vec![0.0; width * width * m * m];
                let mut dki_local = vec![0.0; width * width * m * m];
                let mut plane = Array2::from_elem((h, w), Complex64::new(0.0, 0.0));
                for o in 0..width {
                    for i in 0..h {
                        for j in 0..w {
                            plane[[i, j]] = Complex64::new(dpre[[i, j, o]], 0.0);
                        }
                    }
                    fft2_inplace(&mut plane, false);
                    for i_in in 0..width {
                        let base = (i_in * width + o) * m * m;
                        for ki in 0..m {
                            for kj in 0..m {
                                let g_m = plane[[ki, kj]] / hw;
                                let idx = base + ki * m + kj;
                                let hv = hhat[i_in][[ki, kj]];
                                let gw = g_m * hv.conj();
                                dkr_local[idx] += gw.re;
                                dki_local[idx] += gw.im;
                                let wgt = Complex64::new(kr[idx], kim[idx]);
                                ghat[i_in][[ki, kj]] += g_m * wgt.conj();
                            }
                        }
                    }
                }
                let dkr = &mut grads.get_mut(&format!("{p}.kernel_re")).unwrap().data;
                for (a, b) in dkr.iter_mut().zip(dkr_local.iter()) {
                    *a += b;
                }
                let dki = &mut grads.get_mut(&format!("{p}.kernel_im")).unwrap().data;
                for (a, b) in dki.iter_mut().zip(dki_local.iter()) {
                    *a += b;
                }
            }
            // Input gradient from the spectral path: unnormalized inverse
            // transform of the (zero-padded) mode gradient, real part.
            {
                let mut plane = Array2::from_elem((h, w), Complex64::new(0.0, 0.0));
                for (i_in, g) in ghat.iter().enumerate() {
                    plane.fill(Complex64::new(0.0, 0.0));
                    for ki in 0..m {
                        for kj in 0..m {
                            plane[[ki, kj]] = g[[ki, kj]];
                        }
                    }
                    fft2_inplace(&mut plane, true);
                    for i in 0..h {
                        for j in 0..w {
                            dh_in[[i, j, i_in]] += plane[[i, j]].re;
                        }
                    }
                }
            }

            dh = dh_in;
        }

        // Lift: h0 = z Lw + Lb.
        let lw = &self.weights.get("lift.weight").unwrap().data;
        let mut dz = Array3::zeros((h, w, cin));
        {
            let dlw = &mut grads.get_mut("lift.weight").unwrap().data;
            let zsl = cache.z.as_slice().unwrap();
            let dhsl = dh.as_slice().unwrap();
            let dzsl = dz.as_slice_mut().unwrap();
            for px in 0..h * w {
                let zrow = &zsl[px * cin..(px + 1) * cin];
                let dhrow = &dhsl[px * width..(px + 1) * width];
                let dzrow = &mut dzsl[px * cin..(px + 1) * cin];
                for (c, zv) in zrow.iter().enumerate() {
                    let wrow = &lw[c * width..(c + 1) * width];
                    let gwrow = &mut dlw[c * width..(c + 1) * width];
                    let mut acc = 0.0;
                    for (o, dv) in dhrow.iter().enumerate() {
                        gwrow[o] += zv * dv;
                        acc += dv * wrow[o];
                    }
                    dzrow[c] = acc;
                }
            }
            let dlb = &mut grads.get_mut("lift.bias").unwrap().data;
            for px in 0..h * w {
                let dhrow = &dhsl[px * width..(px + 1) * width];
                for (o, dv) in dhrow.iter().enumerate() {
                    dlb[o] += dv;
                }
            }
        }

        // Input gradient: skip path plus the normalized branch.
        let mut du = dout.clone();
        for c in 0..cin {
            let sg = self.norm.sigma[c];
            for i in 0..h {
                for j in 0..w {
                    du[[i, j, c]] += dz[[i, j, c]] / sg;
                }
            }
        }
        du
    }
}

/// Mean squared one-step error and its exact gradient over a batch of
/// (u_t, u_{t+1}) pairs. The loss averages over batch, grid, and channels.
pub fn loss_and_grad(
    op: &Operator,
    batch: &[(&GridField, &GridField)],
) -> Result<(f64, WeightSet)> {
    if batch.is_empty() {
        return Err(Error::InvalidParam("empty batch".into()));
    }
    let mut grads = op.weights.zeros_like();
    let mut loss = 0.0;
    let n = batch.len();
    for (u, target) in batch {
        if !u.same_shape(target) {
            return Err(Error::ShapeMismatch {
                context: "training pair".into(),
                expected: format!("{:?}", u.values().dim()),
                got: format!("{:?}", target.values().dim()),
            });
        }
        let (out, cache) = op.forward_cached(u.values())?;
        let (h, w, c) = out.dim();
        let denom = (n * h * w * c) as f64;
        let mut dout = Array3::zeros((h, w, c));
        for i in 0..h {
            for j in 0..w {
                for ch in 0..c {
                    let d = out[[i, j, ch]] - target.values()[[i, j, ch]];
                    loss += d * d / denom;
                    dout[[i, j, ch]] = 2.0 * d / denom;
                }
            }
        }
        op.backward_step(&cache, &dout, &mut grads);
    }
    Ok((loss, grads))
}

/// Rollout-aware loss: autoregressive windows of `targets.len()` steps from
/// each start state, with gradients backpropagated through the fed-back
/// predictions.
pub fn multi_step_loss_and_grad(
    op: &Operator,
    windows: &[(&GridField, &[GridField])],
) -> Result<(f64, WeightSet)> {
    if windows.is_empty() {
        return Err(Error::InvalidParam("empty batch".into()));
    }
    let mut grads = op.weights.zeros_like();
    let mut loss = 0.0;
    let n = windows.len();
    for (u0, targets) in windows {
        let horizon = targets.len();
        if horizon == 0 {
            return Err(Error::InvalidParam("empty rollout window".into()));
        }
        let mut caches = Vec::with_capacity(horizon);
        let mut state = u0.values().clone();
        for _ in 0..horizon {
            let (out, cache) = op.forward_cached(&state)?;
            state = out;
            caches.push(cache);
        }
        let (h, w, c) = state.dim();
        let denom = (n * horizon * h * w * c) as f64;
        let mut dnext: Option<Array3<f64>> = None;
        for k in (0..horizon).rev() {
            let out = &caches[k].out;
            let tgt = targets[k].values();
            let mut dout = match dnext.take() {
                Some(d) => d,
                None => Array3::zeros((h, w, c)),
            };
            for i in 0..h {
                for j in 0..w {
                    for ch in 0..c {
                        let d = out[[i, j, ch]] - tgt[[i, j, ch]];
                        loss += d * d / denom;
                        dout[[i, j, ch]] += 2.0 * d / denom;
                    }
                }
            }
            dnext = Some(op.backward_step(&caches[k], &dout, &mut grads));
        }
    }
    Ok((loss, grads))
}
