//! Pseudo-spectral vorticity-form incompressible Navier-Stokes on the
//! periodic square: streamfunction velocity recovery, 2/3-dealiased
//! advection, Crank-Nicolson diffusion, Heun corrector on the nonlinear
//! term, fixed low-wavenumber forcing.

use ndarray::Array2;
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::{dealias_mask, fft2_inplace, freq_index, wavenumbers, GridField};
use crate::sim::TimeStepPolicy;

const BLOWUP: f64 = 1e6;
const CFL_LIMIT: f64 = 0.8;

#[derive(Debug, Clone, Copy)]
pub struct Ns2dParams {
    pub nu: f64,
    pub forcing_amp: f64,
}

struct SpectralSetup {
    kx: Vec<f64>,
    ky: Vec<f64>,
    k2: Array2<f64>,
    mask: Array2<bool>,
    forcing_hat: Array2<Complex64>,
}

fn setup(h: usize, w: usize, lx: f64, ly: f64, forcing_amp: f64) -> Result<SpectralSetup> {
    let kx = wavenumbers(w, lx).to_vec();
    let ky = wavenumbers(h, ly).to_vec();
    let k2 = Array2::from_shape_fn((h, w), |(i, j)| kx[j] * kx[j] + ky[i] * ky[i]);
    let mask = dealias_mask(h, w)?;
    // Fixed smooth forcing on the vorticity: amp * sin(2 pi (x + y) / L).
    let mut forcing = Array2::from_shape_fn((h, w), |(i, j)| {
        let x = j as f64 / w as f64;
        let y = i as f64 / h as f64;
        Complex64::new(
            forcing_amp * (2.0 * std::f64::consts::PI * (x + y)).sin(),
            0.0,
        )
    });
    fft2_inplace(&mut forcing, false);
    Ok(SpectralSetup {
        kx,
        ky,
        k2,
        mask,
        forcing_hat: forcing,
    })
}

/// Nonlinear term N(omega) = -(u . grad omega) + f in spectral space,
/// dealiased. Also returns the max physical speed for the CFL check.
fn nonlinear(
    omega_hat: &Array2<Complex64>,
    s: &SpectralSetup,
) -> (Array2<Complex64>, f64) {
    let (h, w) = omega_hat.dim();
    let scale = 1.0 / (h * w) as f64;

    let mut psi_u = Array2::from_elem((h, w), Complex64::new(0.0, 0.0));
    let mut psi_v = Array2::from_elem((h, w), Complex64::new(0.0, 0.0));
    let mut dx = Array2::from_elem((h, w), Complex64::new(0.0, 0.0));
    let mut dy = Array2::from_elem((h, w), Complex64::new(0.0, 0.0));
    for i in 0..h {
        for j in 0..w {
            let om = omega_hat[[i, j]];
            let ksq = s.k2[[i, j]];
            // Streamfunction from lap(psi) = -omega.
            let psi = if ksq > 0.0 { om / ksq } else { Complex64::new(0.0, 0.0) };
            let kxj = if w % 2 == 0 && j == w / 2 { 0.0 } else { s.kx[j] };
            let kyi = if h % 2 == 0 && i == h / 2 { 0.0 } else { s.ky[i] };
            // u = d psi / dy, v = -d psi / dx.
            psi_u[[i, j]] = Complex64::new(0.0, kyi) * psi;
            psi_v[[i, j]] = -Complex64::new(0.0, kxj) * psi;
            dx[[i, j]] = Complex64::new(0.0, kxj) * om;
            dy[[i, j]] = Complex64::new(0.0, kyi) * om;
        }
    }
    fft2_inplace(&mut psi_u, true);
    fft2_inplace(&mut psi_v, true);
    fft2_inplace(&mut dx, true);
    fft2_inplace(&mut dy, true);

    let mut max_speed: f64 = 0.0;
    let mut adv = Array2::from_elem((h, w), Complex64::new(0.0, 0.0));
    for i in 0..h {
        for j in 0..w {
            let u = psi_u[[i, j]].re * scale;
            let v = psi_v[[i, j]].re * scale;
            max_speed = max_speed.max(u.abs()).max(v.abs());
            let wx = dx[[i, j]].re * scale;
            let wy = dy[[i, j]].re * scale;
            adv[[i, j]] = Complex64::new(-(u * wx + v * wy), 0.0);
        }
    }
    fft2_inplace(&mut adv, false);
    for i in 0..h {
        for j in 0..w {
            if s.mask[[i, j]] {
                adv[[i, j]] += s.forcing_hat[[i, j]];
            } else {
                adv[[i, j]] = Complex64::new(0.0, 0.0);
            }
        }
    }
    (adv, max_speed)
}

pub fn simulate_ns2d(
    params: &Ns2dParams,
    ic: &GridField,
    frames: usize,
    step: &TimeStepPolicy,
) -> Result<Vec<GridField>> {
    if params.nu <= 0.0 {
        return Err(Error::InvalidParam("viscosity must be positive".into()));
    }
    if ic.channels() != 1 {
        return Err(Error::ShapeMismatch {
            context: "ns2d initial condition".into(),
            expected: "1 channel (vorticity)".into(),
            got: format!("{}", ic.channels()),
        });
    }
    if ic.channel_mean(0).abs() > 1e-10 {
        return Err(Error::InvalidParam(
            "vorticity initial condition must have zero mean".into(),
        ));
    }
    let (frame_dt, substeps) = match *step {
        TimeStepPolicy::FixedSubsteps { frame_dt, substeps } => (frame_dt, substeps),
        _ => {
            return Err(Error::InvalidParam(
                "ns2d uses the fixed-substep policy".into(),
            ))
        }
    };
    let dt = frame_dt / substeps as f64;
    let (h, w) = (ic.height(), ic.width());
    let (lx, ly) = ic.lengths();
    let s = setup(h, w, lx, ly, params.forcing_amp)?;
    let (dx_cell, dy_cell) = (lx / w as f64, ly / h as f64);

    let mut omega_hat = Array2::from_shape_fn((h, w), |(i, j)| {
        Complex64::new(ic.values()[[i, j, 0]], 0.0)
    });
    fft2_inplace(&mut omega_hat, false);

    let mut out = Vec::with_capacity(frames + 1);
    out.push(ic.clone());

    let mut global_step = 0usize;
    for _ in 0..frames {
        for _ in 0..substeps {
            global_step += 1;
            let (n0, speed) = nonlinear(&omega_hat, &s);
            let cfl = dt * (speed / dx_cell + speed / dy_cell);
            if cfl > CFL_LIMIT {
                return Err(Error::CflViolation {
                    step: global_step,
                    cfl,
                    limit: CFL_LIMIT,
                });
            }
            // Crank-Nicolson diffusion with a Heun pass on the nonlinear term.
            let predictor = cn_update(&omega_hat, &n0, &n0, params.nu, dt, &s.k2);
            let (n1, _) = nonlinear(&predictor, &s);
            omega_hat = cn_update(&omega_hat, &n0, &n1, params.nu, dt, &s.k2);

            let m = omega_hat.iter().fold(0.0f64, |acc, c| acc.max(c.norm()));
            if !m.is_finite() || m > BLOWUP * (h * w) as f64 {
                return Err(Error::SimulationDiverged {
                    step: global_step,
                    detail: format!("max |omega_hat| = {m:.3e}"),
                });
            }
        }
        out.push(spectral_to_grid(&omega_hat, lx, ly));
    }
    Ok(out)
}

fn cn_update(
    omega_hat: &Array2<Complex64>,
    n_old: &Array2<Complex64>,
    n_new: &Array2<Complex64>,
    nu: f64,
    dt: f64,
    k2: &Array2<f64>,
) -> Array2<Complex64> {
    let (h, w) = omega_hat.dim();
    Array2::from_shape_fn((h, w), |(i, j)| {
        let a = nu * k2[[i, j]] * dt / 2.0;
        ((1.0 - a) * omega_hat[[i, j]] + 0.5 * dt * (n_old[[i, j]] + n_new[[i, j]])) / (1.0 + a)
    })
}

fn spectral_to_grid(omega_hat: &Array2<Complex64>, lx: f64, ly: f64) -> GridField {
    let (h, w) = omega_hat.dim();
    let mut plane = omega_hat.clone();
    fft2_inplace(&mut plane, true);
    let scale = 1.0 / (h * w) as f64;
    let data = ndarray::Array3::from_shape_fn((h, w, 1), |(i, j, _)| plane[[i, j]].re * scale);
    GridField::raw(data, lx, ly)
}

/// Band-limited random vorticity with zero mean: white noise restricted to
/// low nonzero wavenumbers, rescaled to unit standard deviation.
pub fn band_limited_vorticity_ic(
    n: usize,
    lx: f64,
    ly: f64,
    rng: &mut ChaCha8Rng,
) -> Result<GridField> {
    let band = 4i64;
    let mut plane = Array2::from_shape_fn((n, n), |_| {
        Complex64::new(rng.gen_range(-1.0..1.0), 0.0)
    });
    fft2_inplace(&mut plane, false);
    for i in 0..n {
        for j in 0..n {
            let fi = freq_index(i, n).abs();
            let fj = freq_index(j, n).abs();
            let keep = fi.max(fj) >= 1 && fi <= band && fj <= band;
            if !keep {
                plane[[i, j]] = Complex64::new(0.0, 0.0);
            }
        }
    }
    fft2_inplace(&mut plane, true);
    let scale = 1.0 / (n * n) as f64;
    let vals: Vec<f64> = plane.iter().map(|c| c.re * scale).collect();
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64;
    let norm = 1.0 / var.sqrt().max(1e-12);
    let data = ndarray::Array3::from_shape_fn((n, n, 1), |(i, j, _)| {
        (vals[i * n + j] - mean) * norm
    });
    GridField::new(data, lx, ly)
}
