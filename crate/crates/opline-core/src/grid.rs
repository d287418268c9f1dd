//! Dense 2D periodic grid fields and the spectral primitives used by the
//! solvers and the operator model: forward/inverse DFT, spectral derivatives,
//! and two-thirds dealiasing.
//!
//! Conventions, stated once and tested everywhere: the forward transform is
//! unnormalized, the inverse carries the 1/(H*W) factor, and all arithmetic
//! is in f64.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use ndarray::{Array1, Array2, Array3};
use num_complex::Complex64;
use rustfft::{Fft, FftDirection, FftPlanner};

use crate::error::{Error, Result};

/// Which spatial axis an operation acts on. Fields are indexed `[y, x, channel]`,
/// so `X` is the fast (width) axis and `Y` the slow (height) axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpatialAxis {
    X,
    Y,
}

/// A real-valued field on an H x W periodic grid with C channels.
///
/// Invariants: H and W are powers of two >= 4, and every value is finite.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    data: Array3<f64>,
    lx: f64,
    ly: f64,
}

fn is_pow2_ge4(n: usize) -> bool {
    n >= 4 && n.is_power_of_two()
}

impl GridField {
    pub fn new(data: Array3<f64>, lx: f64, ly: f64) -> Result<Self> {
        let (h, w, _) = data.dim();
        if !is_pow2_ge4(h) || !is_pow2_ge4(w) {
            return Err(Error::BadGrid { h, w });
        }
        if !(lx > 0.0 && ly > 0.0) {
            return Err(Error::InvalidParam("domain lengths must be positive".into()));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("grid field".into()));
        }
        Ok(Self { data, lx, ly })
    }

    pub fn zeros(h: usize, w: usize, channels: usize, lx: f64, ly: f64) -> Result<Self> {
        Self::new(Array3::zeros((h, w, channels)), lx, ly)
    }

    pub fn from_fn(
        h: usize,
        w: usize,
        channels: usize,
        lx: f64,
        ly: f64,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        Self::new(
            Array3::from_shape_fn((h, w, channels), |(i, j, c)| f(i, j, c)),
            lx,
            ly,
        )
    }

    /// Construct without re-validating values. Callers must uphold the
    /// invariants; used on solver-internal paths that check divergence
    /// separately.
    pub(crate) fn raw(data: Array3<f64>, lx: f64, ly: f64) -> Self {
        Self { data, lx, ly }
    }

    pub fn height(&self) -> usize {
        self.data.dim().0
    }

    pub fn width(&self) -> usize {
        self.data.dim().1
    }

    pub fn channels(&self) -> usize {
        self.data.dim().2
    }

    pub fn lengths(&self) -> (f64, f64) {
        (self.lx, self.ly)
    }

    pub fn values(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn same_shape(&self, other: &GridField) -> bool {
        self.data.dim() == other.data.dim()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Frobenius norm over grid and channels.
    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Mean of one channel over the grid.
    pub fn channel_mean(&self, c: usize) -> f64 {
        let (h, w, _) = self.data.dim();
        let mut s = 0.0;
        for i in 0..h {
            for j in 0..w {
                s += self.data[[i, j, c]];
            }
        }
        s / (h * w) as f64
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> GridField {
        GridField::raw(self.data.mapv(|v| f(v)), self.lx, self.ly)
    }

    /// a*self + b*other, elementwise.
    pub fn lin_comb(&self, a: f64, other: &GridField, b: f64) -> Result<GridField> {
        if !self.same_shape(other) {
            return Err(Error::ShapeMismatch {
                context: "lin_comb".into(),
                expected: format!("{:?}", self.data.dim()),
                got: format!("{:?}", other.data.dim()),
            });
        }
        Ok(GridField::raw(&self.data * a + &other.data * b, self.lx, self.ly))
    }
}

/// Complex Fourier coefficients of a grid field, one H x W plane per channel,
/// with physical wavenumber grids along each axis.
#[derive(Debug, Clone)]
pub struct SpectralField {
    pub coeffs: Array3<Complex64>,
    pub kx: Array1<f64>,
    pub ky: Array1<f64>,
    lx: f64,
    ly: f64,
}

impl SpectralField {
    pub fn height(&self) -> usize {
        self.coeffs.dim().0
    }

    pub fn width(&self) -> usize {
        self.coeffs.dim().1
    }

    pub fn channels(&self) -> usize {
        self.coeffs.dim().2
    }

    pub fn lengths(&self) -> (f64, f64) {
        (self.lx, self.ly)
    }
}

/// Signed integer frequency for index `i` of an axis of length `n`,
/// following the usual DFT layout (0, 1, ..., n/2, -n/2+1, ..., -1).
pub fn freq_index(i: usize, n: usize) -> i64 {
    if i <= n / 2 {
        i as i64
    } else {
        i as i64 - n as i64
    }
}

/// Physical wavenumbers 2*pi*freq/length for an axis.
pub fn wavenumbers(n: usize, length: f64) -> Array1<f64> {
    Array1::from_iter((0..n).map(|i| 2.0 * std::f64::consts::PI * freq_index(i, n) as f64 / length))
}

fn plan_cache() -> &'static Mutex<HashMap<(usize, bool), Arc<dyn Fft<f64>>>> {
    static CACHE: OnceLock<Mutex<HashMap<(usize, bool), Arc<dyn Fft<f64>>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    let mut cache = plan_cache().lock().expect("fft plan cache poisoned");
    cache
        .entry((n, inverse))
        .or_insert_with(|| {
            let mut planner = FftPlanner::new();
            let dir = if inverse {
                FftDirection::Inverse
            } else {
                FftDirection::Forward
            };
            planner.plan_fft(n, dir)
        })
        .clone()
}

/// In-place 2D FFT over both axes of a complex plane. Unnormalized in both
/// directions; the caller applies 1/(H*W) on the inverse.
pub(crate) fn fft2_inplace(a: &mut Array2<Complex64>, inverse: bool) {
    let (h, w) = a.dim();
    let row_fft = plan(w, inverse);
    for mut row in a.rows_mut() {
        row_fft.process(row.as_slice_mut().expect("row not contiguous"));
    }
    let col_fft = plan(h, inverse);
    let mut buf = vec![Complex64::new(0.0, 0.0); h];
    for j in 0..w {
        for i in 0..h {
            buf[i] = a[[i, j]];
        }
        col_fft.process(&mut buf);
        for i in 0..h {
            a[[i, j]] = buf[i];
        }
    }
}

/// Forward 2D DFT of every channel. Unnormalized: a constant field c maps to
/// c*H*W in the (0,0) mode.
pub fn dft2(field: &GridField) -> Result<SpectralField> {
    if !field.all_finite() {
        return Err(Error::NonFinite("dft2 input".into()));
    }
    let (h, w, c) = field.values().dim();
    let mut coeffs = Array3::from_elem((h, w, c), Complex64::new(0.0, 0.0));
    for ch in 0..c {
        let mut plane = Array2::from_shape_fn((h, w), |(i, j)| {
            Complex64::new(field.values()[[i, j, ch]], 0.0)
        });
        fft2_inplace(&mut plane, false);
        for i in 0..h {
            for j in 0..w {
                coeffs[[i, j, ch]] = plane[[i, j]];
            }
        }
    }
    let (lx, ly) = field.lengths();
    Ok(SpectralField {
        coeffs,
        kx: wavenumbers(w, lx),
        ky: wavenumbers(h, ly),
        lx,
        ly,
    })
}

/// Inverse 2D DFT (with the 1/(H*W) factor), taking the real part.
pub fn idft2(spec: &SpectralField) -> GridField {
    let (h, w, c) = spec.coeffs.dim();
    let scale = 1.0 / (h * w) as f64;
    let mut data = Array3::zeros((h, w, c));
    for ch in 0..c {
        let mut plane = Array2::from_shape_fn((h, w), |(i, j)| spec.coeffs[[i, j, ch]]);
        fft2_inplace(&mut plane, true);
        for i in 0..h {
            for j in 0..w {
                data[[i, j, ch]] = plane[[i, j]].re * scale;
            }
        }
    }
    GridField::raw(data, spec.lx, spec.ly)
}

/// Spectral derivative along one axis via ik multiplication, Nyquist zeroed.
pub fn spectral_gradient(field: &GridField, axis: SpatialAxis) -> Result<GridField> {
    let mut spec = dft2(field)?;
    let (h, w, c) = spec.coeffs.dim();
    for i in 0..h {
        for j in 0..w {
            let k = match axis {
                SpatialAxis::X => {
                    if w % 2 == 0 && j == w / 2 {
                        0.0
                    } else {
                        spec.kx[j]
                    }
                }
                SpatialAxis::Y => {
                    if h % 2 == 0 && i == h / 2 {
                        0.0
                    } else {
                        spec.ky[i]
                    }
                }
            };
            let ik = Complex64::new(0.0, k);
            for ch in 0..c {
                spec.coeffs[[i, j, ch]] *= ik;
            }
        }
    }
    Ok(idft2(&spec))
}

/// Boolean two-thirds dealiasing mask: keep modes with |freq| <= floor(N/3)
/// on each axis.
pub fn dealias_mask(h: usize, w: usize) -> Result<Array2<bool>> {
    if !is_pow2_ge4(h) || !is_pow2_ge4(w) {
        return Err(Error::BadGrid { h, w });
    }
    let cut_y = (h / 3) as i64;
    let cut_x = (w / 3) as i64;
    Ok(Array2::from_shape_fn((h, w), |(i, j)| {
        freq_index(i, h).abs() <= cut_y && freq_index(j, w).abs() <= cut_x
    }))
}

/// Zero every masked-out coefficient of a spectral field.
pub fn apply_dealias(spec: &mut SpectralField, mask: &Array2<bool>) {
    let (h, w, c) = spec.coeffs.dim();
    for i in 0..h {
        for j in 0..w {
            if !mask[[i, j]] {
                for ch in 0..c {
                    spec.coeffs[[i, j, ch]] = Complex64::new(0.0, 0.0);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random_field(seed: u64, h: usize, w: usize, c: usize) -> GridField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        GridField::from_fn(h, w, c, 1.0, 1.0, |_, _, _| rng.gen_range(-1.0..1.0)).unwrap()
    }

    fn max_rel(a: &GridField, b: &GridField) -> f64 {
        let scale = b.max_abs().max(1e-300);
        a.values()
            .iter()
            .zip(b.values().iter())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
            / scale
    }

    #[test]
    fn constant_field_has_only_zero_mode() {
        let c = 0.7;
        let f = GridField::from_fn(8, 8, 1, 1.0, 1.0, |_, _, _| c).unwrap();
        let spec = dft2(&f).unwrap();
        for i in 0..8 {
            for j in 0..8 {
                let v = spec.coeffs[[i, j, 0]];
                if i == 0 && j == 0 {
                    assert!((v.re - c * 64.0).abs() < 1e-10);
                    assert!(v.im.abs() < 1e-10);
                } else {
                    assert!(v.norm() < 1e-10, "mode ({i},{j}) = {v}");
                }
            }
        }
    }

    #[test]
    fn single_mode_field_has_two_conjugate_modes() {
        let n = 16;
        let f = GridField::from_fn(n, n, 1, 1.0, 1.0, |_, j, _| {
            (2.0 * PI * j as f64 / n as f64).sin()
        })
        .unwrap();
        let spec = dft2(&f).unwrap();
        let mut nonzero = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if spec.coeffs[[i, j, 0]].norm() > 1e-8 {
                    nonzero.push((i, j, spec.coeffs[[i, j, 0]]));
                }
            }
        }
        assert_eq!(nonzero.len(), 2);
        // sin(2 pi x / L) = (e^{ikx} - e^{-ikx}) / 2i: modes at kx = +-1.
        let expected = (n * n) as f64 / 2.0;
        let plus = nonzero.iter().find(|(i, j, _)| *i == 0 && *j == 1).unwrap();
        let minus = nonzero.iter().find(|(i, j, _)| *i == 0 && *j == n - 1).unwrap();
        assert!((plus.2 + Complex64::new(0.0, expected)).norm() < 1e-8);
        assert!((minus.2 - Complex64::new(0.0, expected)).norm() < 1e-8);
        assert!((plus.2 - minus.2.conj()).norm() < 1e-8);
    }

    #[test]
    fn parseval_identity_on_random_field() {
        let f = random_field(7, 32, 32, 2);
        let spec = dft2(&f).unwrap();
        // Direct-summation oracle for both sides.
        let lhs: f64 = f.values().iter().map(|v| v * v).sum();
        let rhs: f64 = spec.coeffs.iter().map(|v| v.norm_sqr()).sum::<f64>() / (32.0 * 32.0);
        assert!((lhs - rhs).abs() / lhs.abs() < 1e-10, "lhs={lhs} rhs={rhs}");
    }

    #[test]
    fn dft2_rejects_non_finite() {
        let mut data = Array3::zeros((4, 4, 1));
        data[[1, 2, 0]] = f64::NAN;
        assert!(GridField::new(data, 1.0, 1.0).is_err());
    }

    #[test]
    fn gradient_of_single_mode_matches_analytic() {
        let n = 64;
        let lx = 1.0;
        let f = GridField::from_fn(n, n, 1, lx, 1.0, |_, j, _| {
            (2.0 * PI * j as f64 / n as f64).sin()
        })
        .unwrap();
        let g = spectral_gradient(&f, SpatialAxis::X).unwrap();
        let expect = GridField::from_fn(n, n, 1, lx, 1.0, |_, j, _| {
            (2.0 * PI / lx) * (2.0 * PI * j as f64 / n as f64).cos()
        })
        .unwrap();
        let err = g
            .values()
            .iter()
            .zip(expect.values().iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-8, "max abs error {err}");
    }

    #[test]
    fn gradient_of_constant_is_zero() {
        let f = GridField::from_fn(8, 8, 1, 1.0, 1.0, |_, _, _| 3.25).unwrap();
        let g = spectral_gradient(&f, SpatialAxis::X).unwrap();
        assert!(g.max_abs() < 1e-12);
    }

    #[test]
    fn y_gradient_of_x_only_field_is_zero() {
        let n = 16;
        let f = GridField::from_fn(n, n, 1, 1.0, 1.0, |_, j, _| {
            (2.0 * PI * j as f64 / n as f64).cos() + 0.3
        })
        .unwrap();
        let g = spectral_gradient(&f, SpatialAxis::Y).unwrap();
        assert!(g.max_abs() < 1e-12);
    }

    #[test]
    fn dealias_mask_keeps_low_modes_on_8x8() {
        let mask = dealias_mask(8, 8).unwrap();
        // Enumerating indices: 2/3 of Nyquist 4 rounds to 2, so freqs {0,+-1,+-2} survive.
        for i in 0..8 {
            for j in 0..8 {
                let keep = freq_index(i, 8).abs() <= 2 && freq_index(j, 8).abs() <= 2;
                assert_eq!(mask[[i, j]], keep, "index ({i},{j})");
            }
        }
    }

    #[test]
    fn dealias_is_idempotent_and_keeps_constants() {
        let f = random_field(3, 8, 8, 1);
        let mask = dealias_mask(8, 8).unwrap();
        let mut s1 = dft2(&f).unwrap();
        apply_dealias(&mut s1, &mask);
        let mut s2 = s1.clone();
        apply_dealias(&mut s2, &mask);
        for (a, b) in s1.coeffs.iter().zip(s2.coeffs.iter()) {
            assert_eq!(a, b);
        }

        let c = GridField::from_fn(8, 8, 1, 1.0, 1.0, |_, _, _| -1.5).unwrap();
        let mut sc = dft2(&c).unwrap();
        apply_dealias(&mut sc, &mask);
        let back = idft2(&sc);
        assert!(max_rel(&back, &c) < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn round_trip_is_identity(seed in 0u64..10_000) {
            let f = random_field(seed, 16, 8, 2);
            let back = idft2(&dft2(&f).unwrap());
            prop_assert!(max_rel(&back, &f) < 1e-12);
        }

        #[test]
        fn gradient_is_linear(seed in 0u64..10_000) {
            let f = random_field(seed, 8, 8, 1);
            let g = random_field(seed.wrapping_add(1), 8, 8, 1);
            let (a, b) = (1.7, -0.4);
            let combo = f.lin_comb(a, &g, b).unwrap();
            let lhs = spectral_gradient(&combo, SpatialAxis::X).unwrap();
            let gf = spectral_gradient(&f, SpatialAxis::X).unwrap();
            let gg = spectral_gradient(&g, SpatialAxis::X).unwrap();
            let rhs = gf.lin_comb(a, &gg, b).unwrap();
            let scale = rhs.max_abs().max(1.0);
            let err = lhs.values().iter().zip(rhs.values().iter())
                .map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            prop_assert!(err / scale < 1e-12);
        }

        #[test]
        fn parseval_holds(seed in 0u64..10_000) {
            let f = random_field(seed, 8, 16, 1);
            let spec = dft2(&f).unwrap();
            let lhs: f64 = f.values().iter().map(|v| v * v).sum();
            let rhs: f64 = spec.coeffs.iter().map(|v| v.norm_sqr()).sum::<f64>() / 128.0;
            prop_assert!((lhs - rhs).abs() / lhs.abs().max(1e-12) < 1e-10);
        }
    }
}
