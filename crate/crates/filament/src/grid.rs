//! Periodic 1-D grid, discrete Fourier transform and the norms built on it.
//!
//! Transform convention: `f̂(ξ) = Σ f(x_j) e^{-iξ x_j} dx` with `x_j = -L + j dx`
//! and `ξ_k = πk/L`. The inverse divides by `2L`, so that
//! `Σ|f_j|² dx = (1/2L) Σ|f̂_k|²`.

use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::{invalid, Error, Result, C64};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    n_points: usize,
    half_length: f64,
}

impl GridSpec {
    pub fn new(n_points: usize, half_length: f64) -> Result<Self> {
        if n_points < 16 || !n_points.is_power_of_two() {
            return invalid(format!("grid size {n_points} must be a power of two >= 16"));
        }
        if !(half_length.is_finite() && half_length > 0.0) {
            return invalid(format!("half length {half_length} must be positive"));
        }
        Ok(Self { n_points, half_length })
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn half_length(&self) -> f64 {
        self.half_length
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_length / self.n_points as f64
    }

    pub fn x(&self, j: usize) -> f64 {
        -self.half_length + j as f64 * self.spacing()
    }

    pub fn xs(&self) -> Vec<f64> {
        (0..self.n_points).map(|j| self.x(j)).collect()
    }

    /// Index of the node at x = 0.
    pub fn origin_index(&self) -> usize {
        self.n_points / 2
    }

    /// Signed wavenumber index of storage slot `slot` (FFT ordering).
    pub fn wavenumber(&self, slot: usize) -> i64 {
        let n = self.n_points as i64;
        let k = slot as i64;
        if k < n / 2 {
            k
        } else {
            k - n
        }
    }

    /// Frequency of storage slot `slot`.
    pub fn xi(&self, slot: usize) -> f64 {
        PI * self.wavenumber(slot) as f64 / self.half_length
    }

    /// Frequencies in storage order.
    pub fn frequencies(&self) -> Vec<f64> {
        (0..self.n_points).map(|s| self.xi(s)).collect()
    }

    pub fn max_frequency(&self) -> f64 {
        PI * (self.n_points / 2) as f64 / self.half_length
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= -self.half_length && x <= self.half_length - self.spacing()
    }
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { n_points: 4096, half_length: 40.0 * PI }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexField {
    pub grid: GridSpec,
    pub values: Vec<C64>,
}

impl ComplexField {
    pub fn new(grid: GridSpec, values: Vec<C64>) -> Result<Self> {
        if values.len() != grid.n_points() {
            return invalid(format!(
                "field has {} samples, grid expects {}",
                values.len(),
                grid.n_points()
            ));
        }
        if values.iter().any(|z| !z.is_finite()) {
            return Err(Error::Numerical("field contains non-finite samples".into()));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: GridSpec) -> Self {
        Self { grid, values: vec![C64::new(0.0, 0.0); grid.n_points()] }
    }

    pub fn from_fn(grid: GridSpec, f: impl Fn(f64) -> C64) -> Self {
        let values = (0..grid.n_points()).map(|j| f(grid.x(j))).collect();
        Self { grid, values }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|z| z.is_finite())
    }

    pub fn sup_distance(&self, other: &ComplexField) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn map(&self, f: impl Fn(f64, C64) -> C64) -> Self {
        let values = self
            .values
            .iter()
            .enumerate()
            .map(|(j, &z)| f(self.grid.x(j), z))
            .collect();
        Self { grid: self.grid, values }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumField {
    pub grid: GridSpec,
    /// Coefficients in FFT storage order; see [`GridSpec::xi`].
    pub modes: Vec<C64>,
}

impl SpectrumField {
    /// Coefficient at signed wavenumber `k ∈ [-n/2, n/2)`.
    pub fn mode(&self, k: i64) -> C64 {
        let n = self.grid.n_points() as i64;
        self.modes[k.rem_euclid(n) as usize]
    }

    pub fn l2_norm(&self) -> f64 {
        let s: f64 = self.modes.iter().map(|z| z.norm_sqr()).sum();
        (s / (2.0 * self.grid.half_length())).sqrt()
    }
}

fn planner() -> &'static Mutex<FftPlanner<f64>> {
    static PLANNER: OnceLock<Mutex<FftPlanner<f64>>> = OnceLock::new();
    PLANNER.get_or_init(|| Mutex::new(FftPlanner::new()))
}

/// Cached forward/inverse plans for one transform size.
#[derive(Clone)]
pub struct FftPair {
    pub forward: Arc<dyn Fft<f64>>,
    pub inverse: Arc<dyn Fft<f64>>,
}

impl FftPair {
    pub fn new(n: usize) -> Self {
        let mut p = planner().lock().expect("fft planner poisoned");
        Self { forward: p.plan_fft_forward(n), inverse: p.plan_fft_inverse(n) }
    }
}

fn sign(slot: usize, grid: &GridSpec) -> f64 {
    if grid.wavenumber(slot).rem_euclid(2) == 0 {
        1.0
    } else {
        -1.0
    }
}

pub fn forward(f: &ComplexField) -> SpectrumField {
    let grid = f.grid;
    let mut buf = f.values.clone();
    FftPair::new(grid.n_points()).forward.process(&mut buf);
    let dx = grid.spacing();
    for (s, z) in buf.iter_mut().enumerate() {
        *z *= dx * sign(s, &grid);
    }
    SpectrumField { grid, modes: buf }
}

pub fn inverse(s: &SpectrumField) -> ComplexField {
    let grid = s.grid;
    let scale = 1.0 / (2.0 * grid.half_length());
    let mut buf: Vec<C64> = s
        .modes
        .iter()
        .enumerate()
        .map(|(k, z)| z * (scale * sign(k, &grid)))
        .collect();
    FftPair::new(grid.n_points()).inverse.process(&mut buf);
    ComplexField { grid, values: buf }
}

/// Applies a Fourier multiplier `m(ξ)` to `f`.
pub fn apply_multiplier(f: &ComplexField, m: impl Fn(f64) -> C64) -> ComplexField {
    let grid = f.grid;
    let n = grid.n_points();
    let plans = FftPair::new(n);
    let mut buf = f.values.clone();
    plans.forward.process(&mut buf);
    let inv_n = 1.0 / n as f64;
    for (s, z) in buf.iter_mut().enumerate() {
        *z *= m(grid.xi(s)) * inv_n;
    }
    plans.inverse.process(&mut buf);
    ComplexField { grid, values: buf }
}

pub fn spectral_derivative(f: &ComplexField, order: u32) -> Result<ComplexField> {
    if order == 0 || order > 4 {
        return invalid(format!("derivative order {order} outside 1..=4"));
    }
    if !f.is_finite() {
        return Err(Error::Numerical("non-finite input to derivative".into()));
    }
    let nyquist = f.grid.max_frequency();
    Ok(apply_multiplier(f, |xi| {
        // The Nyquist mode has no odd-derivative partner; drop it.
        if order % 2 == 1 && (xi + nyquist).abs() < 1e-12 * nyquist {
            C64::new(0.0, 0.0)
        } else {
            C64::new(0.0, xi).powu(order)
        }
    }))
}

/// `e^{i dt ∂²}`: mode ξ is multiplied by `e^{-i dt ξ²}`.
pub fn free_propagate(f: &ComplexField, dt: f64) -> Result<ComplexField> {
    if !dt.is_finite() {
        return invalid("propagation time must be finite");
    }
    if !f.is_finite() {
        return Err(Error::Numerical("non-finite input to propagator".into()));
    }
    if dt == 0.0 {
        return Ok(f.clone());
    }
    Ok(apply_multiplier(f, |xi| C64::from_polar(1.0, -dt * xi * xi)))
}

pub fn l2_norm(f: &ComplexField) -> f64 {
    let s: f64 = f.values.iter().map(|z| z.norm_sqr()).sum();
    (s * f.grid.spacing()).sqrt()
}

pub fn inner_product(f: &ComplexField, g: &ComplexField) -> C64 {
    let s: C64 = f.values.iter().zip(&g.values).map(|(a, b)| a.conj() * b).sum();
    s * f.grid.spacing()
}

/// `t0^{-1/4}‖f‖ + t0^{γ-1/2} sup_{ξ² ≤ 1} |ξ|^{2γ} |f̂(ξ)|` over grid frequencies.
pub fn xgamma_norm(f: &ComplexField, t0: f64, gamma: f64) -> Result<f64> {
    if !(t0 >= 1.0) {
        return invalid(format!("t0 = {t0} must be >= 1"));
    }
    if !(0.0..=0.25).contains(&gamma) {
        return invalid(format!("gamma = {gamma} outside [0, 1/4]"));
    }
    let spec = forward(f);
    let low = spec
        .modes
        .iter()
        .enumerate()
        .filter_map(|(s, z)| {
            let xi = f.grid.xi(s);
            (xi * xi <= 1.0).then(|| weight(xi, gamma) * z.norm())
        })
        .fold(0.0, f64::max);
    Ok(t0.powf(-0.25) * l2_norm(f) + t0.powf(gamma - 0.5) * low)
}

fn weight(xi: f64, gamma: f64) -> f64 {
    if gamma == 0.0 {
        1.0
    } else {
        xi.abs().powf(2.0 * gamma)
    }
}

/// Evaluates the Riemann-sum transform `Σ f_j e^{-iξ x_j} dx` at an arbitrary ξ.
pub fn transform_at(f: &ComplexField, xi: f64) -> C64 {
    let grid = f.grid;
    let dx = grid.spacing();
    let step = C64::from_polar(1.0, -xi * dx);
    let mut phase = C64::from_polar(1.0, xi * grid.half_length());
    let mut acc = C64::new(0.0, 0.0);
    for (j, &v) in f.values.iter().enumerate() {
        if j % 256 == 0 {
            phase = C64::from_polar(1.0, -xi * grid.x(j));
        }
        acc += v * phase;
        phase *= step;
    }
    acc * dx
}

/// Band-limited interpolation: spectral zero padding followed by local
/// Lagrange interpolation on the refined grid.
#[derive(Debug, Clone)]
pub struct Interpolator {
    fine: ComplexField,
}

impl Interpolator {
    pub fn new(f: &ComplexField, oversample: usize) -> Result<Self> {
        if !oversample.is_power_of_two() {
            return invalid("oversampling factor must be a power of two");
        }
        let grid = f.grid;
        let n = grid.n_points();
        let m = n * oversample;
        let fine_grid = GridSpec::new(m, grid.half_length())?;
        let mut buf = f.values.clone();
        FftPair::new(n).forward.process(&mut buf);
        let mut padded = vec![C64::new(0.0, 0.0); m];
        for s in 0..n {
            let k = grid.wavenumber(s);
            let mut z = buf[s];
            if k == -(n as i64) / 2 {
                // split the Nyquist mode symmetrically
                z *= 0.5;
                padded[(n / 2) % m] += z;
            }
            padded[k.rem_euclid(m as i64) as usize] += z;
        }
        FftPair::new(m).inverse.process(&mut padded);
        let inv = 1.0 / n as f64;
        padded.iter_mut().for_each(|z| *z *= inv);
        Ok(Self { fine: ComplexField { grid: fine_grid, values: padded } })
    }

    pub fn fine(&self) -> &ComplexField {
        &self.fine
    }

    /// Periodic evaluation with a 6-point Lagrange stencil.
    pub fn eval(&self, x: f64) -> C64 {
        let g = self.fine.grid;
        let n = g.n_points() as i64;
        let u = (x + g.half_length()) / g.spacing();
        let base = u.floor() as i64;
        let frac = u - base as f64;
        let mut acc = C64::new(0.0, 0.0);
        for m in -2..=3i64 {
            let mut w = 1.0;
            for q in -2..=3i64 {
                if q != m {
                    w *= (frac - q as f64) / (m - q) as f64;
                }
            }
            acc += self.fine.values[(base + m).rem_euclid(n) as usize] * w;
        }
        acc
    }
}
