//! Renormalized cubic Schrödinger evolution `i v_t + v_xx + (|v|² − a²) v / 2t = 0`
//! and the quantities read off its trajectories.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::asymptotics::{fit_decay_rate, RateFit};
use crate::grid::{self, ComplexField, FftPair, GridSpec, Interpolator};
use crate::{invalid, Error, Result, C64};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum PerturbationFamily {
    GaussianBump,
    ModulatedGaussian { wavenumber: f64 },
    /// Interleaved `(re, im)` samples on the evolution grid.
    Custom { samples: Vec<[f64; 2]> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    #[serde(flatten)]
    pub family: PerturbationFamily,
    pub amplitude: f64,
    pub width: f64,
    pub center: f64,
    #[serde(default)]
    pub phase: f64,
}

impl PerturbationSpec {
    pub fn gaussian(amplitude: f64, width: f64) -> Self {
        Self { family: PerturbationFamily::GaussianBump, amplitude, width, center: 0.0, phase: 0.0 }
    }

    pub fn zero() -> Self {
        Self::gaussian(0.0, 1.0)
    }

    pub fn sample(&self, grid: GridSpec) -> Result<ComplexField> {
        let rot = C64::from_polar(self.amplitude, self.phase);
        let w2 = 2.0 * self.width * self.width;
        let (c, w) = (self.center, self.width);
        let field = match &self.family {
            PerturbationFamily::GaussianBump => {
                ComplexField::from_fn(grid, |x| rot * (-(x - c).powi(2) / w2).exp())
            }
            PerturbationFamily::ModulatedGaussian { wavenumber } => ComplexField::from_fn(grid, |x| {
                rot * (-(x - c).powi(2) / w2).exp() * (wavenumber * (x - c)).cos()
            }),
            PerturbationFamily::Custom { samples } => {
                if samples.len() != grid.n_points() {
                    return invalid("custom perturbation length differs from the grid");
                }
                let v = samples.iter().map(|p| rot * C64::new(p[0], p[1])).collect();
                ComplexField::new(grid, v)?
            }
        };
        if !(w > 0.0) && !matches!(self.family, PerturbationFamily::Custom { .. }) {
            return invalid("perturbation width must be positive");
        }
        let origin = field.values[grid.origin_index()];
        if origin.im.abs() > 1e-12 * field.sup_norm().max(1e-300) {
            return invalid(format!("u1(0) = {origin} is not real"));
        }
        Ok(field)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DtStage {
    /// The stage applies while `t < until`.
    pub until: f64,
    pub dt: f64,
}

fn default_smallness() -> f64 {
    0.1
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolutionConfig {
    pub a: f64,
    pub grid: GridSpec,
    pub t_start: f64,
    pub t_end: f64,
    pub dt: f64,
    pub perturbation: PerturbationSpec,
    /// Optional coarser steps later in time; `dt` applies outside every stage.
    #[serde(default)]
    pub dt_stages: Vec<DtStage>,
    #[serde(default)]
    pub gamma: f64,
    #[serde(default = "default_smallness")]
    pub smallness: f64,
    #[serde(default = "yes")]
    pub nonlinear: bool,
}

impl EvolutionConfig {
    pub fn new(a: f64, grid: GridSpec, t_end: f64, dt: f64, perturbation: PerturbationSpec) -> Self {
        Self {
            a,
            grid,
            t_start: 1.0,
            t_end,
            dt,
            perturbation,
            dt_stages: Vec::new(),
            gamma: 0.0,
            smallness: default_smallness(),
            nonlinear: true,
        }
    }

    fn dt_at(&self, t: f64) -> (f64, f64) {
        for st in &self.dt_stages {
            if t < st.until - 1e-12 {
                return (st.dt, st.until);
            }
        }
        (self.dt, f64::INFINITY)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a.is_finite() && self.a >= 0.0) {
            return invalid("a must be >= 0");
        }
        if !(self.t_start >= 1.0 && self.t_end > self.t_start && self.t_end <= 1e4) {
            return invalid("need 1 <= t_start < t_end <= 1e4");
        }
        if !(self.dt > 0.0) || self.dt_stages.iter().any(|s| !(s.dt > 0.0)) {
            return invalid("time steps must be positive");
        }
        if !(0.0..=0.25).contains(&self.gamma) {
            return invalid("gamma outside [0, 1/4]");
        }
        Ok(())
    }

    /// Initial field `a + u₁`, after checking the perturbation hypotheses.
    pub fn initial_state(&self) -> Result<FieldState> {
        self.validate()?;
        let u1 = self.perturbation.sample(self.grid)?;
        if self.a > 0.0 {
            let size = grid::xgamma_norm(&u1, 1.0, self.gamma)?;
            if size > self.smallness * self.a {
                return invalid(format!(
                    "perturbation norm {size:.4e} exceeds {} * a = {:.4e}",
                    self.smallness,
                    self.smallness * self.a
                ));
            }
        }
        let field = u1.map(|_, z| z + self.a);
        Ok(FieldState { t: self.t_start, field })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldState {
    pub t: f64,
    pub field: ComplexField,
}

impl FieldState {
    /// `u = v − a`.
    pub fn perturbation(&self, a: f64) -> ComplexField {
        self.field.map(|_, z| z - a)
    }

    /// `Q(v) = ∫(|v|² − a²) dx`.
    pub fn charge(&self, a: f64) -> f64 {
        let s: f64 = self.field.values.iter().map(|z| z.norm_sqr() - a * a).sum();
        s * self.field.grid.spacing()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyDiagnostic {
    pub t: f64,
    pub energy: f64,
    pub production: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticRow {
    pub t: f64,
    pub charge: f64,
    pub energy: f64,
    pub production: f64,
    pub j_norm: f64,
}

/// `(τ, v(τ,0), v_X(τ,0))` recorded along the evolution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BasePointSample {
    pub tau: f64,
    pub v: C64,
    pub v_x: C64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct OutputPlan {
    pub times: Vec<f64>,
    /// Diagnostics every `diag_stride` steps; 0 disables.
    pub diag_stride: usize,
    /// Base-point samples every `base_stride` steps and at each output time; 0 disables.
    pub base_stride: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub a: f64,
    pub states: Vec<FieldState>,
    pub diagnostics: Vec<DiagnosticRow>,
    pub base_point: Vec<BasePointSample>,
    pub steps: usize,
}

impl Trajectory {
    /// State recorded at time `t` (within 1e-9 relative).
    pub fn state_at(&self, t: f64) -> Result<&FieldState> {
        self.states
            .iter()
            .find(|s| (s.t - t).abs() <= 1e-9 * t.abs().max(1.0))
            .ok_or_else(|| Error::OutOfCoverage(format!("no state recorded at t = {t}")))
    }
}

/// Strang splitting stepper with reusable buffers.
pub struct Stepper {
    grid: GridSpec,
    a: f64,
    nonlinear: bool,
    plans: FftPair,
    scratch: Vec<C64>,
    spectrum: Vec<C64>,
    xi2: Vec<f64>,
    cached_dt: f64,
    multiplier: Vec<C64>,
}

impl Stepper {
    pub fn new(grid: GridSpec, a: f64, nonlinear: bool) -> Self {
        let n = grid.n_points();
        let plans = FftPair::new(n);
        let len = plans.forward.get_inplace_scratch_len().max(plans.inverse.get_inplace_scratch_len());
        Self {
            grid,
            a,
            nonlinear,
            plans,
            scratch: vec![C64::new(0.0, 0.0); len],
            spectrum: vec![C64::new(0.0, 0.0); n],
            xi2: grid.frequencies().iter().map(|x| x * x).collect(),
            cached_dt: f64::NAN,
            multiplier: vec![C64::new(0.0, 0.0); n],
        }
    }

    fn nonlinear_phase(&self, v: &mut [C64], t0: f64, t1: f64) {
        if !self.nonlinear {
            return;
        }
        let lg = 0.5 * (t1 / t0).ln();
        let a2 = self.a * self.a;
        for z in v.iter_mut() {
            let th = (z.norm_sqr() - a2) * lg;
            // e^{iθ} − 1 without rounding cos θ to 1
            let h = (0.5 * th).sin();
            *z += *z * C64::new(-2.0 * h * h, th.sin());
        }
    }

    fn linear(&mut self, v: &mut [C64], dt: f64) {
        if dt != self.cached_dt {
            let inv_n = 1.0 / self.grid.n_points() as f64;
            for (m, &k2) in self.multiplier.iter_mut().zip(&self.xi2) {
                *m = C64::from_polar(inv_n, -dt * k2);
            }
            self.cached_dt = dt;
        }
        self.plans.forward.process_with_scratch(v, &mut self.scratch);
        for (z, m) in v.iter_mut().zip(&self.multiplier) {
            *z *= m;
        }
        self.plans.inverse.process_with_scratch(v, &mut self.scratch);
    }

    /// Advances `v` from `t` to `t + dt`.
    pub fn step(&mut self, v: &mut [C64], t: f64, dt: f64) {
        let tm = t + 0.5 * dt;
        self.nonlinear_phase(v, t, tm);
        self.linear(v, dt);
        self.nonlinear_phase(v, tm, t + dt);
    }

    fn transform(&mut self, v: &[C64]) {
        self.spectrum.copy_from_slice(v);
        self.plans.forward.process_with_scratch(&mut self.spectrum, &mut self.scratch);
    }

    /// Diagnostics at time `t`; uses the raw FFT of `v` to avoid extra transforms.
    pub fn diagnostics(&mut self, v: &[C64], t: f64) -> DiagnosticRow {
        let g = self.grid;
        let n = g.n_points();
        let dx = g.spacing();
        let a2 = self.a * self.a;
        let mut charge = 0.0;
        let mut pot = 0.0;
        for z in v {
            let d = z.norm_sqr() - a2;
            charge += d;
            pot += d * d;
        }
        charge *= dx;
        pot *= dx;
        self.transform(v);
        let kin: f64 = self.spectrum.iter().zip(&self.xi2).map(|(z, k2)| k2 * z.norm_sqr()).sum::<f64>()
            * dx
            / n as f64;
        let energy = kin - pot / (4.0 * t);
        let production = pot / (4.0 * t * t);
        // ‖x e^{-it∂²} u‖ with u = v − a
        let mut w = self.spectrum.clone();
        w[0] -= self.a * n as f64;
        let inv_n = 1.0 / n as f64;
        for (z, &k2) in w.iter_mut().zip(&self.xi2) {
            *z *= C64::from_polar(inv_n, t * k2);
        }
        self.plans.inverse.process_with_scratch(&mut w, &mut self.scratch);
        let jj: f64 = w.iter().enumerate().map(|(j, z)| (g.x(j) * z.norm()).powi(2)).sum::<f64>() * dx;
        DiagnosticRow { t, charge, energy, production, j_norm: jj.sqrt() }
    }

    pub fn base_point(&mut self, v: &[C64], tau: f64) -> BasePointSample {
        let g = self.grid;
        self.transform(v);
        let mut acc = C64::new(0.0, 0.0);
        for (s, z) in self.spectrum.iter().enumerate() {
            let sgn = if g.wavenumber(s) % 2 == 0 { 1.0 } else { -1.0 };
            acc += z * C64::new(0.0, g.xi(s) * sgn);
        }
        BasePointSample { tau, v: v[g.origin_index()], v_x: acc / g.n_points() as f64 }
    }
}

const CHECK_EVERY: usize = 64;

pub fn evolve(config: &EvolutionConfig, plan: &OutputPlan) -> Result<Trajectory> {
    let start = config.initial_state()?;
    let mut times: Vec<f64> = plan.times.clone();
    times.sort_by(f64::total_cmp);
    if times.iter().any(|&t| t < config.t_start || t > config.t_end * (1.0 + 1e-12)) {
        return invalid("output times must lie in [t_start, t_end]");
    }
    let a = config.a;
    let mut stepper = Stepper::new(config.grid, a, config.nonlinear);
    let mut v = start.field.values.clone();
    let mut t = config.t_start;
    let mut traj = Trajectory { a, states: Vec::new(), diagnostics: Vec::new(), base_point: Vec::new(), steps: 0 };
    let mut next = 0usize;
    while next < times.len() && times[next] <= t {
        traj.states.push(start.clone());
        next += 1;
    }
    if plan.diag_stride > 0 {
        traj.diagnostics.push(stepper.diagnostics(&v, t));
    }
    if plan.base_stride > 0 {
        traj.base_point.push(stepper.base_point(&v, t));
    }
    let mut last_good = FieldState { t, field: start.field.clone() };
    let mut step = 0usize;
    while t < config.t_end {
        let (dt, stage_end) = config.dt_at(t);
        let target = [config.t_end, stage_end, times.get(next).copied().unwrap_or(f64::INFINITY)]
            .into_iter()
            .fold(f64::INFINITY, f64::min);
        let (h, t_new) = if target - t <= dt * (1.0 + 1e-9) { (target - t, target) } else { (dt, t + dt) };
        stepper.step(&mut v, t, h);
        t = t_new;
        step += 1;
        if step % CHECK_EVERY == 0 || t >= config.t_end {
            if v.iter().any(|z| !z.is_finite()) {
                return Err(Error::NonFinite { t, last_good: Some(Box::new(last_good)) });
            }
            last_good = FieldState { t, field: ComplexField { grid: config.grid, values: v.clone() } };
        }
        if plan.diag_stride > 0 && step % plan.diag_stride == 0 {
            traj.diagnostics.push(stepper.diagnostics(&v, t));
        }
        let at_output = times.get(next).is_some_and(|&o| (o - t).abs() <= 1e-12 * t.max(1.0));
        if plan.base_stride > 0 && (step % plan.base_stride == 0 || at_output) {
            traj.base_point.push(stepper.base_point(&v, t));
        }
        while next < times.len() && (times[next] - t).abs() <= 1e-12 * t.max(1.0) {
            if v.iter().any(|z| !z.is_finite()) {
                return Err(Error::NonFinite { t, last_good: Some(Box::new(last_good)) });
            }
            traj.states.push(FieldState { t: times[next], field: ComplexField { grid: config.grid, values: v.clone() } });
            next += 1;
        }
    }
    traj.steps = step;
    Ok(traj)
}

pub fn energy(state: &FieldState, a: f64) -> Result<EnergyDiagnostic> {
    let mut st = Stepper::new(state.field.grid, a, true);
    let d = st.diagnostics(&state.field.values, state.t);
    Ok(EnergyDiagnostic { t: state.t, energy: d.energy, production: d.production })
}

/// Relative residual of `dE/dt = (1/4t²)∫(|v|²−a²)²` by centered differences.
pub fn energy_identity_residual(series: &[EnergyDiagnostic]) -> Result<Vec<(f64, f64)>> {
    if series.len() < 3 {
        return invalid("need at least three consecutive samples");
    }
    Ok(series
        .windows(3)
        .map(|w| {
            let de = (w[2].energy - w[0].energy) / (w[2].t - w[0].t);
            let r = de - w[1].production;
            (w[1].t, r / w[1].energy.abs().max(1e-12))
        })
        .collect())
}

impl From<&DiagnosticRow> for EnergyDiagnostic {
    fn from(d: &DiagnosticRow) -> Self {
        Self { t: d.t, energy: d.energy, production: d.production }
    }
}

/// `ψ(t', x) = e^{ix²/4t'} t'^{-1/2} conj(v)(1/t', x/t')` on the grid scaled by `t' = 1/t`.
pub fn pseudoconformal_map(state: &FieldState) -> Result<(f64, ComplexField)> {
    if !(state.t >= 1.0) {
        return invalid("pseudoconformal map needs t >= 1");
    }
    let tp = 1.0 / state.t;
    let g = state.field.grid;
    let grid = GridSpec::new(g.n_points(), g.half_length() * tp)?;
    let scale = 1.0 / tp.sqrt();
    let values = state
        .field
        .values
        .iter()
        .enumerate()
        .map(|(j, z)| {
            let x = grid.x(j);
            C64::from_polar(scale, x * x / (4.0 * tp)) * z.conj()
        })
        .collect();
    Ok((tp, ComplexField { grid, values }))
}

/// Evaluates ψ at physical time `1/state.t` and arbitrary points by interpolating `v`.
pub struct PsiEvaluator {
    pub t_phys: f64,
    interp: Interpolator,
    half_length: f64,
}

impl PsiEvaluator {
    pub fn new(state: &FieldState, oversample: usize) -> Result<Self> {
        if !(state.t >= 1.0) {
            return invalid("pseudoconformal map needs t >= 1");
        }
        Ok(Self {
            t_phys: 1.0 / state.t,
            interp: Interpolator::new(&state.field, oversample)?,
            half_length: state.field.grid.half_length(),
        })
    }

    /// Largest |x| covered at this physical time.
    pub fn coverage(&self) -> f64 {
        self.half_length * self.t_phys
    }

    pub fn v_at(&self, x_rescaled: f64) -> C64 {
        self.interp.eval(x_rescaled)
    }

    pub fn psi(&self, x: f64) -> Result<C64> {
        let tp = self.t_phys;
        let xr = x / tp;
        if xr.abs() >= self.half_length {
            return Err(Error::OutOfCoverage(format!("x = {x} maps outside the box at t = {tp}")));
        }
        Ok(C64::from_polar(1.0 / tp.sqrt(), x * x / (4.0 * tp)) * self.interp.eval(xr).conj())
    }
}

/// Inverse of [`pseudoconformal_map`]: recovers `v(1/t', ·)` on `target`.
pub fn inverse_pseudoconformal(t_phys: f64, psi: &ComplexField, target: GridSpec) -> Result<FieldState> {
    if !(t_phys > 0.0 && t_phys <= 1.0) {
        return invalid("physical time must lie in (0, 1]");
    }
    let tau = 1.0 / t_phys;
    let src = psi.grid;
    // demodulated field √t' e^{-ix²/4t'} ψ = conj(v)(τ, x τ) is smooth
    let demod = psi.map(|x, z| z * C64::from_polar(t_phys.sqrt(), -x * x / (4.0 * t_phys)));
    let exact = (src.n_points() == target.n_points())
        && ((src.half_length() * tau - target.half_length()).abs() <= 1e-12 * target.half_length());
    let values = if exact {
        demod.values.iter().map(|z| z.conj()).collect()
    } else {
        let it = Interpolator::new(&demod, 4)?;
        target
            .xs()
            .iter()
            .map(|&xx| {
                let x = xx * t_phys;
                if !src.contains(x) {
                    return Err(Error::OutOfCoverage(format!("X = {xx} not covered by the source grid")));
                }
                Ok(it.eval(x).conj())
            })
            .collect::<Result<Vec<_>>>()?
    };
    Ok(FieldState { t: tau, field: ComplexField { grid: target, values } })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScatteringEstimate {
    pub t_probe: f64,
    pub f_plus: ComplexField,
    /// `(t_k, ‖f₊(t_{k+1}) − f₊(t_k)‖)`.
    pub gaps: Vec<(f64, f64)>,
    pub fit: Option<RateFit>,
    pub decreasing: bool,
}

/// `f₊(t) = e^{-i(t−1)∂²} (e^{-i(a²/2) log t} u(t))`.
pub fn scattering_profile(state: &FieldState, a: f64) -> Result<ComplexField> {
    let rot = C64::from_polar(1.0, -0.5 * a * a * state.t.ln());
    let u = state.field.map(|_, z| (z - a) * rot);
    grid::free_propagate(&u, -(state.t - 1.0))
}

pub fn scattering_state(traj: &Trajectory, probe_times: &[f64]) -> Result<ScatteringEstimate> {
    if probe_times.len() < 2 || probe_times[0] < 10.0 || probe_times.windows(2).any(|w| w[1] <= w[0]) {
        return invalid("probe times must be increasing and start at t >= 10");
    }
    let profiles = probe_times
        .iter()
        .map(|&t| scattering_profile(traj.state_at(t)?, traj.a))
        .collect::<Result<Vec<_>>>()?;
    let gaps: Vec<(f64, f64)> = profiles
        .windows(2)
        .zip(probe_times)
        .map(|(w, &t)| (t, l2_distance(&w[1], &w[0])))
        .collect();
    let decreasing = gaps.windows(2).all(|w| w[1].1 <= w[0].1);
    let positive: Vec<(f64, f64)> = gaps.iter().copied().filter(|g| g.1 > 0.0).collect();
    let fit = fit_decay_rate(&positive).ok();
    Ok(ScatteringEstimate {
        t_probe: *probe_times.last().expect("probes"),
        f_plus: profiles.into_iter().last().expect("profiles"),
        gaps,
        fit,
        decreasing,
    })
}

pub fn l2_distance(f: &ComplexField, g: &ComplexField) -> f64 {
    let s: f64 = f.values.iter().zip(&g.values).map(|(p, q)| (p - q).norm_sqr()).sum();
    (s * f.grid.spacing()).sqrt()
}

/// `J(t)u = x u + 2it u_x` evaluated literally on the grid.
pub fn j_apply(u: &ComplexField, t: f64) -> Result<ComplexField> {
    let ux = grid::spectral_derivative(u, 1)?;
    Ok(ComplexField {
        grid: u.grid,
        values: u
            .values
            .iter()
            .zip(&ux.values)
            .enumerate()
            .map(|(j, (z, d))| z * u.grid.x(j) + C64::new(0.0, 2.0 * t) * d)
            .collect(),
    })
}

/// `‖J(t)u‖` via `J(t) = e^{it∂²} x e^{-it∂²}`.
pub fn j_norm_conjugated(u: &ComplexField, t: f64) -> Result<f64> {
    let w = grid::free_propagate(u, -t)?;
    Ok(grid::l2_norm(&w.map(|x, z| z * x)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct JNormSeries {
    pub samples: Vec<(f64, f64)>,
    pub fit: Option<RateFit>,
}

/// J-norm samples from the diagnostics stream, with a growth fit over the
/// last decade (or `window` when given).
pub fn j_norm_series(traj: &Trajectory, window: Option<(f64, f64)>) -> JNormSeries {
    let samples: Vec<(f64, f64)> = traj.diagnostics.iter().map(|d| (d.t, d.j_norm)).collect();
    let t_last = samples.last().map_or(1.0, |s| s.0);
    let (lo, hi) = window.unwrap_or((t_last / 10.0, t_last));
    let sel: Vec<(f64, f64)> = samples.iter().copied().filter(|s| s.0 >= lo && s.0 <= hi).collect();
    let fit = fit_decay_rate(&sel).ok();
    JNormSeries { samples, fit }
}

/// Checkpoint CSV (`t, re0, im0, ...`) plus a JSON manifest next to it.
pub fn write_checkpoints(states: &[FieldState], a: f64, csv: &Path, manifest: &Path) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(csv)?);
    for st in states {
        write!(w, "{}", st.t)?;
        for z in &st.field.values {
            write!(w, ",{},{}", z.re, z.im)?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    let grid = states.first().map(|s| s.field.grid);
    let meta = serde_json::json!({
        "a": a,
        "grid": grid,
        "times": states.iter().map(|s| s.t).collect::<Vec<_>>(),
        "file": csv.file_name().map(|f| f.to_string_lossy().into_owned()),
        "layout": "t, then interleaved re/im samples",
    });
    std::fs::write(manifest, serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

pub fn read_checkpoints(csv: &Path, grid: GridSpec) -> Result<Vec<FieldState>> {
    let r = std::io::BufReader::new(std::fs::File::open(csv)?);
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let nums = line
            .split(',')
            .map(|s| s.trim().parse::<f64>().map_err(|e| Error::Run(format!("bad checkpoint value: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        if nums.len() != 1 + 2 * grid.n_points() {
            return Err(Error::Run("checkpoint row length does not match the grid".into()));
        }
        let values = nums[1..].chunks(2).map(|c| C64::new(c[0], c[1])).collect();
        out.push(FieldState { t: nums[0], field: ComplexField::new(grid, values)? });
    }
    Ok(out)
}

pub fn write_diagnostics(rows: &[DiagnosticRow], path: &Path) -> Result<()> {
    let ediag: Vec<EnergyDiagnostic> = rows.iter().map(EnergyDiagnostic::from).collect();
    let res = energy_identity_residual(&ediag).unwrap_or_default();
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "t,Q,E,residual,j_norm")?;
    for (i, r) in rows.iter().enumerate() {
        let resid = if i >= 1 && i <= res.len() { res[i - 1].1.to_string() } else { String::new() };
        writeln!(w, "{},{},{},{},{}", r.t, r.charge, r.energy, resid, r.j_norm)?;
    }
    Ok(())
}
