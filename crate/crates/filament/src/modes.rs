//! Fourier modes of the linearized equation `i w_t + w_xx + (a²/2t)(w + w̄) = 0`.
//!
//! With `X = FT(Re w)(ξ)` and `Y = FT(Im w)(ξ)` each mode obeys
//! `X' = ξ² Y`, `Y' = (−ξ² + a²/t) X`.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ode::{dopri5, Tolerance};
use crate::{invalid, Error, Result, C64};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeState {
    pub xi: f64,
    pub t: f64,
    pub x: C64,
    pub y: C64,
}

impl ModeState {
    pub fn new(xi: f64, t: f64, x: C64, y: C64) -> Self {
        Self { xi, t, x, y }
    }

    /// `ŵ(ξ) = X + iY`.
    pub fn w_plus(&self) -> C64 {
        self.x + C64::i() * self.y
    }

    /// `ŵ(−ξ) = X̄ + iȲ`, since Re w and Im w are real.
    pub fn w_minus(&self) -> C64 {
        self.x.conj() + C64::i() * self.y.conj()
    }

    #[cfg(test)]
    fn pack(&self) -> [f64; 4] {
        [self.x.re, self.x.im, self.y.re, self.y.im]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeTrajectory {
    pub a: f64,
    pub xi: f64,
    pub states: Vec<ModeState>,
}

#[cfg(test)]
fn mode_rhs(a: f64, xi: f64) -> impl Fn(f64, &[f64; 4]) -> [f64; 4] {
    let k2 = xi * xi;
    move |t, y| {
        let c = -k2 + a * a / t;
        [k2 * y[2], k2 * y[3], c * y[0], c * y[1]]
    }
}

pub fn mode_tolerance() -> Tolerance {
    Tolerance { rtol: 1e-10, atol: 1e-13 }
}

/// Integrates one mode from `init.t` through each of `outputs` (ascending, `> init.t`).
pub fn integrate_linear_mode(a: f64, init: ModeState, outputs: &[f64]) -> Result<ModeTrajectory> {
    if !(init.t >= 1.0) {
        return invalid("modes start at t >= 1");
    }
    if outputs.iter().any(|&t| t <= init.t) {
        return invalid("output times must exceed the initial time");
    }
    // The coefficients are real, so a real fundamental matrix propagates any
    // complex initial state; step control is then independent of the data.
    let k2 = init.xi * init.xi;
    let f = move |t: f64, m: &[f64; 4]| {
        let c = -k2 + a * a / t;
        [k2 * m[1], c * m[0], k2 * m[3], c * m[2]]
    };
    let ms = dopri5(f, init.t, [1.0, 0.0, 0.0, 1.0], outputs, mode_tolerance())?;
    let mut states = vec![init];
    states.extend(outputs.iter().zip(&ms).map(|(&t, m)| {
        ModeState::new(init.xi, t, init.x * m[0] + init.y * m[2], init.x * m[1] + init.y * m[3])
    }));
    Ok(ModeTrajectory { a, xi: init.xi, states })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Low,
    Middle,
    High,
}

impl Regime {
    pub fn of(a: f64, xi: f64, t: f64, eps: f64) -> Self {
        let s = xi * xi * t;
        if s <= eps {
            Regime::Low
        } else if s < 2.0 * a * a {
            Regime::Middle
        } else {
            Regime::High
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Regime::Low => "low",
            Regime::Middle => "middle",
            Regime::High => "high",
        }
    }
}

pub fn default_eps(a: f64) -> f64 {
    f64::min(1.0, a * a) / 4.0
}

/// Logarithmic grid with `per_decade` points per decade over `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, per_decade: usize) -> Vec<f64> {
    let decades = (hi / lo).log10();
    let m = (decades * per_decade as f64).round() as usize;
    (0..=m).map(|i| lo * 10f64.powf(i as f64 / per_decade as f64)).collect()
}

pub fn default_xi_grid() -> Vec<f64> {
    log_grid(1e-3, 10.0, 64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeSample {
    pub xi: f64,
    pub t: f64,
    pub abs_x: f64,
    pub abs_y: f64,
    pub ratio: f64,
    pub regime: Regime,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeSummary {
    pub regime: Regime,
    pub samples: usize,
    /// Sup of the envelope ratio over `t ≤ t_half`.
    pub sup_half: f64,
    /// Sup over the whole trajectory.
    pub sup_full: f64,
    pub stable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthReport {
    pub delta: f64,
    pub eps: f64,
    pub t_half: f64,
    pub stability_tolerance: f64,
    pub regimes: Vec<RegimeSummary>,
    pub samples: Vec<EnvelopeSample>,
}

impl GrowthReport {
    pub fn passed(&self) -> bool {
        self.regimes.iter().all(|r| r.sup_full.is_finite() && r.stable)
    }

    pub fn regime(&self, r: Regime) -> Option<&RegimeSummary> {
        self.regimes.iter().find(|s| s.regime == r)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "xi,t,abs_X,abs_Y,envelope_ratio,regime")?;
        for s in &self.samples {
            writeln!(w, "{},{},{},{},{},{}", s.xi, s.t, s.abs_x, s.abs_y, s.ratio, s.regime.name())?;
        }
        Ok(())
    }
}

pub const STABILITY_TOLERANCE: f64 = 0.2;

/// Envelope ratios `|ŵ(t,±ξ)| / ((t/t0)^δ (|ŵ(t0,ξ)| + |ŵ(t0,−ξ)|))`, summarized per regime.
/// Stability compares the sup over `t ≤ t_half` with the sup over the full span.
pub fn mode_growth_fit(trajs: &[ModeTrajectory], delta: f64, eps: f64, t_half: f64) -> Result<GrowthReport> {
    if !(delta > 0.0 && delta <= 0.25) {
        return invalid("delta must lie in (0, 1/4]");
    }
    let mut samples = Vec::new();
    for tr in trajs {
        let first = tr.states.first().ok_or_else(|| Error::InvalidArgument("empty trajectory".into()))?;
        let base = first.w_plus().norm() + first.w_minus().norm();
        if base == 0.0 {
            continue;
        }
        for st in &tr.states {
            let env = (st.t / first.t).powf(delta) * base;
            let ratio = st.w_plus().norm().max(st.w_minus().norm()) / env;
            samples.push(EnvelopeSample {
                xi: tr.xi,
                t: st.t,
                abs_x: st.x.norm(),
                abs_y: st.y.norm(),
                ratio,
                regime: Regime::of(tr.a, tr.xi, st.t, eps),
            });
        }
    }
    let regimes = [Regime::Low, Regime::Middle, Regime::High]
        .into_iter()
        .filter_map(|r| {
            let sel: Vec<&EnvelopeSample> = samples.iter().filter(|s| s.regime == r).collect();
            if sel.is_empty() {
                return None;
            }
            let sup_full = sel.iter().map(|s| s.ratio).fold(0.0, f64::max);
            let sup_half = sel.iter().filter(|s| s.t <= t_half).map(|s| s.ratio).fold(0.0, f64::max);
            let stable = sup_full.is_finite() && sup_half > 0.0 && (sup_full - sup_half) <= STABILITY_TOLERANCE * sup_half;
            Some(RegimeSummary { regime: r, samples: sel.len(), sup_half, sup_full, stable })
        })
        .collect();
    Ok(GrowthReport { delta, eps, t_half, stability_tolerance: STABILITY_TOLERANCE, regimes, samples })
}

/// Sup over the trajectory of `|X_traj − X_ref|` where `X_ref` solves
/// `X'' = ξ²(−ξ² + a²/t) X` directly with matching `X, X'`.
pub fn second_order_residual(tr: &ModeTrajectory) -> Result<f64> {
    let first = tr.states[0];
    let (a, k2) = (tr.a, tr.xi * tr.xi);
    let dx = first.y * k2;
    let y0 = [first.x.re, first.x.im, dx.re, dx.im];
    let f = move |t: f64, y: &[f64; 4]| {
        let c = k2 * (-k2 + a * a / t);
        [y[2], y[3], c * y[0], c * y[1]]
    };
    let times: Vec<f64> = tr.states[1..].iter().map(|s| s.t).collect();
    let ys = dopri5(f, first.t, y0, &times, mode_tolerance())?;
    Ok(tr.states[1..]
        .iter()
        .zip(&ys)
        .map(|(s, y)| (s.x - C64::new(y[0], y[1])).norm())
        .fold(0.0, f64::max))
}

/// `v = J(t) w` per mode: `p̂' = ξ² q̂ − 2a² iξ r̂`, `q̂' = (−ξ² + a²/t) p̂ + 2a² iξ ŝ`
/// where `v = p + iq`, `w = r + is`. The `w` samples act as anchors; each
/// interval is integrated jointly with the `w` mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForcedState {
    pub t: f64,
    pub p: C64,
    pub q: C64,
}

pub fn j_forced_mode(a: f64, w: &ModeTrajectory, v0: (C64, C64)) -> Result<Vec<ForcedState>> {
    if w.states.len() < 2 {
        return invalid("forcing trajectory needs at least two samples");
    }
    let mut gaps: Vec<f64> = w.states.windows(2).map(|p| p[1].t - p[0].t).collect();
    if gaps.iter().any(|&g| !(g > 0.0)) {
        return invalid("forcing samples must be strictly increasing in t");
    }
    let widest = gaps.iter().copied().fold(0.0, f64::max);
    gaps.sort_by(f64::total_cmp);
    let median = gaps[gaps.len() / 2];
    if widest > 2.0 * median * (1.0 + 1e-9) {
        return Err(Error::OutOfCoverage(format!(
            "forcing sample gap {widest} exceeds twice the median spacing {median}"
        )));
    }
    let xi = w.xi;
    let k2 = xi * xi;
    let a2 = a * a;
    let f = move |t: f64, y: &[f64; 8]| {
        let c = -k2 + a2 / t;
        let (r, s) = (C64::new(y[0], y[1]), C64::new(y[2], y[3]));
        let (p, q) = (C64::new(y[4], y[5]), C64::new(y[6], y[7]));
        let ik = C64::new(0.0, 2.0 * a2 * xi);
        let dp = q * k2 - ik * r;
        let dq = p * c + ik * s;
        [k2 * y[2], k2 * y[3], c * y[0], c * y[1], dp.re, dp.im, dq.re, dq.im]
    };
    let mut out = vec![ForcedState { t: w.states[0].t, p: v0.0, q: v0.1 }];
    let (mut p, mut q) = v0;
    for pair in w.states.windows(2) {
        let (w0, w1) = (&pair[0], &pair[1]);
        let y0 = [w0.x.re, w0.x.im, w0.y.re, w0.y.im, p.re, p.im, q.re, q.im];
        let y = dopri5(&f, w0.t, y0, &[w1.t], mode_tolerance())?[0];
        p = C64::new(y[4], y[5]);
        q = C64::new(y[6], y[7]);
        out.push(ForcedState { t: w1.t, p, q });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagonalizedState {
    /// Rescaled time `s = ξ² t`.
    pub s: f64,
    pub alpha: f64,
    pub a2: C64,
    pub b2: C64,
    pub phi: f64,
}

/// `∫_{2a²}^{s} √(1 − a²/σ) dσ` in closed form.
pub fn diagonal_phase(a: f64, s: f64) -> f64 {
    let c = a * a;
    let anti = |x: f64| {
        let r = (x - c).max(0.0);
        (x * r).sqrt() - c * (x.sqrt() + r.sqrt()).ln()
    };
    if c == 0.0 {
        s
    } else {
        anti(s) - anti(2.0 * c)
    }
}

/// In rescaled time `s = ξ²t` the mode system reads `A' = B`, `B' = −α² A`
/// with `A = X`, `B = Y`, `α = √(1 − a²/s)`.
pub fn diagonalized_variables(state: &ModeState, a: f64) -> Result<DiagonalizedState> {
    let s = state.xi * state.xi * state.t;
    if s < 2.0 * a * a || s <= 0.0 {
        return invalid(format!("rescaled time {s} below 2a² = {}", 2.0 * a * a));
    }
    let alpha = (1.0 - a * a / s).sqrt();
    let phi = diagonal_phase(a, s);
    let ib = C64::new(0.0, 0.5 / alpha) * state.y;
    let half = state.x * 0.5;
    Ok(DiagonalizedState {
        s,
        alpha,
        a2: C64::from_polar(1.0, -phi) * (half - ib),
        b2: C64::from_polar(1.0, phi) * (half + ib),
        phi,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ode::rk4;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn free_modes_keep_amplitude() {
        let times: Vec<f64> = (2..=100).map(|t| t as f64).collect();
        let tr = integrate_linear_mode(0.0, ModeState::new(0.7, 1.0, c(1.0, 0.2), c(-0.3, 0.5)), &times).unwrap();
        let m0 = tr.states[0].x.norm_sqr() + tr.states[0].y.norm_sqr();
        for s in &tr.states {
            assert!(((s.x.norm_sqr() + s.y.norm_sqr()).sqrt() - m0.sqrt()).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_frequency_grows_logarithmically() {
        let tr = integrate_linear_mode(1.3, ModeState::new(0.0, 1.0, c(0.4, 0.1), c(0.2, 0.0)), &[7.0, 50.0]).unwrap();
        for s in &tr.states[1..] {
            assert!((s.x - c(0.4, 0.1)).norm() < 1e-12);
            let expect = c(0.2, 0.0) + c(0.4, 0.1) * (1.69 * s.t.ln());
            assert!((s.y - expect).norm() < 1e-9);
        }
    }

    #[test]
    fn matches_fine_fixed_step_reference() {
        let init = ModeState::new(0.1, 1.0, c(1.0, 0.0), c(0.0, 1.0));
        let tr = integrate_linear_mode(1.0, init, &[400.0]).unwrap();
        let y = rk4(mode_rhs(1.0, 0.1), 1.0, 400.0, init.pack(), 39_900_000);
        let end = tr.states[1];
        let err = (end.x - c(y[0], y[1])).norm() + (end.y - c(y[2], y[3])).norm();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn free_ratio_is_bounded_by_one() {
        let times = log_grid(1.0, 100.0, 20)[1..].to_vec();
        let trs: Vec<ModeTrajectory> = [0.05, 0.5, 3.0]
            .iter()
            .map(|&xi| integrate_linear_mode(0.0, ModeState::new(xi, 1.0, c(1.0, 0.0), c(0.0, 0.3)), &times).unwrap())
            .collect();
        let rep = mode_growth_fit(&trs, 0.1, 0.25, 10.0).unwrap();
        assert!(rep.samples.iter().all(|s| s.ratio <= 1.0 + 1e-9));
    }

    #[test]
    fn high_regime_stays_bounded() {
        // ξ²t0 = 4 ≥ 2a²: the modulus oscillates without growth
        let times = log_grid(1.0, 1e3, 200)[1..].to_vec();
        let tr = integrate_linear_mode(1.0, ModeState::new(2.0, 1.0, c(1.0, 0.0), c(0.0, 0.0)), &times).unwrap();
        let mut run_max = 0.0f64;
        let pts: Vec<(f64, f64)> = tr
            .states
            .iter()
            .skip(1)
            .map(|s| {
                run_max = run_max.max(s.w_plus().norm().max(s.w_minus().norm()));
                (s.t, run_max)
            })
            .filter(|p| p.0 >= 10.0)
            .collect();
        let fit = crate::asymptotics::fit_decay_rate(&pts).unwrap();
        assert!(fit.exponent.abs() < 0.02, "{}", fit.exponent);
    }

    #[test]
    fn second_order_form_holds() {
        let times = log_grid(1.0, 100.0, 30)[1..].to_vec();
        for xi in [0.01, 0.2, 1.0] {
            let tr = integrate_linear_mode(1.0, ModeState::new(xi, 1.0, c(1.0, 0.0), c(0.0, 1.0)), &times).unwrap();
            assert!(second_order_residual(&tr).unwrap() < 1e-8);
        }
    }

    #[test]
    fn diagonalization_anchor_and_limit() {
        let st = ModeState::new(1.0, 2.0, c(0.3, 0.0), c(0.0, 0.2));
        let d = diagonalized_variables(&st, 1.0).unwrap();
        assert!((d.alpha - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        assert!(d.phi.abs() < 1e-15);
        let far = ModeState::new(1.0, 1e9, c(0.3, 0.1), c(-0.2, 0.2));
        let d = diagonalized_variables(&far, 1.0).unwrap();
        let lhs = d.a2.norm_sqr() + d.b2.norm_sqr();
        assert!((lhs - 0.5 * (far.x.norm_sqr() + far.y.norm_sqr())).abs() < 1e-9);
        assert!(diagonalized_variables(&ModeState::new(0.1, 10.0, c(1.0, 0.0), c(0.0, 0.0)), 1.0).is_err());
    }

    #[test]
    fn phase_matches_quadrature() {
        let a: f64 = 0.8;
        let s = 7.5;
        let v = crate::quad::integrate(|x| c((1.0 - a * a / x).sqrt(), 0.0), 2.0 * a * a, s, 1e-13);
        assert!((diagonal_phase(a, s) - v.re).abs() < 1e-11);
    }

    #[test]
    fn diagonal_variables_are_slow() {
        // B2 e^{-iΦ}, A2 e^{iΦ} carry the oscillation; A2, B2 drift only at O(1/s)
        let a = 1.0;
        let times = log_grid(50.0, 500.0, 40)[1..].to_vec();
        let tr = integrate_linear_mode(a, ModeState::new(1.0, 50.0, c(1.0, 0.0), c(0.0, 0.5)), &times).unwrap();
        let d0 = diagonalized_variables(&tr.states[0], a).unwrap();
        let d1 = diagonalized_variables(tr.states.last().unwrap(), a).unwrap();
        assert!((d1.a2 - d0.a2).norm() < 0.05 * d0.a2.norm().max(d0.b2.norm()));
    }

    fn fundamental(a: f64, xi: f64, nodes: &[f64]) -> Vec<[[C64; 2]; 2]> {
        let cols: Vec<Vec<[f64; 4]>> = [[1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]]
            .iter()
            .map(|y0| {
                let mut v = vec![*y0];
                v.extend(dopri5(mode_rhs(a, xi), nodes[0], *y0, &nodes[1..], mode_tolerance()).unwrap());
                v
            })
            .collect();
        (0..nodes.len())
            .map(|i| {
                let (u, w) = (cols[0][i], cols[1][i]);
                [[c(u[0], 0.0), c(w[0], 0.0)], [c(u[2], 0.0), c(w[2], 0.0)]]
            })
            .collect()
    }

    #[test]
    fn forced_mode_matches_duhamel_quadrature() {
        let (a, xi, t0, t1) = (1.0, 0.6, 1.0, 6.0);
        let nodes: Vec<f64> = (0..=2000).map(|i| t0 + (t1 - t0) * i as f64 / 2000.0).collect();
        let w = integrate_linear_mode(a, ModeState::new(xi, t0, c(1.0, 0.0), c(0.0, 0.0)), &nodes[1..]).unwrap();
        let forced = j_forced_mode(a, &w, (c(0.0, 0.0), c(0.0, 0.0))).unwrap();
        // v(t1) = Φ(t1) ∫ Φ(τ)^{-1} F(τ) dτ, composite Simpson on the nodes
        let phi = fundamental(a, xi, &nodes);
        let h = (t1 - t0) / 2000.0;
        let mut acc = [c(0.0, 0.0); 2];
        for (i, (m, st)) in phi.iter().zip(&w.states).enumerate() {
            let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
            let inv = [[m[1][1] / det, -m[0][1] / det], [-m[1][0] / det, m[0][0] / det]];
            let ik = c(0.0, 2.0 * a * a * xi);
            let force = [-ik * st.x, ik * st.y];
            let wgt = if i == 0 || i == 2000 { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
            for r in 0..2 {
                acc[r] += (inv[r][0] * force[0] + inv[r][1] * force[1]) * (wgt * h / 3.0);
            }
        }
        let m = phi.last().unwrap();
        let p = m[0][0] * acc[0] + m[0][1] * acc[1];
        let q = m[1][0] * acc[0] + m[1][1] * acc[1];
        let end = forced.last().unwrap();
        assert!((end.p - p).norm() < 1e-8 && (end.q - q).norm() < 1e-8, "{} {}", (end.p - p).norm(), (end.q - q).norm());
    }

    #[test]
    fn forced_mode_free_case_and_gap_refusal() {
        let times: Vec<f64> = (1..=40).map(|i| 1.0 + 0.25 * i as f64).collect();
        let w = integrate_linear_mode(0.0, ModeState::new(0.8, 1.0, c(1.0, 0.0), c(0.0, 0.0)), &times).unwrap();
        let v = j_forced_mode(0.0, &w, (c(0.5, 0.0), c(0.0, 0.1))).unwrap();
        let m0 = (v[0].p.norm_sqr() + v[0].q.norm_sqr()).sqrt();
        assert!(v.iter().all(|s| ((s.p.norm_sqr() + s.q.norm_sqr()).sqrt() - m0).abs() < 1e-9));
        let mut gappy = w.clone();
        gappy.states.remove(10);
        gappy.states.remove(10);
        assert!(j_forced_mode(0.0, &gappy, (c(0.0, 0.0), c(0.0, 0.0))).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn superposition(x1 in -1.0f64..1.0, y1 in -1.0f64..1.0, x2 in -1.0f64..1.0, y2 in -1.0f64..1.0, xi in 0.01f64..2.0) {
            let run = |x: C64, y: C64| integrate_linear_mode(1.0, ModeState::new(xi, 1.0, x, y), &[3.0]).unwrap().states[1];
            let (s1, s2) = (run(c(x1, 0.0), c(y1, 0.0)), run(c(0.0, x2), c(y2, 0.0)));
            let s = run(c(x1, x2), c(y1 + y2, 0.0));
            prop_assert!((s.x - s1.x - s2.x).norm() < 1e-12 && (s.y - s1.y - s2.y).norm() < 1e-12);
        }

        #[test]
        fn diagonal_norm_identity(xr in -1.0f64..1.0, xim in -1.0f64..1.0, yr in -1.0f64..1.0, yim in -1.0f64..1.0, s in 2.0f64..50.0) {
            let st = ModeState::new(1.0, s, c(xr, xim), c(yr, yim));
            let d = diagonalized_variables(&st, 1.0).unwrap();
            let lhs = d.a2.norm_sqr() + d.b2.norm_sqr();
            let rhs = 0.5 * st.x.norm_sqr() + st.y.norm_sqr() / (2.0 * d.alpha * d.alpha);
            prop_assert!((lhs - rhs).abs() < 1e-12);
            prop_assert!(d.alpha >= std::f64::consts::FRAC_1_SQRT_2 - 1e-15 && d.alpha <= 1.0);
        }

        #[test]
        fn gronwall_envelope(xi in 0.02f64..0.3) {
            // d/dt(|X|² + |Y|²) = (2a²/t) Re(X̄Y) ≤ (a²/t)(|X|² + |Y|²)
            let a = 1.0;
            let t0 = 0.25 / (xi * xi);
            let t1 = 2.0 / (xi * xi);
            let times = log_grid(t0.max(1.0), t1, 40)[1..].to_vec();
            let tr = integrate_linear_mode(a, ModeState::new(xi, t0.max(1.0), c(1.0, 0.0), c(0.3, 0.0)), &times).unwrap();
            let e0 = tr.states[0].x.norm_sqr() + tr.states[0].y.norm_sqr();
            for st in &tr.states {
                let e = st.x.norm_sqr() + st.y.norm_sqr();
                let factor = (st.t / tr.states[0].t).powf(a * a);
                prop_assert!(e <= factor * e0 * (1.0 + 1e-8));
            }
        }
    }
}
