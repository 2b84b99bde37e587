//! Parallel frames and curves rebuilt from a filament function ψ.
//!
//! Frames are stored as rows `(T, e1, e2)`. Along x they obey
//! `F_x = [[0, α, β], [−α, 0, 0], [−β, 0, 0]] F` with `ψ = α + iβ`; at a fixed
//! point they move in time with `[[0, −β_x, α_x], [β_x, 0, γ], [−α_x, −γ, 0]]`.

use std::io::Write;
use std::path::Path;

use nalgebra::{Matrix3, Rotation3};
use serde::{Deserialize, Serialize};

use crate::grid::{ComplexField, GridSpec};
use crate::nls::BasePointSample;
use crate::{invalid, CVec3, Error, Result, Vec3, C64};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParallelFramePoint {
    pub tangent: Vec3,
    pub e1: Vec3,
    pub e2: Vec3,
}

impl ParallelFramePoint {
    pub fn identity() -> Self {
        Self { tangent: Vec3::x(), e1: Vec3::y(), e2: Vec3::z() }
    }

    pub fn from_matrix(m: &Matrix3<f64>) -> Self {
        Self { tangent: m.row(0).transpose(), e1: m.row(1).transpose(), e2: m.row(2).transpose() }
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::from_rows(&[self.tangent.transpose(), self.e1.transpose(), self.e2.transpose()])
    }

    /// `N = e1 + i e2`.
    pub fn normal(&self) -> CVec3 {
        self.e1.map(|v| C64::new(v, 0.0)) + self.e2.map(|v| C64::new(0.0, v))
    }

    pub fn orthonormality_defect(&self) -> f64 {
        let m = self.matrix();
        let d = (m * m.transpose() - Matrix3::identity()).abs().max();
        d.max((self.tangent.cross(&self.e1) - self.e2).abs().max())
    }

    /// Applies the rotation `exp(h K(ω))` to the rows, where `K(ω)v = ω × v`.
    fn rotate(&self, omega: Vec3) -> Self {
        let r = Rotation3::new(omega);
        Self::from_matrix(&(r.matrix() * self.matrix()))
    }

    fn distance(&self, o: &Self) -> f64 {
        (self.matrix() - o.matrix()).abs().max()
    }
}

/// Axis of the x-system generator for `ψ = α + iβ`.
fn x_axis(psi: C64) -> Vec3 {
    Vec3::new(0.0, psi.im, -psi.re)
}

/// Axis of the t-system generator for `ψ_x = α_x + iβ_x` and gauge γ.
fn t_axis(psi_x: C64, gamma: f64) -> Vec3 {
    Vec3::new(-gamma, psi_x.re, psi_x.im)
}

pub fn gauge(psi: C64, a: f64, t: f64) -> f64 {
    -0.5 * psi.norm_sqr() + a * a / (2.0 * t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaugeFunction {
    pub t: f64,
    pub samples: Vec<f64>,
}

impl GaugeFunction {
    pub fn new(psi: &ComplexField, a: f64, t: f64) -> Self {
        Self { t, samples: psi.values.iter().map(|&z| gauge(z, a, t)).collect() }
    }
}

/// Cumulative trapezoid integral of `f` on the grid, anchored at the node x = 0.
pub fn cumulative_from_origin(grid: &GridSpec, f: &[f64]) -> Vec<f64> {
    let n = f.len();
    let o = grid.origin_index();
    let h = grid.spacing();
    let mut out = vec![0.0; n];
    for j in o + 1..n {
        out[j] = out[j - 1] + 0.5 * h * (f[j] + f[j - 1]);
    }
    for j in (0..o).rev() {
        out[j] = out[j + 1] - 0.5 * h * (f[j] + f[j + 1]);
    }
    out
}

/// `ψ = c e^{iΘ}`, `Θ(x) = ∫₀ˣ τ`.
pub fn filament_function(grid: GridSpec, c: &[f64], tau: &[f64]) -> Result<ComplexField> {
    if c.len() != grid.n_points() || tau.len() != grid.n_points() {
        return invalid("curvature and torsion samples must match the grid");
    }
    if c.iter().any(|&v| v < 0.0) {
        return invalid("curvature must be non-negative");
    }
    let theta = cumulative_from_origin(&grid, tau);
    ComplexField::new(grid, c.iter().zip(&theta).map(|(&r, &th)| C64::from_polar(r, th)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameField {
    pub t: f64,
    pub grid: GridSpec,
    pub points: Vec<ParallelFramePoint>,
}

fn check_seed(seed: &ParallelFramePoint) -> Result<()> {
    let d = seed.orthonormality_defect();
    if d > 1e-8 {
        return invalid(format!("seed frame is not orthonormal (defect {d:.3e})"));
    }
    Ok(())
}

/// Walks the x-system over the grid of `psi` from node `origin` in both directions,
/// calling `visit(j, frame)` once per node.
fn walk_x(psi: &ComplexField, origin: usize, seed: ParallelFramePoint, mut visit: impl FnMut(usize, &ParallelFramePoint)) {
    let h = psi.grid.spacing();
    let v = &psi.values;
    visit(origin, &seed);
    let mut f = seed;
    for j in origin + 1..v.len() {
        let mid = 0.5 * (v[j - 1] + v[j]);
        f = f.rotate(x_axis(mid) * h);
        visit(j, &f);
    }
    let mut f = seed;
    for j in (0..origin).rev() {
        let mid = 0.5 * (v[j] + v[j + 1]);
        f = f.rotate(x_axis(mid) * (-h));
        visit(j, &f);
    }
}

pub fn transport_frame_x(t: f64, psi: &ComplexField, seed: ParallelFramePoint, origin: usize) -> Result<FrameField> {
    check_seed(&seed)?;
    if origin >= psi.values.len() {
        return invalid("base node outside the grid");
    }
    let mut points = vec![seed; psi.values.len()];
    walk_x(psi, origin, seed, |j, f| points[j] = *f);
    Ok(FrameField { t, grid: psi.grid, points })
}

/// Filament data at the base point, in physical time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaseSample {
    pub t: f64,
    pub psi: C64,
    pub psi_x: C64,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasePointSeries {
    pub x0: f64,
    /// Ascending in t.
    pub samples: Vec<BaseSample>,
}

impl BasePointSeries {
    /// From `v`-space samples at X = 0: `ψ(t,0) = √τ v̄`, `ψ_x(t,0) = τ^{3/2} v̄_X`, `t = 1/τ`.
    pub fn from_evolution(samples: &[BasePointSample], a: f64) -> Self {
        let mut out: Vec<BaseSample> = samples
            .iter()
            .map(|s| {
                let t = 1.0 / s.tau;
                let psi = s.v.conj() * s.tau.sqrt();
                BaseSample { t, psi, psi_x: s.v_x.conj() * s.tau.powf(1.5), gamma: gauge(psi, a, t) }
            })
            .collect();
        out.sort_by(|p, q| p.t.total_cmp(&q.t));
        Self { x0: 0.0, samples: out }
    }

    /// Samples `f(t) = (ψ, ψ_x)` at the given times.
    pub fn from_fn(x0: f64, a: f64, ts: &[f64], f: impl Fn(f64) -> (C64, C64)) -> Self {
        let mut samples: Vec<BaseSample> = ts
            .iter()
            .map(|&t| {
                let (psi, psi_x) = f(t);
                BaseSample { t, psi, psi_x, gamma: gauge(psi, a, t) }
            })
            .collect();
        samples.sort_by(|p, q| p.t.total_cmp(&q.t));
        Self { x0, samples }
    }

    fn check_gaps(&self) -> Result<()> {
        let ok = |vals: Vec<f64>| {
            let mut g: Vec<f64> = vals.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
            let widest = g.iter().copied().fold(0.0, f64::max);
            g.sort_by(f64::total_cmp);
            widest <= 2.0 * g[g.len() / 2] * (1.0 + 1e-6)
        };
        if self.samples.len() < 2 {
            return invalid("base-point series needs at least two samples");
        }
        let ts: Vec<f64> = self.samples.iter().map(|s| s.t).collect();
        let taus: Vec<f64> = ts.iter().map(|t| 1.0 / t).collect();
        if ok(ts) || ok(taus) {
            Ok(())
        } else {
            Err(Error::OutOfCoverage("base-point samples have gaps wider than two steps".into()))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeLeg {
    pub x0: f64,
    pub ts: Vec<f64>,
    pub frames: Vec<ParallelFramePoint>,
    /// `χ(t, x0)`.
    pub positions: Vec<Vec3>,
}

impl TimeLeg {
    /// Frame and position at sample time `t` (within 1e-9 relative).
    pub fn at(&self, t: f64) -> Result<(ParallelFramePoint, Vec3)> {
        let k = self
            .ts
            .iter()
            .position(|&s| (s - t).abs() <= 1e-9 * t.abs().max(1e-300))
            .ok_or_else(|| Error::OutOfCoverage(format!("no base-point sample at t = {t}")))?;
        Ok((self.frames[k], self.positions[k]))
    }
}

/// Transports `seed` (given at sample time `t_seed`) through every sample of the
/// series and integrates `χ_t = T ∧ T_x = α e2 − β e1` at the base point by trapezoids.
pub fn transport_frame_t(series: &BasePointSeries, t_seed: f64, seed: ParallelFramePoint, chi_seed: Vec3) -> Result<TimeLeg> {
    check_seed(&seed)?;
    series.check_gaps()?;
    let s = &series.samples;
    let k0 = s
        .iter()
        .position(|p| (p.t - t_seed).abs() <= 1e-9 * t_seed.abs().max(1e-300))
        .ok_or_else(|| Error::OutOfCoverage(format!("seed time {t_seed} is not a sample time")))?;
    let mut frames = vec![seed; s.len()];
    let mut positions = vec![chi_seed; s.len()];
    let velocity = |p: &BaseSample, f: &ParallelFramePoint| f.e2 * p.psi.re - f.e1 * p.psi.im;
    for k in k0 + 1..s.len() {
        let (p, q) = (&s[k - 1], &s[k]);
        let h = q.t - p.t;
        let omega = (t_axis(p.psi_x, p.gamma) + t_axis(q.psi_x, q.gamma)) * (0.5 * h);
        frames[k] = frames[k - 1].rotate(omega);
        positions[k] = positions[k - 1] + (velocity(p, &frames[k - 1]) + velocity(q, &frames[k])) * (0.5 * h);
    }
    for k in (0..k0).rev() {
        let (p, q) = (&s[k], &s[k + 1]);
        let h = p.t - q.t;
        let omega = (t_axis(p.psi_x, p.gamma) + t_axis(q.psi_x, q.gamma)) * (0.5 * h);
        frames[k] = frames[k + 1].rotate(omega);
        positions[k] = positions[k + 1] + (velocity(p, &frames[k]) + velocity(q, &frames[k + 1])) * (0.5 * h);
    }
    Ok(TimeLeg { x0: series.x0, ts: s.iter().map(|p| p.t).collect(), frames, positions })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSnapshot {
    pub t: f64,
    pub xs: Vec<f64>,
    pub positions: Vec<Vec3>,
    pub frames: Vec<ParallelFramePoint>,
}

impl CurveSnapshot {
    pub fn write_csv(snaps: &[CurveSnapshot], path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "t,x,chi_x,chi_y,chi_z,Tx,Ty,Tz,e1x,e1y,e1z,e2x,e2y,e2z")?;
        for s in snaps {
            for ((x, p), f) in s.xs.iter().zip(&s.positions).zip(&s.frames) {
                write!(w, "{},{}", s.t, x)?;
                for v in [p, &f.tangent, &f.e1, &f.e2] {
                    write!(w, ",{},{},{}", v.x, v.y, v.z)?;
                }
                writeln!(w)?;
            }
        }
        Ok(())
    }

    /// Largest `|χ(x_{k+1}) − χ(x_k)| − |x_{k+1} − x_k|`.
    pub fn speed_excess(&self) -> f64 {
        self.positions
            .windows(2)
            .zip(self.xs.windows(2))
            .map(|(p, x)| (p[1] - p[0]).norm() - (x[1] - x[0]).abs())
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Space leg of the reconstruction: from `(x0 node, frame, χ)` at time `t`, transports
/// the frame along `psi` and integrates `χ_x = T` by trapezoids. Every `stride`-th node
/// with `|x| ≤ x_max` is kept.
pub fn reconstruct_curve(
    t: f64,
    psi: &ComplexField,
    origin: usize,
    seed: ParallelFramePoint,
    chi_seed: Vec3,
    stride: usize,
    x_max: f64,
) -> Result<CurveSnapshot> {
    check_seed(&seed)?;
    let g = psi.grid;
    let h = g.spacing();
    let stride = stride.max(1);
    let mut fwd: Vec<(f64, Vec3, ParallelFramePoint)> = Vec::new();
    let mut bwd: Vec<(f64, Vec3, ParallelFramePoint)> = Vec::new();
    let mut prev_t = seed.tangent;
    let mut chi = chi_seed;
    let mut last = origin;
    walk_x(psi, origin, seed, |j, f| {
        if j == origin {
            prev_t = f.tangent;
            chi = chi_seed;
            last = j;
        } else {
            if j < origin && last >= origin {
                prev_t = seed.tangent;
                chi = chi_seed;
            }
            let sign = if j > origin { 1.0 } else { -1.0 };
            chi += (prev_t + f.tangent) * (0.5 * h * sign);
            prev_t = f.tangent;
            last = j;
        }
        let x = g.x(j);
        if (j as i64 - origin as i64).unsigned_abs() as usize % stride == 0 && x.abs() <= x_max {
            if j >= origin {
                fwd.push((x, chi, *f));
            } else {
                bwd.push((x, chi, *f));
            }
        }
    });
    bwd.reverse();
    bwd.extend(fwd);
    Ok(CurveSnapshot {
        t,
        xs: bwd.iter().map(|p| p.0).collect(),
        positions: bwd.iter().map(|p| p.1).collect(),
        frames: bwd.iter().map(|p| p.2).collect(),
    })
}

/// Fourth-order Magnus step for the x-system over `[x, x + h]`.
fn magnus_x(f: &ParallelFramePoint, psi: &impl Fn(f64) -> Result<C64>, x: f64, h: f64) -> Result<ParallelFramePoint> {
    let d = 3f64.sqrt() / 6.0;
    let w1 = x_axis(psi(x + (0.5 - d) * h)?);
    let w2 = x_axis(psi(x + (0.5 + d) * h)?);
    let axis = (w1 + w2) * (0.5 * h) - w1.cross(&w2) * (3f64.sqrt() / 12.0 * h * h);
    Ok(f.rotate(axis))
}

/// Transports `seed` from `x0` along a pointwise filament function and records the
/// frame and position at each of `targets`. Steps never exceed `h_of_x(x)`.
pub fn transport_along(
    t: f64,
    psi: impl Fn(f64) -> Result<C64>,
    x0: f64,
    seed: ParallelFramePoint,
    chi_seed: Vec3,
    targets: &[f64],
    h_of_x: impl Fn(f64) -> f64,
) -> Result<CurveSnapshot> {
    check_seed(&seed)?;
    if targets.windows(2).any(|w| w[1] <= w[0]) {
        return invalid("targets must be strictly ascending");
    }
    let mut out = vec![(seed, chi_seed); targets.len()];
    let split = targets.partition_point(|&x| x < x0);
    for (range, dir) in [((split..targets.len()).collect::<Vec<_>>(), 1.0), ((0..split).rev().collect(), -1.0)] {
        let (mut x, mut f, mut chi) = (x0, seed, chi_seed);
        for k in range {
            let goal = targets[k];
            while (goal - x) * dir > 0.0 {
                let hmax = h_of_x(x).abs();
                if !(hmax > 0.0) {
                    return invalid("step length must be positive");
                }
                let h = dir * hmax.min((goal - x).abs());
                let nf = magnus_x(&f, &psi, x, h)?;
                // trapezoid with endpoint-slope correction, T_x = Re(ψ̄ N)
                let slope = |fr: &ParallelFramePoint, z: C64| fr.e1 * z.re + fr.e2 * z.im;
                let (d0, d1) = (slope(&f, psi(x)?), slope(&nf, psi(x + h)?));
                chi += (f.tangent + nf.tangent) * (0.5 * h) + (d0 - d1) * (h * h / 12.0);
                f = nf;
                x = if (goal - x - h).abs() <= 1e-14 * goal.abs().max(1.0) { goal } else { x + h };
            }
            out[k] = (f, chi);
        }
    }
    Ok(CurveSnapshot {
        t,
        xs: targets.to_vec(),
        positions: out.iter().map(|p| p.1).collect(),
        frames: out.iter().map(|p| p.0).collect(),
    })
}

/// Rigid motion `(R, c)` minimizing `Σ |R p_i + c − q_i|²`.
pub fn kabsch(p: &[Vec3], q: &[Vec3]) -> (Matrix3<f64>, Vec3) {
    let n = p.len().max(1) as f64;
    let cp = p.iter().sum::<Vec3>() / n;
    let cq = q.iter().sum::<Vec3>() / n;
    let mut h = Matrix3::zeros();
    for (a, b) in p.iter().zip(q) {
        h += (a - cp) * (b - cq).transpose();
    }
    let svd = h.svd(true, true);
    let (u, vt) = (svd.u.expect("u"), svd.v_t.expect("v_t"));
    let mut d = Matrix3::identity();
    if (vt.transpose() * u.transpose()).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let r = vt.transpose() * d * u.transpose();
    (r, cq - r * cp)
}

/// Sup distance after the best rigid alignment of `p` onto `q`.
pub fn aligned_distance(p: &[Vec3], q: &[Vec3]) -> f64 {
    let (r, c) = kabsch(p, q);
    p.iter().zip(q).map(|(a, b)| (r * a + c - b).norm()).fold(0.0, f64::max)
}

/// Rotation-only alignment for direction fields (tangents).
pub fn aligned_direction_distance(p: &[Vec3], q: &[Vec3]) -> f64 {
    let mut h = Matrix3::zeros();
    for (a, b) in p.iter().zip(q) {
        h += a * b.transpose();
    }
    let svd = h.svd(true, true);
    let (u, vt) = (svd.u.expect("u"), svd.v_t.expect("v_t"));
    let mut d = Matrix3::identity();
    if (vt.transpose() * u.transpose()).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let r = vt.transpose() * d * u.transpose();
    p.iter().zip(q).map(|(a, b)| (r * a - b).norm()).fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrenetPoint {
    pub tangent: Vec3,
    pub n: Vec3,
    pub b: Vec3,
}

/// `N = (n + ib) e^{iΘ}` with `Θ = ∫₀ˣ τ`.
pub fn frenet_to_parallel(grid: &GridSpec, frenet: &[FrenetPoint], tau: &[f64]) -> Result<Vec<ParallelFramePoint>> {
    if frenet.len() != grid.n_points() || tau.len() != grid.n_points() {
        return invalid("frame and torsion samples must match the grid");
    }
    let theta = cumulative_from_origin(grid, tau);
    Ok(frenet
        .iter()
        .zip(&theta)
        .map(|(f, &th)| {
            let (s, c) = th.sin_cos();
            ParallelFramePoint { tangent: f.tangent, e1: f.n * c - f.b * s, e2: f.n * s + f.b * c }
        })
        .collect())
}

pub fn parallel_to_frenet(grid: &GridSpec, frames: &[ParallelFramePoint], tau: &[f64]) -> Result<Vec<FrenetPoint>> {
    if frames.len() != grid.n_points() || tau.len() != grid.n_points() {
        return invalid("frame and torsion samples must match the grid");
    }
    let theta = cumulative_from_origin(grid, tau);
    Ok(frames
        .iter()
        .zip(&theta)
        .map(|(f, &th)| {
            let (s, c) = th.sin_cos();
            FrenetPoint { tangent: f.tangent, n: f.e1 * c + f.e2 * s, b: -f.e1 * s + f.e2 * c }
        })
        .collect())
}

/// Frames, ψ, ψ_x and γ on a `(t, x)` patch; index `[i_t][j_x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FramePatch {
    pub ts: Vec<f64>,
    pub xs: Vec<f64>,
    pub frames: Vec<Vec<ParallelFramePoint>>,
    pub psi: Vec<Vec<C64>>,
    pub psi_x: Vec<Vec<C64>>,
    pub gamma: Vec<Vec<f64>>,
}

/// Builds a patch on uniform `ts × xs` from an analytic filament function
/// `f(t, x) = (ψ, ψ_x)`. The base point is `xs[base]`; transports use
/// `substeps` midpoint-rotation steps per patch cell.
pub fn build_patch(
    f: &impl Fn(f64, f64) -> (C64, C64),
    a: f64,
    ts: &[f64],
    xs: &[f64],
    base: usize,
    seed: ParallelFramePoint,
    substeps: usize,
) -> Result<FramePatch> {
    check_seed(&seed)?;
    if ts.len() < 5 || xs.len() < 5 {
        return invalid("patch needs at least 5x5 nodes");
    }
    let m = substeps.max(1);
    let x0 = xs[base];
    let t_step = |fr: ParallelFramePoint, t0: f64, t1: f64| {
        let mut fr = fr;
        let h = (t1 - t0) / m as f64;
        for k in 0..m {
            let tm = t0 + (k as f64 + 0.5) * h;
            let (psi, psi_x) = f(tm, x0);
            fr = fr.rotate(t_axis(psi_x, gauge(psi, a, tm)) * h);
        }
        fr
    };
    let x_step = |fr: ParallelFramePoint, t: f64, xa: f64, xb: f64| {
        let mut fr = fr;
        let h = (xb - xa) / m as f64;
        for k in 0..m {
            let xm = xa + (k as f64 + 0.5) * h;
            fr = fr.rotate(x_axis(f(t, xm).0) * h);
        }
        fr
    };
    let mut base_frames = vec![seed; ts.len()];
    for i in 1..ts.len() {
        base_frames[i] = t_step(base_frames[i - 1], ts[i - 1], ts[i]);
    }
    let mut frames = Vec::with_capacity(ts.len());
    for (i, &t) in ts.iter().enumerate() {
        let mut row = vec![base_frames[i]; xs.len()];
        for j in base + 1..xs.len() {
            row[j] = x_step(row[j - 1], t, xs[j - 1], xs[j]);
        }
        for j in (0..base).rev() {
            row[j] = x_step(row[j + 1], t, xs[j + 1], xs[j]);
        }
        frames.push(row);
    }
    let psi: Vec<Vec<C64>> = ts.iter().map(|&t| xs.iter().map(|&x| f(t, x).0).collect()).collect();
    let psi_x: Vec<Vec<C64>> = ts.iter().map(|&t| xs.iter().map(|&x| f(t, x).1).collect()).collect();
    let gamma = ts
        .iter()
        .zip(&psi)
        .map(|(&t, row)| row.iter().map(|&z| gauge(z, a, t)).collect())
        .collect();
    Ok(FramePatch { ts: ts.to_vec(), xs: xs.to_vec(), frames, psi, psi_x, gamma })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stencil {
    Second,
    Fourth,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualNorms {
    pub sup: f64,
    pub l2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentityReport {
    pub tangent_x: ResidualNorms,
    pub normal_x: ResidualNorms,
    pub tangent_t: ResidualNorms,
    pub normal_t: ResidualNorms,
}

fn norms(v: &[f64]) -> ResidualNorms {
    let sup = v.iter().copied().fold(0.0, f64::max);
    let l2 = (v.iter().map(|r| r * r).sum::<f64>() / v.len().max(1) as f64).sqrt();
    ResidualNorms { sup, l2 }
}

/// Centered-difference residuals of `T_x = Re(ψ̄N)`, `N_x = −ψT`,
/// `T_t = Im(ψ̄_x N)` and `N_t = −iψ_x T − iγN` at interior patch nodes.
pub fn verify_derivative_identities(patch: &FramePatch, stencil: Stencil) -> Result<IdentityReport> {
    let (nt, nx) = (patch.ts.len(), patch.xs.len());
    if nt < 5 || nx < 5 {
        return invalid("patch needs at least 5x5 nodes");
    }
    let ht = patch.ts[1] - patch.ts[0];
    let hx = patch.xs[1] - patch.xs[0];
    let w = match stencil {
        Stencil::Second => 1,
        Stencil::Fourth => 2,
    };
    let diff = |get: &dyn Fn(i64) -> Matrix3<f64>, h: f64| match stencil {
        Stencil::Second => (get(1) - get(-1)) / (2.0 * h),
        Stencil::Fourth => (get(-2) - get(-1) * 8.0 + get(1) * 8.0 - get(2)) / (12.0 * h),
    };
    let (mut r1, mut r2, mut r3, mut r4) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for i in w..nt - w {
        for j in w..nx - w {
            let fr = &patch.frames[i][j];
            let dx = diff(&|k| patch.frames[i][(j as i64 + k) as usize].matrix(), hx);
            let dt = diff(&|k| patch.frames[(i as i64 + k) as usize][j].matrix(), ht);
            let (psi, psi_x, gamma) = (patch.psi[i][j], patch.psi_x[i][j], patch.gamma[i][j]);
            let n = fr.normal();
            let tc = fr.tangent.map(|v| C64::new(v, 0.0));
            let row = |m: &Matrix3<f64>, r: usize| m.row(r).transpose();
            let nx_num = row(&dx, 1).map(|v| C64::new(v, 0.0)) + row(&dx, 2).map(|v| C64::new(0.0, v));
            let nt_num = row(&dt, 1).map(|v| C64::new(v, 0.0)) + row(&dt, 2).map(|v| C64::new(0.0, v));
            let tx = (n * psi.conj()).map(|z| z.re);
            r1.push((row(&dx, 0) - tx).norm());
            r2.push((nx_num + tc * psi).norm());
            let tt = (n * psi_x.conj()).map(|z| z.im);
            r3.push((row(&dt, 0) - tt).norm());
            let rhs = tc * (-C64::i() * psi_x) - n * (C64::i() * gamma);
            r4.push((nt_num - rhs).norm());
        }
    }
    Ok(IdentityReport { tangent_x: norms(&r1), normal_x: norms(&r2), tangent_t: norms(&r3), normal_t: norms(&r4) })
}

impl IdentityReport {
    pub fn x_sup(&self) -> f64 {
        self.tangent_x.sup.max(self.normal_x.sup)
    }

    pub fn t_sup(&self) -> f64 {
        self.tangent_t.sup.max(self.normal_t.sup)
    }
}

/// Holonomy of transporting `seed` around the cell `[t0, t0+h] × [x0, x0+h]`
/// with single rotation steps (endpoint-averaged coefficients).
pub fn commutator_defect(f: &impl Fn(f64, f64) -> (C64, C64), a: f64, t0: f64, x0: f64, h: f64) -> f64 {
    let seed = ParallelFramePoint::identity();
    let tstep = |fr: ParallelFramePoint, x: f64, ta: f64, tb: f64| {
        let (p0, q0) = f(ta, x);
        let (p1, q1) = f(tb, x);
        fr.rotate((t_axis(q0, gauge(p0, a, ta)) + t_axis(q1, gauge(p1, a, tb))) * (0.5 * (tb - ta)))
    };
    let xstep = |fr: ParallelFramePoint, t: f64, xa: f64, xb: f64| {
        fr.rotate((x_axis(f(t, xa).0) + x_axis(f(t, xb).0)) * (0.5 * (xb - xa)))
    };
    let one = xstep(tstep(seed, x0, t0, t0 + h), t0 + h, x0, x0 + h);
    let two = tstep(xstep(seed, t0, x0, x0 + h), x0 + h, t0, t0 + h);
    one.distance(&two)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profile::{integrate_profile, snapshot_chi_a, SelfSimilarParams};

    fn psi_a(a: f64) -> impl Fn(f64, f64) -> (C64, C64) {
        move |t, x| {
            let psi = C64::from_polar(a / t.sqrt(), x * x / (4.0 * t));
            (psi, psi * C64::new(0.0, x / (2.0 * t)))
        }
    }

    #[test]
    fn filament_function_examples() {
        let g = GridSpec::new(256, 8.0).unwrap();
        let xs = g.xs();
        let tau: Vec<f64> = xs.iter().map(|x| x / 2.0).collect();
        let c = vec![0.8; 256];
        let psi = filament_function(g, &c, &tau).unwrap();
        for (x, z) in xs.iter().zip(&psi.values) {
            assert!((z - C64::from_polar(0.8, x * x / 4.0)).norm() < 1e-12);
        }
        let flat = filament_function(g, &c, &[0.0; 256]).unwrap();
        assert!(flat.values.iter().all(|z| z.im == 0.0 && z.re == 0.8));
        let zero = filament_function(g, &[0.0; 256], &tau).unwrap();
        assert_eq!(zero.sup_norm(), 0.0);
    }

    #[test]
    fn zero_filament_gives_straight_line() {
        let g = GridSpec::new(64, 4.0).unwrap();
        let psi = ComplexField::zeros(g);
        let fr = transport_frame_x(1.0, &psi, ParallelFramePoint::identity(), 32).unwrap();
        assert!(fr.points.iter().all(|p| p.distance(&ParallelFramePoint::identity()) == 0.0));
        let c = reconstruct_curve(1.0, &psi, 32, ParallelFramePoint::identity(), Vec3::new(1.0, 2.0, 3.0), 1, 10.0).unwrap();
        for (x, p) in c.xs.iter().zip(&c.positions) {
            assert!((p - Vec3::new(1.0 + x, 2.0, 3.0)).norm() < 1e-13);
        }
    }

    #[test]
    fn rejects_bad_seed() {
        let g = GridSpec::new(64, 4.0).unwrap();
        let mut seed = ParallelFramePoint::identity();
        seed.e1.x = 1e-6;
        assert!(transport_frame_x(1.0, &ComplexField::zeros(g), seed, 0).is_err());
    }

    #[test]
    fn orthonormality_is_structural() {
        let g = GridSpec::new(4096, 10.0).unwrap();
        let psi = ComplexField::from_fn(g, |x| C64::from_polar(10.0, 3.0 * x + x * x));
        let fr = transport_frame_x(1.0, &psi, ParallelFramePoint::identity(), 2048).unwrap();
        assert!(fr.points.iter().all(|p| p.orthonormality_defect() < 1e-12 * 20.0));
        assert!(fr.points.iter().all(|p| (p.normal().norm_squared() - 2.0).abs() < 2e-9));
    }

    #[test]
    fn self_similar_tangent_matches_profile() {
        let a = 0.8;
        let sol = integrate_profile(SelfSimilarParams::new(a).unwrap(), 12.0, 1e-3).unwrap();
        let g = GridSpec::new(1 << 16, 12.0).unwrap();
        let psi = ComplexField::from_fn(g, |x| psi_a(a)(1.0, x).0);
        let fr = transport_frame_x(1.0, &psi, ParallelFramePoint::identity(), g.origin_index()).unwrap();
        let idx: Vec<usize> = (0..g.n_points()).step_by(64).filter(|&j| g.x(j).abs() <= 10.0).collect();
        let xs: Vec<f64> = idx.iter().map(|&j| g.x(j)).collect();
        let prof = snapshot_chi_a(&sol, 1.0, &xs).unwrap();
        let ours: Vec<Vec3> = idx.iter().map(|&j| fr.points[j].tangent).collect();
        let theirs: Vec<Vec3> = prof.iter().map(|p| p.t).collect();
        assert!(aligned_direction_distance(&ours, &theirs) < 1e-5);
    }

    #[test]
    fn self_similar_base_frame_is_constant() {
        let a = 1.0;
        let ts: Vec<f64> = (0..=750).map(|i| 0.25 + 1e-3 * i as f64).collect();
        let series = BasePointSeries::from_fn(0.0, a, &ts, |t| psi_a(a)(t, 0.0));
        assert!(series.samples.iter().all(|s| s.gamma.abs() < 1e-15));
        let leg = transport_frame_t(&series, 1.0, ParallelFramePoint::identity(), Vec3::new(0.0, 0.0, 2.0)).unwrap();
        for ((t, f), p) in leg.ts.iter().zip(&leg.frames).zip(&leg.positions) {
            assert!(f.distance(&ParallelFramePoint::identity()) < 1e-15);
            // χ(t,0) = √t G(0)
            assert!((p - Vec3::new(0.0, 0.0, 2.0 * t.sqrt())).norm() < 1e-5);
        }
    }

    #[test]
    fn time_gaps_are_refused() {
        let mut ts: Vec<f64> = (0..=20).map(|i| 0.5 + 0.025 * i as f64).collect();
        ts.remove(10);
        ts.remove(10);
        ts.remove(10);
        let series = BasePointSeries::from_fn(0.0, 1.0, &ts, |t| psi_a(1.0)(t, 0.0));
        assert!(transport_frame_t(&series, 1.0, ParallelFramePoint::identity(), Vec3::zeros()).is_err());
    }

    #[test]
    fn curve_matches_self_similar_solution() {
        let a = 1.0;
        let sol = integrate_profile(SelfSimilarParams::new(a).unwrap(), 45.0, 1e-3).unwrap();
        let ts: Vec<f64> = (0..=750).map(|i| 0.25 + 1e-3 * i as f64).collect();
        let series = BasePointSeries::from_fn(0.0, a, &ts, |t| psi_a(a)(t, 0.0));
        let leg = transport_frame_t(&series, 1.0, ParallelFramePoint::identity(), Vec3::new(0.0, 0.0, 2.0 * a)).unwrap();
        for t in [0.25, 0.5, 1.0] {
            let g = GridSpec::new(1 << 18, 20.5).unwrap();
            let psi = ComplexField::from_fn(g, |x| psi_a(a)(t, x).0);
            let (fr, chi0) = leg.at(t).unwrap();
            let c = reconstruct_curve(t, &psi, g.origin_index(), fr, chi0, 256, 20.0).unwrap();
            let exact: Vec<Vec3> = snapshot_chi_a(&sol, t, &c.xs).unwrap().iter().map(|p| p.chi).collect();
            let err = c.positions.iter().zip(&exact).map(|(p, q)| (p - q).norm()).fold(0.0, f64::max);
            assert!(err < 1e-4, "t = {t}: {err}");
            assert!(c.speed_excess() < 1e-12);
        }
    }

    #[test]
    fn pointwise_transport_matches_grid_transport() {
        let a = 1.0;
        let f = psi_a(a);
        let g = GridSpec::new(1 << 17, 12.0).unwrap();
        let psi = ComplexField::from_fn(g, |x| f(1.0, x).0);
        let grid = reconstruct_curve(1.0, &psi, g.origin_index(), ParallelFramePoint::identity(), Vec3::zeros(), 1024, 10.0).unwrap();
        let along = transport_along(1.0, |x| Ok(f(1.0, x).0), 0.0, ParallelFramePoint::identity(), Vec3::zeros(), &grid.xs, |x| {
            0.05 / (x.abs() / 2.0 + a + 1.0)
        })
        .unwrap();
        for (p, q) in grid.frames.iter().zip(&along.frames) {
            assert!(p.distance(q) < 1e-6);
        }
        for (p, q) in grid.positions.iter().zip(&along.positions) {
            assert!((p - q).norm() < 1e-6);
        }
    }

    #[test]
    fn path_independence() {
        let a = 0.7;
        let t = 0.6;
        let g = GridSpec::new(1 << 17, 12.0).unwrap();
        let f = psi_a(a);
        let psi1 = ComplexField::from_fn(g, |x| f(1.0, x).0);
        let psi = ComplexField::from_fn(g, |x| f(t, x).0);
        let ts: Vec<f64> = (0..=400).map(|i| t + (1.0 - t) * i as f64 / 400.0).collect();
        let mut curves = Vec::new();
        for x0_node in [g.origin_index(), g.origin_index() + (3.0 / g.spacing()).round() as usize] {
            let x0 = g.x(x0_node);
            // seed at (1, x0) from the x-transport at t = 1 through the common origin
            let base = reconstruct_curve(1.0, &psi1, g.origin_index(), ParallelFramePoint::identity(), Vec3::zeros(), 1, 12.0).unwrap();
            let k = base.xs.iter().position(|&x| (x - x0).abs() < 1e-12).unwrap();
            let series = BasePointSeries::from_fn(x0, a, &ts, |s| f(s, x0));
            let leg = transport_frame_t(&series, 1.0, base.frames[k], base.positions[k]).unwrap();
            let (fr, chi0) = leg.at(t).unwrap();
            curves.push(reconstruct_curve(t, &psi, x0_node, fr, chi0, 128, 8.0).unwrap());
        }
        assert_eq!(curves[0].xs, curves[1].xs);
        assert!(aligned_distance(&curves[0].positions, &curves[1].positions) < 1e-6);
    }

    #[test]
    fn identities_hold_for_self_similar_patch() {
        let a = 1.0;
        let h = 1e-3;
        let ts: Vec<f64> = (0..=10).map(|i| 0.5 + h * i as f64).collect();
        let xs: Vec<f64> = (0..=10).map(|j| 4.99 + h * j as f64).collect();
        let f = psi_a(a);
        // base frame at x = 4.99 comes from the x-transport at t = 0.5
        let g = GridSpec::new(1 << 16, 8.0).unwrap();
        let psi = ComplexField::from_fn(g, |x| f(0.5, x).0);
        let seed_curve = reconstruct_curve(0.5, &psi, g.origin_index(), ParallelFramePoint::identity(), Vec3::zeros(), 1, 8.0).unwrap();
        let k = seed_curve.xs.iter().enumerate().min_by(|p, q| (p.1 - 4.99).abs().total_cmp(&(q.1 - 4.99).abs())).unwrap().0;
        let seed = seed_curve.frames[k];
        let patch = build_patch(&f, a, &ts, &xs, 0, seed, 16).unwrap();
        let rep = verify_derivative_identities(&patch, Stencil::Fourth).unwrap();
        assert!(rep.x_sup() < 1e-6 && rep.t_sup() < 1e-6, "{rep:?}");
    }

    #[test]
    fn zero_filament_identities_vanish() {
        let ts: Vec<f64> = (0..6).map(|i| 1.0 + 0.01 * i as f64).collect();
        let xs: Vec<f64> = (0..6).map(|j| 0.01 * j as f64).collect();
        let f = |_: f64, _: f64| (C64::new(0.0, 0.0), C64::new(0.0, 0.0));
        let patch = build_patch(&f, 0.0, &ts, &xs, 0, ParallelFramePoint::identity(), 1).unwrap();
        let rep = verify_derivative_identities(&patch, Stencil::Second).unwrap();
        assert_eq!(rep.x_sup() + rep.t_sup(), 0.0);
    }

    #[test]
    fn random_filament_fails_time_identities() {
        let f = |t: f64, x: f64| {
            let psi = C64::new((0.7 * x + t).sin(), 0.4 * (1.3 * x * t).cos());
            let d = C64::new(0.7 * (0.7 * x + t).cos(), -0.4 * 1.3 * t * (1.3 * x * t).sin());
            (psi, d)
        };
        let h = 1e-3;
        let ts: Vec<f64> = (0..9).map(|i| 1.0 + h * i as f64).collect();
        let xs: Vec<f64> = (0..9).map(|j| 0.3 + h * j as f64).collect();
        let patch = build_patch(&f, 0.5, &ts, &xs, 4, ParallelFramePoint::identity(), 8).unwrap();
        let rep = verify_derivative_identities(&patch, Stencil::Fourth).unwrap();
        assert!(rep.x_sup() < 1e-8);
        assert!(rep.t_sup() > 1e-4, "{rep:?}");
    }

    #[test]
    fn identities_converge_at_second_order() {
        let a = 1.0;
        let f = psi_a(a);
        let res = |h: f64| {
            let ts: Vec<f64> = (0..7).map(|i| 0.8 + h * i as f64).collect();
            let xs: Vec<f64> = (0..7).map(|j| 1.0 + h * j as f64).collect();
            let g = GridSpec::new(1 << 14, 4.0).unwrap();
            let psi = ComplexField::from_fn(g, |x| f(0.8, x).0);
            let node = g.origin_index() + (1.0 / g.spacing()).round() as usize;
            let fr = transport_frame_x(0.8, &psi, ParallelFramePoint::identity(), g.origin_index()).unwrap();
            let patch = build_patch(&f, a, &ts, &xs, 0, fr.points[node], 32).unwrap();
            let r = verify_derivative_identities(&patch, Stencil::Second).unwrap();
            r.x_sup().max(r.t_sup())
        };
        let slope = (res(0.02) / res(0.01)).log2();
        assert!((slope - 2.0).abs() < 0.2, "{slope}");
    }

    #[test]
    fn commutator_shrinks_with_cell_size() {
        let f = psi_a(1.0);
        let d1 = commutator_defect(&f, 1.0, 0.7, 1.2, 0.02);
        let d2 = commutator_defect(&f, 1.0, 0.7, 1.2, 0.01);
        assert!((d1 / d2).log2() >= 1.9, "{}", (d1 / d2).log2());
    }

    #[test]
    fn frenet_parallel_round_trip() {
        let g = GridSpec::new(128, 5.0).unwrap();
        let a = 1.0;
        let sol = integrate_profile(SelfSimilarParams::new(a).unwrap(), 6.0, 1e-3).unwrap();
        let xs = g.xs();
        let prof = snapshot_chi_a(&sol, 1.0, &xs).unwrap();
        let frenet: Vec<FrenetPoint> = prof.iter().map(|p| FrenetPoint { tangent: p.t, n: p.n, b: p.b }).collect();
        let tau: Vec<f64> = xs.iter().map(|x| x / 2.0).collect();
        let par = frenet_to_parallel(&g, &frenet, &tau).unwrap();
        for ((x, p), f) in xs.iter().zip(&par).zip(&frenet) {
            let expect = (f.n.map(|v| C64::new(v, 0.0)) + f.b.map(|v| C64::new(0.0, v))) * C64::from_polar(1.0, x * x / 4.0);
            assert!((p.normal() - expect).norm() < 1e-12);
        }
        let back = parallel_to_frenet(&g, &par, &tau).unwrap();
        let again = frenet_to_parallel(&g, &back, &tau).unwrap();
        for (p, q) in par.iter().zip(&again) {
            assert!(p.distance(q) < 1e-12);
        }
        let flat = frenet_to_parallel(&g, &frenet, &vec![0.0; 128]).unwrap();
        assert!(flat.iter().zip(&frenet).all(|(p, f)| p.e1 == f.n && p.e2 == f.b));
    }
}
