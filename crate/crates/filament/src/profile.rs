//! Self-similar profile `G_a`: the curve with curvature `a` and torsion `s/2`.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use nalgebra::{Matrix3, Rotation3};
use serde::{Deserialize, Serialize};

use crate::asymptotics::{tail_limit, tail_phase, Side};
use crate::{invalid, CVec3, Error, Result, Vec3, C64};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelfSimilarParams {
    pub a: f64,
}

impl SelfSimilarParams {
    pub fn new(a: f64) -> Result<Self> {
        if !(a.is_finite() && a >= 0.0) {
            return invalid(format!("curvature parameter a = {a} must be >= 0"));
        }
        Ok(Self { a })
    }

    /// Largest step keeping the torsion rotation per step at or below 0.1 rad.
    pub fn default_step(s_max: f64) -> f64 {
        f64::min(1e-3, 0.2 / s_max)
    }

    pub fn default_s_max(&self) -> f64 {
        if self.a == 0.0 {
            200.0
        } else {
            f64::max(200.0, 50.0 / self.a + 100.0 * self.a)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrenetState {
    pub s: f64,
    pub g: Vec3,
    pub t: Vec3,
    pub n: Vec3,
    pub b: Vec3,
}

impl FrenetState {
    #[cfg(test)]
    fn pack(&self) -> [f64; 12] {
        let mut y = [0.0; 12];
        for i in 0..3 {
            y[i] = self.g[i];
            y[3 + i] = self.t[i];
            y[6 + i] = self.n[i];
            y[9 + i] = self.b[i];
        }
        y
    }

    /// Complex normal `n + i b`.
    pub fn complex_normal(&self) -> CVec3 {
        CVec3::new(
            C64::new(self.n.x, self.b.x),
            C64::new(self.n.y, self.b.y),
            C64::new(self.n.z, self.b.z),
        )
    }

    /// Largest deviation of the frame from an orthonormal right-handed triple.
    pub fn frame_defect(&self) -> f64 {
        let m = self.frame_matrix();
        let d = (m * m.transpose() - Matrix3::identity()).abs().max();
        let c = (self.t.cross(&self.n) - self.b).abs().max();
        d.max(c)
    }

    /// Largest of `| |v| - 1 |` and `|u·v|` over the frame vectors.
    pub fn orthonormality_drift(&self) -> f64 {
        let v = [self.t, self.n, self.b];
        let mut d: f64 = 0.0;
        for i in 0..3 {
            d = d.max((v[i].norm() - 1.0).abs());
            for j in i + 1..3 {
                d = d.max(v[i].dot(&v[j]).abs());
            }
        }
        d
    }

    fn frame_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_rows(&[self.t.transpose(), self.n.transpose(), self.b.transpose()])
    }

    /// Image under the symmetry `s → -s` of the profile equations.
    pub fn reflected(&self) -> Self {
        let r = |v: Vec3| Vec3::new(v.x, -v.y, -v.z);
        Self {
            s: -self.s,
            g: Vec3::new(-self.g.x, self.g.y, self.g.z),
            t: r(self.t),
            n: -r(self.n),
            b: -r(self.b),
        }
    }

    pub fn distance(&self, o: &FrenetState) -> f64 {
        [(self.g - o.g), (self.t - o.t), (self.n - o.n), (self.b - o.b)]
            .iter()
            .map(|v| v.abs().max())
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
fn rhs(a: f64) -> impl Fn(f64, &[f64; 12]) -> [f64; 12] {
    move |s, y| {
        let tau = 0.5 * s;
        let mut d = [0.0; 12];
        for i in 0..3 {
            let (t, n, b) = (y[3 + i], y[6 + i], y[9 + i]);
            d[i] = t;
            d[3 + i] = a * n;
            d[6 + i] = -a * t + tau * b;
            d[9 + i] = -tau * n;
        }
        d
    }
}

/// Fourth-order Magnus step of the Frenet rows `(T, n, b)`, whose generator is
/// `K(ω)` with `ω(s) = (−s/2, 0, −a)`; `G` uses the trapezoid rule with slope correction.
fn magnus_step(a: f64, st: &FrenetState, s: f64, h: f64, s1: f64) -> FrenetState {
    let d = 3f64.sqrt() / 6.0;
    let w = |s: f64| Vec3::new(-0.5 * s, 0.0, -a);
    let (w1, w2) = (w(s + (0.5 - d) * h), w(s + (0.5 + d) * h));
    let axis = (w1 + w2) * (0.5 * h) - w1.cross(&w2) * (3f64.sqrt() / 12.0 * h * h);
    let m = Rotation3::new(axis).matrix() * st.frame_matrix();
    let (t, n, b) = (m.row(0).transpose(), m.row(1).transpose(), m.row(2).transpose());
    let g = st.g + (st.t + t) * (0.5 * h) + (st.n - n) * (a * h * h / 12.0);
    FrenetState { s: s1, g, t, n, b }
}

fn polar(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let (u, vt) = (svd.u.expect("u"), svd.v_t.expect("v_t"));
    u * vt
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProfileSolution {
    pub params: SelfSimilarParams,
    /// Ascending in `s`, symmetric about 0.
    pub states: Vec<FrenetState>,
    pub step: f64,
}

const REORTHO_EVERY: usize = 100;

pub fn integrate_profile(params: SelfSimilarParams, s_max: f64, step: f64) -> Result<ProfileSolution> {
    if !(s_max > 0.0 && step > 0.0 && step <= s_max) {
        return invalid("need 0 < step <= s_max");
    }
    let a = params.a;
    let steps = (s_max / step).round() as usize;
    let step = s_max / steps as f64;
    let start = FrenetState {
        s: 0.0,
        g: Vec3::new(0.0, 0.0, 2.0 * a),
        t: Vec3::x(),
        n: Vec3::y(),
        b: Vec3::z(),
    };
    let mut sides = Vec::with_capacity(2);
    for dir in [1.0, -1.0] {
        let h = dir * step;
        let mut st = start;
        let mut out = Vec::with_capacity(steps);
        for i in 0..steps {
            let s = i as f64 * h;
            let s1 = (i + 1) as f64 * h;
            st = magnus_step(a, &st, s, h, s1);
            if (i + 1) % REORTHO_EVERY == 0 {
                let drift = st.orthonormality_drift();
                if drift > 1e-6 {
                    return Err(Error::Numerical(format!(
                        "frame drift {drift:.3e} at s = {s1}; reduce the step"
                    )));
                }
                let p = polar(&st.frame_matrix());
                st.t = p.row(0).transpose();
                st.n = p.row(1).transpose();
                st.b = p.row(2).transpose();
            }
            out.push(st);
        }
        sides.push(out);
    }
    let mut neg = sides.pop().expect("negative side");
    neg.reverse();
    let mut states = neg;
    states.push(start);
    states.extend(sides.pop().expect("positive side"));
    Ok(ProfileSolution { params, states, step })
}

impl ProfileSolution {
    pub fn s_max(&self) -> f64 {
        self.states.last().map_or(0.0, |s| s.s)
    }

    /// `½G − (s/2)T − T∧T′` with `T′ = a n`, sup over nodes.
    pub fn equation_residual(&self) -> f64 {
        let a = self.params.a;
        self.states
            .iter()
            .map(|st| (0.5 * st.g - 0.5 * st.s * st.t - st.t.cross(&(a * st.n))).abs().max())
            .fold(0.0, f64::max)
    }

    fn derivative(&self, st: &FrenetState) -> FrenetState {
        let a = self.params.a;
        let tau = 0.5 * st.s;
        FrenetState {
            s: st.s,
            g: st.t,
            t: a * st.n,
            n: -a * st.t + tau * st.b,
            b: -tau * st.n,
        }
    }

    /// Cubic Hermite interpolation at arclength `s`.
    pub fn eval(&self, s: f64) -> Result<FrenetState> {
        let smax = self.s_max();
        if !(s.abs() <= smax * (1.0 + 1e-12)) {
            return Err(Error::OutOfCoverage(format!("s = {s} outside [-{smax}, {smax}]")));
        }
        let u = (s + smax) / self.step;
        let i = (u.floor() as usize).min(self.states.len() - 2);
        let (p0, p1) = (&self.states[i], &self.states[i + 1]);
        let (d0, d1) = (self.derivative(p0), self.derivative(p1));
        let h = p1.s - p0.s;
        let w = (s - p0.s) / h;
        let h00 = (1.0 + 2.0 * w) * (1.0 - w) * (1.0 - w);
        let h10 = w * (1.0 - w) * (1.0 - w);
        let h01 = w * w * (3.0 - 2.0 * w);
        let h11 = w * w * (w - 1.0);
        let mix = |x0: Vec3, m0: Vec3, x1: Vec3, m1: Vec3| h00 * x0 + h10 * h * m0 + h01 * x1 + h11 * h * m1;
        Ok(FrenetState {
            s,
            g: mix(p0.g, d0.g, p1.g, d1.g),
            t: mix(p0.t, d0.t, p1.t, d1.t),
            n: mix(p0.n, d0.n, p1.n, d1.n),
            b: mix(p0.b, d0.b, p1.b, d1.b),
        })
    }

    pub fn write_csv(&self, path: &Path, stride: usize) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "s,Gx,Gy,Gz,Tx,Ty,Tz,nx,ny,nz,bx,by,bz")?;
        for st in self.states.iter().step_by(stride.max(1)) {
            write!(w, "{}", st.s)?;
            for v in [st.g, st.t, st.n, st.b] {
                write!(w, ",{},{},{}", v.x, v.y, v.z)?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticFrameData {
    pub a_plus: Vec3,
    pub a_minus: Vec3,
    pub b_plus: CVec3,
    pub b_minus: CVec3,
    pub theta: f64,
}

pub fn extract_frame_limits(sol: &ProfileSolution) -> Result<AsymptoticFrameData> {
    let a = sol.params.a;
    let s_max = sol.s_max();
    if a > 0.0 && s_max < 50.0 / a * (1.0 - 1e-9) && s_max < 200.0 {
        return invalid(format!("s_max = {s_max} too short for a = {a}"));
    }
    let stride = (sol.states.len() / 40_000).max(1);
    let tail: Vec<&FrenetState> = sol
        .states
        .iter()
        .take_while(|st| st.s <= -0.55 * s_max)
        .step_by(stride)
        .chain(sol.states.iter().rev().take_while(|st| st.s >= 0.55 * s_max).step_by(stride))
        .collect();
    let ss: Vec<f64> = tail.iter().map(|st| st.s).collect();
    let tangents: Vec<CVec3> = tail.iter().map(|st| st.t.map(|v| C64::new(v, 0.0))).collect();
    let normals: Vec<CVec3> = tail
        .iter()
        .map(|st| st.complex_normal() * C64::from_polar(1.0, 0.25 * st.s * st.s + a * a * st.s.abs().ln()))
        .collect();
    let phase = |s: f64| tail_phase(a, 1.0, s);
    let mut a_lim = [Vec3::zeros(); 2];
    let mut b_lim = [CVec3::zeros(); 2];
    for (k, side) in [Side::Plus, Side::Minus].into_iter().enumerate() {
        let t = tail_limit(&ss, &tangents, side, 1.0, phase)?;
        let b = tail_limit(&ss, &normals, side, 1.0, phase)?;
        if t.low_confidence || b.low_confidence {
            return Err(Error::Numerical(format!(
                "frame limits did not settle (spread {:.3e}, {:.3e})",
                t.error, b.error
            )));
        }
        a_lim[k] = t.value.map(|z| z.re).normalize();
        b_lim[k] = b.value;
    }
    let theta = angle_between(&a_lim[0], &(-a_lim[1]));
    Ok(AsymptoticFrameData {
        a_plus: a_lim[0],
        a_minus: a_lim[1],
        b_plus: b_lim[0],
        b_minus: b_lim[1],
        theta,
    })
}

pub fn angle_between(u: &Vec3, v: &Vec3) -> f64 {
    u.cross(v).norm().atan2(u.dot(v))
}

pub fn corner_angle_residual(data: &AsymptoticFrameData, a: f64) -> f64 {
    (0.5 * data.theta).sin() - (-PI * a * a / 2.0).exp()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfilePoint {
    pub chi: Vec3,
    pub t: Vec3,
    pub n: Vec3,
    pub b: Vec3,
}

/// `χ_a(t,x) = √t G(x/√t)` and the rescaled frame.
pub fn snapshot_chi_a(sol: &ProfileSolution, t: f64, xs: &[f64]) -> Result<Vec<ProfilePoint>> {
    if !(t > 0.0) {
        return invalid("snapshot time must be positive");
    }
    let r = t.sqrt();
    xs.iter()
        .map(|&x| {
            let st = sol.eval(x / r)?;
            Ok(ProfilePoint { chi: r * st.g, t: st.t, n: st.n, b: st.b })
        })
        .collect()
}
