//! Small fixed-size ODE integrators: classical RK4 and adaptive Dormand–Prince 5(4).

use crate::{Error, Result};

pub fn axpy<const N: usize>(y: &[f64; N], h: f64, k: &[f64; N]) -> [f64; N] {
    let mut out = *y;
    for i in 0..N {
        out[i] += h * k[i];
    }
    out
}

pub fn rk4_step<const N: usize>(
    f: &impl Fn(f64, &[f64; N]) -> [f64; N],
    t: f64,
    y: &[f64; N],
    h: f64,
) -> [f64; N] {
    let k1 = f(t, y);
    let k2 = f(t + 0.5 * h, &axpy(y, 0.5 * h, &k1));
    let k3 = f(t + 0.5 * h, &axpy(y, 0.5 * h, &k2));
    let k4 = f(t + h, &axpy(y, h, &k3));
    let mut out = *y;
    for i in 0..N {
        out[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

/// Fixed-step RK4 from `t0` to `t1` with `steps` equal steps.
pub fn rk4<const N: usize>(
    f: impl Fn(f64, &[f64; N]) -> [f64; N],
    t0: f64,
    t1: f64,
    y0: [f64; N],
    steps: usize,
) -> [f64; N] {
    let h = (t1 - t0) / steps as f64;
    let mut y = y0;
    for i in 0..steps {
        y = rk4_step(&f, t0 + i as f64 * h, &y, h);
    }
    y
}

#[derive(Debug, Clone, Copy)]
pub struct Tolerance {
    pub rtol: f64,
    pub atol: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self { rtol: 1e-10, atol: 1e-12 }
    }
}

const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Adaptive Dormand–Prince integration that lands exactly on each of
/// `outputs` (ascending, inside `(t0, ∞)`). Returns the state at each output.
pub fn dopri5<const N: usize>(
    f: impl Fn(f64, &[f64; N]) -> [f64; N],
    t0: f64,
    y0: [f64; N],
    outputs: &[f64],
    tol: Tolerance,
) -> Result<Vec<[f64; N]>> {
    let mut t = t0;
    let mut y = y0;
    let mut out = Vec::with_capacity(outputs.len());
    let span = outputs.last().map_or(1.0, |&e| (e - t0).abs().max(1e-300));
    let mut h = 1e-3 * span.min(1.0);
    let mut k1 = f(t, &y);
    let mut steps = 0usize;
    for &target in outputs {
        if target < t {
            return Err(Error::InvalidArgument("output times must be ascending".into()));
        }
        while t < target {
            steps += 1;
            if steps > 50_000_000 {
                return Err(Error::Numerical("step budget exhausted".into()));
            }
            let last = t + h >= target;
            let hh = if last { target - t } else { h };
            let mut k = [[0.0; N]; 7];
            k[0] = k1;
            for s in 1..7 {
                let mut ys = y;
                for (j, kj) in k.iter().enumerate().take(s) {
                    let a = A[s][j];
                    if a != 0.0 {
                        for i in 0..N {
                            ys[i] += hh * a * kj[i];
                        }
                    }
                }
                if s == 6 {
                    // FSAL: the 7th stage is evaluated at the new solution
                    k[6] = f(t + hh, &ys);
                    let mut err = 0.0f64;
                    for i in 0..N {
                        let mut e = 0.0;
                        for (st, ks) in k.iter().enumerate() {
                            e += E[st] * ks[i];
                        }
                        let sc = tol.atol + tol.rtol * y[i].abs().max(ys[i].abs());
                        err = err.max((hh * e / sc).abs());
                    }
                    if !err.is_finite() {
                        return Err(Error::Numerical(format!("non-finite error estimate at t = {t}")));
                    }
                    if err <= 1.0 {
                        t = if last { target } else { t + hh };
                        y = ys;
                        k1 = k[6];
                    }
                    let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                    if !(last && err <= 1.0) {
                        h = hh * fac;
                    } else {
                        h = h.max(hh * fac.min(1.0));
                    }
                    if h < 1e-14 * t.abs().max(1.0) {
                        return Err(Error::Numerical(format!("step size underflow at t = {t}")));
                    }
                } else {
                    k[s] = f(t + C[s] * hh, &ys);
                }
            }
        }
        out.push(y);
    }
    Ok(out)
}
