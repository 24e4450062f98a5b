//! Dormand-Prince 5(4) with proportional step-size control.

use crate::{Error, Result};

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

// Difference between the 5th and 4th order weights.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 5.0;

/// Result of a single trial step.
#[derive(Debug, Clone, Copy)]
pub struct Attempt<const N: usize> {
    pub y1: [f64; N],
    /// Derivative at the new point (first stage of the next step).
    pub f1: [f64; N],
    /// Scaled RMS error estimate; the step is acceptable when `<= 1`.
    pub err: f64,
    pub accepted: bool,
}

/// An accepted step with the endpoint data needed for dense output.
#[derive(Debug, Clone, Copy)]
pub struct Step<const N: usize> {
    pub t0: f64,
    pub t1: f64,
    pub y0: [f64; N],
    pub y1: [f64; N],
    pub f0: [f64; N],
    pub f1: [f64; N],
    pub err: f64,
}

impl<const N: usize> Step<N> {
    /// Cubic Hermite interpolant of the state at `t` in `[t0, t1]`.
    pub fn interpolate(&self, t: f64) -> [f64; N] {
        let h = self.t1 - self.t0;
        if h <= 0.0 {
            return self.y0;
        }
        let th = (t - self.t0) / h;
        let th2 = th * th;
        let th3 = th2 * th;
        let h00 = 2.0 * th3 - 3.0 * th2 + 1.0;
        let h10 = th3 - 2.0 * th2 + th;
        let h01 = -2.0 * th3 + 3.0 * th2;
        let h11 = th3 - th2;
        let mut out = [0.0; N];
        for i in 0..N {
            out[i] =
                h00 * self.y0[i] + h10 * h * self.f0[i] + h01 * self.y1[i] + h11 * h * self.f1[i];
        }
        out
    }

    /// Interior extrema of component `i` of the interpolant, as `(t, value)`.
    ///
    /// Returns up to two points strictly inside the step.
    pub fn extrema(&self, i: usize) -> [Option<(f64, f64)>; 2] {
        let h = self.t1 - self.t0;
        let mut out = [None, None];
        if h <= 0.0 {
            return out;
        }
        // d/dtheta of the Hermite cubic: a th^2 + b th + c
        let (p0, p1) = (self.y0[i], self.y1[i]);
        let (m0, m1) = (h * self.f0[i], h * self.f1[i]);
        let a = 6.0 * p0 + 3.0 * m0 - 6.0 * p1 + 3.0 * m1;
        let b = -6.0 * p0 - 4.0 * m0 + 6.0 * p1 - 2.0 * m1;
        let c = m0;
        let mut roots = [f64::NAN; 2];
        if a.abs() <= 1e-300 {
            if b != 0.0 {
                roots[0] = -c / b;
            }
        } else {
            let disc = b * b - 4.0 * a * c;
            if disc >= 0.0 {
                let sq = libm::sqrt(disc);
                // Numerically stable quadratic roots.
                let q = -0.5 * (b + if b >= 0.0 { sq } else { -sq });
                roots[0] = q / a;
                if q != 0.0 {
                    roots[1] = c / q;
                }
            }
        }
        let mut n = 0;
        for th in roots {
            if th > 0.0 && th < 1.0 {
                let t = self.t0 + th * h;
                out[n] = Some((t, self.interpolate(t)[i]));
                n += 1;
            }
        }
        if let (Some(a), Some(b)) = (out[0], out[1]) {
            if b.0 < a.0 {
                out = [Some(b), Some(a)];
            }
        }
        out
    }
}

/// Adaptive Dormand-Prince 5(4) stepper for `N`-dimensional systems.
#[derive(Debug, Clone)]
pub struct Dopri5<const N: usize> {
    pub rel_tol: f64,
    pub abs_tol: [f64; N],
    pub min_step: f64,
    pub max_step: f64,
    h: f64,
}

impl<const N: usize> Dopri5<N> {
    pub fn new(rel_tol: f64, abs_tol: [f64; N], min_step: f64, max_step: f64) -> Self {
        Self {
            rel_tol,
            abs_tol,
            min_step,
            max_step,
            h: max_step,
        }
    }

    /// Step size that will be tried next.
    pub fn proposed_step(&self) -> f64 {
        self.h
    }

    /// One trial step of size `h` from `(t, y)` with `f0 = rhs(t, y)`.
    pub fn attempt<F>(&self, t: f64, y: &[f64; N], f0: &[f64; N], h: f64, rhs: &mut F) -> Attempt<N>
    where
        F: FnMut(f64, &[f64; N]) -> [f64; N],
    {
        let (y1, f1, e) = Self::stages(t, y, f0, h, rhs);
        let mut acc = 0.0;
        for i in 0..N {
            let sc = self.abs_tol[i] + self.rel_tol * y[i].abs().max(y1[i].abs());
            let r = e[i] / sc;
            acc += r * r;
        }
        let err = libm::sqrt(acc / N as f64);
        Attempt {
            y1,
            f1,
            err,
            accepted: err <= 1.0,
        }
    }

    /// Plain fifth-order step of size `h` without error control.
    pub fn fixed_step<F>(t: f64, y: &[f64; N], f0: &[f64; N], h: f64, rhs: &mut F) -> [f64; N]
    where
        F: FnMut(f64, &[f64; N]) -> [f64; N],
    {
        Self::stages(t, y, f0, h, rhs).0
    }

    fn stages<F>(
        t: f64,
        y: &[f64; N],
        k1: &[f64; N],
        h: f64,
        rhs: &mut F,
    ) -> ([f64; N], [f64; N], [f64; N])
    where
        F: FnMut(f64, &[f64; N]) -> [f64; N],
    {
        let mut tmp = [0.0; N];
        for i in 0..N {
            tmp[i] = y[i] + h * A21 * k1[i];
        }
        let k2 = rhs(t + C2 * h, &tmp);
        for i in 0..N {
            tmp[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
        }
        let k3 = rhs(t + C3 * h, &tmp);
        for i in 0..N {
            tmp[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
        }
        let k4 = rhs(t + C4 * h, &tmp);
        for i in 0..N {
            tmp[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
        }
        let k5 = rhs(t + C5 * h, &tmp);
        for i in 0..N {
            tmp[i] =
                y[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
        }
        let k6 = rhs(t + h, &tmp);
        let mut y1 = [0.0; N];
        for i in 0..N {
            y1[i] =
                y[i] + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
        }
        let k7 = rhs(t + h, &y1);
        let mut e = [0.0; N];
        for i in 0..N {
            e[i] =
                h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
        }
        (y1, k7, e)
    }

    /// Advances by one accepted step, never past `t_limit`.
    ///
    /// Rejected trials shrink the step; a required step below `min_step`
    /// raises [`Error::StepUnderflow`]. The final step onto `t_limit` may be
    /// shorter than `min_step`.
    pub fn step<F>(
        &mut self,
        t: f64,
        y: &[f64; N],
        f0: &[f64; N],
        t_limit: f64,
        rhs: &mut F,
    ) -> Result<Step<N>>
    where
        F: FnMut(f64, &[f64; N]) -> [f64; N],
    {
        loop {
            let remaining = t_limit - t;
            let truncated = self.h >= remaining;
            let h = if truncated { remaining } else { self.h };
            let trial = self.attempt(t, y, f0, h, rhs);
            let fac = if trial.err == 0.0 {
                FAC_MAX
            } else if !trial.err.is_finite() {
                FAC_MIN
            } else {
                (SAFETY * libm::pow(trial.err, -0.2)).clamp(FAC_MIN, FAC_MAX)
            };
            if trial.accepted {
                let next = (h * fac).min(self.max_step);
                self.h = if truncated {
                    self.h.max(next).min(self.max_step)
                } else {
                    next
                };
                let t1 = if truncated { t_limit } else { t + h };
                return Ok(Step {
                    t0: t,
                    t1,
                    y0: *y,
                    y1: trial.y1,
                    f0: *f0,
                    f1: trial.f1,
                    err: trial.err,
                });
            }
            let shrunk = h * fac.min(1.0);
            if shrunk < self.min_step {
                return Err(Error::StepUnderflow { t, h: shrunk });
            }
            self.h = shrunk;
        }
    }
}
