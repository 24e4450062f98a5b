use crate::{Error, Result};

/// PID gains and amplitude set-points.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PidConfig {
    pub k_p: f64,
    pub k_i: f64,
    pub k_d: f64,
    /// Reference amplitude, m.
    pub a_r: f64,
    /// Free amplitude, m.
    pub a_f: f64,
    /// Optional integrator clamp `(lo, hi)` on the integral state. Off by
    /// default.
    #[cfg_attr(feature = "serde", serde(default))]
    pub integrator_clamp: Option<(f64, f64)>,
}

impl PidConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.a_r < self.a_f && self.a_r > 0.0) {
            return Err(Error::InvalidParameter {
                name: "a_r",
                reason: "must satisfy 0 < A_r < A_f",
            });
        }
        if !(self.k_p.is_finite() && self.k_i.is_finite() && self.k_d.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "pid gains",
                reason: "must be finite",
            });
        }
        Ok(())
    }
}

/// Integrator and output offset of a PID.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PidState {
    pub integral: f64,
    /// Constant added to the output; sets the initial base height.
    pub bias: f64,
}

/// Integrates `e` over `dt` and returns the PID output.
pub fn pid_update(state: &mut PidState, e: f64, de_dt: f64, cfg: &PidConfig, dt: f64) -> f64 {
    state.integral += e * dt;
    if let Some((lo, hi)) = cfg.integrator_clamp {
        state.integral = state.integral.clamp(lo, hi);
    }
    state.bias + cfg.k_p * e + cfg.k_i * state.integral + cfg.k_d * de_dt
}

/// Amplitude error with the excess above `a_t` multiplied by `k_s`.
///
/// Both branches agree at `A = a_t`, so the error stays continuous.
pub fn dynamic_pid_error(a: f64, a_r: f64, a_t: f64, k_s: f64) -> f64 {
    if a <= a_t {
        a_r - a
    } else {
        (a_r - a_t) + k_s * (a_t - a)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn table_one() -> PidConfig {
        PidConfig {
            k_p: 0.0,
            k_i: 10000.0,
            k_d: 0.0,
            a_r: 45e-9,
            a_f: 50e-9,
            integrator_clamp: None,
        }
    }

    #[test]
    fn pure_integrator_arithmetic() {
        let cfg = table_one();
        let mut s = PidState::default();
        let mut out = 0.0;
        for _ in 0..1000 {
            out = pid_update(&mut s, 1e-9, 0.0, &cfg, 1e-6);
        }
        assert_relative_eq!(out, 10e-9, max_relative = 1e-12);
    }

    #[test]
    fn zero_error_holds_output() {
        let cfg = table_one();
        let mut s = PidState {
            integral: 3e-12,
            bias: 1e-7,
        };
        let first = pid_update(&mut s, 0.0, 0.0, &cfg, 1e-7);
        for _ in 0..100 {
            assert_eq!(pid_update(&mut s, 0.0, 0.0, &cfg, 1e-7), first);
        }
    }

    #[test]
    fn ramp_matches_closed_form_integral() {
        // e(t) = c t sampled at the right end of each interval: the left
        // Riemann sum of the samples is c dt^2 n(n+1)/2.
        let cfg = PidConfig {
            k_p: 0.0,
            k_d: 0.0,
            ..table_one()
        };
        let c = 2e-6;
        let dt = 1e-7;
        let n = 5000u64;
        let mut s = PidState::default();
        let mut out = 0.0;
        for k in 1..=n {
            out = pid_update(&mut s, c * k as f64 * dt, 0.0, &cfg, dt);
        }
        let exact = cfg.k_i * c * dt * dt * (n * (n + 1) / 2) as f64;
        assert_relative_eq!(out, exact, max_relative = 1e-12);
    }

    #[test]
    fn proportional_and_derivative_terms() {
        let cfg = PidConfig {
            k_p: 2.0,
            k_i: 0.0,
            k_d: 0.5,
            ..table_one()
        };
        let mut s = PidState::default();
        assert_eq!(pid_update(&mut s, 3.0, 4.0, &cfg, 0.1), 8.0);
    }

    #[test]
    fn clamp_limits_integral() {
        let cfg = PidConfig {
            integrator_clamp: Some((-1e-12, 1e-12)),
            ..table_one()
        };
        let mut s = PidState::default();
        for _ in 0..100 {
            pid_update(&mut s, 1.0, 0.0, &cfg, 1.0);
        }
        assert_eq!(s.integral, 1e-12);
    }

    #[test]
    fn dynamic_error_examples() {
        let a_f = 50e-9;
        let a_r = 0.9 * a_f;
        let a_t = 0.95 * a_r;
        assert_eq!(dynamic_pid_error(a_t, a_r, a_t, 15.0), a_r - a_t);
        // (A_r - A_t) + K_s (A_t - A_f), evaluated by hand.
        assert_relative_eq!(
            dynamic_pid_error(a_f, a_r, a_t, 15.0),
            -1.0650000000000003e-07,
            max_relative = 1e-12
        );
    }

    proptest! {
        #[test]
        fn unit_gain_is_plain_error(a in 0.0f64..1e-7) {
            let e = dynamic_pid_error(a, 45e-9, 47.5e-9, 1.0);
            prop_assert!((e - (45e-9 - a)).abs() <= 1e-22);
        }

        #[test]
        fn continuous_at_threshold(k_s in 1.0f64..50.0, eps in 1e-18f64..1e-15) {
            let a_t = 47.5e-9;
            let lo = dynamic_pid_error(a_t - eps, 45e-9, a_t, k_s);
            let hi = dynamic_pid_error(a_t + eps, 45e-9, a_t, k_s);
            prop_assert!((hi - lo).abs() <= (k_s + 1.0) * eps * 1.0001 + 1e-22);
        }
    }
}
