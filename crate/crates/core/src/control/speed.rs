//! Adaptive scan-speed regulation from the rate of the commanded base height.

use crate::math;
use crate::{Error, Result};

/// Limits of the speed adaptation law. Rates are in m/s of base height,
/// speeds in m/s of lateral motion.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SpeedConfig {
    /// Time constant, s.
    pub tau_v: f64,
    /// Initial speed.
    pub v_x0: f64,
    pub v_xm: f64,
    #[cfg_attr(feature = "serde", serde(rename = "v_xM"))]
    pub v_x_max: f64,
    pub b_ma: f64,
    pub b_md: f64,
    pub b_la: f64,
    pub b_ld: f64,
    pub b_ra: f64,
    pub b_rd: f64,
}

impl SpeedConfig {
    /// Limits derived from the hybrid PID thresholds: the maximal rates are
    /// `K_I (A_r - A_t,RL)` and `K_I (A_r - A_t+)`, the limits 90 % and the
    /// references 80 % of those.
    pub fn from_thresholds(
        k_i: f64,
        a_r: f64,
        a_t_rl: f64,
        a_t_plus: f64,
        v_x0: f64,
        tau_v: f64,
    ) -> Self {
        let b_ma = k_i * (a_r - a_t_rl);
        let b_md = k_i * (a_r - a_t_plus);
        Self {
            tau_v,
            v_x0,
            v_xm: 0.1 * v_x0,
            v_x_max: v_x0,
            b_ma,
            b_md,
            b_la: 0.9 * b_ma,
            b_ld: 0.9 * b_md,
            b_ra: 0.8 * b_ma,
            b_rd: 0.8 * b_md,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let chain = self.b_md < self.b_ld
            && self.b_ld < self.b_rd
            && self.b_rd < 0.0
            && 0.0 < self.b_ra
            && self.b_ra < self.b_la
            && self.b_la < self.b_ma;
        if !chain {
            return Err(Error::InvalidParameter {
                name: "speed limits",
                reason: "require b_Md < b_Ld < b_rd < 0 < b_ra < b_La < b_Ma",
            });
        }
        if !(self.v_xm <= self.v_x0 && self.v_x0 <= self.v_x_max && self.v_xm > 0.0) {
            return Err(Error::InvalidParameter {
                name: "speed bounds",
                reason: "require 0 < V_xm <= V_x0 <= V_xM",
            });
        }
        if !(self.tau_v > 0.0) {
            return Err(Error::InvalidParameter {
                name: "tau_v",
                reason: "must be positive",
            });
        }
        Ok(())
    }

    /// Equilibrium speed of the adaptation law before clamping.
    pub fn target(&self, db_dt: f64) -> f64 {
        if db_dt > self.b_ra {
            let k = self.v_x_max / (self.b_la - self.b_ra).abs();
            self.v_x_max - k * (db_dt - self.b_ra).abs()
        } else if db_dt < self.b_rd {
            let k = self.v_x_max / (self.b_ld - self.b_rd).abs();
            self.v_x_max - k * (db_dt - self.b_rd).abs()
        } else {
            self.v_x_max
        }
    }
}

/// Advances the first-order speed law over `dt` with `db_dt` held, then
/// clamps to `[V_xm, V_xM]`.
///
/// The law is linear with a constant input over the interval, so it is
/// integrated exactly.
pub fn speed_update(v_x: f64, db_dt: f64, cfg: &SpeedConfig, dt: f64) -> f64 {
    let target = cfg.target(db_dt);
    let v = target + (v_x - target) * math::exp(-dt / cfg.tau_v);
    v.clamp(cfg.v_xm, cfg.v_x_max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn cfg() -> SpeedConfig {
        SpeedConfig::from_thresholds(1e4, 45e-9, 22.5e-9, 47.5e-9, 1e-3, 0.12e-3)
    }

    fn hold(v0: f64, db_dt: f64, c: &SpeedConfig) -> f64 {
        let mut v = v0;
        for _ in 0..10_000 {
            v = speed_update(v, db_dt, c, 1e-6);
        }
        v
    }

    #[test]
    fn reference_chain_is_valid() {
        cfg().validate().unwrap();
    }

    #[test]
    fn middle_band_drives_to_max() {
        let c = cfg();
        assert_relative_eq!(hold(c.v_xm, 0.0, &c), c.v_x_max, max_relative = 1e-12);
        assert_relative_eq!(hold(c.v_xm, c.b_rd, &c), c.v_x_max, max_relative = 1e-12);
    }

    #[test]
    fn limit_rate_stops_the_scan() {
        let c = cfg();
        assert!(c.target(c.b_la).abs() < 1e-15);
        assert!(c.target(c.b_ld).abs() < 1e-15);
        assert_eq!(hold(c.v_x_max, c.b_la, &c), c.v_xm);
    }

    #[test]
    fn branches_meet_at_references() {
        let c = cfg();
        assert_eq!(c.target(c.b_ra), c.v_x_max);
        let just_above = c.target(c.b_ra * (1.0 + 1e-12));
        assert!((just_above - c.v_x_max).abs() < 1e-10 * c.v_x_max);
    }

    #[test]
    fn infinite_limits_hold_max_speed() {
        let c = SpeedConfig {
            b_ra: f64::INFINITY,
            b_rd: f64::NEG_INFINITY,
            ..cfg()
        };
        let mut v = c.v_x_max;
        for k in 0..1000 {
            v = speed_update(v, (k as f64 - 500.0) * 1e-3, &c, 1.75e-7);
            assert_eq!(v, c.v_x_max);
        }
    }

    proptest! {
        #[test]
        fn output_within_bounds(v in 0.0f64..2e-3, db in -1e-3f64..1e-3, dt in 1e-9f64..1e-3) {
            let c = cfg();
            let out = speed_update(v, db, &c, dt);
            prop_assert!(out >= c.v_xm && out <= c.v_x_max);
        }

        #[test]
        fn contraction_toward_equilibrium(v1 in 1e-4f64..1e-3, v2 in 1e-4f64..1e-3, db in -3e-5f64..2e-4) {
            let c = cfg();
            let a = speed_update(v1, db, &c, 1e-6);
            let b = speed_update(v2, db, &c, 1e-6);
            prop_assert!((a - b).abs() <= (v1 - v2).abs());
        }
    }
}
