//! Four-mode hybrid PID: a guarded state machine that switches the error
//! gain of the z-piezo law and the damping applied through the dither piezo.

use crate::model::{drive_for_amplitude, qcontrol_gain, CantileverParams};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Mode {
    #[default]
    Regular = 1,
    ProbeLoss = 2,
    Recovery = 3,
    Recoil = 4,
}

impl Mode {
    pub fn index(self) -> u8 {
        self as u8
    }

    pub fn from_index(q: u8) -> Option<Self> {
        match q {
            1 => Some(Self::Regular),
            2 => Some(Self::ProbeLoss),
            3 => Some(Self::Recovery),
            4 => Some(Self::Recoil),
            _ => None,
        }
    }
}

/// Thresholds and gains of the hybrid PID.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct HybridConfig {
    /// Error gain above `a_t_plus` in ProbeLoss mode (and in the dynamic PID).
    pub k_s: f64,
    /// Probe-loss entry threshold, m.
    pub a_t_plus: f64,
    /// Probe-loss exit threshold, m.
    pub a_t_minus: f64,
    /// Recoil entry threshold, m.
    pub a_t_rl: f64,
    /// Amplitude-rate threshold marking an impact, m/s (negative).
    pub alpha_t: f64,
    pub dq_pl: f64,
    pub dq_rl: f64,
    /// Quality factor imposed by Q control in Regular and ProbeLoss modes.
    pub q_prime: f64,
    /// Recovery/Recoil timeout in amplitude time constants.
    pub k_tau: f64,
    /// With guards disabled the controller stays in Regular mode.
    #[cfg_attr(feature = "serde", serde(default = "yes"))]
    pub guards_enabled: bool,
    /// Allows the Regular -> Recoil transition.
    #[cfg_attr(feature = "serde", serde(default = "yes"))]
    pub recoil_mode: bool,
}

#[cfg(feature = "serde")]
fn yes() -> bool {
    true
}

impl HybridConfig {
    pub fn validate(&self, a_r: f64) -> Result<()> {
        if !(self.a_t_minus < self.a_t_plus) {
            return Err(Error::InvalidParameter {
                name: "a_t_minus",
                reason: "must be below a_t_plus",
            });
        }
        if !(self.a_t_plus > a_r) {
            return Err(Error::InvalidParameter {
                name: "a_t_plus",
                reason: "must exceed the reference amplitude",
            });
        }
        if !(self.a_t_rl < a_r) {
            return Err(Error::InvalidParameter {
                name: "a_t_rl",
                reason: "must be below the reference amplitude",
            });
        }
        if !(self.dq_pl >= 0.0 && self.dq_rl >= 0.0) {
            return Err(Error::InvalidParameter {
                name: "dq",
                reason: "damping increments must be non-negative",
            });
        }
        if !(self.q_prime > 0.0 && self.k_tau > 0.0 && self.k_s > 0.0) {
            return Err(Error::InvalidParameter {
                name: "hybrid",
                reason: "q_prime, k_tau and k_s must be positive",
            });
        }
        Ok(())
    }
}

/// Discrete state of the hybrid PID.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct HybridState {
    pub mode: Mode,
    /// Set once the amplitude rate turned positive inside Recovery/Recoil.
    pub rho: bool,
    /// Entry time of the current Recovery/Recoil episode, s.
    pub t0: f64,
}

/// Applies at most one guarded transition.
pub fn hybrid_transition(
    h: HybridState,
    a: f64,
    da_dt: f64,
    t: f64,
    cfg: &HybridConfig,
    tau_a: f64,
) -> HybridState {
    if !cfg.guards_enabled {
        return h;
    }
    let timed_out = t - h.t0 >= cfg.k_tau * tau_a;
    let enter = |mode| HybridState {
        mode,
        rho: false,
        t0: t,
    };
    let regular = HybridState {
        mode: Mode::Regular,
        ..h
    };
    match h.mode {
        Mode::Regular => {
            if a >= cfg.a_t_plus {
                HybridState {
                    mode: Mode::ProbeLoss,
                    ..h
                }
            } else if cfg.recoil_mode && a <= cfg.a_t_rl {
                enter(Mode::Recoil)
            } else {
                h
            }
        }
        Mode::ProbeLoss => {
            // The impact guard wins over the threshold exit.
            if da_dt < cfg.alpha_t {
                enter(Mode::Recovery)
            } else if a <= cfg.a_t_minus {
                regular
            } else {
                h
            }
        }
        Mode::Recovery => {
            if (da_dt < 0.0 && h.rho) || timed_out {
                regular
            } else if da_dt > 0.0 && !h.rho {
                HybridState { rho: true, ..h }
            } else {
                h
            }
        }
        Mode::Recoil => {
            if (da_dt < cfg.alpha_t && h.rho) || timed_out {
                regular
            } else if da_dt > 0.0 && !h.rho {
                HybridState { rho: true, ..h }
            } else {
                h
            }
        }
    }
}

/// Mode-dependent gains of the hybrid PID.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HybridOutputs {
    /// Error gain above `a_t_plus`.
    pub k_s: f64,
    /// Dither drive amplitude, m/s^2.
    pub drive_amplitude: f64,
    /// Velocity feedback gain, 1/s.
    pub k_q: f64,
    /// Effective quality factor the drive and gain were computed for.
    pub q_eff: f64,
}

pub fn hybrid_outputs(
    mode: Mode,
    a: f64,
    cfg: &HybridConfig,
    c: &CantileverParams,
    a_r: f64,
    a_f: f64,
    omega_d: f64,
) -> Result<HybridOutputs> {
    let q_eff = match mode {
        Mode::Regular | Mode::ProbeLoss => cfg.q_prime,
        Mode::Recovery => {
            let depth = ((a_r - a) / (a_r - a_f)).abs().min(1.0);
            cfg.q_prime - cfg.dq_pl * depth
        }
        Mode::Recoil => {
            let depth = ((a_r - a) / a_r).abs().min(1.0);
            cfg.q_prime - cfg.dq_rl * depth
        }
    };
    if !(q_eff > 0.0) {
        return Err(Error::EffectiveQNonPositive { q: q_eff });
    }
    Ok(HybridOutputs {
        k_s: if mode == Mode::ProbeLoss {
            cfg.k_s
        } else {
            1.0
        },
        drive_amplitude: drive_for_amplitude(a_f, q_eff, omega_d, c),
        k_q: qcontrol_gain(q_eff, c),
        q_eff,
    })
}
