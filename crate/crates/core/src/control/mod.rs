//! Amplitude regulators and scan-level controllers.

mod hybrid;
mod pid;
mod predictive;
mod speed;

pub use hybrid::{
    hybrid_outputs, hybrid_transition, HybridConfig, HybridOutputs, HybridState, Mode,
};
pub use pid::{dynamic_pid_error, pid_update, PidConfig, PidState};
pub use predictive::{
    adaptive_gains, predictive_feedforward, resample_uniform, window_filter, Feedforward,
    LineProfile, PredictiveConfig, PredictiveHistory,
};
pub use speed::{speed_update, SpeedConfig};

/// Which amplitude regulator drives the z-piezo.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Regulator {
    /// PID on `A_r - A`.
    Pid,
    /// PID with the probe-loss error gain above the threshold.
    DynamicPid,
    /// Four-mode hybrid PID acting on both piezos.
    HybridPid,
}

/// Controller feature switches for one experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ControllerSelection {
    pub regulator: Regulator,
    pub q_control: bool,
    pub speed_regulator: bool,
    pub predictive: bool,
}

impl ControllerSelection {
    pub fn validate(&self) -> crate::Result<()> {
        if self.regulator == Regulator::HybridPid && !self.q_control {
            return Err(crate::Error::InvalidParameter {
                name: "q_control",
                reason: "the hybrid PID requires Q control",
            });
        }
        Ok(())
    }
}

/// Everything the controller stack of one line needs.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ControllerConfig {
    pub selection: ControllerSelection,
    pub pid: PidConfig,
    /// Thresholds and gains of the hybrid PID; `k_s`, `a_t_plus` and
    /// `q_prime` are shared with the dynamic PID and plain Q control.
    pub hybrid: HybridConfig,
    pub speed: SpeedConfig,
    pub predictive: PredictiveConfig,
}

impl ControllerConfig {
    /// Reference gains and thresholds for free amplitude `a_f`, scan speed
    /// `v_x0` and line length `line_length`.
    pub fn table_one(
        selection: ControllerSelection,
        a_f: f64,
        v_x0: f64,
        line_length: f64,
    ) -> Self {
        let a_r = 0.9 * a_f;
        let k_i = 1e4;
        let hybrid = HybridConfig {
            k_s: 15.0,
            a_t_plus: 0.95 * a_f,
            a_t_minus: 0.94 * a_f,
            a_t_rl: 0.5 * a_r,
            alpha_t: -400.0 * a_f,
            dq_pl: 25.0,
            dq_rl: 25.0,
            q_prime: 30.0,
            k_tau: 5.0,
            guards_enabled: true,
            recoil_mode: true,
        };
        Self {
            selection,
            pid: PidConfig {
                k_p: 0.0,
                k_i,
                k_d: 0.0,
                a_r,
                a_f,
                integrator_clamp: None,
            },
            hybrid,
            speed: SpeedConfig::from_thresholds(
                k_i,
                a_r,
                hybrid.a_t_rl,
                hybrid.a_t_plus,
                v_x0,
                0.12e-3,
            ),
            predictive: PredictiveConfig {
                m_pc: 3,
                e_sigma: 0.1 * a_f * line_length,
                n_w: 0.01 * line_length,
                grid_points: 1001,
            },
        }
    }

    pub fn validate(&self, line_length: f64) -> crate::Result<()> {
        self.selection.validate()?;
        self.pid.validate()?;
        if self.selection.regulator == Regulator::HybridPid {
            self.hybrid.validate(self.pid.a_r)?;
        } else if self.selection.q_control && !(self.hybrid.q_prime > 0.0) {
            return Err(crate::Error::InvalidParameter {
                name: "q_prime",
                reason: "must be positive",
            });
        }
        if self.selection.speed_regulator {
            self.speed.validate()?;
        } else if !(self.speed.v_x0 > 0.0) {
            return Err(crate::Error::InvalidParameter {
                name: "v_x0",
                reason: "scan speed must be positive",
            });
        }
        if self.selection.predictive {
            self.predictive.validate(line_length)?;
        }
        Ok(())
    }
}
