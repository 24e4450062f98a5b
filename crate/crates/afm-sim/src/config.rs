//! Experiment configuration.
//!
//! A single JSON document with one section per parameter group. Every field
//! has a default, so `{}` is the reference setup: a 10-period ideal
//! calibration grid scanned at 1 mm/s with dynamic PID and Q control,
//! `A_f = 50 nm`. Thresholds and limits that default to multiples of other
//! parameters are `null` until set explicitly.

use std::path::{Path, PathBuf};

use afm_core::control::{
    ControllerConfig, ControllerSelection, HybridConfig, PidConfig, PredictiveConfig, Regulator,
    SpeedConfig,
};
use afm_core::demod::NoiseConfig;
use afm_core::model::{CantileverParams, InteractionParams, ZPiezoParams};
use afm_core::sample::{RasterPlan, SampleSurface};
use afm_core::sim::{EngageConfig, LineConfig, SolverConfig, DRIVE_DETUNING};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{HarnessError, Result};
use crate::heightmap::read_heightmap;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CantileverSection {
    pub omega_n: f64,
    pub q: f64,
    pub r: f64,
    pub k: f64,
}

impl Default for CantileverSection {
    fn default() -> Self {
        let c = CantileverParams::table_one();
        Self {
            omega_n: c.omega_n,
            q: c.q,
            r: c.r,
            k: c.k,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DriveSection {
    /// Drive frequency, rad/s; `null` means the reference detuning above
    /// `omega_n`.
    pub omega_d: Option<f64>,
    /// Controller updates per drive period.
    pub ticks_per_period: u32,
}

impl Default for DriveSection {
    fn default() -> Self {
        Self {
            omega_d: None,
            ticks_per_period: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeedbackSection {
    pub regulator: Regulator,
    pub a_f: f64,
    /// Defaults to `0.9 A_f`.
    pub a_r: Option<f64>,
    pub k_p: f64,
    pub k_i: f64,
    pub k_d: f64,
    /// Scan speed, or the initial speed when the speed regulator is on.
    pub v_x: f64,
    pub integrator_clamp: Option<(f64, f64)>,
}

impl Default for FeedbackSection {
    fn default() -> Self {
        Self {
            regulator: Regulator::DynamicPid,
            a_f: 50e-9,
            a_r: None,
            k_p: 0.0,
            k_i: 1e4,
            k_d: 0.0,
            v_x: 1e-3,
            integrator_clamp: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QControlSection {
    pub enabled: bool,
    pub q_prime: f64,
}

impl Default for QControlSection {
    fn default() -> Self {
        Self {
            enabled: true,
            q_prime: 30.0,
        }
    }
}

/// Hybrid PID; `k_s` and `a_t_plus` also parametrize the dynamic PID.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HybridSection {
    pub k_s: f64,
    /// Defaults to `0.95 A_f`.
    pub a_t_plus: Option<f64>,
    /// Defaults to `0.94 A_f`.
    pub a_t_minus: Option<f64>,
    /// Defaults to `0.5 A_r`.
    pub a_t_rl: Option<f64>,
    /// Defaults to `-400 A_f` per second.
    pub alpha_t: Option<f64>,
    pub dq_pl: f64,
    pub dq_rl: f64,
    pub k_tau: f64,
    pub guards_enabled: bool,
    pub recoil_mode: bool,
}

impl Default for HybridSection {
    fn default() -> Self {
        Self {
            k_s: 15.0,
            a_t_plus: None,
            a_t_minus: None,
            a_t_rl: None,
            alpha_t: None,
            dq_pl: 25.0,
            dq_rl: 25.0,
            k_tau: 5.0,
            guards_enabled: true,
            recoil_mode: true,
        }
    }
}

/// Scan-speed regulator. Unset limits derive from the hybrid thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpeedSection {
    pub enabled: bool,
    pub tau_v: f64,
    pub v_xm: Option<f64>,
    #[serde(rename = "v_xM")]
    pub v_x_max: Option<f64>,
    pub b_ma: Option<f64>,
    pub b_md: Option<f64>,
    pub b_la: Option<f64>,
    pub b_ld: Option<f64>,
    pub b_ra: Option<f64>,
    pub b_rd: Option<f64>,
}

impl Default for SpeedSection {
    fn default() -> Self {
        Self {
            enabled: false,
            tau_v: 0.12e-3,
            v_xm: None,
            v_x_max: None,
            b_ma: None,
            b_md: None,
            b_la: None,
            b_ld: None,
            b_ra: None,
            b_rd: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictiveSection {
    pub enabled: bool,
    pub m_pc: usize,
    /// Defaults to `0.1 A_f I_x`.
    pub e_sigma: Option<f64>,
    /// Defaults to `0.01 I_x`.
    pub n_w: Option<f64>,
    pub grid_points: usize,
}

impl Default for PredictiveSection {
    fn default() -> Self {
        Self {
            enabled: false,
            m_pc: 3,
            e_sigma: None,
            n_w: None,
            grid_points: 1001,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSection {
    pub enabled: bool,
    /// Standard deviation of the position noise, m.
    pub std: f64,
}

impl Default for NoiseSection {
    fn default() -> Self {
        Self {
            enabled: false,
            std: 0.1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SampleSection {
    Flat {
        height: f64,
    },
    CalibrationGrid {
        step_height: f64,
        period: f64,
    },
    QuasiSinusoid {
        amplitude: f64,
        period: f64,
    },
    /// Path relative to the config file.
    Heightmap {
        path: PathBuf,
    },
}

impl Default for SampleSection {
    fn default() -> Self {
        Self::CalibrationGrid {
            step_height: 28e-9,
            period: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RasterSection {
    pub lines: usize,
    /// Distance between lines along `i_y`, m.
    pub spacing: f64,
    /// `null` uses the height map's length.
    pub line_length: Option<f64>,
}

impl Default for RasterSection {
    fn default() -> Self {
        Self {
            lines: 1,
            spacing: 0.0,
            line_length: Some(10e-6),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub cantilever: CantileverSection,
    /// `null` switches the tip-sample force off.
    pub interaction_forces: Option<InteractionParams>,
    pub z_axis_piezo: ZPiezoParams,
    pub drive: DriveSection,
    pub feedback_controller: FeedbackSection,
    pub q_control: QControlSection,
    pub hybrid_pid: HybridSection,
    pub scan_speed_regulator: SpeedSection,
    pub predictive_controller: PredictiveSection,
    pub solver: SolverConfig,
    pub noise: NoiseSection,
    pub engage: EngageConfig,
    pub sample: SampleSection,
    pub raster: RasterSection,
}

/// A configuration with every derived value filled in.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub line: LineConfig,
    pub surface: SampleSurface,
    pub plan: RasterPlan,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::reference()
    }
}

impl ExperimentConfig {
    /// Reference setup (see module docs).
    pub fn reference() -> Self {
        Self {
            seed: 0,
            cantilever: CantileverSection::default(),
            interaction_forces: Some(InteractionParams::table_one()),
            z_axis_piezo: ZPiezoParams::table_one(),
            drive: DriveSection::default(),
            feedback_controller: FeedbackSection::default(),
            q_control: QControlSection::default(),
            hybrid_pid: HybridSection::default(),
            scan_speed_regulator: SpeedSection::default(),
            predictive_controller: PredictiveSection::default(),
            solver: SolverConfig::default(),
            noise: NoiseSection::default(),
            engage: EngageConfig::default(),
            sample: SampleSection::default(),
            raster: RasterSection::default(),
        }
    }

    /// Missing sections take the reference values; `"interaction_forces":
    /// null` switches the tip-sample force off.
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Applies `section.key=value` overrides. Values are parsed as JSON and
    /// fall back to plain strings. Setting `sample.kind` clears the other
    /// sample fields.
    pub fn with_overrides(&self, sets: &[String]) -> Result<Self> {
        let mut v = serde_json::to_value(self).expect("config serializes");
        for s in sets {
            let (key, raw) = s
                .split_once('=')
                .ok_or_else(|| HarnessError::Config(format!("override `{s}` is not key=value")))?;
            let value: Value =
                serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            let path: Vec<&str> = key.split('.').collect();
            let (leaf, parents) = path.split_last().expect("split yields one item");
            let mut node = &mut v;
            for p in parents {
                node = node.get_mut(*p).filter(|n| n.is_object()).ok_or_else(|| {
                    HarnessError::Config(format!("unknown section `{p}` in `{key}`"))
                })?;
            }
            let obj = node
                .as_object_mut()
                .ok_or_else(|| HarnessError::Config(format!("`{key}` does not name a field")))?;
            if *leaf == "kind" && parents == ["sample"] {
                obj.clear();
            } else if parents.is_empty() && !obj.contains_key(*leaf) {
                return Err(HarnessError::Config(format!("unknown key `{key}`")));
            }
            obj.insert(leaf.to_string(), value);
        }
        serde_json::from_value(v).map_err(|e| HarnessError::Config(e.to_string()))
    }

    fn selection(&self) -> ControllerSelection {
        ControllerSelection {
            regulator: self.feedback_controller.regulator,
            q_control: self.q_control.enabled,
            speed_regulator: self.scan_speed_regulator.enabled,
            predictive: self.predictive_controller.enabled,
        }
    }

    /// Controller parameters for scan lines of length `line_length`.
    pub fn controllers(&self, line_length: f64) -> ControllerConfig {
        let fb = &self.feedback_controller;
        let a_f = fb.a_f;
        let a_r = fb.a_r.unwrap_or(0.9 * a_f);
        let h = &self.hybrid_pid;
        let hybrid = HybridConfig {
            k_s: h.k_s,
            a_t_plus: h.a_t_plus.unwrap_or(0.95 * a_f),
            a_t_minus: h.a_t_minus.unwrap_or(0.94 * a_f),
            a_t_rl: h.a_t_rl.unwrap_or(0.5 * a_r),
            alpha_t: h.alpha_t.unwrap_or(-400.0 * a_f),
            dq_pl: h.dq_pl,
            dq_rl: h.dq_rl,
            q_prime: self.q_control.q_prime,
            k_tau: h.k_tau,
            guards_enabled: h.guards_enabled,
            recoil_mode: h.recoil_mode,
        };
        let s = &self.scan_speed_regulator;
        let derived = SpeedConfig::from_thresholds(
            fb.k_i,
            a_r,
            hybrid.a_t_rl,
            hybrid.a_t_plus,
            fb.v_x,
            s.tau_v,
        );
        let speed = SpeedConfig {
            tau_v: s.tau_v,
            v_x0: fb.v_x,
            v_xm: s.v_xm.unwrap_or(derived.v_xm),
            v_x_max: s.v_x_max.unwrap_or(derived.v_x_max),
            b_ma: s.b_ma.unwrap_or(derived.b_ma),
            b_md: s.b_md.unwrap_or(derived.b_md),
            b_la: s.b_la.unwrap_or(derived.b_la),
            b_ld: s.b_ld.unwrap_or(derived.b_ld),
            b_ra: s.b_ra.unwrap_or(derived.b_ra),
            b_rd: s.b_rd.unwrap_or(derived.b_rd),
        };
        let p = &self.predictive_controller;
        ControllerConfig {
            selection: self.selection(),
            pid: PidConfig {
                k_p: fb.k_p,
                k_i: fb.k_i,
                k_d: fb.k_d,
                a_r,
                a_f,
                integrator_clamp: fb.integrator_clamp,
            },
            hybrid,
            speed,
            predictive: PredictiveConfig {
                m_pc: p.m_pc,
                e_sigma: p.e_sigma.unwrap_or(0.1 * a_f * line_length),
                n_w: p.n_w.unwrap_or(0.01 * line_length),
                grid_points: p.grid_points,
            },
        }
    }

    /// Line setup without loading the sample.
    pub fn line_config(&self, line_length: f64) -> Result<LineConfig> {
        let c = &self.cantilever;
        let cantilever = CantileverParams::new(c.omega_n, c.q, c.r, c.k)?;
        let line = LineConfig {
            cantilever,
            interaction: self.interaction_forces,
            zpiezo: self.z_axis_piezo,
            solver: self.solver,
            controllers: self.controllers(line_length),
            omega_d: self.drive.omega_d.unwrap_or(DRIVE_DETUNING * c.omega_n),
            noise: NoiseConfig {
                enabled: self.noise.enabled,
                std: self.noise.std,
                seed: self.seed,
            },
            ticks_per_period: self.drive.ticks_per_period,
            engage: self.engage,
        };
        line.validate(line_length)?;
        Ok(line)
    }

    /// Anchors a relative height-map path at `base_dir`, so the config can be
    /// echoed into another directory.
    pub fn anchored(&self, base_dir: &Path) -> Self {
        let mut c = self.clone();
        if let SampleSection::Heightmap { path } = &mut c.sample {
            if path.is_relative() {
                let joined = base_dir.join(&*path);
                *path = std::fs::canonicalize(&joined).unwrap_or(joined);
            }
        }
        c
    }

    /// Loads the sample and derives every parameter. `base_dir` anchors a
    /// relative height-map path.
    pub fn resolve(&self, base_dir: &Path) -> Result<Resolved> {
        let surface = match &self.sample {
            SampleSection::Flat { height } => SampleSurface::Flat { height: *height },
            SampleSection::CalibrationGrid {
                step_height,
                period,
            } => SampleSurface::CalibrationGrid {
                step_height: *step_height,
                period: *period,
            },
            SampleSection::QuasiSinusoid { amplitude, period } => SampleSurface::QuasiSinusoid {
                amplitude: *amplitude,
                period: *period,
            },
            SampleSection::Heightmap { path } => {
                SampleSurface::Grid(read_heightmap(&base_dir.join(path))?)
            }
        };
        surface.validate()?;
        let line_length = self
            .raster
            .line_length
            .or(surface.length_x())
            .ok_or_else(|| {
                HarnessError::Config("raster.line_length is required for generated samples".into())
            })?;
        if let Some(lx) = surface.length_x() {
            if line_length > lx {
                return Err(HarnessError::Config(format!(
                    "line length {line_length:e} m exceeds the height map ({lx:e} m)"
                )));
            }
        }
        let plan = RasterPlan::uniform(self.raster.lines, self.raster.spacing, line_length);
        if self.raster.lines > 1 && !(self.raster.spacing > 0.0) {
            return Err(HarnessError::Config(
                "raster.spacing must be positive for several lines".into(),
            ));
        }
        plan.validate()?;
        if self.predictive_controller.enabled && self.raster.lines < 2 {
            return Err(HarnessError::Config(
                "the predictive controller needs at least 2 lines".into(),
            ));
        }
        Ok(Resolved {
            line: self.line_config(line_length)?,
            surface,
            plan,
            seed: self.seed,
        })
    }
}
