//! Event-located integration of the cantilever and z-piezo under sampled
//! controllers, one scan line at a time.
//!
//! The continuous state is `[x1, x2, b, w]`. Controllers run at a fixed
//! control period; between control ticks the surface height under the tip,
//! the commanded base height and the dither drive are held. Impacts are
//! located on the dense output of each accepted step and handled with the
//! restitution reset.

mod dopri;
mod event;

use alloc::vec::Vec;
use core::f64::consts::PI;

pub use dopri::{Attempt, Dopri5, Step};
pub use event::locate_impact;

use crate::control::{
    dynamic_pid_error, hybrid_outputs, hybrid_transition, pid_update, speed_update,
    ControllerConfig, Feedforward, HybridState, Mode, PidState, Regulator,
};
use crate::demod::{Demodulator, NoiseConfig, NoiseSource};
use crate::metrics::{ArtefactConfig, ImpactEvent, LineTrace, TraceSample};
use crate::model::{
    drive_for_amplitude, qcontrol_gain, steady_free_oscillation, CantileverParams, DitherDrive,
    DmtForce, InteractionParams, ZPiezoParams,
};
use crate::sample::SurfaceLine;
use crate::{Error, Result};

/// Integrator and event settings.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct SolverConfig {
    pub max_step: f64,
    pub min_step: f64,
    pub rel_tol: f64,
    /// Absolute tolerance on positions, m.
    pub abs_tol: f64,
    /// Absolute tolerance on velocities, m/s.
    pub abs_tol_vel: f64,
    /// Accepted residual gap at a located impact, m.
    pub penetration_tol: f64,
    /// Time after an impact during which crossings are ignored, s.
    pub refractory: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_step: 1e-7,
            min_step: 1e-13,
            rel_tol: 1e-4,
            abs_tol: 1e-12,
            abs_tol_vel: 1e-6,
            penetration_tol: 1e-13,
            refractory: 1e-9,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_step > 0.0 && self.min_step < self.max_step) {
            return Err(Error::InvalidParameter {
                name: "solver steps",
                reason: "require 0 < min_step < max_step",
            });
        }
        if !(self.rel_tol > 0.0
            && self.abs_tol > 0.0
            && self.abs_tol_vel > 0.0
            && self.penetration_tol > 0.0)
        {
            return Err(Error::InvalidParameter {
                name: "solver tolerances",
                reason: "must be positive",
            });
        }
        if !(self.refractory >= 0.0) {
            return Err(Error::InvalidParameter {
                name: "refractory",
                reason: "must be non-negative",
            });
        }
        Ok(())
    }

    fn stepper(&self) -> Dopri5<4> {
        Dopri5::new(
            self.rel_tol,
            [
                self.abs_tol,
                self.abs_tol_vel,
                self.abs_tol,
                self.abs_tol_vel,
            ],
            self.min_step,
            self.max_step,
        )
    }
}

/// Approach phase before each line.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct EngageConfig {
    /// Initial gap between the lowest tip position and the surface, m.
    pub clearance: f64,
    /// Relative band around `A_r` that counts as settled.
    pub tolerance: f64,
    /// Time the amplitude must stay in the band, in amplitude time constants.
    pub hold: f64,
    /// Give up after this long, s.
    pub max_time: f64,
}

impl Default for EngageConfig {
    fn default() -> Self {
        Self {
            clearance: 1e-9,
            tolerance: 0.01,
            hold: 2.0,
            max_time: 2e-3,
        }
    }
}

/// Drive frequency of the reference setup relative to `omega_n`.
///
/// At exact resonance and `A_r = 0.9 A_f` the tip settles into a period-two
/// grazing pattern on a flat sample; from about `1.002 omega_n` upward it taps
/// once per period.
pub const DRIVE_DETUNING: f64 = 1.005;

/// Physical and numerical setup shared by all lines of a scan.
#[derive(Debug, Clone, PartialEq)]
pub struct LineConfig {
    pub cantilever: CantileverParams,
    /// `None` switches the tip-sample force off.
    pub interaction: Option<InteractionParams>,
    pub zpiezo: ZPiezoParams,
    pub solver: SolverConfig,
    pub controllers: ControllerConfig,
    pub omega_d: f64,
    pub noise: NoiseConfig,
    /// Control ticks per drive period.
    pub ticks_per_period: u32,
    pub engage: EngageConfig,
}

impl LineConfig {
    /// Reference cantilever, tip, piezo and solver, driven at
    /// [`DRIVE_DETUNING`] times the resonance.
    pub fn table_one(controllers: ControllerConfig) -> Self {
        let cantilever = CantileverParams::table_one();
        Self {
            cantilever,
            interaction: Some(InteractionParams::table_one()),
            zpiezo: ZPiezoParams::table_one(),
            solver: SolverConfig::default(),
            controllers,
            omega_d: DRIVE_DETUNING * cantilever.omega_n,
            noise: NoiseConfig::default(),
            ticks_per_period: 20,
            engage: EngageConfig::default(),
        }
    }

    pub fn validate(&self, line_length: f64) -> Result<()> {
        self.solver.validate()?;
        self.zpiezo.validate()?;
        if let Some(p) = &self.interaction {
            p.validate()?;
        }
        self.controllers.validate(line_length)?;
        if !(self.omega_d > 0.0) || self.ticks_per_period == 0 {
            return Err(Error::InvalidParameter {
                name: "omega_d",
                reason: "drive frequency and tick count must be positive",
            });
        }
        Ok(())
    }

    pub fn a_f(&self) -> f64 {
        self.controllers.pid.a_f
    }

    /// Quality factor in force when no hybrid mode modifies it.
    pub fn nominal_q(&self) -> f64 {
        if self.controllers.selection.q_control {
            self.controllers.hybrid.q_prime
        } else {
            self.cantilever.q
        }
    }

    /// Amplitude time constant at the nominal quality factor.
    pub fn tau_a(&self) -> f64 {
        self.cantilever.amplitude_time_constant(self.nominal_q())
    }

    pub fn control_period(&self) -> f64 {
        2.0 * PI / self.omega_d / self.ticks_per_period as f64
    }

    /// Artefact thresholds matching this configuration.
    pub fn artefacts(&self) -> ArtefactConfig {
        let h = &self.controllers.hybrid;
        ArtefactConfig {
            a_t_plus: h.a_t_plus,
            a_t_minus: h.a_t_minus,
            a_t_rl: h.a_t_rl,
            tau_a: self.tau_a(),
            recovery_window: 10.0,
            use_modes: self.controllers.selection.regulator == Regulator::HybridPid,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Plant {
    omega_n2: f64,
    damping: f64,
    omega_zp2: f64,
    damping_zp: f64,
    dc_gain: f64,
    force: Option<DmtForce>,
}

#[derive(Debug, Clone, Copy)]
struct Held {
    drive: DitherDrive,
    sigma: f64,
    b_cmd: f64,
}

#[inline]
fn rhs(p: &Plant, h: &Held, t: f64, y: &[f64; 4]) -> [f64; 4] {
    let f = match &p.force {
        Some(force) => force.accel(y[2] + y[0] - h.sigma),
        None => 0.0,
    };
    let u = h.drive.amplitude * crate::math::sin(h.drive.omega_d * t) - h.drive.k_q * y[1];
    [
        y[1],
        -p.omega_n2 * y[0] - p.damping * y[1] + u + f,
        y[3],
        p.omega_zp2 * (p.dc_gain * h.b_cmd - y[2]) - p.damping_zp * y[3],
    ]
}

/// Simulation of one scan line: construct, [`engage`](Self::engage), then
/// [`scan`](Self::scan).
pub struct LineSim<'a> {
    cfg: &'a LineConfig,
    surface: SurfaceLine<'a>,
    ff: &'a Feedforward,
    plant: Plant,
    held: Held,
    solver: Dopri5<4>,
    t: f64,
    y: [f64; 4],
    f: [f64; 4],
    tick: u64,
    tc: f64,
    i_x: f64,
    v_x: f64,
    scanning: bool,
    demod: Demodulator,
    noise: NoiseSource,
    pid: PidState,
    b_pid_prev: f64,
    e_prev: Option<f64>,
    hybrid: HybridState,
    nominal_drive: f64,
    nominal_k_q: f64,
    tau_a: f64,
    refractory_until: f64,
    impacts: Vec<ImpactEvent>,
}

impl<'a> LineSim<'a> {
    /// Places the tip in steady free oscillation with its lowest point
    /// `clearance` above the surface at `i_x = 0`.
    pub fn new(
        cfg: &'a LineConfig,
        surface: SurfaceLine<'a>,
        ff: &'a Feedforward,
        stream: u64,
    ) -> Result<Self> {
        cfg.solver.validate()?;
        let c = &cfg.cantilever;
        let a_f = cfg.a_f();
        let q_nom = cfg.nominal_q();
        let nominal_drive = drive_for_amplitude(a_f, q_nom, cfg.omega_d, c);
        let nominal_k_q = if cfg.controllers.selection.q_control {
            qcontrol_gain(q_nom, c)
        } else {
            0.0
        };
        let drive = DitherDrive {
            amplitude: nominal_drive,
            omega_d: cfg.omega_d,
            k_q: nominal_k_q,
        };
        let tip = steady_free_oscillation(&drive, c, 0.0)?;
        let sigma0 = surface.height(0.0);
        let b0 = sigma0 + a_f + cfg.engage.clearance;
        let plant = Plant {
            omega_n2: c.omega_n * c.omega_n,
            damping: c.omega_n / c.q,
            omega_zp2: cfg.zpiezo.omega_zp * cfg.zpiezo.omega_zp,
            damping_zp: cfg.zpiezo.omega_zp / cfg.zpiezo.q_zp,
            dc_gain: cfg.zpiezo.dc_gain,
            force: cfg.interaction.as_ref().map(|p| DmtForce::new(p, c.m)),
        };
        let held = Held {
            drive,
            sigma: sigma0,
            b_cmd: b0,
        };
        let y = [tip.x1, tip.x2, b0 / cfg.zpiezo.dc_gain, 0.0];
        let f = rhs(&plant, &held, 0.0, &y);
        let bias = b0 - ff.at(0.0);
        let mut sim = Self {
            cfg,
            surface,
            ff,
            plant,
            held,
            solver: cfg.solver.stepper(),
            t: 0.0,
            y,
            f,
            tick: 0,
            tc: cfg.control_period(),
            i_x: 0.0,
            v_x: 0.0,
            scanning: false,
            demod: Demodulator::new(cfg.omega_d, 0.0, a_f),
            noise: NoiseSource::new(&cfg.noise, stream)?,
            pid: PidState {
                integral: 0.0,
                bias,
            },
            b_pid_prev: bias,
            e_prev: None,
            hybrid: HybridState::default(),
            nominal_drive,
            nominal_k_q,
            tau_a: cfg.tau_a(),
            refractory_until: f64::NEG_INFINITY,
            impacts: Vec::new(),
        };
        sim.control()?;
        Ok(sim)
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn tip(&self) -> (f64, f64) {
        (self.y[0], self.y[1])
    }

    pub fn base(&self) -> f64 {
        self.y[2]
    }

    pub fn b_cmd(&self) -> f64 {
        self.held.b_cmd
    }

    pub fn i_x(&self) -> f64 {
        self.i_x
    }

    pub fn v_x(&self) -> f64 {
        self.v_x
    }

    pub fn amplitude(&self) -> f64 {
        self.demod.amplitude()
    }

    pub fn mode(&self) -> Mode {
        self.hybrid.mode
    }

    pub fn impacts(&self) -> &[ImpactEvent] {
        &self.impacts
    }

    /// Full continuous state `[x1, x2, b, w]`.
    pub fn state(&self) -> [f64; 4] {
        self.y
    }

    /// Dither input currently held.
    pub fn drive(&self) -> DitherDrive {
        self.held.drive
    }

    /// Overwrites the tip position and velocity.
    pub fn set_tip(&mut self, x1: f64, x2: f64) {
        self.y[0] = x1;
        self.y[1] = x2;
        self.f = rhs(&self.plant, &self.held, self.t, &self.y);
    }

    /// Surface height currently held under the tip.
    pub fn sigma(&self) -> f64 {
        self.held.sigma
    }

    /// Runs at zero lateral speed until the amplitude has settled at `A_r`.
    /// Returns the time at which it did.
    pub fn engage(&mut self) -> Result<f64> {
        let a_r = self.cfg.controllers.pid.a_r;
        let band = self.cfg.engage.tolerance * a_r;
        let hold = self.cfg.engage.hold * self.tau_a;
        let mut since: Option<f64> = None;
        loop {
            self.advance_tick()?;
            self.control()?;
            let ok =
                (self.demod.amplitude() - a_r).abs() <= band && self.hybrid.mode == Mode::Regular;
            if ok {
                let t0 = *since.get_or_insert(self.t);
                if self.t - t0 >= hold {
                    return Ok(self.t);
                }
            } else {
                since = None;
            }
            if self.t >= self.cfg.engage.max_time {
                return Err(Error::EngagementFailed {
                    t_max: self.cfg.engage.max_time,
                });
            }
        }
    }

    /// Keeps the current lateral speed for `duration` seconds.
    pub fn run_for(&mut self, duration: f64) -> Result<()> {
        let t_end = self.t + duration;
        while self.t < t_end - 0.5 * self.tc {
            self.advance_tick()?;
            self.control()?;
        }
        Ok(())
    }

    /// Integrates for `duration` seconds with all controller outputs frozen.
    pub fn coast(&mut self, duration: f64) -> Result<()> {
        self.advance_to(self.t + duration)?;
        // Resume the control schedule at the next tick boundary.
        self.tick = crate::math::floor(self.t / self.tc) as u64;
        Ok(())
    }

    /// Scans from the current position to `line_length`, recording one row
    /// per drive period.
    pub fn scan(&mut self, line_length: f64) -> Result<LineTrace> {
        self.scanning = true;
        self.v_x = self.cfg.controllers.speed.v_x0;
        let first_impact = self.impacts.len();
        let t_start = self.t;
        let tick0 = self.tick;
        let every = self.cfg.ticks_per_period as u64;
        let mut samples = Vec::new();
        loop {
            if (self.tick - tick0).is_multiple_of(every) {
                samples.push(self.row());
            }
            if self.i_x >= line_length {
                break;
            }
            self.advance_tick()?;
            self.control()?;
        }
        self.scanning = false;
        Ok(LineTrace {
            samples,
            impacts: self.impacts[first_impact..].to_vec(),
            t_start,
            t_end: self.t,
            k_sigma_sum: self.ff.gain_sum(),
        })
    }

    fn row(&self) -> TraceSample {
        let a = self.demod.amplitude();
        let b = self.y[2];
        TraceSample {
            t: self.t,
            i_x: self.i_x,
            sigma: self.held.sigma,
            sigma_hat: b - a,
            b,
            b_cmd: self.held.b_cmd,
            a,
            v_x: self.v_x,
            q: if self.cfg.controllers.selection.regulator == Regulator::HybridPid {
                self.hybrid.mode.index()
            } else {
                1
            },
        }
    }

    /// Controller update at the current tick.
    fn control(&mut self) -> Result<()> {
        self.held.sigma = self.surface.height(self.i_x);
        self.project(self.t, true);
        let c = &self.cfg.controllers;
        let a = self.demod.amplitude();
        let (k_s, drive, k_q) = match c.selection.regulator {
            Regulator::HybridPid => {
                self.hybrid = hybrid_transition(
                    self.hybrid,
                    a,
                    self.demod.rate(),
                    self.t,
                    &c.hybrid,
                    self.tau_a,
                );
                let o = hybrid_outputs(
                    self.hybrid.mode,
                    a,
                    &c.hybrid,
                    &self.cfg.cantilever,
                    c.pid.a_r,
                    c.pid.a_f,
                    self.cfg.omega_d,
                )?;
                (o.k_s, o.drive_amplitude, o.k_q)
            }
            Regulator::DynamicPid => (c.hybrid.k_s, self.nominal_drive, self.nominal_k_q),
            Regulator::Pid => (1.0, self.nominal_drive, self.nominal_k_q),
        };
        let e = match c.selection.regulator {
            Regulator::Pid => c.pid.a_r - a,
            _ => dynamic_pid_error(a, c.pid.a_r, c.hybrid.a_t_plus, k_s),
        };
        let de = self.e_prev.map_or(0.0, |p| (e - p) / self.tc);
        self.e_prev = Some(e);
        let b_pid = pid_update(&mut self.pid, e, de, &c.pid, self.tc);
        self.held.b_cmd = b_pid + self.ff.at(self.i_x);
        if self.scanning && c.selection.speed_regulator {
            let db_dt = (b_pid - self.b_pid_prev) / self.tc;
            self.v_x = speed_update(self.v_x, db_dt, &c.speed, self.tc);
        }
        self.b_pid_prev = b_pid;
        self.held.drive = DitherDrive {
            amplitude: drive,
            omega_d: self.cfg.omega_d,
            k_q,
        };
        self.f = rhs(&self.plant, &self.held, self.t, &self.y);
        Ok(())
    }

    fn gap(&self, y: &[f64; 4]) -> f64 {
        y[2] + y[0] - self.held.sigma
    }

    /// Puts a penetrating tip back on the surface; a tip moving into the
    /// surface is also reflected. Returns whether the state changed.
    fn project(&mut self, t: f64, forced: bool) -> bool {
        let pen_tol = self.cfg.solver.penetration_tol;
        if self.gap(&self.y) >= -pen_tol || (!forced && t <= self.refractory_until) {
            return false;
        }
        let v = self.y[1];
        self.y[0] = self.held.sigma - self.y[2];
        if v < 0.0 {
            self.y[1] = -self.cfg.cantilever.r * v;
            self.record_impact(t, v);
        }
        self.f = rhs(&self.plant, &self.held, t, &self.y);
        true
    }

    fn record_impact(&mut self, t: f64, v: f64) {
        self.impacts.push(ImpactEvent {
            t,
            i_x: self.i_x,
            v_i: v,
        });
        self.refractory_until = t + self.cfg.solver.refractory;
    }

    fn feed(&mut self, step: &Step<4>) -> Result<()> {
        for (t, x) in step.extrema(0).into_iter().flatten() {
            let x = self.noise.add_noise(x);
            self.demod.ingest(t, x)?;
        }
        let x = self.noise.add_noise(step.y1[0]);
        self.demod.ingest(step.t1, x)?;
        Ok(())
    }

    fn advance_tick(&mut self) -> Result<()> {
        let t_next = (self.tick + 1) as f64 * self.tc;
        self.advance_to(t_next)?;
        self.tick += 1;
        self.i_x += self.v_x * self.tc;
        Ok(())
    }

    fn advance_to(&mut self, t_end: f64) -> Result<()> {
        let plant = self.plant;
        let held = self.held;
        let mut f = |t: f64, y: &[f64; 4]| rhs(&plant, &held, t, y);
        let limit = 100.0 * self.cfg.a_f();
        while self.t < t_end {
            let step = self.solver.step(self.t, &self.y, &self.f, t_end, &mut f)?;
            let t_from = step.t0.max(self.refractory_until);
            let sigma = held.sigma;
            let hit = locate_impact(&step, t_from, |y| y[2] + y[0] - sigma, &self.cfg.solver)?;
            if let Some(ts) = hit {
                let h = ts - step.t0;
                let y_hit = Dopri5::fixed_step(step.t0, &step.y0, &step.f0, h, &mut f);
                let partial = Step {
                    t0: step.t0,
                    t1: ts,
                    y0: step.y0,
                    y1: y_hit,
                    f0: step.f0,
                    f1: f(ts, &y_hit),
                    err: step.err,
                };
                self.feed(&partial)?;
                self.t = ts;
                self.y = y_hit;
                let v = y_hit[1];
                self.y[0] = sigma - y_hit[2];
                self.y[1] = -self.cfg.cantilever.r * v;
                self.record_impact(ts, v);
                self.f = f(ts, &self.y);
                continue;
            }
            self.feed(&step)?;
            self.t = step.t1;
            self.y = step.y1;
            self.f = step.f1;
            self.project(self.t, false);
            if !(self.y[0].abs() <= limit) {
                return Err(Error::SimDiverged {
                    t: self.t,
                    x1: self.y[0],
                });
            }
        }
        Ok(())
    }
}

/// Engages and scans one line.
pub fn simulate_line(
    cfg: &LineConfig,
    surface: SurfaceLine<'_>,
    ff: &Feedforward,
    stream: u64,
    line_length: f64,
) -> Result<LineTrace> {
    let mut sim = LineSim::new(cfg, surface, ff, stream)?;
    sim.engage()?;
    sim.scan(line_length)
}
