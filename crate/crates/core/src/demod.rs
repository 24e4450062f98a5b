//! Peak-hold amplitude demodulation of the tip position signal.
//!
//! The demodulator holds the largest `|x1|` seen in each half drive period
//! and publishes it at the end of that half period, so the amplitude seen by
//! the controllers lags the tip by at most one half period plus one sample.
//! The amplitude rate is the mean of the last four backward differences.

use core::f64::consts::PI;

use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;
use rand_distr::{Distribution, Normal};

use crate::math;
use crate::{Error, Result};

/// Number of published updates spanned by the rate estimate.
pub const RATE_SPAN: usize = 4;

// Samples closer than this fraction of a half period to a window boundary are
// counted in both adjacent windows.
const BOUNDARY_SNAP: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct Demodulator {
    half_period: f64,
    window: u64,
    window_max: f64,
    current_a: f64,
    d_a_dt: f64,
    last_t: f64,
    // (t, A) of the last RATE_SPAN + 1 updates, oldest first
    history: [(f64, f64); RATE_SPAN + 1],
    updates: u64,
}

impl Demodulator {
    /// Starts with amplitude `initial_a` held since `t0`.
    pub fn new(omega_d: f64, t0: f64, initial_a: f64) -> Self {
        let half_period = PI / omega_d;
        let window = Self::window_of(t0, half_period);
        Self {
            half_period,
            window,
            window_max: 0.0,
            current_a: initial_a,
            d_a_dt: 0.0,
            last_t: t0,
            history: [(t0, initial_a); RATE_SPAN + 1],
            updates: 0,
        }
    }

    fn window_of(t: f64, half_period: f64) -> u64 {
        let x = t / half_period + BOUNDARY_SNAP;
        if x <= 0.0 {
            0
        } else {
            math::floor(x) as u64
        }
    }

    pub fn half_period(&self) -> f64 {
        self.half_period
    }

    /// Latest published amplitude, m.
    pub fn amplitude(&self) -> f64 {
        self.current_a
    }

    /// Latest amplitude rate estimate, m/s.
    pub fn rate(&self) -> f64 {
        self.d_a_dt
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// Feeds one position sample. Returns `true` when a new amplitude was
    /// published.
    pub fn ingest(&mut self, t: f64, x1: f64) -> Result<bool> {
        if t < self.last_t {
            return Err(Error::OutOfOrderSample {
                t,
                last: self.last_t,
            });
        }
        self.last_t = t;
        let mag = x1.abs();
        let w = Self::window_of(t, self.half_period);
        if w <= self.window {
            if mag > self.window_max {
                self.window_max = mag;
            }
            return Ok(false);
        }
        // A sample sitting on the boundary closes the old window too.
        let boundary = w as f64 * self.half_period;
        let closing = if (t - boundary).abs() <= BOUNDARY_SNAP * self.half_period {
            self.window_max.max(mag)
        } else {
            self.window_max
        };
        self.publish(boundary, closing);
        self.window = w;
        self.window_max = mag;
        Ok(true)
    }

    fn publish(&mut self, t: f64, a: f64) {
        self.current_a = a;
        self.history.rotate_left(1);
        self.history[RATE_SPAN] = (t, a);
        let (t_old, a_old) = self.history[0];
        let dt = t - t_old;
        self.d_a_dt = if dt > 0.0 { (a - a_old) / dt } else { 0.0 };
        self.updates += 1;
    }
}

/// Measurement noise on the tip position.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NoiseConfig {
    pub enabled: bool,
    /// Standard deviation, m.
    pub std: f64,
    pub seed: u64,
}

/// Deterministic Gaussian noise stream.
#[derive(Debug, Clone)]
pub struct NoiseSource {
    rng: ChaCha8Rng,
    normal: Option<Normal<f64>>,
}

impl NoiseSource {
    /// `stream` separates independent realizations sharing one seed, e.g.
    /// one per scan line.
    pub fn new(cfg: &NoiseConfig, stream: u64) -> Result<Self> {
        if !(cfg.std >= 0.0) {
            return Err(Error::InvalidParameter {
                name: "noise.std",
                reason: "must be non-negative",
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(stream);
        let normal = if cfg.enabled && cfg.std > 0.0 {
            Some(
                Normal::new(0.0, cfg.std).map_err(|_| Error::InvalidParameter {
                    name: "noise.std",
                    reason: "invalid standard deviation",
                })?,
            )
        } else {
            None
        };
        Ok(Self { rng, normal })
    }

    pub fn add_noise(&mut self, x1: f64) -> f64 {
        match &self.normal {
            Some(n) => x1 + n.sample(&mut self.rng),
            None => x1,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const OMEGA: f64 = 2.0 * PI * 1000.0;

    /// Samples `a(t) sin(omega t + phase)` every `dt` from `t0` to `t1`.
    fn feed(d: &mut Demodulator, t0: f64, t1: f64, dt: f64, a: impl Fn(f64) -> f64, phase: f64) {
        let n = ((t1 - t0) / dt).round() as usize;
        for k in 0..=n {
            let t = t0 + k as f64 * dt;
            d.ingest(t, a(t) * (OMEGA * t + phase).sin()).unwrap();
        }
    }

    #[test]
    fn captures_sinusoid_peak_after_half_period() {
        let mut d = Demodulator::new(OMEGA, 0.0, 0.0);
        let hp = d.half_period();
        // Sampling at hp / 1000 puts a sample within 1.3e-6 relative of the peak.
        feed(&mut d, 0.0, 1.01 * hp, hp / 1000.0, |_| 2.0, 0.3);
        assert_eq!(d.updates(), 1);
        assert_relative_eq!(d.amplitude(), 2.0, max_relative = 2e-6);
    }

    #[test]
    fn peak_on_boundary_is_seen_by_both_windows() {
        let mut d = Demodulator::new(OMEGA, 0.0, 0.0);
        let hp = d.half_period();
        // -cos has its extrema exactly on the window boundaries.
        for k in 0..=40 {
            let t = k as f64 * hp / 20.0;
            d.ingest(t, -(OMEGA * t).cos()).unwrap();
        }
        assert_eq!(d.updates(), 2);
        assert_relative_eq!(d.amplitude(), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn amplitude_step_within_one_period() {
        let mut d = Demodulator::new(OMEGA, 0.0, 1.0);
        let hp = d.half_period();
        let t_step = 10.3 * hp;
        let a = |t: f64| if t < t_step { 1.0 } else { 3.0 };
        feed(&mut d, 0.0, t_step + 2.0 * hp, hp / 500.0, a, 0.0);
        assert_relative_eq!(d.amplitude(), 3.0, max_relative = 1e-4);
    }

    #[test]
    fn ramp_rate_estimate() {
        let rho = 50.0;
        let mut d = Demodulator::new(OMEGA, 0.0, 1.0);
        let hp = d.half_period();
        feed(&mut d, 0.0, 12.0 * hp, hp / 500.0, |t| 1.0 + rho * t, 0.7);
        assert!(d.updates() >= 4);
        assert!((d.rate() - rho).abs() < 0.1 * rho, "rate {}", d.rate());
    }

    #[test]
    fn rate_sign_follows_monotone_trend() {
        let mut d = Demodulator::new(OMEGA, 0.0, 1.0);
        let hp = d.half_period();
        feed(&mut d, 0.0, 8.0 * hp, hp / 200.0, |t| 1.0 - 40.0 * t, 0.1);
        assert!(d.rate() < 0.0);
    }

    #[test]
    fn held_value_never_exceeds_observed_peak() {
        let mut d = Demodulator::new(OMEGA, 0.0, 0.0);
        let hp = d.half_period();
        let mut peak: f64 = 0.0;
        let mut t = 0.0;
        let dt = hp / 37.0;
        while t < 6.0 * hp {
            let x = (1.0 + 0.3 * (7.0 * t).sin()) * (OMEGA * t).sin();
            peak = peak.max(x.abs());
            d.ingest(t, x).unwrap();
            assert!(d.amplitude() <= peak);
            t += dt;
        }
    }

    #[test]
    fn rejects_out_of_order() {
        let mut d = Demodulator::new(OMEGA, 0.0, 0.0);
        d.ingest(1e-4, 0.0).unwrap();
        assert!(matches!(
            d.ingest(0.5e-4, 0.0),
            Err(Error::OutOfOrderSample { .. })
        ));
    }

    #[test]
    fn zero_std_is_identity() {
        let cfg = NoiseConfig {
            enabled: true,
            std: 0.0,
            seed: 7,
        };
        let mut n = NoiseSource::new(&cfg, 0).unwrap();
        assert_eq!(n.add_noise(1.25e-9), 1.25e-9);
        let off = NoiseConfig {
            enabled: false,
            std: 1.0,
            seed: 7,
        };
        assert_eq!(NoiseSource::new(&off, 0).unwrap().add_noise(3.0), 3.0);
    }

    #[test]
    fn noise_mean_within_clt_bound() {
        let std = 0.5e-9;
        let cfg = NoiseConfig {
            enabled: true,
            std,
            seed: 42,
        };
        let mut n = NoiseSource::new(&cfg, 0).unwrap();
        let draws = 1_000_000;
        let mean = (0..draws).map(|_| n.add_noise(0.0)).sum::<f64>() / draws as f64;
        assert!(mean.abs() < 3.0 * std / (draws as f64).sqrt());
    }

    #[test]
    fn same_seed_same_stream() {
        let cfg = NoiseConfig {
            enabled: true,
            std: 1.0,
            seed: 9,
        };
        let mut a = NoiseSource::new(&cfg, 3).unwrap();
        let mut b = NoiseSource::new(&cfg, 3).unwrap();
        let mut c = NoiseSource::new(&cfg, 4).unwrap();
        let va: alloc::vec::Vec<f64> = (0..16).map(|_| a.add_noise(0.0)).collect();
        let vb: alloc::vec::Vec<f64> = (0..16).map(|_| b.add_noise(0.0)).collect();
        let vc: alloc::vec::Vec<f64> = (0..16).map(|_| c.add_noise(0.0)).collect();
        assert_eq!(va, vb);
        assert_ne!(va, vc);
    }
}
