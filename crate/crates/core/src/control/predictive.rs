//! Line-to-line feedforward: previous height estimates, window filtered and
//! weighted by how much consecutive lines agree, are added to the PID output.

use alloc::collections::VecDeque;
use alloc::vec::Vec;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PredictiveConfig {
    /// Number of previous lines fed forward.
    pub m_pc: usize,
    /// Threshold on the integrated difference of consecutive lines, m^2.
    pub e_sigma: f64,
    /// Half width of the averaging window, m.
    pub n_w: f64,
    /// Points of the uniform grid the estimates are resampled onto.
    #[cfg_attr(feature = "serde", serde(default = "default_grid_points"))]
    pub grid_points: usize,
}

#[cfg(feature = "serde")]
fn default_grid_points() -> usize {
    1001
}

impl PredictiveConfig {
    pub fn validate(&self, line_length: f64) -> Result<()> {
        if self.m_pc < 1 {
            return Err(Error::InvalidParameter {
                name: "m_pc",
                reason: "must be at least 1",
            });
        }
        if !(self.e_sigma > 0.0) {
            return Err(Error::InvalidParameter {
                name: "e_sigma",
                reason: "must be positive",
            });
        }
        if !(self.n_w > 0.0) {
            return Err(Error::InvalidParameter {
                name: "n_w",
                reason: "must be positive",
            });
        }
        if self.n_w >= 0.5 * line_length {
            return Err(Error::WindowTooLarge {
                n_w: self.n_w,
                half: 0.5 * line_length,
            });
        }
        if self.grid_points < 2 {
            return Err(Error::InvalidParameter {
                name: "grid_points",
                reason: "need at least two points",
            });
        }
        Ok(())
    }
}

/// Height profile sampled on `x_i = i * dx`, linearly interpolated between
/// nodes and held constant beyond the ends.
#[derive(Debug, Clone, PartialEq)]
pub struct LineProfile {
    pub dx: f64,
    pub heights: Vec<f64>,
}

impl LineProfile {
    pub fn length(&self) -> f64 {
        self.dx * (self.heights.len().saturating_sub(1)) as f64
    }

    pub fn at(&self, x: f64) -> f64 {
        let n = self.heights.len();
        if n == 0 {
            return 0.0;
        }
        if x <= 0.0 || n == 1 {
            return self.heights[0];
        }
        let u = x / self.dx;
        let i = u as usize;
        if i >= n - 1 {
            return self.heights[n - 1];
        }
        let f = u - i as f64;
        self.heights[i] + f * (self.heights[i + 1] - self.heights[i])
    }

    // Integral of the interpolant over [0, x], x anywhere on the real line.
    fn primitive(&self, cumulative: &[f64], x: f64) -> f64 {
        let n = self.heights.len();
        let len = self.length();
        if x <= 0.0 {
            return x * self.heights[0];
        }
        if x >= len {
            return cumulative[n - 1] + (x - len) * self.heights[n - 1];
        }
        let i = ((x / self.dx) as usize).min(n - 2);
        let t = x - i as f64 * self.dx;
        let slope = (self.heights[i + 1] - self.heights[i]) / self.dx;
        cumulative[i] + self.heights[i] * t + 0.5 * slope * t * t
    }
}

/// Resamples scattered `(x, y)` pairs (x non-decreasing) onto
/// `points` uniform nodes spanning `[0, length]`.
pub fn resample_uniform(xs: &[f64], ys: &[f64], length: f64, points: usize) -> Result<LineProfile> {
    if xs.is_empty() || xs.len() != ys.len() {
        return Err(Error::EmptyTrace);
    }
    if points < 2 || !(length > 0.0) {
        return Err(Error::InvalidParameter {
            name: "resample",
            reason: "need a positive length and at least two points",
        });
    }
    let dx = length / (points - 1) as f64;
    let mut heights = Vec::with_capacity(points);
    let mut j = 0;
    for i in 0..points {
        let x = i as f64 * dx;
        while j + 1 < xs.len() && xs[j + 1] <= x {
            j += 1;
        }
        let y = if x <= xs[0] {
            ys[0]
        } else if j + 1 >= xs.len() {
            ys[xs.len() - 1]
        } else {
            let (x0, x1) = (xs[j], xs[j + 1]);
            if x1 > x0 {
                ys[j] + (x - x0) / (x1 - x0) * (ys[j + 1] - ys[j])
            } else {
                ys[j + 1]
            }
        };
        heights.push(y);
    }
    Ok(LineProfile { dx, heights })
}

/// Moving average of half width `n_w` over the linear interpolant of `line`,
/// with the end values extended beyond `[0, I_x]`. The average is an exact
/// integral, evaluated at the line's own nodes.
pub fn window_filter(line: &LineProfile, n_w: f64) -> Result<LineProfile> {
    let len = line.length();
    if n_w >= 0.5 * len {
        return Err(Error::WindowTooLarge {
            n_w,
            half: 0.5 * len,
        });
    }
    if !(n_w > 0.0) {
        return Err(Error::InvalidParameter {
            name: "n_w",
            reason: "must be positive",
        });
    }
    let h = &line.heights;
    let mut cumulative = Vec::with_capacity(h.len());
    let mut acc = 0.0;
    cumulative.push(0.0);
    for w in h.windows(2) {
        acc += 0.5 * (w[0] + w[1]) * line.dx;
        cumulative.push(acc);
    }
    let heights = (0..h.len())
        .map(|i| {
            let x = i as f64 * line.dx;
            (line.primitive(&cumulative, x + n_w) - line.primitive(&cumulative, x - n_w))
                / (2.0 * n_w)
        })
        .collect();
    Ok(LineProfile {
        dx: line.dx,
        heights,
    })
}

fn normalization(m_pc: usize) -> Vec<f64> {
    let mut w: Vec<f64> = (1..=m_pc)
        .map(|j| {
            if j < m_pc {
                1.0 / (2.0 * j as f64)
            } else if j > 1 {
                1.0 / (2.0 * (j - 1) as f64)
            } else {
                1.0
            }
        })
        .collect();
    // Beyond three lines the printed factors add up to more than one.
    let total: f64 = w.iter().sum();
    if total > 1.0 {
        for v in &mut w {
            *v /= total;
        }
    }
    w
}

/// Gains `K_1..K_M` for the next line. `history` holds filtered lines on a
/// common grid, oldest first; the last `m_pc + 1` are used.
pub fn adaptive_gains(history: &[LineProfile], m_pc: usize, e_sigma: f64) -> Result<Vec<f64>> {
    if history.len() < m_pc + 1 {
        return Err(Error::InsufficientHistory {
            needed: m_pc + 1,
            available: history.len(),
        });
    }
    let n = history.len();
    let norm = normalization(m_pc);
    let gains = (1..=m_pc)
        .map(|j| {
            let newer = &history[n - j];
            let older = &history[n - j - 1];
            let diff: Vec<f64> = newer
                .heights
                .iter()
                .zip(&older.heights)
                .map(|(a, b)| (a - b).abs())
                .collect();
            let e = diff
                .windows(2)
                .map(|w| 0.5 * (w[0] + w[1]) * newer.dx)
                .sum::<f64>();
            norm[j - 1] * ((e_sigma - e) / e_sigma).max(0.0)
        })
        .collect();
    Ok(gains)
}

/// `sum_j K_j * line_{k-j}(x)`, `lines` oldest first with the most recent
/// line last.
pub fn predictive_feedforward(lines: &[LineProfile], gains: &[f64], x: f64) -> f64 {
    let n = lines.len();
    gains
        .iter()
        .enumerate()
        .filter(|(j, _)| *j < n)
        .map(|(j, k)| k * lines[n - 1 - j].at(x))
        .sum()
}

/// Feedforward term frozen for the duration of one line.
#[derive(Debug, Clone, PartialEq)]
pub struct Feedforward {
    pub gains: Vec<f64>,
    lines: Vec<LineProfile>,
}

impl Feedforward {
    pub fn zero() -> Self {
        Self {
            gains: Vec::new(),
            lines: Vec::new(),
        }
    }

    pub fn at(&self, x: f64) -> f64 {
        predictive_feedforward(&self.lines, &self.gains, x)
    }

    pub fn gain_sum(&self) -> f64 {
        self.gains.iter().sum()
    }
}

/// Filtered estimates of the lines scanned so far.
#[derive(Debug, Clone)]
pub struct PredictiveHistory {
    cfg: PredictiveConfig,
    line_length: f64,
    lines: VecDeque<LineProfile>,
}

impl PredictiveHistory {
    pub fn new(cfg: PredictiveConfig, line_length: f64) -> Result<Self> {
        cfg.validate(line_length)?;
        Ok(Self {
            cfg,
            line_length,
            lines: VecDeque::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.lines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    /// Appends the estimate of a finished line given as scattered samples.
    pub fn push_estimate(&mut self, xs: &[f64], sigma_hat: &[f64]) -> Result<()> {
        let raw = resample_uniform(xs, sigma_hat, self.line_length, self.cfg.grid_points)?;
        let filtered = window_filter(&raw, self.cfg.n_w)?;
        self.lines.push_back(filtered);
        while self.lines.len() > self.cfg.m_pc + 1 {
            self.lines.pop_front();
        }
        Ok(())
    }

    /// Feedforward for the next line; zero until `m_pc + 1` lines exist.
    pub fn plan(&self) -> Result<Feedforward> {
        if self.lines.len() < self.cfg.m_pc + 1 {
            return Ok(Feedforward::zero());
        }
        let lines: Vec<LineProfile> = self.lines.iter().cloned().collect();
        let gains = adaptive_gains(&lines, self.cfg.m_pc, self.cfg.e_sigma)?;
        let recent = lines[lines.len() - self.cfg.m_pc..].to_vec();
        Ok(Feedforward {
            gains,
            lines: recent,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn line(heights: Vec<f64>, length: f64) -> LineProfile {
        let dx = length / (heights.len() - 1) as f64;
        LineProfile { dx, heights }
    }

    // Integral of the interpolant over [a, b], accumulated segment by segment
    // with end extension.
    fn brute_mean(l: &LineProfile, a: f64, b: f64) -> f64 {
        let pieces = 20_000;
        let mut sum = 0.0;
        let h = (b - a) / pieces as f64;
        // Simpson on each sub-interval is exact for the linear pieces up to
        // kinks; the kinks' contribution vanishes with the piece size.
        for k in 0..pieces {
            let x0 = a + k as f64 * h;
            let x1 = x0 + h;
            sum += h * (l.at(x0) + 4.0 * l.at(0.5 * (x0 + x1)) + l.at(x1)) / 6.0;
        }
        sum / (b - a)
    }

    // Exact integral by walking the breakpoints inside [a, b].
    fn exact_mean(l: &LineProfile, a: f64, b: f64) -> f64 {
        let mut pts = alloc::vec![a];
        for i in 0..l.heights.len() {
            let x = i as f64 * l.dx;
            if x > a && x < b {
                pts.push(x);
            }
        }
        pts.push(b);
        let s: f64 = pts
            .windows(2)
            .map(|w| 0.5 * (l.at(w[0]) + l.at(w[1])) * (w[1] - w[0]))
            .sum();
        s / (b - a)
    }

    #[test]
    fn constant_line_unchanged() {
        let l = line(alloc::vec![3e-9; 101], 1e-6);
        let f = window_filter(&l, 0.1e-6).unwrap();
        for v in &f.heights {
            assert_relative_eq!(*v, 3e-9, max_relative = 1e-12);
        }
    }

    #[test]
    fn step_becomes_ramp() {
        let n = 1001;
        let len = 1.0;
        let heights = (0..n).map(|i| if i <= n / 2 { 0.0 } else { 1.0 }).collect();
        let l = line(heights, len);
        let nw = 0.1;
        let f = window_filter(&l, nw).unwrap();
        // Step sits between x = 0.5 and 0.501; the ramp is centred on 0.5005.
        for (i, v) in f.heights.iter().enumerate() {
            let x = i as f64 * l.dx;
            let expect = ((x - 0.5005 + nw) / (2.0 * nw)).clamp(0.0, 1.0);
            assert!((v - expect).abs() < 0.01, "x={x} got {v} want {expect}");
        }
        assert_eq!(f.heights[0], 0.0);
        assert!((f.heights[n - 1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn window_filter_matches_exact_summation() {
        let n = 257;
        let heights: Vec<f64> = (0..n)
            .map(|i| 1e-8 * (((i * 7919) % 101) as f64 / 50.0 - 1.0))
            .collect();
        let l = line(heights, 4e-6);
        let nw = 0.04e-6;
        let f = window_filter(&l, nw).unwrap();
        for (i, v) in f.heights.iter().enumerate() {
            let x = i as f64 * l.dx;
            let want = exact_mean(&l, x - nw, x + nw);
            assert!(
                (v - want).abs() <= 1e-12 * want.abs().max(1e-8),
                "{i}: {v} vs {want}"
            );
        }
        let x = 100.0 * l.dx;
        assert_relative_eq!(
            f.heights[100],
            brute_mean(&l, x - nw, x + nw),
            max_relative = 1e-6
        );
    }

    #[test]
    fn window_too_large() {
        let l = line(alloc::vec![0.0; 11], 1.0);
        assert!(matches!(
            window_filter(&l, 0.5),
            Err(Error::WindowTooLarge { .. })
        ));
    }

    #[test]
    fn resample_linear() {
        let xs = [0.0, 0.25, 1.0];
        let ys = [0.0, 1.0, 4.0];
        let r = resample_uniform(&xs, &ys, 1.0, 5).unwrap();
        assert_eq!(r.heights, alloc::vec![0.0, 1.0, 2.0, 3.0, 4.0]);
        // Samples beyond the last x hold the final value.
        let r = resample_uniform(&[0.1, 0.5], &[1.0, 2.0], 1.0, 3).unwrap();
        assert_eq!(r.heights, alloc::vec![1.0, 2.0, 2.0]);
    }

    #[test]
    fn identical_lines_give_unit_sum() {
        let l = line(alloc::vec![1e-9; 11], 1.0);
        let h = alloc::vec![l.clone(), l.clone(), l.clone(), l];
        let g = adaptive_gains(&h, 3, 1e-9).unwrap();
        assert_eq!(g, alloc::vec![0.5, 0.25, 0.25]);
        assert_eq!(g.iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn dissimilar_lines_give_zero() {
        let h: Vec<LineProfile> = (0..4)
            .map(|k| line(alloc::vec![k as f64; 11], 1.0))
            .collect();
        let g = adaptive_gains(&h, 3, 0.5).unwrap();
        assert_eq!(g, alloc::vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn mixed_case() {
        // Newest line differs from the previous by 0.5 over unit length.
        let base = line(alloc::vec![0.0; 11], 1.0);
        let top = line(alloc::vec![0.5; 11], 1.0);
        let h = alloc::vec![base.clone(), base.clone(), base, top];
        let g = adaptive_gains(&h, 3, 1.0).unwrap();
        assert_relative_eq!(g[0], 0.25, max_relative = 1e-15);
        assert_eq!(g[1], 0.25);
        assert_eq!(g[2], 0.25);
    }

    #[test]
    fn insufficient_history() {
        let l = line(alloc::vec![0.0; 3], 1.0);
        let r = adaptive_gains(&[l.clone(), l], 3, 1.0);
        assert!(matches!(
            r,
            Err(Error::InsufficientHistory {
                needed: 4,
                available: 2
            })
        ));
    }

    #[test]
    fn single_line_memory_uses_unit_gain() {
        let l = line(alloc::vec![1.0; 3], 1.0);
        assert_eq!(
            adaptive_gains(&[l.clone(), l], 1, 1.0).unwrap(),
            alloc::vec![1.0]
        );
    }

    #[test]
    fn feedforward_constant_history() {
        let l = line(alloc::vec![2e-9; 5], 1.0);
        let lines = alloc::vec![l.clone(), l.clone(), l];
        assert_eq!(predictive_feedforward(&lines, &[0.0, 0.0, 0.0], 0.3), 0.0);
        assert_relative_eq!(
            predictive_feedforward(&lines, &[0.5, 0.25, 0.125], 0.3),
            0.875 * 2e-9,
            max_relative = 1e-15
        );
    }

    #[test]
    fn feedforward_matches_direct_sum() {
        let n = 401;
        let len = 4e-6;
        let lines: Vec<LineProfile> = (0..3)
            .map(|k| {
                let h = (0..n)
                    .map(|i| {
                        let x = i as f64 * len / (n - 1) as f64;
                        80e-9 * (2.0 * core::f64::consts::PI * x / len + k as f64).sin()
                    })
                    .collect();
                line(h, len)
            })
            .collect();
        let gains = [0.5, 0.25, 0.25];
        for q in 0..50 {
            let x = q as f64 * len / 49.3;
            let direct = 0.5 * lines[2].at(x) + 0.25 * lines[1].at(x) + 0.25 * lines[0].at(x);
            let got = predictive_feedforward(&lines, &gains, x);
            assert!((got - direct).abs() <= 1e-12 * 80e-9);
        }
    }

    #[test]
    fn history_warm_up() {
        let cfg = PredictiveConfig {
            m_pc: 3,
            e_sigma: 1e-15,
            n_w: 0.04e-6,
            grid_points: 101,
        };
        let mut h = PredictiveHistory::new(cfg, 4e-6).unwrap();
        let xs = [0.0, 4e-6];
        let ys = [1e-9, 1e-9];
        for _ in 0..3 {
            h.push_estimate(&xs, &ys).unwrap();
            assert_eq!(h.plan().unwrap().gain_sum(), 0.0);
        }
        h.push_estimate(&xs, &ys).unwrap();
        let plan = h.plan().unwrap();
        assert_eq!(plan.gain_sum(), 1.0);
        assert_relative_eq!(plan.at(2e-6), 1e-9, max_relative = 1e-12);
        h.push_estimate(&xs, &ys).unwrap();
        assert_eq!(h.len(), 4);
    }

    proptest! {
        #[test]
        fn gains_bounded(m in 1usize..7, es in proptest::collection::vec(0.0f64..2.0, 8)) {
            let lines: Vec<LineProfile> = es.iter().take(m + 1).map(|v| line(alloc::vec![*v; 3], 1.0)).collect();
            let g = adaptive_gains(&lines, m, 1.0).unwrap();
            prop_assert!(g.iter().all(|k| *k >= 0.0));
            prop_assert!(g.iter().sum::<f64>() <= 1.0 + 1e-15);
        }
    }
}
