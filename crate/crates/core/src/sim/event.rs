//! Location of tip-surface impacts inside an accepted step.

use super::dopri::Step;
use super::SolverConfig;
use crate::{Error, Result};

const INTERIOR_PROBES: usize = 4;
const MAX_ITERATIONS: usize = 100;

/// Finds the first time in `[t_from, step.t1]` at which `gap` turns from
/// positive to non-positive on the step's dense output.
///
/// Returns `None` when the gap is positive throughout the probed points or
/// already non-positive at `t_from`. The returned time satisfies
/// `|gap| < cfg.penetration_tol` on the interpolant.
pub fn locate_impact<const N: usize, G>(
    step: &Step<N>,
    t_from: f64,
    gap: G,
    cfg: &SolverConfig,
) -> Result<Option<f64>>
where
    G: Fn(&[f64; N]) -> f64,
{
    let t_from = t_from.max(step.t0);
    if t_from >= step.t1 {
        return Ok(None);
    }
    let eval = |t: f64| -> f64 {
        if t == step.t0 {
            gap(&step.y0)
        } else if t == step.t1 {
            gap(&step.y1)
        } else {
            gap(&step.interpolate(t))
        }
    };
    let g_from = eval(t_from);
    if g_from <= 0.0 {
        return Ok(None);
    }
    // Probe interior points so that a grazing double crossing inside one
    // step is not missed.
    let mut a = t_from;
    let mut ga = g_from;
    let mut bracket = None;
    for k in 1..=INTERIOR_PROBES + 1 {
        let t = if k == INTERIOR_PROBES + 1 {
            step.t1
        } else {
            t_from + (step.t1 - t_from) * k as f64 / (INTERIOR_PROBES + 1) as f64
        };
        let g = eval(t);
        if g <= 0.0 {
            bracket = Some((a, ga, t, g));
            break;
        }
        a = t;
        ga = g;
    }
    let Some((mut a, mut ga, mut b, mut gb)) = bracket else {
        return Ok(None);
    };
    if gb.abs() < cfg.penetration_tol {
        // The right end may already be within tolerance; still prefer the
        // earliest acceptable point.
        if ga.abs() < cfg.penetration_tol {
            return Ok(Some(a));
        }
    }
    // Illinois variant of regula falsi, keeping a sign-changing bracket.
    let mut side = 0i8;
    for _ in 0..MAX_ITERATIONS {
        let mut t = (a * gb - b * ga) / (gb - ga);
        if !(t > a && t < b) {
            t = 0.5 * (a + b);
        }
        let g = eval(t);
        if g.abs() < cfg.penetration_tol {
            return Ok(Some(t));
        }
        if g > 0.0 {
            a = t;
            ga = g;
            if side == 1 {
                gb *= 0.5;
            }
            side = 1;
        } else {
            b = t;
            gb = g;
            if side == -1 {
                ga *= 0.5;
            }
            side = -1;
        }
        if b - a <= f64::EPSILON * b.abs() {
            // Bracket collapsed onto a jump of the gap.
            if gb.abs() < cfg.penetration_tol {
                return Ok(Some(b));
            }
            break;
        }
    }
    Err(Error::RootNotConverged { t: 0.5 * (a + b) })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> SolverConfig {
        SolverConfig::default()
    }

    fn linear_step(g0: f64, g1: f64) -> Step<1> {
        let slope = g1 - g0;
        Step {
            t0: 0.0,
            t1: 1.0,
            y0: [g0],
            y1: [g1],
            f0: [slope],
            f1: [slope],
            err: 0.0,
        }
    }

    #[test]
    fn no_crossing() {
        let st = linear_step(1e-9, 2e-9);
        assert_eq!(locate_impact(&st, 0.0, |y| y[0], &cfg()).unwrap(), None);
    }

    #[test]
    fn linear_crossing_at_midpoint() {
        let st = linear_step(1e-9, -1e-9);
        let t = locate_impact(&st, 0.0, |y| y[0], &cfg()).unwrap().unwrap();
        assert!((t - 0.5).abs() * 2e-9 < cfg().penetration_tol);
    }

    #[test]
    fn starts_inside_surface() {
        let st = linear_step(-1e-9, -2e-9);
        assert_eq!(locate_impact(&st, 0.0, |y| y[0], &cfg()).unwrap(), None);
    }

    #[test]
    fn grazing_double_crossing_is_found() {
        // g(t) = (t - 0.5)^2 - 0.01 crosses at 0.4 and 0.6; both ends positive.
        let st = Step {
            t0: 0.0,
            t1: 1.0,
            y0: [0.24],
            y1: [0.24],
            f0: [-1.0],
            f1: [1.0],
            err: 0.0,
        };
        let c = SolverConfig {
            penetration_tol: 1e-12,
            ..cfg()
        };
        let t = locate_impact(&st, 0.0, |y| y[0], &c).unwrap().unwrap();
        assert!((t - 0.4).abs() < 1e-10);
    }

    #[test]
    fn respects_refractory_start() {
        let st = linear_step(1e-9, -1e-9);
        assert_eq!(locate_impact(&st, 0.75, |y| y[0], &cfg()).unwrap(), None);
    }
}
