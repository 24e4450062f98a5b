//! Ground-truth sample surfaces and raster geometry.

use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::math;
use crate::{Error, Result};

/// Height map on a regular grid: `heights[iy * nx + ix]`, rows along `i_x`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeightGrid {
    pub dx: f64,
    pub dy: f64,
    nx: usize,
    ny: usize,
    heights: Vec<f64>,
}

impl HeightGrid {
    pub fn new(dx: f64, dy: f64, rows: &[Vec<f64>]) -> Result<Self> {
        if !(dx > 0.0 && dy > 0.0 && dx.is_finite() && dy.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "dx/dy",
                reason: "grid spacing must be positive",
            });
        }
        let nx = rows.first().map_or(0, Vec::len);
        if rows.len() < 2 || nx < 2 {
            return Err(Error::InvalidParameter {
                name: "grid",
                reason: "need at least two rows and two columns",
            });
        }
        if rows.iter().any(|r| r.len() != nx) {
            return Err(Error::NonRectangular);
        }
        let heights: Vec<f64> = rows.iter().flatten().copied().collect();
        if heights.iter().any(|h| !h.is_finite()) {
            return Err(Error::NonFiniteHeight);
        }
        Ok(Self {
            dx,
            dy,
            nx,
            ny: rows.len(),
            heights,
        })
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    /// Scan-line length `I_x = (nx - 1) dx`.
    pub fn length_x(&self) -> f64 {
        (self.nx - 1) as f64 * self.dx
    }

    pub fn length_y(&self) -> f64 {
        (self.ny - 1) as f64 * self.dy
    }

    pub fn row(&self, iy: usize) -> &[f64] {
        &self.heights[iy * self.nx..(iy + 1) * self.nx]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.heights.chunks(self.nx)
    }

    fn row_index(&self, i_y: f64) -> Option<usize> {
        let u = i_y / self.dy;
        let ly = self.length_y();
        if !(i_y >= -1e-9 * ly && i_y <= ly * (1.0 + 1e-9)) {
            return None;
        }
        Some((math::round(u).max(0.0) as usize).min(self.ny - 1))
    }
}

/// Linear interpolation along a row; ends held beyond the grid.
fn interp_row(row: &[f64], dx: f64, i_x: f64) -> f64 {
    let n = row.len();
    if i_x <= 0.0 {
        return row[0];
    }
    let u = i_x / dx;
    // Queries on a node, up to rounding of i_x / dx, return the node value.
    let r = math::round(u);
    if (u - r).abs() <= 1e-12 * r.max(1.0) {
        return row[(r as usize).min(n - 1)];
    }
    let i = u as usize;
    if i >= n - 1 {
        return row[n - 1];
    }
    let f = u - i as f64;
    row[i] + f * (row[i + 1] - row[i])
}

/// Square wave with vertical steps: high on the first and last quarter of
/// each period, low in between.
pub fn ideal_calibration_grid(step_height: f64, period: f64, i_x: f64) -> f64 {
    let u = math::frac(i_x / period);
    if !(0.25..0.75).contains(&u) {
        step_height
    } else {
        0.0
    }
}

/// Sine of amplitude `a_sin` and period `p_sin` plus a triangle wave with a
/// tenth of both, the triangle rising through zero at the origin.
pub fn quasi_sinusoid(a_sin: f64, p_sin: f64, i_x: f64) -> f64 {
    let a_tri = 0.1 * a_sin;
    let u = math::frac(i_x / (0.1 * p_sin));
    let tri = if u < 0.25 {
        4.0 * u
    } else if u < 0.75 {
        2.0 - 4.0 * u
    } else {
        4.0 * u - 4.0
    };
    a_sin * math::sin(2.0 * PI * i_x / p_sin) + a_tri * tri
}

#[derive(Debug, Clone, PartialEq)]
pub enum SampleSurface {
    Flat { height: f64 },
    CalibrationGrid { step_height: f64, period: f64 },
    QuasiSinusoid { amplitude: f64, period: f64 },
    Grid(HeightGrid),
}

impl SampleSurface {
    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            Self::Flat { height } => height.is_finite(),
            Self::CalibrationGrid {
                step_height,
                period,
            } => step_height.is_finite() && *period > 0.0,
            Self::QuasiSinusoid { amplitude, period } => amplitude.is_finite() && *period > 0.0,
            Self::Grid(_) => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter {
                name: "sample",
                reason: "generator parameters must be finite with a positive period",
            })
        }
    }

    /// Height at `(i_x, i_y)`. Grid rows are selected by the nearest `i_y`.
    pub fn height_at(&self, i_x: f64, i_y: f64) -> Result<f64> {
        match self {
            Self::Grid(g) => {
                let lx = g.length_x();
                let iy = g.row_index(i_y);
                if !(i_x >= 0.0 && i_x <= lx) || iy.is_none() {
                    return Err(Error::OutOfBounds { i_x, i_y });
                }
                Ok(interp_row(g.row(iy.unwrap_or(0)), g.dx, i_x))
            }
            _ => Ok(self.line(i_y)?.height(i_x)),
        }
    }

    /// Profile along one scan line.
    pub fn line(&self, i_y: f64) -> Result<SurfaceLine<'_>> {
        Ok(match self {
            Self::Flat { height } => SurfaceLine::Flat(*height),
            Self::CalibrationGrid {
                step_height,
                period,
            } => SurfaceLine::CalibrationGrid(*step_height, *period),
            Self::QuasiSinusoid { amplitude, period } => {
                SurfaceLine::QuasiSinusoid(*amplitude, *period)
            }
            Self::Grid(g) => {
                let iy = g
                    .row_index(i_y)
                    .ok_or(Error::OutOfBounds { i_x: 0.0, i_y })?;
                SurfaceLine::Row {
                    row: g.row(iy),
                    dx: g.dx,
                }
            }
        })
    }

    /// Natural scan-line length, when the surface has one.
    pub fn length_x(&self) -> Option<f64> {
        match self {
            Self::Grid(g) => Some(g.length_x()),
            _ => None,
        }
    }
}

/// Height along a single scan line; total in `i_x`, with grid rows held
/// constant past their ends.
#[derive(Debug, Clone, Copy)]
pub enum SurfaceLine<'a> {
    Flat(f64),
    CalibrationGrid(f64, f64),
    QuasiSinusoid(f64, f64),
    Row { row: &'a [f64], dx: f64 },
}

impl SurfaceLine<'_> {
    #[inline]
    pub fn height(&self, i_x: f64) -> f64 {
        match *self {
            Self::Flat(h) => h,
            Self::CalibrationGrid(s, p) => ideal_calibration_grid(s, p, i_x),
            Self::QuasiSinusoid(a, p) => quasi_sinusoid(a, p, i_x),
            Self::Row { row, dx } => interp_row(row, dx, i_x),
        }
    }
}

/// Forward raster: one line per `i_y`, each scanned from 0 to `line_length`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RasterPlan {
    pub line_ys: Vec<f64>,
    pub line_length: f64,
}

impl RasterPlan {
    pub fn uniform(lines: usize, spacing: f64, line_length: f64) -> Self {
        Self {
            line_ys: (0..lines).map(|k| k as f64 * spacing).collect(),
            line_length,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.line_length > 0.0 && self.line_length.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "line_length",
                reason: "must be positive",
            });
        }
        if self.line_ys.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidParameter {
                name: "line_ys",
                reason: "must be strictly increasing",
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn calibration_grid_levels() {
        let (h, p) = (28e-9, 1e-6);
        let a = ideal_calibration_grid(h, p, 0.1e-6);
        let b = ideal_calibration_grid(h, p, 0.6e-6);
        assert_eq!(a - b, 28e-9);
        assert_eq!(ideal_calibration_grid(0.0, p, 0.6e-6), 0.0);
        assert_eq!(ideal_calibration_grid(0.0, p, 0.1e-6), 0.0);
    }

    #[test]
    fn calibration_grid_step_positions() {
        let (h, p) = (28e-9, 1e-6);
        assert_eq!(ideal_calibration_grid(h, p, 0.2499e-6), h);
        assert_eq!(ideal_calibration_grid(h, p, 0.2501e-6), 0.0);
        assert_eq!(ideal_calibration_grid(h, p, 0.7499e-6), 0.0);
        assert_eq!(ideal_calibration_grid(h, p, 0.7501e-6), h);
    }

    #[test]
    fn quasi_sinusoid_origin_and_bound() {
        let (a, p) = (80e-9, 4e-6);
        assert_eq!(quasi_sinusoid(a, p, 0.0), 0.0);
        let max = (0..=40_000)
            .map(|i| quasi_sinusoid(a, p, i as f64 * p / 40_000.0))
            .fold(f64::MIN, f64::max);
        assert!(max <= 1.1 * a);
        assert!(max > a);
        // The triangle peaks a quarter of its period after the origin.
        let x = 0.025 * p;
        assert_relative_eq!(
            quasi_sinusoid(a, p, x) - a * (2.0 * PI * x / p).sin(),
            0.1 * a,
            max_relative = 1e-12
        );
    }

    fn small_grid() -> HeightGrid {
        HeightGrid::new(
            1e-9,
            2e-9,
            &[alloc::vec![0.0, 1e-9], alloc::vec![2e-9, 3e-9]],
        )
        .unwrap()
    }

    #[test]
    fn smallest_grid() {
        let g = small_grid();
        assert_eq!(g.length_x(), 1e-9);
        assert_eq!(g.length_y(), 2e-9);
        let s = SampleSurface::Grid(g);
        assert_eq!(s.height_at(0.0, 0.0).unwrap(), 0.0);
        assert_eq!(s.height_at(1e-9, 2e-9).unwrap(), 3e-9);
        assert_relative_eq!(
            s.height_at(0.5e-9, 0.0).unwrap(),
            0.5e-9,
            max_relative = 1e-15
        );
        // Rows are snapped, not blended.
        assert_eq!(s.height_at(0.0, 0.9e-9).unwrap(), 0.0);
        assert_eq!(s.height_at(0.0, 1.1e-9).unwrap(), 2e-9);
    }

    #[test]
    fn grid_errors() {
        assert!(matches!(
            HeightGrid::new(1.0, 1.0, &[alloc::vec![0.0, 1.0], alloc::vec![0.0]]),
            Err(Error::NonRectangular)
        ));
        assert!(matches!(
            HeightGrid::new(
                1.0,
                1.0,
                &[alloc::vec![0.0, f64::NAN], alloc::vec![0.0, 1.0]]
            ),
            Err(Error::NonFiniteHeight)
        ));
        let s = SampleSurface::Grid(small_grid());
        assert!(matches!(
            s.height_at(2e-9, 0.0),
            Err(Error::OutOfBounds { .. })
        ));
        assert!(matches!(
            s.height_at(0.0, 5e-9),
            Err(Error::OutOfBounds { .. })
        ));
    }

    #[test]
    fn sampled_generator_reproduced_at_nodes() {
        let (a, p) = (80e-9, 4e-6);
        let n = 401;
        let dx = p / (n - 1) as f64;
        let row: Vec<f64> = (0..n)
            .map(|i| quasi_sinusoid(a, p, i as f64 * dx))
            .collect();
        let g = HeightGrid::new(dx, 1e-9, &[row.clone(), row]).unwrap();
        let s = SampleSurface::Grid(g);
        for i in 0..n {
            let x = i as f64 * dx;
            assert_eq!(s.height_at(x, 0.0).unwrap(), quasi_sinusoid(a, p, x));
        }
    }

    #[test]
    fn raster_validation() {
        assert!(RasterPlan::uniform(3, 1e-8, 1e-6).validate().is_ok());
        let bad = RasterPlan {
            line_ys: alloc::vec![0.0, 0.0],
            line_length: 1e-6,
        };
        assert!(bad.validate().is_err());
    }

    proptest! {
        #[test]
        fn generators_periodic(x in 0.0f64..1e-5) {
            let p = 1e-6;
            prop_assert_eq!(ideal_calibration_grid(28e-9, p, x), ideal_calibration_grid(28e-9, p, x + 2.0 * p));
            let q = quasi_sinusoid(80e-9, 4e-6, x);
            let q2 = quasi_sinusoid(80e-9, 4e-6, x + 4e-6);
            prop_assert!((q - q2).abs() < 1e-20);
        }

        #[test]
        fn grid_interpolation_formula(heights in proptest::collection::vec(-1e-8f64..1e-8, 6), u in 0.0f64..1.0) {
            let dx = 2e-9;
            let g = HeightGrid::new(dx, 1e-9, &[heights.clone(), heights.clone()]).unwrap();
            let x = u * g.length_x();
            let i = ((x / dx) as usize).min(4);
            let f = (x - i as f64 * dx) / dx;
            let want = heights[i] * (1.0 - f) + heights[i + 1] * f;
            let got = SampleSurface::Grid(g).height_at(x, 0.0).unwrap();
            prop_assert!((got - want).abs() <= 1e-15 * 1e-8 + 1e-15 * want.abs());
        }
    }
}
