//! Plain-text height maps.
//!
//! ```text
//! # dx=1e-8 dy=1e-7 scale=1e-9
//! 0.0, 1.5, 3.0
//! 0.5, 2.0, 3.5
//! ```
//!
//! One row per `i_y`, columns along `i_x`. Stored values are multiplied by
//! `scale` (default 1) to give heights in metres.

use std::fs;
use std::path::Path;

use afm_core::sample::HeightGrid;

use crate::error::{HarnessError, Result};

fn parse_error(path: &Path, line: usize, reason: impl Into<String>) -> HarnessError {
    HarnessError::Parse {
        path: path.to_path_buf(),
        line,
        reason: reason.into(),
    }
}

/// Parses height-map text; `path` is only used in error messages.
pub fn parse_heightmap(text: &str, path: &Path) -> Result<HeightGrid> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_error(path, 1, "empty file"))?;
    let header = header
        .trim()
        .strip_prefix('#')
        .ok_or_else(|| parse_error(path, 1, "expected `# dx=<m> dy=<m> scale=<factor>` header"))?;
    let (mut dx, mut dy, mut scale) = (None, None, 1.0);
    for field in header.split_whitespace() {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| parse_error(path, 1, format!("malformed header field `{field}`")))?;
        let v: f64 = value
            .parse()
            .map_err(|_| parse_error(path, 1, format!("`{key}` is not a number")))?;
        match key {
            "dx" => dx = Some(v),
            "dy" => dy = Some(v),
            "scale" => scale = v,
            _ => {
                return Err(parse_error(
                    path,
                    1,
                    format!("unknown header field `{key}`"),
                ))
            }
        }
    }
    let dx = dx.ok_or_else(|| parse_error(path, 1, "missing dx"))?;
    let dy = dy.ok_or_else(|| parse_error(path, 1, "missing dy"))?;
    let mut rows = Vec::new();
    for (k, line) in lines {
        let row = line
            .split(',')
            .map(|c| {
                c.trim()
                    .parse::<f64>()
                    .map(|v| v * scale)
                    .map_err(|_| parse_error(path, k + 1, format!("bad height `{}`", c.trim())))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    HeightGrid::new(dx, dy, &rows).map_err(|e| parse_error(path, 0, e.to_string()))
}

pub fn read_heightmap(path: &Path) -> Result<HeightGrid> {
    let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    parse_heightmap(&text, path)
}

/// Formats a grid with `scale=1` and 17 significant digits, so that reading
/// it back is exact.
pub fn format_heightmap(grid: &HeightGrid) -> String {
    let mut out = format!("# dx={:.16e} dy={:.16e} scale=1\n", grid.dx, grid.dy);
    for row in grid.rows() {
        let cells: Vec<String> = row.iter().map(|h| format!("{h:.16e}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn write_heightmap(grid: &HeightGrid, path: &Path) -> Result<()> {
    fs::write(path, format_heightmap(grid)).map_err(|e| HarnessError::io(path, e))
}
