//! Trace directories: per-line CSV files, a metrics summary and the config.
//!
//! ```text
//! out/
//!   config.json        resolved experiment config
//!   metrics.json       per-line and pooled statistics
//!   lines.json         scan start/end time and gain sum of each line
//!   line_<k>.csv       t,i_x,sigma,sigma_hat,b,b_cmd,A,v_x,q
//!   impacts_<k>.csv    t,i_x,v_i
//! ```
//!
//! `lines.json` holds what the CSV rows do not, so metrics can be recomputed
//! from the directory alone.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use afm_core::metrics::{aggregate, compute_metrics, ImpactEvent, LineTrace, Metrics, TraceSample};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::experiment::ExperimentResult;

pub const CONFIG_FILE: &str = "config.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const LINES_FILE: &str = "lines.json";

pub fn line_file(dir: &Path, k: usize) -> PathBuf {
    dir.join(format!("line_{k}.csv"))
}

pub fn impacts_file(dir: &Path, k: usize) -> PathBuf {
    dir.join(format!("impacts_{k}.csv"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineInfo {
    pub index: usize,
    pub t_start: f64,
    pub t_end: f64,
    pub k_sigma_sum: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineMetrics {
    pub index: usize,
    pub i_y: f64,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub lines: Vec<LineMetrics>,
    pub aggregate: Metrics,
    #[serde(rename = "T_s_tot")]
    pub t_s_tot: f64,
}

impl MetricsReport {
    pub fn from_result(res: &ExperimentResult) -> Self {
        Self {
            lines: res
                .lines
                .iter()
                .map(|l| LineMetrics {
                    index: l.index,
                    i_y: l.i_y,
                    metrics: l.metrics.clone(),
                })
                .collect(),
            aggregate: res.aggregate.clone(),
            t_s_tot: res.aggregate.t_s,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("metrics serialise");
        s.push('\n');
        s
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| HarnessError::io(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> HarnessError {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    HarnessError::Parse {
        path: path.to_path_buf(),
        line,
        reason: e.to_string(),
    }
}

fn g(v: f64) -> String {
    format!("{v:.16e}")
}

fn format_line(trace: &LineTrace) -> String {
    let mut out = String::from("t,i_x,sigma,sigma_hat,b,b_cmd,A,v_x,q\n");
    for r in &trace.samples {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            g(r.t),
            g(r.i_x),
            g(r.sigma),
            g(r.sigma_hat),
            g(r.b),
            g(r.b_cmd),
            g(r.a),
            g(r.v_x),
            r.q
        ));
    }
    out
}

fn format_impacts(trace: &LineTrace) -> String {
    let mut out = String::from("t,i_x,v_i\n");
    for i in &trace.impacts {
        out.push_str(&format!("{},{},{}\n", g(i.t), g(i.i_x), g(i.v_i)));
    }
    out
}

/// Writes the whole trace directory, creating it if needed.
pub fn write_trace_dir(dir: &Path, cfg: &ExperimentConfig, res: &ExperimentResult) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    write_file(&dir.join(CONFIG_FILE), cfg.to_json().as_bytes())?;
    let info: Vec<LineInfo> = res
        .lines
        .iter()
        .map(|l| LineInfo {
            index: l.index,
            t_start: l.trace.t_start,
            t_end: l.trace.t_end,
            k_sigma_sum: l.trace.k_sigma_sum,
        })
        .collect();
    let mut text = serde_json::to_string_pretty(&info).expect("line info serialises");
    text.push('\n');
    write_file(&dir.join(LINES_FILE), text.as_bytes())?;
    for l in &res.lines {
        write_file(&line_file(dir, l.index), format_line(&l.trace).as_bytes())?;
        write_file(
            &impacts_file(dir, l.index),
            format_impacts(&l.trace).as_bytes(),
        )?;
    }
    write_file(
        &dir.join(METRICS_FILE),
        MetricsReport::from_result(res).to_json().as_bytes(),
    )
}

#[derive(Deserialize)]
struct Row {
    t: f64,
    i_x: f64,
    sigma: f64,
    sigma_hat: f64,
    b: f64,
    b_cmd: f64,
    #[serde(rename = "A")]
    a: f64,
    v_x: f64,
    q: u8,
}

/// Reads the per-line entries of `lines.json`.
pub fn read_line_info(dir: &Path) -> Result<Vec<LineInfo>> {
    let path = dir.join(LINES_FILE);
    let text = fs::read_to_string(&path).map_err(|e| HarnessError::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::Parse {
        path,
        line: e.line(),
        reason: e.to_string(),
    })
}

/// Reads `line_<k>.csv` and `impacts_<k>.csv` back into a trace.
pub fn read_line(dir: &Path, info: &LineInfo) -> Result<LineTrace> {
    let path = line_file(dir, info.index);
    let mut samples = Vec::new();
    let mut rdr = csv::Reader::from_path(&path).map_err(|e| csv_err(&path, e))?;
    for row in rdr.deserialize::<Row>() {
        let r = row.map_err(|e| csv_err(&path, e))?;
        samples.push(TraceSample {
            t: r.t,
            i_x: r.i_x,
            sigma: r.sigma,
            sigma_hat: r.sigma_hat,
            b: r.b,
            b_cmd: r.b_cmd,
            a: r.a,
            v_x: r.v_x,
            q: r.q,
        });
    }
    let ipath = impacts_file(dir, info.index);
    let mut impacts = Vec::new();
    let mut rdr = csv::Reader::from_path(&ipath).map_err(|e| csv_err(&ipath, e))?;
    for ev in rdr.deserialize::<ImpactEvent>() {
        impacts.push(ev.map_err(|e| csv_err(&ipath, e))?);
    }
    Ok(LineTrace {
        samples,
        impacts,
        t_start: info.t_start,
        t_end: info.t_end,
        k_sigma_sum: info.k_sigma_sum,
    })
}

/// Recomputes the metrics report of a trace directory from its CSV files.
pub fn recompute_metrics(dir: &Path) -> Result<MetricsReport> {
    let cfg = ExperimentConfig::load(&dir.join(CONFIG_FILE))?;
    let resolved = cfg.resolve(dir)?;
    let artefacts = resolved.line.artefacts();
    let mut traces = Vec::new();
    let mut lines = Vec::new();
    for info in read_line_info(dir)? {
        let k = info.index;
        let trace = read_line(dir, &info)?;
        let metrics = compute_metrics(&trace, &artefacts)
            .map_err(|source| HarnessError::Sim { line: k, source })?;
        let i_y =
            *resolved.plan.line_ys.get(k).ok_or_else(|| {
                HarnessError::Config(format!("line {k} is not in the raster plan"))
            })?;
        lines.push(LineMetrics {
            index: k,
            i_y,
            metrics,
        });
        traces.push(trace);
    }
    let per_line: Vec<Metrics> = lines.iter().map(|l| l.metrics.clone()).collect();
    let agg = aggregate(&traces, &per_line);
    Ok(MetricsReport {
        t_s_tot: agg.t_s,
        aggregate: agg,
        lines,
    })
}

pub fn write_stdout(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    out.write_all(text.as_bytes())
        .map_err(|e| HarnessError::io("<stdout>", e))
}
