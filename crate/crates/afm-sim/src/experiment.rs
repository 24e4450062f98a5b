//! Multi-line scans.

use std::ops::Range;

use afm_core::control::{Feedforward, PredictiveHistory};
use afm_core::metrics::{aggregate, compute_metrics, LineTrace, Metrics};
use afm_core::sim::simulate_line;
use rayon::prelude::*;

use crate::config::Resolved;
use crate::error::{HarnessError, Result};

/// Environment variable capping the number of lines simulated in parallel.
pub const THREADS_ENV: &str = "AFM_SIM_THREADS";

#[derive(Debug, Clone)]
pub struct LineResult {
    /// Index in the raster plan.
    pub index: usize,
    pub i_y: f64,
    pub trace: LineTrace,
    pub metrics: Metrics,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub lines: Vec<LineResult>,
    pub aggregate: Metrics,
}

fn thread_cap() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(HarnessError::Config(format!(
                "{THREADS_ENV} must be a positive integer, got `{v}`"
            ))),
        },
        Err(_) => Ok(None),
    }
}

fn run_line(r: &Resolved, index: usize, ff: &Feedforward) -> Result<LineResult> {
    let i_y = r.plan.line_ys[index];
    let sim_err = |source| HarnessError::Sim {
        line: index,
        source,
    };
    let surface = r.surface.line(i_y).map_err(sim_err)?;
    let trace =
        simulate_line(&r.line, surface, ff, index as u64, r.plan.line_length).map_err(sim_err)?;
    let metrics = compute_metrics(&trace, &r.line.artefacts()).map_err(sim_err)?;
    Ok(LineResult {
        index,
        i_y,
        trace,
        metrics,
    })
}

/// Scans the raster lines in `lines` (all of them when `None`).
///
/// Line `k` draws its noise from stream `k`, so results do not depend on the
/// order or the parallelism of the lines. With the predictive controller the
/// lines run in order and each one is fed forward from those before it in
/// the selected range.
pub fn run_experiment(r: &Resolved, lines: Option<Range<usize>>) -> Result<ExperimentResult> {
    let n = r.plan.line_ys.len();
    let range = lines.unwrap_or(0..n);
    if range.end > n || range.start > range.end {
        return Err(HarnessError::Config(format!(
            "line range {range:?} outside 0..{n}"
        )));
    }
    let results = if r.line.controllers.selection.predictive {
        let mut history =
            PredictiveHistory::new(r.line.controllers.predictive, r.plan.line_length)?;
        let mut out = Vec::with_capacity(range.len());
        for k in range {
            let ff = history
                .plan()
                .map_err(|source| HarnessError::Sim { line: k, source })?;
            let res = run_line(r, k, &ff)?;
            let xs: Vec<f64> = res.trace.samples.iter().map(|s| s.i_x).collect();
            let est: Vec<f64> = res.trace.samples.iter().map(|s| s.sigma_hat).collect();
            history
                .push_estimate(&xs, &est)
                .map_err(|source| HarnessError::Sim { line: k, source })?;
            out.push(res);
        }
        out
    } else {
        let ff = Feedforward::zero();
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(cap) = thread_cap()? {
            builder = builder.num_threads(cap);
        }
        let pool = builder
            .build()
            .map_err(|e| HarnessError::Config(format!("thread pool: {e}")))?;
        pool.install(|| {
            range
                .into_par_iter()
                .map(|k| run_line(r, k, &ff))
                .collect::<Result<Vec<_>>>()
        })?
    };
    let traces: Vec<LineTrace> = results.iter().map(|l| l.trace.clone()).collect();
    let metrics: Vec<Metrics> = results.iter().map(|l| l.metrics.clone()).collect();
    Ok(ExperimentResult {
        aggregate: aggregate(&traces, &metrics),
        lines: results,
    })
}
