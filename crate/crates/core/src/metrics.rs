//! Line traces, artefact episodes and error statistics.

use alloc::vec::Vec;

use crate::math;
use crate::{Error, Result};

/// One recorded row of a scan line.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TraceSample {
    pub t: f64,
    pub i_x: f64,
    pub sigma: f64,
    pub sigma_hat: f64,
    pub b: f64,
    pub b_cmd: f64,
    #[cfg_attr(feature = "serde", serde(rename = "A"))]
    pub a: f64,
    pub v_x: f64,
    pub q: u8,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ImpactEvent {
    pub t: f64,
    pub i_x: f64,
    /// Tip velocity just before the impact, m/s (negative when approaching).
    pub v_i: f64,
}

/// Record of one scan line, engagement excluded.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LineTrace {
    pub samples: Vec<TraceSample>,
    pub impacts: Vec<ImpactEvent>,
    /// Time at which the scan started and reached the end of the line.
    pub t_start: f64,
    pub t_end: f64,
    /// Sum of the predictive gains used on this line.
    pub k_sigma_sum: f64,
}

/// RMS, standard deviation and signed extreme of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Summary {
    pub rms: f64,
    pub sd: f64,
    /// Value of largest magnitude, sign kept.
    pub max: f64,
    pub count: usize,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self::default();
        }
        let nf = n as f64;
        let mean = values.iter().sum::<f64>() / nf;
        let rms = math::sqrt(values.iter().map(|v| v * v).sum::<f64>() / nf);
        let sd = if n > 1 {
            math::sqrt(values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (nf - 1.0))
        } else {
            0.0
        };
        let max = values
            .iter()
            .copied()
            .fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
        Self {
            rms,
            sd,
            max,
            count: n,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum EpisodeKind {
    ProbeLoss,
    Recovery,
    Recoil,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Episode {
    pub kind: EpisodeKind,
    pub t_start: f64,
    pub t_end: f64,
}

/// Thresholds for artefact detection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArtefactConfig {
    pub a_t_plus: f64,
    pub a_t_minus: f64,
    pub a_t_rl: f64,
    /// Amplitude time constant, s.
    pub tau_a: f64,
    /// Recovery window after a probe loss, in `tau_a`.
    pub recovery_window: f64,
    /// Use the recorded hybrid mode instead of amplitude thresholds.
    pub use_modes: bool,
}

fn close(out: &mut Vec<Episode>, kind: EpisodeKind, t_start: f64, t_end: f64, merge_gap: f64) {
    if let Some(prev) = out.iter_mut().rev().find(|e| e.kind == kind) {
        if t_start - prev.t_end < merge_gap {
            prev.t_end = t_end;
            return;
        }
    }
    out.push(Episode {
        kind,
        t_start,
        t_end,
    });
}

/// Probe-loss, recovery and recoil intervals of a trace, ordered by start.
///
/// With `use_modes` the episodes are the intervals spent in modes 2, 3 and 4.
/// Otherwise probe loss starts at `A >= A_t+` and ends at `A <= A_t-`, recoil
/// lasts while `A <= A_t,RL` and each probe loss is followed by a recovery
/// window. Episodes of one kind closer than `tau_a` are merged.
pub fn detect_artefact_episodes(trace: &LineTrace, cfg: &ArtefactConfig) -> Vec<Episode> {
    let mut out: Vec<Episode> = Vec::new();
    let s = &trace.samples;
    if s.is_empty() {
        return out;
    }
    let t_last = s[s.len() - 1].t;
    let merge = cfg.tau_a;
    if cfg.use_modes {
        let kind_of = |q: u8| match q {
            2 => Some(EpisodeKind::ProbeLoss),
            3 => Some(EpisodeKind::Recovery),
            4 => Some(EpisodeKind::Recoil),
            _ => None,
        };
        let mut open: Option<(EpisodeKind, f64)> = None;
        for row in s {
            let k = kind_of(row.q);
            match (open, k) {
                (Some((ko, t0)), kn) if Some(ko) != kn => {
                    close(&mut out, ko, t0, row.t, merge);
                    open = kn.map(|k| (k, row.t));
                }
                (None, Some(kn)) => open = Some((kn, row.t)),
                _ => {}
            }
        }
        if let Some((k, t0)) = open {
            close(&mut out, k, t0, t_last, merge);
        }
    } else {
        let mut loss: Option<f64> = None;
        let mut recoil: Option<f64> = None;
        for row in s {
            match loss {
                None if row.a >= cfg.a_t_plus => loss = Some(row.t),
                Some(t0) if row.a <= cfg.a_t_minus => {
                    close(&mut out, EpisodeKind::ProbeLoss, t0, row.t, merge);
                    loss = None;
                }
                _ => {}
            }
            match recoil {
                None if row.a <= cfg.a_t_rl => recoil = Some(row.t),
                Some(t0) if row.a > cfg.a_t_rl => {
                    close(&mut out, EpisodeKind::Recoil, t0, row.t, merge);
                    recoil = None;
                }
                _ => {}
            }
        }
        if let Some(t0) = loss {
            close(&mut out, EpisodeKind::ProbeLoss, t0, t_last, merge);
        }
        if let Some(t0) = recoil {
            close(&mut out, EpisodeKind::Recoil, t0, t_last, merge);
        }
        let windows: Vec<Episode> = out
            .iter()
            .filter(|e| e.kind == EpisodeKind::ProbeLoss)
            .map(|e| Episode {
                kind: EpisodeKind::Recovery,
                t_start: e.t_end,
                t_end: (e.t_end + cfg.recovery_window * cfg.tau_a).min(t_last),
            })
            .collect();
        out.extend(windows);
    }
    out.sort_by(|a, b| a.t_start.total_cmp(&b.t_start));
    out
}

/// Largest `sigma_hat - sigma` after each probe loss, within the recovery
/// window and before the next probe loss or recoil starts.
pub fn recovery_bumps(trace: &LineTrace, episodes: &[Episode], cfg: &ArtefactConfig) -> Vec<f64> {
    let mut bumps = Vec::new();
    for (i, e) in episodes.iter().enumerate() {
        if e.kind != EpisodeKind::ProbeLoss {
            continue;
        }
        let mut t_stop = e.t_end + cfg.recovery_window * cfg.tau_a;
        for later in &episodes[i + 1..] {
            if later.kind != EpisodeKind::Recovery && later.t_start >= e.t_end {
                t_stop = t_stop.min(later.t_start);
                break;
            }
        }
        let bump = trace
            .samples
            .iter()
            .filter(|r| r.t >= e.t_end && r.t <= t_stop)
            .map(|r| r.sigma_hat - r.sigma)
            .fold(f64::NEG_INFINITY, f64::max);
        if bump.is_finite() {
            bumps.push(bump);
        }
    }
    bumps
}

/// Error statistics of one line or of a whole scan.
#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Metrics {
    pub e_sigma: Summary,
    pub v_i: Summary,
    pub recovery_bumps: Vec<f64>,
    pub recovery: Summary,
    pub probe_loss_count: usize,
    pub recoil_count: usize,
    /// Scan time, s.
    pub t_s: f64,
    pub k_sigma_sum: f64,
}

fn check_identity(trace: &LineTrace) -> Result<()> {
    for r in &trace.samples {
        let diff = r.sigma_hat - (r.b - r.a);
        if diff != 0.0 {
            return Err(Error::InvalidParameter {
                name: "sigma_hat",
                reason: "trace row violates sigma_hat = b - A",
            });
        }
    }
    Ok(())
}

pub fn compute_metrics(trace: &LineTrace, cfg: &ArtefactConfig) -> Result<Metrics> {
    if trace.samples.is_empty() {
        return Err(Error::EmptyTrace);
    }
    check_identity(trace)?;
    let errors: Vec<f64> = trace
        .samples
        .iter()
        .map(|r| r.sigma_hat - r.sigma)
        .collect();
    let speeds: Vec<f64> = trace.impacts.iter().map(|i| i.v_i).collect();
    let episodes = detect_artefact_episodes(trace, cfg);
    let bumps = recovery_bumps(trace, &episodes, cfg);
    Ok(Metrics {
        e_sigma: Summary::of(&errors),
        v_i: Summary::of(&speeds),
        recovery: Summary::of(&bumps),
        recovery_bumps: bumps,
        probe_loss_count: episodes
            .iter()
            .filter(|e| e.kind == EpisodeKind::ProbeLoss)
            .count(),
        recoil_count: episodes
            .iter()
            .filter(|e| e.kind == EpisodeKind::Recoil)
            .count(),
        t_s: trace.t_end - trace.t_start,
        k_sigma_sum: trace.k_sigma_sum,
    })
}

/// Statistics pooled over all lines; `t_s` is the total scan time.
pub fn aggregate(traces: &[LineTrace], per_line: &[Metrics]) -> Metrics {
    let errors: Vec<f64> = traces
        .iter()
        .flat_map(|t| t.samples.iter().map(|r| r.sigma_hat - r.sigma))
        .collect();
    let speeds: Vec<f64> = traces
        .iter()
        .flat_map(|t| t.impacts.iter().map(|i| i.v_i))
        .collect();
    let bumps: Vec<f64> = per_line
        .iter()
        .flat_map(|m| m.recovery_bumps.iter().copied())
        .collect();
    let lines = per_line.len().max(1) as f64;
    Metrics {
        e_sigma: Summary::of(&errors),
        v_i: Summary::of(&speeds),
        recovery: Summary::of(&bumps),
        recovery_bumps: bumps,
        probe_loss_count: per_line.iter().map(|m| m.probe_loss_count).sum(),
        recoil_count: per_line.iter().map(|m| m.recoil_count).sum(),
        t_s: per_line.iter().map(|m| m.t_s).sum(),
        k_sigma_sum: per_line.iter().map(|m| m.k_sigma_sum).sum::<f64>() / lines,
    }
}
