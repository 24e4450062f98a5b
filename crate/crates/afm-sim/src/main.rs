use std::ops::Range;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use afm_core::sample::{ideal_calibration_grid, quasi_sinusoid, HeightGrid};
use afm_sim::heightmap::write_heightmap;
use afm_sim::output::{recompute_metrics, write_stdout, write_trace_dir, MetricsReport};
use afm_sim::{run_experiment, ExperimentConfig, HarnessError, Result};
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "afm-sim", version, about = "Tapping-mode AFM scan simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a raster scan and write a trace directory.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Half-open range of raster lines, e.g. `0..4`.
        #[arg(long, value_parser = parse_range)]
        lines: Option<Range<usize>>,
        #[arg(long)]
        seed: Option<u64>,
        /// Override a config entry, e.g. `--set feedback_controller.v_x=5e-4`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
    },
    /// Generate sample height maps.
    Sample {
        #[command(subcommand)]
        command: SampleCommand,
    },
    /// Recompute metrics from a trace directory and print them as JSON.
    Metrics { dir: PathBuf },
}

#[derive(Subcommand)]
enum SampleCommand {
    Gen {
        kind: SampleKind,
        #[arg(long, default_value_t = 1001)]
        nx: usize,
        #[arg(long, default_value_t = 2)]
        ny: usize,
        #[arg(long, default_value_t = 1e-8)]
        dx: f64,
        #[arg(long, default_value_t = 1e-7)]
        dy: f64,
        #[arg(long, default_value_t = 28e-9)]
        step_height: f64,
        #[arg(long)]
        period: Option<f64>,
        #[arg(long, default_value_t = 80e-9)]
        amplitude: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SampleKind {
    Grid,
    Sinusoid,
}

fn parse_range(s: &str) -> std::result::Result<Range<usize>, String> {
    let (a, b) = s.split_once("..").ok_or("expected <start>..<end>")?;
    let a: usize = a.parse().map_err(|_| format!("bad start `{a}`"))?;
    let b: usize = b.parse().map_err(|_| format!("bad end `{b}`"))?;
    if a > b {
        return Err(format!("empty range {a}..{b}"));
    }
    Ok(a..b)
}

fn run(
    config: &Path,
    out: &Path,
    lines: Option<Range<usize>>,
    seed: Option<u64>,
    sets: &[String],
) -> Result<()> {
    let base = config.parent().unwrap_or(Path::new("."));
    let mut cfg = ExperimentConfig::load(config)?.with_overrides(sets)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    let resolved = cfg.resolve(base)?;
    let res = run_experiment(&resolved, lines)?;
    write_trace_dir(out, &cfg.anchored(base), &res)?;
    let report = MetricsReport::from_result(&res);
    eprintln!(
        "{} lines, rms e_sigma {:.3e} m, T_s {:.4e} s",
        report.lines.len(),
        report.aggregate.e_sigma.rms,
        report.t_s_tot
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn gen(
    kind: SampleKind,
    nx: usize,
    ny: usize,
    dx: f64,
    dy: f64,
    step_height: f64,
    period: Option<f64>,
    amplitude: f64,
    out: &Path,
) -> Result<()> {
    let rows: Vec<Vec<f64>> = (0..ny)
        .map(|_| {
            (0..nx)
                .map(|i| {
                    let x = i as f64 * dx;
                    match kind {
                        SampleKind::Grid => {
                            ideal_calibration_grid(step_height, period.unwrap_or(1e-6), x)
                        }
                        SampleKind::Sinusoid => {
                            quasi_sinusoid(amplitude, period.unwrap_or(4e-6), x)
                        }
                    }
                })
                .collect()
        })
        .collect();
    let grid = HeightGrid::new(dx, dy, &rows)?;
    write_heightmap(&grid, out)
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            config,
            out,
            lines,
            seed,
            sets,
        } => run(&config, &out, lines, seed, &sets),
        Command::Sample {
            command:
                SampleCommand::Gen {
                    kind,
                    nx,
                    ny,
                    dx,
                    dy,
                    step_height,
                    period,
                    amplitude,
                    out,
                },
        } => gen(kind, nx, ny, dx, dy, step_height, period, amplitude, &out),
        Command::Metrics { dir } => write_stdout(&recompute_metrics(&dir)?.to_json()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("afm-sim: {e}");
            let e: HarnessError = e;
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
