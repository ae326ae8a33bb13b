//! Library side of the CLI: configuration loading and the command bodies,
//! kept out of `main` so integration tests can drive them directly.

pub mod config;

use std::path::Path;

use anyhow::{bail, Context, Result};

use config::Config;
use seqpipe_core::{chrome_trace_json, render_report, simulate, SimReport, SimTrace};

/// Simulates one scenario config.
pub fn run_scenario(config: &Config) -> Result<(SimReport, SimTrace)> {
    let partition = config.resolve_partition()?;
    simulate(
        &config.workload,
        &config.cost,
        &config.memory,
        &config.mode,
        &partition,
    )
    .context("simulation failed")
}

/// Writes the report and trace files a simulate run asked for; CLI flags
/// override the paths in the config's `[output]` table.
pub fn write_outputs(
    config: &Config,
    report: &SimReport,
    trace: &SimTrace,
    trace_flag: Option<&Path>,
    report_flag: Option<&Path>,
) -> Result<()> {
    let from_config = config.output.clone().unwrap_or_default();
    if let Some(path) = trace_flag.or(from_config.trace.as_deref()) {
        std::fs::write(path, chrome_trace_json(trace))
            .with_context(|| format!("writing trace {}", path.display()))?;
    }
    if let Some(path) = report_flag.or(from_config.report.as_deref()) {
        std::fs::write(path, render_report(report, trace))
            .with_context(|| format!("writing report {}", path.display()))?;
    }
    Ok(())
}

/// Parses a `timesteps,seconds` observation for the calibrate command.
pub fn parse_observation(text: &str) -> Result<(usize, f64)> {
    let Some((steps, seconds)) = text.split_once(',') else {
        bail!("expected TIMESTEPS,SECONDS, got {text:?}");
    };
    let steps: usize = steps
        .trim()
        .parse()
        .with_context(|| format!("bad timestep count in {text:?}"))?;
    let seconds: f64 = seconds
        .trim()
        .parse()
        .with_context(|| format!("bad latency in {text:?}"))?;
    Ok((steps, seconds))
}
