use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use seqpipe_cli::config::Config;
use seqpipe_cli::{parse_observation, run_scenario, write_outputs};
use seqpipe_core::verify::{aco_suite, equivalence_suite, layout_suite, partition_suite};
use seqpipe_core::{
    brute_force_partition, calibrate_linear, closed_form_partition, single_gpu_cost_model, Variant,
};

#[derive(Parser)]
#[command(
    name = "seqpipe",
    version,
    about = "Sequence-parallel attention verifier and video-pipeline simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a verification suite: layout, equivalence, aco, or partition
    Verify {
        /// Suite name
        suite: Option<String>,
        /// Suite name (alternative spelling of the positional argument)
        #[arg(long = "suite", value_name = "NAME", conflicts_with = "suite")]
        suite_flag: Option<String>,
        /// Seed for the randomized suites
        #[arg(long)]
        seed: Option<u64>,
        /// Take the seed from a scenario config instead
        #[arg(long, conflicts_with = "seed")]
        config: Option<PathBuf>,
    },
    /// Simulate a scenario config; optionally compare against a baseline config
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Second config whose makespan becomes the speedup denominator
        #[arg(long)]
        baseline: Option<PathBuf>,
        /// Write a Chrome trace-event file here (overrides `[output]` in the config)
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Write the text report here (overrides `[output]` in the config)
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Split GPUs between denoising and decoding
    Partition {
        /// Derive stage times and run the brute-force sweep from a scenario config
        #[arg(long)]
        config: Option<PathBuf>,
        /// Single-GPU denoise time per prompt (seconds)
        #[arg(long)]
        t_denoise: Option<f64>,
        /// Single-GPU decode time per latent (seconds)
        #[arg(long)]
        t_decode: Option<f64>,
        #[arg(long, default_value_t = 8)]
        gpus: usize,
    },
    /// Fit latency = fixed + per_step * timesteps through two observations
    Calibrate {
        /// One observation as TIMESTEPS,SECONDS; give exactly two
        #[arg(long = "point", value_name = "T,SECONDS")]
        points: Vec<String>,
        /// Write the fitted values as a TOML fragment
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    // die quietly when stdout closes early (e.g. piping into `head`)
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Verify {
            suite,
            suite_flag,
            seed,
            config,
        } => {
            let Some(name) = suite.or(suite_flag) else {
                bail!("missing suite name (layout, equivalence, aco, partition)");
            };
            let seed = match (seed, config) {
                (Some(seed), _) => seed,
                (None, Some(path)) => Config::load(&path)?.seed,
                (None, None) => 0,
            };
            let report = match name.as_str() {
                "layout" => layout_suite(),
                "equivalence" => equivalence_suite(seed),
                "aco" => aco_suite(seed),
                "partition" => partition_suite(20, 8, 16),
                other => {
                    bail!("unknown suite {other:?} (expected layout, equivalence, aco, partition)")
                }
            };
            println!("{}", report.summary());
            for failure in report.failures.iter().take(10) {
                println!("  {failure}");
            }
            if report.failures.len() > 10 {
                println!("  ... and {} more", report.failures.len() - 10);
            }
            Ok(check_exit(report.ok))
        }
        Command::Simulate {
            config,
            baseline,
            trace,
            report,
        } => {
            let scenario = Config::load(&config)?;
            let (sim_report, sim_trace) = run_scenario(&scenario)?;
            write_outputs(
                &scenario,
                &sim_report,
                &sim_trace,
                trace.as_deref(),
                report.as_deref(),
            )?;
            println!(
                "prompts {}  makespan {:.3}s  oom {}",
                sim_report.per_prompt_latency.len(),
                sim_report.makespan,
                sim_report.oom
            );
            for (i, latency) in sim_report.per_prompt_latency.iter().enumerate() {
                println!("prompt {i}: {latency:.3}s");
            }
            if let Some(base_path) = baseline {
                let base = Config::load(&base_path)?;
                let (base_report, _) = run_scenario(&base)?;
                println!("baseline makespan {:.3}s", base_report.makespan);
                if sim_report.makespan > 0.0 {
                    println!("speedup {:.2}x", base_report.makespan / sim_report.makespan);
                }
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Partition {
            config,
            t_denoise,
            t_decode,
            gpus,
        } => {
            if let Some(path) = config {
                let scenario = Config::load(&path)?;
                let cluster = scenario
                    .gpus
                    .or(scenario.partition.map(|p| p.denoise + p.decode))
                    .context("config does not fix a cluster size")?;
                let (t_den, t_dec) = scenario.stage_times(cluster);
                let closed = closed_form_partition(t_den, t_dec, cluster)?;
                println!("stage times: denoise {t_den:.3}s, decode {t_dec:.3}s on one GPU");
                println!(
                    "closed form: denoise {} decode {}",
                    closed.n_denoise, closed.n_decode
                );
                if scenario.mode.variant == Variant::DeDiVae
                    && scenario.workload.prompts >= 2 * cluster
                {
                    let (best, table) = brute_force_partition(
                        &scenario.workload,
                        &scenario.cost,
                        &scenario.memory,
                        &scenario.mode,
                        cluster,
                    )?;
                    for (part, makespan) in &table {
                        println!(
                            "  denoise {} decode {}: makespan {makespan:.3}s",
                            part.n_denoise, part.n_decode
                        );
                    }
                    println!(
                        "brute force: denoise {} decode {}",
                        best.n_denoise, best.n_decode
                    );
                }
            } else {
                let (Some(t_den), Some(t_dec)) = (t_denoise, t_decode) else {
                    bail!("give --config or both --t-denoise and --t-decode");
                };
                let closed = closed_form_partition(t_den, t_dec, gpus)?;
                println!(
                    "closed form: denoise {} decode {}",
                    closed.n_denoise, closed.n_decode
                );
                // cross-check with the simulator sweep on a steady stream
                let timesteps = 10;
                let cost = single_gpu_cost_model(t_den, t_dec, timesteps);
                let workload = seqpipe_core::WorkloadSpec {
                    width: 8,
                    height: 8,
                    frames: 8,
                    timesteps,
                    prompts: 2 * gpus,
                    heads: lcm_up_to(gpus.saturating_sub(1).max(1)),
                };
                let memory = seqpipe_core::MemoryModel {
                    w_dit: 0.0,
                    w_vae: 0.0,
                    w_text: 0.0,
                    act_denoise_coeff: 0.0,
                    act_decode_coeff: 0.0,
                    gpu_budget: 48.0,
                };
                let (best, _) = brute_force_partition(
                    &workload,
                    &cost,
                    &memory,
                    &seqpipe_core::ScheduleMode::decoupled(false, false),
                    gpus,
                )?;
                println!(
                    "brute force: denoise {} decode {}",
                    best.n_denoise, best.n_decode
                );
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Calibrate { points, out } => {
            if points.len() != 2 {
                bail!("calibrate needs exactly two --point observations");
            }
            let a = parse_observation(&points[0])?;
            let b = parse_observation(&points[1])?;
            let (per_step, fixed) = calibrate_linear(a, b)?;
            println!("per_step {per_step}");
            println!("fixed {fixed}");
            if let Some(path) = out {
                let fragment = format!("per_step = {per_step}\nfixed = {fixed}\n");
                std::fs::write(&path, fragment)
                    .with_context(|| format!("writing {}", path.display()))?;
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn check_exit(ok: bool) -> ExitCode {
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn lcm_up_to(n: usize) -> usize {
    let gcd = |mut a: usize, mut b: usize| {
        while b != 0 {
            (a, b) = (b, a % b);
        }
        a
    };
    (1..=n).fold(1usize, |acc, k| acc / gcd(acc, k) * k)
}
