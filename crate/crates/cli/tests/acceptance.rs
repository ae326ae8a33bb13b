//! Acceptance suite: one test per criterion, each printing a PASS/FAIL
//! line (visible with `cargo test --test acceptance -- --nocapture`).

use std::path::PathBuf;
use std::time::Instant;

use seqpipe_cli::config::Config;
use seqpipe_core::verify::{aco_suite, equivalence_suite, layout_suite, partition_suite};
use seqpipe_core::{
    calibrate_linear, chrome_trace_json, colocated_cost_from_fit, decoupled_cost_from_fit,
    peak_memory, simulate, validate_chrome_trace, validate_trace, CostModel, MemoryModel,
    Partition, ScheduleMode, TextEncoderPlacement, WorkloadSpec,
};

fn verdict(id: &str, description: &str, ok: bool) {
    println!(
        "[criterion {id}] {description}: {}",
        if ok { "PASS" } else { "FAIL" }
    );
}

fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
}

fn plain_memory() -> MemoryModel {
    MemoryModel {
        w_dit: 1.0,
        w_vae: 1.0,
        w_text: 0.5,
        act_denoise_coeff: 0.0,
        act_decode_coeff: 0.0,
        gpu_budget: 48.0,
    }
}

fn workload(timesteps: usize, prompts: usize, heads: usize) -> WorkloadSpec {
    WorkloadSpec {
        width: 480,
        height: 352,
        frames: 97,
        timesteps,
        prompts,
        heads,
    }
}

#[test]
fn criterion_1_layout_restoration_exhaustive() {
    let start = Instant::now();
    let report = layout_suite();
    let elapsed = start.elapsed();
    let ok = report.ok && report.cases == 64 && elapsed.as_secs_f64() < 1.0;
    verdict(
        "1",
        "view-permute-view restores every head layout up to 8x8",
        ok,
    );
    assert!(ok, "failures: {:?}, elapsed {elapsed:?}", report.failures);
}

#[test]
fn criterion_2_pipelined_equals_baseline() {
    let start = Instant::now();
    let report = equivalence_suite(0);
    let elapsed = start.elapsed();
    let ok = report.ok && report.cases >= 100 && elapsed.as_secs_f64() < 30.0;
    verdict(
        "2",
        "pipelined attention equals the baseline bit-for-bit on the seeded grid",
        ok,
    );
    assert!(
        ok,
        "cases {}, failures: {:?}, elapsed {elapsed:?}",
        report.cases, report.failures
    );
}

#[test]
fn criterion_3_coprocessing_equals_oracle() {
    let start = Instant::now();
    let report = aco_suite(0);
    let elapsed = start.elapsed();
    let ok = report.ok && report.cases >= 50 && elapsed.as_secs_f64() < 30.0;
    verdict(
        "3",
        "co-processed attention equals the head-loop oracle after pad stripping",
        ok,
    );
    assert!(
        ok,
        "cases {}, failures: {:?}, elapsed {elapsed:?}",
        report.cases, report.failures
    );
}

#[test]
fn criterion_4_partition_grid_agreement() {
    let start = Instant::now();
    let report = partition_suite(20, 8, 16);
    let elapsed = start.elapsed();
    let ok = report.ok && elapsed.as_secs_f64() < 120.0;
    verdict(
        "4",
        "closed-form split within one GPU of brute force on 95% of the grid",
        ok,
    );
    assert!(
        ok,
        "{}/{} passed, failures: {:?}, elapsed {elapsed:?}",
        report.passed, report.cases, report.failures
    );
}

#[test]
fn criterion_5_analytic_coprocessing_speedup() {
    let configs = [
        (2.0, 6.0, 7usize, 8usize),
        (1.0, 3.0, 6, 8),
        (1.0, 1.0, 4, 8),
    ];
    let mut failures = Vec::new();
    for (t_l, t_a, nd, n) in configs {
        let w = workload(10, 1, nd * n);
        let cost = CostModel {
            t_linear: t_l,
            t_attention: t_a,
            t_a2a_head: 0.0,
            overlap_fraction: 0.0,
            t_decode: 0.0,
            t_offload: 0.0,
            t_text: 0.0,
            t_xfer: 0.0,
            calibration_gpus: Some(nd),
        };
        let part = Partition::new(nd, n - nd);
        let makespan = |aco: bool| {
            simulate(
                &w,
                &cost,
                &plain_memory(),
                &ScheduleMode::decoupled(false, aco),
                &part,
            )
            .unwrap()
            .0
            .makespan
        };
        let simulated = makespan(false) / makespan(true);
        let predicted = (t_l + t_a) / (t_l + t_a * nd as f64 / n as f64);
        let err = (simulated - predicted).abs() / predicted;
        if err >= 0.01 {
            failures.push(format!(
                "(t_l={t_l}, t_a={t_a}, nd={nd}, n={n}): simulated {simulated:.6} vs {predicted:.6}"
            ));
        }
    }
    let ok = failures.is_empty();
    verdict(
        "5",
        "simulated co-processing speedup matches the closed-form ratio within 1%",
        ok,
    );
    assert!(ok, "{failures:?}");
}

#[test]
fn criterion_6_calibrated_replay_of_published_latencies() {
    let start = Instant::now();
    let mut failures = Vec::new();
    // (fit points, target at 30 steps, tolerance, decoupled?)
    struct Row {
        name: &'static str,
        points: [(usize, f64); 2],
        target: f64,
        tolerance: f64,
        decoupled: Option<(usize, usize)>, // (heads, n_denoise)
    }
    let rows = [
        Row {
            name: "osp-a6000 480x352x97 baseline",
            points: [(10, 227.0), (50, 622.0)],
            target: 420.0,
            tolerance: 0.05,
            decoupled: None,
        },
        Row {
            name: "osp-a6000 480x352x97 optimized",
            points: [(10, 107.0), (50, 502.0)],
            target: 304.0,
            tolerance: 0.05,
            decoupled: Some((24, 7)),
        },
        Row {
            name: "hv-a6000 480x352x97 baseline",
            points: [(10, 540.0), (50, 965.0)],
            target: 767.0,
            tolerance: 0.10,
            decoupled: None,
        },
    ];
    for row in rows {
        let (per_step, fixed) = calibrate_linear(row.points[0], row.points[1]).unwrap();
        let prompts = 10;
        let w = workload(30, prompts, 24);
        let simulated = match row.decoupled {
            None => {
                let cost = colocated_cost_from_fit(per_step, fixed, prompts);
                simulate(
                    &w,
                    &cost,
                    &plain_memory(),
                    &ScheduleMode::colocated_offload(),
                    &Partition::colocated(8),
                )
                .unwrap()
                .0
                .makespan
            }
            Some((heads, n_denoise)) => {
                let cost = decoupled_cost_from_fit(per_step, fixed, prompts, heads, n_denoise);
                simulate(
                    &w,
                    &cost,
                    &plain_memory(),
                    &ScheduleMode::decoupled(true, false),
                    &Partition::new(n_denoise, 8 - n_denoise),
                )
                .unwrap()
                .0
                .makespan
            }
        };
        let err = (simulated - row.target).abs() / row.target;
        if err >= row.tolerance {
            failures.push(format!(
                "{}: simulated {simulated:.2}s vs published {:.0}s ({:.1}% off)",
                row.name,
                row.target,
                err * 100.0
            ));
        }
    }
    let elapsed = start.elapsed();
    let ok = failures.is_empty() && elapsed.as_secs_f64() < 10.0;
    verdict(
        "6",
        "calibrated replay predicts the published 30-step latencies",
        ok,
    );
    assert!(ok, "{failures:?}, elapsed {elapsed:?}");
}

#[test]
fn criterion_7_speedup_decays_with_timesteps() {
    let mut failures = Vec::new();
    let calibrations = [
        ("osp-a6000", (10usize, 227.0), (50usize, 622.0)),
        ("hv-a6000", (10, 540.0), (50, 965.0)),
    ];
    for (name, a, b) in calibrations {
        let (per_step, fixed) = calibrate_linear(a, b).unwrap();
        let cost = colocated_cost_from_fit(per_step, fixed, 10);
        let speedup = |timesteps: usize| {
            let w = workload(timesteps, 10, 56); // divisible by 7 and 8
            let baseline = simulate(
                &w,
                &cost,
                &plain_memory(),
                &ScheduleMode::colocated_offload(),
                &Partition::colocated(8),
            )
            .unwrap()
            .0
            .makespan;
            let optimized = simulate(
                &w,
                &cost,
                &plain_memory(),
                &ScheduleMode::decoupled(true, true),
                &Partition::new(7, 1),
            )
            .unwrap()
            .0
            .makespan;
            baseline / optimized
        };
        let (s10, s30, s50) = (speedup(10), speedup(30), speedup(50));
        if !(s10 >= s30 - 1e-9 && s30 >= s50 - 1e-9) {
            failures.push(format!("{name}: speedups {s10:.3} -> {s30:.3} -> {s50:.3}"));
        }
    }
    let ok = failures.is_empty();
    verdict(
        "7",
        "decoupled speedup over the offloading baseline decays 10 -> 30 -> 50",
        ok,
    );
    assert!(ok, "{failures:?}");
}

#[test]
fn criterion_8_memory_accounting_matches_oom_pattern() {
    let config = Config::load(&scenario_path("memory-hunyuan-480x352x129.toml")).unwrap();
    let memory = config.memory;
    let mut failures = Vec::new();
    let resolutions = [
        (480, 352, 129),
        (640, 352, 129),
        (800, 592, 129),
        (1024, 576, 129),
    ];
    for (width, height, frames) in resolutions {
        let w = WorkloadSpec {
            width,
            height,
            frames,
            ..config.workload
        };
        let colocated = peak_memory(
            &memory,
            &w,
            &ScheduleMode::colocated(),
            &Partition::colocated(8),
        );
        let offload = peak_memory(
            &memory,
            &w,
            &ScheduleMode::colocated_offload(),
            &Partition::colocated(8),
        );
        let mut decoupled_mode = ScheduleMode::decoupled(false, false);
        decoupled_mode.text_encoder = TextEncoderPlacement::WithDecode;
        let decoupled = peak_memory(&memory, &w, &decoupled_mode, &Partition::new(7, 1));

        let label = format!("{width}x{height}x{frames}");
        let colocated_peak = colocated[0];
        if !colocated.iter().any(|&p| p > memory.gpu_budget) {
            failures.push(format!("{label}: colocated should exceed the budget"));
        }
        if offload.iter().any(|&p| p > memory.gpu_budget) {
            failures.push(format!("{label}: offloading should fit the budget"));
        }
        if decoupled.iter().any(|&p| p > memory.gpu_budget) {
            failures.push(format!("{label}: decoupled should fit the budget"));
        }
        if !decoupled.iter().all(|&p| p < colocated_peak) {
            failures.push(format!(
                "{label}: decoupled peaks {decoupled:?} not strictly below colocated {colocated_peak}"
            ));
        }
    }
    let ok = failures.is_empty();
    verdict(
        "8",
        "only the colocated no-offload schedule overruns the 48 GB budget",
        ok,
    );
    assert!(ok, "{failures:?}");
}

#[test]
fn criterion_9_trace_hygiene_on_acceptance_runs() {
    let mut failures = Vec::new();
    let scenarios = [
        "osp-a6000-480x352x97-base.toml",
        "osp-a6000-480x352x97-opt.toml",
        "hv-a6000-480x352x97-base.toml",
        "hv-a6000-480x352x97-opt.toml",
        "memory-hunyuan-480x352x129.toml",
    ];
    for name in scenarios {
        let config = Config::load(&scenario_path(name)).unwrap();
        let partition = config.resolve_partition().unwrap();
        match simulate(
            &config.workload,
            &config.cost,
            &config.memory,
            &config.mode,
            &partition,
        ) {
            Ok((report, trace)) => {
                if let Err(e) = validate_trace(&trace, &report) {
                    failures.push(format!("{name}: {e}"));
                }
                if let Err(e) = validate_chrome_trace(&chrome_trace_json(&trace)) {
                    failures.push(format!("{name}: chrome trace: {e}"));
                }
            }
            Err(e) => failures.push(format!("{name}: {e}")),
        }
    }
    let ok = failures.is_empty();
    verdict(
        "9",
        "every emitted trace passes the no-overlap and work-conservation checks",
        ok,
    );
    assert!(ok, "{failures:?}");
}
