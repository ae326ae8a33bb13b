//! Seeded property suites behind the CLI `verify` subcommand.
//!
//! Each suite returns a [`SuiteReport`] with per-case counts; the layout,
//! equivalence and co-processing suites demand every case pass, while the
//! partition suite allows the documented one-GPU slack on at most 5% of
//! its grid.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::engine::{
    aco_attention, layout_fix, pipesp_attention, scatter_heads, ulysses_attention, HeadLayout,
    PartitionAxis, RankGroup, ShardedTensor,
};
use crate::partition::{
    brute_force_partition, closed_form_partition, single_gpu_cost_model, Partition,
};
use crate::sim::{MemoryModel, ScheduleMode, WorkloadSpec};
use crate::tensor::{multi_head_attention, AttentionMask, Tensor};

#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub name: &'static str,
    pub cases: usize,
    pub passed: usize,
    pub failures: Vec<String>,
    pub ok: bool,
}

impl SuiteReport {
    fn strict(name: &'static str, cases: usize, failures: Vec<String>) -> Self {
        let passed = cases - failures.len();
        Self {
            name,
            cases,
            passed,
            ok: failures.is_empty(),
            failures,
        }
    }

    pub fn summary(&self) -> String {
        format!(
            "{}: {}/{} cases passed{}",
            self.name,
            self.passed,
            self.cases,
            if self.ok { "" } else { " [FAIL]" }
        )
    }
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let len = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

fn bits(t: &Tensor) -> Vec<u64> {
    t.data().iter().map(|v| v.to_bits()).collect()
}

/// Exhaustive check that the view-permute-view layout fix maps the
/// round-interleaved head order back to contiguous order for every rank
/// and local-head count up to 8.
pub fn layout_suite() -> SuiteReport {
    let mut failures = Vec::new();
    let mut cases = 0;
    for ranks in 1..=8usize {
        for heads_per_rank in 1..=8usize {
            cases += 1;
            let layout = HeadLayout::new(ranks, heads_per_rank);
            let order = layout.interleaved_order();
            let labels = Tensor::from_fn(&[2, layout.total_heads(), 3], |idx| {
                (order[idx[1]] * 10 + idx[2]) as f64 + idx[0] as f64 * 0.5
            });
            match layout_fix(&labels, ranks, heads_per_rank) {
                Ok(fixed) => {
                    let expected = Tensor::from_fn(&[2, layout.total_heads(), 3], |idx| {
                        (idx[1] * 10 + idx[2]) as f64 + idx[0] as f64 * 0.5
                    });
                    if fixed != expected {
                        failures.push(format!(
                            "ranks={ranks} heads_per_rank={heads_per_rank}: wrong head order"
                        ));
                    }
                }
                Err(e) => failures.push(format!(
                    "ranks={ranks} heads_per_rank={heads_per_rank}: {e}"
                )),
            }
        }
    }
    SuiteReport::strict("layout", cases, failures)
}

/// Pipelined-vs-baseline equality on the full seeded grid: exact bitwise
/// matches, alternating between unmasked and causal-masked attention.
pub fn equivalence_suite(seed: u64) -> SuiteReport {
    let mut failures = Vec::new();
    let mut cases = 0;
    for &ranks in &[1usize, 2, 4] {
        for &heads in &[4usize, 8, 16] {
            for &seq in &[8usize, 16, 32] {
                for &batch in &[1usize, 2] {
                    for &dim in &[4usize, 8] {
                        cases += 1;
                        let mut rng =
                            ChaCha8Rng::seed_from_u64(seed.wrapping_add(cases as u64 * 7919));
                        let shape = [batch, heads, seq, dim];
                        let q = random_tensor(&mut rng, &shape);
                        let k = random_tensor(&mut rng, &shape);
                        let v = random_tensor(&mut rng, &shape);
                        let mask = (cases % 2 == 0).then(|| {
                            AttentionMask::from_blocked([1, 1, seq, seq], |_, _, i, j| j > i)
                                .unwrap()
                        });
                        let group = RankGroup::with_schedule_seed(ranks, seed ^ cases as u64);
                        let case = (|| -> Result<Option<String>, String> {
                            let split = |t: &Tensor| {
                                ShardedTensor::split(t, PartitionAxis::Sequence, ranks)
                                    .map_err(|e| e.to_string())
                            };
                            let baseline = ulysses_attention(
                                &group,
                                &split(&q)?,
                                &split(&k)?,
                                &split(&v)?,
                                mask.as_ref(),
                            )
                            .map_err(|e| e.to_string())?;
                            let to_heads = |t: &Tensor| {
                                scatter_heads(&group, &split(t)?).map_err(|e| e.to_string())
                            };
                            let pipelined = pipesp_attention(
                                &group,
                                &to_heads(&q)?,
                                &to_heads(&k)?,
                                &to_heads(&v)?,
                                mask.as_ref(),
                            )
                            .map_err(|e| e.to_string())?;
                            let oracle = multi_head_attention(&q, &k, &v, mask.as_ref())
                                .map_err(|e| e.to_string())?;
                            let base = baseline.logical().map_err(|e| e.to_string())?;
                            let pipe = pipelined.logical().map_err(|e| e.to_string())?;
                            if bits(&base) != bits(&pipe) {
                                return Ok(Some("pipelined != baseline".into()));
                            }
                            if bits(&base) != bits(&oracle) {
                                return Ok(Some("baseline != head-loop oracle".into()));
                            }
                            Ok(None)
                        })();
                        match case {
                            Ok(None) => {}
                            Ok(Some(msg)) => failures.push(format!(
                                "n={ranks} H={heads} S={seq} B={batch} D={dim}: {msg}"
                            )),
                            Err(msg) => failures.push(format!(
                                "n={ranks} H={heads} S={seq} B={batch} D={dim}: {msg}"
                            )),
                        }
                    }
                }
            }
        }
    }
    SuiteReport::strict("equivalence", cases, failures)
}

/// Co-processing equality against the single-rank head-loop oracle, across
/// group splits including head counts the combined group cannot divide.
pub fn aco_suite(seed: u64) -> SuiteReport {
    // (7, 0) exercises the degenerate empty co-processor, where 24 heads
    // pad up to 28 across the 7 denoise ranks alone
    let splits: [(usize, usize); 9] = [
        (1, 1),
        (2, 1),
        (3, 1),
        (2, 2),
        (7, 0),
        (7, 1),
        (6, 2),
        (7, 2),
        (5, 3),
    ];
    let head_counts: [usize; 7] = [2, 3, 5, 8, 11, 16, 24];
    let mut failures = Vec::new();
    let mut cases = 0;
    for &(n_denoise, n_decode) in &splits {
        for &heads in &head_counts {
            cases += 1;
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(cases as u64 * 104729));
            let seq = n_denoise * 2;
            let dim = if cases % 2 == 0 { 2 } else { 4 };
            let shape = [1, heads, seq, dim];
            let q = random_tensor(&mut rng, &shape);
            let k = random_tensor(&mut rng, &shape);
            let v = random_tensor(&mut rng, &shape);
            let mask = (cases % 3 == 0).then(|| {
                AttentionMask::from_blocked([1, 1, seq, seq], |_, _, i, j| j > i).unwrap()
            });
            let denoise = RankGroup::with_schedule_seed(n_denoise, seed ^ cases as u64);
            let decode = RankGroup::with_schedule_seed(n_decode, seed ^ (cases as u64) << 1);
            let case = (|| -> Result<Option<String>, String> {
                let split = |t: &Tensor| {
                    ShardedTensor::split(t, PartitionAxis::Sequence, n_denoise)
                        .map_err(|e| e.to_string())
                };
                let co = aco_attention(
                    &denoise,
                    &decode,
                    &split(&q)?,
                    &split(&k)?,
                    &split(&v)?,
                    mask.as_ref(),
                )
                .map_err(|e| e.to_string())?;
                let oracle =
                    multi_head_attention(&q, &k, &v, mask.as_ref()).map_err(|e| e.to_string())?;
                let got = co.logical().map_err(|e| e.to_string())?;
                if bits(&got) != bits(&oracle) {
                    return Ok(Some("co-processed output != head-loop oracle".into()));
                }
                Ok(None)
            })();
            match case {
                Ok(None) => {}
                Ok(Some(msg)) | Err(msg) => failures.push(format!(
                    "denoise={n_denoise} decode={n_decode} H={heads}: {msg}"
                )),
            }
        }
    }
    SuiteReport::strict("aco", cases, failures)
}

/// Closed-form vs brute-force partition agreement on a log-spaced stage-time
/// grid, plus exact agreement at the symmetric point. A grid point passes
/// when the two decode-group sizes differ by at most one (the closed form is
/// first-order); the suite passes at a 95% rate.
pub fn partition_suite(grid: usize, gpus: usize, prompts: usize) -> SuiteReport {
    let timesteps = 5;
    // heads divisible by every possible denoise-group size keeps padding out
    // of the sweep
    let heads = (1..gpus).fold(1usize, lcm);
    let workload = WorkloadSpec {
        width: 8,
        height: 8,
        frames: 8,
        timesteps,
        prompts,
        heads,
    };
    let memory = MemoryModel {
        w_dit: 0.0,
        w_vae: 0.0,
        w_text: 0.0,
        act_denoise_coeff: 0.0,
        act_decode_coeff: 0.0,
        gpu_budget: 48.0,
    };
    let mode = ScheduleMode::decoupled(false, false);

    let logspace = |i: usize| -> f64 {
        let lo: f64 = 0.5;
        let hi: f64 = 32.0;
        lo * (hi / lo).powf(i as f64 / (grid - 1) as f64)
    };

    let mut failures = Vec::new();
    let mut cases = 0;
    let mut passed = 0;
    for i in 0..grid {
        for j in 0..grid {
            cases += 1;
            let t_denoise = logspace(i);
            let t_decode = logspace(j);
            let outcome = (|| -> Result<(usize, usize), String> {
                let closed =
                    closed_form_partition(t_denoise, t_decode, gpus).map_err(|e| e.to_string())?;
                let cost = single_gpu_cost_model(t_denoise, t_decode, timesteps);
                let (brute, _) = brute_force_partition(&workload, &cost, &memory, &mode, gpus)
                    .map_err(|e| e.to_string())?;
                Ok((closed.n_decode, brute.n_decode))
            })();
            match outcome {
                Ok((closed, brute)) if closed.abs_diff(brute) <= 1 => passed += 1,
                Ok((closed, brute)) => failures.push(format!(
                    "t_denoise={t_denoise:.3} t_decode={t_decode:.3}: closed {closed} vs brute {brute}"
                )),
                Err(msg) => failures.push(format!(
                    "t_denoise={t_denoise:.3} t_decode={t_decode:.3}: {msg}"
                )),
            }
        }
    }

    // the symmetric point must agree exactly
    cases += 1;
    let symmetric = (|| -> Result<(Partition, Partition), String> {
        let closed = closed_form_partition(10.0, 10.0, gpus).map_err(|e| e.to_string())?;
        let cost = single_gpu_cost_model(10.0, 10.0, timesteps);
        let (brute, _) = brute_force_partition(&workload, &cost, &memory, &mode, gpus)
            .map_err(|e| e.to_string())?;
        Ok((closed, brute))
    })();
    match symmetric {
        Ok((closed, brute)) if closed == brute && closed.n_decode == gpus / 2 => passed += 1,
        Ok((closed, brute)) => failures.push(format!(
            "symmetric point: closed {closed:?} vs brute {brute:?}"
        )),
        Err(msg) => failures.push(format!("symmetric point: {msg}")),
    }

    let rate = passed as f64 / cases as f64;
    let symmetric_ok = !failures.iter().any(|f| f.starts_with("symmetric"));
    SuiteReport {
        name: "partition",
        cases,
        passed,
        ok: rate >= 0.95 && symmetric_ok,
        failures,
    }
}

fn lcm(a: usize, b: usize) -> usize {
    a / gcd(a, b) * b
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}
