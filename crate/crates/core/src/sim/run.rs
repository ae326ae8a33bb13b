//! The event-driven schedule builder.

use crate::engine::pad_heads;
use crate::partition::Partition;

use super::trace::validate_trace;
use super::{
    peak_memory, CostModel, MemoryModel, ScheduleMode, SimError, SimReport, SimTrace, TaskKind,
    TextEncoderPlacement, TraceEvent, Variant, WorkloadSpec,
};

/// Scale factor from the calibration group size to an `n_denoise`-GPU
/// denoise group: sequence-parallel work divides across the group.
fn sp_scale(cost: &CostModel, n_denoise: usize, total: usize) -> f64 {
    cost.calibration_gpus.unwrap_or(total) as f64 / n_denoise as f64
}

/// Head padding for the group that executes attention: the whole cluster
/// when co-processing, the denoise group otherwise. Padded heads consume
/// time like real ones.
fn head_pad_factor(heads: usize, n_denoise: usize, total: usize, aco_active: bool) -> f64 {
    let ranks = if aco_active { total } else { n_denoise };
    let (padded, _) = pad_heads(heads, ranks);
    padded as f64 / heads as f64
}

fn attention_time(
    w: &WorkloadSpec,
    cost: &CostModel,
    n_denoise: usize,
    total: usize,
    aco_active: bool,
) -> f64 {
    let share = if aco_active {
        n_denoise as f64 / total as f64
    } else {
        1.0
    };
    cost.t_attention
        * sp_scale(cost, n_denoise, total)
        * share
        * head_pad_factor(w.heads, n_denoise, total, aco_active)
}

fn a2a_time(
    w: &WorkloadSpec,
    cost: &CostModel,
    n_denoise: usize,
    total: usize,
    aco_active: bool,
    pipesp: bool,
) -> f64 {
    let ranks = if aco_active { total } else { n_denoise };
    let (padded, _) = pad_heads(w.heads, ranks);
    let local_heads = (padded / ranks) as f64;
    let hidden = if pipesp { cost.overlap_fraction } else { 0.0 };
    local_heads * cost.t_a2a_head * (1.0 - hidden)
}

/// One denoise timestep on an `n_denoise`-GPU group within a `total`-GPU
/// cluster. Co-processing shrinks the attention share to
/// `n_denoise / total` and adds the Q/K/V ship cost.
pub(crate) fn denoise_step_time(
    w: &WorkloadSpec,
    cost: &CostModel,
    n_denoise: usize,
    total: usize,
    aco_active: bool,
    pipesp: bool,
) -> f64 {
    let linear = cost.t_linear * sp_scale(cost, n_denoise, total);
    let attention = attention_time(w, cost, n_denoise, total, aco_active);
    let exchange = a2a_time(w, cost, n_denoise, total, aco_active, pipesp);
    let ship = if aco_active { cost.t_xfer } else { 0.0 };
    linear + attention + exchange + ship
}

struct EventLog {
    events: Vec<TraceEvent>,
}

impl EventLog {
    fn new() -> Self {
        Self { events: Vec::new() }
    }

    fn push(&mut self, gpu: usize, kind: TaskKind, start: f64, end: f64, prompt: usize) {
        if end > start {
            self.events.push(TraceEvent {
                gpu,
                kind,
                start,
                end,
                prompt,
            });
        }
    }

    fn push_group(
        &mut self,
        gpus: std::ops::Range<usize>,
        kind: TaskKind,
        start: f64,
        end: f64,
        prompt: usize,
    ) {
        for gpu in gpus {
            self.push(gpu, kind, start, end, prompt);
        }
    }
}

/// Runs the requested schedule over the whole prompt batch and returns the
/// aggregate report plus the per-GPU trace. Deterministic: identical inputs
/// produce identical traces.
pub fn simulate(
    w: &WorkloadSpec,
    cost: &CostModel,
    memory: &MemoryModel,
    mode: &ScheduleMode,
    part: &Partition,
) -> Result<(SimReport, SimTrace), SimError> {
    w.validate()?;
    cost.validate()?;
    memory.validate()?;
    mode.validate()?;
    let bad_partition = || SimError::InvalidPartition {
        variant: mode.variant,
        n_denoise: part.n_denoise,
        n_decode: part.n_decode,
    };
    match mode.variant {
        Variant::Colocated | Variant::ColocatedOffload => {
            if part.n_denoise == 0 || part.n_decode != 0 {
                return Err(bad_partition());
            }
        }
        Variant::DeDiVae => {
            if part.n_denoise == 0 || part.n_decode == 0 {
                return Err(bad_partition());
            }
        }
    }
    if mode.aco && part.n_decode == 0 {
        return Err(SimError::AcoWithoutDecode);
    }

    let mut log = EventLog::new();
    let latencies = match mode.variant {
        Variant::Colocated | Variant::ColocatedOffload => {
            run_colocated(w, cost, mode, part.total(), &mut log)
        }
        Variant::DeDiVae => run_decoupled(w, cost, mode, part, &mut log),
    };

    let gpus = part.total();
    let mut events = log.events;
    events.sort_by(|a, b| {
        a.start
            .total_cmp(&b.start)
            .then(a.prompt.cmp(&b.prompt))
            .then(a.kind.cmp(&b.kind))
            .then(a.gpu.cmp(&b.gpu))
    });
    let trace = SimTrace {
        gpus,
        denoise_gpus: part.n_denoise,
        events,
    };

    // a zero-duration decode leaves no event, so a prompt can finish after
    // the last busy interval when the handoff costs time
    let makespan = trace
        .events
        .iter()
        .map(|e| e.end)
        .chain(latencies.iter().copied())
        .fold(0.0f64, f64::max);
    let mut busy = vec![0.0f64; gpus];
    for e in &trace.events {
        busy[e.gpu] += e.end - e.start;
    }
    let busy_fraction: Vec<f64> = busy
        .iter()
        .map(|b| if makespan > 0.0 { b / makespan } else { 0.0 })
        .collect();

    let peaks = peak_memory(memory, w, mode, part);
    let oom = peaks.iter().any(|&p| p > memory.gpu_budget);

    let report = SimReport {
        per_prompt_latency: latencies,
        makespan,
        busy_fraction,
        peak_memory: peaks,
        oom,
    };
    validate_trace(&trace, &report)?;
    Ok((report, trace))
}

/// Colocated schedule: one group owns every stage in sequence; with
/// offloading each denoise->decode boundary swaps DiT out for the VAE and
/// each decode->denoise boundary swaps back.
fn run_colocated(
    w: &WorkloadSpec,
    cost: &CostModel,
    mode: &ScheduleMode,
    gpus: usize,
    log: &mut EventLog,
) -> Vec<f64> {
    let offload = mode.variant == Variant::ColocatedOffload;
    let step = denoise_step_time(w, cost, gpus, gpus, false, false);
    let mut t = 0.0;
    let mut latencies = Vec::with_capacity(w.prompts);
    for prompt in 0..w.prompts {
        log.push_group(0..gpus, TaskKind::TextEncode, t, t + cost.t_text, prompt);
        t += cost.t_text;
        for _ in 0..w.timesteps {
            log.push_group(0..gpus, TaskKind::Denoise, t, t + step, prompt);
            t += step;
        }
        if offload {
            log.push_group(0..gpus, TaskKind::Offload, t, t + cost.t_offload, prompt);
            t += cost.t_offload;
        }
        log.push_group(0..gpus, TaskKind::Decode, t, t + cost.t_decode, prompt);
        t += cost.t_decode;
        latencies.push(t);
        if offload && prompt + 1 < w.prompts {
            log.push_group(0..gpus, TaskKind::Offload, t, t + cost.t_offload, prompt);
            t += cost.t_offload;
        }
    }
    latencies
}

/// Busy intervals per decode GPU, used both for pool scheduling and for the
/// per-step idleness probe that gates co-processing.
struct DecodePool {
    first_gpu: usize,
    free_at: Vec<f64>,
    intervals: Vec<Vec<(f64, f64)>>,
}

impl DecodePool {
    fn new(first_gpu: usize, gpus: usize) -> Self {
        Self {
            first_gpu,
            free_at: vec![0.0; gpus],
            intervals: vec![Vec::new(); gpus],
        }
    }

    /// The whole group is free over `[start, end)`: nothing is running at
    /// `start` and nothing already scheduled (a latent in flight, a
    /// prefetched text encode) begins before `end`.
    fn available_for(&self, start: f64, end: f64) -> bool {
        self.intervals
            .iter()
            .all(|iv| !iv.iter().rev().any(|&(s, e)| s < end && start < e))
    }

    fn occupy(&mut self, slot: usize, start: f64, end: f64) {
        if end > start {
            self.intervals[slot].push((start, end));
        }
        self.free_at[slot] = self.free_at[slot].max(end);
    }

    /// Runs a task on the earliest-free GPU (lowest id on ties), no earlier
    /// than `ready`. Returns the completion time.
    fn schedule(
        &mut self,
        kind: TaskKind,
        prompt: usize,
        ready: f64,
        duration: f64,
        log: &mut EventLog,
    ) -> f64 {
        let slot = self
            .free_at
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| a.total_cmp(b))
            .map(|(i, _)| i)
            .expect("decode pool is nonempty");
        let start = self.free_at[slot].max(ready);
        let end = start + duration;
        log.push(self.first_gpu + slot, kind, start, end, prompt);
        self.occupy(slot, start, end);
        end
    }
}

/// Decoupled schedule: the denoise group handles prompts one at a time; the
/// decode pool drains the shared latent queue in FIFO order, one whole
/// latent per GPU. Co-processing is decided per timestep: the decode group
/// must be idle at the step start and stay unclaimed for the step's span,
/// so a latent arriving mid-step (in-flight transfer) blocks it.
fn run_decoupled(
    w: &WorkloadSpec,
    cost: &CostModel,
    mode: &ScheduleMode,
    part: &Partition,
    log: &mut EventLog,
) -> Vec<f64> {
    let nd = part.n_denoise;
    let total = part.total();
    let step_plain = denoise_step_time(w, cost, nd, total, false, mode.pipesp);
    let step_coop = denoise_step_time(w, cost, nd, total, true, mode.pipesp);
    let coop_linear = cost.t_linear * sp_scale(cost, nd, total);
    let coop_attention = attention_time(w, cost, nd, total, true);

    let mut pool = DecodePool::new(nd, part.n_decode);
    let mut denoise_free = 0.0f64;
    let mut text_done = vec![0.0f64; w.prompts];
    let mut latencies = Vec::with_capacity(w.prompts);

    if mode.text_encoder == TextEncoderPlacement::WithDecode && w.prompts > 0 {
        text_done[0] = pool.schedule(TaskKind::TextEncode, 0, 0.0, cost.t_text, log);
    }

    for prompt in 0..w.prompts {
        let denoise_start = match mode.text_encoder {
            TextEncoderPlacement::WithDenoise => {
                let start = denoise_free;
                log.push_group(
                    0..nd,
                    TaskKind::TextEncode,
                    start,
                    start + cost.t_text,
                    prompt,
                );
                start + cost.t_text
            }
            TextEncoderPlacement::WithDecode => denoise_free.max(text_done[prompt]),
        };
        // prefetch the next prompt's text encode onto the decode pool while
        // this prompt denoises
        if mode.text_encoder == TextEncoderPlacement::WithDecode && prompt + 1 < w.prompts {
            text_done[prompt + 1] = pool.schedule(
                TaskKind::TextEncode,
                prompt + 1,
                denoise_start,
                cost.t_text,
                log,
            );
        }

        let mut t = denoise_start;
        for _ in 0..w.timesteps {
            let coop = mode.aco && pool.available_for(t, t + step_coop);
            let dt = if coop { step_coop } else { step_plain };
            log.push_group(0..nd, TaskKind::Denoise, t, t + dt, prompt);
            if coop && coop_attention > 0.0 {
                let attn_start = t + coop_linear;
                let attn_end = attn_start + coop_attention;
                for slot in 0..part.n_decode {
                    log.push(
                        nd + slot,
                        TaskKind::CoAttention,
                        attn_start,
                        attn_end,
                        prompt,
                    );
                    pool.occupy(slot, attn_start, attn_end);
                }
            }
            t += dt;
        }
        denoise_free = t;

        let enqueued = t + cost.t_xfer;
        let done = pool.schedule(TaskKind::Decode, prompt, enqueued, cost.t_decode, log);
        latencies.push(done);
    }
    latencies
}
