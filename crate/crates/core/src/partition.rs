//! GPU split between the denoise and decode groups.
//!
//! The closed form balances per-prompt group times to first order:
//! `n_decode = ceil(t_decode / (t_decode + t_denoise) * gpus)`, clamped so
//! both groups stay nonempty. [`brute_force_partition`] sweeps every split
//! through the simulator and is the oracle the closed form is checked
//! against: agreement within one GPU on steady-state workloads.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::{simulate, CostModel, MemoryModel, ScheduleMode, SimError, Variant, WorkloadSpec};

#[derive(Debug, Error)]
pub enum PartitionError {
    #[error("stage times must be positive: denoise {denoise}, decode {decode}")]
    NonPositiveTimes { denoise: f64, decode: f64 },
    #[error("need at least 2 GPUs to split, got {0}")]
    TooFewGpus(usize),
    #[error("brute-force search requires the decoupled schedule")]
    NotDecoupled,
    #[error("steady state needs at least {needed} prompts, got {prompts}")]
    TooFewPrompts { prompts: usize, needed: usize },
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// GPU counts for the two groups. Colocated schedules use a zero-sized
/// decode group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Partition {
    pub n_denoise: usize,
    pub n_decode: usize,
}

impl Partition {
    pub fn new(n_denoise: usize, n_decode: usize) -> Self {
        Self {
            n_denoise,
            n_decode,
        }
    }

    pub fn colocated(gpus: usize) -> Self {
        Self {
            n_denoise: gpus,
            n_decode: 0,
        }
    }

    pub fn total(&self) -> usize {
        self.n_denoise + self.n_decode
    }
}

/// First-order balance split for `gpus` GPUs given the single-GPU denoise
/// and decode times of one prompt.
pub fn closed_form_partition(
    t_denoise: f64,
    t_decode: f64,
    gpus: usize,
) -> Result<Partition, PartitionError> {
    if t_denoise <= 0.0 || t_denoise.is_nan() || t_decode <= 0.0 || t_decode.is_nan() {
        return Err(PartitionError::NonPositiveTimes {
            denoise: t_denoise,
            decode: t_decode,
        });
    }
    if gpus < 2 {
        return Err(PartitionError::TooFewGpus(gpus));
    }
    let raw = (t_decode / (t_decode + t_denoise) * gpus as f64).ceil() as usize;
    let n_decode = raw.clamp(1, gpus - 1);
    Ok(Partition::new(gpus - n_decode, n_decode))
}

/// Sweeps every decode-group size through the simulator and returns the
/// split with the smallest makespan (ties go to the larger denoise group),
/// plus the whole makespan table.
pub fn brute_force_partition(
    w: &WorkloadSpec,
    cost: &CostModel,
    memory: &MemoryModel,
    mode: &ScheduleMode,
    gpus: usize,
) -> Result<(Partition, Vec<(Partition, f64)>), PartitionError> {
    if mode.variant != Variant::DeDiVae {
        return Err(PartitionError::NotDecoupled);
    }
    if gpus < 2 {
        return Err(PartitionError::TooFewGpus(gpus));
    }
    let needed = 2 * gpus;
    if w.prompts < needed {
        return Err(PartitionError::TooFewPrompts {
            prompts: w.prompts,
            needed,
        });
    }
    let mut table = Vec::with_capacity(gpus - 1);
    let mut best: Option<(Partition, f64)> = None;
    for n_decode in 1..gpus {
        let part = Partition::new(gpus - n_decode, n_decode);
        let (report, _) = simulate(w, cost, memory, mode, &part)?;
        table.push((part, report.makespan));
        if best.as_ref().is_none_or(|(_, m)| report.makespan < *m) {
            best = Some((part, report.makespan));
        }
    }
    let (best, _) = best.expect("at least one split");
    Ok((best, table))
}

/// Cost model whose single-GPU stage times are exactly `t_denoise` and
/// `t_decode` for one prompt: the calibration group size is one GPU, and
/// communication is free. Used when searching partitions from stage times.
pub fn single_gpu_cost_model(t_denoise: f64, t_decode: f64, timesteps: usize) -> CostModel {
    let step = t_denoise / timesteps as f64;
    CostModel {
        t_linear: 0.25 * step,
        t_attention: 0.75 * step,
        t_a2a_head: 0.0,
        overlap_fraction: 0.0,
        t_decode,
        t_offload: 0.0,
        t_text: 0.0,
        t_xfer: 0.0,
        calibration_gpus: Some(1),
    }
}
