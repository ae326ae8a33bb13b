//! Discrete-event model of multi-prompt video generation across GPU groups.
//!
//! The simulator covers four schedules: colocated with offloading (the
//! baseline), colocated without offloading (kept for the memory accounting),
//! and the decoupled denoise/decode split with optional per-head
//! communication overlap and attention co-processing. Timing comes from a
//! [`CostModel`] calibrated against measured end-to-end latencies; memory
//! from a [`MemoryModel`]. Runs are single-threaded and deterministic.

mod calibrate;
mod memory;
mod run;
mod trace;

pub use calibrate::{calibrate_linear, colocated_cost_from_fit, decoupled_cost_from_fit};
pub use memory::peak_memory;
pub use run::simulate;
pub use trace::{chrome_trace_json, render_report, validate_chrome_trace, validate_trace};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid partition for {variant:?}: denoise {n_denoise}, decode {n_decode}")]
    InvalidPartition {
        variant: Variant,
        n_denoise: usize,
        n_decode: usize,
    },
    #[error("cost {name} must be nonnegative, got {value}")]
    NegativeCost { name: &'static str, value: f64 },
    #[error("overlap_fraction must be within [0, 1], got {0}")]
    InvalidOverlap(f64),
    #[error("calibration_gpus must be at least 1")]
    InvalidCalibrationGpus,
    #[error("{flag} is only valid with the decoupled schedule")]
    FlagRequiresDecoupled { flag: &'static str },
    #[error("co-processing requires a nonempty decode group")]
    AcoWithoutDecode,
    #[error("workload {name} must be positive")]
    NonPositiveWorkload { name: &'static str },
    #[error("memory {name} must be nonnegative, got {value}")]
    NegativeMemory { name: &'static str, value: f64 },
    #[error("calibration needs two distinct timestep counts")]
    DegenerateCalibration,
    #[error("calibration latencies must be positive")]
    NonPositiveLatency,
    #[error("simulator invariant violated: {0}")]
    InvariantViolated(String),
}

// ─── Inputs ──────────────────────────────────────────────────────────────────

/// What to generate: resolution and frame count fix the latent size
/// (`width * height * frames`, arbitrary units), the rest fixes the work.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadSpec {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub timesteps: usize,
    pub prompts: usize,
    pub heads: usize,
}

impl WorkloadSpec {
    pub fn latent_size(&self) -> f64 {
        (self.width * self.height * self.frames) as f64
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let positive: [(&'static str, usize); 5] = [
            ("width", self.width),
            ("height", self.height),
            ("frames", self.frames),
            ("timesteps", self.timesteps),
            ("heads", self.heads),
        ];
        for (name, value) in positive {
            if value == 0 {
                return Err(SimError::NonPositiveWorkload { name });
            }
        }
        Ok(())
    }
}

/// Timing parameters, in seconds.
///
/// `t_linear` and `t_attention` are the per-timestep linear-projection and
/// full attention times measured with sequence parallelism across
/// `calibration_gpus` GPUs (defaults to the whole cluster of the run);
/// running on a differently sized denoise group rescales both by
/// `calibration_gpus / n_denoise`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostModel {
    pub t_linear: f64,
    pub t_attention: f64,
    /// All-to-all cost per local head per timestep.
    #[serde(default)]
    pub t_a2a_head: f64,
    /// Fraction of the all-to-all hidden when the per-head pipelined
    /// exchange is on.
    #[serde(default)]
    pub overlap_fraction: f64,
    /// VAE decode time for one latent on one GPU.
    #[serde(default)]
    pub t_decode: f64,
    /// One weight swap (DiT <-> VAE) for the colocated offloading schedule.
    #[serde(default)]
    pub t_offload: f64,
    /// Text-encoder time per prompt.
    #[serde(default)]
    pub t_text: f64,
    /// Point-to-point transfer for the latent handoff / Q-K-V ship.
    #[serde(default)]
    pub t_xfer: f64,
    #[serde(default)]
    pub calibration_gpus: Option<usize>,
}

impl CostModel {
    pub fn validate(&self) -> Result<(), SimError> {
        let costs: [(&'static str, f64); 7] = [
            ("t_linear", self.t_linear),
            ("t_attention", self.t_attention),
            ("t_a2a_head", self.t_a2a_head),
            ("t_decode", self.t_decode),
            ("t_offload", self.t_offload),
            ("t_text", self.t_text),
            ("t_xfer", self.t_xfer),
        ];
        for (name, value) in costs {
            if !value.is_finite() || value < 0.0 {
                return Err(SimError::NegativeCost { name, value });
            }
        }
        if !(0.0..=1.0).contains(&self.overlap_fraction) {
            return Err(SimError::InvalidOverlap(self.overlap_fraction));
        }
        if self.calibration_gpus == Some(0) {
            return Err(SimError::InvalidCalibrationGpus);
        }
        Ok(())
    }
}

/// Resident weight sizes and activation coefficients, in GB and GB per
/// latent-size unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemoryModel {
    pub w_dit: f64,
    pub w_vae: f64,
    pub w_text: f64,
    pub act_denoise_coeff: f64,
    pub act_decode_coeff: f64,
    #[serde(default = "default_gpu_budget")]
    pub gpu_budget: f64,
}

fn default_gpu_budget() -> f64 {
    48.0
}

impl MemoryModel {
    pub fn validate(&self) -> Result<(), SimError> {
        let fields: [(&'static str, f64); 6] = [
            ("w_dit", self.w_dit),
            ("w_vae", self.w_vae),
            ("w_text", self.w_text),
            ("act_denoise_coeff", self.act_denoise_coeff),
            ("act_decode_coeff", self.act_decode_coeff),
            ("gpu_budget", self.gpu_budget),
        ];
        for (name, value) in fields {
            if !value.is_finite() || value < 0.0 {
                return Err(SimError::NegativeMemory { name, value });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "colocated_offload")]
    ColocatedOffload,
    #[serde(rename = "colocated")]
    Colocated,
    #[serde(rename = "dedivae")]
    DeDiVae,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum TextEncoderPlacement {
    #[serde(rename = "with_denoise")]
    #[default]
    WithDenoise,
    #[serde(rename = "with_decode")]
    WithDecode,
}

/// Which system variant runs, plus the decoupled-only optimization flags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleMode {
    pub variant: Variant,
    #[serde(default)]
    pub pipesp: bool,
    #[serde(default)]
    pub aco: bool,
    #[serde(default)]
    pub text_encoder: TextEncoderPlacement,
}

impl ScheduleMode {
    pub fn colocated_offload() -> Self {
        Self {
            variant: Variant::ColocatedOffload,
            pipesp: false,
            aco: false,
            text_encoder: TextEncoderPlacement::WithDenoise,
        }
    }

    pub fn colocated() -> Self {
        Self {
            variant: Variant::Colocated,
            ..Self::colocated_offload()
        }
    }

    pub fn decoupled(pipesp: bool, aco: bool) -> Self {
        Self {
            variant: Variant::DeDiVae,
            pipesp,
            aco,
            text_encoder: TextEncoderPlacement::WithDenoise,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.variant != Variant::DeDiVae {
            if self.pipesp {
                return Err(SimError::FlagRequiresDecoupled { flag: "pipesp" });
            }
            if self.aco {
                return Err(SimError::FlagRequiresDecoupled { flag: "aco" });
            }
        }
        Ok(())
    }
}

// ─── Outputs ─────────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum TaskKind {
    TextEncode,
    Denoise,
    CoAttention,
    Decode,
    Offload,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::TextEncode => "text_encode",
            TaskKind::Denoise => "denoise_step",
            TaskKind::CoAttention => "attention_coop",
            TaskKind::Decode => "vae_decode",
            TaskKind::Offload => "weight_swap",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceEvent {
    pub gpu: usize,
    pub kind: TaskKind,
    pub start: f64,
    pub end: f64,
    pub prompt: usize,
}

/// Per-GPU busy intervals of one run. GPUs `0..denoise_gpus` belong to the
/// denoise (or colocated) group, the rest to the decode group.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimTrace {
    pub gpus: usize,
    pub denoise_gpus: usize,
    pub events: Vec<TraceEvent>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimReport {
    /// End-to-end latency per prompt, measured from batch submission at t=0
    /// to that prompt's decoded video.
    pub per_prompt_latency: Vec<f64>,
    pub makespan: f64,
    pub busy_fraction: Vec<f64>,
    pub peak_memory: Vec<f64>,
    pub oom: bool,
}
