//! Deterministic multi-rank sequence-parallel attention engine plus a
//! discrete-event simulator for multi-GPU video-generation pipelines.
//!
//! The crate has four layers:
//!
//! - [`tensor`] — a minimal dense f64 tensor kernel with a fixed reduction
//!   order, giving bit-exact results across code paths.
//! - [`engine`] — simulated rank groups exchanging tensors over ordered
//!   message channels: baseline Ulysses-style sequence parallelism, the
//!   per-head pipelined variant with its layout fix, and attention
//!   co-processing across a second rank group.
//! - [`sim`] and [`partition`] — a discrete-event model of multi-prompt
//!   generation across GPU groups (latency, utilization, peak memory) and
//!   the closed-form denoise/decode GPU split with a brute-force check.
//! - [`verify`] — the property suites wired into the CLI.

pub mod engine;
pub mod partition;
pub mod sim;
pub mod tensor;
pub mod verify;

pub use engine::{
    aco_attention, layout_fix, pad_heads, pipesp_attention, scatter_heads, ulysses_attention,
    EngineError, HeadLayout, PartitionAxis, RankGroup, ShardedTensor,
};
pub use partition::{
    brute_force_partition, closed_form_partition, single_gpu_cost_model, Partition, PartitionError,
};
pub use sim::{
    calibrate_linear, chrome_trace_json, colocated_cost_from_fit, decoupled_cost_from_fit,
    peak_memory, render_report, simulate, validate_chrome_trace, validate_trace, CostModel,
    MemoryModel, ScheduleMode, SimError, SimReport, SimTrace, TaskKind, TextEncoderPlacement,
    TraceEvent, Variant, WorkloadSpec,
};
pub use tensor::{
    multi_head_attention, sdp_attention, AttentionMask, Tensor, TensorError, TensorResult,
};
