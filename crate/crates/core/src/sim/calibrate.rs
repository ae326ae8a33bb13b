//! Affine calibration of cost models from two measured end-to-end points.
//!
//! Batch latency is affine in the timestep count for every schedule here:
//! `latency(T) = fixed + per_step * T`. Two measurements at distinct
//! timestep counts pin both coefficients exactly, and the builders below
//! turn a fit into a cost model whose simulated makespan reproduces that
//! affine line.

use super::{CostModel, SimError};

/// Solves `latency = fixed + per_step * timesteps` through two points.
/// Returns `(per_step, fixed)`.
pub fn calibrate_linear(a: (usize, f64), b: (usize, f64)) -> Result<(f64, f64), SimError> {
    if a.0 == b.0 {
        return Err(SimError::DegenerateCalibration);
    }
    if a.1 <= 0.0 || a.1.is_nan() || b.1 <= 0.0 || b.1.is_nan() {
        return Err(SimError::NonPositiveLatency);
    }
    let per_step = (b.1 - a.1) / (b.0 as f64 - a.0 as f64);
    let fixed = a.1 - per_step * a.0 as f64;
    Ok((per_step, fixed))
}

/// Cost model for the colocated offloading schedule whose makespan over
/// `prompts` prompts equals `fixed + per_step * timesteps` exactly (with
/// head counts divisible by the cluster size, so padding is neutral).
///
/// The fixed cost splits evenly between decode time and weight swaps; the
/// per-step cost splits 1:3 between the linear and attention kernels. The
/// split within each pair is not observable from end-to-end latencies.
pub fn colocated_cost_from_fit(per_step: f64, fixed: f64, prompts: usize) -> CostModel {
    let p = prompts as f64;
    let step = per_step / p;
    // makespan = prompts * (T*step + t_decode) + (2*prompts - 1) * t_offload
    let t_decode = fixed / (2.0 * p);
    let t_offload = (fixed - p * t_decode) / (2.0 * p - 1.0);
    CostModel {
        t_linear: 0.25 * step,
        t_attention: 0.75 * step,
        t_a2a_head: 0.0,
        overlap_fraction: 0.0,
        t_decode,
        t_offload,
        t_text: 0.0,
        t_xfer: 0.0,
        calibration_gpus: None,
    }
}

/// Cost model for the decoupled schedule (co-processing off) whose makespan
/// over `prompts` prompts equals `fixed + per_step * timesteps` exactly, on
/// an `n_denoise`-GPU denoise group with `heads` attention heads.
///
/// Valid while decoding is not the bottleneck, i.e. `fixed <= n_decode *
/// per_step * timesteps` at the smallest replayed timestep count; then the
/// makespan is the denoise chain plus the last prompt's decode drain.
pub fn decoupled_cost_from_fit(
    per_step: f64,
    fixed: f64,
    prompts: usize,
    heads: usize,
    n_denoise: usize,
) -> CostModel {
    let step = per_step / prompts as f64;
    let (padded, _) = crate::engine::pad_heads(heads, n_denoise);
    let pad_factor = padded as f64 / heads as f64;
    CostModel {
        t_linear: 0.25 * step,
        t_attention: 0.75 * step / pad_factor,
        t_a2a_head: 0.0,
        overlap_fraction: 0.0,
        t_decode: fixed,
        t_offload: 0.0,
        t_text: 0.0,
        t_xfer: 0.0,
        calibration_gpus: Some(n_denoise),
    }
}
