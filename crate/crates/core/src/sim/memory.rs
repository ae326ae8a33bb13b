//! Peak-memory accounting per GPU role.

use crate::partition::Partition;

use super::{MemoryModel, ScheduleMode, TextEncoderPlacement, Variant, WorkloadSpec};

/// Peak GPU memory in GB, one entry per GPU (denoise group first).
///
/// Colocated without offloading keeps every module resident at once; with
/// offloading only one module's weights are resident at a time, so the peak
/// is the largest single phase footprint. The decoupled split gives each
/// group only its own module, with the text encoder placed per the mode.
pub fn peak_memory(
    m: &MemoryModel,
    w: &WorkloadSpec,
    mode: &ScheduleMode,
    part: &Partition,
) -> Vec<f64> {
    let latent = w.latent_size();
    let act_denoise = m.act_denoise_coeff * latent;
    let act_decode = m.act_decode_coeff * latent;
    match mode.variant {
        Variant::Colocated => {
            let peak = m.w_dit + m.w_vae + m.w_text + act_denoise.max(act_decode);
            vec![peak; part.total()]
        }
        Variant::ColocatedOffload => {
            let peak = (m.w_dit + act_denoise)
                .max(m.w_vae + act_decode)
                .max(m.w_text);
            vec![peak; part.total()]
        }
        Variant::DeDiVae => {
            let text_on_denoise = mode.text_encoder == TextEncoderPlacement::WithDenoise;
            let denoise_peak = m.w_dit + if text_on_denoise { m.w_text } else { 0.0 } + act_denoise;
            let decode_peak = m.w_vae + if text_on_denoise { 0.0 } else { m.w_text } + act_decode;
            let mut peaks = vec![denoise_peak; part.n_denoise];
            peaks.extend(std::iter::repeat_n(decode_peak, part.n_decode));
            peaks
        }
    }
}
