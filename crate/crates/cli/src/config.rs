//! Scenario configuration files.
//!
//! One TOML file describes one run: workload, costs, memory, schedule mode,
//! and either an explicit GPU partition or a cluster size to derive one
//! from. Unknown keys are rejected so typos fail loudly.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use seqpipe_core::{
    closed_form_partition, CostModel, MemoryModel, Partition, ScheduleMode, Variant, WorkloadSpec,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    /// Seed picked up by `verify --config` for the randomized suites.
    #[serde(default)]
    pub seed: u64,
    /// Cluster size, used to derive a partition when none is given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gpus: Option<usize>,
    pub workload: WorkloadSpec,
    pub cost: CostModel,
    pub memory: MemoryModel,
    pub mode: ScheduleMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partition: Option<PartitionConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionConfig {
    pub denoise: usize,
    #[serde(default)]
    pub decode: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<PathBuf>,
}

impl Config {
    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in config {}", path.display()))
    }

    /// Parses and validates; the TOML errors carry line/column positions.
    pub fn parse(text: &str) -> Result<Config> {
        let config: Config = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.workload.validate()?;
        self.cost.validate()?;
        self.memory.validate()?;
        self.mode.validate()?;
        if let Some(gpus) = self.gpus {
            if gpus == 0 {
                bail!("gpus must be positive");
            }
            if let Some(p) = self.partition {
                if p.denoise + p.decode != gpus {
                    bail!(
                        "partition {}+{} does not match gpus = {gpus}",
                        p.denoise,
                        p.decode
                    );
                }
            }
        }
        if self.partition.is_none() && self.gpus.is_none() {
            bail!("either [partition] or gpus is required");
        }
        Ok(())
    }

    /// The partition to run with: the explicit one when present, otherwise
    /// every GPU for colocated schedules or the closed-form balance split
    /// for the decoupled one.
    pub fn resolve_partition(&self) -> Result<Partition> {
        if let Some(p) = self.partition {
            return Ok(Partition::new(p.denoise, p.decode));
        }
        let gpus = self.gpus.expect("validated: partition or gpus present");
        match self.mode.variant {
            Variant::Colocated | Variant::ColocatedOffload => Ok(Partition::colocated(gpus)),
            Variant::DeDiVae => {
                let (t_denoise, t_decode) = self.stage_times(gpus);
                closed_form_partition(t_denoise, t_decode, gpus)
                    .context("deriving a partition from the configured stage times")
            }
        }
    }

    /// Single-GPU per-prompt stage times implied by the cost model:
    /// the calibrated per-step time scaled back to one GPU, and the decode
    /// time, which is already per GPU.
    pub fn stage_times(&self, gpus: usize) -> (f64, f64) {
        let calibration = self.cost.calibration_gpus.unwrap_or(gpus) as f64;
        let per_step = (self.cost.t_linear + self.cost.t_attention) * calibration;
        (
            per_step * self.workload.timesteps as f64,
            self.cost.t_decode,
        )
    }
}
