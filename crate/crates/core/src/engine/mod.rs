//! Simulated rank groups running sequence-parallel attention.
//!
//! A [`RankGroup`] is a set of in-process ranks connected by the ordered
//! ordered message fabric. Three attention paths run on top of it:
//!
//! - [`ulysses_attention`] — the baseline: three all-to-alls redistribute
//!   sequence-sharded Q/K/V to head-sharded, every rank attends over its
//!   local heads, one trailing all-to-all restores sequence sharding.
//! - [`pipesp_attention`] — the pipelined variant: each head's attention is
//!   followed immediately by its own all-to-all, which interleaves the head
//!   order; [`layout_fix`] restores it.
//! - [`aco_attention`] — co-processing: a second rank group takes a share
//!   of the heads, fed and drained point-to-point by the first.
//!
//! All three produce bit-identical outputs for the same logical inputs,
//! which is the property the verification suites pin down.

mod attention;
mod fabric;
mod shard;

pub use attention::{
    aco_attention, layout_fix, pad_heads, pipesp_attention, scatter_heads, ulysses_attention,
};
pub use shard::{HeadLayout, PartitionAxis, ShardedTensor};

use thiserror::Error;

use crate::tensor::{Tensor, TensorError};
use fabric::{run_ranks, RankCtx, RankFuture};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("axis {axis} extent {extent} does not divide across {ranks} ranks")]
    IndivisibleAxis {
        axis: usize,
        extent: usize,
        ranks: usize,
    },
    #[error("{heads} heads do not divide across {ranks} ranks; pad first")]
    HeadsNotDivisible { heads: usize, ranks: usize },
    #[error("{heads} heads do not match {ranks} ranks x {heads_per_rank} local heads")]
    HeadCountMismatch {
        heads: usize,
        ranks: usize,
        heads_per_rank: usize,
    },
    #[error("layout fix expects a rank-3 [tokens, heads, dim] tensor, got {shape:?}")]
    LayoutFixShape { shape: Vec<usize> },
    #[error("rank group is empty")]
    EmptyGroup,
    #[error("expected {expected} shards, got {actual}")]
    GroupSizeMismatch { expected: usize, actual: usize },
    #[error("shard {rank} has shape {shape:?}, expected {expected:?}")]
    ShardShape {
        rank: usize,
        shape: Vec<usize>,
        expected: Vec<usize>,
    },
    #[error("shard extents on axis {axis} range from {min} to {max}")]
    UnevenShards { axis: usize, min: usize, max: usize },
    #[error("operation requires {expected:?}-partitioned input")]
    WrongPartitionAxis { expected: PartitionAxis },
    #[error("message fabric closed before all exchanges completed")]
    FabricClosed,
    #[error("decode group is busy decoding latents")]
    DecodeGroupBusy,
}

pub type EngineResult<T> = Result<T, EngineError>;

/// A set of simulated ranks sharing a message fabric.
///
/// The schedule seed only affects the order in which runnable ranks are
/// polled; results are invariant under it. The busy marker models external
/// state for co-processing: a group flagged busy refuses to co-process.
#[derive(Debug, Clone)]
pub struct RankGroup {
    ranks: usize,
    schedule_seed: u64,
    busy: bool,
}

impl RankGroup {
    pub fn new(ranks: usize) -> Self {
        Self::with_schedule_seed(ranks, 0)
    }

    pub fn with_schedule_seed(ranks: usize, schedule_seed: u64) -> Self {
        Self {
            ranks,
            schedule_seed,
            busy: false,
        }
    }

    pub fn size(&self) -> usize {
        self.ranks
    }

    pub fn schedule_seed(&self) -> u64 {
        self.schedule_seed
    }

    pub fn is_busy(&self) -> bool {
        self.busy
    }

    pub fn set_busy(&mut self, busy: bool) {
        self.busy = busy;
    }

    /// Full-group all-to-all. Rank `r` ends with the concatenation, in
    /// source-rank order, of every rank's `r`-th chunk along `concat_axis`.
    /// Acts as a group barrier.
    pub fn all_to_all(
        &self,
        shards: &[Tensor],
        split_axis: usize,
        concat_axis: usize,
    ) -> EngineResult<Vec<Tensor>> {
        if self.ranks == 0 {
            return Err(EngineError::EmptyGroup);
        }
        if shards.len() != self.ranks {
            return Err(EngineError::GroupSizeMismatch {
                expected: self.ranks,
                actual: shards.len(),
            });
        }
        self.run(|ctx| {
            let local = shards[ctx.rank()].clone();
            Box::pin(async move { ctx.all_to_all(&local, split_axis, concat_axis).await })
        })
    }

    pub(crate) fn run<T>(
        &self,
        make: impl FnMut(RankCtx) -> RankFuture<T>,
    ) -> EngineResult<Vec<T>> {
        run_ranks(self.ranks, self.schedule_seed, make)
    }
}
