//! Sharded tensors and the head-layout index maps.
//!
//! Logical attention tensors are `[batch, heads, seq, dim]`. A
//! [`ShardedTensor`] holds one local tensor per rank plus the axis the
//! logical tensor was partitioned on; concatenating the shards along that
//! axis in rank order reconstructs the logical tensor.

use super::EngineError;
use crate::tensor::{Tensor, TensorResult};

/// Which logical axis of `[batch, heads, seq, dim]` is sharded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PartitionAxis {
    Head,
    Sequence,
}

impl PartitionAxis {
    pub fn index(self) -> usize {
        match self {
            PartitionAxis::Head => 1,
            PartitionAxis::Sequence => 2,
        }
    }
}

/// Per-rank shards of one logical tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct ShardedTensor {
    shards: Vec<Tensor>,
    axis: PartitionAxis,
}

impl ShardedTensor {
    /// Splits a logical tensor into `ranks` shards along `axis`. Extents
    /// divide as evenly as possible: the first `extent % ranks` shards get
    /// one extra slice, so shard extents never differ by more than one.
    pub fn split(logical: &Tensor, axis: PartitionAxis, ranks: usize) -> Result<Self, EngineError> {
        if ranks == 0 {
            return Err(EngineError::EmptyGroup);
        }
        let ax = axis.index();
        if logical.rank() != 4 {
            return Err(EngineError::ShardShape {
                rank: 0,
                shape: logical.shape().to_vec(),
                expected: vec![0; 4],
            });
        }
        let extent = logical.shape()[ax];
        let base = extent / ranks;
        let rem = extent % ranks;
        let mut shards = Vec::with_capacity(ranks);
        let mut start = 0;
        for r in 0..ranks {
            let len = base + usize::from(r < rem);
            shards.push(logical.narrow(ax, start, len)?);
            start += len;
        }
        Ok(Self { shards, axis })
    }

    /// Wraps per-rank tensors produced by a collective. Shapes must agree
    /// everywhere except on the partition axis, where extents may differ by
    /// at most one.
    pub fn from_shards(shards: Vec<Tensor>, axis: PartitionAxis) -> Result<Self, EngineError> {
        let first = shards.first().ok_or(EngineError::EmptyGroup)?;
        let ax = axis.index();
        let mut min_ext = usize::MAX;
        let mut max_ext = 0usize;
        for (rank, s) in shards.iter().enumerate() {
            let compatible = s.rank() == 4
                && s.rank() == first.rank()
                && s.shape()
                    .iter()
                    .zip(first.shape())
                    .enumerate()
                    .all(|(i, (a, b))| i == ax || a == b);
            if !compatible {
                return Err(EngineError::ShardShape {
                    rank,
                    shape: s.shape().to_vec(),
                    expected: first.shape().to_vec(),
                });
            }
            min_ext = min_ext.min(s.shape()[ax]);
            max_ext = max_ext.max(s.shape()[ax]);
        }
        if max_ext - min_ext > 1 {
            return Err(EngineError::UnevenShards {
                axis: ax,
                min: min_ext,
                max: max_ext,
            });
        }
        Ok(Self { shards, axis })
    }

    pub fn shards(&self) -> &[Tensor] {
        &self.shards
    }

    pub fn into_shards(self) -> Vec<Tensor> {
        self.shards
    }

    pub fn ranks(&self) -> usize {
        self.shards.len()
    }

    pub fn axis(&self) -> PartitionAxis {
        self.axis
    }

    /// Reconstructs the logical tensor by concatenating shards in rank
    /// order along the partition axis.
    pub fn logical(&self) -> TensorResult<Tensor> {
        Tensor::concat(&self.shards, self.axis.index())
    }

    pub fn logical_shape(&self) -> Vec<usize> {
        let ax = self.axis.index();
        let mut shape = self.shards[0].shape().to_vec();
        shape[ax] = self.shards.iter().map(|s| s.shape()[ax]).sum();
        shape
    }

    /// True when every shard has the same extent on the partition axis.
    pub fn is_even(&self) -> bool {
        let ax = self.axis.index();
        let first = self.shards[0].shape()[ax];
        self.shards.iter().all(|s| s.shape()[ax] == first)
    }
}

/// Index maps between the head-contiguous layout and the round-interleaved
/// layout the per-head pipelined exchange produces.
///
/// With `ranks` GPUs and `heads_per_rank` local heads, rank `i`'s local head
/// `j` is global head `i * heads_per_rank + j` in contiguous order but lands
/// at position `j * ranks + i` after the round-by-round exchange.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeadLayout {
    pub ranks: usize,
    pub heads_per_rank: usize,
}

impl HeadLayout {
    pub fn new(ranks: usize, heads_per_rank: usize) -> Self {
        Self {
            ranks,
            heads_per_rank,
        }
    }

    pub fn total_heads(&self) -> usize {
        self.ranks * self.heads_per_rank
    }

    /// Global head index in the original head-contiguous layout.
    pub fn contiguous_index(&self, rank: usize, local_head: usize) -> usize {
        rank * self.heads_per_rank + local_head
    }

    /// Position the same head occupies after the per-round exchange.
    pub fn interleaved_index(&self, rank: usize, local_head: usize) -> usize {
        local_head * self.ranks + rank
    }

    /// `perm[p]` is the global head stored at interleaved position `p`:
    /// position `j * ranks + i` holds head `i * heads_per_rank + j`.
    pub fn interleaved_order(&self) -> Vec<usize> {
        let mut order = vec![0usize; self.total_heads()];
        for rank in 0..self.ranks {
            for local in 0..self.heads_per_rank {
                order[self.interleaved_index(rank, local)] = self.contiguous_index(rank, local);
            }
        }
        order
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn label_tensor(batch: usize, heads: usize, seq: usize, dim: usize) -> Tensor {
        Tensor::from_fn(&[batch, heads, seq, dim], |idx| {
            (idx[0] * 1000 + idx[1] * 100 + idx[2] * 10 + idx[3]) as f64
        })
    }

    #[test]
    fn split_round_trips_through_logical() {
        let t = label_tensor(2, 4, 6, 3);
        for ranks in 1..=3 {
            for axis in [PartitionAxis::Head, PartitionAxis::Sequence] {
                let sharded = ShardedTensor::split(&t, axis, ranks).unwrap();
                assert_eq!(sharded.logical().unwrap(), t);
                assert_eq!(sharded.logical_shape(), t.shape());
            }
        }
    }

    #[test]
    fn split_extents_differ_by_at_most_one() {
        let t = label_tensor(1, 7, 4, 2);
        let sharded = ShardedTensor::split(&t, PartitionAxis::Head, 3).unwrap();
        let extents: Vec<usize> = sharded.shards().iter().map(|s| s.shape()[1]).collect();
        assert_eq!(extents, vec![3, 2, 2]);
        assert!(!sharded.is_even());
    }

    #[test]
    fn from_shards_rejects_ragged_extents() {
        let t = label_tensor(1, 6, 4, 2);
        let a = t.narrow(1, 0, 4).unwrap();
        let b = t.narrow(1, 4, 2).unwrap();
        assert!(matches!(
            ShardedTensor::from_shards(vec![a, b], PartitionAxis::Head),
            Err(EngineError::UnevenShards { .. })
        ));
    }

    #[test]
    fn interleaved_order_small_case() {
        // ranks=2, heads_per_rank=2: positions hold heads [0, 2, 1, 3]
        let layout = HeadLayout::new(2, 2);
        assert_eq!(layout.interleaved_order(), vec![0, 2, 1, 3]);
    }

    #[test]
    fn index_maps_are_bijections() {
        for ranks in 1..=8 {
            for heads_per_rank in 1..=8 {
                let layout = HeadLayout::new(ranks, heads_per_rank);
                let mut seen_orig = vec![false; layout.total_heads()];
                let mut seen_mod = vec![false; layout.total_heads()];
                for i in 0..ranks {
                    for j in 0..heads_per_rank {
                        let orig = layout.contiguous_index(i, j);
                        let inter = layout.interleaved_index(i, j);
                        assert!(!seen_orig[orig] && !seen_mod[inter]);
                        seen_orig[orig] = true;
                        seen_mod[inter] = true;
                    }
                }
            }
        }
    }
}
