//! The three distributed attention paths and the head-layout fix.

use super::fabric::RankCtx;
use super::shard::{PartitionAxis, ShardedTensor};
use super::{EngineError, EngineResult, RankGroup};
use crate::tensor::{sdp_attention, AttentionMask, Tensor, TensorResult};

const HEAD_AXIS: usize = 1;
const SEQ_AXIS: usize = 2;

/// Smallest head count that is a multiple of `ranks` and at least `heads`,
/// plus how many inert heads that adds. Padded heads carry zero Q/K/V and
/// are stripped from the output before any comparison.
pub fn pad_heads(heads: usize, ranks: usize) -> (usize, usize) {
    if ranks == 0 {
        return (heads, 0);
    }
    let padded = heads.div_ceil(ranks) * ranks;
    (padded, padded - heads)
}

/// Restores head-contiguous order on a `[tokens, ranks * heads_per_rank,
/// dim]` tensor whose head positions are round-interleaved: position
/// `j * ranks + i` holds the head that belongs at `i * heads_per_rank + j`.
///
/// Implemented as view -> permute -> view: the head axis is reshaped to
/// `[heads_per_rank, ranks]`, the two sub-axes are swapped, and the result
/// is flattened back.
pub fn layout_fix(t: &Tensor, ranks: usize, heads_per_rank: usize) -> EngineResult<Tensor> {
    if t.rank() != 3 {
        return Err(EngineError::LayoutFixShape {
            shape: t.shape().to_vec(),
        });
    }
    let (tokens, heads, dim) = (t.shape()[0], t.shape()[1], t.shape()[2]);
    if heads != ranks * heads_per_rank {
        return Err(EngineError::HeadCountMismatch {
            heads,
            ranks,
            heads_per_rank,
        });
    }
    let fixed = t
        .view(&[tokens, heads_per_rank, ranks, dim])?
        .permute(&[0, 2, 1, 3])?
        .view(&[tokens, heads, dim])?;
    Ok(fixed)
}

/// Applies [`layout_fix`] to the head axis of a `[batch, heads, seq, dim]`
/// tensor by routing through the trailing `[tokens, heads, dim]` layout.
fn layout_fix_4d(t: &Tensor, ranks: usize, heads_per_rank: usize) -> EngineResult<Tensor> {
    let (batch, heads, seq, dim) = (t.shape()[0], t.shape()[1], t.shape()[2], t.shape()[3]);
    let tokens_major = t.permute(&[0, 2, 1, 3])?.view(&[batch * seq, heads, dim])?;
    let fixed = layout_fix(&tokens_major, ranks, heads_per_rank)?;
    Ok(fixed
        .view(&[batch, seq, heads, dim])?
        .permute(&[0, 2, 1, 3])?)
}

/// Redistributes sequence-partitioned shards to head-partitioned: one
/// all-to-all splitting the head axis and gathering the sequence axis.
/// This is the collective Ulysses issues three times (Q, K, V) before
/// attention; both attention paths share it.
pub fn scatter_heads(group: &RankGroup, x: &ShardedTensor) -> EngineResult<ShardedTensor> {
    validate_sharding(group, x, PartitionAxis::Sequence)?;
    let heads = x.logical_shape()[HEAD_AXIS];
    if !heads.is_multiple_of(group.size()) {
        return Err(EngineError::HeadsNotDivisible {
            heads,
            ranks: group.size(),
        });
    }
    let shards = group.all_to_all(x.shards(), HEAD_AXIS, SEQ_AXIS)?;
    ShardedTensor::from_shards(shards, PartitionAxis::Head)
}

/// Baseline sequence-parallel attention over sequence-partitioned Q/K/V:
/// three all-to-alls to head-partitioned/full-sequence, per-head attention
/// on every rank, then one all-to-all back to sequence-partitioned with
/// heads in original contiguous order. Reference output for the
/// equivalence checks.
pub fn ulysses_attention(
    group: &RankGroup,
    q: &ShardedTensor,
    k: &ShardedTensor,
    v: &ShardedTensor,
    mask: Option<&AttentionMask>,
) -> EngineResult<ShardedTensor> {
    let shape = validate_qkv(group, q, k, v, PartitionAxis::Sequence)?;
    let ranks = group.size();
    let heads = shape[HEAD_AXIS];
    if heads % ranks != 0 {
        return Err(EngineError::HeadsNotDivisible { heads, ranks });
    }
    let local_heads = heads / ranks;
    let shards = group.run(|ctx| {
        let rank = ctx.rank();
        let (q_l, k_l, v_l) = (
            q.shards()[rank].clone(),
            k.shards()[rank].clone(),
            v.shards()[rank].clone(),
        );
        let mask = mask.cloned();
        Box::pin(async move {
            let q_h = ctx.all_to_all(&q_l, HEAD_AXIS, SEQ_AXIS).await?;
            let k_h = ctx.all_to_all(&k_l, HEAD_AXIS, SEQ_AXIS).await?;
            let v_h = ctx.all_to_all(&v_l, HEAD_AXIS, SEQ_AXIS).await?;
            let out =
                attend_local_heads(&q_h, &k_h, &v_h, mask.as_ref(), rank * local_heads, heads)?;
            ctx.all_to_all(&out, SEQ_AXIS, HEAD_AXIS).await
        })
    })?;
    ShardedTensor::from_shards(shards, PartitionAxis::Sequence)
}

/// Pipelined sequence-parallel attention over head-partitioned Q/K/V (the
/// state after [`scatter_heads`]): each local head's attention is followed
/// immediately by its own all-to-all, and the interleaved result is put
/// back in head-contiguous order by [`layout_fix`]. Output equals
/// [`ulysses_attention`] element for element.
pub fn pipesp_attention(
    group: &RankGroup,
    q: &ShardedTensor,
    k: &ShardedTensor,
    v: &ShardedTensor,
    mask: Option<&AttentionMask>,
) -> EngineResult<ShardedTensor> {
    run_pipesp(group, q, k, v, mask, true)
}

fn run_pipesp(
    group: &RankGroup,
    q: &ShardedTensor,
    k: &ShardedTensor,
    v: &ShardedTensor,
    mask: Option<&AttentionMask>,
    restore_layout: bool,
) -> EngineResult<ShardedTensor> {
    let shape = validate_qkv(group, q, k, v, PartitionAxis::Head)?;
    let ranks = group.size();
    let heads = shape[HEAD_AXIS];
    if heads % ranks != 0 {
        return Err(EngineError::HeadsNotDivisible { heads, ranks });
    }
    let local_heads = heads / ranks;
    let shards = group.run(|ctx| {
        let rank = ctx.rank();
        let (q_l, k_l, v_l) = (
            q.shards()[rank].clone(),
            k.shards()[rank].clone(),
            v.shards()[rank].clone(),
        );
        let mask = mask.cloned();
        Box::pin(async move {
            let ranks = ctx.ranks();
            let mut chunks = Vec::with_capacity(local_heads);
            for j in 0..local_heads {
                let head = |t: &Tensor| t.narrow(HEAD_AXIS, j, 1);
                let out_j = attend_local_heads(
                    &head(&q_l)?,
                    &head(&k_l)?,
                    &head(&v_l)?,
                    mask.as_ref(),
                    rank * local_heads + j,
                    heads,
                )?;
                // launch this head's exchange before computing the next one
                let gathered = ctx.all_to_all(&out_j, SEQ_AXIS, HEAD_AXIS).await?;
                chunks.push(gathered);
            }
            let interleaved = Tensor::concat(&chunks, HEAD_AXIS)?;
            if restore_layout {
                layout_fix_4d(&interleaved, ranks, local_heads)
            } else {
                Ok(interleaved)
            }
        })
    })?;
    ShardedTensor::from_shards(shards, PartitionAxis::Sequence)
}

/// Attention co-processing: the denoise group distributes padded head
/// shares over both groups (all-to-all between denoise ranks, point-to-
/// point to decode ranks), every rank attends over its share, and results
/// are gathered back onto the denoise ranks head-contiguously with padding
/// stripped. The decode group must be idle; a busy group is refused and
/// the caller falls back to the pipelined path.
pub fn aco_attention(
    denoise: &RankGroup,
    decode: &RankGroup,
    q: &ShardedTensor,
    k: &ShardedTensor,
    v: &ShardedTensor,
    mask: Option<&AttentionMask>,
) -> EngineResult<ShardedTensor> {
    if decode.is_busy() {
        return Err(EngineError::DecodeGroupBusy);
    }
    let shape = validate_qkv(denoise, q, k, v, PartitionAxis::Sequence)?;
    let denoise_ranks = denoise.size();
    let total_ranks = denoise_ranks + decode.size();
    let heads = shape[HEAD_AXIS];
    let (padded_heads, _) = pad_heads(heads, total_ranks);
    let share = padded_heads / total_ranks;

    let seed = denoise
        .schedule_seed()
        .wrapping_add(decode.schedule_seed().rotate_left(17));
    let outputs = super::fabric::run_ranks(total_ranks, seed, |ctx| {
        let rank = ctx.rank();
        let local = (rank < denoise_ranks).then(|| {
            (
                q.shards()[rank].clone(),
                k.shards()[rank].clone(),
                v.shards()[rank].clone(),
            )
        });
        let mask = mask.cloned();
        Box::pin(async move {
            if let Some((q_l, k_l, v_l)) = local {
                for t in [&q_l, &k_l, &v_l] {
                    let padded = pad_head_axis(t, padded_heads)?;
                    for (dst, chunk) in padded
                        .chunk(HEAD_AXIS, total_ranks)?
                        .into_iter()
                        .enumerate()
                    {
                        ctx.send(dst, chunk);
                    }
                }
                co_attend_share(&ctx, denoise_ranks, share, heads, mask.as_ref()).await?;
                let mut parts = Vec::with_capacity(total_ranks);
                for src in 0..total_ranks {
                    parts.push(ctx.recv(src).await?);
                }
                let assembled = Tensor::concat(&parts, HEAD_AXIS)?;
                Ok(Some(assembled.narrow(HEAD_AXIS, 0, heads)?))
            } else {
                co_attend_share(&ctx, denoise_ranks, share, heads, mask.as_ref()).await?;
                Ok(None)
            }
        })
    })?;

    let shards: Vec<Tensor> = outputs.into_iter().flatten().collect();
    ShardedTensor::from_shards(shards, PartitionAxis::Sequence)
}

/// Compute-side of co-processing, identical on both groups: assemble this
/// rank's head share over the full sequence, attend, and scatter the output
/// back to the denoise ranks that own the sequence slices.
async fn co_attend_share(
    ctx: &RankCtx,
    denoise_ranks: usize,
    share: usize,
    real_heads: usize,
    mask: Option<&AttentionMask>,
) -> EngineResult<()> {
    let mut gathered = Vec::with_capacity(3);
    for _ in 0..3 {
        let mut parts = Vec::with_capacity(denoise_ranks);
        for src in 0..denoise_ranks {
            parts.push(ctx.recv(src).await?);
        }
        gathered.push(Tensor::concat(&parts, SEQ_AXIS)?);
    }
    let (q_s, k_s, v_s) = (&gathered[0], &gathered[1], &gathered[2]);
    let out = attend_local_heads(q_s, k_s, v_s, mask, ctx.rank() * share, real_heads)?;
    for (dst, chunk) in out.chunk(SEQ_AXIS, denoise_ranks)?.into_iter().enumerate() {
        ctx.send(dst, chunk);
    }
    Ok(())
}

/// Per-head attention over the local slice `[batch, local_heads, seq, dim]`.
/// `first_global_head` maps local head `j` to its global index for mask
/// lookup; heads at or beyond `real_heads` are padding and get no bias.
fn attend_local_heads(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    mask: Option<&AttentionMask>,
    first_global_head: usize,
    real_heads: usize,
) -> EngineResult<Tensor> {
    let (batch, local_heads, seq, dim) = (q.shape()[0], q.shape()[1], q.shape()[2], q.shape()[3]);
    let mut outs = Vec::with_capacity(local_heads);
    for j in 0..local_heads {
        let slice = |t: &Tensor| -> TensorResult<Tensor> {
            t.narrow(HEAD_AXIS, j, 1)?.view(&[batch, seq, dim])
        };
        let global = first_global_head + j;
        let bias = match mask {
            Some(m) if global < real_heads => Some(m.head_bias(global)?),
            _ => None,
        };
        let out = sdp_attention(&slice(q)?, &slice(k)?, &slice(v)?, bias.as_ref())?;
        outs.push(out.view(&[batch, 1, seq, dim])?);
    }
    Ok(Tensor::concat(&outs, HEAD_AXIS)?)
}

fn pad_head_axis(t: &Tensor, padded_heads: usize) -> TensorResult<Tensor> {
    let heads = t.shape()[HEAD_AXIS];
    if heads == padded_heads {
        return Ok(t.clone());
    }
    let mut pad_shape = t.shape().to_vec();
    pad_shape[HEAD_AXIS] = padded_heads - heads;
    Tensor::concat(&[t.clone(), Tensor::zeros(&pad_shape)], HEAD_AXIS)
}

fn validate_sharding(
    group: &RankGroup,
    x: &ShardedTensor,
    expected: PartitionAxis,
) -> EngineResult<()> {
    if group.size() == 0 {
        return Err(EngineError::EmptyGroup);
    }
    if x.ranks() != group.size() {
        return Err(EngineError::GroupSizeMismatch {
            expected: group.size(),
            actual: x.ranks(),
        });
    }
    if x.axis() != expected {
        return Err(EngineError::WrongPartitionAxis { expected });
    }
    if !x.is_even() {
        let ax = expected.index();
        return Err(EngineError::IndivisibleAxis {
            axis: ax,
            extent: x.logical_shape()[ax],
            ranks: group.size(),
        });
    }
    Ok(())
}

fn validate_qkv(
    group: &RankGroup,
    q: &ShardedTensor,
    k: &ShardedTensor,
    v: &ShardedTensor,
    expected: PartitionAxis,
) -> EngineResult<Vec<usize>> {
    for x in [q, k, v] {
        validate_sharding(group, x, expected)?;
    }
    let shape = q.logical_shape();
    for x in [k, v] {
        if x.logical_shape() != shape {
            return Err(EngineError::ShardShape {
                rank: 0,
                shape: x.logical_shape(),
                expected: shape,
            });
        }
    }
    Ok(shape)
}
