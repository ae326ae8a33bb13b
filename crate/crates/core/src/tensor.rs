//! Dense row-major f64 tensors with a deterministic attention kernel.
//!
//! Every operation materializes a contiguous row-major result and reduces
//! in a fixed lowest-index-first order, so the arithmetic of any computation
//! is a pure function of (operation, shape). That is what makes bit-exact
//! comparisons between the baseline and pipelined attention paths possible:
//! two code paths that feed the same values through [`sdp_attention`]
//! produce identical bits.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape {shape:?} implies {expected} elements, got {actual}")]
    ShapeDataMismatch {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("cannot view {from:?} as {to:?}: element counts differ")]
    ViewMismatch { from: Vec<usize>, to: Vec<usize> },
    #[error("axes {axes:?} are not a permutation of 0..{rank}")]
    InvalidPermutation { axes: Vec<usize>, rank: usize },
    #[error("axis {axis} out of range for rank {rank}")]
    AxisOutOfRange { axis: usize, rank: usize },
    #[error("narrow [{start}, {start}+{len}) exceeds extent {extent} on axis {axis}")]
    NarrowOutOfRange {
        axis: usize,
        start: usize,
        len: usize,
        extent: usize,
    },
    #[error("extent {extent} on axis {axis} does not divide into {chunks} equal chunks")]
    IndivisibleAxis {
        axis: usize,
        extent: usize,
        chunks: usize,
    },
    #[error("concat needs at least one tensor")]
    EmptyConcat,
    #[error("concat along axis {axis}: shape {shape:?} incompatible with {expected:?}")]
    RaggedConcat {
        axis: usize,
        expected: Vec<usize>,
        shape: Vec<usize>,
    },
    #[error("matmul shape mismatch: {lhs:?} x {rhs:?}")]
    MatmulMismatch { lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("operands must share shape: {lhs:?} vs {rhs:?}")]
    ShapeMismatch { lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("attention inputs must be rank-3 [batch, seq, dim], got {shape:?}")]
    AttentionRank { shape: Vec<usize> },
    #[error("mask of shape {mask:?} does not broadcast to scores of shape {scores:?}")]
    MaskBroadcast {
        mask: Vec<usize>,
        scores: Vec<usize>,
    },
    #[error("mask must be rank-4 [batch, heads, seq, seq], got {shape:?}")]
    MaskRank { shape: Vec<usize> },
    #[error("mask entries must be 0 or -inf")]
    MaskEntries,
    #[error("mask blocks every key for at least one query row")]
    MaskFullyBlocked,
    #[error("head {head} out of range for {heads} mask heads")]
    HeadOutOfRange { head: usize, heads: usize },
}

pub type TensorResult<T> = Result<T, TensorError>;

// ─── Tensor ──────────────────────────────────────────────────────────────────

/// Dense row-major tensor of f64 values.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> TensorResult<Self> {
        let shape = shape.into();
        let expected = shape.iter().product::<usize>();
        if expected != data.len() {
            return Err(TensorError::ShapeDataMismatch {
                shape,
                expected,
                actual: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    /// Builds a tensor by evaluating `f` at every index, row-major order.
    pub fn from_fn(shape: &[usize], mut f: impl FnMut(&[usize]) -> f64) -> Self {
        let len: usize = shape.iter().product();
        let mut idx = vec![0usize; shape.len()];
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(f(&idx));
            increment_index(&mut idx, shape);
        }
        Self {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        debug_assert_eq!(index.len(), self.rank());
        let strides = row_major_strides(&self.shape);
        let off: usize = index.iter().zip(&strides).map(|(i, s)| i * s).sum();
        self.data[off]
    }

    /// Reinterprets the flat data under a new shape. Element order is
    /// untouched; only the metadata changes.
    pub fn view(&self, new_shape: &[usize]) -> TensorResult<Self> {
        if new_shape.iter().product::<usize>() != self.len() {
            return Err(TensorError::ViewMismatch {
                from: self.shape.clone(),
                to: new_shape.to_vec(),
            });
        }
        Ok(Self {
            shape: new_shape.to_vec(),
            data: self.data.clone(),
        })
    }

    /// Reorders axes so that output axis `j` walks input axis `axes[j]`.
    /// The result is materialized contiguously.
    pub fn permute(&self, axes: &[usize]) -> TensorResult<Self> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        if axes.len() != rank
            || !axes
                .iter()
                .all(|&a| a < rank && !std::mem::replace(&mut seen[a], true))
        {
            return Err(TensorError::InvalidPermutation {
                axes: axes.to_vec(),
                rank,
            });
        }
        let in_strides = row_major_strides(&self.shape);
        let out_shape: Vec<usize> = axes.iter().map(|&a| self.shape[a]).collect();
        let out_strides_in: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
        let mut data = Vec::with_capacity(self.len());
        let mut idx = vec![0usize; rank];
        for _ in 0..self.len() {
            let off: usize = idx.iter().zip(&out_strides_in).map(|(i, s)| i * s).sum();
            data.push(self.data[off]);
            increment_index(&mut idx, &out_shape);
        }
        Ok(Self {
            shape: out_shape,
            data,
        })
    }

    /// Contiguous slice `[start, start+len)` along one axis.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> TensorResult<Self> {
        if axis >= self.rank() {
            return Err(TensorError::AxisOutOfRange {
                axis,
                rank: self.rank(),
            });
        }
        let extent = self.shape[axis];
        if start + len > extent {
            return Err(TensorError::NarrowOutOfRange {
                axis,
                start,
                len,
                extent,
            });
        }
        let inner: usize = self.shape[axis + 1..].iter().product();
        let outer: usize = self.shape[..axis].iter().product();
        let mut out_shape = self.shape.clone();
        out_shape[axis] = len;
        let mut data = Vec::with_capacity(outer * len * inner);
        for block in 0..outer {
            let base = block * extent * inner + start * inner;
            data.extend_from_slice(&self.data[base..base + len * inner]);
        }
        Ok(Self {
            shape: out_shape,
            data,
        })
    }

    /// Splits an axis into `chunks` equal slices.
    pub fn chunk(&self, axis: usize, chunks: usize) -> TensorResult<Vec<Self>> {
        if axis >= self.rank() {
            return Err(TensorError::AxisOutOfRange {
                axis,
                rank: self.rank(),
            });
        }
        let extent = self.shape[axis];
        if chunks == 0 || !extent.is_multiple_of(chunks) {
            return Err(TensorError::IndivisibleAxis {
                axis,
                extent,
                chunks,
            });
        }
        let step = extent / chunks;
        (0..chunks)
            .map(|c| self.narrow(axis, c * step, step))
            .collect()
    }

    /// Concatenates tensors along `axis`; slices appear in argument order.
    pub fn concat(parts: &[Tensor], axis: usize) -> TensorResult<Self> {
        let first = parts.first().ok_or(TensorError::EmptyConcat)?;
        if axis >= first.rank() {
            return Err(TensorError::AxisOutOfRange {
                axis,
                rank: first.rank(),
            });
        }
        let mut total = 0usize;
        for p in parts {
            let compatible = p.rank() == first.rank()
                && p.shape
                    .iter()
                    .zip(&first.shape)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(TensorError::RaggedConcat {
                    axis,
                    expected: first.shape.clone(),
                    shape: p.shape.clone(),
                });
            }
            total += p.shape[axis];
        }
        let mut out_shape = first.shape.clone();
        out_shape[axis] = total;
        let inner: usize = first.shape[axis + 1..].iter().product();
        let outer: usize = first.shape[..axis].iter().product();
        let mut data = Vec::with_capacity(out_shape.iter().product());
        for block in 0..outer {
            for p in parts {
                let rows = p.shape[axis];
                let base = block * rows * inner;
                data.extend_from_slice(&p.data[base..base + rows * inner]);
            }
        }
        Ok(Self {
            shape: out_shape,
            data,
        })
    }

    /// Batched matrix product: `[.., m, k] x [.., k, n] -> [.., m, n]` with
    /// identical leading dimensions. The inner reduction runs lowest index
    /// first.
    pub fn matmul(&self, rhs: &Tensor) -> TensorResult<Self> {
        let (ls, rs) = (&self.shape, &rhs.shape);
        let mismatch = || TensorError::MatmulMismatch {
            lhs: ls.clone(),
            rhs: rs.clone(),
        };
        if ls.len() < 2 || rs.len() != ls.len() || ls[..ls.len() - 2] != rs[..rs.len() - 2] {
            return Err(mismatch());
        }
        let (m, k) = (ls[ls.len() - 2], ls[ls.len() - 1]);
        let (k2, n) = (rs[rs.len() - 2], rs[rs.len() - 1]);
        if k != k2 {
            return Err(mismatch());
        }
        let batch: usize = ls[..ls.len() - 2].iter().product();
        let mut out_shape = ls.clone();
        out_shape[ls.len() - 2] = m;
        out_shape[ls.len() - 1] = n;
        let mut data = Vec::with_capacity(batch * m * n);
        for b in 0..batch {
            let lbase = b * m * k;
            let rbase = b * k * n;
            for i in 0..m {
                for j in 0..n {
                    let mut acc = 0.0;
                    for t in 0..k {
                        acc += self.data[lbase + i * k + t] * rhs.data[rbase + t * n + j];
                    }
                    data.push(acc);
                }
            }
        }
        Ok(Self {
            shape: out_shape,
            data,
        })
    }

    pub fn scale(&self, factor: f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }

    /// Adds `bias` with numpy-style right-aligned broadcasting: each bias
    /// dimension must equal the matching dimension of `self` or be 1.
    pub fn add_broadcast(&self, bias: &Tensor) -> TensorResult<Self> {
        let incompatible = || TensorError::MaskBroadcast {
            mask: bias.shape.clone(),
            scores: self.shape.clone(),
        };
        if bias.rank() > self.rank() {
            return Err(incompatible());
        }
        let offset = self.rank() - bias.rank();
        for (i, &b) in bias.shape.iter().enumerate() {
            if b != 1 && b != self.shape[offset + i] {
                return Err(incompatible());
            }
        }
        let bias_strides = row_major_strides(&bias.shape);
        let mut data = Vec::with_capacity(self.len());
        let mut idx = vec![0usize; self.rank()];
        for flat in 0..self.len() {
            let mut boff = 0usize;
            for (i, &b) in bias.shape.iter().enumerate() {
                if b != 1 {
                    boff += idx[offset + i] * bias_strides[i];
                }
            }
            data.push(self.data[flat] + bias.data[boff]);
            increment_index(&mut idx, &self.shape);
        }
        Ok(Self {
            shape: self.shape.clone(),
            data,
        })
    }

    /// Row-wise softmax over the last axis, max-shifted for stability.
    /// Scan, exponentiation and normalization all run left to right.
    pub fn softmax_last(&self) -> Self {
        let row = *self.shape.last().unwrap_or(&1);
        let mut data = Vec::with_capacity(self.len());
        for chunk in self.data.chunks(row.max(1)) {
            let mut max = f64::NEG_INFINITY;
            for &v in chunk {
                if v > max {
                    max = v;
                }
            }
            let exps: Vec<f64> = chunk.iter().map(|&v| (v - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            data.extend(exps.iter().map(|e| e / sum));
        }
        Self {
            shape: self.shape.clone(),
            data,
        }
    }
}

fn row_major_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1usize; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

fn increment_index(idx: &mut [usize], shape: &[usize]) {
    for i in (0..idx.len()).rev() {
        idx[i] += 1;
        if idx[i] < shape[i] {
            return;
        }
        idx[i] = 0;
    }
}

// ─── Attention ───────────────────────────────────────────────────────────────

/// Additive attention bias broadcastable to `[batch, heads, seq, seq]`.
///
/// Entries are 0 (attend) or -inf (blocked); a query row that blocks every
/// key is rejected on construction.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMask {
    bias: Tensor,
}

impl AttentionMask {
    pub fn new(bias: Tensor) -> TensorResult<Self> {
        if bias.rank() != 4 {
            return Err(TensorError::MaskRank {
                shape: bias.shape().to_vec(),
            });
        }
        if !bias
            .data()
            .iter()
            .all(|&v| v == 0.0 || v == f64::NEG_INFINITY)
        {
            return Err(TensorError::MaskEntries);
        }
        let row = bias.shape()[3];
        if bias
            .data()
            .chunks(row)
            .any(|r| r.iter().all(|&v| v == f64::NEG_INFINITY))
        {
            return Err(TensorError::MaskFullyBlocked);
        }
        Ok(Self { bias })
    }

    /// Mask that blocks key `j` for query `i` whenever `blocked(b, h, i, j)`.
    pub fn from_blocked(
        shape: [usize; 4],
        blocked: impl Fn(usize, usize, usize, usize) -> bool,
    ) -> TensorResult<Self> {
        let bias = Tensor::from_fn(&shape, |idx| {
            if blocked(idx[0], idx[1], idx[2], idx[3]) {
                f64::NEG_INFINITY
            } else {
                0.0
            }
        });
        Self::new(bias)
    }

    pub fn bias(&self) -> &Tensor {
        &self.bias
    }

    pub fn heads(&self) -> usize {
        self.bias.shape()[1]
    }

    /// Per-head bias slice `[batch', seq, seq]`; a singleton head dimension
    /// broadcasts to every head.
    pub fn head_bias(&self, head: usize) -> TensorResult<Tensor> {
        let heads = self.heads();
        let pick = if heads == 1 {
            0
        } else if head < heads {
            head
        } else {
            return Err(TensorError::HeadOutOfRange { head, heads });
        };
        let slice = self.bias.narrow(1, pick, 1)?;
        let s = slice.shape().to_vec();
        slice.view(&[s[0], s[2], s[3]])
    }
}

/// Masked scaled-dot-product attention for a single head.
///
/// `q`, `k`, `v` are `[batch, seq, dim]`; the optional additive bias must
/// broadcast to the `[batch, seq, seq]` score tensor. Computes
/// `softmax(q kᵀ / sqrt(dim) + bias) · v` with a fixed summation order, so
/// identical inputs give bit-identical outputs at every call site.
pub fn sdp_attention(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    mask: Option<&Tensor>,
) -> TensorResult<Tensor> {
    if q.rank() != 3 {
        return Err(TensorError::AttentionRank {
            shape: q.shape().to_vec(),
        });
    }
    if q.shape() != k.shape() || q.shape() != v.shape() {
        return Err(TensorError::ShapeMismatch {
            lhs: q.shape().to_vec(),
            rhs: if q.shape() != k.shape() {
                k.shape().to_vec()
            } else {
                v.shape().to_vec()
            },
        });
    }
    let dim = q.shape()[2];
    let mut scores = q
        .matmul(&k.permute(&[0, 2, 1])?)?
        .scale(1.0 / (dim as f64).sqrt());
    if let Some(bias) = mask {
        scores = scores.add_broadcast(bias)?;
    }
    scores.softmax_last().matmul(v)
}

/// Reference multi-head attention: loops [`sdp_attention`] over the head
/// axis of `[batch, heads, seq, dim]` inputs. This is the single source of
/// truth the distributed paths are compared against.
pub fn multi_head_attention(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    mask: Option<&AttentionMask>,
) -> TensorResult<Tensor> {
    if q.rank() != 4 {
        return Err(TensorError::AttentionRank {
            shape: q.shape().to_vec(),
        });
    }
    let [batch, heads, seq, dim] = [q.shape()[0], q.shape()[1], q.shape()[2], q.shape()[3]];
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let slice =
            |t: &Tensor| -> TensorResult<Tensor> { t.narrow(1, h, 1)?.view(&[batch, seq, dim]) };
        let bias = match mask {
            Some(m) => Some(m.head_bias(h)?),
            None => None,
        };
        let out = sdp_attention(&slice(q)?, &slice(k)?, &slice(v)?, bias.as_ref())?;
        outs.push(out.view(&[batch, 1, seq, dim])?);
    }
    Tensor::concat(&outs, 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tensor(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    fn arange(shape: &[usize]) -> Tensor {
        let len: usize = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..len).map(|i| i as f64).collect()).unwrap()
    }

    #[test]
    fn view_keeps_flat_order() {
        let t = arange(&[4, 6]);
        let v = t.view(&[2, 12]).unwrap();
        assert_eq!(v.shape(), &[2, 12]);
        assert_eq!(v.data(), t.data());
    }

    #[test]
    fn view_same_shape_is_identity() {
        let t = arange(&[3, 5]);
        assert_eq!(t.view(&[3, 5]).unwrap(), t);
    }

    #[test]
    fn view_reindexes_by_row_major() {
        let t = arange(&[1, 4, 3]);
        let v = t.view(&[2, 6]).unwrap();
        for r in 0..2 {
            for c in 0..6 {
                assert_eq!(v.get(&[r, c]), t.data()[6 * r + c]);
            }
        }
    }

    #[test]
    fn view_rejects_element_count_change() {
        let t = arange(&[4, 6]);
        assert!(matches!(
            t.view(&[5, 5]),
            Err(TensorError::ViewMismatch { .. })
        ));
    }

    #[test]
    fn permute_transposes_matrix() {
        let t = tensor(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let p = t.permute(&[1, 0]).unwrap();
        assert_eq!(p.shape(), &[3, 2]);
        assert_eq!(p.data(), &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
    }

    #[test]
    fn permute_identity() {
        let t = arange(&[2, 3, 4]);
        assert_eq!(t.permute(&[0, 1, 2]).unwrap(), t);
    }

    #[test]
    fn permute_swaps_middle_axes() {
        let t = arange(&[1, 2, 2, 1]);
        let p = t.permute(&[0, 2, 1, 3]).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(p.get(&[0, j, i, 0]), t.get(&[0, i, j, 0]));
            }
        }
    }

    #[test]
    fn permute_rejects_bad_axes() {
        let t = arange(&[2, 3]);
        assert!(matches!(
            t.permute(&[0, 0]),
            Err(TensorError::InvalidPermutation { .. })
        ));
        assert!(matches!(
            t.permute(&[0, 2]),
            Err(TensorError::InvalidPermutation { .. })
        ));
    }

    #[test]
    fn concat_stacks_in_argument_order() {
        let a = tensor(&[1, 2], &[1.0, 2.0]);
        let b = tensor(&[1, 2], &[3.0, 4.0]);
        let c = Tensor::concat(&[a, b], 0).unwrap();
        assert_eq!(c.shape(), &[2, 2]);
        assert_eq!(c.data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn concat_single_input_unchanged() {
        let a = arange(&[2, 3]);
        assert_eq!(Tensor::concat(std::slice::from_ref(&a), 1).unwrap(), a);
    }

    #[test]
    fn concat_round_order_on_axis_one() {
        let chunks: Vec<Tensor> = (0..3)
            .map(|c| Tensor::from_fn(&[1, 1, 2, 1], |idx| (c * 10 + idx[2]) as f64))
            .collect();
        let out = Tensor::concat(&chunks, 1).unwrap();
        assert_eq!(out.shape(), &[1, 3, 2, 1]);
        assert_eq!(out.data(), &[0.0, 1.0, 10.0, 11.0, 20.0, 21.0]);
    }

    #[test]
    fn concat_rejects_ragged_shapes() {
        let a = arange(&[1, 2]);
        let b = arange(&[2, 2]);
        assert!(matches!(
            Tensor::concat(&[a, b], 1),
            Err(TensorError::RaggedConcat { .. })
        ));
    }

    #[test]
    fn narrow_then_concat_restores() {
        let t = arange(&[2, 4, 3]);
        let parts = t.chunk(1, 2).unwrap();
        assert_eq!(Tensor::concat(&parts, 1).unwrap(), t);
    }

    #[test]
    fn matmul_small_case() {
        let a = tensor(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let b = tensor(&[2, 2], &[5.0, 6.0, 7.0, 8.0]);
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.data(), &[19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let t = tensor(&[2, 3], &[0.1, -2.0, 5.0, 1.0, 1.0, 1.0]);
        let s = t.softmax_last();
        for row in s.data().chunks(3) {
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn sdp_uniform_weights_average_values() {
        // All K rows equal -> every score row is constant -> uniform softmax,
        // so each output row is the column mean of V.
        let q = tensor(&[1, 3, 2], &[1.0, 0.0, -1.0, 2.0, 0.5, 0.5]);
        let k = tensor(&[1, 3, 2], &[1.0, 1.0, 1.0, 1.0, 1.0, 1.0]);
        let v = tensor(&[1, 3, 2], &[0.0, 6.0, 3.0, 0.0, 6.0, 3.0]);
        let out = sdp_attention(&q, &k, &v, None).unwrap();
        for row in out.data().chunks(2) {
            assert!((row[0] - 3.0).abs() < 1e-12);
            assert!((row[1] - 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn sdp_single_key_returns_value() {
        let q = tensor(&[2, 1, 3], &[0.3, -1.0, 2.0, 0.0, 0.0, 9.0]);
        let k = tensor(&[2, 1, 3], &[5.0, 5.0, 5.0, -2.0, 0.1, 0.4]);
        let v = tensor(&[2, 1, 3], &[7.0, 8.0, 9.0, -1.0, -2.0, -3.0]);
        let out = sdp_attention(&q, &k, &v, None).unwrap();
        assert_eq!(out, v);
    }

    #[test]
    fn sdp_two_token_hand_case() {
        // Q=[[1],[0]], K=[[1],[0]], V=[[2],[4]], dim=1:
        // row 0 weights = softmax([1, 0]), row 1 weights = softmax([0, 0]).
        let q = tensor(&[1, 2, 1], &[1.0, 0.0]);
        let k = tensor(&[1, 2, 1], &[1.0, 0.0]);
        let v = tensor(&[1, 2, 1], &[2.0, 4.0]);
        let out = sdp_attention(&q, &k, &v, None).unwrap();

        let e = 1.0f64.exp();
        let w0 = e / (e + 1.0);
        let expected0 = w0 * 2.0 + (1.0 - w0) * 4.0;
        assert!((out.data()[0] - expected0).abs() < 1e-14);
        assert!((out.data()[0] - 2.53788284274).abs() < 1e-12);
        assert!((out.data()[1] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn sdp_mask_blocks_keys() {
        // Query 0 may only attend to key 0, query 1 only to key 1.
        let q = tensor(&[1, 2, 1], &[1.0, 1.0]);
        let k = tensor(&[1, 2, 1], &[1.0, 1.0]);
        let v = tensor(&[1, 2, 1], &[2.0, 4.0]);
        let ninf = f64::NEG_INFINITY;
        let bias = tensor(&[1, 2, 2], &[0.0, ninf, ninf, 0.0]);
        let out = sdp_attention(&q, &k, &v, Some(&bias)).unwrap();
        assert_eq!(out.data(), &[2.0, 4.0]);
    }

    #[test]
    fn sdp_rejects_mismatched_shapes() {
        let q = arange(&[1, 2, 2]);
        let k = arange(&[1, 3, 2]);
        assert!(sdp_attention(&q, &k, &q, None).is_err());
    }

    #[test]
    fn sdp_rejects_bad_mask_broadcast() {
        let q = arange(&[1, 2, 2]);
        let bias = Tensor::zeros(&[3, 3]);
        assert!(matches!(
            sdp_attention(&q, &q, &q, Some(&bias)),
            Err(TensorError::MaskBroadcast { .. })
        ));
    }

    #[test]
    fn mask_rejects_fully_blocked_row() {
        let ninf = f64::NEG_INFINITY;
        let bias = tensor(&[1, 1, 2, 2], &[0.0, ninf, ninf, ninf]);
        assert!(matches!(
            AttentionMask::new(bias),
            Err(TensorError::MaskFullyBlocked)
        ));
    }

    #[test]
    fn mask_rejects_arbitrary_entries() {
        let bias = tensor(&[1, 1, 1, 1], &[0.5]);
        assert!(matches!(
            AttentionMask::new(bias),
            Err(TensorError::MaskEntries)
        ));
    }

    #[test]
    fn mask_head_slice_broadcasts_singleton() {
        let mask = AttentionMask::from_blocked([1, 1, 2, 2], |_, _, i, j| j > i).unwrap();
        let b0 = mask.head_bias(0).unwrap();
        let b7 = mask.head_bias(7).unwrap();
        assert_eq!(b0, b7);
        assert_eq!(b0.shape(), &[1, 2, 2]);
    }

    #[test]
    fn multi_head_matches_per_head_calls() {
        let q = arange(&[2, 3, 4, 2]);
        let k = q.scale(0.5);
        let v = arange(&[2, 3, 4, 2]).scale(-1.0);
        let all = multi_head_attention(&q, &k, &v, None).unwrap();
        for h in 0..3 {
            let slice = |t: &Tensor| t.narrow(1, h, 1).unwrap().view(&[2, 4, 2]).unwrap();
            let one = sdp_attention(&slice(&q), &slice(&k), &slice(&v), None).unwrap();
            assert_eq!(all.narrow(1, h, 1).unwrap().view(&[2, 4, 2]).unwrap(), one);
        }
    }

    #[test]
    fn attention_is_bit_deterministic() {
        let q = Tensor::from_fn(&[2, 8, 4], |idx| {
            ((idx[0] * 31 + idx[1] * 7 + idx[2]) as f64).sin()
        });
        let k = Tensor::from_fn(&[2, 8, 4], |idx| {
            ((idx[0] * 13 + idx[1] * 3 + idx[2]) as f64).cos()
        });
        let v = Tensor::from_fn(&[2, 8, 4], |idx| (idx[1] as f64) - (idx[2] as f64));
        let a = sdp_attention(&q, &k, &v, None).unwrap();
        let b = sdp_attention(&q, &k, &v, None).unwrap();
        assert_eq!(a.data(), b.data());
    }

    fn shape_strategy() -> impl Strategy<Value = Vec<usize>> {
        proptest::collection::vec(1usize..5, 1..5)
    }

    proptest! {
        #[test]
        fn view_round_trip(shape in shape_strategy(), seed in 0u64..1000) {
            let len: usize = shape.iter().product();
            let t = Tensor::new(shape.clone(), (0..len).map(|i| (i as f64) + seed as f64).collect()).unwrap();
            let flat = t.view(&[len]).unwrap();
            prop_assert_eq!(flat.view(&shape).unwrap(), t);
        }

        #[test]
        fn permute_inverse_round_trip(shape in shape_strategy(), shuffle_seed in 0u64..1000) {
            let rank = shape.len();
            let mut axes: Vec<usize> = (0..rank).collect();
            // deterministic shuffle driven by the seed
            for i in (1..rank).rev() {
                let j = ((shuffle_seed as usize).wrapping_mul(6364136223846793005).wrapping_add(i)) % (i + 1);
                axes.swap(i, j);
            }
            let mut inverse = vec![0usize; rank];
            for (pos, &a) in axes.iter().enumerate() {
                inverse[a] = pos;
            }
            let len: usize = shape.iter().product();
            let t = Tensor::new(shape, (0..len).map(|i| i as f64).collect()).unwrap();
            prop_assert_eq!(t.permute(&axes).unwrap().permute(&inverse).unwrap(), t);
        }

        #[test]
        fn attention_rows_are_convex_combinations(batch in 1usize..3, seq in 1usize..6, dim in 1usize..4, seed in 0u64..100) {
            let gen = |salt: u64| {
                Tensor::from_fn(&[batch, seq, dim], |idx| {
                    let x = (idx[0] * 131 + idx[1] * 17 + idx[2] * 3) as f64 + (seed * 97 + salt) as f64;
                    (x * 0.37).sin() * 2.0
                })
            };
            let (q, k, v) = (gen(1), gen(2), gen(3));
            let out = sdp_attention(&q, &k, &v, None).unwrap();
            for b in 0..batch {
                for d in 0..dim {
                    let mut lo = f64::INFINITY;
                    let mut hi = f64::NEG_INFINITY;
                    for s in 0..seq {
                        lo = lo.min(v.get(&[b, s, d]));
                        hi = hi.max(v.get(&[b, s, d]));
                    }
                    for s in 0..seq {
                        let y = out.get(&[b, s, d]);
                        prop_assert!(y >= lo - 1e-9 && y <= hi + 1e-9);
                    }
                }
            }
        }
    }
}
