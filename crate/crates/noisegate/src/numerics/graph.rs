use std::collections::HashSet;
use std::sync::Arc;

use super::kernels::{mat_nn, mat_nt, mat_tn};
use super::{Scalar, Tensor};
use crate::{Error, Result};

/// Handle to a node recorded in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(usize);

/// Attention mask: `allowed[q * keys + k]` says whether query row `q` may
/// attend to key row `k`. Shared by reference so recording an op is cheap.
#[derive(Debug, Clone)]
pub struct AttnMask {
    queries: usize,
    keys: usize,
    allowed: Arc<Vec<bool>>,
}

impl AttnMask {
    /// Causal self-attention mask over `frames` time steps with a bounded
    /// lookback: query `t` may attend to keys in `[t - lookback, t]`.
    pub fn causal_lookback(frames: usize, lookback: usize) -> Self {
        let mut allowed = vec![false; frames * frames];
        for q in 0..frames {
            let lo = q.saturating_sub(lookback);
            for k in lo..=q {
                allowed[q * frames + k] = true;
            }
        }
        AttnMask {
            queries: frames,
            keys: frames,
            allowed: Arc::new(allowed),
        }
    }

    /// Arbitrary mask from a row-major boolean table.
    pub fn from_table(queries: usize, keys: usize, allowed: Vec<bool>) -> Result<Self> {
        if allowed.len() != queries * keys {
            return Err(Error::BadShape {
                op: "attn_mask",
                expected: format!("{} entries", queries * keys),
                shape: vec![allowed.len()],
            });
        }
        Ok(AttnMask {
            queries,
            keys,
            allowed: Arc::new(allowed),
        })
    }

    pub fn queries(&self) -> usize {
        self.queries
    }

    pub fn keys(&self) -> usize {
        self.keys
    }

    pub fn is_allowed(&self, q: usize, k: usize) -> bool {
        self.allowed[q * self.keys + k]
    }
}

/// Recorded operation. Inputs are ids of earlier nodes, so the tape is a DAG
/// in topological order by construction.
#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Matmul { a: TensorId, b: TensorId },
    Transpose { x: TensorId },
    Add { a: TensorId, b: TensorId },
    Sub { a: TensorId, b: TensorId },
    Mul { a: TensorId, b: TensorId },
    AddBias { x: TensorId, bias: TensorId },
    Scale { x: TensorId, factor: T },
    Sigmoid { x: TensorId },
    Swish { x: TensorId },
    Abs { x: TensorId },
    Square { x: TensorId },
    Glu { x: TensorId },
    Sum { x: TensorId },
    SliceCols { x: TensorId, start: usize },
    ConcatCols { parts: Vec<TensorId> },
    SoftmaxRows { x: TensorId },
    GroupNorm { x: TensorId, gain: TensorId, bias: TensorId, groups: usize, eps: f64 },
    ConvDepthwiseCausal { x: TensorId, kernel: TensorId },
}

#[derive(Debug)]
struct Node<T> {
    shape: Vec<usize>,
    values: Vec<T>,
    op: Op<T>,
}

/// Gradients produced by [`Graph::backward`]: one buffer per recorded node,
/// in the node's own shape.
#[derive(Debug)]
pub struct Grads<T> {
    by_node: Vec<Vec<T>>,
}

impl<T: Scalar> Grads<T> {
    /// Gradient of the loss with respect to node `id`.
    pub fn of(&self, id: TensorId) -> &[T] {
        &self.by_node[id.0]
    }
}

/// Tape-style computation graph.
///
/// Recording an op computes its value immediately (eager forward); the op
/// and its input ids are kept so [`Graph::backward`] can run the chain rule
/// over the whole tape in reverse insertion order.
pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
    params: Vec<(String, TensorId)>,
    param_names: HashSet<String>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            params: Vec::new(),
            param_names: HashSet::new(),
        }
    }

    fn push(&mut self, shape: Vec<usize>, values: Vec<T>, op: Op<T>) -> TensorId {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        let id = TensorId(self.nodes.len());
        self.nodes.push(Node { shape, values, op });
        id
    }

    /// Record a non-trainable leaf (features, targets, constants).
    pub fn input(&mut self, t: &Tensor<T>) -> TensorId {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf)
    }

    /// Record a trainable leaf under a unique name. Gradients for parameters
    /// are retrieved by walking [`Graph::params`] after `backward`.
    pub fn param(&mut self, name: impl Into<String>, t: &Tensor<T>) -> Result<TensorId> {
        let name = name.into();
        if !self.param_names.insert(name.clone()) {
            return Err(Error::DuplicateParam { name });
        }
        let id = self.input(t);
        self.params.push((name, id));
        Ok(id)
    }

    /// Bound parameters in insertion order.
    pub fn params(&self) -> impl Iterator<Item = (&str, TensorId)> {
        self.params.iter().map(|(n, id)| (n.as_str(), *id))
    }

    pub fn param_id(&self, name: &str) -> Option<TensorId> {
        self.params
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, id)| *id)
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn values(&self, id: TensorId) -> &[T] {
        &self.nodes[id.0].values
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn to_tensor(&self, id: TensorId) -> Tensor<T> {
        Tensor::new(self.shape(id).to_vec(), self.values(id).to_vec())
            .expect("recorded node is internally consistent")
    }

    fn require_rank2(&self, op: &'static str, id: TensorId) -> Result<(usize, usize)> {
        let s = self.shape(id);
        if s.len() != 2 {
            return Err(Error::BadShape {
                op,
                expected: "rank-2 tensor".into(),
                shape: s.to_vec(),
            });
        }
        Ok((s[0], s[1]))
    }

    fn require_same_shape(&self, op: &'static str, a: TensorId, b: TensorId) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::ShapeMismatch {
                op,
                left: self.shape(a).to_vec(),
                right: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    // ----- elementwise -----

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.require_same_shape("add", a, b)?;
        let values = zip_map(self.values(a), self.values(b), |x, y| x + y);
        Ok(self.push(self.shape(a).to_vec(), values, Op::Add { a, b }))
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.require_same_shape("sub", a, b)?;
        let values = zip_map(self.values(a), self.values(b), |x, y| x - y);
        Ok(self.push(self.shape(a).to_vec(), values, Op::Sub { a, b }))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.require_same_shape("mul", a, b)?;
        let values = zip_map(self.values(a), self.values(b), |x, y| x * y);
        Ok(self.push(self.shape(a).to_vec(), values, Op::Mul { a, b }))
    }

    pub fn scale(&mut self, x: TensorId, factor: T) -> TensorId {
        let values = self.values(x).iter().map(|&v| v * factor).collect();
        self.push(self.shape(x).to_vec(), values, Op::Scale { x, factor })
    }

    pub fn sigmoid(&mut self, x: TensorId) -> TensorId {
        let values = self.values(x).iter().map(|&v| sigmoid(v)).collect();
        self.push(self.shape(x).to_vec(), values, Op::Sigmoid { x })
    }

    /// Swish / SiLU: `x * sigmoid(x)`.
    pub fn swish(&mut self, x: TensorId) -> TensorId {
        let values = self.values(x).iter().map(|&v| v * sigmoid(v)).collect();
        self.push(self.shape(x).to_vec(), values, Op::Swish { x })
    }

    pub fn abs(&mut self, x: TensorId) -> TensorId {
        let values = self.values(x).iter().map(|&v| v.abs()).collect();
        self.push(self.shape(x).to_vec(), values, Op::Abs { x })
    }

    pub fn square(&mut self, x: TensorId) -> TensorId {
        let values = self.values(x).iter().map(|&v| v * v).collect();
        self.push(self.shape(x).to_vec(), values, Op::Square { x })
    }

    // ----- linear algebra -----

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (m, ka) = self.require_rank2("matmul", a)?;
        let (kb, n) = self.require_rank2("matmul", b)?;
        if ka != kb {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                left: self.shape(a).to_vec(),
                right: self.shape(b).to_vec(),
            });
        }
        let mut values = vec![T::zero(); m * n];
        mat_nn(self.values(a), self.values(b), m, ka, n, &mut values);
        Ok(self.push(vec![m, n], values, Op::Matmul { a, b }))
    }

    pub fn transpose(&mut self, x: TensorId) -> Result<TensorId> {
        let (r, c) = self.require_rank2("transpose", x)?;
        let xv = self.values(x);
        let mut values = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                values[j * r + i] = xv[i * c + j];
            }
        }
        Ok(self.push(vec![c, r], values, Op::Transpose { x }))
    }

    /// Add a rank-1 bias `[c]` to every row of a rank-2 tensor `[r, c]`.
    pub fn add_bias(&mut self, x: TensorId, bias: TensorId) -> Result<TensorId> {
        let (r, c) = self.require_rank2("add_bias", x)?;
        let bs = self.shape(bias);
        if bs != [c] {
            return Err(Error::ShapeMismatch {
                op: "add_bias",
                left: vec![r, c],
                right: bs.to_vec(),
            });
        }
        let xv = self.values(x);
        let bv = self.values(bias);
        let mut values = Vec::with_capacity(r * c);
        for i in 0..r {
            for j in 0..c {
                values.push(xv[i * c + j] + bv[j]);
            }
        }
        Ok(self.push(vec![r, c], values, Op::AddBias { x, bias }))
    }

    /// `x @ w + b`, the everywhere-used affine map.
    pub fn affine(&mut self, x: TensorId, w: TensorId, b: TensorId) -> Result<TensorId> {
        let y = self.matmul(x, w)?;
        self.add_bias(y, b)
    }

    // ----- shaping -----

    /// Columns `[start, start + width)` of a rank-2 tensor.
    pub fn slice_cols(&mut self, x: TensorId, start: usize, width: usize) -> Result<TensorId> {
        let (r, c) = self.require_rank2("slice_cols", x)?;
        if width == 0 || start + width > c {
            return Err(Error::BadShape {
                op: "slice_cols",
                expected: format!("columns [{start}, {}) within {c}", start + width),
                shape: vec![r, c],
            });
        }
        let xv = self.values(x);
        let mut values = Vec::with_capacity(r * width);
        for i in 0..r {
            values.extend_from_slice(&xv[i * c + start..i * c + start + width]);
        }
        Ok(self.push(vec![r, width], values, Op::SliceCols { x, start }))
    }

    /// Concatenate rank-2 tensors with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[TensorId]) -> Result<TensorId> {
        let first = *parts.first().ok_or(Error::BadShape {
            op: "concat_cols",
            expected: "at least one part".into(),
            shape: vec![],
        })?;
        let (r, _) = self.require_rank2("concat_cols", first)?;
        let mut total = 0;
        for &p in parts {
            let (rp, cp) = self.require_rank2("concat_cols", p)?;
            if rp != r {
                return Err(Error::ShapeMismatch {
                    op: "concat_cols",
                    left: self.shape(first).to_vec(),
                    right: self.shape(p).to_vec(),
                });
            }
            total += cp;
        }
        let mut values = Vec::with_capacity(r * total);
        for i in 0..r {
            for &p in parts {
                let c = self.shape(p)[1];
                values.extend_from_slice(&self.values(p)[i * c..(i + 1) * c]);
            }
        }
        Ok(self.push(
            vec![r, total],
            values,
            Op::ConcatCols {
                parts: parts.to_vec(),
            },
        ))
    }

    // ----- reductions & nonlinear structure -----

    /// Sum of all elements, as a `[1]` tensor.
    pub fn sum(&mut self, x: TensorId) -> TensorId {
        let total = self
            .values(x)
            .iter()
            .fold(T::zero(), |acc, &v| acc + v);
        self.push(vec![1], vec![total], Op::Sum { x })
    }

    /// Gated linear unit over columns: splits `[r, 2m]` into halves `a`, `g`
    /// and returns `a * sigmoid(g)` of shape `[r, m]`.
    pub fn glu(&mut self, x: TensorId) -> Result<TensorId> {
        let (r, c) = self.require_rank2("glu", x)?;
        if c % 2 != 0 {
            return Err(Error::BadShape {
                op: "glu",
                expected: "even number of columns".into(),
                shape: vec![r, c],
            });
        }
        let m = c / 2;
        let xv = self.values(x);
        let mut values = Vec::with_capacity(r * m);
        for i in 0..r {
            for j in 0..m {
                let a = xv[i * c + j];
                let g = xv[i * c + m + j];
                values.push(a * sigmoid(g));
            }
        }
        Ok(self.push(vec![r, m], values, Op::Glu { x }))
    }

    /// Row-wise softmax. Equivalent to [`Graph::softmax_rows_masked`] with an
    /// all-allowed mask.
    pub fn softmax_rows(&mut self, x: TensorId) -> Result<TensorId> {
        self.softmax_impl(x, None)
    }

    /// Row-wise softmax where masked-out entries get *exactly* zero
    /// probability (they are excluded from the max and the normalizer, not
    /// just pushed down by a large negative logit). A row with no allowed
    /// entries is an error.
    pub fn softmax_rows_masked(&mut self, x: TensorId, mask: &AttnMask) -> Result<TensorId> {
        self.softmax_impl(x, Some(mask))
    }

    fn softmax_impl(&mut self, x: TensorId, mask: Option<&AttnMask>) -> Result<TensorId> {
        let (r, c) = self.require_rank2("softmax", x)?;
        if let Some(m) = &mask {
            if m.queries() != r || m.keys() != c {
                return Err(Error::ShapeMismatch {
                    op: "softmax",
                    left: vec![r, c],
                    right: vec![m.queries(), m.keys()],
                });
            }
        }
        let xv = self.values(x);
        let mut values = vec![T::zero(); r * c];
        for i in 0..r {
            let row = &xv[i * c..(i + 1) * c];
            let mut max: Option<T> = None;
            for (j, &v) in row.iter().enumerate() {
                if mask.map_or(true, |m| m.is_allowed(i, j)) {
                    max = Some(match max {
                        Some(cur) => cur.max(v),
                        None => v,
                    });
                }
            }
            let max = max.ok_or(Error::FullyMaskedRow { row: i })?;
            let mut denom = T::zero();
            for (j, &v) in row.iter().enumerate() {
                if mask.map_or(true, |m| m.is_allowed(i, j)) {
                    let e = (v - max).exp();
                    values[i * c + j] = e;
                    denom = denom + e;
                }
            }
            for j in 0..c {
                values[i * c + j] = values[i * c + j] / denom;
            }
        }
        Ok(self.push(vec![r, c], values, Op::SoftmaxRows { x }))
    }

    /// Layer normalization over the last axis of `[r, c]`, with per-channel
    /// gain and bias `[c]`. `eps` sits inside the square root.
    pub fn layer_norm(
        &mut self,
        x: TensorId,
        gain: TensorId,
        bias: TensorId,
        eps: f64,
    ) -> Result<TensorId> {
        self.group_norm(x, gain, bias, 1, eps)
    }

    /// Group normalization over the last axis: each row's channels are split
    /// into `groups` contiguous groups, normalized within the group, then
    /// scaled/shifted per channel. With `groups == 1` this is layer norm;
    /// statistics never mix rows (time steps), so it is causal.
    pub fn group_norm(
        &mut self,
        x: TensorId,
        gain: TensorId,
        bias: TensorId,
        groups: usize,
        eps: f64,
    ) -> Result<TensorId> {
        let (r, c) = self.require_rank2("norm", x)?;
        if groups == 0 || c % groups != 0 {
            return Err(Error::BadShape {
                op: "norm",
                expected: format!("channel count divisible by {groups} groups"),
                shape: vec![r, c],
            });
        }
        for (role, t) in [("gain", gain), ("bias", bias)] {
            if self.shape(t) != [c] {
                return Err(Error::ShapeMismatch {
                    op: if role == "gain" { "norm gain" } else { "norm bias" },
                    left: vec![r, c],
                    right: self.shape(t).to_vec(),
                });
            }
        }
        let m = c / groups;
        let inv_m = T::from_f64(1.0 / m as f64);
        let epst = T::from_f64(eps);
        let xv = self.values(x);
        let gv = self.values(gain);
        let bv = self.values(bias);
        let mut values = vec![T::zero(); r * c];
        for i in 0..r {
            for g in 0..groups {
                let base = i * c + g * m;
                let chunk = &xv[base..base + m];
                let mean = chunk.iter().fold(T::zero(), |a, &v| a + v) * inv_m;
                let var = chunk
                    .iter()
                    .fold(T::zero(), |a, &v| a + (v - mean) * (v - mean))
                    * inv_m;
                let inv_std = T::one() / (var + epst).sqrt();
                for j in 0..m {
                    let ch = g * m + j;
                    let xhat = (chunk[j] - mean) * inv_std;
                    values[i * c + ch] = gv[ch] * xhat + bv[ch];
                }
            }
        }
        Ok(self.push(
            vec![r, c],
            values,
            Op::GroupNorm {
                x,
                gain,
                bias,
                groups,
                eps,
            },
        ))
    }

    /// Causal depthwise 1-D convolution along rows (time). `x` is `[t, d]`,
    /// `kernel` is `[k, d]`; the input is implicitly left-padded with `k - 1`
    /// rows of zeros, so output frame `t` depends only on inputs `<= t` and
    /// `kernel[k - 1]` multiplies the current frame.
    pub fn conv1d_depthwise_causal(&mut self, x: TensorId, kernel: TensorId) -> Result<TensorId> {
        let (t, d) = self.require_rank2("conv1d", x)?;
        let (k, dk) = self.require_rank2("conv1d", kernel)?;
        if d != dk || k == 0 {
            return Err(Error::ShapeMismatch {
                op: "conv1d",
                left: vec![t, d],
                right: vec![k, dk],
            });
        }
        let xv = self.values(x);
        let kv = self.values(kernel);
        let mut values = vec![T::zero(); t * d];
        for ti in 0..t {
            for tap in 0..k {
                // Input row that kernel row `tap` touches for output `ti`.
                let offset = (k - 1) - tap;
                if offset > ti {
                    continue; // inside the zero padding
                }
                let si = ti - offset;
                let src = &xv[si * d..(si + 1) * d];
                let w = &kv[tap * d..(tap + 1) * d];
                let dst = &mut values[ti * d..(ti + 1) * d];
                for c in 0..d {
                    dst[c] = dst[c] + src[c] * w[c];
                }
            }
        }
        Ok(self.push(vec![t, d], values, Op::ConvDepthwiseCausal { x, kernel }))
    }

    // ----- reverse pass -----

    /// Reverse-mode sweep from a scalar loss. Returns a gradient buffer for
    /// every node; leaves that do not influence the loss get exact zeros.
    pub fn backward(&self, loss: TensorId) -> Result<Grads<T>> {
        if self.shape(loss) != [1] {
            return Err(Error::NonScalarLoss {
                shape: self.shape(loss).to_vec(),
            });
        }
        let mut by_node: Vec<Vec<T>> = self
            .nodes
            .iter()
            .map(|n| vec![T::zero(); n.values.len()])
            .collect();
        by_node[loss.0][0] = T::one();

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            // Cheap check first: a node with an all-zero gradient propagates
            // nothing. (Cannot skip structurally: ids above `loss` are simply
            // never seeded.)
            let g = std::mem::take(&mut by_node[idx]);
            match &node.op {
                Op::Leaf => {}
                Op::Add { a, b } => {
                    accumulate(&mut by_node[a.0], &g, |gi| gi);
                    accumulate(&mut by_node[b.0], &g, |gi| gi);
                }
                Op::Sub { a, b } => {
                    accumulate(&mut by_node[a.0], &g, |gi| gi);
                    accumulate(&mut by_node[b.0], &g, |gi| -gi);
                }
                Op::Mul { a, b } => {
                    let av = &self.nodes[a.0].values;
                    let bv = &self.nodes[b.0].values;
                    for (i, &gi) in g.iter().enumerate() {
                        by_node[a.0][i] = by_node[a.0][i] + gi * bv[i];
                    }
                    for (i, &gi) in g.iter().enumerate() {
                        by_node[b.0][i] = by_node[b.0][i] + gi * av[i];
                    }
                }
                Op::Scale { x, factor } => {
                    let f = *factor;
                    accumulate(&mut by_node[x.0], &g, |gi| gi * f);
                }
                Op::Sigmoid { x } => {
                    let y = &node.values;
                    for (i, &gi) in g.iter().enumerate() {
                        let s = y[i];
                        by_node[x.0][i] = by_node[x.0][i] + gi * s * (T::one() - s);
                    }
                }
                Op::Swish { x } => {
                    let xv = &self.nodes[x.0].values;
                    for (i, &gi) in g.iter().enumerate() {
                        let s = sigmoid(xv[i]);
                        let d = s + xv[i] * s * (T::one() - s);
                        by_node[x.0][i] = by_node[x.0][i] + gi * d;
                    }
                }
                Op::Abs { x } => {
                    let xv = &self.nodes[x.0].values;
                    for (i, &gi) in g.iter().enumerate() {
                        let s = if xv[i] > T::zero() {
                            T::one()
                        } else if xv[i] < T::zero() {
                            -T::one()
                        } else {
                            T::zero()
                        };
                        by_node[x.0][i] = by_node[x.0][i] + gi * s;
                    }
                }
                Op::Square { x } => {
                    let xv = &self.nodes[x.0].values;
                    let two = T::from_f64(2.0);
                    for (i, &gi) in g.iter().enumerate() {
                        by_node[x.0][i] = by_node[x.0][i] + gi * two * xv[i];
                    }
                }
                Op::Sum { x } => {
                    let gi = g[0];
                    for slot in by_node[x.0].iter_mut() {
                        *slot = *slot + gi;
                    }
                }
                Op::AddBias { x, bias } => {
                    accumulate(&mut by_node[x.0], &g, |gi| gi);
                    let c = self.nodes[bias.0].values.len();
                    let r = g.len() / c;
                    for i in 0..r {
                        for j in 0..c {
                            by_node[bias.0][j] = by_node[bias.0][j] + g[i * c + j];
                        }
                    }
                }
                Op::Matmul { a, b } => {
                    let (m, k) = (self.nodes[a.0].shape[0], self.nodes[a.0].shape[1]);
                    let n = self.nodes[b.0].shape[1];
                    let av = &self.nodes[a.0].values;
                    let bv = &self.nodes[b.0].values;
                    // dA += g . B^T ; dB += A^T . g. Temporaries keep this
                    // correct even if both operands are the same node.
                    let mut da = vec![T::zero(); m * k];
                    mat_nt(&g, bv, m, n, k, &mut da);
                    let mut db = vec![T::zero(); k * n];
                    mat_tn(av, &g, m, k, n, &mut db);
                    accumulate(&mut by_node[a.0], &da, |v| v);
                    accumulate(&mut by_node[b.0], &db, |v| v);
                }
                Op::Transpose { x } => {
                    let (c, r) = (node.shape[0], node.shape[1]); // out is [c, r]
                    for i in 0..c {
                        for j in 0..r {
                            by_node[x.0][j * c + i] = by_node[x.0][j * c + i] + g[i * r + j];
                        }
                    }
                }
                Op::SliceCols { x, start } => {
                    let c = self.nodes[x.0].shape[1];
                    let w = node.shape[1];
                    let r = node.shape[0];
                    for i in 0..r {
                        for j in 0..w {
                            let dst = i * c + start + j;
                            by_node[x.0][dst] = by_node[x.0][dst] + g[i * w + j];
                        }
                    }
                }
                Op::ConcatCols { parts } => {
                    let r = node.shape[0];
                    let total = node.shape[1];
                    let mut offset = 0;
                    for &p in parts {
                        let c = self.nodes[p.0].shape[1];
                        for i in 0..r {
                            for j in 0..c {
                                by_node[p.0][i * c + j] =
                                    by_node[p.0][i * c + j] + g[i * total + offset + j];
                            }
                        }
                        offset += c;
                    }
                }
                Op::Glu { x } => {
                    let (r, m) = (node.shape[0], node.shape[1]);
                    let c = 2 * m;
                    let xv = &self.nodes[x.0].values;
                    for i in 0..r {
                        for j in 0..m {
                            let gi = g[i * m + j];
                            let a = xv[i * c + j];
                            let s = sigmoid(xv[i * c + m + j]);
                            by_node[x.0][i * c + j] = by_node[x.0][i * c + j] + gi * s;
                            by_node[x.0][i * c + m + j] = by_node[x.0][i * c + m + j]
                                + gi * a * s * (T::one() - s);
                        }
                    }
                }
                Op::SoftmaxRows { x } => {
                    // Masked entries have value exactly 0, so the standard
                    // Jacobian-vector product already sends them zero grad.
                    let (r, c) = (node.shape[0], node.shape[1]);
                    let y = &node.values;
                    for i in 0..r {
                        let mut dot = T::zero();
                        for j in 0..c {
                            dot = dot + g[i * c + j] * y[i * c + j];
                        }
                        for j in 0..c {
                            let idx = i * c + j;
                            by_node[x.0][idx] =
                                by_node[x.0][idx] + y[idx] * (g[idx] - dot);
                        }
                    }
                }
                Op::GroupNorm {
                    x,
                    gain,
                    bias,
                    groups,
                    eps,
                } => {
                    let (r, c) = (node.shape[0], node.shape[1]);
                    let m = c / groups;
                    let inv_m = T::from_f64(1.0 / m as f64);
                    let epst = T::from_f64(*eps);
                    let xv = &self.nodes[x.0].values;
                    let gv = &self.nodes[gain.0].values;
                    for i in 0..r {
                        for gr in 0..*groups {
                            let base = i * c + gr * m;
                            let chunk = &xv[base..base + m];
                            let mean = chunk.iter().fold(T::zero(), |a, &v| a + v) * inv_m;
                            let var = chunk
                                .iter()
                                .fold(T::zero(), |a, &v| a + (v - mean) * (v - mean))
                                * inv_m;
                            let inv_std = T::one() / (var + epst).sqrt();
                            // dxhat, plus its group means needed by the chain rule.
                            let mut mean_d = T::zero();
                            let mut mean_dx = T::zero();
                            let mut dxhat = vec![T::zero(); m];
                            for j in 0..m {
                                let ch = gr * m + j;
                                let xhat = (chunk[j] - mean) * inv_std;
                                let gy = g[i * c + ch];
                                by_node[gain.0][ch] = by_node[gain.0][ch] + gy * xhat;
                                by_node[bias.0][ch] = by_node[bias.0][ch] + gy;
                                let d = gy * gv[ch];
                                dxhat[j] = d;
                                mean_d = mean_d + d;
                                mean_dx = mean_dx + d * xhat;
                            }
                            mean_d = mean_d * inv_m;
                            mean_dx = mean_dx * inv_m;
                            for j in 0..m {
                                let xhat = (chunk[j] - mean) * inv_std;
                                let dx = (dxhat[j] - mean_d - xhat * mean_dx) * inv_std;
                                by_node[x.0][base + j] = by_node[x.0][base + j] + dx;
                            }
                        }
                    }
                }
                Op::ConvDepthwiseCausal { x, kernel } => {
                    let (t, d) = (node.shape[0], node.shape[1]);
                    let k = self.nodes[kernel.0].shape[0];
                    let xv = &self.nodes[x.0].values;
                    let kv = &self.nodes[kernel.0].values;
                    for ti in 0..t {
                        for tap in 0..k {
                            let offset = (k - 1) - tap;
                            if offset > ti {
                                continue;
                            }
                            let si = ti - offset;
                            for c in 0..d {
                                let gi = g[ti * d + c];
                                by_node[x.0][si * d + c] =
                                    by_node[x.0][si * d + c] + gi * kv[tap * d + c];
                                by_node[kernel.0][tap * d + c] =
                                    by_node[kernel.0][tap * d + c] + gi * xv[si * d + c];
                            }
                        }
                    }
                }
            }
            by_node[idx] = g;
        }
        Ok(Grads { by_node })
    }
}

fn sigmoid<T: Scalar>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}

fn zip_map<T: Scalar>(a: &[T], b: &[T], f: impl Fn(T, T) -> T) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn accumulate<T: Scalar>(dst: &mut [T], g: &[T], f: impl Fn(T) -> T) {
    for (d, &gi) in dst.iter_mut().zip(g) {
        *d = *d + f(gi);
    }
}
