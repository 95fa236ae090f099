//! The five reusable neural blocks: half-step feed-forward, convolution
//! module, multi-headed self-attention, multi-headed cross-attention, and
//! feature-wise linear modulation (FiLM).
//!
//! Blocks own their parameters as plain tensors. Running a block is a
//! two-step affair: [`bind_params`] records every parameter of a model into
//! a [`Graph`] once (so several forward passes — e.g. the examples of one
//! batch — share the same bound parameters), then `forward` looks bound
//! tensors up by name and records the block's computation. Residual
//! connections and half-step scaling belong to the layer that composes the
//! blocks, not to the blocks themselves.

use std::collections::HashMap;

use rand::Rng;

use crate::numerics::{AttnMask, Graph, Scalar, Tensor, TensorId};
use crate::{Error, Result};

/// Epsilon inside the square root of every layer/group normalization.
pub const LN_EPS: f64 = 1e-6;
/// Feed-forward inner width multiplier.
pub const FFN_EXPANSION: usize = 4;
/// Conv-module pointwise expansion feeding the GLU.
pub const CONV_EXPANSION: usize = 2;

/// Join a scope prefix and a component name: `"enc0" + "ffn" -> "enc0.ffn"`.
pub fn sub(scope: &str, part: &str) -> String {
    if scope.is_empty() {
        part.to_string()
    } else {
        format!("{scope}.{part}")
    }
}

/// Anything that owns named parameter tensors.
///
/// `visit` must enumerate every trainable tensor exactly once under a stable
/// name; the optimizer, the checkpoint format, and the gradient checker all
/// key off these names.
pub trait Params<T: Scalar> {
    fn visit<'a>(&'a self, scope: &str, f: &mut dyn FnMut(String, &'a Tensor<T>));
    fn visit_mut(&mut self, scope: &str, f: &mut dyn FnMut(String, &mut Tensor<T>));
}

/// Total number of trainable scalars in a model.
pub fn param_count<T: Scalar>(model: &impl Params<T>) -> usize {
    let mut n = 0;
    model.visit("", &mut |_, t| n += t.len());
    n
}

/// Sorted `(name, shape)` listing, handy for diffing two models.
pub fn param_names<T: Scalar>(model: &impl Params<T>) -> Vec<String> {
    let mut names = Vec::new();
    model.visit("", &mut |n, _| names.push(n));
    names.sort();
    names
}

/// Name → graph id for every parameter of a model, recorded once per graph.
pub struct ParamBinding {
    ids: HashMap<String, TensorId>,
}

impl ParamBinding {
    pub fn id(&self, name: &str) -> Result<TensorId> {
        self.ids
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownParam { name: name.into() })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn names(&self) -> Vec<&str> {
        let mut v: Vec<&str> = self.ids.keys().map(|s| s.as_str()).collect();
        v.sort();
        v
    }
}

/// Record every parameter of `model` into `g` under `scope` and return the
/// lookup table used by the forward passes.
pub fn bind_params<T: Scalar>(
    g: &mut Graph<T>,
    model: &impl Params<T>,
    scope: &str,
) -> Result<ParamBinding> {
    let mut pairs: Vec<(String, &Tensor<T>)> = Vec::new();
    model.visit(scope, &mut |name, t| pairs.push((name, t)));
    let mut ids = HashMap::with_capacity(pairs.len());
    for (name, t) in pairs {
        let id = g.param(name.clone(), t)?;
        ids.insert(name, id);
    }
    Ok(ParamBinding { ids })
}

/// `x @ w + b` with Xavier-uniform weight and zero bias at init.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine<T> {
    pub w: Tensor<T>,
    pub b: Tensor<T>,
}

impl<T: Scalar> Affine<T> {
    pub fn init(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        Affine {
            w: Tensor::xavier_uniform(fan_in, fan_out, rng),
            b: Tensor::zeros(&[fan_out]),
        }
    }

    pub fn forward(
        &self,
        g: &mut Graph<T>,
        p: &ParamBinding,
        scope: &str,
        x: TensorId,
    ) -> Result<TensorId> {
        let w = p.id(&sub(scope, "w"))?;
        let b = p.id(&sub(scope, "b"))?;
        g.affine(x, w, b)
    }
}

impl<T: Scalar> Params<T> for Affine<T> {
    fn visit<'a>(&'a self, scope: &str, f: &mut dyn FnMut(String, &'a Tensor<T>)) {
        f(sub(scope, "w"), &self.w);
        f(sub(scope, "b"), &self.b);
    }

    fn visit_mut(&mut self, scope: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        f(sub(scope, "w"), &mut self.w);
        f(sub(scope, "b"), &mut self.b);
    }
}

/// Gain/bias pair for a layer or group normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct NormParams<T> {
    pub gain: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> NormParams<T> {
    pub fn init(d: usize) -> Self {
        NormParams {
            gain: Tensor::ones(&[d]),
            bias: Tensor::zeros(&[d]),
        }
    }

    pub fn layer_norm(
        &self,
        g: &mut Graph<T>,
        p: &ParamBinding,
        scope: &str,
        x: TensorId,
    ) -> Result<TensorId> {
        let gain = p.id(&sub(scope, "gain"))?;
        let bias = p.id(&sub(scope, "bias"))?;
        g.layer_norm(x, gain, bias, LN_EPS)
    }

    pub fn group_norm(
        &self,
        g: &mut Graph<T>,
        p: &ParamBinding,
        scope: &str,
        x: TensorId,
        groups: usize,
    ) -> Result<TensorId> {
        let gain = p.id(&sub(scope, "gain"))?;
        let bias = p.id(&sub(scope, "bias"))?;
        g.group_norm(x, gain, bias, groups, LN_EPS)
    }
}

impl<T: Scalar> Params<T> for NormParams<T> {
    fn visit<'a>(&'a self, scope: &str, f: &mut dyn FnMut(String, &'a Tensor<T>)) {
        f(sub(scope, "gain"), &self.gain);
        f(sub(scope, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, scope: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        f(sub(scope, "gain"), &mut self.gain);
        f(sub(scope, "bias"), &mut self.bias);
    }
}

/// Feed-forward block: `layer_norm -> affine d->4d -> swish -> affine 4d->d`.
/// The conformer's half-step residual (`x + 0.5 * ffn(x)`) is applied by the
/// caller.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedForward<T> {
    pub norm: NormParams<T>,
    pub w1: Affine<T>,
    pub w2: Affine<T>,
}

impl<T: Scalar> FeedForward<T> {
    pub fn init(d: usize, rng: &mut impl Rng) -> Self {
        FeedForward {
            norm: NormParams::init(d),
            w1: Affine::init(d, FFN_EXPANSION * d, rng),
            w2: Affine::init(FFN_EXPANSION * d, d, rng),
        }
    }

    pub fn forward(
        &self,
        g: &mut Graph<T>,
        p: &ParamBinding,
        scope: &str,
        x: TensorId,
    ) -> Result<TensorId> {
        let h = self.norm.layer_norm(g, p, &sub(scope, "norm"), x)?;
        let h = self.w1.forward(g, p, &sub(scope, "w1"), h)?;
        let h = g.swish(h);
        self.w2.forward(g, p, &sub(scope, "w2"), h)
    }
}

impl<T: Scalar> Params<T> for FeedForward<T> {
    fn visit<'a>(&'a self, scope: &str, f: &mut dyn FnMut(String, &'a Tensor<T>)) {
        self.norm.visit(&sub(scope, "norm"), f);
        self.w1.visit(&sub(scope, "w1"), f);
        self.w2.visit(&sub(scope, "w2"), f);
    }

    fn visit_mut(&mut self, scope: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        self.norm.visit_mut(&sub(scope, "norm"), f);
        self.w1.visit_mut(&sub(scope, "w1"), f);
        self.w2.visit_mut(&sub(scope, "w2"), f);
    }
}

/// Convolution module: `layer_norm -> pointwise d->2d -> GLU -> causal
/// depthwise conv (kernel k) -> group_norm (1 group) -> swish -> pointwise
/// d->d`. Residual applied by the caller. Group statistics are per frame, so
/// the whole block is causal.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvModule<T> {
    pub norm: NormParams<T>,
    pub pw1: Affine<T>,
    pub kernel: Tensor<T>,
    pub kernel_bias: Tensor<T>,
    pub gnorm: NormParams<T>,
    pub pw2: Affine<T>,
}

impl<T: Scalar> ConvModule<T> {
    pub fn init(d: usize, kernel: usize, rng: &mut impl Rng) -> Self {
        ConvModule {
            norm: NormParams::init(d),
            pw1: Affine::init(d, CONV_EXPANSION * d, rng),
            kernel: Tensor::xavier_uniform(kernel, d, rng),
            kernel_bias: Tensor::zeros(&[d]),
            gnorm: NormParams::init(d),
            pw2: Affine::init(d, d, rng),
        }
    }

    pub fn forward(
        &self,
        g: &mut Graph<T>,
        p: &ParamBinding,
        scope: &str,
        x: TensorId,
    ) -> Result<TensorId> {
        let h = self.norm.layer_norm(g, p, &sub(scope, "norm"), x)?;
        let h = self.pw1.forward(g, p, &sub(scope, "pw1"), h)?;
        let h = g.glu(h)?;
        let kernel = p.id(&sub(scope, "kernel"))?;
        let kernel_bias = p.id(&sub(scope, "kernel_bias"))?;
        let h = g.conv1d_depthwise_causal(h, kernel)?;
        let h = g.add_bias(h, kernel_bias)?;
        let h = self.gnorm.group_norm(g, p, &sub(scope, "gnorm"), h, 1)?;
        let h = g.swish(h);
        self.pw2.forward(g, p, &sub(scope, "pw2"), h)
    }
}

impl<T: Scalar> Params<T> for ConvModule<T> {
    fn visit<'a>(&'a self, scope: &str, f: &mut dyn FnMut(String, &'a Tensor<T>)) {
        self.norm.visit(&sub(scope, "norm"), f);
        self.pw1.visit(&sub(scope, "pw1"), f);
        f(sub(scope, "kernel"), &self.kernel);
        f(sub(scope, "kernel_bias"), &self.kernel_bias);
        self.gnorm.visit(&sub(scope, "gnorm"), f);
        self.pw2.visit(&sub(scope, "pw2"), f);
    }

    fn visit_mut(&mut self, scope: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        self.norm.visit_mut(&sub(scope, "norm"), f);
        self.pw1.visit_mut(&sub(scope, "pw1"), f);
        f(sub(scope, "kernel"), &mut self.kernel);
        f(sub(scope, "kernel_bias"), &mut self.kernel_bias);
        self.gnorm.visit_mut(&sub(scope, "gnorm"), f);
        self.pw2.visit_mut(&sub(scope, "pw2"), f);
    }
}

/// Multi-headed scaled dot-product attention, shared by the self- and
/// cross-attention paths. Queries come from `q_src`, keys and values from
/// `kv_src`; per-head scale is `1/sqrt(d/heads)`; heads are concatenated and
/// passed through the output projection. No positional embedding of any
/// kind. Residual applied by the caller.
///
/// The key projection carries no bias: a bias on the keys adds the same
/// amount to every score in a softmax row, so it can never affect the
/// output and its gradient is identically zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Attention<T> {
    pub q: Affine<T>,
    pub k_w: Tensor<T>,
    pub v: Affine<T>,
    pub o: Affine<T>,
    pub heads: usize,
}

impl<T: Scalar> Attention<T> {
    pub fn init(d: usize, heads: usize, rng: &mut impl Rng) -> Result<Self> {
        if heads == 0 || d % heads != 0 {
            return Err(Error::Config(format!(
                "model dim {d} not divisible by {heads} heads"
            )));
        }
        Ok(Attention {
            q: Affine::init(d, d, rng),
            k_w: Tensor::xavier_uniform(d, d, rng),
            v: Affine::init(d, d, rng),
            o: Affine::init(d, d, rng),
            heads,
        })
    }

    /// Self-attention with a bounded causal lookback window: frame `t`
    /// attends to frames `[t - lookback, t]`. A frame always sees itself, so
    /// no row can end up fully masked.
    pub fn self_attend(
        &self,
        g: &mut Graph<T>,
        p: &ParamBinding,
        scope: &str,
        x: TensorId,
        lookback: usize,
    ) -> Result<TensorId> {
        let frames = g.shape(x)[0];
        let mask = AttnMask::causal_lookback(frames, lookback);
        self.attend(g, p, scope, x, x, Some(&mask))
    }

    /// Cross-attention: queries from `q_src` (length T), keys/values from
    /// `kv_src` (length S >= 1). When `mask` is `None`, every query sees all
    /// S rows — the right setting when `kv_src` wholly precedes the queries
    /// in time (a noise-only context). When `kv_src` is time-aligned with
    /// the queries, pass the same causal mask self-attention would use.
    pub fn attend(
        &self,
        g: &mut Graph<T>,
        p: &ParamBinding,
        scope: &str,
        q_src: TensorId,
        kv_src: TensorId,
        mask: Option<&AttnMask>,
    ) -> Result<TensorId> {
        if g.shape(kv_src)[0] == 0 {
            return Err(Error::EmptyContext);
        }
        let d = g.shape(q_src)[1];
        if g.shape(kv_src)[1] != d {
            return Err(Error::ShapeMismatch {
                op: "attention",
                left: g.shape(q_src).to_vec(),
                right: g.shape(kv_src).to_vec(),
            });
        }
        let dh = d / self.heads;
        let scale = T::from_f64(1.0 / (dh as f64).sqrt());

        let q = self.q.forward(g, p, &sub(scope, "q"), q_src)?;
        let k_w = p.id(&sub(scope, "k.w"))?;
        let k = g.matmul(kv_src, k_w)?;
        let v = self.v.forward(g, p, &sub(scope, "v"), kv_src)?;

        let mut head_outputs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = g.slice_cols(q, h * dh, dh)?;
            let kh = g.slice_cols(k, h * dh, dh)?;
            let vh = g.slice_cols(v, h * dh, dh)?;
            let kt = g.transpose(kh)?;
            let scores = g.matmul(qh, kt)?;
            let scores = g.scale(scores, scale);
            let probs = match mask {
                Some(m) => g.softmax_rows_masked(scores, m)?,
                None => g.softmax_rows(scores)?,
            };
            head_outputs.push(g.matmul(probs, vh)?);
        }
        let merged = g.concat_cols(&head_outputs)?;
        self.o.forward(g, p, &sub(scope, "o"), merged)
    }
}

impl<T: Scalar> Params<T> for Attention<T> {
    fn visit<'a>(&'a self, scope: &str, f: &mut dyn FnMut(String, &'a Tensor<T>)) {
        self.q.visit(&sub(scope, "q"), f);
        f(sub(scope, "k.w"), &self.k_w);
        self.v.visit(&sub(scope, "v"), f);
        self.o.visit(&sub(scope, "o"), f);
    }

    fn visit_mut(&mut self, scope: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        self.q.visit_mut(&sub(scope, "q"), f);
        f(sub(scope, "k.w"), &mut self.k_w);
        self.v.visit_mut(&sub(scope, "v"), f);
        self.o.visit_mut(&sub(scope, "o"), f);
    }
}

/// Feature-wise linear modulation: `film(x, y) = r(y) * x + h(y)` with `r`
/// and `h` independent per-frame affine maps. Note there is no residual —
/// the output replaces `x` entirely when the caller wants it to.
#[derive(Debug, Clone, PartialEq)]
pub struct Film<T> {
    pub r: Affine<T>,
    pub h: Affine<T>,
}

impl<T: Scalar> Film<T> {
    pub fn init(d: usize, rng: &mut impl Rng) -> Self {
        Film {
            r: Affine::init(d, d, rng),
            h: Affine::init(d, d, rng),
        }
    }

    /// Configure `r ≡ 1`, `h ≡ 0` so that `film(x, y) = x` exactly.
    pub fn set_identity(&mut self) {
        for v in self.r.w.data_mut() {
            *v = T::zero();
        }
        for v in self.r.b.data_mut() {
            *v = T::one();
        }
        for v in self.h.w.data_mut() {
            *v = T::zero();
        }
        for v in self.h.b.data_mut() {
            *v = T::zero();
        }
    }

    pub fn forward(
        &self,
        g: &mut Graph<T>,
        p: &ParamBinding,
        scope: &str,
        x: TensorId,
        y: TensorId,
    ) -> Result<TensorId> {
        let r = self.r.forward(g, p, &sub(scope, "r"), y)?;
        let h = self.h.forward(g, p, &sub(scope, "h"), y)?;
        let rx = g.mul(r, x)?;
        g.add(rx, h)
    }
}

impl<T: Scalar> Params<T> for Film<T> {
    fn visit<'a>(&'a self, scope: &str, f: &mut dyn FnMut(String, &'a Tensor<T>)) {
        self.r.visit(&sub(scope, "r"), f);
        self.h.visit(&sub(scope, "h"), f);
    }

    fn visit_mut(&mut self, scope: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        self.r.visit_mut(&sub(scope, "r"), f);
        self.h.visit_mut(&sub(scope, "h"), f);
    }
}
