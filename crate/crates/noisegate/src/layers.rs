//! Conformer layers and their cross-attention extension.
//!
//! A [`ConformerLayer`] composes the blocks in the order half-step FFN →
//! convolution module → self-attention → half-step FFN → final layer norm,
//! with a residual connection around every block (conv strictly before
//! attention). A [`CrossAttentionLayer`] runs the utterance and the noise
//! context through parallel FFN/conv branches, fuses them with
//! cross-attention (plus FiLM and a second cross-attention in the richer
//! variants), and finishes the same way.
//!
//! Every cross-attention layer allocates the parameters of *all* blocks
//! regardless of variant; the variant only selects the wiring, so the
//! leaner variants leave their unused parameters with exactly zero
//! gradients.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::blocks::{sub, Attention, ConvModule, FeedForward, Film, NormParams, ParamBinding, Params};
use crate::numerics::{AttnMask, Graph, Scalar, Tensor, TensorId};
use crate::{Error, Result};

/// Architecture variant. `E0` is the causal conformer baseline without a
/// noise-context branch; `E1`–`E3` add cross-attention context fusion of
/// increasing richness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    E0,
    E1,
    E2,
    E3,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::E0, Variant::E1, Variant::E2, Variant::E3];

    /// Variants whose layers consume a noise context.
    pub fn uses_context(self) -> bool {
        self != Variant::E0
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Variant::E0 => "E0",
            Variant::E1 => "E1",
            Variant::E2 => "E2",
            Variant::E3 => "E3",
        };
        f.write_str(s)
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "E0" | "e0" => Ok(Variant::E0),
            "E1" | "e1" => Ok(Variant::E1),
            "E2" | "e2" => Ok(Variant::E2),
            "E3" | "e3" => Ok(Variant::E3),
            other => Err(Error::Config(format!(
                "unknown variant {other:?} (expected E0, E1, E2 or E3)"
            ))),
        }
    }
}

/// Per-layer architecture constants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerConfig {
    /// Model dimension d.
    pub d: usize,
    /// Attention head count; must divide `d`.
    pub heads: usize,
    /// Depthwise conv kernel length (causal left padding of kernel−1).
    pub conv_kernel: usize,
    /// Self-attention lookback window in frames.
    pub lookback: usize,
}

impl Default for LayerConfig {
    fn default() -> Self {
        LayerConfig {
            d: 256,
            heads: 8,
            conv_kernel: 15,
            lookback: 64,
        }
    }
}

impl LayerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.heads == 0 || self.d % self.heads != 0 {
            return Err(Error::Config(format!(
                "model dim {} must be a positive multiple of head count {}",
                self.d, self.heads
            )));
        }
        if self.conv_kernel == 0 {
            return Err(Error::Config("conv kernel must be at least 1".into()));
        }
        Ok(())
    }
}

/// Causal conformer layer:
/// `x̃ = x + ½ffn₁(x); x′ = x̃ + conv(x̃); x″ = x′ + mhsa(x′);
///  y = layer_norm(x″ + ½ffn₂(x″))`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConformerLayer<T> {
    pub ffn1: FeedForward<T>,
    pub conv: ConvModule<T>,
    pub mhsa: Attention<T>,
    pub ffn2: FeedForward<T>,
    pub norm: NormParams<T>,
    pub lookback: usize,
}

impl<T: Scalar> ConformerLayer<T> {
    pub fn init(cfg: &LayerConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        Ok(ConformerLayer {
            ffn1: FeedForward::init(cfg.d, rng),
            conv: ConvModule::init(cfg.d, cfg.conv_kernel, rng),
            mhsa: Attention::init(cfg.d, cfg.heads, rng)?,
            ffn2: FeedForward::init(cfg.d, rng),
            norm: NormParams::init(cfg.d),
            lookback: cfg.lookback,
        })
    }

    pub fn forward(
        &self,
        g: &mut Graph<T>,
        p: &ParamBinding,
        scope: &str,
        x: TensorId,
    ) -> Result<TensorId> {
        let half = T::from_f64(0.5);
        let f1 = self.ffn1.forward(g, p, &sub(scope, "ffn1"), x)?;
        let f1 = g.scale(f1, half);
        let xt = g.add(x, f1)?;
        let c = self.conv.forward(g, p, &sub(scope, "conv"), xt)?;
        let xp = g.add(xt, c)?;
        let a = self.mhsa.self_attend(g, p, &sub(scope, "mhsa"), xp, self.lookback)?;
        let xpp = g.add(xp, a)?;
        let f2 = self.ffn2.forward(g, p, &sub(scope, "ffn2"), xpp)?;
        let f2 = g.scale(f2, half);
        let s = g.add(xpp, f2)?;
        self.norm.layer_norm(g, p, &sub(scope, "norm"), s)
    }
}

impl<T: Scalar> Params<T> for ConformerLayer<T> {
    fn visit<'a>(&'a self, scope: &str, f: &mut dyn FnMut(String, &'a Tensor<T>)) {
        self.ffn1.visit(&sub(scope, "ffn1"), f);
        self.conv.visit(&sub(scope, "conv"), f);
        self.mhsa.visit(&sub(scope, "mhsa"), f);
        self.ffn2.visit(&sub(scope, "ffn2"), f);
        self.norm.visit(&sub(scope, "norm"), f);
    }

    fn visit_mut(&mut self, scope: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        self.ffn1.visit_mut(&sub(scope, "ffn1"), f);
        self.conv.visit_mut(&sub(scope, "conv"), f);
        self.mhsa.visit_mut(&sub(scope, "mhsa"), f);
        self.ffn2.visit_mut(&sub(scope, "ffn2"), f);
        self.norm.visit_mut(&sub(scope, "norm"), f);
    }
}

/// Cross-attention conformer layer. The full wiring (variant `E3`):
///
/// ```text
/// x̃ = x + ½ffn₁(x)          ñ = n + ½ffn_n(n)
/// x′ = x̃ + conv(x̃)          n′ = ñ + conv_n(ñ)
/// x″ = x′ + mhca₁(x′, n′)            (full attention over the context)
/// x‴ = film(x′, x″) = r(x″)⊙x′ + h(x″)   (no residual)
/// x⁗ = x′ + mhca₂(x′, x‴)            (causal lookback mask: kv is
///                                     time-aligned with the queries)
/// y = layer_norm(x⁗ + ½ffn₂(x⁗))
/// ```
///
/// `E2` skips FiLM (`mhca₂` reads `x″`); `E1` also skips the second
/// cross-attention (`y` is computed from `x″`). The first cross-attention
/// is unmasked because the context wholly precedes the utterance; the
/// second one attends over features aligned with the utterance frames, so
/// it takes the same causal mask self-attention would.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossAttentionLayer<T> {
    pub variant: Variant,
    pub ffn1: FeedForward<T>,
    pub ffn_n: FeedForward<T>,
    pub conv: ConvModule<T>,
    pub conv_n: ConvModule<T>,
    pub mhca1: Attention<T>,
    pub film: Film<T>,
    pub mhca2: Attention<T>,
    pub ffn2: FeedForward<T>,
    pub norm: NormParams<T>,
    pub lookback: usize,
}

impl<T: Scalar> CrossAttentionLayer<T> {
    pub fn init(cfg: &LayerConfig, variant: Variant, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        if !variant.uses_context() {
            return Err(Error::Config(
                "variant E0 has no cross-attention layers".into(),
            ));
        }
        Ok(CrossAttentionLayer {
            variant,
            ffn1: FeedForward::init(cfg.d, rng),
            ffn_n: FeedForward::init(cfg.d, rng),
            conv: ConvModule::init(cfg.d, cfg.conv_kernel, rng),
            conv_n: ConvModule::init(cfg.d, cfg.conv_kernel, rng),
            mhca1: Attention::init(cfg.d, cfg.heads, rng)?,
            film: Film::init(cfg.d, rng),
            mhca2: Attention::init(cfg.d, cfg.heads, rng)?,
            ffn2: FeedForward::init(cfg.d, rng),
            norm: NormParams::init(cfg.d),
            lookback: cfg.lookback,
        })
    }

    /// `x`: utterance features `[T×d]`; `n`: encoded noise context `[S×d]`
    /// with `S ≥ 1`. Stacked layers all receive the same encoded context;
    /// the context branch inside a layer (`ñ`, `n′`) is layer-local.
    pub fn forward(
        &self,
        g: &mut Graph<T>,
        p: &ParamBinding,
        scope: &str,
        x: TensorId,
        n: TensorId,
    ) -> Result<TensorId> {
        let half = T::from_f64(0.5);
        let frames = g.shape(x)[0];

        let f1 = self.ffn1.forward(g, p, &sub(scope, "ffn1"), x)?;
        let f1 = g.scale(f1, half);
        let xt = g.add(x, f1)?;
        let fn1 = self.ffn_n.forward(g, p, &sub(scope, "ffn_n"), n)?;
        let fn1 = g.scale(fn1, half);
        let nt = g.add(n, fn1)?;

        let c = self.conv.forward(g, p, &sub(scope, "conv"), xt)?;
        let xp = g.add(xt, c)?;
        let cn = self.conv_n.forward(g, p, &sub(scope, "conv_n"), nt)?;
        let np = g.add(nt, cn)?;

        let a1 = self.mhca1.attend(g, p, &sub(scope, "mhca1"), xp, np, None)?;
        let xpp = g.add(xp, a1)?;

        let fused = match self.variant {
            Variant::E1 => xpp,
            Variant::E2 | Variant::E3 => {
                let kv = if self.variant == Variant::E3 {
                    self.film.forward(g, p, &sub(scope, "film"), xp, xpp)?
                } else {
                    xpp
                };
                let mask = AttnMask::causal_lookback(frames, self.lookback);
                let a2 = self
                    .mhca2
                    .attend(g, p, &sub(scope, "mhca2"), xp, kv, Some(&mask))?;
                g.add(xp, a2)?
            }
            Variant::E0 => unreachable!("rejected at init"),
        };

        let f2 = self.ffn2.forward(g, p, &sub(scope, "ffn2"), fused)?;
        let f2 = g.scale(f2, half);
        let s = g.add(fused, f2)?;
        self.norm.layer_norm(g, p, &sub(scope, "norm"), s)
    }
}

impl<T: Scalar> Params<T> for CrossAttentionLayer<T> {
    fn visit<'a>(&'a self, scope: &str, f: &mut dyn FnMut(String, &'a Tensor<T>)) {
        self.ffn1.visit(&sub(scope, "ffn1"), f);
        self.ffn_n.visit(&sub(scope, "ffn_n"), f);
        self.conv.visit(&sub(scope, "conv"), f);
        self.conv_n.visit(&sub(scope, "conv_n"), f);
        self.mhca1.visit(&sub(scope, "mhca1"), f);
        self.film.visit(&sub(scope, "film"), f);
        self.mhca2.visit(&sub(scope, "mhca2"), f);
        self.ffn2.visit(&sub(scope, "ffn2"), f);
        self.norm.visit(&sub(scope, "norm"), f);
    }

    fn visit_mut(&mut self, scope: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        self.ffn1.visit_mut(&sub(scope, "ffn1"), f);
        self.ffn_n.visit_mut(&sub(scope, "ffn_n"), f);
        self.conv.visit_mut(&sub(scope, "conv"), f);
        self.conv_n.visit_mut(&sub(scope, "conv_n"), f);
        self.mhca1.visit_mut(&sub(scope, "mhca1"), f);
        self.film.visit_mut(&sub(scope, "film"), f);
        self.mhca2.visit_mut(&sub(scope, "mhca2"), f);
        self.ffn2.visit_mut(&sub(scope, "ffn2"), f);
        self.norm.visit_mut(&sub(scope, "norm"), f);
    }
}
