//! The end-to-end enhancement model: input projections, speech / noise /
//! cross-attention encoders, and a sigmoid mask head, plus the ideal-ratio-
//! mask target, the training loss, and inference-time mask application.
//!
//! The model estimates a per-bin mask over log-Mel features. Training
//! minimizes the summed `ℓ1 + ℓ2` distance to the ideal ratio mask computed
//! from parallel speech/noise Mel power; at inference the (scaled, floored)
//! mask multiplies the noisy Mel power before log compression.

mod checkpoint;

pub use checkpoint::{ArchiveScalar, CheckpointArchive};

use rand::Rng;

use crate::blocks::{sub, Affine, ParamBinding, Params};
use crate::features::log_compress;
use crate::layers::{ConformerLayer, CrossAttentionLayer, LayerConfig, Variant};
use crate::numerics::{Graph, Scalar, Tensor, TensorId};
use crate::{Error, Result};

/// Bins below this total power count as double silence; the mask target
/// there is an arbitrary constant (0.5) rather than a 0/0 ratio.
pub const SILENCE_EPS: f64 = 1e-8;

/// Model architecture and masking constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrontendConfig {
    pub variant: Variant,
    /// Model dimension of the conformer layers.
    pub d: usize,
    pub heads: usize,
    pub conv_kernel: usize,
    pub lookback: usize,
    /// Input/output feature channels (the Mel bin count).
    pub feature_dim: usize,
    /// Conformer layers in the speech encoder.
    pub speech_layers: usize,
    /// Conformer layers in the noise-context encoder (context variants).
    pub noise_layers: usize,
    /// Stacked cross-attention layers (context variants).
    pub cross_layers: usize,
    /// Mask scaling exponent in `max(M̂, β)^α`.
    pub alpha: f64,
    /// Mask floor in `max(M̂, β)^α`.
    pub beta: f64,
}

impl FrontendConfig {
    /// The published recipe for each variant: `E0` is a 4-layer, d=512
    /// causal conformer; `E1`–`E3` pair 2-layer speech and noise encoders
    /// with 2 cross-attention layers at d=256.
    pub fn for_variant(variant: Variant) -> Self {
        let (d, speech, noise, cross) = match variant {
            Variant::E0 => (512, 4, 0, 0),
            _ => (256, 2, 2, 2),
        };
        FrontendConfig {
            variant,
            d,
            heads: 8,
            conv_kernel: 15,
            lookback: 64,
            feature_dim: 128,
            speech_layers: speech,
            noise_layers: noise,
            cross_layers: cross,
            alpha: 0.5,
            beta: 0.01,
        }
    }

    pub fn layer_config(&self) -> LayerConfig {
        LayerConfig {
            d: self.d,
            heads: self.heads,
            conv_kernel: self.conv_kernel,
            lookback: self.lookback,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.layer_config().validate()?;
        if self.feature_dim == 0 {
            return Err(Error::Config("feature_dim must be positive".into()));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::Config(format!(
                "alpha must be in (0, 1], got {}",
                self.alpha
            )));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::Config(format!(
                "beta must be in (0, 1), got {}",
                self.beta
            )));
        }
        if self.speech_layers == 0 {
            return Err(Error::Config("speech encoder needs at least one layer".into()));
        }
        if self.variant.uses_context() {
            if self.noise_layers == 0 || self.cross_layers == 0 {
                return Err(Error::Config(format!(
                    "variant {} needs noise and cross-attention layers",
                    self.variant
                )));
            }
        } else if self.noise_layers != 0 || self.cross_layers != 0 {
            return Err(Error::Config(
                "variant E0 takes no noise or cross-attention layers".into(),
            ));
        }
        Ok(())
    }
}

/// The enhancement model. Construction draws Xavier-uniform weights from
/// the supplied RNG; biases start at zero and norm gains at one.
#[derive(Debug, Clone, PartialEq)]
pub struct Frontend<T> {
    pub config: FrontendConfig,
    pub in_proj: Affine<T>,
    pub noise_proj: Option<Affine<T>>,
    pub speech_layers: Vec<ConformerLayer<T>>,
    pub noise_layers: Vec<ConformerLayer<T>>,
    pub cross_layers: Vec<CrossAttentionLayer<T>>,
    pub mask_head: Affine<T>,
}

impl<T: Scalar> Frontend<T> {
    pub fn init(config: FrontendConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let lc = config.layer_config();
        let in_proj = Affine::init(config.feature_dim, config.d, rng);
        let noise_proj = if config.variant.uses_context() {
            Some(Affine::init(config.feature_dim, config.d, rng))
        } else {
            None
        };
        let mut speech_layers = Vec::with_capacity(config.speech_layers);
        for _ in 0..config.speech_layers {
            speech_layers.push(ConformerLayer::init(&lc, rng)?);
        }
        let mut noise_layers = Vec::with_capacity(config.noise_layers);
        for _ in 0..config.noise_layers {
            noise_layers.push(ConformerLayer::init(&lc, rng)?);
        }
        let mut cross_layers = Vec::with_capacity(config.cross_layers);
        for _ in 0..config.cross_layers {
            cross_layers.push(CrossAttentionLayer::init(&lc, config.variant, rng)?);
        }
        let mask_head = Affine::init(config.d, config.feature_dim, rng);
        Ok(Frontend {
            config,
            in_proj,
            noise_proj,
            speech_layers,
            noise_layers,
            cross_layers,
            mask_head,
        })
    }

    /// Record the mask-estimation forward pass. `noisy` is `[T×F]` log-Mel
    /// features; `context`, required exactly when the variant uses one, is
    /// `[S×F]` log-Mel features of the noise-only context. Returns the
    /// `[T×F]` mask estimate, every value strictly inside (0, 1).
    pub fn forward(
        &self,
        g: &mut Graph<T>,
        p: &ParamBinding,
        noisy: TensorId,
        context: Option<TensorId>,
    ) -> Result<TensorId> {
        let mut h = self.in_proj.forward(g, p, "in_proj", noisy)?;
        for (i, layer) in self.speech_layers.iter().enumerate() {
            h = layer.forward(g, p, &format!("speech.{i}"), h)?;
        }
        if self.config.variant.uses_context() {
            let ctx = context.ok_or_else(|| {
                Error::Config(format!(
                    "variant {} requires a noise context",
                    self.config.variant
                ))
            })?;
            let noise_proj = self.noise_proj.as_ref().expect("context variant");
            let mut n = noise_proj.forward(g, p, "noise_proj", ctx)?;
            for (i, layer) in self.noise_layers.iter().enumerate() {
                n = layer.forward(g, p, &format!("noise.{i}"), n)?;
            }
            // Every cross layer consumes the same encoded context.
            for (i, layer) in self.cross_layers.iter().enumerate() {
                h = layer.forward(g, p, &format!("cross.{i}"), h, n)?;
            }
        } else if context.is_some() {
            return Err(Error::Config(
                "variant E0 takes no noise context".into(),
            ));
        }
        let m = self.mask_head.forward(g, p, "mask_head", h)?;
        Ok(g.sigmoid(m))
    }

    /// Training loss between a mask estimate and its target, summed over
    /// every time-frequency bin: `Σ |target−est| + (target−est)²`.
    pub fn mask_loss(
        &self,
        g: &mut Graph<T>,
        est: TensorId,
        target: TensorId,
    ) -> Result<TensorId> {
        let diff = g.sub(est, target)?;
        let l1 = g.abs(diff);
        let l2 = g.square(diff);
        let per_bin = g.add(l1, l2)?;
        Ok(g.sum(per_bin))
    }

    /// One forward + loss pass outside any training loop: convenience for
    /// evaluation. Returns the scalar loss value.
    pub fn loss_value(
        &self,
        noisy: &Tensor<T>,
        context: Option<&Tensor<T>>,
        target: &Tensor<T>,
    ) -> Result<f64> {
        let mut g = Graph::new();
        let p = crate::blocks::bind_params(&mut g, self, "")?;
        let ni = g.input(noisy);
        let ci = context.map(|c| g.input(c));
        let est = self.forward(&mut g, &p, ni, ci)?;
        let ti = g.input(target);
        let loss = self.mask_loss(&mut g, est, ti)?;
        Ok(g.values(loss)[0].to_f64())
    }

    /// Run inference on plain tensors and return the mask estimate.
    pub fn estimate_mask(
        &self,
        noisy: &Tensor<T>,
        context: Option<&Tensor<T>>,
    ) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let p = crate::blocks::bind_params(&mut g, self, "")?;
        let ni = g.input(noisy);
        let ci = context.map(|c| g.input(c));
        let est = self.forward(&mut g, &p, ni, ci)?;
        Ok(g.to_tensor(est))
    }
}

impl<T: ArchiveScalar> Frontend<T> {
    /// Copy every parameter into `archive` under `param.<name>`, in native
    /// precision (bit-exact round trip).
    pub fn save_params(&self, archive: &mut CheckpointArchive) {
        self.visit("", &mut |name, t| {
            archive.insert(format!("param.{name}"), T::wrap(t.clone()));
        });
    }

    /// Restore every parameter from `archive`; fails if any entry is
    /// missing, the wrong precision, or the wrong shape.
    pub fn load_params(&mut self, archive: &CheckpointArchive) -> Result<()> {
        let mut failure = None;
        self.visit_mut("", &mut |name, t| {
            if failure.is_some() {
                return;
            }
            match archive.get::<T>(&format!("param.{name}")) {
                Ok(stored) if stored.shape() == t.shape() => *t = stored.clone(),
                Ok(stored) => {
                    failure = Some(Error::Checkpoint(format!(
                        "parameter {name}: stored shape {:?} does not match model shape {:?}",
                        stored.shape(),
                        t.shape()
                    )));
                }
                Err(e) => failure = Some(e),
            }
        });
        match failure {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }

    /// Package the model as a self-describing archive: every parameter
    /// under `param.*` plus the architecture under `meta.*`, so
    /// [`Frontend::from_archive`] can rebuild the model without outside
    /// knowledge of its configuration.
    pub fn to_archive(&self) -> CheckpointArchive {
        let mut archive = CheckpointArchive::new();
        let c = &self.config;
        let variant_index = Variant::ALL
            .iter()
            .position(|&v| v == c.variant)
            .expect("variant is one of ALL") as f64;
        archive.insert_scalar("meta.variant", variant_index);
        archive.insert_scalar("meta.d", c.d as f64);
        archive.insert_scalar("meta.heads", c.heads as f64);
        archive.insert_scalar("meta.conv_kernel", c.conv_kernel as f64);
        archive.insert_scalar("meta.lookback", c.lookback as f64);
        archive.insert_scalar("meta.feature_dim", c.feature_dim as f64);
        archive.insert_scalar("meta.speech_layers", c.speech_layers as f64);
        archive.insert_scalar("meta.noise_layers", c.noise_layers as f64);
        archive.insert_scalar("meta.cross_layers", c.cross_layers as f64);
        archive.insert_scalar("meta.alpha", c.alpha);
        archive.insert_scalar("meta.beta", c.beta);
        self.save_params(&mut archive);
        archive
    }

    /// Rebuild a model from a self-describing archive written by
    /// [`Frontend::to_archive`].
    pub fn from_archive(archive: &CheckpointArchive) -> Result<Self> {
        let scalar = |name: &str| archive.scalar(name);
        let index = |name: &str| -> Result<usize> {
            let v = scalar(name)?;
            if v < 0.0 || v.fract() != 0.0 {
                return Err(Error::Checkpoint(format!(
                    "{name} must be a non-negative integer, got {v}"
                )));
            }
            Ok(v as usize)
        };
        let variant_index = index("meta.variant")?;
        let variant = *Variant::ALL.get(variant_index).ok_or_else(|| {
            Error::Checkpoint(format!("unknown variant index {variant_index}"))
        })?;
        let config = FrontendConfig {
            variant,
            d: index("meta.d")?,
            heads: index("meta.heads")?,
            conv_kernel: index("meta.conv_kernel")?,
            lookback: index("meta.lookback")?,
            feature_dim: index("meta.feature_dim")?,
            speech_layers: index("meta.speech_layers")?,
            noise_layers: index("meta.noise_layers")?,
            cross_layers: index("meta.cross_layers")?,
            alpha: scalar("meta.alpha")?,
            beta: scalar("meta.beta")?,
        };
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut model = Frontend::init(config, &mut rng)?;
        model.load_params(archive)?;
        Ok(model)
    }
}

impl<T: Scalar> Params<T> for Frontend<T> {
    fn visit<'a>(&'a self, scope: &str, f: &mut dyn FnMut(String, &'a Tensor<T>)) {
        self.in_proj.visit(&sub(scope, "in_proj"), f);
        if let Some(np) = &self.noise_proj {
            np.visit(&sub(scope, "noise_proj"), f);
        }
        for (i, layer) in self.speech_layers.iter().enumerate() {
            layer.visit(&sub(scope, &format!("speech.{i}")), f);
        }
        for (i, layer) in self.noise_layers.iter().enumerate() {
            layer.visit(&sub(scope, &format!("noise.{i}")), f);
        }
        for (i, layer) in self.cross_layers.iter().enumerate() {
            layer.visit(&sub(scope, &format!("cross.{i}")), f);
        }
        self.mask_head.visit(&sub(scope, "mask_head"), f);
    }

    fn visit_mut(&mut self, scope: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        self.in_proj.visit_mut(&sub(scope, "in_proj"), f);
        if let Some(np) = &mut self.noise_proj {
            np.visit_mut(&sub(scope, "noise_proj"), f);
        }
        for (i, layer) in self.speech_layers.iter_mut().enumerate() {
            layer.visit_mut(&sub(scope, &format!("speech.{i}")), f);
        }
        for (i, layer) in self.noise_layers.iter_mut().enumerate() {
            layer.visit_mut(&sub(scope, &format!("noise.{i}")), f);
        }
        for (i, layer) in self.cross_layers.iter_mut().enumerate() {
            layer.visit_mut(&sub(scope, &format!("cross.{i}")), f);
        }
        self.mask_head.visit_mut(&sub(scope, "mask_head"), f);
    }
}

/// Total trainable scalar count for a configuration. Deterministic: weights
/// are materialized (cheaply, in f32) and counted, so the number can never
/// drift from what a real model would train.
pub fn count_parameters(config: &FrontendConfig) -> Result<usize> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let model = Frontend::<f32>::init(*config, &mut rng)?;
    Ok(crate::blocks::param_count(&model))
}

/// Ideal ratio mask from parallel Mel power spectra: `X/(X+N)` per bin,
/// defined as 0.5 where both signals are silent (`X+N < 1e-8`).
pub fn compute_irm(speech_mel: &Tensor<f64>, noise_mel: &Tensor<f64>) -> Result<Tensor<f64>> {
    if speech_mel.shape() != noise_mel.shape() {
        return Err(Error::ShapeMismatch {
            op: "compute_irm",
            left: speech_mel.shape().to_vec(),
            right: noise_mel.shape().to_vec(),
        });
    }
    if speech_mel.data().iter().any(|&v| v < 0.0) || noise_mel.data().iter().any(|&v| v < 0.0) {
        return Err(Error::Dataset(
            "compute_irm requires non-negative Mel power".into(),
        ));
    }
    let data = speech_mel
        .data()
        .iter()
        .zip(noise_mel.data())
        .map(|(&x, &n)| {
            let total = x + n;
            if total < SILENCE_EPS {
                0.5
            } else {
                x / total
            }
        })
        .collect();
    Tensor::new(speech_mel.shape().to_vec(), data)
}

/// The per-bin power weight a mask estimate applies at inference:
/// `max(M̂, β)^α`. Flooring keeps some noise rather than distort speech;
/// the exponent softens the suppression.
pub fn mask_weight(est: &Tensor<f64>, alpha: f64, beta: f64) -> Tensor<f64> {
    let data = est.data().iter().map(|&m| m.max(beta).powf(alpha)).collect();
    Tensor::new(est.shape().to_vec(), data).expect("same shape as input")
}

/// Apply an estimated mask at inference: `X̂ = noisy_mel ⊙ max(M̂, β)^α`,
/// then log compression with the same floor the feature extractor uses.
/// Output is enhanced log-Mel, ready for a downstream recognizer.
pub fn apply_mask(
    noisy_mel: &Tensor<f64>,
    est: &Tensor<f64>,
    alpha: f64,
    beta: f64,
    mel_floor: f64,
) -> Result<Tensor<f64>> {
    if noisy_mel.shape() != est.shape() {
        return Err(Error::ShapeMismatch {
            op: "apply_mask",
            left: noisy_mel.shape().to_vec(),
            right: est.shape().to_vec(),
        });
    }
    let weight = mask_weight(est, alpha, beta);
    let data: Vec<f64> = noisy_mel
        .data()
        .iter()
        .zip(weight.data())
        .map(|(&p, &w)| p * w)
        .collect();
    let masked = Tensor::new(noisy_mel.shape().to_vec(), data)?;
    Ok(log_compress(&masked, mel_floor))
}
