//! Plain `key = value` run configuration with flag overrides.
//!
//! One [`RunConfig`] carries every knob any command can use; each command
//! reads the subset it needs. Values resolve in order: built-in defaults,
//! then the config file, then command-line flags (flags win). Unknown keys
//! are errors in both the file and the flags, so typos surface before any
//! work starts.

use std::path::PathBuf;

use crate::datagen::MixtureOptions;
use crate::features::FeatureConfig;
use crate::frontend::FrontendConfig;
use crate::layers::Variant;
use crate::trainer::{AdamConfig, TrainConfig};
use crate::{Error, Result};

/// Which synthetic task `gen-data` produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    /// Two spectrally disjoint noise classes, identity revealed by the
    /// context: the dataset behind the context-ablation experiments.
    Identity,
    /// Mixed procedural sources: harmonic/chirp speech over
    /// white/pink/AM/alternating noise.
    General,
}

impl std::str::FromStr for Task {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "identity" => Ok(Task::Identity),
            "general" => Ok(Task::General),
            other => Err(Error::Config(format!(
                "unknown task {other:?} (expected identity or general)"
            ))),
        }
    }
}

/// Every setting a command may consume. Architecture fields are optional:
/// unset ones fall back to the variant's published recipe (or, for
/// `grad-check`, to a tiny desk-scale model).
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub variant: Variant,
    pub d: Option<usize>,
    pub heads: Option<usize>,
    pub conv_kernel: Option<usize>,
    pub lookback: Option<usize>,
    pub feature_dim: Option<usize>,
    pub speech_layers: Option<usize>,
    pub noise_layers: Option<usize>,
    pub cross_layers: Option<usize>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,

    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
    pub val_fraction: f64,

    pub n_examples: usize,
    pub snrs: Vec<f64>,
    pub task: Task,
    pub utterance_seconds: f64,
    pub context_seconds: f64,

    pub manifest: Option<PathBuf>,
    pub val_manifest: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub context_wav: Option<PathBuf>,
    pub noisy_wav: Option<PathBuf>,

    pub identity_mask: bool,
    pub tolerance: f64,
    pub t_frames: usize,
    pub s_frames: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            variant: Variant::E3,
            d: None,
            heads: None,
            conv_kernel: None,
            lookback: None,
            feature_dim: None,
            speech_layers: None,
            noise_layers: None,
            cross_layers: None,
            alpha: None,
            beta: None,
            lr: 1e-3,
            batch: 4,
            epochs: 10,
            seed: 0,
            val_fraction: 0.1,
            n_examples: 20,
            snrs: vec![0.0],
            task: Task::Identity,
            utterance_seconds: 1.0,
            context_seconds: 6.0,
            manifest: None,
            val_manifest: None,
            out: None,
            checkpoint: None,
            context_wav: None,
            noisy_wav: None,
            identity_mask: false,
            tolerance: 1e-4,
            t_frames: 5,
            s_frames: 7,
        }
    }
}

/// Keys that take no value when used as a flag (`--identity-mask`).
pub const BOOLEAN_KEYS: &[&str] = &["identity_mask"];

impl RunConfig {
    /// Parse a config file over the defaults.
    pub fn from_file(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.merge_file(path)?;
        Ok(cfg)
    }

    /// Apply a config file's `key = value` lines. `#` starts a comment;
    /// blank lines are skipped.
    pub fn merge_file(&mut self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(i) => &raw[..i],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "{}:{}: expected key = value, got {line:?}",
                    path.display(),
                    lineno + 1
                ))
            })?;
            self.set(key.trim(), value.trim()).map_err(|e| {
                Error::Config(format!("{}:{}: {e}", path.display(), lineno + 1))
            })?;
        }
        Ok(())
    }

    /// Set one key from its textual value. Shared by the file parser and
    /// the flag parser so both accept exactly the same keys.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("bad value {value:?} for {key}")))
        }
        match key {
            "variant" => self.variant = value.parse()?,
            "d" => self.d = Some(num(key, value)?),
            "heads" => self.heads = Some(num(key, value)?),
            "conv_kernel" => self.conv_kernel = Some(num(key, value)?),
            "lookback" => self.lookback = Some(num(key, value)?),
            "feature_dim" => self.feature_dim = Some(num(key, value)?),
            "speech_layers" => self.speech_layers = Some(num(key, value)?),
            "noise_layers" => self.noise_layers = Some(num(key, value)?),
            "cross_layers" => self.cross_layers = Some(num(key, value)?),
            "alpha" => self.alpha = Some(num(key, value)?),
            "beta" => self.beta = Some(num(key, value)?),
            "lr" => self.lr = num(key, value)?,
            "batch" => self.batch = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "val_fraction" => self.val_fraction = num(key, value)?,
            "n_examples" => self.n_examples = num(key, value)?,
            "snrs" => {
                let parsed: Result<Vec<f64>> = value
                    .split(',')
                    .map(|s| num("snrs", s.trim()))
                    .collect();
                let parsed = parsed?;
                if parsed.is_empty() {
                    return Err(Error::Config("snrs must list at least one value".into()));
                }
                self.snrs = parsed;
            }
            "task" => self.task = value.parse()?,
            "utterance_seconds" => self.utterance_seconds = num(key, value)?,
            "context_seconds" => self.context_seconds = num(key, value)?,
            "manifest" => self.manifest = Some(value.into()),
            "val_manifest" => self.val_manifest = Some(value.into()),
            "out" => self.out = Some(value.into()),
            "checkpoint" => self.checkpoint = Some(value.into()),
            "context_wav" => self.context_wav = Some(value.into()),
            "noisy_wav" => self.noisy_wav = Some(value.into()),
            "identity_mask" => {
                self.identity_mask = match value {
                    "true" | "1" | "" => true,
                    "false" | "0" => false,
                    other => {
                        return Err(Error::Config(format!(
                            "bad value {other:?} for identity_mask"
                        )))
                    }
                }
            }
            "tolerance" => self.tolerance = num(key, value)?,
            "t_frames" => self.t_frames = num(key, value)?,
            "s_frames" => self.s_frames = num(key, value)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// The model architecture: the variant's published recipe with any
    /// explicitly set field overriding it.
    pub fn frontend_config(&self) -> FrontendConfig {
        let mut fc = FrontendConfig::for_variant(self.variant);
        self.apply_overrides(&mut fc);
        fc
    }

    /// Like [`RunConfig::frontend_config`], but unset fields fall back to
    /// a tiny desk-scale model instead of the full recipe — the right
    /// default for gradient checking.
    pub fn tiny_frontend_config(&self) -> FrontendConfig {
        let context = self.variant.uses_context();
        let mut fc = FrontendConfig {
            variant: self.variant,
            d: 8,
            heads: 2,
            conv_kernel: 3,
            lookback: 4,
            feature_dim: 128,
            speech_layers: 1,
            noise_layers: if context { 1 } else { 0 },
            cross_layers: if context { 1 } else { 0 },
            alpha: 0.5,
            beta: 0.01,
        };
        self.apply_overrides(&mut fc);
        fc
    }

    fn apply_overrides(&self, fc: &mut FrontendConfig) {
        if let Some(v) = self.d {
            fc.d = v;
        }
        if let Some(v) = self.heads {
            fc.heads = v;
        }
        if let Some(v) = self.conv_kernel {
            fc.conv_kernel = v;
        }
        if let Some(v) = self.lookback {
            fc.lookback = v;
        }
        if let Some(v) = self.feature_dim {
            fc.feature_dim = v;
        }
        if let Some(v) = self.speech_layers {
            fc.speech_layers = v;
        }
        if let Some(v) = self.noise_layers {
            fc.noise_layers = v;
        }
        if let Some(v) = self.cross_layers {
            fc.cross_layers = v;
        }
        if let Some(v) = self.alpha {
            fc.alpha = v;
        }
        if let Some(v) = self.beta {
            fc.beta = v;
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch,
            adam: AdamConfig {
                lr: self.lr,
                ..AdamConfig::default()
            },
            seed: self.seed,
            checkpoint_dir: self.out.clone(),
        }
    }

    pub fn mixture_options(&self) -> MixtureOptions {
        MixtureOptions {
            feature: FeatureConfig::default(),
            utterance_seconds: self.utterance_seconds,
            context_seconds: self.context_seconds,
        }
    }

    /// Fetch a required path, naming the key in the error.
    pub fn required(&self, key: &str) -> Result<PathBuf> {
        let value = match key {
            "manifest" => &self.manifest,
            "out" => &self.out,
            "checkpoint" => &self.checkpoint,
            "context_wav" => &self.context_wav,
            "noisy_wav" => &self.noisy_wav,
            other => return Err(Error::Config(format!("unknown required key {other:?}"))),
        };
        value
            .clone()
            .ok_or_else(|| Error::Config(format!("missing required setting: {key}")))
    }
}
