//! # noisegate
//!
//! Speech enhancement that listens to the room before it listens to you.
//!
//! The model estimates a time-frequency soft mask for a noisy utterance,
//! conditioned on a noise-only *context* segment captured just before the
//! utterance starts. Conformer layers handle the utterance; cross-attention
//! conformer layers fold in the context. Everything runs on a small dense
//! tensor engine with reverse-mode autodiff written in this crate.
//!
//! Start with the runnable examples:
//!
//! ```text
//! cargo run --example extract_features
//! cargo run --example check_gradients
//! cargo run --example synthesize_dataset
//! cargo run --example train_tiny
//! cargo run --example enhance_one
//! cargo run --example context_ablation
//! ```

pub mod blocks;
pub mod cli;
pub mod config;
pub mod datagen;
pub mod features;
pub mod frontend;
pub mod layers;
pub mod numerics;
pub mod trainer;

#[cfg(test)]
pub(crate) mod testsupport;

mod error;

pub use error::{Error, Result};
