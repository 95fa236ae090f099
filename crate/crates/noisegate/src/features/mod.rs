//! Waveform → 128-dimensional log-Mel features.
//!
//! The same extractor (same window, hop, filterbank instance) is used for
//! the noisy utterance, the clean/noise references during data generation,
//! and the noise-only context — the model compares context frames against
//! utterance frames, so the two paths must live in the same feature space.
//!
//! The pipeline is `stft_power` → [`mel_project`] → [`log_compress`], all in
//! `f64`; the model casts to its own scalar type when features enter the
//! graph.

mod audio;
mod dump;
mod mel;
mod stft;

pub use audio::Waveform;
pub use dump::{read_feature_dump, write_feature_dump};
pub use mel::{
    hz_to_mel, log_compress, mel_project, mel_to_hz, FeatureConfig, FeatureExtractor,
    FeatureSequence,
};
pub use stft::{frame_count, hann_window, stft_power};
