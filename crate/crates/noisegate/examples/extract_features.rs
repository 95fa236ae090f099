//! Featurize a synthetic tone and show where its energy lands in the
//! log-Mel spectrogram.
//!
//! ```text
//! cargo run --example extract_features
//! ```

use noisegate::datagen::{SourceKind, SourceSpec};
use noisegate::features::{mel_to_hz, hz_to_mel, FeatureConfig, FeatureExtractor};

fn main() -> noisegate::Result<()> {
    let config = FeatureConfig::default();
    let extractor = FeatureExtractor::new(config.clone())?;

    // One second of a 440 Hz harmonic tone with a handful of partials.
    let spec = SourceSpec::new(
        SourceKind::HarmonicTone {
            f0_range: (440.0, 440.0),
            partials: 4,
            level_spread_db: 0.0,
        },
        7,
    );
    let wave = spec.render(config.sample_rate as usize, config.sample_rate)?;
    let features = extractor.extract(&wave)?;

    println!(
        "input: {} samples at {} Hz ({:.2} s)",
        wave.len(),
        config.sample_rate,
        wave.len() as f64 / config.sample_rate as f64
    );
    println!(
        "features: {} frames x {} Mel bands (window {:.0} ms, hop {:.0} ms)",
        features.n_frames(),
        features.frames.cols(),
        features.window * 1e3,
        features.hop * 1e3
    );

    // Band centers are spaced evenly on the Mel scale between fmin and fmax.
    let band_center = |b: usize| {
        let lo = hz_to_mel(config.fmin_hz);
        let hi = hz_to_mel(config.fmax_hz);
        let step = (hi - lo) / (config.n_mels + 1) as f64;
        mel_to_hz(lo + step * (b + 1) as f64)
    };

    // Average the log-Mel energy over time and list the hottest bands; they
    // should sit on the tone's partials at 440/880/1320/1760 Hz.
    let t = features.n_frames();
    let mut mean = vec![0.0f64; config.n_mels];
    for r in 0..t {
        for (b, m) in mean.iter_mut().enumerate() {
            *m += features.frames.row(r)[b] / t as f64;
        }
    }
    let mut order: Vec<usize> = (0..config.n_mels).collect();
    order.sort_by(|&a, &b| mean[b].total_cmp(&mean[a]));

    println!("\nhottest Mel bands (time-averaged log power):");
    for &b in order.iter().take(8) {
        println!(
            "  band {b:3}  center {:7.1} Hz  mean log power {:+.2}",
            band_center(b),
            mean[b]
        );
    }
    Ok(())
}
