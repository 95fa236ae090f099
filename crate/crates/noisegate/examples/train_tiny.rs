//! Train a tiny context-conditioned model in memory and watch the loss.
//!
//! ```text
//! cargo run --example train_tiny
//! ```
//!
//! Synthesizes a handful of context-identity examples, trains a small E3
//! model for a few epochs, and prints one log line per epoch.

use noisegate::datagen::{identity_task_dataset, LoadedExample, MixtureOptions};
use noisegate::features::{log_compress, FeatureExtractor};
use noisegate::frontend::{Frontend, FrontendConfig};
use noisegate::layers::Variant;
use noisegate::trainer::{train, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> noisegate::Result<()> {
    let opts = MixtureOptions {
        utterance_seconds: 0.5,
        context_seconds: 1.0,
        ..MixtureOptions::default()
    };
    let extractor = FeatureExtractor::new(opts.feature.clone())?;
    let floor = extractor.config().mel_floor;

    // Twelve examples, featurized in memory: last four held out.
    let data = identity_task_dataset(5, 12, &opts)?;
    let set: Vec<LoadedExample> = data
        .iter()
        .enumerate()
        .map(|(i, lx)| {
            let ex = &lx.example;
            let noisy_mel = extractor.mel_power(&ex.noisy_wave)?;
            Ok(LoadedExample {
                id: format!("ex{i}"),
                noisy_logmel: log_compress(&noisy_mel, floor),
                context_logmel: log_compress(&extractor.mel_power(&ex.context_wave)?, floor),
                noisy_mel,
                clean_mel: ex.clean_mel.clone(),
                noise_mel: ex.noise_mel.clone(),
                irm: ex.irm.clone(),
                snr_db: ex.snr_db,
            })
        })
        .collect::<noisegate::Result<_>>()?;
    let (train_set, val_set) = set.split_at(8);

    let config = FrontendConfig {
        variant: Variant::E3,
        d: 16,
        heads: 2,
        conv_kernel: 3,
        lookback: 16,
        feature_dim: 128,
        speech_layers: 1,
        noise_layers: 1,
        cross_layers: 1,
        alpha: 0.5,
        beta: 0.01,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut model = Frontend::<f64>::init(config, &mut rng)?;

    let train_config = TrainConfig {
        epochs: 5,
        batch_size: 4,
        seed: 0,
        ..TrainConfig::default()
    };
    println!(
        "training E3 (d={}, {} examples) for {} epochs...",
        config.d,
        train_set.len(),
        train_config.epochs
    );
    let (report, _best) = train(&mut model, train_set, val_set, &train_config, |epoch| {
        println!("{}", epoch.log_line());
    })?;

    let best = report.best_epoch.expect("ran at least one epoch");
    println!(
        "best epoch {} with validation loss {:.4}",
        best, report.best_val_loss
    );
    Ok(())
}
