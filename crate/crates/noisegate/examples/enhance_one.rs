//! Run the full inference path on one example: estimate a mask, apply it,
//! and measure the SNR improvement against the oracle spectra.
//!
//! ```text
//! cargo run --example enhance_one
//! ```
//!
//! Trains a tiny model for a few epochs first so the mask does something,
//! then enhances a held-out example and writes the enhanced log-Mel
//! features as a feature dump.

use noisegate::datagen::{identity_task_dataset, LoadedExample, MixtureOptions};
use noisegate::features::{
    log_compress, write_feature_dump, FeatureExtractor, FeatureSequence,
};
use noisegate::frontend::{apply_mask, mask_weight, Frontend, FrontendConfig};
use noisegate::layers::Variant;
use noisegate::trainer::{estimate_mask_f64, snr_improvement, train, TrainConfig};
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

    let data = identity_task_dataset(13, 9, &opts)?;
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
    let (train_set, rest) = set.split_at(8);
    let target = &rest[0];

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
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut model = Frontend::<f64>::init(config, &mut rng)?;
    let train_config = TrainConfig {
        epochs: 4,
        batch_size: 4,
        seed: 3,
        ..TrainConfig::default()
    };
    println!("warming up a tiny E3 model ({} epochs)...", train_config.epochs);
    train(&mut model, train_set, &rest[..1], &train_config, |e| {
        println!("{}", e.log_line());
    })?;

    // Inference: mask from log-Mel inputs, applied to the mixture's Mel
    // power, then log-compressed for a downstream consumer.
    let mask = estimate_mask_f64(&model, target)?;
    let enhanced = apply_mask(&target.noisy_mel, &mask, config.alpha, config.beta, floor)?;
    let weight = mask_weight(&mask, config.alpha, config.beta);
    let snri = snr_improvement(&weight, &target.clean_mel, &target.noise_mel)?;

    let (lo, hi) = mask
        .data()
        .iter()
        .fold((1.0f64, 0.0f64), |(lo, hi), &m| (lo.min(m), hi.max(m)));
    println!(
        "\nenhanced {} ({} frames x {} bands) at input SNR {:+.1} dB",
        target.id,
        enhanced.rows(),
        enhanced.cols(),
        target.snr_db
    );
    println!("mask range [{lo:.3}, {hi:.3}], SNR improvement {snri:+.2} dB");

    let out = "target/examples/enhanced.fseq";
    std::fs::create_dir_all("target/examples")
        .map_err(|e| noisegate::Error::io("target/examples", e))?;
    write_feature_dump(
        out,
        &FeatureSequence {
            frames: enhanced,
            hop: opts.feature.hop_s,
            window: opts.feature.window_s,
        },
    )?;
    println!("wrote enhanced features to {out}");
    Ok(())
}
