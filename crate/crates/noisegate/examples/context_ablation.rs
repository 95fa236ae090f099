//! Does the noise-only context actually help? Train a context model (E3)
//! and a no-context model (E0) of matched depth on the context-identity
//! task and compare validation loss and SNR improvement.
//!
//! ```text
//! cargo run --example context_ablation [seed]
//! ```
//!
//! The task: noise is one of two spectrally disjoint tone classes, chosen
//! per example by coin flip, and the class is only knowable early from the
//! noise-only context. The context model reads the class there; the
//! no-context model has to guess until the noise overlaps speech.

use noisegate::datagen::{identity_task_dataset, LoadedExample, MixtureOptions};
use noisegate::features::{log_compress, FeatureExtractor};
use noisegate::frontend::{Frontend, FrontendConfig};
use noisegate::layers::Variant;
use noisegate::trainer::{train, AdamConfig, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn arch(variant: Variant) -> FrontendConfig {
    let context = variant.uses_context();
    FrontendConfig {
        variant,
        d: 32,
        heads: 4,
        conv_kernel: 7,
        lookback: 64,
        feature_dim: 128,
        // Matched utterance-path depth: 2 conformer + 2 cross layers
        // against 4 conformer layers.
        speech_layers: if context { 2 } else { 4 },
        noise_layers: if context { 2 } else { 0 },
        cross_layers: if context { 2 } else { 0 },
        alpha: 0.5,
        beta: 0.01,
    }
}

fn main() -> noisegate::Result<()> {
    let arg = |i: usize, default: f64| -> f64 {
        std::env::args()
            .nth(i)
            .map(|s| s.parse().expect("numeric argument"))
            .unwrap_or(default)
    };
    let seed = arg(1, 101.0) as u64;
    let epochs = arg(2, 12.0) as usize;
    let batch = arg(3, 8.0) as usize;
    let lr = arg(4, 3e-3);
    let opts = MixtureOptions {
        utterance_seconds: 1.0,
        context_seconds: 2.0,
        ..MixtureOptions::default()
    };
    let extractor = FeatureExtractor::new(opts.feature.clone())?;
    let floor = extractor.config().mel_floor;
    let (n_train, n_val) = (30, 10);

    println!("synthesizing {} examples (seed {seed})...", n_train + n_val);
    let data = identity_task_dataset(seed, n_train + n_val, &opts)?;
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
    let (train_set, val_set) = set.split_at(n_train);

    // Reference points for the SNRi meter: the oracle mask's weight and
    // the all-pass weight (exactly 0 dB by construction).
    let oracle: f64 = val_set
        .iter()
        .map(|ex| {
            let w = noisegate::frontend::mask_weight(&ex.irm, 0.5, 0.01);
            noisegate::trainer::snr_improvement(&w, &ex.clean_mel, &ex.noise_mel).unwrap()
        })
        .sum::<f64>()
        / val_set.len() as f64;
    println!("oracle-mask val SNRi {oracle:+.2} dB");

    let mut results = Vec::new();
    for variant in [Variant::E3, Variant::E0] {
        println!("\n--- {variant} ---");
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA11C);
        let mut model = Frontend::<f64>::init(arch(variant), &mut rng)?;
        let config = TrainConfig {
            epochs,
            batch_size: batch,
            adam: AdamConfig {
                lr,
                ..AdamConfig::default()
            },
            seed,
            ..TrainConfig::default()
        };
        let (report, _) = train(&mut model, train_set, val_set, &config, |e| {
            println!("{}", e.log_line());
        })?;
        let best = report.best_epoch.expect("epochs > 0");
        let at_best = &report.epochs[best - 1];
        results.push((variant, at_best.val_loss, at_best.val_snri_db));
    }

    println!("\nbest-epoch validation metrics:");
    for (variant, loss, snri) in &results {
        println!("  {variant}: loss {loss:10.2}  SNRi {snri:+.2} dB");
    }
    let (_, e3_loss, e3_snri) = results[0];
    let (_, e0_loss, e0_snri) = results[1];
    println!(
        "\ncontext advantage: loss x{:.2} lower, SNRi {:+.2} dB",
        e0_loss / e3_loss,
        e3_snri - e0_snri
    );
    Ok(())
}
