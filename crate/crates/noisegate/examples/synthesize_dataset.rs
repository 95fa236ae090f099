//! Synthesize a small SNR-controlled dataset on disk and read it back.
//!
//! ```text
//! cargo run --example synthesize_dataset
//! ```
//!
//! Writes WAVs, component spectra, and a manifest under
//! `target/examples/dataset/`, then reloads one entry through the manifest
//! to show the round trip.

use noisegate::datagen::{
    make_example, read_manifest, write_dataset, MixtureOptions, SourceKind, SourceSpec,
};
use noisegate::features::FeatureExtractor;

fn main() -> noisegate::Result<()> {
    let opts = MixtureOptions {
        utterance_seconds: 1.0,
        context_seconds: 2.0,
        ..MixtureOptions::default()
    };

    // Three mixes of the same harmonic "speech" at different SNRs, each
    // over a fresh noise realization with a matching noise-only context.
    let speech = SourceSpec::new(
        SourceKind::HarmonicTone {
            f0_range: (150.0, 250.0),
            partials: 6,
            level_spread_db: 0.0,
        },
        11,
    );
    let noises = [
        SourceSpec::new(SourceKind::White, 21),
        SourceSpec::new(SourceKind::Pink, 22),
        SourceSpec::new(
            SourceKind::AmTone {
                carrier_range: (800.0, 2000.0),
                am_hz: 2.0,
                depth: 0.6,
            },
            23,
        ),
    ];
    let mut examples = Vec::new();
    for (noise, snr_db) in noises.iter().zip([-5.0, 0.0, 5.0]) {
        examples.push(make_example(&speech, noise, snr_db, &opts)?);
    }

    let dir = "target/examples/dataset";
    let manifest = write_dataset(dir, &examples, &opts.feature)?;
    println!("wrote {} examples under {dir}/", examples.len());

    let entries = read_manifest(&manifest)?;
    let extractor = FeatureExtractor::new(opts.feature.clone())?;
    println!("manifest lists {} entries:", entries.len());
    for entry in &entries {
        let ex = noisegate::datagen::load_example(entry, &extractor)?;
        println!(
            "  {}  snr {:+.1} dB  mixture {} frames x {} bands  mean mask target {:.3}",
            ex.id,
            ex.snr_db,
            ex.noisy_logmel.rows(),
            ex.noisy_logmel.cols(),
            ex.irm.data().iter().sum::<f64>() / ex.irm.len() as f64
        );
    }
    Ok(())
}
