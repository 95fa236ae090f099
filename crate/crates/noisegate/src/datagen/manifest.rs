//! On-disk dataset layout: WAVs, Mel power dumps, and a tab-separated
//! manifest with one record per line:
//!
//! ```text
//! id <TAB> context.wav <TAB> noisy.wav <TAB> clean.fseq <TAB> noise.fseq <TAB> snr_db
//! ```
//!
//! Paths are stored relative to the manifest file. Audio is mono 16-bit
//! PCM; the aligned clean/noise Mel power spectra go into feature dumps so
//! training never has to re-mix.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::MixtureExample;
use crate::features::{
    log_compress, read_feature_dump, write_feature_dump, FeatureConfig, FeatureExtractor,
    FeatureSequence, Waveform,
};
use crate::frontend::compute_irm;
use crate::numerics::Tensor;
use crate::{Error, Result};

pub const MANIFEST_NAME: &str = "manifest.tsv";

/// One manifest record, with paths resolved against the manifest location.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub id: String,
    pub context_wav: PathBuf,
    pub noisy_wav: PathBuf,
    pub clean_mel: PathBuf,
    pub noise_mel: PathBuf,
    pub snr_db: f64,
}

/// Write `examples` into `dir` (created if missing) and return the path of
/// the manifest that indexes them.
pub fn write_dataset(
    dir: impl AsRef<Path>,
    examples: &[MixtureExample],
    feature: &FeatureConfig,
) -> Result<PathBuf> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = String::new();
    for (i, ex) in examples.iter().enumerate() {
        let id = format!("ex{i:04}");
        let context = format!("{id}.context.wav");
        let noisy = format!("{id}.noisy.wav");
        let clean = format!("{id}.clean.fseq");
        let noise = format!("{id}.noise.fseq");
        ex.context_wave.write_wav(dir.join(&context))?;
        ex.noisy_wave.write_wav(dir.join(&noisy))?;
        let wrap = |frames: &Tensor<f64>| FeatureSequence {
            frames: frames.clone(),
            hop: feature.hop_s,
            window: feature.window_s,
        };
        write_feature_dump(dir.join(&clean), &wrap(&ex.clean_mel))?;
        write_feature_dump(dir.join(&noise), &wrap(&ex.noise_mel))?;
        // f64 Display prints the shortest string that parses back to the
        // same value, so the SNR survives the text round trip exactly.
        writeln!(
            manifest,
            "{id}\t{context}\t{noisy}\t{clean}\t{noise}\t{}",
            ex.snr_db
        )
        .expect("write to String cannot fail");
    }
    let path = dir.join(MANIFEST_NAME);
    std::fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Parse a manifest, resolving relative paths against its directory.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 6 {
            return Err(Error::Dataset(format!(
                "{}:{}: expected 6 tab-separated fields, found {}",
                path.display(),
                lineno + 1,
                fields.len()
            )));
        }
        let snr_db: f64 = fields[5].parse().map_err(|_| {
            Error::Dataset(format!(
                "{}:{}: bad SNR value {:?}",
                path.display(),
                lineno + 1,
                fields[5]
            ))
        })?;
        out.push(ManifestEntry {
            id: fields[0].to_string(),
            context_wav: base.join(fields[1]),
            noisy_wav: base.join(fields[2]),
            clean_mel: base.join(fields[3]),
            noise_mel: base.join(fields[4]),
            snr_db,
        });
    }
    Ok(out)
}

/// A manifest entry pulled into memory and featurized, ready for the
/// model: log-Mel inputs, Mel power spectra for mask application and SNR
/// accounting, and the mask target.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedExample {
    pub id: String,
    /// Log-Mel of the mixture — the model input.
    pub noisy_logmel: Tensor<f64>,
    /// Log-Mel of the noise-only context — the conditioning input.
    pub context_logmel: Tensor<f64>,
    /// Mel power of the mixture, for applying estimated masks.
    pub noisy_mel: Tensor<f64>,
    /// Aligned Mel power of the clean speech.
    pub clean_mel: Tensor<f64>,
    /// Aligned Mel power of the scaled noise.
    pub noise_mel: Tensor<f64>,
    /// Mask target recomputed from the stored component spectra.
    pub irm: Tensor<f64>,
    pub snr_db: f64,
}

/// Load one entry: decode both WAVs, featurize them, read the component
/// spectra, and rebuild the mask target.
pub fn load_example(entry: &ManifestEntry, extractor: &FeatureExtractor) -> Result<LoadedExample> {
    let noisy_wave = Waveform::read_wav(&entry.noisy_wav)?;
    let context_wave = Waveform::read_wav(&entry.context_wav)?;
    let noisy_mel = extractor.mel_power(&noisy_wave)?;
    let floor = extractor.config().mel_floor;
    let noisy_logmel = log_compress(&noisy_mel, floor);
    let context_logmel = log_compress(&extractor.mel_power(&context_wave)?, floor);
    let clean_mel = read_feature_dump(&entry.clean_mel)?.frames;
    let noise_mel = read_feature_dump(&entry.noise_mel)?.frames;
    for (name, mel) in [("clean", &clean_mel), ("noise", &noise_mel)] {
        if mel.shape() != noisy_mel.shape() {
            return Err(Error::Dataset(format!(
                "{}: {name} spectrum is {:?} but the mixture featurizes to {:?}",
                entry.id,
                mel.shape(),
                noisy_mel.shape()
            )));
        }
    }
    let irm = compute_irm(&clean_mel, &noise_mel)?;
    Ok(LoadedExample {
        id: entry.id.clone(),
        noisy_logmel,
        context_logmel,
        noisy_mel,
        clean_mel,
        noise_mel,
        irm,
        snr_db: entry.snr_db,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{make_example, MixtureOptions, SourceKind, SourceSpec};

    fn two_examples(opts: &MixtureOptions) -> Vec<MixtureExample> {
        let speech = SourceSpec::new(
            SourceKind::HarmonicTone {
                f0_range: (150.0, 220.0),
                partials: 5,
                level_spread_db: 0.0,
            },
            30,
        );
        vec![
            make_example(&speech, &SourceSpec::new(SourceKind::White, 31), 4.0, opts).unwrap(),
            make_example(&speech, &SourceSpec::new(SourceKind::Pink, 32), -3.25, opts).unwrap(),
        ]
    }

    fn short_opts() -> MixtureOptions {
        MixtureOptions {
            utterance_seconds: 0.3,
            context_seconds: 0.5,
            ..MixtureOptions::default()
        }
    }

    #[test]
    fn dataset_round_trips_through_manifest_and_loader() {
        let dir = tempfile::tempdir().unwrap();
        let opts = short_opts();
        let examples = two_examples(&opts);
        let manifest = write_dataset(dir.path(), &examples, &opts.feature).unwrap();
        assert_eq!(manifest, dir.path().join(MANIFEST_NAME));

        let entries = read_manifest(&manifest).unwrap();
        assert_eq!(entries.len(), 2);
        assert_eq!(entries[0].id, "ex0000");
        assert_eq!(entries[1].id, "ex0001");
        assert_eq!(entries[0].snr_db, 4.0);
        assert_eq!(entries[1].snr_db, -3.25);

        let extractor = FeatureExtractor::new(opts.feature.clone()).unwrap();
        for (entry, ex) in entries.iter().zip(&examples) {
            let loaded = load_example(entry, &extractor).unwrap();
            assert_eq!(loaded.noisy_logmel.shape(), ex.irm.shape());
            assert_eq!(loaded.context_logmel.cols(), ex.irm.cols());
            // Dumps pass through f32, so the reloaded spectra and the mask
            // rebuilt from them sit within single-precision rounding.
            let worst = loaded
                .irm
                .data()
                .iter()
                .zip(ex.irm.data())
                .map(|(&a, &b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            assert!(worst < 1e-5, "IRM drifted {worst} through the dump");
            // The loader featurizes the quantized WAV, so the log-Mel input
            // must match what the extractor reports for that same file.
            let from_disk = Waveform::read_wav(&entry.noisy_wav).unwrap();
            let expect = extractor.extract(&from_disk).unwrap().frames;
            assert_eq!(loaded.noisy_logmel, expect);
        }
    }

    #[test]
    fn malformed_manifests_are_rejected_with_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(MANIFEST_NAME);

        std::fs::write(&path, "ex0000\tonly\tfour\tfields\t1.0\n").unwrap();
        let err = read_manifest(&path).unwrap_err().to_string();
        assert!(err.contains(":1:"), "missing line number: {err}");

        std::fs::write(
            &path,
            "ex0000\ta.wav\tb.wav\tc.fseq\td.fseq\t0.0\nex0001\ta.wav\tb.wav\tc.fseq\td.fseq\tloud\n",
        )
        .unwrap();
        let err = read_manifest(&path).unwrap_err().to_string();
        assert!(err.contains(":2:") && err.contains("loud"), "{err}");
    }

    #[test]
    fn blank_lines_are_ignored_and_paths_resolve_relative_to_the_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let sub = dir.path().join("data");
        std::fs::create_dir_all(&sub).unwrap();
        let path = sub.join(MANIFEST_NAME);
        std::fs::write(&path, "\nex0000\ta.wav\tb.wav\tc.fseq\td.fseq\t0.5\n\n").unwrap();
        let entries = read_manifest(&path).unwrap();
        assert_eq!(entries.len(), 1);
        assert_eq!(entries[0].context_wav, sub.join("a.wav"));
    }

    #[test]
    fn loading_with_missing_files_names_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let entry = ManifestEntry {
            id: "ex0000".into(),
            context_wav: dir.path().join("gone.context.wav"),
            noisy_wav: dir.path().join("gone.noisy.wav"),
            clean_mel: dir.path().join("gone.clean.fseq"),
            noise_mel: dir.path().join("gone.noise.fseq"),
            snr_db: 0.0,
        };
        let extractor = FeatureExtractor::new(FeatureConfig::default()).unwrap();
        let err = load_example(&entry, &extractor).unwrap_err().to_string();
        assert!(err.contains("gone.noisy.wav"), "{err}");
    }
}
