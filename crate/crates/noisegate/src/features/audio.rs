use std::path::Path;

use crate::{Error, Result};

/// Mono audio in `[-1, 1]` at a known sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Audio("sample rate must be positive".into()));
        }
        for (i, &s) in samples.iter().enumerate() {
            if !s.is_finite() {
                return Err(Error::Audio(format!("non-finite sample at index {i}")));
            }
            if s.abs() > 1.0 {
                return Err(Error::Audio(format!(
                    "sample {i} out of range: {s} (must be in [-1, 1])"
                )));
            }
        }
        Ok(Waveform {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Read a mono 16-bit PCM WAV file.
    pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
        let path = path.as_ref();
        let mut reader = hound::WavReader::open(path)
            .map_err(|e| Error::Audio(format!("{}: {e}", path.display())))?;
        let spec = reader.spec();
        if spec.channels != 1 {
            return Err(Error::Audio(format!(
                "{}: expected mono, got {} channels",
                path.display(),
                spec.channels
            )));
        }
        if spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
            return Err(Error::Audio(format!(
                "{}: expected 16-bit PCM, got {}-bit {:?}",
                path.display(),
                spec.bits_per_sample,
                spec.sample_format
            )));
        }
        let samples: std::result::Result<Vec<i16>, _> = reader.samples::<i16>().collect();
        let samples =
            samples.map_err(|e| Error::Audio(format!("{}: {e}", path.display())))?;
        Waveform::new(
            samples.iter().map(|&s| s as f64 / 32768.0).collect(),
            spec.sample_rate,
        )
    }

    /// Write as mono 16-bit PCM WAV. Quantization is `round(s * 32768)`
    /// clamped to the i16 range, so already-quantized values round-trip
    /// exactly.
    pub fn write_wav(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: self.sample_rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut writer = hound::WavWriter::create(path, spec)
            .map_err(|e| Error::Audio(format!("{}: {e}", path.display())))?;
        for &s in &self.samples {
            let q = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
            writer
                .write_sample(q)
                .map_err(|e| Error::Audio(format!("{}: {e}", path.display())))?;
        }
        writer
            .finalize()
            .map_err(|e| Error::Audio(format!("{}: {e}", path.display())))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_and_non_finite() {
        assert!(Waveform::new(vec![0.0, 1.5], 16000).is_err());
        assert!(Waveform::new(vec![f64::NAN], 16000).is_err());
        assert!(Waveform::new(vec![0.0], 0).is_err());
        assert!(Waveform::new(vec![-1.0, 1.0], 16000).is_ok());
    }

    #[test]
    fn wav_roundtrip_is_exact_for_quantized_samples() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tone.wav");
        // Start from values already on the i16 grid so the trip is lossless.
        let samples: Vec<f64> = (0..1600)
            .map(|i| {
                let s = 0.4 * (2.0 * std::f64::consts::PI * 440.0 * i as f64 / 16000.0).sin();
                (s * 32768.0).round() / 32768.0
            })
            .collect();
        let w = Waveform::new(samples.clone(), 16000).unwrap();
        w.write_wav(&path).unwrap();
        let back = Waveform::read_wav(&path).unwrap();
        assert_eq!(back.sample_rate(), 16000);
        assert_eq!(back.samples(), &samples[..]);
    }

    #[test]
    fn read_rejects_missing_file() {
        let err = Waveform::read_wav("/nonexistent/nope.wav").unwrap_err();
        assert!(err.to_string().contains("nope.wav"));
    }
}
