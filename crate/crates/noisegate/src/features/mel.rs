use super::audio::Waveform;
use super::stft::{next_pow2, stft_power};
use crate::numerics::Tensor;
use crate::{Error, Result};

/// HTK Mel scale.
pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Feature-space constants. The analysis window is 32 ms with a 10 ms hop;
/// at 16 kHz that is a 512-sample window, 160-sample hop, and a 512-point
/// FFT (window length rounded up to the next power of two).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureConfig {
    pub sample_rate: u32,
    pub window_s: f64,
    pub hop_s: f64,
    pub n_mels: usize,
    pub fmin_hz: f64,
    pub fmax_hz: f64,
    pub mel_floor: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            sample_rate: 16_000,
            window_s: 0.032,
            hop_s: 0.010,
            n_mels: 128,
            fmin_hz: 125.0,
            fmax_hz: 7_500.0,
            mel_floor: 1e-3,
        }
    }
}

impl FeatureConfig {
    pub fn win_len(&self) -> usize {
        (self.window_s * self.sample_rate as f64).round() as usize
    }

    pub fn hop_len(&self) -> usize {
        (self.hop_s * self.sample_rate as f64).round() as usize
    }

    pub fn nfft(&self) -> usize {
        next_pow2(self.win_len())
    }

    pub fn n_bins(&self) -> usize {
        self.nfft() / 2 + 1
    }
}

/// A `[T, n_mels]` matrix of log-Mel values plus the frame-rate metadata
/// needed to interpret it.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub frames: Tensor<f64>,
    /// Hop between frames, seconds.
    pub hop: f64,
    /// Analysis window length, seconds.
    pub window: f64,
}

impl FeatureSequence {
    pub fn n_frames(&self) -> usize {
        self.frames.rows()
    }

    pub fn n_channels(&self) -> usize {
        self.frames.cols()
    }
}

/// Mel projection: `power [T, F] . fb [F, n_mels]`. Filter weights are
/// non-negative, so non-negative power stays non-negative.
pub fn mel_project(power: &Tensor<f64>, fb: &Tensor<f64>) -> Result<Tensor<f64>> {
    power.matmul(fb)
}

/// `ln(max(mel, floor))`, the compression applied to every feature the model
/// sees. Monotone, bounded below by `ln(floor)`.
pub fn log_compress(mel: &Tensor<f64>, floor: f64) -> Tensor<f64> {
    let data = mel.data().iter().map(|&v| v.max(floor).ln()).collect();
    Tensor::new(mel.shape().to_vec(), data).expect("shape preserved")
}

/// Waveform → log-Mel features, holding the filterbank so that every signal
/// in one experiment (utterance, references, noise context) shares the exact
/// same feature space.
#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    config: FeatureConfig,
    filterbank: Tensor<f64>, // [n_bins, n_mels]
    centers_hz: Vec<f64>,
}

impl FeatureExtractor {
    pub fn new(config: FeatureConfig) -> Result<Self> {
        if config.fmin_hz <= 0.0
            || config.fmax_hz <= config.fmin_hz
            || config.fmax_hz > config.sample_rate as f64 / 2.0
        {
            return Err(Error::Config(format!(
                "mel range {}..{} Hz invalid for sample rate {}",
                config.fmin_hz, config.fmax_hz, config.sample_rate
            )));
        }
        if config.n_mels == 0 || config.mel_floor <= 0.0 {
            return Err(Error::Config(
                "need at least one mel channel and a positive floor".into(),
            ));
        }
        let (filterbank, centers_hz) = build_filterbank(&config);
        Ok(FeatureExtractor {
            config,
            filterbank,
            centers_hz,
        })
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.config
    }

    /// `[n_bins, n_mels]` triangular filter weights.
    pub fn filterbank(&self) -> &Tensor<f64> {
        &self.filterbank
    }

    /// Center frequency of filter `i` in Hz.
    pub fn filter_center_hz(&self, i: usize) -> f64 {
        self.centers_hz[i]
    }

    fn check_rate(&self, w: &Waveform) -> Result<()> {
        if w.sample_rate() != self.config.sample_rate {
            return Err(Error::Audio(format!(
                "expected {} Hz audio, got {} Hz (resampling is out of scope)",
                self.config.sample_rate,
                w.sample_rate()
            )));
        }
        Ok(())
    }

    /// Mel *power* (pre-log), the domain in which masks are defined and the
    /// ideal ratio mask is computed.
    pub fn mel_power(&self, w: &Waveform) -> Result<Tensor<f64>> {
        self.check_rate(w)?;
        let power = stft_power(
            w,
            self.config.win_len(),
            self.config.hop_len(),
            self.config.nfft(),
        )?;
        mel_project(&power, &self.filterbank)
    }

    /// Full pipeline: STFT power → Mel projection → log compression.
    pub fn extract(&self, w: &Waveform) -> Result<FeatureSequence> {
        let mel = self.mel_power(w)?;
        Ok(FeatureSequence {
            frames: log_compress(&mel, self.config.mel_floor),
            hop: self.config.hop_s,
            window: self.config.window_s,
        })
    }
}

/// Triangular filters with unit peak, linear in Mel (HTK convention):
/// `n_mels + 2` points equally spaced on the Mel axis between `fmin` and
/// `fmax`; filter `i` rises over `(p[i], p[i+1]]` and falls over
/// `[p[i+1], p[i+2])`.
///
/// At this resolution (128 filters over 125–7500 Hz against a 512-point FFT)
/// the lowest filters are only ~1 bin wide and filter 0's open support
/// contains no FFT bin at all — its response is identically zero and the log
/// floor covers it downstream. That is inherent to the pinned constants, not
/// a bug; tests probing tone responses use filters away from the bottom edge.
fn build_filterbank(config: &FeatureConfig) -> (Tensor<f64>, Vec<f64>) {
    let n_bins = config.n_bins();
    let nfft = config.nfft();
    let n_mels = config.n_mels;
    let mel_lo = hz_to_mel(config.fmin_hz);
    let mel_hi = hz_to_mel(config.fmax_hz);
    let step = (mel_hi - mel_lo) / (n_mels + 1) as f64;
    let points: Vec<f64> = (0..n_mels + 2).map(|k| mel_lo + step * k as f64).collect();
    let centers_hz = (0..n_mels).map(|i| mel_to_hz(points[i + 1])).collect();

    let mut fb = Tensor::zeros(&[n_bins, n_mels]);
    let bin_hz = config.sample_rate as f64 / nfft as f64;
    for bin in 0..n_bins {
        let m = hz_to_mel(bin as f64 * bin_hz);
        for i in 0..n_mels {
            let (left, center, right) = (points[i], points[i + 1], points[i + 2]);
            let w = if m > left && m <= center {
                (m - left) / (center - left)
            } else if m > center && m < right {
                (right - m) / (right - center)
            } else {
                0.0
            };
            fb.data_mut()[bin * n_mels + i] = w;
        }
    }
    (fb, centers_hz)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, amp: f64, seconds: f64) -> Waveform {
        let rate = 16000u32;
        let n = (seconds * rate as f64) as usize;
        let samples = (0..n)
            .map(|i| amp * (2.0 * std::f64::consts::PI * freq * i as f64 / rate as f64).sin())
            .collect();
        Waveform::new(samples, rate).unwrap()
    }

    #[test]
    fn mel_scale_roundtrip_and_known_point() {
        // 1000 Hz is 2595*log10(1 + 1000/700) mel; check the closed form and
        // the inverse.
        let m = hz_to_mel(1000.0);
        assert!((m - 2595.0 * (1.0f64 + 1000.0 / 700.0).log10()).abs() < 1e-12);
        assert!((mel_to_hz(m) - 1000.0).abs() < 1e-9);
        assert_eq!(hz_to_mel(0.0), 0.0);
    }

    #[test]
    fn filterbank_column_sums_match_independent_triangles() {
        // Oracle: rebuild each filter as an explicit triangle over the mel
        // axis and sum it over the FFT bin frequencies.
        let config = FeatureConfig::default();
        let fx = FeatureExtractor::new(config.clone()).unwrap();
        let fb = fx.filterbank();
        let mel_lo = hz_to_mel(config.fmin_hz);
        let mel_hi = hz_to_mel(config.fmax_hz);
        let step = (mel_hi - mel_lo) / 129.0;
        let tri = |m: f64, i: usize| -> f64 {
            let left = mel_lo + step * i as f64;
            let center = left + step;
            let right = center + step;
            if m > left && m <= center {
                (m - left) / (center - left)
            } else if m > center && m < right {
                (right - m) / (right - center)
            } else {
                0.0
            }
        };
        for i in 0..128 {
            let mut want = 0.0;
            for bin in 0..257 {
                want += tri(hz_to_mel(bin as f64 * 31.25), i);
            }
            let got: f64 = (0..257).map(|bin| fb.data()[bin * 128 + i]).sum();
            assert!(
                (got - want).abs() < 1e-10,
                "filter {i}: column sum {got} vs triangle sum {want}"
            );
        }
    }

    #[test]
    fn filterbank_is_nonnegative_with_unit_peak_cap() {
        let fx = FeatureExtractor::new(FeatureConfig::default()).unwrap();
        assert_eq!(fx.filterbank().shape(), &[257, 128]);
        assert!(fx.filterbank().data().iter().all(|&w| (0.0..=1.0).contains(&w)));
    }

    #[test]
    fn tone_response_peaks_at_nearest_filter() {
        let fx = FeatureExtractor::new(FeatureConfig::default()).unwrap();
        // Filters near the bottom edge are narrower than one FFT bin; probe
        // across the usable range instead.
        for i in [40usize, 56, 72, 88, 104, 120] {
            let tone = sine(fx.filter_center_hz(i), 0.5, 0.2);
            let mel = fx.mel_power(&tone).unwrap();
            // Sum over frames, argmax over channels.
            let mut per_filter = vec![0.0f64; 128];
            for t in 0..mel.rows() {
                for c in 0..128 {
                    per_filter[c] += mel.data()[t * 128 + c];
                }
            }
            assert!(per_filter[i] > 0.0, "filter {i} saw no energy");
            let argmax = per_filter
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            assert_eq!(argmax, i, "tone at center of filter {i} peaked at {argmax}");
        }
    }

    #[test]
    fn zero_power_projects_to_zero_mel_and_floors_in_log() {
        let fx = FeatureExtractor::new(FeatureConfig::default()).unwrap();
        let w = Waveform::new(vec![0.0; 16000], 16000).unwrap();
        let mel = fx.mel_power(&w).unwrap();
        assert!(mel.data().iter().all(|&v| v == 0.0));
        let fs = fx.extract(&w).unwrap();
        let floor = 1e-3f64.ln();
        assert!(fs.frames.data().iter().all(|&v| (v - floor).abs() < 1e-12));
        assert!((floor - (-6.9078)).abs() < 1e-4);
    }

    #[test]
    fn log_compress_known_values() {
        let mel = Tensor::new(vec![1, 3], vec![0.0, 1.0, std::f64::consts::E]).unwrap();
        let out = log_compress(&mel, 1e-3);
        assert!((out.data()[0] - 1e-3f64.ln()).abs() < 1e-12);
        assert!(out.data()[1].abs() < 1e-12);
        assert!((out.data()[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn expected_frame_counts_for_one_and_six_seconds() {
        let fx = FeatureExtractor::new(FeatureConfig::default()).unwrap();
        let one_s = sine(440.0, 0.1, 1.0);
        let six_s = sine(440.0, 0.1, 6.0);
        assert_eq!(fx.extract(&one_s).unwrap().n_frames(), 97);
        assert_eq!(fx.extract(&six_s).unwrap().n_frames(), 597);
        assert_eq!(fx.extract(&one_s).unwrap().n_channels(), 128);
    }

    #[test]
    fn extraction_is_deterministic_and_rate_checked() {
        let fx = FeatureExtractor::new(FeatureConfig::default()).unwrap();
        let w = sine(700.0, 0.3, 0.5);
        let a = fx.extract(&w).unwrap();
        let b = fx.extract(&w).unwrap();
        assert_eq!(a, b);

        let wrong_rate = Waveform::new(vec![0.0; 8000], 8000).unwrap();
        let err = fx.extract(&wrong_rate).unwrap_err();
        assert!(err.to_string().contains("8000"), "got: {err}");
    }

    #[test]
    fn every_log_mel_value_is_at_least_the_floor() {
        let fx = FeatureExtractor::new(FeatureConfig::default()).unwrap();
        let w = sine(1234.0, 0.7, 0.8);
        let fs = fx.extract(&w).unwrap();
        let floor = 1e-3f64.ln();
        assert!(fs.frames.data().iter().all(|&v| v >= floor - 1e-12));
    }
}
