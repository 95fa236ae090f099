use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::Waveform;
use crate::numerics::Tensor;
use crate::{Error, Result};

/// Periodic Hann window: `0.5 - 0.5 cos(2*pi*n / len)`.
pub fn hann_window(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / len as f64).cos())
        .collect()
}

/// Number of analysis frames for `n_samples` with the given window and hop:
/// `1 + floor((n - win) / hop)`. `None` if the signal is shorter than one
/// window.
pub fn frame_count(n_samples: usize, win_len: usize, hop_len: usize) -> Option<usize> {
    if n_samples < win_len {
        None
    } else {
        Some(1 + (n_samples - win_len) / hop_len)
    }
}

/// Short-time power spectrum: Hann-windowed frames, squared FFT magnitudes.
/// Output is `[T, nfft/2 + 1]`. `nfft >= win_len`; the windowed frame is
/// zero-padded up to `nfft`.
pub fn stft_power(
    w: &Waveform,
    win_len: usize,
    hop_len: usize,
    nfft: usize,
) -> Result<Tensor<f64>> {
    let n = w.len();
    let frames = frame_count(n, win_len, hop_len).ok_or_else(|| {
        Error::Audio(format!(
            "waveform too short for analysis: {n} samples, window is {win_len}"
        ))
    })?;
    debug_assert!(nfft >= win_len);
    let window = hann_window(win_len);
    let bins = nfft / 2 + 1;
    let fft = FftPlanner::<f64>::new().plan_fft_forward(nfft);
    let mut scratch = vec![Complex::default(); fft.get_inplace_scratch_len()];
    let mut buf = vec![Complex::default(); nfft];
    let samples = w.samples();

    let mut out = Vec::with_capacity(frames * bins);
    for t in 0..frames {
        let start = t * hop_len;
        for i in 0..nfft {
            let v = if i < win_len {
                samples[start + i] * window[i]
            } else {
                0.0
            };
            buf[i] = Complex::new(v, 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        out.extend(buf[..bins].iter().map(|c| c.norm_sqr()));
    }
    Tensor::new(vec![frames, bins], out)
}

/// Smallest power of two `>= n`.
pub(crate) fn next_pow2(n: usize) -> usize {
    n.next_power_of_two()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, amp: f64, seconds: f64, rate: u32) -> Waveform {
        let n = (seconds * rate as f64) as usize;
        let samples = (0..n)
            .map(|i| amp * (2.0 * std::f64::consts::PI * freq * i as f64 / rate as f64).sin())
            .collect();
        Waveform::new(samples, rate).unwrap()
    }

    #[test]
    fn frame_counts_match_framing_formula() {
        assert_eq!(frame_count(16000, 512, 160), Some(97));
        assert_eq!(frame_count(96000, 512, 160), Some(597));
        assert_eq!(frame_count(512, 512, 160), Some(1));
        assert_eq!(frame_count(511, 512, 160), None);
    }

    #[test]
    fn zero_waveform_gives_zero_power() {
        let w = Waveform::new(vec![0.0; 2000], 16000).unwrap();
        let p = stft_power(&w, 512, 160, 512).unwrap();
        assert_eq!(p.shape(), &[10, 257]);
        assert!(p.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn too_short_waveform_is_an_error() {
        let w = Waveform::new(vec![0.1; 100], 16000).unwrap();
        let err = stft_power(&w, 512, 160, 512).unwrap_err();
        assert!(err.to_string().contains("100 samples"), "got: {err}");
    }

    #[test]
    fn sine_power_matches_direct_dft_and_peaks_at_expected_bin() {
        // 1 kHz at 16 kHz with nfft = 512 lands exactly on bin
        // 1000 * 512 / 16000 = 32. The oracle recomputes frame 0 by direct
        // DFT summation, sharing only the window function.
        let w = sine(1000.0, 0.8, 0.2, 16000);
        let p = stft_power(&w, 512, 160, 512).unwrap();

        let window = hann_window(512);
        let samples = w.samples();
        let mut oracle = vec![0.0f64; 257];
        for (k, slot) in oracle.iter_mut().enumerate() {
            let mut re = 0.0;
            let mut im = 0.0;
            for n in 0..512 {
                let x = samples[n] * window[n];
                let phase = -2.0 * std::f64::consts::PI * (k * n) as f64 / 512.0;
                re += x * phase.cos();
                im += x * phase.sin();
            }
            *slot = re * re + im * im;
        }
        let scale = oracle.iter().cloned().fold(0.0f64, f64::max);
        assert!(scale > 1.0, "tone should carry real energy, got max {scale}");
        for (k, &want) in oracle.iter().enumerate() {
            let got = p.data()[k];
            assert!(
                (got - want).abs() <= 1e-9 * scale,
                "bin {k}: fft {got} vs direct dft {want}"
            );
        }

        let argmax = p
            .data()[..257]
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(argmax, 32);
    }

    #[test]
    fn next_pow2_rounds_up() {
        assert_eq!(next_pow2(512), 512);
        assert_eq!(next_pow2(400), 512);
        assert_eq!(next_pow2(513), 1024);
    }
}
