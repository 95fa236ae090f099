//! Synthetic training/eval data: procedural speech-like and noise-like
//! sources, SNR-controlled additive mixing, and examples that carry a
//! noise-only context prefix drawn from the same continuous noise
//! realization as the mixture.
//!
//! Everything is deterministic given the seeds carried in [`SourceSpec`];
//! re-rendering the same spec reproduces the same waveform bit for bit.

mod manifest;

pub use manifest::{
    load_example, read_manifest, write_dataset, LoadedExample, ManifestEntry, MANIFEST_NAME,
};

use std::f64::consts::PI;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::features::{FeatureConfig, FeatureExtractor, Waveform};
use crate::frontend::compute_irm;
use crate::numerics::Tensor;
use crate::{Error, Result};

/// Samples quieter than this count as silence when locating the
/// speech-active segment for SNR measurement.
const ACTIVE_THRESHOLD: f64 = 1e-6;
/// Mixtures are rescaled so no sample magnitude exceeds this.
const PEAK_LIMIT: f64 = 0.999;

/// What to synthesize. Frequencies are in Hz; every kind draws its random
/// choices (exact frequencies, phases) from the spec's seed alone.
#[derive(Debug, Clone, PartialEq)]
pub enum SourceKind {
    /// Harmonic series with 1/k partial amplitudes: speech-like. Each
    /// partial is additionally attenuated by a uniform random
    /// 0..`level_spread_db` dB, so a nonzero spread scrambles the spectral
    /// envelope from one seed to the next.
    HarmonicTone {
        f0_range: (f64, f64),
        partials: usize,
        level_spread_db: f64,
    },
    /// Linear frequency sweep: speech-like.
    Chirp { f_start: f64, f_end: f64 },
    /// Uniform white noise.
    White,
    /// Pink (1/f) noise via a three-pole filter of white noise.
    Pink,
    /// Amplitude-modulated tone; `depth = 0` gives a steady tone.
    AmTone {
        carrier_range: (f64, f64),
        am_hz: f64,
        depth: f64,
    },
    /// Tone hopping between two frequencies with a fixed period,
    /// phase-continuous at the hops.
    AlternatingTone { freqs: (f64, f64), period_s: f64 },
    /// Steady tones at selected harmonics of an explicit fundamental:
    /// one sinusoid per `(k, amplitude)` slot at `k·f0`, random phases.
    /// Both sides of the identity task are built from this kind, so their
    /// spectra live on the same grid.
    PartialGrid { f0: f64, slots: Vec<(usize, f64)> },
    /// First samples of a mono 16-bit WAV file.
    WavFile { path: PathBuf },
}

/// A deterministic source: a kind plus the seed that fixes its random
/// choices.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceSpec {
    pub kind: SourceKind,
    pub seed: u64,
}

impl SourceSpec {
    pub fn new(kind: SourceKind, seed: u64) -> Self {
        SourceSpec { kind, seed }
    }

    /// Render exactly `n_samples` samples at `sample_rate`.
    pub fn render(&self, n_samples: usize, sample_rate: u32) -> Result<Waveform> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let sr = sample_rate as f64;
        let samples: Vec<f64> = match &self.kind {
            SourceKind::HarmonicTone {
                f0_range,
                partials,
                level_spread_db,
            } => {
                let f0 = rng.gen_range(f0_range.0..=f0_range.1);
                let partials = (*partials).max(1);
                // Per partial: a phase and a level draw (consumed even at
                // zero spread, so the stream layout is spread-independent).
                let spread: Vec<(f64, f64)> = (0..partials)
                    .map(|_| {
                        let phase = rng.gen::<f64>() * 2.0 * PI;
                        let atten = 10f64.powf(-rng.gen::<f64>() * level_spread_db / 20.0);
                        (phase, atten)
                    })
                    .collect();
                let mut out = vec![0.0; n_samples];
                let mut peak = 0.0f64;
                for (i, o) in out.iter_mut().enumerate() {
                    let t = i as f64 / sr;
                    let mut acc = 0.0;
                    for (k, (phase, atten)) in spread.iter().enumerate() {
                        let f = f0 * (k + 1) as f64;
                        acc += atten * (2.0 * PI * f * t + phase).sin() / (k + 1) as f64;
                    }
                    *o = acc;
                    peak = peak.max(acc.abs());
                }
                normalize_peak(&mut out, peak, 0.5);
                out
            }
            SourceKind::Chirp { f_start, f_end } => {
                let phase0 = rng.gen::<f64>() * 2.0 * PI;
                let duration = n_samples as f64 / sr;
                (0..n_samples)
                    .map(|i| {
                        let t = i as f64 / sr;
                        let phase = 2.0 * PI
                            * (f_start * t + (f_end - f_start) * t * t / (2.0 * duration));
                        0.45 * (phase + phase0).sin()
                    })
                    .collect()
            }
            SourceKind::White => (0..n_samples)
                .map(|_| 0.35 * (rng.gen::<f64>() * 2.0 - 1.0))
                .collect(),
            SourceKind::Pink => {
                // Paul Kellet's economy pink filter over uniform white noise.
                let (mut b0, mut b1, mut b2) = (0.0f64, 0.0f64, 0.0f64);
                let mut out = Vec::with_capacity(n_samples);
                let mut peak = 0.0f64;
                for _ in 0..n_samples {
                    let w = rng.gen::<f64>() * 2.0 - 1.0;
                    b0 = 0.99765 * b0 + w * 0.0990460;
                    b1 = 0.96300 * b1 + w * 0.2965164;
                    b2 = 0.57000 * b2 + w * 1.0526913;
                    let p = b0 + b1 + b2 + w * 0.1848;
                    peak = peak.max(p.abs());
                    out.push(p);
                }
                normalize_peak(&mut out, peak, 0.5);
                out
            }
            SourceKind::AmTone {
                carrier_range,
                am_hz,
                depth,
            } => {
                let fc = rng.gen_range(carrier_range.0..=carrier_range.1);
                let phase0 = rng.gen::<f64>() * 2.0 * PI;
                (0..n_samples)
                    .map(|i| {
                        let t = i as f64 / sr;
                        let env = 1.0 - depth + depth * 0.5 * (1.0 + (2.0 * PI * am_hz * t).sin());
                        0.45 * env * (2.0 * PI * fc * t + phase0).sin()
                    })
                    .collect()
            }
            SourceKind::AlternatingTone { freqs, period_s } => {
                let phase0 = rng.gen::<f64>() * 2.0 * PI;
                let period = (period_s * sr).round().max(1.0) as usize;
                let mut phase = phase0;
                let mut out = Vec::with_capacity(n_samples);
                for i in 0..n_samples {
                    let f = if (i / period) % 2 == 0 { freqs.0 } else { freqs.1 };
                    phase += 2.0 * PI * f / sr;
                    out.push(0.45 * phase.sin());
                }
                out
            }
            SourceKind::PartialGrid { f0, slots } => {
                let phases: Vec<f64> =
                    slots.iter().map(|_| rng.gen::<f64>() * 2.0 * PI).collect();
                let mut out = vec![0.0; n_samples];
                let mut peak = 0.0f64;
                for (i, o) in out.iter_mut().enumerate() {
                    let t = i as f64 / sr;
                    let mut acc = 0.0;
                    for ((k, amp), phase) in slots.iter().zip(&phases) {
                        acc += amp * (2.0 * PI * f0 * *k as f64 * t + phase).sin();
                    }
                    *o = acc;
                    peak = peak.max(acc.abs());
                }
                normalize_peak(&mut out, peak, 0.5);
                out
            }
            SourceKind::WavFile { path } => {
                let w = Waveform::read_wav(path)?;
                if w.sample_rate() != sample_rate {
                    return Err(Error::Dataset(format!(
                        "{}: sample rate {} does not match requested {sample_rate}",
                        path.display(),
                        w.sample_rate()
                    )));
                }
                if w.len() < n_samples {
                    return Err(Error::Dataset(format!(
                        "{}: holds {} samples, need {n_samples}",
                        path.display(),
                        w.len()
                    )));
                }
                w.samples()[..n_samples].to_vec()
            }
        };
        Waveform::new(samples, sample_rate)
    }
}

fn normalize_peak(samples: &mut [f64], peak: f64, target: f64) {
    if peak > 0.0 {
        let s = target / peak;
        for v in samples {
            *v *= s;
        }
    }
}

/// Indices where the speech is audible; SNR is measured over these only,
/// so leading/trailing silence cannot bias it.
fn active_indices(speech: &Waveform) -> Vec<usize> {
    speech
        .samples()
        .iter()
        .enumerate()
        .filter(|(_, &s)| s.abs() > ACTIVE_THRESHOLD)
        .map(|(i, _)| i)
        .collect()
}

fn mean_square(samples: &[f64], idx: &[usize]) -> f64 {
    idx.iter().map(|&i| samples[i] * samples[i]).sum::<f64>() / idx.len() as f64
}

/// Noise gain that hits `snr_db` over the speech-active segment:
/// `10·log10(P_speech / P_scaled_noise) = snr_db`.
fn snr_gain(speech: &Waveform, noise: &Waveform, snr_db: f64) -> Result<(f64, Vec<usize>)> {
    if speech.len() != noise.len() {
        return Err(Error::Dataset(format!(
            "mix_at_snr: speech has {} samples, noise {}",
            speech.len(),
            noise.len()
        )));
    }
    let active = active_indices(speech);
    if active.is_empty() {
        return Err(Error::Dataset(
            "mix_at_snr: silent speech (SNR undefined)".into(),
        ));
    }
    let p_speech = mean_square(speech.samples(), &active);
    let p_noise = mean_square(noise.samples(), &active);
    if p_noise < ACTIVE_THRESHOLD * ACTIVE_THRESHOLD {
        return Err(Error::Dataset(
            "mix_at_snr: silent noise (SNR undefined)".into(),
        ));
    }
    let gain = (p_speech / (p_noise * 10f64.powf(snr_db / 10.0))).sqrt();
    Ok((gain, active))
}

/// Result of SNR-controlled additive mixing.
#[derive(Debug, Clone, PartialEq)]
pub struct MixOutcome {
    pub noisy: Waveform,
    /// Gain applied to the noise before summation.
    pub gain: f64,
    /// Joint rescale applied to the sum (and, by contract, to anything
    /// derived from the components) to keep samples within ±1. Equals 1
    /// when no rescue was needed; never changes the SNR.
    pub rescale: f64,
}

/// Scale `noise` to sit `snr_db` below `speech` (mean-square over the
/// speech-active segment) and add them. If any sample of the sum would
/// leave ±1, both components are rescaled together.
pub fn mix_at_snr(speech: &Waveform, noise: &Waveform, snr_db: f64) -> Result<MixOutcome> {
    let (gain, _) = snr_gain(speech, noise, snr_db)?;
    let raw: Vec<f64> = speech
        .samples()
        .iter()
        .zip(noise.samples())
        .map(|(&s, &n)| s + gain * n)
        .collect();
    let peak = raw.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    let rescale = if peak > PEAK_LIMIT { PEAK_LIMIT / peak } else { 1.0 };
    let noisy = Waveform::new(raw.iter().map(|&v| v * rescale).collect(), speech.sample_rate())?;
    Ok(MixOutcome {
        noisy,
        gain,
        rescale,
    })
}

/// Generation knobs shared by a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureOptions {
    pub feature: FeatureConfig,
    pub utterance_seconds: f64,
    pub context_seconds: f64,
}

impl Default for MixtureOptions {
    fn default() -> Self {
        MixtureOptions {
            feature: FeatureConfig::default(),
            utterance_seconds: 1.0,
            context_seconds: 6.0,
        }
    }
}

/// One synthesized example: the noise-only context, the mixture, aligned
/// unmixed Mel power spectra, and the mask target.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureExample {
    /// Noise-only prefix, same realization (and level) as the mixture noise.
    pub context_wave: Waveform,
    /// Speech plus scaled noise.
    pub noisy_wave: Waveform,
    /// Mel power of the (rescaled) clean speech, aligned with `noisy_wave`.
    pub clean_mel: Tensor<f64>,
    /// Mel power of the (rescaled, gained) noise under the utterance.
    pub noise_mel: Tensor<f64>,
    /// Ideal ratio mask from `clean_mel`/`noise_mel`.
    pub irm: Tensor<f64>,
    pub snr_db: f64,
    pub gain: f64,
    pub rescale: f64,
}

/// Synthesize one example: render a continuous noise realization covering
/// context + utterance, emit the first `context_seconds` as the context,
/// and mix the remainder with the speech at `snr_db`. The anti-clipping
/// rescale is applied to every emitted artifact (context, mixture, and the
/// component spectrograms), so the context level always matches the
/// mixture's noise level and the SNR is untouched.
pub fn make_example(
    speech_spec: &SourceSpec,
    noise_spec: &SourceSpec,
    snr_db: f64,
    opts: &MixtureOptions,
) -> Result<MixtureExample> {
    let sr = opts.feature.sample_rate;
    let utt_len = (opts.utterance_seconds * sr as f64).round() as usize;
    let ctx_len = (opts.context_seconds * sr as f64).round() as usize;
    if utt_len == 0 {
        return Err(Error::Dataset("utterance length must be positive".into()));
    }

    let speech = speech_spec.render(utt_len, sr)?;
    let noise = noise_spec.render(ctx_len + utt_len, sr)?;
    let (head, tail) = noise.samples().split_at(ctx_len);
    let noise_tail = Waveform::new(tail.to_vec(), sr)?;

    let (gain, _) = snr_gain(&speech, &noise_tail, snr_db)?;
    let raw_noisy: Vec<f64> = speech
        .samples()
        .iter()
        .zip(tail)
        .map(|(&s, &n)| s + gain * n)
        .collect();
    // The context is the same scaled noise stream, so the anti-clip peak
    // scan must cover it as well.
    let peak = raw_noisy
        .iter()
        .map(|v| v.abs())
        .chain(head.iter().map(|&n| (gain * n).abs()))
        .fold(0.0f64, f64::max);
    let rescale = if peak > PEAK_LIMIT { PEAK_LIMIT / peak } else { 1.0 };

    let noisy_wave = Waveform::new(raw_noisy.iter().map(|&v| v * rescale).collect(), sr)?;
    let context_wave = Waveform::new(head.iter().map(|&n| n * gain * rescale).collect(), sr)?;
    let clean = Waveform::new(speech.samples().iter().map(|&s| s * rescale).collect(), sr)?;
    let scaled_noise = Waveform::new(tail.iter().map(|&n| n * gain * rescale).collect(), sr)?;

    let extractor = FeatureExtractor::new(opts.feature.clone())?;
    let clean_mel = extractor.mel_power(&clean)?;
    let noise_mel = extractor.mel_power(&scaled_noise)?;
    let irm = compute_irm(&clean_mel, &noise_mel)?;

    Ok(MixtureExample {
        context_wave,
        noisy_wave,
        clean_mel,
        noise_mel,
        irm,
        snr_db,
        gain,
        rescale,
    })
}

/// The two spectrally disjoint noise classes of the context-identity task.
/// Each class puts steady tones on a fixed set of harmonic slots of the
/// speech's own grid; the slot sets sit two octaves apart (at most
/// 3·375 Hz vs at least 9·300 Hz), so the classes share no Mel bins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NoiseClass {
    /// Tones on harmonic slots 2–3 (600–1125 Hz across the f0 range).
    LowBand,
    /// Tones on harmonic slots 9–11 (2700–4125 Hz across the f0 range).
    HighBand,
}

impl NoiseClass {
    /// The harmonic slots this class's noise tones occupy.
    pub fn slots(self) -> &'static [usize] {
        match self {
            NoiseClass::LowBand => &[2, 3],
            NoiseClass::HighBand => &[9, 10, 11],
        }
    }
}

/// One labeled example of the context-identity task.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub noise_class: NoiseClass,
    pub example: MixtureExample,
}

/// The discriminative dataset behind the context-ablation experiments:
/// per example a fair coin picks one of two spectrally disjoint noise
/// classes, and matching context and mixture noise come from the same
/// realization. The construction (see [`draw_identity_example`]) hides the
/// class from the mixture itself, so only the context identifies it.
pub fn identity_task_dataset(
    seed: u64,
    count: usize,
    opts: &MixtureOptions,
) -> Result<Vec<LabeledExample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let draw = draw_identity_example(&mut rng);
        let example = make_example(&draw.speech, &draw.noise, draw.snr_db, opts)?;
        out.push(LabeledExample {
            noise_class: draw.noise_class,
            example,
        });
    }
    Ok(out)
}

/// Per-example random choices of the identity task.
#[derive(Debug, Clone)]
pub struct IdentityDraw {
    pub noise_class: NoiseClass,
    pub snr_db: f64,
    pub speech: SourceSpec,
    pub noise: SourceSpec,
}

/// Draw one identity-task example.
///
/// The task is built so that the mixture alone cannot reveal which noise
/// class is present — every obvious tell is randomized away:
///
/// * Speech is a harmonic grid (f0 in 300–375 Hz) whose eleven slots are
///   each present only with probability 0.7, at a level attenuated by a
///   uniform random 0–12 dB. Neither the number of hot bins nor any bin's
///   level is predictable from the others.
/// * Noise is a set of steady tones on the class's slots of the same grid:
///   no off-grid frequency, no extra hot bin, no temporal signature. Mixed
///   at 8–18 dB SNR, each tone lands inside the level range a speech
///   partial may occupy anyway, so extra power on a slot reads as nothing
///   more than a strong partial.
///
/// A model that sees only the mixture is left guessing which band carries
/// the tones and how strong they are; the noise-only context shows them
/// directly.
pub fn draw_identity_example(rng: &mut ChaCha8Rng) -> IdentityDraw {
    let noise_class = if rng.gen_bool(0.5) {
        NoiseClass::LowBand
    } else {
        NoiseClass::HighBand
    };
    let f0 = rng.gen_range(300.0..=375.0);
    // Per slot: a presence coin and a level draw (both consumed either
    // way, so the stream layout does not depend on the outcomes).
    let mut speech_slots = Vec::new();
    for k in 1..=11usize {
        let present = rng.gen_bool(0.7);
        let atten = 10f64.powf(-rng.gen::<f64>() * 12.0 / 20.0);
        if present {
            speech_slots.push((k, atten));
        }
    }
    if speech_slots.is_empty() {
        speech_slots.push((1, 1.0));
    }
    let noise_slots: Vec<(usize, f64)> = noise_class
        .slots()
        .iter()
        .map(|&k| (k, 10f64.powf(-rng.gen::<f64>() * 6.0 / 20.0)))
        .collect();
    IdentityDraw {
        noise_class,
        snr_db: rng.gen_range(8.0..=18.0),
        speech: SourceSpec::new(
            SourceKind::PartialGrid {
                f0,
                slots: speech_slots,
            },
            rng.gen(),
        ),
        noise: SourceSpec::new(
            SourceKind::PartialGrid {
                f0,
                slots: noise_slots,
            },
            rng.gen(),
        ),
    }
}
