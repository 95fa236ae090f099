//! Evaluation: mask loss and SNR improvement in the Mel power domain,
//! reported overall and grouped by mixing condition.

use crate::datagen::LoadedExample;
use crate::frontend::{mask_weight, Frontend};
use crate::numerics::{Scalar, Tensor};
use crate::{Error, Result};

/// SNR improvement of a per-bin power weight `w` against oracle clean and
/// noise Mel power: output SNR `10·log10(Σw⊙X / Σw⊙N)` minus input SNR
/// `10·log10(ΣX/ΣN)`. A uniform weight scales both sums equally and yields
/// exactly 0 dB; a weight that favors speech-dominant bins is positive.
pub fn snr_improvement(
    weight: &Tensor<f64>,
    clean_mel: &Tensor<f64>,
    noise_mel: &Tensor<f64>,
) -> Result<f64> {
    for t in [clean_mel, noise_mel] {
        if t.shape() != weight.shape() {
            return Err(Error::ShapeMismatch {
                op: "snr_improvement",
                left: weight.shape().to_vec(),
                right: t.shape().to_vec(),
            });
        }
    }
    let mut wx = 0.0;
    let mut wn = 0.0;
    let mut x = 0.0;
    let mut n = 0.0;
    for ((&w, &xc), &nc) in weight
        .data()
        .iter()
        .zip(clean_mel.data())
        .zip(noise_mel.data())
    {
        wx += w * xc;
        wn += w * nc;
        x += xc;
        n += nc;
    }
    if x <= 0.0 || n <= 0.0 || wx <= 0.0 || wn <= 0.0 {
        return Err(Error::Dataset(
            "SNR improvement undefined: zero clean or noise power".into(),
        ));
    }
    Ok(10.0 * (wx / wn).log10() - 10.0 * (x / n).log10())
}

/// Mean metrics over the examples of one mixing condition (one SNR).
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionMetrics {
    pub snr_db: f64,
    pub count: usize,
    pub mean_loss: f64,
    pub mean_snri_db: f64,
}

/// Evaluation result: per-condition breakdown plus overall means.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// Sorted by condition SNR, ascending.
    pub conditions: Vec<ConditionMetrics>,
    pub mean_loss: f64,
    pub mean_snri_db: f64,
}

/// Evaluate a model over a dataset: per-example mask loss and SNR
/// improvement of the inference weight `max(M̂, β)^α`, averaged overall
/// and per SNR condition. Context variants consume each example's context;
/// the no-context variant ignores it.
pub fn eval_metrics<T: Scalar>(
    model: &Frontend<T>,
    dataset: &[LoadedExample],
) -> Result<EvalReport> {
    if dataset.is_empty() {
        return Err(Error::Dataset("evaluation dataset is empty".into()));
    }
    struct Acc {
        snr_db: f64,
        count: usize,
        loss: f64,
        snri: f64,
    }
    let mut groups: Vec<Acc> = Vec::new();
    let mut total_loss = 0.0;
    let mut total_snri = 0.0;
    for ex in dataset {
        let (loss, snri) = example_metrics(model, ex)?;
        total_loss += loss;
        total_snri += snri;
        match groups.iter_mut().find(|a| a.snr_db == ex.snr_db) {
            Some(a) => {
                a.count += 1;
                a.loss += loss;
                a.snri += snri;
            }
            None => groups.push(Acc {
                snr_db: ex.snr_db,
                count: 1,
                loss,
                snri,
            }),
        }
    }
    groups.sort_by(|a, b| a.snr_db.total_cmp(&b.snr_db));
    Ok(EvalReport {
        conditions: groups
            .into_iter()
            .map(|a| ConditionMetrics {
                snr_db: a.snr_db,
                count: a.count,
                mean_loss: a.loss / a.count as f64,
                mean_snri_db: a.snri / a.count as f64,
            })
            .collect(),
        mean_loss: total_loss / dataset.len() as f64,
        mean_snri_db: total_snri / dataset.len() as f64,
    })
}

/// Loss and SNR improvement for one example, from a single forward pass.
pub fn example_metrics<T: Scalar>(model: &Frontend<T>, ex: &LoadedExample) -> Result<(f64, f64)> {
    let est = estimate_mask_f64(model, ex)?;
    let loss: f64 = est
        .data()
        .iter()
        .zip(ex.irm.data())
        .map(|(&m, &t)| {
            let d = t - m;
            d.abs() + d * d
        })
        .sum();
    let weight = mask_weight(&est, model.config.alpha, model.config.beta);
    let snri = snr_improvement(&weight, &ex.clean_mel, &ex.noise_mel)?;
    Ok((loss, snri))
}

/// Run the model on one loaded example and return the mask in f64.
pub fn estimate_mask_f64<T: Scalar>(
    model: &Frontend<T>,
    ex: &LoadedExample,
) -> Result<Tensor<f64>> {
    let noisy = ex.noisy_logmel.cast::<T>();
    let mask = if model.config.variant.uses_context() {
        let ctx = ex.context_logmel.cast::<T>();
        model.estimate_mask(&noisy, Some(&ctx))?
    } else {
        model.estimate_mask(&noisy, None)?
    };
    Ok(mask.cast::<f64>())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{
        identity_speech_spec, make_example, MixtureOptions, SourceKind, SourceSpec,
    };
    use crate::frontend::FrontendConfig;
    use crate::layers::Variant;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn opts() -> MixtureOptions {
        MixtureOptions {
            utterance_seconds: 0.3,
            context_seconds: 0.5,
            ..MixtureOptions::default()
        }
    }

    fn loaded(seed: u64, snr_db: f64) -> LoadedExample {
        // Build a LoadedExample directly from a synthesized mixture without
        // touching disk: featurize the waves the same way the loader would.
        let o = opts();
        let ex = make_example(
            &identity_speech_spec(seed),
            &SourceSpec::new(SourceKind::White, seed + 1),
            snr_db,
            &o,
        )
        .unwrap();
        let extractor = crate::features::FeatureExtractor::new(o.feature.clone()).unwrap();
        let noisy_mel = extractor.mel_power(&ex.noisy_wave).unwrap();
        let floor = o.feature.mel_floor;
        LoadedExample {
            id: format!("mem{seed}"),
            noisy_logmel: crate::features::log_compress(&noisy_mel, floor),
            context_logmel: crate::features::log_compress(
                &extractor.mel_power(&ex.context_wave).unwrap(),
                floor,
            ),
            noisy_mel,
            clean_mel: ex.clean_mel.clone(),
            noise_mel: ex.noise_mel.clone(),
            irm: ex.irm.clone(),
            snr_db,
        }
    }

    #[test]
    fn identity_weight_gives_exactly_zero_improvement() {
        let ex = loaded(1, 0.0);
        let ones = Tensor::ones(ex.irm.shape());
        let snri = snr_improvement(&ones, &ex.clean_mel, &ex.noise_mel).unwrap();
        assert_eq!(snri, 0.0);
    }

    #[test]
    fn uniform_floored_weight_cancels_to_zero_improvement() {
        // An all-β mask attenuates clean and noise equally, so the
        // improvement vanishes (up to rounding of the two log ratios).
        let ex = loaded(2, 5.0);
        let floored = mask_weight(&Tensor::zeros(ex.irm.shape()), 0.5, 0.01);
        assert!(floored.data().iter().all(|&w| w == 0.1));
        let snri = snr_improvement(&floored, &ex.clean_mel, &ex.noise_mel).unwrap();
        assert!(snri.abs() < 1e-12, "snri {snri}");
    }

    #[test]
    fn oracle_mask_improves_snr_at_finite_snr() {
        for snr_db in [-5.0, 0.0, 10.0] {
            let ex = loaded(3, snr_db);
            let weight = mask_weight(&ex.irm, 0.5, 0.01);
            let snri = snr_improvement(&weight, &ex.clean_mel, &ex.noise_mel).unwrap();
            assert!(snri > 0.0, "oracle mask at {snr_db} dB gave {snri}");
        }
    }

    #[test]
    fn shape_mismatch_and_silence_are_rejected() {
        let w = Tensor::<f64>::ones(&[2, 3]);
        let x = Tensor::<f64>::ones(&[3, 2]);
        assert!(snr_improvement(&w, &x, &x).is_err());
        let z = Tensor::<f64>::zeros(&[2, 3]);
        let x = Tensor::<f64>::ones(&[2, 3]);
        assert!(snr_improvement(&w, &z, &x).is_err());
        assert!(snr_improvement(&w, &x, &z).is_err());
    }

    #[test]
    fn eval_groups_by_condition_and_averages() {
        let dataset = vec![loaded(4, 0.0), loaded(5, 0.0), loaded(6, 10.0)];
        let config = FrontendConfig {
            variant: Variant::E0,
            d: 8,
            heads: 2,
            conv_kernel: 3,
            lookback: 8,
            feature_dim: 128,
            speech_layers: 1,
            noise_layers: 0,
            cross_layers: 0,
            alpha: 0.5,
            beta: 0.01,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let model = Frontend::<f64>::init(config, &mut rng).unwrap();
        let report = eval_metrics(&model, &dataset).unwrap();

        assert_eq!(report.conditions.len(), 2);
        assert_eq!(report.conditions[0].snr_db, 0.0);
        assert_eq!(report.conditions[0].count, 2);
        assert_eq!(report.conditions[1].snr_db, 10.0);
        assert_eq!(report.conditions[1].count, 1);
        assert!(report.mean_loss.is_finite() && report.mean_loss > 0.0);
        assert!(report.mean_snri_db.is_finite());
        let by_hand = (report.conditions[0].mean_loss * 2.0 + report.conditions[1].mean_loss)
            / 3.0;
        assert!((report.mean_loss - by_hand).abs() < 1e-9);

        // The context-free variant must ignore the context entirely: a
        // different context leaves its metrics bit-identical.
        let mut altered = dataset[0].clone();
        altered.context_logmel = Tensor::zeros(altered.context_logmel.shape());
        let (a_loss, a_snri) = example_metrics(&model, &dataset[0]).unwrap();
        let (b_loss, b_snri) = example_metrics(&model, &altered).unwrap();
        assert_eq!(a_loss, b_loss);
        assert_eq!(a_snri, b_snri);
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let config = FrontendConfig {
            variant: Variant::E0,
            d: 8,
            heads: 2,
            conv_kernel: 3,
            lookback: 8,
            feature_dim: 128,
            speech_layers: 1,
            noise_layers: 0,
            cross_layers: 0,
            alpha: 0.5,
            beta: 0.01,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let model = Frontend::<f64>::init(config, &mut rng).unwrap();
        assert!(eval_metrics(&model, &[]).is_err());
    }
}
