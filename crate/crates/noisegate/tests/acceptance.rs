//! Acceptance suite: the eight properties the crate commits to, each as one
//! test that prints a single `ACCEPTANCE <n> (<title>): PASS`/`FAIL` verdict
//! line (run with `--nocapture` to see the PASS lines; failures always show
//! theirs). The suite is standalone: it synthesizes everything it needs.

use std::panic::AssertUnwindSafe;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use noisegate::datagen::{identity_task_dataset, LoadedExample, MixtureExample, MixtureOptions};
use noisegate::features::{log_compress, FeatureConfig, FeatureExtractor};
use noisegate::frontend::{
    apply_mask, compute_irm, count_parameters, mask_weight, Frontend, FrontendConfig,
};
use noisegate::layers::{CrossAttentionLayer, LayerConfig, Variant};
use noisegate::numerics::{AttnMask, Graph, Tensor};
use noisegate::trainer::{
    collect_gradients, grad_check, train, AdamConfig, GradCheckCase, TrainConfig,
};
use noisegate::blocks::bind_params;

/// Wrap a criterion body so the verdict is always a single labeled line.
fn criterion(n: u32, title: &str, body: impl FnOnce() -> String) {
    match std::panic::catch_unwind(AssertUnwindSafe(body)) {
        Ok(detail) if detail.is_empty() => println!("ACCEPTANCE {n} ({title}): PASS"),
        Ok(detail) => println!("ACCEPTANCE {n} ({title}): PASS — {detail}"),
        Err(cause) => {
            println!("ACCEPTANCE {n} ({title}): FAIL");
            std::panic::resume_unwind(cause);
        }
    }
}

/// Desk-scale architecture: full wiring, few weights.
fn tiny(variant: Variant) -> FrontendConfig {
    let context = variant.uses_context();
    FrontendConfig {
        variant,
        d: 8,
        heads: 2,
        conv_kernel: 3,
        lookback: 4,
        feature_dim: 128,
        speech_layers: 1,
        noise_layers: if context { 1 } else { 0 },
        cross_layers: if context { 1 } else { 0 },
        alpha: 0.5,
        beta: 0.01,
    }
}

fn rand_frames(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(rows, cols, |_, _| rng.gen::<f64>() * 2.0 - 1.0)
}

#[test]
fn criterion_1_parameter_budget() {
    criterion(1, "parameter budget", || {
        let n = count_parameters(&FrontendConfig::for_variant(Variant::E0)).unwrap();
        let (lo, hi) = (21_600_000, 26_400_000);
        assert!(
            (lo..=hi).contains(&n),
            "E0 counts {n} parameters, outside [{lo}, {hi}]"
        );
        format!("E0 counts {n} trainable parameters")
    });
}

#[test]
fn criterion_2_gradient_correctness() {
    criterion(2, "gradient correctness", || {
        let start = Instant::now();
        let mut worst: f64 = 0.0;
        let mut probes = 0usize;
        for variant in Variant::ALL {
            let fc = tiny(variant);
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            let mut model = Frontend::<f64>::init(fc, &mut rng).unwrap();
            let s = variant.uses_context().then_some(7);
            let case = GradCheckCase::random(fc.feature_dim, 5, s, 41);
            let report = grad_check(&mut model, &case, 1e-4, 42).unwrap();
            assert!(
                report.passed(),
                "{variant} gradients disagree with finite differences:\n{}",
                report.describe()
            );
            // Coverage: 20 sampled scalars per tensor (every scalar of
            // tensors smaller than that).
            let mut len_of = std::collections::HashMap::new();
            noisegate::blocks::Params::visit(&model, "", &mut |name, t: &Tensor<f64>| {
                len_of.insert(name, t.len());
            });
            for p in &report.params {
                assert_eq!(p.checked, len_of[&p.name].min(20), "{}", p.name);
                probes += p.checked;
            }
            worst = worst.max(report.max_rel_err());
        }
        let elapsed = start.elapsed();
        assert!(
            elapsed.as_secs() < 120,
            "gradient audit took {elapsed:?}, over the 2 min budget"
        );
        format!(
            "E0–E3: {probes} probed scalars, max relative error {worst:.2e} \
             (tolerance 1e-4) in {:.1}s",
            elapsed.as_secs_f64()
        )
    });
}

#[test]
fn criterion_3_streaming_causality() {
    criterion(3, "streaming causality", || {
        let frames = 12;
        for variant in Variant::ALL {
            let fc = tiny(variant);
            let mut rng = ChaCha8Rng::seed_from_u64(100 + variant as u64);
            let model = Frontend::<f64>::init(fc, &mut rng).unwrap();
            let noisy = rand_frames(frames, fc.feature_dim, &mut rng);
            let context = variant
                .uses_context()
                .then(|| rand_frames(9, fc.feature_dim, &mut rng));
            let base = model.estimate_mask(&noisy, context.as_ref()).unwrap();

            for cut in [0usize, 4, frames - 2] {
                // Replace every frame after `cut` with fresh noise; frames
                // up to and including `cut` must not move at all.
                let mut perturbed = noisy.clone();
                for r in cut + 1..frames {
                    for c in 0..fc.feature_dim {
                        perturbed.data_mut()[r * fc.feature_dim + c] =
                            rng.gen::<f64>() * 4.0 - 2.0;
                    }
                }
                let shifted = model.estimate_mask(&perturbed, context.as_ref()).unwrap();
                for r in 0..=cut {
                    assert_eq!(
                        base.row(r),
                        shifted.row(r),
                        "{variant}: frame {r} changed when frames > {cut} were perturbed"
                    );
                }
                // The perturbation itself must matter, or the check is vacuous.
                assert_ne!(
                    base.row(frames - 1),
                    shifted.row(frames - 1),
                    "{variant}: perturbing future frames had no effect at all"
                );
            }
        }
        "exact equality at every frame ≤ t, all variants".to_string()
    });
}

#[test]
fn criterion_4_context_length_flexibility() {
    criterion(4, "context-length flexibility", || {
        let fc = tiny(Variant::E3);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let model = Frontend::<f64>::init(fc, &mut rng).unwrap();
        let noisy = rand_frames(6, fc.feature_dim, &mut rng);
        for s in [1usize, 50, 300, 597] {
            let context = rand_frames(s, fc.feature_dim, &mut rng);
            let mask = model.estimate_mask(&noisy, Some(&context)).unwrap();
            assert_eq!(
                mask.shape(),
                noisy.shape(),
                "context length {s} changed the output shape"
            );
            assert!(mask.all_finite(), "context length {s} produced non-finite masks");
            assert!(
                mask.data().iter().all(|&m| (0.0..=1.0).contains(&m)),
                "context length {s} pushed the mask out of [0, 1]"
            );
        }
        "E3 output shape fixed for context lengths 1/50/300/597".to_string()
    });
}

#[test]
fn criterion_5_mask_oracles() {
    criterion(5, "mask/loss oracles", || {
        let (rows, cols) = (16, 128);
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let speech = Tensor::from_fn(rows, cols, |_, _| rng.gen::<f64>() * 2.0);
        let noise = Tensor::from_fn(rows, cols, |_, _| rng.gen::<f64>() * 2.0);
        let (alpha, beta, floor) = (0.5, 0.01, FeatureConfig::default().mel_floor);

        // IRM against the per-element oracle, and its bounds.
        let irm = compute_irm(&speech, &noise).unwrap();
        for i in 0..rows * cols {
            let (x, n) = (speech.data()[i], noise.data()[i]);
            let expect = if x + n < 1e-8 { 0.5 } else { x / (x + n) };
            let got = irm.data()[i];
            assert!((got - expect).abs() < 1e-12, "irm[{i}] = {got} vs {expect}");
            assert!((0.0..=1.0).contains(&got), "irm[{i}] = {got} out of [0,1]");
        }

        // Training loss against the per-element oracle, through the same
        // graph ops training uses; loss(x, x) is exactly zero.
        let model =
            Frontend::<f64>::init(tiny(Variant::E0), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let est = Tensor::from_fn(rows, cols, |_, _| rng.gen::<f64>());
        let graph_loss = |a: &Tensor<f64>, b: &Tensor<f64>| -> f64 {
            let mut g = Graph::<f64>::new();
            let (ia, ib) = (g.input(a), g.input(b));
            let l = model.mask_loss(&mut g, ia, ib).unwrap();
            g.values(l)[0]
        };
        let oracle: f64 = est
            .data()
            .iter()
            .zip(irm.data())
            .map(|(&m, &t)| (m - t).abs() + (m - t) * (m - t))
            .sum();
        let got = graph_loss(&est, &irm);
        assert!(
            (got - oracle).abs() <= 1e-12 * oracle.max(1.0),
            "loss {got} vs oracle {oracle}"
        );
        assert_eq!(graph_loss(&irm, &irm), 0.0, "loss(x, x) must be exactly 0");

        // Mask application against the per-element oracle.
        let enhanced = apply_mask(&speech, &est, alpha, beta, floor).unwrap();
        for i in 0..rows * cols {
            let expect = (speech.data()[i] * est.data()[i].max(beta).powf(alpha))
                .max(floor)
                .ln();
            let got = enhanced.data()[i];
            assert!(
                (got - expect).abs() < 1e-12,
                "apply_mask[{i}] = {got} vs {expect}"
            );
        }

        // Fully floored mask: the scaling factor is exactly 0.1.
        let low = Tensor::from_fn(rows, cols, |_, _| rng.gen::<f64>() * 0.01);
        let weight = mask_weight(&low, alpha, beta);
        assert!(
            weight.data().iter().all(|&w| w == 0.1),
            "floored weight is not exactly 0.1"
        );
        "IRM/loss/apply_mask match per-element oracles at 1e-12; floor factor exactly 0.1"
            .to_string()
    });
}

/// Featurize an in-memory example the same way the manifest loader does.
fn loaded(id: &str, ex: &MixtureExample, extractor: &FeatureExtractor) -> LoadedExample {
    let floor = extractor.config().mel_floor;
    let noisy_mel = extractor.mel_power(&ex.noisy_wave).unwrap();
    LoadedExample {
        id: id.to_string(),
        noisy_logmel: log_compress(&noisy_mel, floor),
        context_logmel: log_compress(&extractor.mel_power(&ex.context_wave).unwrap(), floor),
        noisy_mel,
        clean_mel: ex.clean_mel.clone(),
        noise_mel: ex.noise_mel.clone(),
        irm: ex.irm.clone(),
        snr_db: ex.snr_db,
    }
}

#[test]
fn criterion_6_context_utility() {
    criterion(6, "context utility", || {
        let start = Instant::now();
        let opts = MixtureOptions {
            utterance_seconds: 1.0,
            context_seconds: 2.0,
            ..MixtureOptions::default()
        };
        let extractor = FeatureExtractor::new(opts.feature.clone()).unwrap();
        // Fixed, documented seeds: one per repetition, offset per use.
        let seeds: [u64; 3] = [101, 202, 303];
        let (n_train, n_val) = (30, 10);

        let arch = |variant: Variant| {
            let context = variant.uses_context();
            FrontendConfig {
                variant,
                d: 32,
                heads: 4,
                conv_kernel: 7,
                lookback: 64,
                feature_dim: 128,
                // Same depth on the utterance path: 2 conformer + 2 cross
                // layers for E3 versus 4 conformer layers for the
                // no-context model.
                speech_layers: if context { 2 } else { 4 },
                noise_layers: if context { 2 } else { 0 },
                cross_layers: if context { 2 } else { 0 },
                alpha: 0.5,
                beta: 0.01,
            }
        };

        let mut wins = 0usize;
        let mut lines = Vec::new();
        for &seed in &seeds {
            let data = identity_task_dataset(seed, n_train + n_val, &opts).unwrap();
            let set: Vec<LoadedExample> = data
                .iter()
                .enumerate()
                .map(|(i, lx)| loaded(&format!("s{seed}e{i}"), &lx.example, &extractor))
                .collect();
            let (train_set, val_set) = set.split_at(n_train);

            let run = |variant: Variant| -> (f64, f64) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA11C);
                let mut model = Frontend::<f64>::init(arch(variant), &mut rng).unwrap();
                let config = TrainConfig {
                    epochs: 12,
                    batch_size: 8,
                    adam: AdamConfig {
                        lr: 3e-3,
                        ..AdamConfig::default()
                    },
                    seed,
                    ..TrainConfig::default()
                };
                let (report, _) = train(&mut model, train_set, val_set, &config, |_| {}).unwrap();
                let best = report.best_epoch.expect("epochs > 0");
                let at_best = &report.epochs[best - 1];
                (at_best.val_loss, at_best.val_snri_db)
            };

            let (e3_loss, e3_snri) = run(Variant::E3);
            let (e0_loss, e0_snri) = run(Variant::E0);
            let loss_ok = e3_loss <= 0.8 * e0_loss;
            let snri_ok = e3_snri >= e0_snri + 3.0;
            if loss_ok && snri_ok {
                wins += 1;
            }
            lines.push(format!(
                "seed {seed}: E3 loss {e3_loss:.1} vs E0 {e0_loss:.1} ({}), \
                 E3 SNRi {e3_snri:.2} dB vs E0 {e0_snri:.2} dB ({})",
                if loss_ok { "≥20% lower" } else { "NOT 20% lower" },
                if snri_ok { "≥3 dB better" } else { "NOT 3 dB better" },
            ));
        }
        let elapsed = start.elapsed();
        assert!(
            elapsed.as_secs() < 1800,
            "context-utility runs took {elapsed:?}, over the 30 min budget"
        );
        assert!(
            wins >= 2,
            "context helped in only {wins}/3 seeds:\n{}",
            lines.join("\n")
        );
        format!(
            "{wins}/3 seeds ordered E3 ahead on both loss and SNRi in {:.0}s\n  {}",
            elapsed.as_secs_f64(),
            lines.join("\n  ")
        )
    });
}

#[test]
fn criterion_7_ablation_wiring() {
    criterion(7, "ablation wiring", || {
        // E1 never routes activations through FiLM or the second
        // cross-attention, so their parameter gradients are exactly zero.
        let fc = tiny(Variant::E1);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let model = Frontend::<f64>::init(fc, &mut rng).unwrap();
        let case = GradCheckCase::random(fc.feature_dim, 5, Some(7), 18);

        let mut g = Graph::<f64>::new();
        let binding = bind_params(&mut g, &model, "").unwrap();
        let noisy = g.input(&case.noisy);
        let ctx = g.input(case.context.as_ref().unwrap());
        let est = model.forward(&mut g, &binding, noisy, Some(ctx)).unwrap();
        let target = g.input(&case.target);
        let loss = model.mask_loss(&mut g, est, target).unwrap();
        let grads = g.backward(loss).unwrap();
        let map = collect_gradients(&g, &binding, &grads).unwrap();

        let (mut frozen, mut live) = (0usize, 0usize);
        for (name, grad) in &map {
            let all_zero = grad.data().iter().all(|&v| v == 0.0);
            if name.contains(".film.") || name.contains(".mhca2.") {
                assert!(all_zero, "E1 produced a nonzero gradient for {name}");
                frozen += 1;
            } else if !all_zero {
                live += 1;
            }
        }
        assert!(frozen >= 6, "expected FiLM + MHCA2 tensors, saw {frozen}");
        assert!(live > 0, "no live gradients at all — the loss is disconnected");

        // E3 with identity-configured FiLM: the second cross-attention's
        // key/value input is x′ itself, so the layer equals the same dataflow
        // with self-attention over x′ — exact in 64-bit.
        let lc = LayerConfig {
            d: 8,
            heads: 2,
            conv_kernel: 3,
            lookback: 4,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let mut layer = CrossAttentionLayer::<f64>::init(&lc, Variant::E3, &mut rng).unwrap();
        layer.film.set_identity();

        let x = rand_frames(6, lc.d, &mut rng);
        let n = rand_frames(9, lc.d, &mut rng);
        let mut g = Graph::<f64>::new();
        let p = bind_params(&mut g, &layer, "xl").unwrap();
        let (xi, ni) = (g.input(&x), g.input(&n));
        let via_film = layer.forward(&mut g, &p, "xl", xi, ni).unwrap();

        // The documented dataflow with MHCA₂(x′, x′) in place of
        // MHCA₂(x′, film(x′, x″)), built from the layer's own sub-modules
        // against the same bound parameters.
        let reference = {
            let half = 0.5;
            let f1 = layer.ffn1.forward(&mut g, &p, "xl.ffn1", xi).unwrap();
            let f1 = g.scale(f1, half);
            let xt = g.add(xi, f1).unwrap();
            let fn1 = layer.ffn_n.forward(&mut g, &p, "xl.ffn_n", ni).unwrap();
            let fn1 = g.scale(fn1, half);
            let nt = g.add(ni, fn1).unwrap();
            let c = layer.conv.forward(&mut g, &p, "xl.conv", xt).unwrap();
            let xp = g.add(xt, c).unwrap();
            let cn = layer.conv_n.forward(&mut g, &p, "xl.conv_n", nt).unwrap();
            let np = g.add(nt, cn).unwrap();
            let a1 = layer.mhca1.attend(&mut g, &p, "xl.mhca1", xp, np, None).unwrap();
            let xpp = g.add(xp, a1).unwrap();
            let _ = xpp; // FiLM is identity: its output IS x′.
            let mask = AttnMask::causal_lookback(6, lc.lookback);
            let a2 = layer
                .mhca2
                .attend(&mut g, &p, "xl.mhca2", xp, xp, Some(&mask))
                .unwrap();
            let fused = g.add(xp, a2).unwrap();
            let f2 = layer.ffn2.forward(&mut g, &p, "xl.ffn2", fused).unwrap();
            let f2 = g.scale(f2, half);
            let s = g.add(fused, f2).unwrap();
            layer.norm.layer_norm(&mut g, &p, "xl.norm", s).unwrap()
        };
        assert_eq!(
            g.values(via_film),
            g.values(reference),
            "identity FiLM did not reduce MHCA2 to self-attention over x'"
        );
        "E1 freezes FiLM/MHCA2 gradients; identity FiLM reduces MHCA2 to self-attention exactly"
            .to_string()
    });
}

#[test]
fn criterion_8_determinism_and_persistence() {
    criterion(8, "determinism & persistence", || {
        // Checkpoint round trip is bit-exact.
        let dir = tempfile::tempdir().unwrap();
        let fc = tiny(Variant::E3);
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let model = Frontend::<f64>::init(fc, &mut rng).unwrap();
        let path = dir.path().join("model.ckpt");
        model.to_archive().save(&path).unwrap();
        let reloaded =
            Frontend::<f64>::from_archive(&noisegate::frontend::CheckpointArchive::load(&path).unwrap())
                .unwrap();
        let dump = |m: &Frontend<f64>| {
            let mut out: Vec<(String, Vec<u64>)> = Vec::new();
            noisegate::blocks::Params::visit(m, "", &mut |name, t: &Tensor<f64>| {
                out.push((name, t.data().iter().map(|v| v.to_bits()).collect()));
            });
            out.sort();
            out
        };
        assert_eq!(dump(&model), dump(&reloaded), "round trip changed some bits");
        assert_eq!(model.config, reloaded.config);

        // Same-seed training runs produce identical logs (and models).
        let opts = MixtureOptions {
            utterance_seconds: 0.3,
            context_seconds: 0.5,
            ..MixtureOptions::default()
        };
        let extractor = FeatureExtractor::new(opts.feature.clone()).unwrap();
        let data = identity_task_dataset(29, 4, &opts).unwrap();
        let set: Vec<LoadedExample> = data
            .iter()
            .enumerate()
            .map(|(i, lx)| loaded(&format!("d{i}"), &lx.example, &extractor))
            .collect();
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(31);
            let mut model = Frontend::<f64>::init(tiny(Variant::E3), &mut rng).unwrap();
            let config = TrainConfig {
                epochs: 2,
                batch_size: 2,
                seed: 31,
                ..TrainConfig::default()
            };
            let (report, _) = train(&mut model, &set[..3], &set[3..], &config, |_| {}).unwrap();
            (report.log(), dump(&model))
        };
        let (log_a, bits_a) = run();
        let (log_b, bits_b) = run();
        assert_eq!(log_a, log_b, "same-seed training logs differ");
        assert_eq!(bits_a, bits_b, "same-seed training weights differ");
        assert!(!log_a.is_empty());
        "checkpoint round trip bit-exact; same-seed logs and weights identical".to_string()
    });
}
