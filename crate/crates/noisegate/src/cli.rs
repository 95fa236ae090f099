//! Command-line interface behind the `noisegate` binary.
//!
//! Every command reads one [`RunConfig`]: defaults, then an optional
//! `--config PATH` file of `key = value` lines, then `--key value` flags
//! (flags win). All flags are validated before a command touches the
//! filesystem, so a typo never leaves a half-written dataset behind.
//!
//! Exit codes:
//!
//! | code | meaning                                              |
//! |------|------------------------------------------------------|
//! | 0    | success                                              |
//! | 1    | usage or configuration error                         |
//! | 2    | a numerical check failed (gradient audit, divergence)|
//! | 3    | I/O or data error (files, audio, datasets, archives) |
//!
//! `NOISEGATE_LOG` controls stderr chatter: `quiet`, `info` (default), or
//! `debug`. Structured results (epoch lines, reports) go to stdout.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{RunConfig, Task, BOOLEAN_KEYS};
use crate::datagen::{
    identity_speech_spec, load_example, make_example, read_manifest, write_dataset,
    LoadedExample, MixtureExample, MixtureOptions, NoiseClass, SourceKind, SourceSpec,
    MANIFEST_NAME,
};
use crate::features::{
    log_compress, write_feature_dump, FeatureConfig, FeatureExtractor, FeatureSequence, Waveform,
};
use crate::frontend::{apply_mask, count_parameters, CheckpointArchive, Frontend};
use crate::numerics::Tensor;
use crate::trainer::{
    eval_metrics, grad_check, snr_improvement, train, ConditionMetrics, EvalReport, GradCheckCase,
};
use crate::{Error, Result};

const USAGE: &str = "\
noisegate — speech enhancement conditioned on a noise-only context

USAGE:
  noisegate <COMMAND> [--config PATH] [--key value]...

COMMANDS:
  gen-data     synthesize a dataset: one subdirectory per SNR condition plus
               a combined manifest
               (--out DIR, --n-examples N, --snrs \"-5,0,5\", --task identity|general)
  train        train a model on a manifest, checkpointing every epoch
               (--manifest PATH, --out DIR, --variant E0..E3, --epochs N, --lr F)
  enhance      mask one utterance and write the enhanced log-Mel features
               (--checkpoint PATH, --noisy-wav PATH, [--context-wav PATH], --out PATH)
  eval         per-condition loss and SNR improvement over a manifest
               (--checkpoint PATH | --identity-mask, --manifest PATH)
  grad-check   finite-difference audit of analytic gradients on a tiny model
               (--variant E0..E3, [--tolerance T] [--t-frames N] [--s-frames N])
  param-count  parameter total for an architecture (--variant E0..E3)

Any config key works as a file line (`key = value`) or a flag (`--key value`;
dashes and underscores are interchangeable). Keys:
  variant d heads conv_kernel lookback feature_dim speech_layers noise_layers
  cross_layers alpha beta lr batch epochs seed val_fraction n_examples snrs
  task utterance_seconds context_seconds manifest val_manifest out checkpoint
  context_wav noisy_wav identity_mask tolerance t_frames s_frames

NOISEGATE_LOG=quiet|info|debug sets stderr verbosity.
Exit codes: 0 success, 1 usage/config error, 2 failed numerical check,
3 I/O or data error.";

/// Run the CLI against already-split argument words (no program name) and
/// return the process exit code.
pub fn run(args: &[String]) -> i32 {
    match dispatch(args) {
        Ok(output) => {
            if !output.is_empty() {
                println!("{output}");
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Io { .. } | Error::Audio(_) | Error::Dataset(_) | Error::Checkpoint(_) => 3,
        Error::CheckFailed(_) | Error::Diverged { .. } | Error::NonFiniteGrad { .. } => 2,
        _ => 1,
    }
}

fn dispatch(args: &[String]) -> Result<String> {
    if args.iter().any(|a| a == "-h" || a == "--help" || a == "help") {
        return Ok(USAGE.to_string());
    }
    let Some((cmd, rest)) = args.split_first() else {
        return Err(Error::Config(format!("missing command\n\n{USAGE}")));
    };
    let cfg = parse_flags(rest)?;
    match cmd.as_str() {
        "gen-data" => cmd_gen_data(&cfg),
        "train" => cmd_train(&cfg),
        "enhance" => cmd_enhance(&cfg),
        "eval" => cmd_eval(&cfg),
        "grad-check" => cmd_grad_check(&cfg),
        "param-count" => cmd_param_count(&cfg),
        other => Err(Error::Config(format!("unknown command {other:?}\n\n{USAGE}"))),
    }
}

/// Resolve flags into a config: `--config` files merge first (in order),
/// then every other flag in order. Both `--key value` and `--key=value`
/// are accepted; boolean keys need no value.
fn parse_flags(args: &[String]) -> Result<RunConfig> {
    let mut files = Vec::new();
    let mut pairs = Vec::new();
    let mut i = 0;
    while i < args.len() {
        let arg = &args[i];
        let stripped = arg.strip_prefix("--").ok_or_else(|| {
            Error::Config(format!(
                "unexpected argument {arg:?} (flags look like --key value)"
            ))
        })?;
        let (key_raw, inline) = match stripped.split_once('=') {
            Some((k, v)) => (k, Some(v.to_string())),
            None => (stripped, None),
        };
        let key = key_raw.replace('-', "_");
        let value = match inline {
            Some(v) => v,
            None if BOOLEAN_KEYS.contains(&key.as_str()) => "true".to_string(),
            None => {
                i += 1;
                args.get(i)
                    .cloned()
                    .ok_or_else(|| Error::Config(format!("missing value for --{key_raw}")))?
            }
        };
        if key == "config" {
            files.push(value);
        } else {
            pairs.push((key, value));
        }
        i += 1;
    }
    let mut cfg = RunConfig::default();
    for path in files {
        cfg.merge_file(path)?;
    }
    for (key, value) in pairs {
        cfg.set(&key, &value)?;
    }
    Ok(cfg)
}

fn verbosity() -> u8 {
    match std::env::var("NOISEGATE_LOG").ok().as_deref() {
        Some("quiet") | Some("0") => 0,
        Some("debug") | Some("2") => 2,
        _ => 1,
    }
}

fn info(msg: &str) {
    if verbosity() >= 1 {
        eprintln!("{msg}");
    }
}

fn debug(msg: &str) {
    if verbosity() >= 2 {
        eprintln!("{msg}");
    }
}

// ---------------------------------------------------------------------------
// gen-data

fn condition_dir_name(snr_db: f64) -> String {
    format!("snr_{snr_db}")
}

fn draw_example(
    task: Task,
    snr_db: f64,
    rng: &mut ChaCha8Rng,
    opts: &MixtureOptions,
) -> Result<MixtureExample> {
    match task {
        Task::Identity => {
            let class = if rng.gen_bool(0.5) {
                NoiseClass::LowBand
            } else {
                NoiseClass::HighBand
            };
            make_example(
                &identity_speech_spec(rng.gen()),
                &class.noise_spec(rng.gen()),
                snr_db,
                opts,
            )
        }
        Task::General => {
            let speech = match rng.gen_range(0..2u8) {
                0 => SourceKind::HarmonicTone {
                    f0_range: (120.0, 250.0),
                    partials: 6,
                    level_spread_db: 6.0,
                },
                _ => SourceKind::Chirp {
                    f_start: 300.0,
                    f_end: 2500.0,
                },
            };
            let noise = match rng.gen_range(0..4u8) {
                0 => SourceKind::White,
                1 => SourceKind::Pink,
                2 => SourceKind::AmTone {
                    carrier_range: (800.0, 2000.0),
                    am_hz: 2.0,
                    depth: 0.6,
                },
                _ => SourceKind::AlternatingTone {
                    freqs: (700.0, 1300.0),
                    period_s: 0.25,
                },
            };
            make_example(
                &SourceSpec::new(speech, rng.gen()),
                &SourceSpec::new(noise, rng.gen()),
                snr_db,
                opts,
            )
        }
    }
}

/// Synthesize `n_examples` mixtures per SNR condition. Each condition gets
/// its own subdirectory and manifest; a combined manifest at the top level
/// indexes everything for training.
fn cmd_gen_data(cfg: &RunConfig) -> Result<String> {
    let out = cfg.required("out")?;
    if cfg.n_examples == 0 {
        return Err(Error::Config("n_examples must be positive".into()));
    }
    let opts = cfg.mixture_options();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut combined = String::new();
    let mut total = 0usize;
    for &snr_db in &cfg.snrs {
        let name = condition_dir_name(snr_db);
        let examples: Vec<MixtureExample> = (0..cfg.n_examples)
            .map(|_| draw_example(cfg.task, snr_db, &mut rng, &opts))
            .collect::<Result<_>>()?;
        let sub_manifest = write_dataset(out.join(&name), &examples, &opts.feature)?;
        // Fold the condition's manifest into the combined one by prefixing
        // every path (and the id) with the subdirectory.
        let text =
            std::fs::read_to_string(&sub_manifest).map_err(|e| Error::io(&sub_manifest, e))?;
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let prefixed: Vec<String> = line
                .split('\t')
                .enumerate()
                .map(|(i, field)| {
                    if i < 5 {
                        format!("{name}/{field}")
                    } else {
                        field.to_string()
                    }
                })
                .collect();
            writeln!(combined, "{}", prefixed.join("\t")).expect("write to String cannot fail");
        }
        info(&format!(
            "wrote {} examples at {snr_db} dB under {}",
            examples.len(),
            out.join(&name).display()
        ));
        total += examples.len();
    }
    let combined_path = out.join(MANIFEST_NAME);
    std::fs::write(&combined_path, combined).map_err(|e| Error::io(&combined_path, e))?;
    Ok(format!(
        "wrote {total} examples across {} conditions\nmanifest: {}",
        cfg.snrs.len(),
        combined_path.display()
    ))
}

// ---------------------------------------------------------------------------
// train

fn load_all(manifest: &Path, extractor: &FeatureExtractor) -> Result<Vec<LoadedExample>> {
    let entries = read_manifest(manifest)?;
    entries
        .iter()
        .map(|entry| {
            debug(&format!("loading {}", entry.id));
            load_example(entry, extractor)
        })
        .collect()
}

/// Train on a manifest. Validation comes from `val_manifest` when given,
/// otherwise from a seeded held-out fraction of the training manifest.
fn cmd_train(cfg: &RunConfig) -> Result<String> {
    let manifest = cfg.required("manifest")?;
    let out = cfg.required("out")?;
    let fc = cfg.frontend_config();
    fc.validate()?;

    let extractor = FeatureExtractor::new(FeatureConfig::default())?;
    info(&format!("loading {}", manifest.display()));
    let examples = load_all(&manifest, &extractor)?;
    let (train_set, val_set) = match &cfg.val_manifest {
        Some(vm) => {
            info(&format!("loading validation set {}", vm.display()));
            (examples, load_all(vm, &extractor)?)
        }
        None => {
            let n = examples.len();
            let k = ((n as f64) * cfg.val_fraction).round() as usize;
            let k = k.min(n.saturating_sub(1));
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x76616c));
            let mut is_val = vec![false; n];
            for &i in &order[..k] {
                is_val[i] = true;
            }
            let mut train_set = Vec::with_capacity(n - k);
            let mut val_set = Vec::with_capacity(k);
            for (ex, &v) in examples.into_iter().zip(&is_val) {
                if v {
                    val_set.push(ex);
                } else {
                    train_set.push(ex);
                }
            }
            (train_set, val_set)
        }
    };
    info(&format!(
        "train: {} examples, val: {} examples{}",
        train_set.len(),
        val_set.len(),
        if val_set.is_empty() {
            " (validating on the training set)"
        } else {
            ""
        }
    ));

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = Frontend::<f64>::init(fc, &mut rng)?;
    info(&format!(
        "model: variant={} d={} parameters={}",
        fc.variant,
        fc.d,
        crate::blocks::param_count(&model)
    ));

    let tconf = cfg.train_config();
    let (report, _best) = train(&mut model, &train_set, &val_set, &tconf, |e| {
        println!("{}", e.log_line());
    })?;

    let log_path = out.join("train.log");
    std::fs::write(&log_path, report.log()).map_err(|e| Error::io(&log_path, e))?;

    Ok(match report.best_epoch {
        Some(best) => format!(
            "best epoch {best} val_loss={:.6}\ncheckpoints: {}",
            report.best_val_loss,
            out.display()
        ),
        None => format!(
            "no epochs run; wrote the initialization to {}",
            out.join("best.ckpt").display()
        ),
    })
}

// ---------------------------------------------------------------------------
// enhance

/// Mask one utterance: featurize the noisy WAV (plus the context WAV for
/// context variants), estimate the mask, and write the enhanced log-Mel
/// features to `out`.
fn cmd_enhance(cfg: &RunConfig) -> Result<String> {
    let ckpt = cfg.required("checkpoint")?;
    let noisy_path = cfg.required("noisy_wav")?;
    let out = cfg.required("out")?;

    let archive = CheckpointArchive::load(&ckpt)?;
    let model = Frontend::<f64>::from_archive(&archive)?;
    let extractor = FeatureExtractor::new(FeatureConfig::default())?;
    let floor = extractor.config().mel_floor;

    let noisy_wave = Waveform::read_wav(&noisy_path)?;
    let noisy_mel = extractor.mel_power(&noisy_wave)?;
    let noisy_logmel = log_compress(&noisy_mel, floor);

    let context = if model.config.variant.uses_context() {
        let path = cfg.required("context_wav")?;
        let wave = Waveform::read_wav(&path)?;
        Some(log_compress(&extractor.mel_power(&wave)?, floor))
    } else {
        if cfg.context_wav.is_some() {
            info(&format!(
                "warning: variant {} takes no context; ignoring --context-wav",
                model.config.variant
            ));
        }
        None
    };

    let mask = model.estimate_mask(&noisy_logmel, context.as_ref())?;
    let enhanced = apply_mask(&noisy_mel, &mask, model.config.alpha, model.config.beta, floor)?;
    let seq = FeatureSequence {
        frames: enhanced,
        hop: extractor.config().hop_s,
        window: extractor.config().window_s,
    };
    write_feature_dump(&out, &seq)?;
    Ok(format!(
        "enhanced {} frames x {} bins -> {}",
        seq.frames.rows(),
        seq.frames.cols(),
        out.display()
    ))
}

// ---------------------------------------------------------------------------
// eval

fn render_eval(report: &EvalReport) -> String {
    let mut out = String::new();
    for c in &report.conditions {
        writeln!(
            out,
            "condition snr_db={} count={} loss={:.6} snri_db={:.4}",
            c.snr_db, c.count, c.mean_loss, c.mean_snri_db
        )
        .expect("write to String cannot fail");
    }
    write!(
        out,
        "overall loss={:.6} snri_db={:.4}",
        report.mean_loss, report.mean_snri_db
    )
    .expect("write to String cannot fail");
    out
}

/// Score the all-ones mask: the do-nothing baseline every model must beat.
/// Its weighted SNR equals the mixture SNR, so its improvement is zero by
/// construction, which makes this a useful meter self-test.
fn identity_eval(examples: &[LoadedExample]) -> Result<EvalReport> {
    if examples.is_empty() {
        return Err(Error::Dataset("evaluation dataset is empty".into()));
    }
    struct Acc {
        snr_db: f64,
        count: usize,
        loss: f64,
        snri: f64,
    }
    let mut groups: Vec<Acc> = Vec::new();
    let (mut loss_sum, mut snri_sum) = (0.0f64, 0.0f64);
    for ex in examples {
        let ones = Tensor::ones(ex.irm.shape());
        let snri = snr_improvement(&ones, &ex.clean_mel, &ex.noise_mel)?;
        let loss: f64 = ex
            .irm
            .data()
            .iter()
            .map(|&m| {
                let d = m - 1.0;
                d.abs() + d * d
            })
            .sum();
        loss_sum += loss;
        snri_sum += snri;
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
    let mut conditions: Vec<ConditionMetrics> = groups
        .into_iter()
        .map(|a| ConditionMetrics {
            snr_db: a.snr_db,
            count: a.count,
            mean_loss: a.loss / a.count as f64,
            mean_snri_db: a.snri / a.count as f64,
        })
        .collect();
    conditions.sort_by(|a, b| a.snr_db.total_cmp(&b.snr_db));
    let n = examples.len() as f64;
    Ok(EvalReport {
        conditions,
        mean_loss: loss_sum / n,
        mean_snri_db: snri_sum / n,
    })
}

/// Evaluate a checkpoint (or the identity-mask baseline) over a manifest,
/// reporting loss and SNR improvement per condition and overall.
fn cmd_eval(cfg: &RunConfig) -> Result<String> {
    let manifest = cfg.required("manifest")?;
    let extractor = FeatureExtractor::new(FeatureConfig::default())?;
    let examples = load_all(&manifest, &extractor)?;
    let report = if cfg.identity_mask {
        if cfg.checkpoint.is_some() {
            return Err(Error::Config(
                "--identity-mask evaluates the baseline; drop --checkpoint or the flag".into(),
            ));
        }
        identity_eval(&examples)?
    } else {
        let ckpt = cfg.required("checkpoint")?;
        let archive = CheckpointArchive::load(&ckpt)?;
        let model = Frontend::<f64>::from_archive(&archive)?;
        info(&format!(
            "evaluating variant {} over {} examples",
            model.config.variant,
            examples.len()
        ));
        eval_metrics(&model, &examples)?
    };
    Ok(render_eval(&report))
}

// ---------------------------------------------------------------------------
// grad-check

/// Audit analytic gradients against central differences on a tiny model
/// (unset architecture keys fall back to desk-scale defaults, not the full
/// recipe). Fails with exit code 2 when any tensor exceeds the tolerance.
fn cmd_grad_check(cfg: &RunConfig) -> Result<String> {
    let fc = cfg.tiny_frontend_config();
    fc.validate()?;
    if cfg.t_frames == 0 {
        return Err(Error::Config("t_frames must be positive".into()));
    }
    info(&format!(
        "grad-check: variant={} d={} t={} s={}",
        fc.variant, fc.d, cfg.t_frames, cfg.s_frames
    ));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = Frontend::<f64>::init(fc, &mut rng)?;
    let s = fc.variant.uses_context().then_some(cfg.s_frames);
    let case = GradCheckCase::random(fc.feature_dim, cfg.t_frames, s, cfg.seed ^ 0xca5e);
    let report = grad_check(&mut model, &case, cfg.tolerance, cfg.seed)?;
    let mut out = report.describe();
    write!(
        out,
        "loss={:.6} max_rel_err={:.3e} tolerance={:.1e}",
        report.loss,
        report.max_rel_err(),
        report.tolerance
    )
    .expect("write to String cannot fail");
    if report.passed() {
        Ok(format!("{out}\ngrad-check: PASS"))
    } else {
        println!("{out}");
        Err(Error::CheckFailed(format!(
            "gradient check failed for {} parameter tensor(s)",
            report.failures.len()
        )))
    }
}

// ---------------------------------------------------------------------------
// param-count

fn cmd_param_count(cfg: &RunConfig) -> Result<String> {
    let fc = cfg.frontend_config();
    let n = count_parameters(&fc)?;
    Ok(format!(
        "variant={} d={} heads={} conv_kernel={} lookback={} speech_layers={} \
         noise_layers={} cross_layers={} parameters={n}",
        fc.variant,
        fc.d,
        fc.heads,
        fc.conv_kernel,
        fc.lookback,
        fc.speech_layers,
        fc.noise_layers,
        fc.cross_layers
    ))
}
