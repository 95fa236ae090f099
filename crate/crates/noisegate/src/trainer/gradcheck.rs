//! Analytic-vs-numeric gradient verification.
//!
//! Central differences at `h = 1e-5` in 64-bit on a random subsample of at
//! least 20 scalars per parameter tensor, compared with one backward pass
//! through `rel = |a−n| / max(|a|, |n|, 1e-8)`.
//!
//! Central differences carry cancellation noise of roughly
//! `ε·|loss|/(2h) ≈ 1e-11·|loss|`; a difference smaller than
//! `1e-7·max(1, |loss|)` is therefore indistinguishable from that noise
//! and treated as agreement — a real backward bug perturbs gradients far
//! above this floor (see the corrupted-backward test below).

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::blocks::{bind_params, ParamBinding, Params};
use crate::frontend::Frontend;
use crate::numerics::{Graph, Tensor, TensorId};
use crate::{Error, Result};

use super::adam::collect_gradients;

const FD_STEP: f64 = 1e-5;
const REL_FLOOR: f64 = 1e-8;
const SAMPLES_PER_TENSOR: usize = 20;

/// One forward problem for the checker: model inputs plus the mask target.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckCase {
    pub noisy: Tensor<f64>,
    pub context: Option<Tensor<f64>>,
    pub target: Tensor<f64>,
}

impl GradCheckCase {
    /// Random inputs shaped for a model with `feature_dim` channels:
    /// `t` mixture frames, an optional `s`-frame context, and a target
    /// inside (0, 1).
    pub fn random(feature_dim: usize, t: usize, s: Option<usize>, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut gauss = |rows: usize| {
            Tensor::from_fn(rows, feature_dim, |_, _| rng.gen::<f64>() * 2.0 - 1.0)
        };
        let noisy = gauss(t);
        let context = s.map(&mut gauss);
        let mut rng2 = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let target = Tensor::from_fn(t, feature_dim, |_, _| rng2.gen_range(0.05..0.95));
        GradCheckCase {
            noisy,
            context,
            target,
        }
    }
}

/// Verdict for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    /// Scalars sampled from this tensor.
    pub checked: usize,
    /// Worst relative error among sampled scalars, after discounting
    /// differences below the finite-difference noise floor.
    pub max_rel_err: f64,
}

/// Full report: per-tensor worst errors and the names that exceeded the
/// tolerance.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub loss: f64,
    pub tolerance: f64,
    pub params: Vec<ParamCheck>,
    pub failures: Vec<String>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    /// Worst relative error across every parameter tensor.
    pub fn max_rel_err(&self) -> f64 {
        self.params
            .iter()
            .map(|p| p.max_rel_err)
            .fold(0.0, f64::max)
    }

    /// Human-readable summary, one line per parameter tensor.
    pub fn describe(&self) -> String {
        let mut out = String::new();
        for p in &self.params {
            let status = if p.max_rel_err < self.tolerance {
                "ok"
            } else {
                "FAIL"
            };
            out.push_str(&format!(
                "{status:4} {name:50} checked={checked:3} max_rel_err={err:.3e}\n",
                name = p.name,
                checked = p.checked,
                err = p.max_rel_err
            ));
        }
        out
    }
}

/// Check any [`Params`] model whose loss `run` records on a graph with the
/// supplied binding. Returns the report; `Err` is reserved for models that
/// fail to evaluate at all.
pub fn grad_check_with<M, F>(
    model: &mut M,
    tolerance: f64,
    seed: u64,
    run: F,
) -> Result<GradCheckReport>
where
    M: Params<f64>,
    F: Fn(&M, &mut Graph<f64>, &ParamBinding) -> Result<TensorId>,
{
    let (loss, grads) = analytic_gradients(model, &run)?;
    compare_with_differences(model, tolerance, seed, loss, &grads, &run)
}

/// Check a frontend model against one example. Thin wrapper over
/// [`grad_check_with`] using the model's own loss.
pub fn grad_check(
    model: &mut Frontend<f64>,
    case: &GradCheckCase,
    tolerance: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    grad_check_with(model, tolerance, seed, |m, g, p| {
        let noisy = g.input(&case.noisy);
        let ctx = case.context.as_ref().map(|c| g.input(c));
        let est = m.forward(g, p, noisy, ctx)?;
        let target = g.input(&case.target);
        m.mask_loss(g, est, target)
    })
}

/// One forward + backward pass: the loss value and every parameter's
/// analytic gradient, keyed by name.
fn analytic_gradients<M, F>(model: &M, run: &F) -> Result<(f64, HashMap<String, Tensor<f64>>)>
where
    M: Params<f64>,
    F: Fn(&M, &mut Graph<f64>, &ParamBinding) -> Result<TensorId>,
{
    let mut g = Graph::new();
    let binding = bind_params(&mut g, model, "")?;
    let loss_id = run(model, &mut g, &binding)?;
    let loss = g.values(loss_id)[0];
    if !loss.is_finite() {
        return Err(Error::CheckFailed(format!("loss is not finite: {loss}")));
    }
    let grads = g.backward(loss_id)?;
    Ok((loss, collect_gradients(&g, &binding, &grads)?))
}

/// The finite-difference sweep, comparing against precomputed analytic
/// gradients. Split from [`grad_check_with`] so a test can feed it
/// deliberately corrupted gradients and prove the check catches them.
fn compare_with_differences<M, F>(
    model: &mut M,
    tolerance: f64,
    seed: u64,
    loss: f64,
    grads: &HashMap<String, Tensor<f64>>,
    run: &F,
) -> Result<GradCheckReport>
where
    M: Params<f64>,
    F: Fn(&M, &mut Graph<f64>, &ParamBinding) -> Result<TensorId>,
{
    // Plan the probes up front: (tensor name, flat index).
    let mut plan: Vec<(String, Vec<usize>)> = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    model.visit("", &mut |name, tensor| {
        let len = tensor.len();
        let picks = if len <= SAMPLES_PER_TENSOR {
            (0..len).collect()
        } else {
            // Partial Fisher-Yates: the first `SAMPLES_PER_TENSOR` entries
            // of a shuffled index range, without materializing a full
            // shuffle for large tensors more than once.
            let mut idx: Vec<usize> = (0..len).collect();
            for i in 0..SAMPLES_PER_TENSOR {
                let j = rng.gen_range(i..len);
                idx.swap(i, j);
            }
            idx.truncate(SAMPLES_PER_TENSOR);
            idx
        };
        plan.push((name, picks));
    });

    let noise_floor = 1e-7 * loss.abs().max(1.0);
    let mut params = Vec::with_capacity(plan.len());
    let mut failures = Vec::new();
    for (name, picks) in plan {
        let analytic = &grads[&name];
        let mut max_rel: f64 = 0.0;
        for &i in &picks {
            let base = analytic.data()[i];
            let plus = eval_at(model, &name, i, FD_STEP, run)?;
            let minus = eval_at(model, &name, i, -FD_STEP, run)?;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let diff = (base - numeric).abs();
            if diff < noise_floor {
                continue;
            }
            let rel = diff / base.abs().max(numeric.abs()).max(REL_FLOOR);
            max_rel = max_rel.max(rel);
        }
        if max_rel >= tolerance {
            failures.push(name.clone());
        }
        params.push(ParamCheck {
            name,
            checked: picks.len(),
            max_rel_err: max_rel,
        });
    }
    Ok(GradCheckReport {
        loss,
        tolerance,
        params,
        failures,
    })
}

/// Loss with one scalar of one parameter tensor temporarily shifted by
/// `delta`. The model is always restored before returning.
fn eval_at<M, F>(model: &mut M, name: &str, index: usize, delta: f64, run: &F) -> Result<f64>
where
    M: Params<f64>,
    F: Fn(&M, &mut Graph<f64>, &ParamBinding) -> Result<TensorId>,
{
    shift_param(model, name, index, delta);
    let result = (|| {
        let mut g = Graph::new();
        let binding = bind_params(&mut g, &*model, "")?;
        let loss_id = run(&*model, &mut g, &binding)?;
        Ok(g.values(loss_id)[0])
    })();
    shift_param(model, name, index, -delta);
    result
}

fn shift_param<M: Params<f64>>(model: &mut M, name: &str, index: usize, delta: f64) {
    let mut hit = false;
    model.visit_mut("", &mut |n, tensor| {
        if n == name {
            tensor.data_mut()[index] += delta;
            hit = true;
        }
    });
    debug_assert!(hit, "parameter {name:?} not found");
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocks::Affine;
    use crate::frontend::FrontendConfig;
    use crate::layers::Variant;

    /// A purely linear model: FD and analytic gradients agree to machine
    /// precision because second derivatives vanish.
    struct LinearToy {
        proj: Affine<f64>,
    }

    impl Params<f64> for LinearToy {
        fn visit<'a>(&'a self, scope: &str, f: &mut dyn FnMut(String, &'a Tensor<f64>)) {
            self.proj.visit(&crate::blocks::sub(scope, "proj"), f);
        }
        fn visit_mut(&mut self, scope: &str, f: &mut dyn FnMut(String, &mut Tensor<f64>)) {
            self.proj.visit_mut(&crate::blocks::sub(scope, "proj"), f);
        }
    }

    fn tiny_e3() -> Frontend<f64> {
        let config = FrontendConfig {
            variant: Variant::E3,
            d: 8,
            heads: 2,
            conv_kernel: 3,
            lookback: 4,
            feature_dim: 128,
            speech_layers: 1,
            noise_layers: 1,
            cross_layers: 1,
            alpha: 0.5,
            beta: 0.01,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        Frontend::init(config, &mut rng).unwrap()
    }

    #[test]
    fn linear_model_gradients_agree_to_machine_precision() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut toy = LinearToy {
            proj: Affine::init(4, 3, &mut rng),
        };
        let x = crate::testsupport::rand_tensor(5, 4, &mut rng);
        let report = grad_check_with(&mut toy, 1e-9, 2, |m, g, p| {
            let xi = g.input(&x);
            let y = m.proj.forward(g, p, "proj", xi)?;
            Ok(g.sum(y))
        })
        .unwrap();
        assert!(report.passed(), "{}", report.describe());
        assert!(report.max_rel_err() < 1e-9, "{}", report.describe());
    }

    #[test]
    fn tiny_e3_passes_within_tolerance() {
        let mut model = tiny_e3();
        let case = GradCheckCase::random(128, 5, Some(7), 3);
        let report = grad_check(&mut model, &case, 1e-4, 4).unwrap();
        assert!(report.passed(), "{}", report.describe());
        // Every tensor was sampled: 20 scalars, or all of them for tensors
        // smaller than that.
        let mut sizes = std::collections::HashMap::new();
        model.visit("", &mut |name, t| {
            sizes.insert(name, t.len());
        });
        assert_eq!(report.params.len(), sizes.len());
        for p in &report.params {
            assert_eq!(p.checked, sizes[&p.name].min(20), "{}", p.name);
        }
        assert!(report.max_rel_err() < 1e-4);
    }

    #[test]
    fn perturbing_the_model_between_passes_restores_it() {
        let mut model = tiny_e3();
        let reference = model.clone();
        let case = GradCheckCase::random(128, 3, Some(4), 6);
        let _ = grad_check(&mut model, &case, 1e-4, 7).unwrap();
        assert_eq!(model, reference, "checker must leave parameters untouched");
    }

    #[test]
    fn corrupted_film_backward_is_caught() {
        // Simulate a broken FiLM backward: the analytic gradients for every
        // FiLM parameter are wrong by 5% plus an offset, well above the
        // noise floor. The finite-difference sweep must flag exactly that.
        let mut model = tiny_e3();
        let case = GradCheckCase::random(128, 5, Some(7), 8);
        let run = |m: &Frontend<f64>, g: &mut Graph<f64>, p: &ParamBinding| {
            let noisy = g.input(&case.noisy);
            let ctx = case.context.as_ref().map(|c| g.input(c));
            let est = m.forward(g, p, noisy, ctx)?;
            let target = g.input(&case.target);
            m.mask_loss(g, est, target)
        };
        let (loss, mut grads) = analytic_gradients(&model, &run).unwrap();
        for (name, g) in grads.iter_mut() {
            if name.contains(".film.") {
                for v in g.data_mut() {
                    *v = *v * 1.05 + 0.01;
                }
            }
        }
        let report =
            compare_with_differences(&mut model, 1e-4, 9, loss, &grads, &run).unwrap();
        assert!(!report.passed());
        assert!(
            report.failures.iter().all(|n| n.contains(".film.")),
            "only FiLM parameters should fail: {:?}",
            report.failures
        );
        assert!(
            report.failures.iter().any(|n| n.contains("film.r"))
                && report.failures.iter().any(|n| n.contains("film.h")),
            "both FiLM affines should be flagged: {:?}",
            report.failures
        );
    }
}
