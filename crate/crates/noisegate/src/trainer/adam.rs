//! Adam with bias correction, keyed by parameter name so the optimizer
//! state survives independently of any one computation graph.

use std::collections::{BTreeMap, HashMap};

use crate::blocks::{ParamBinding, Params};
use crate::numerics::{Grads, Graph, Scalar, Tensor};
use crate::{Error, Result};

/// Optimizer hyperparameters. The learning rate is the only knob runs
/// usually touch; the moment decays and epsilon are the standard values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Per-parameter first/second moment estimates plus the shared step count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    config: AdamConfig,
    /// Completed optimizer steps (the `t` in the bias correction).
    t: u64,
    /// Per-parameter (m, v), created lazily on first update.
    slots: BTreeMap<String, (Tensor<T>, Tensor<T>)>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(config: AdamConfig) -> Self {
        AdamState {
            config,
            t: 0,
            slots: BTreeMap::new(),
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.t
    }
}

/// Gradients keyed by parameter name, as produced by
/// [`collect_gradients`].
pub type GradMap<T> = HashMap<String, Tensor<T>>;

/// Pull the gradient of every bound parameter out of a finished backward
/// pass, keyed by the parameter's bound name.
pub fn collect_gradients<T: Scalar>(
    g: &Graph<T>,
    binding: &ParamBinding,
    grads: &Grads<T>,
) -> Result<GradMap<T>> {
    let mut out = GradMap::new();
    for name in binding.names() {
        let id = binding.id(name)?;
        let tensor = Tensor::new(g.shape(id).to_vec(), grads.of(id).to_vec())?;
        out.insert(name.to_string(), tensor);
    }
    Ok(out)
}

/// One Adam update over every parameter of `model`:
/// `m ← β₁m + (1−β₁)g`, `v ← β₂v + (1−β₂)g²`,
/// `θ ← θ − lr·m̂/(√v̂ + eps)` with `m̂ = m/(1−β₁ᵗ)`, `v̂ = v/(1−β₂ᵗ)`.
///
/// Every parameter must have a finite gradient in `grads`; a missing or
/// non-finite entry aborts with the parameter's name before anything is
/// touched.
pub fn adam_step<T: Scalar>(
    model: &mut (impl Params<T> + ?Sized),
    grads: &GradMap<T>,
    state: &mut AdamState<T>,
) -> Result<()> {
    // Validate first so a bad gradient can never leave the model half
    // updated.
    let mut failure: Option<Error> = None;
    model.visit("", &mut |name, tensor| {
        if failure.is_some() {
            return;
        }
        match grads.get(&name) {
            None => {
                failure = Some(Error::CheckFailed(format!(
                    "no gradient supplied for parameter {name:?}"
                )));
            }
            Some(g) if g.shape() != tensor.shape() => {
                failure = Some(Error::ShapeMismatch {
                    op: "adam_step",
                    left: tensor.shape().to_vec(),
                    right: g.shape().to_vec(),
                });
            }
            Some(g) if !g.all_finite() => {
                failure = Some(Error::NonFiniteGrad { name });
            }
            Some(_) => {}
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }

    state.t += 1;
    let c = state.config;
    let lr = T::from_f64(c.lr);
    let b1 = T::from_f64(c.beta1);
    let b2 = T::from_f64(c.beta2);
    let eps = T::from_f64(c.eps);
    let one = T::one();
    // Bias corrections are scalars per step; compute them once in f64.
    let m_corr = T::from_f64(1.0 / (1.0 - c.beta1.powi(state.t as i32)));
    let v_corr = T::from_f64(1.0 / (1.0 - c.beta2.powi(state.t as i32)));

    let slots = &mut state.slots;
    model.visit_mut("", &mut |name, tensor| {
        let g = &grads[&name];
        let (m, v) = slots
            .entry(name)
            .or_insert_with(|| (Tensor::zeros(tensor.shape()), Tensor::zeros(tensor.shape())));
        for ((th, &gi), (mi, vi)) in tensor
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()))
        {
            *mi = b1 * *mi + (one - b1) * gi;
            *vi = b2 * *vi + (one - b2) * gi * gi;
            let m_hat = *mi * m_corr;
            let v_hat = *vi * v_corr;
            *th = *th - lr * m_hat / (v_hat.sqrt() + eps);
        }
    });
    Ok(())
}
