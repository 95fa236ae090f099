//! Shared helpers for unit tests: random tensors, parameter zeroing, and a
//! central-difference gradient checker that perturbs model parameters.

use rand::Rng;

use crate::blocks::Params;
use crate::numerics::{Graph, Scalar, Tensor};
use crate::numerics::TensorId;

pub fn rand_tensor(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor<f64> {
    Tensor::from_fn(rows, cols, |_, _| rng.gen::<f64>() * 2.0 - 1.0)
}

/// Zero weights and biases but keep norm gains at 1, so normalizations stay
/// well-defined while every affine/conv contributes nothing.
pub fn zero_params<T: Scalar, M: Params<T>>(m: &mut M) {
    m.visit_mut("", &mut |name, t| {
        if !name.ends_with("gain") {
            for v in t.data_mut() {
                *v = T::zero();
            }
        }
    });
}

/// Perturb every parameter of a cloned model and compare analytic gradients
/// against central differences (h = 1e-5). `run` must bind the model's
/// parameters under the empty scope and return a scalar loss node.
pub fn fd_check_params<M: Params<f64> + Clone>(
    model: &M,
    tol: f64,
    run: impl Fn(&M, &mut Graph<f64>) -> TensorId,
) {
    let h = 1e-5;
    let mut g = Graph::new();
    let loss = run(model, &mut g);
    let loss_value = g.values(loss)[0];
    // Central differences cannot resolve anything below the cancellation
    // floor eps*|loss|/(2h); differences under this allowance carry no
    // information about gradient correctness either way.
    let noise_allowance = 1e-7 * loss_value.abs().max(1.0);
    let grads = g.backward(loss).unwrap();

    let mut names = Vec::new();
    model.visit("", &mut |n, t| names.push((n, t.len())));
    for (name, len) in names {
        let id = g
            .param_id(&name)
            .unwrap_or_else(|| panic!("parameter {name} was never bound in the graph"));
        let analytic = grads.of(id).to_vec();
        for e in 0..len {
            let eval = |delta: f64| -> f64 {
                let mut m = model.clone();
                m.visit_mut("", &mut |n, t| {
                    if n == name {
                        t.data_mut()[e] += delta;
                    }
                });
                let mut g2 = Graph::new();
                let l = run(&m, &mut g2);
                g2.values(l)[0]
            };
            let numeric = (eval(h) - eval(-h)) / (2.0 * h);
            let diff = (analytic[e] - numeric).abs();
            let denom = analytic[e].abs().max(numeric.abs()).max(1e-8);
            let rel = diff / denom;
            assert!(
                rel < tol || diff < noise_allowance,
                "{name}[{e}]: analytic {} vs numeric {numeric} (rel {rel:.3e}, diff {diff:.3e})",
                analytic[e]
            );
        }
    }
}
