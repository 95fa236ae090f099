//! Audit analytic gradients against central finite differences on a tiny
//! model of each variant.
//!
//! ```text
//! cargo run --example check_gradients
//! ```

use noisegate::frontend::{Frontend, FrontendConfig};
use noisegate::layers::Variant;
use noisegate::trainer::{grad_check, GradCheckCase};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> noisegate::Result<()> {
    for variant in Variant::ALL {
        // Desk-scale model: full architecture, few parameters, so the
        // O(parameters) finite-difference sweep stays fast.
        let context = variant.uses_context();
        let config = FrontendConfig {
            variant,
            d: 8,
            heads: 2,
            conv_kernel: 3,
            lookback: 4,
            feature_dim: 16,
            speech_layers: 1,
            noise_layers: if context { 1 } else { 0 },
            cross_layers: if context { 1 } else { 0 },
            alpha: 0.5,
            beta: 0.01,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut model = Frontend::<f64>::init(config, &mut rng)?;

        let case = GradCheckCase::random(
            config.feature_dim,
            5,
            context.then_some(7),
            2,
        );
        let report = grad_check(&mut model, &case, 1e-4, 3)?;
        let probed: usize = report.params.iter().map(|p| p.checked).sum();
        println!(
            "{variant}: {:3} tensors, {probed:4} probed scalars, loss {:>8.4}, \
             max rel err {:.3e}  {}",
            report.params.len(),
            report.loss,
            report.max_rel_err(),
            if report.passed() { "PASS" } else { "FAIL" }
        );
        if !report.passed() {
            print!("{}", report.describe());
            std::process::exit(2);
        }
    }
    Ok(())
}
