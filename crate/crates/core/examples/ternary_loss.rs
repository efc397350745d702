//! Evaluate every objective on one batch and check its gradient numerically.
//!
//! cargo run --release --example ternary_loss

use hierood::losses::{evaluate_loss, loss_gradient, LabeledInputs, LossBatch, LossConfig, LossKind};
use hierood::trainer::MlpModel;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn inputs(rng: &mut ChaCha8Rng, n: usize, d: usize, k: usize) -> LabeledInputs {
    let x = Array2::from_shape_fn((n, d), |_| rng.random_range(-2.0..2.0));
    let mut targets = Array2::zeros((n, k));
    for i in 0..n {
        targets[[i, i % k]] = 1.0;
    }
    LabeledInputs { x, targets }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (d, k) = (4, 3);
    let model = MlpModel::init(&[d, 8, k], &mut rng)?;
    let batch = LossBatch {
        id: inputs(&mut rng, 6, d, k),
        outliers: Some(Array2::from_shape_fn((6, d), |_| rng.random_range(-6.0..6.0))),
        virtual_out: Some(inputs(&mut rng, 6, d, k)),
        virtual_in: Some(inputs(&mut rng, 6, d, k)),
    };

    println!("{:<14} {:>9} {:>9} {:>9} {:>9}  max |analytic - numeric|", "objective", "ce", "out", "in", "total");
    for kind in LossKind::ALL {
        let cfg = LossConfig::new(kind);
        let (terms, grads) = loss_gradient(&cfg, &batch, &model)?;
        let analytic = grads.flatten();
        let theta = model.params();
        let h = 1e-5;
        let mut probe = model.clone();
        let mut worst: f64 = 0.0;
        for (i, a) in analytic.iter().enumerate() {
            let mut p = theta.clone();
            p[i] += h;
            probe.set_params(&p)?;
            let up = evaluate_loss(&cfg, &batch, &probe)?.total;
            p[i] -= 2.0 * h;
            probe.set_params(&p)?;
            let down = evaluate_loss(&cfg, &batch, &probe)?.total;
            worst = worst.max((a - (up - down) / (2.0 * h)).abs());
        }
        println!(
            "{:<14} {:>9.5} {:>9.5} {:>9.5} {:>9.5}  {worst:.2e}",
            kind.as_str(),
            terms.ce,
            terms.out_term,
            terms.in_term,
            terms.total
        );
    }
    Ok(())
}
