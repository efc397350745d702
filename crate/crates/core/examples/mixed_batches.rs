//! Build virtual-out and virtual-in batches with linear and cut mixing.
//!
//! cargo run --example mixed_batches

use hierood::mixing::{build_virtual_in, build_virtual_out, mix_cut, Grid, Label, MixConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let k = 3;
    let xs = vec![vec![1.0, 0.0, 0.0, 0.0], vec![0.0, 1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0, 0.0]];
    let labels: Vec<Label> = (0..3).map(Label::from).collect();
    let outliers = vec![vec![5.0, 5.0, 5.0, 5.0], vec![-5.0, -5.0, -5.0, -5.0]];

    let linear = MixConfig::default();
    let out = build_virtual_out(&xs, &labels, &outliers, &linear, k, &mut rng)?;
    println!("virtual-out, λ = {:.3}", out.lambda_used);
    for (x, y) in out.xs.iter().zip(&out.ys) {
        println!("  x {x:.2?}  y {y:.3?}");
    }
    let vin = build_virtual_in(&xs, &labels, &linear, k, &mut rng)?;
    println!("virtual-in, λ = {:.3}", vin.lambda_used);
    for (x, y) in vin.xs.iter().zip(&vin.ys) {
        println!("  x {x:.2?}  y {y:.3?}");
    }

    let a = Grid::filled(6, 6, 1, 0.0);
    let b = Grid::filled(6, 6, 1, 1.0);
    let (mixed, lambda) = mix_cut(&a, &b, 0.7, &mut rng)?;
    println!("6x6 cut at requested λ 0.7 keeps {lambda:.3} of A:");
    for y in 0..6 {
        let row: String = (0..6).map(|x| if mixed.pixel(y, x)[0] > 0.5 { '#' } else { '.' }).collect();
        println!("  {row}");
    }
    Ok(())
}
