//! Hierarchical and semantic-vs-true metrics on hand-built score sets.
//!
//! cargo run --example hierarchical_metrics

use hierood::metrics::{full_report, score_histogram, ternary_threshold_summary, Membership, ScoreRecord};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn draw(rng: &mut ChaCha8Rng, m: Membership, mean: f64, n: usize) -> Vec<ScoreRecord> {
    let dist = Normal::new(mean, 0.08).expect("valid normal");
    (0..n)
        .map(|i| ScoreRecord {
            record_id: format!("{m}-{i}"),
            score: dist.sample(rng),
            membership: m,
        })
        .collect()
}

fn show(title: &str, records: &[ScoreRecord]) -> Result<(), Box<dyn std::error::Error>> {
    println!("{title}");
    for row in full_report(records)?.rows {
        println!("  {:<4} AUROC {:.4}  FPR@95 {:.4}", row.set, row.auroc, row.fpr95);
    }
    let t = ternary_threshold_summary(records)?;
    println!("  thresholds {:.3} / {:.3}, diagonal {:.3}", t.tau_high, t.tau_low, t.diagonal_fraction());
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    // finer holdouts sit closer to ID; true OOD lowest
    let mut ordered = draw(&mut rng, Membership::Id, 0.9, 300);
    ordered.extend(draw(&mut rng, Membership::OodL1, 0.5, 100));
    ordered.extend(draw(&mut rng, Membership::OodL2, 0.65, 100));
    ordered.extend(draw(&mut rng, Membership::OodL3, 0.8, 100));
    ordered.extend(draw(&mut rng, Membership::TrueOod, 0.2, 100));
    show("ordered: ID > semantic > true", &ordered)?;

    // over-exuberant: every OOD set collapsed to the same low scores
    let mut flat = draw(&mut rng, Membership::Id, 0.9, 300);
    for m in [Membership::OodL1, Membership::OodL2, Membership::OodL3, Membership::TrueOod] {
        flat.extend(draw(&mut rng, m, 0.2, 100));
    }
    show("over-exuberant: all OOD pushed equally low", &flat)?;

    let hist = score_histogram(&ordered, 10)?;
    println!("histogram edges {:.2?}", hist.edges);
    for (m, counts) in &hist.counts {
        println!("  {m:<8} {counts:?}");
    }
    Ok(())
}
