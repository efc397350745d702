//! Generate the synthetic hierarchy, train one objective and evaluate it.
//!
//! cargo run --release --example train_synthetic [LOSS]

use hierood::detectors::DetectorConfig;
use hierood::losses::LossKind;
use hierood::trainer::{evaluate, generate_synthetic, init_model, train, SynthConfig, TrainConfig, TrainData};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let kind: LossKind = std::env::args().nth(1).unwrap_or_else(|| "TERNARY_MIXOE".into()).parse()?;
    let data = generate_synthetic(&SynthConfig::default())?;
    println!(
        "{} ID classes, {} train / {} test / {} outliers",
        data.manifest.num_classes(),
        data.train.len(),
        data.test.len(),
        data.outliers.len()
    );

    let tcfg = TrainConfig::new(kind);
    let td = TrainData::from_synth(&data)?;
    let init = init_model(&tcfg, td.dims(), td.num_classes)?;
    let (model, logs) = train(&init, &td, &tcfg)?;
    for log in logs.iter().step_by(10).chain(logs.last()) {
        println!(
            "epoch {:>3}  ce {:.4}  out {:.4}  in {:.4}  total {:.4}",
            log.epoch, log.ce, log.out_term, log.in_term, log.total
        );
    }

    let det = if kind == LossKind::Energy {
        DetectorConfig::energy()
    } else {
        DetectorConfig::msp()
    };
    let report = evaluate(&model, &data.test, &det)?;
    println!("{kind} / {}: ID accuracy {:.3}", det.label(), report.id_accuracy.unwrap_or(f64::NAN));
    for row in &report.rows {
        println!("  {:<4} AUROC {:.4}  FPR@95 {:.4}", row.set, row.auroc, row.fpr95);
    }
    Ok(())
}
