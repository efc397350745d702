//! Score a few logit vectors with each detector.
//!
//! cargo run --example detector_scores

use hierood::detectors::{energy_score, msp_score, DetectorConfig, Logits};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cases = [
        ("confident", vec![8.0, 0.5, -1.0]),
        ("split", vec![3.0, 2.9, -1.0]),
        ("flat", vec![0.2, 0.1, 0.0]),
        ("large flat", vec![20.0, 19.9, 19.8]),
    ];
    let detectors = [
        DetectorConfig::msp(),
        DetectorConfig::msp_temp(DetectorConfig::SCALED_TEMPERATURE),
        DetectorConfig::energy(),
    ];
    print!("{:<12}", "logits");
    for d in &detectors {
        print!("{:>16}", d.label());
    }
    println!();
    for (name, v) in cases {
        let l = Logits::new(v)?;
        print!("{name:<12}");
        for d in &detectors {
            print!("{:>16.6}", d.score(&l)?);
        }
        println!();
    }

    // energy ignores how the mass is split, MSP does not
    let a = Logits::new(vec![5.0, 5.0])?;
    let b = Logits::new(vec![5.0 + 2f64.ln(), f64::MIN_POSITIVE.ln()])?;
    println!(
        "equal energy {:.6} / {:.6}, different MSP {:.3} / {:.3}",
        energy_score(&a, 1.0)?,
        energy_score(&b, 1.0)?,
        msp_score(&a, 1.0)?,
        msp_score(&b, 1.0)?
    );
    Ok(())
}
