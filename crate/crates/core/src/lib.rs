//! Fine-grained out-of-distribution detection: hierarchical holdout splits,
//! confidence detectors, mixed-sample outlier losses and stratified metrics,
//! plus a small synthetic training harness that exercises all of them.

pub mod cli;
pub mod detectors;
pub mod hierarchy;
pub mod losses;
pub mod metrics;
pub mod mixing;
pub mod numeric;
pub mod trainer;
