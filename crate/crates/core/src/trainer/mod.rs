//! Desk-scale training harness: synthetic data, a small MLP and minibatch SGD
//! over any of the supported objectives.

pub mod model;
pub mod synth;

use ndarray::Array2;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detectors::{score_batch, DetectorConfig, DetectorError, LogitRecord, Logits};
use crate::losses::{loss_gradient, LabeledInputs, LossBatch, LossConfig, LossError, LossKind, LossTerms};
use crate::metrics::{full_report, id_accuracy, MetricError, MetricReport, ScoreRecord};
use crate::mixing::{build_virtual_in, build_virtual_out, Label, MixConfig, MixError, MixedBatch};

pub use model::{MlpModel, ModelError};
pub use synth::{generate_synthetic, CoarseLayout, Sample, SiblingLayout, SynthConfig, SynthData, SynthError};

/// Momentum used by [`Optimizer::SgdMomentum`].
pub const MOMENTUM: f64 = 0.9;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("training data: {0}")]
    Data(String),
    #[error("loss became non-finite at epoch {epoch}, step {step} (total {value}); try a lower learning rate")]
    NonFinite { epoch: usize, step: usize, value: f64 },
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Mix(#[from] MixError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Optimizer {
    Sgd,
    SgdMomentum,
}

fn default_epochs() -> usize {
    50
}
fn default_batch() -> usize {
    20
}
fn default_lr() -> f64 {
    0.05
}
fn default_hidden() -> Vec<usize> {
    vec![64]
}
fn default_weight_decay() -> f64 {
    0.0
}
fn default_optimizer() -> Optimizer {
    Optimizer::Sgd
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_optimizer")]
    pub optimizer: Optimizer,
    /// L2 penalty on weight matrices (biases are not decayed).
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    /// Hidden layer widths; empty gives a linear (softmax regression) model.
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    pub loss: LossConfig,
    #[serde(default)]
    pub mix: MixConfig,
    #[serde(default)]
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(loss: LossKind) -> Self {
        TrainConfig {
            epochs: default_epochs(),
            batch_size: default_batch(),
            learning_rate: default_lr(),
            optimizer: default_optimizer(),
            weight_decay: default_weight_decay(),
            hidden: default_hidden(),
            loss: LossConfig::new(loss),
            mix: MixConfig::default(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(TrainError::Config("epochs and batch_size must be positive".into()));
        }
        // lr = 0 is accepted: it is the null-update configuration
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::Config(format!("bad learning rate {}", self.learning_rate)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(TrainError::Config(format!("bad weight decay {}", self.weight_decay)));
        }
        if self.hidden.contains(&0) {
            return Err(TrainError::Config("hidden widths must be positive".into()));
        }
        self.loss.validate()?;
        self.mix.validate()?;
        Ok(())
    }

    pub fn layer_sizes(&self, input: usize, classes: usize) -> Vec<usize> {
        let mut s = vec![input];
        s.extend(&self.hidden);
        s.push(classes);
        s
    }
}

/// Labelled training inputs plus the auxiliary outlier pool.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainData {
    pub x: Array2<f64>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub outliers: Array2<f64>,
}

impl TrainData {
    pub fn from_samples(train: &[Sample], outliers: &[Sample], num_classes: usize) -> Result<Self, TrainError> {
        let dims = train
            .first()
            .map(|s| s.features.len())
            .ok_or_else(|| TrainError::Data("empty training set".into()))?;
        let mut labels = Vec::with_capacity(train.len());
        for s in train {
            if s.features.len() != dims {
                return Err(TrainError::Data(format!("{} has {} features, expected {dims}", s.record_id, s.features.len())));
            }
            match s.true_class {
                Some(c) if c < num_classes => labels.push(c),
                _ => return Err(TrainError::Data(format!("{} has no valid class", s.record_id))),
            }
        }
        if let Some(bad) = outliers.iter().find(|s| s.features.len() != dims) {
            return Err(TrainError::Data(format!("outlier {} has the wrong dimension", bad.record_id)));
        }
        Ok(TrainData {
            x: synth::feature_matrix(train, dims),
            labels,
            num_classes,
            outliers: if outliers.is_empty() {
                Array2::zeros((0, dims))
            } else {
                synth::feature_matrix(outliers, dims)
            },
        })
    }

    pub fn from_synth(data: &SynthData) -> Result<Self, TrainError> {
        Self::from_samples(&data.train, &data.outliers, data.manifest.num_classes())
    }

    pub fn dims(&self) -> usize {
        self.x.ncols()
    }
}

/// Per-epoch means of the separately tracked loss terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub steps: usize,
    pub ce: f64,
    pub out_term: f64,
    pub in_term: f64,
    pub total: f64,
    /// Mean λ over the epoch's mixed batches, when any were built.
    pub mean_lambda: Option<f64>,
}

/// Seed for one epoch's stream, so that each epoch's shuffling and mixing can
/// be reproduced independently of the others.
fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (epoch as u64).wrapping_add(1).wrapping_mul(0xD1B5_4A32_D192_ED03)
}

fn one_hot_rows(labels: &[usize], k: usize) -> Array2<f64> {
    let mut t = Array2::zeros((labels.len(), k));
    for (i, &c) in labels.iter().enumerate() {
        t[[i, c]] = 1.0;
    }
    t
}

fn to_inputs(batch: MixedBatch, dims: usize) -> LabeledInputs {
    let n = batch.xs.len();
    let k = batch.ys.first().map_or(0, Vec::len);
    LabeledInputs {
        x: Array2::from_shape_vec((n, dims), batch.xs.concat()).expect("mixed rows have input width"),
        targets: Array2::from_shape_vec((n, k), batch.ys.concat()).expect("targets have K entries"),
    }
}

fn rows(x: &Array2<f64>, idx: &[usize]) -> Vec<Vec<f64>> {
    idx.iter().map(|&i| x.row(i).to_vec()).collect()
}

/// A fresh model for this config, initialised from `tcfg.seed`.
pub fn init_model(tcfg: &TrainConfig, input: usize, classes: usize) -> Result<MlpModel, TrainError> {
    let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed);
    Ok(MlpModel::init(&tcfg.layer_sizes(input, classes), &mut rng)?)
}

/// Minibatch SGD. Each epoch reshuffles with its own seeded stream; each
/// mixed batch draws a single λ.
pub fn train(model: &MlpModel, data: &TrainData, tcfg: &TrainConfig) -> Result<(MlpModel, Vec<EpochLog>), TrainError> {
    tcfg.validate()?;
    if model.input_dim() != data.dims() || model.num_classes() != data.num_classes {
        return Err(TrainError::Data(format!(
            "model is {:?} but data has {} features and {} classes",
            model.sizes(),
            data.dims(),
            data.num_classes
        )));
    }
    let n = data.x.nrows();
    if n == 0 || data.labels.len() != n {
        return Err(TrainError::Data("training set is empty or mislabelled".into()));
    }
    let kind = tcfg.loss.kind;
    let needs_pool = kind.uses_outliers() || matches!(kind, LossKind::MixOe | LossKind::TernaryMixOe);
    if needs_pool && data.outliers.nrows() == 0 {
        return Err(TrainError::Data(format!("{kind} needs a non-empty outlier pool")));
    }
    let k = data.num_classes;
    let dims = data.dims();
    let momentum = match tcfg.optimizer {
        Optimizer::Sgd => 0.0,
        Optimizer::SgdMomentum => MOMENTUM,
    };
    let pool_rows: Vec<Vec<f64>> = data.outliers.rows().into_iter().map(|r| r.to_vec()).collect();
    let pool_idx: Vec<usize> = (0..data.outliers.nrows()).collect();

    let mut model = model.clone();
    let mut velocity = (momentum > 0.0).then(|| model::Gradients::zeros_like(&model));
    let mut logs = Vec::with_capacity(tcfg.epochs);
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..tcfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(epoch_seed(tcfg.seed, epoch));
        order.shuffle(&mut rng);
        let mut sums = [0.0f64; 4];
        let mut lambda_sum = 0.0;
        let mut lambda_count = 0usize;
        let mut steps = 0usize;
        for (step, idx) in order.chunks(tcfg.batch_size).enumerate() {
            let xs = rows(&data.x, idx);
            let ys: Vec<usize> = idx.iter().map(|&i| data.labels[i]).collect();
            let id = LabeledInputs {
                x: Array2::from_shape_vec((idx.len(), dims), xs.concat()).expect("batch rows"),
                targets: one_hot_rows(&ys, k),
            };
            let mut batch = LossBatch {
                id,
                outliers: None,
                virtual_out: None,
                virtual_in: None,
            };
            match kind {
                LossKind::Baseline => {}
                LossKind::Oe | LossKind::Energy => {
                    let picks: Vec<usize> = (0..idx.len()).map(|_| *pool_idx.choose(&mut rng).expect("pool")).collect();
                    let out = rows(&data.outliers, &picks);
                    batch.outliers = Some(Array2::from_shape_vec((picks.len(), dims), out.concat()).expect("pool rows"));
                }
                LossKind::MixOe | LossKind::TernaryMixOe => {
                    let labels: Vec<Label> = ys.iter().map(|&c| Label::Class(c)).collect();
                    let vout = build_virtual_out(&xs, &labels, &pool_rows, &tcfg.mix, k, &mut rng)?;
                    lambda_sum += vout.lambda_used;
                    lambda_count += 1;
                    batch.virtual_out = Some(to_inputs(vout, dims));
                    if kind == LossKind::TernaryMixOe {
                        let vin = build_virtual_in(&xs, &labels, &tcfg.mix, k, &mut rng)?;
                        lambda_sum += vin.lambda_used;
                        lambda_count += 1;
                        batch.virtual_in = Some(to_inputs(vin, dims));
                    }
                }
            }
            let (terms, mut grads): (LossTerms, _) = loss_gradient(&tcfg.loss, &batch, &model)?;
            if !terms.total.is_finite() {
                return Err(TrainError::NonFinite {
                    epoch,
                    step,
                    value: terms.total,
                });
            }
            if tcfg.weight_decay > 0.0 {
                for (g, p) in grads.layers.iter_mut().zip(&model.layers) {
                    g.weights.scaled_add(tcfg.weight_decay, &p.weights);
                }
            }
            if tcfg.learning_rate > 0.0 {
                model.apply_update(&grads, tcfg.learning_rate, momentum, &mut velocity);
            }
            if !model.is_finite() {
                return Err(TrainError::NonFinite {
                    epoch,
                    step,
                    value: f64::NAN,
                });
            }
            for (s, v) in sums.iter_mut().zip([terms.ce, terms.out_term, terms.in_term, terms.total]) {
                *s += v;
            }
            steps += 1;
        }
        let m = steps as f64;
        logs.push(EpochLog {
            epoch,
            steps,
            ce: sums[0] / m,
            out_term: sums[1] / m,
            in_term: sums[2] / m,
            total: sums[3] / m,
            mean_lambda: (lambda_count > 0).then(|| lambda_sum / lambda_count as f64),
        });
    }
    Ok((model, logs))
}

/// Logits for every tagged test sample.
pub fn logit_records(model: &MlpModel, test: &[Sample]) -> Result<Vec<LogitRecord>, TrainError> {
    let tagged: Vec<&Sample> = test.iter().filter(|s| s.membership.is_some()).collect();
    if tagged.is_empty() {
        return Ok(Vec::new());
    }
    let dims = model.input_dim();
    if let Some(bad) = tagged.iter().find(|s| s.features.len() != dims) {
        return Err(TrainError::Model(ModelError::InputDim {
            got: bad.features.len(),
            expected: dims,
        }));
    }
    let logits = model.forward_batch(synth::feature_matrix(tagged.iter().copied(), dims).view())?;
    tagged
        .iter()
        .zip(logits.rows())
        .map(|(s, l)| {
            Ok(LogitRecord {
                record_id: s.record_id.clone(),
                membership: s.membership.expect("filtered"),
                logits: Logits::new(l.to_vec())?,
                true_class: s.true_class,
            })
        })
        .collect()
}

/// Score every test sample and build the full report with ID accuracy.
pub fn evaluate(model: &MlpModel, test: &[Sample], detector: &DetectorConfig) -> Result<MetricReport, TrainError> {
    let records = logit_records(model, test)?;
    let scores: Vec<ScoreRecord> = score_batch(&records, detector, model.num_classes())?;
    let mut report = full_report(&scores)?;
    report.id_accuracy = id_accuracy(&records).ok();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::Membership;

    fn small_synth(seed: u64) -> SynthData {
        generate_synthetic(&SynthConfig {
            train_per_leaf: 30,
            test_per_leaf: 10,
            outlier_count: 200,
            true_ood_count: 40,
            seed,
            ..SynthConfig::default()
        })
        .unwrap()
    }

    fn quick(kind: LossKind) -> TrainConfig {
        TrainConfig {
            epochs: 3,
            ..TrainConfig::new(kind)
        }
    }

    #[test]
    fn zero_lr_leaves_parameters() {
        let data = small_synth(0);
        let td = TrainData::from_synth(&data).unwrap();
        for kind in LossKind::ALL {
            let cfg = TrainConfig {
                learning_rate: 0.0,
                ..quick(kind)
            };
            let m0 = init_model(&cfg, td.dims(), td.num_classes).unwrap();
            let (m1, logs) = train(&m0, &td, &cfg).unwrap();
            assert_eq!(m0, m1);
            assert_eq!(logs.len(), 3);
        }
    }

    #[test]
    fn training_is_deterministic() {
        let data = small_synth(1);
        let td = TrainData::from_synth(&data).unwrap();
        for kind in [LossKind::TernaryMixOe, LossKind::Energy] {
            let cfg = TrainConfig {
                optimizer: Optimizer::SgdMomentum,
                learning_rate: 0.01,
                ..quick(kind)
            };
            let m0 = init_model(&cfg, td.dims(), td.num_classes).unwrap();
            let a = train(&m0, &td, &cfg).unwrap();
            let b = train(&m0, &td, &cfg).unwrap();
            assert_eq!(a.0.params(), b.0.params());
            assert_eq!(a.1, b.1);
        }
    }

    #[test]
    fn logged_totals_follow_weights() {
        let data = small_synth(2);
        let td = TrainData::from_synth(&data).unwrap();
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: td.x.nrows(),
            ..TrainConfig::new(LossKind::TernaryMixOe)
        };
        let m0 = init_model(&cfg, td.dims(), td.num_classes).unwrap();
        let (_, logs) = train(&m0, &td, &cfg).unwrap();
        // a single full batch: the epoch mean is the step value itself
        let l = &logs[0];
        assert_eq!(l.total, l.ce + cfg.loss.beta * l.out_term + cfg.loss.gamma * l.in_term);
    }

    #[test]
    fn huge_lr_aborts() {
        let data = small_synth(3);
        let td = TrainData::from_synth(&data).unwrap();
        let cfg = TrainConfig {
            learning_rate: 1e6,
            ..quick(LossKind::Baseline)
        };
        let m0 = init_model(&cfg, td.dims(), td.num_classes).unwrap();
        assert!(matches!(train(&m0, &td, &cfg), Err(TrainError::NonFinite { .. })));
    }

    #[test]
    fn zero_model_scores_tie() {
        let data = small_synth(4);
        let m = MlpModel::zeros(&[8, 64, data.manifest.num_classes()]).unwrap();
        for det in [DetectorConfig::msp(), DetectorConfig::energy()] {
            let report = evaluate(&m, &data.test, &det).unwrap();
            assert!(report.rows.iter().all(|r| r.auroc == 0.5), "{report:?}");
            assert!(report.row(crate::metrics::ST_ROW).is_some());
        }
    }

    #[test]
    fn pool_required() {
        let data = small_synth(5);
        let td = TrainData::from_samples(&data.train, &[], data.manifest.num_classes()).unwrap();
        let cfg = quick(LossKind::Oe);
        let m0 = init_model(&cfg, td.dims(), td.num_classes).unwrap();
        assert!(matches!(train(&m0, &td, &cfg), Err(TrainError::Data(_))));
        let by = data.test_by_membership();
        assert!(by.contains_key(&Membership::TrueOod));
    }
}
