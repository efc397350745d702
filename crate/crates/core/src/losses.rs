//! Training objectives and their exact gradients.
//!
//! All objectives are built from the soft-target cross-entropy
//! `CE(l, t) = −Σ_k t_k · log softmax(l)_k`, averaged over rows:
//!
//! | kind            | objective                                                   |
//! |-----------------|-------------------------------------------------------------|
//! | `Baseline`      | `CE(in)`                                                    |
//! | `Oe`            | `CE(in) + w · CE(outliers, uniform)`                        |
//! | `Energy`        | `CE(in) + mean relu(E_in − m_in)² + mean relu(m_out − E_out)²` |
//! | `MixOe`         | `CE(in) + β · CE(virtual out)`                              |
//! | `TernaryMixOe`  | `CE(in) + β · CE(virtual out) + γ · CE(virtual in)`         |
//!
//! `E(x) = −log Σ_k exp(l_k)` is the free energy, so in-distribution samples
//! are pushed below `m_in` and outliers above `m_out`. Both margins are
//! signed values: the bundled default `m_in = −25` corresponds to a margin of
//! 25 on the negative-energy score.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mixing::TARGET_TOLERANCE;
use crate::numeric::{log_sum_exp, softmax_into};
use crate::trainer::model::{Gradients, MlpModel, ModelError};

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("{what}: logits are {logits:?} but targets are {targets:?}")]
    ShapeMismatch {
        what: &'static str,
        logits: (usize, usize),
        targets: (usize, usize),
    },
    #[error("target row {row} is not a distribution (sum {sum})")]
    NotNormalized { row: usize, sum: f64 },
    #[error("{0} batch is required for this loss")]
    MissingBatch(&'static str),
    #[error("{0} batch is empty")]
    EmptyBatch(&'static str),
    #[error("invalid loss configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LossKind {
    Baseline,
    Oe,
    Energy,
    #[serde(rename = "MIXOE")]
    MixOe,
    #[serde(rename = "TERNARY_MIXOE")]
    TernaryMixOe,
}

impl LossKind {
    pub const ALL: [LossKind; 5] = [
        LossKind::Baseline,
        LossKind::Oe,
        LossKind::Energy,
        LossKind::MixOe,
        LossKind::TernaryMixOe,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::Baseline => "BASELINE",
            LossKind::Oe => "OE",
            LossKind::Energy => "ENERGY",
            LossKind::MixOe => "MIXOE",
            LossKind::TernaryMixOe => "TERNARY_MIXOE",
        }
    }

    pub fn uses_outliers(self) -> bool {
        matches!(self, LossKind::Oe | LossKind::Energy)
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let up = s.to_ascii_uppercase().replace('-', "_");
        LossKind::ALL
            .into_iter()
            .find(|k| k.as_str() == up)
            .ok_or_else(|| format!("unknown loss kind '{s}'"))
    }
}

fn default_beta() -> f64 {
    5.0
}
fn default_gamma() -> f64 {
    1.0
}
fn default_oe_weight() -> f64 {
    0.5
}
fn default_m_in() -> f64 {
    -25.0
}
fn default_m_out() -> f64 {
    -7.0
}
fn default_energy_weight() -> f64 {
    0.1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub kind: LossKind,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_oe_weight")]
    pub oe_weight: f64,
    #[serde(default = "default_m_in")]
    pub m_in: f64,
    #[serde(default = "default_m_out")]
    pub m_out: f64,
    /// Weight on the two energy hinge terms.
    #[serde(default = "default_energy_weight")]
    pub energy_weight: f64,
}

impl LossConfig {
    pub fn new(kind: LossKind) -> Self {
        LossConfig {
            kind,
            beta: default_beta(),
            gamma: default_gamma(),
            oe_weight: default_oe_weight(),
            m_in: default_m_in(),
            m_out: default_m_out(),
            energy_weight: default_energy_weight(),
        }
    }

    pub fn validate(&self) -> Result<(), LossError> {
        let nonneg = |name: &str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(LossError::Config(format!("{name} must be finite and >= 0, got {v}")))
            }
        };
        nonneg("beta", self.beta)?;
        nonneg("gamma", self.gamma)?;
        nonneg("oe_weight", self.oe_weight)?;
        nonneg("energy_weight", self.energy_weight)?;
        if !self.m_in.is_finite() || !self.m_out.is_finite() {
            return Err(LossError::Config("energy margins must be finite".into()));
        }
        Ok(())
    }

    /// Weights `(w_out, w_in)` applied to the two auxiliary terms.
    pub fn term_weights(&self) -> (f64, f64) {
        match self.kind {
            LossKind::Baseline => (0.0, 0.0),
            LossKind::Oe => (self.oe_weight, 0.0),
            LossKind::Energy => (self.energy_weight, self.energy_weight),
            LossKind::MixOe => (self.beta, 0.0),
            LossKind::TernaryMixOe => (self.beta, self.gamma),
        }
    }
}

fn check_targets(what: &'static str, logits: ArrayView2<f64>, targets: ArrayView2<f64>) -> Result<(), LossError> {
    check_target_shape(what, logits.dim(), targets)
}

fn check_target_shape(what: &'static str, dim: (usize, usize), targets: ArrayView2<f64>) -> Result<(), LossError> {
    if dim != targets.dim() {
        return Err(LossError::ShapeMismatch {
            what,
            logits: dim,
            targets: targets.dim(),
        });
    }
    if dim.0 == 0 {
        return Err(LossError::EmptyBatch(what));
    }
    for (row, t) in targets.rows().into_iter().enumerate() {
        let sum: f64 = t.sum();
        if (sum - 1.0).abs() > TARGET_TOLERANCE || t.iter().any(|&v| !(v >= 0.0)) {
            return Err(LossError::NotNormalized { row, sum });
        }
    }
    Ok(())
}

/// Mean soft-target cross-entropy and its gradient with respect to the logits.
fn ce_and_grad(logits: ArrayView2<f64>, targets: ArrayView2<f64>) -> (f64, Array2<f64>) {
    let n = logits.nrows() as f64;
    let mut grad = Array2::zeros(logits.dim());
    let mut total = 0.0;
    let mut p = vec![0.0; logits.ncols()];
    for ((l, t), mut g) in logits.rows().into_iter().zip(targets.rows()).zip(grad.rows_mut()) {
        let l = l.to_vec();
        let lse = log_sum_exp(&l);
        total += l.iter().zip(t.iter()).map(|(li, ti)| -ti * (li - lse)).sum::<f64>();
        softmax_into(&l, &mut p);
        let tsum: f64 = t.sum();
        for ((gk, pk), tk) in g.iter_mut().zip(&p).zip(t.iter()) {
            *gk = (pk * tsum - tk) / n;
        }
    }
    (total / n, grad)
}

fn ce_value(logits: ArrayView2<f64>, targets: ArrayView2<f64>) -> f64 {
    let n = logits.nrows() as f64;
    let total: f64 = logits
        .rows()
        .into_iter()
        .zip(targets.rows())
        .map(|(l, t)| {
            let l = l.to_vec();
            let lse = log_sum_exp(&l);
            l.iter().zip(t.iter()).map(|(li, ti)| -ti * (li - lse)).sum::<f64>()
        })
        .sum();
    total / n
}

pub fn soft_cross_entropy(logits: ArrayView2<f64>, targets: ArrayView2<f64>) -> Result<f64, LossError> {
    check_targets("cross-entropy", logits, targets)?;
    Ok(ce_value(logits, targets))
}

pub fn uniform_targets(rows: usize, classes: usize) -> Array2<f64> {
    Array2::from_elem((rows, classes), 1.0 / classes as f64)
}

/// `CE(in) + oe_weight · CE(outliers, uniform)`.
pub fn oe_loss(
    id_logits: ArrayView2<f64>,
    id_targets: ArrayView2<f64>,
    out_logits: ArrayView2<f64>,
    oe_weight: f64,
) -> Result<f64, LossError> {
    let ce = soft_cross_entropy(id_logits, id_targets)?;
    if out_logits.ncols() != id_logits.ncols() {
        return Err(LossError::ShapeMismatch {
            what: "outlier",
            logits: out_logits.dim(),
            targets: id_logits.dim(),
        });
    }
    if out_logits.nrows() == 0 {
        return Err(LossError::EmptyBatch("outlier"));
    }
    let u = uniform_targets(out_logits.nrows(), out_logits.ncols());
    Ok(ce + oe_weight * ce_value(out_logits, u.view()))
}

/// Free energy `−log Σ exp(l)` of each row.
pub fn free_energy(logits: ArrayView2<f64>) -> Vec<f64> {
    logits.rows().into_iter().map(|r| -log_sum_exp(&r.to_vec())).collect()
}

/// `(penalty, d penalty / d logits)` for `mean relu(sign·(E − margin))²`.
/// `sign = +1` penalizes energies above the margin, `−1` below it.
fn energy_hinge(logits: ArrayView2<f64>, margin: f64, sign: f64) -> (f64, Array2<f64>) {
    let n = logits.nrows() as f64;
    let mut grad = Array2::zeros(logits.dim());
    let mut total = 0.0;
    let mut p = vec![0.0; logits.ncols()];
    for (l, mut g) in logits.rows().into_iter().zip(grad.rows_mut()) {
        let l = l.to_vec();
        let energy = -log_sum_exp(&l);
        let h = (sign * (energy - margin)).max(0.0);
        total += h * h;
        if h > 0.0 {
            // dE/dl = −softmax(l)
            softmax_into(&l, &mut p);
            for (gk, pk) in g.iter_mut().zip(&p) {
                *gk = -2.0 * h * sign * pk / n;
            }
        }
    }
    (total / n, grad)
}

/// `CE(in) + mean relu(E_in − m_in)² + mean relu(m_out − E_out)²`.
pub fn energy_ft_loss(
    id_logits: ArrayView2<f64>,
    id_targets: ArrayView2<f64>,
    out_logits: ArrayView2<f64>,
    m_in: f64,
    m_out: f64,
) -> Result<f64, LossError> {
    let ce = soft_cross_entropy(id_logits, id_targets)?;
    if out_logits.nrows() == 0 {
        return Err(LossError::EmptyBatch("outlier"));
    }
    let (pin, _) = energy_hinge(id_logits, m_in, 1.0);
    let (pout, _) = energy_hinge(out_logits, m_out, -1.0);
    Ok(ce + pin + pout)
}

/// Logits with matching soft targets.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledLogits {
    pub logits: Array2<f64>,
    pub targets: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchTriplet {
    pub in_batch: LabeledLogits,
    pub virtual_out: Option<LabeledLogits>,
    pub virtual_in: Option<LabeledLogits>,
}

fn labeled_ce(what: &'static str, b: &LabeledLogits) -> Result<f64, LossError> {
    check_targets(what, b.logits.view(), b.targets.view())?;
    Ok(ce_value(b.logits.view(), b.targets.view()))
}

/// `CE(in) + β · CE(virtual out)`.
pub fn mixoe_loss(triplet: &BatchTriplet, beta: f64) -> Result<f64, LossError> {
    let ce = labeled_ce("in", &triplet.in_batch)?;
    let vout = triplet.virtual_out.as_ref().ok_or(LossError::MissingBatch("virtual-out"))?;
    Ok(ce + beta * labeled_ce("virtual-out", vout)?)
}

/// `CE(in) + β · CE(virtual out) + γ · CE(virtual in)`. A sub-batch may be
/// absent only when its weight is zero.
pub fn ternary_mixoe_loss(triplet: &BatchTriplet, beta: f64, gamma: f64) -> Result<f64, LossError> {
    let ce = labeled_ce("in", &triplet.in_batch)?;
    let out = match &triplet.virtual_out {
        Some(b) => labeled_ce("virtual-out", b)?,
        None if beta == 0.0 => 0.0,
        None => return Err(LossError::MissingBatch("virtual-out")),
    };
    let vin = match &triplet.virtual_in {
        Some(b) => labeled_ce("virtual-in", b)?,
        None if gamma == 0.0 => 0.0,
        None => return Err(LossError::MissingBatch("virtual-in")),
    };
    Ok(ce + beta * out + gamma * vin)
}

/// Inputs with soft targets.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledInputs {
    pub x: Array2<f64>,
    pub targets: Array2<f64>,
}

/// Everything one optimization step may need. Which parts are required
/// depends on the loss kind: outliers for OE and energy, virtual-out for the
/// mix objectives, virtual-in for the ternary objective with `γ > 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBatch {
    pub id: LabeledInputs,
    pub outliers: Option<Array2<f64>>,
    pub virtual_out: Option<LabeledInputs>,
    pub virtual_in: Option<LabeledInputs>,
}

/// Separately tracked loss components; `total` is always
/// `ce + out_weight · out_term + in_weight · in_term`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub ce: f64,
    pub out_term: f64,
    pub in_term: f64,
    pub out_weight: f64,
    pub in_weight: f64,
    pub total: f64,
}

impl LossTerms {
    fn new(ce: f64, out_term: f64, in_term: f64, (out_weight, in_weight): (f64, f64)) -> Self {
        LossTerms {
            ce,
            out_term,
            in_term,
            out_weight,
            in_weight,
            total: ce + out_weight * out_term + in_weight * in_term,
        }
    }
}

fn forward_and_grad(
    model: &MlpModel,
    x: &Array2<f64>,
    term: impl FnOnce(ArrayView2<f64>) -> (f64, Array2<f64>),
    weight: f64,
    grads: &mut Gradients,
) -> Result<f64, LossError> {
    let cache = model.forward_cached(x.view())?;
    let (value, mut dlogits) = term(cache.logits().view());
    if weight != 1.0 {
        dlogits.mapv_inplace(|g| g * weight);
    }
    grads.add_assign(&model.backward(&cache, &dlogits));
    Ok(value)
}

/// Loss terms and the exact gradient of the configured objective with
/// respect to every model parameter.
pub fn loss_gradient(cfg: &LossConfig, batch: &LossBatch, model: &MlpModel) -> Result<(LossTerms, Gradients), LossError> {
    cfg.validate()?;
    let k = model.num_classes();
    let (w_out, w_in) = cfg.term_weights();
    let mut grads = Gradients::zeros_like(model);

    let id_logits = model.forward_cached(batch.id.x.view())?;
    check_targets("in", id_logits.logits().view(), batch.id.targets.view())?;
    let (ce, mut d_id) = ce_and_grad(id_logits.logits().view(), batch.id.targets.view());

    let mut out_term = 0.0;
    let mut in_term = 0.0;
    match cfg.kind {
        LossKind::Baseline => {}
        LossKind::Oe => {
            let out = batch.outliers.as_ref().ok_or(LossError::MissingBatch("outlier"))?;
            if out.nrows() == 0 {
                return Err(LossError::EmptyBatch("outlier"));
            }
            let u = uniform_targets(out.nrows(), k);
            out_term = forward_and_grad(model, out, |l| ce_and_grad(l, u.view()), w_out, &mut grads)?;
        }
        LossKind::Energy => {
            let out = batch.outliers.as_ref().ok_or(LossError::MissingBatch("outlier"))?;
            if out.nrows() == 0 {
                return Err(LossError::EmptyBatch("outlier"));
            }
            let (pin, dpin) = energy_hinge(id_logits.logits().view(), cfg.m_in, 1.0);
            d_id.scaled_add(w_in, &dpin);
            in_term = pin;
            out_term = forward_and_grad(model, out, |l| energy_hinge(l, cfg.m_out, -1.0), w_out, &mut grads)?;
        }
        LossKind::MixOe | LossKind::TernaryMixOe => {
            match &batch.virtual_out {
                Some(vo) => {
                    check_target_shape("virtual-out", (vo.x.nrows(), k), vo.targets.view())?;
                    out_term = forward_and_grad(model, &vo.x, |l| ce_and_grad(l, vo.targets.view()), w_out, &mut grads)?;
                }
                None if w_out == 0.0 => {}
                None => return Err(LossError::MissingBatch("virtual-out")),
            }
            if cfg.kind == LossKind::TernaryMixOe {
                match &batch.virtual_in {
                    Some(vi) => {
                        check_target_shape("virtual-in", (vi.x.nrows(), k), vi.targets.view())?;
                        in_term = forward_and_grad(model, &vi.x, |l| ce_and_grad(l, vi.targets.view()), w_in, &mut grads)?;
                    }
                    None if w_in == 0.0 => {}
                    None => return Err(LossError::MissingBatch("virtual-in")),
                }
            }
        }
    }
    grads.add_assign(&model.backward(&id_logits, &d_id));
    Ok((LossTerms::new(ce, out_term, in_term, (w_out, w_in)), grads))
}

/// Loss terms only; same values as [`loss_gradient`] without the backward pass.
pub fn evaluate_loss(cfg: &LossConfig, batch: &LossBatch, model: &MlpModel) -> Result<LossTerms, LossError> {
    cfg.validate()?;
    let k = model.num_classes();
    let weights = cfg.term_weights();
    let id_logits = model.forward_batch(batch.id.x.view())?;
    let ce = soft_cross_entropy(id_logits.view(), batch.id.targets.view())?;
    let (mut out_term, mut in_term) = (0.0, 0.0);
    match cfg.kind {
        LossKind::Baseline => {}
        LossKind::Oe => {
            let out = batch.outliers.as_ref().ok_or(LossError::MissingBatch("outlier"))?;
            let l = model.forward_batch(out.view())?;
            out_term = ce_value(l.view(), uniform_targets(l.nrows(), k).view());
        }
        LossKind::Energy => {
            let out = batch.outliers.as_ref().ok_or(LossError::MissingBatch("outlier"))?;
            let l = model.forward_batch(out.view())?;
            in_term = energy_hinge(id_logits.view(), cfg.m_in, 1.0).0;
            out_term = energy_hinge(l.view(), cfg.m_out, -1.0).0;
        }
        LossKind::MixOe | LossKind::TernaryMixOe => {
            if let Some(vo) = &batch.virtual_out {
                out_term = soft_cross_entropy(model.forward_batch(vo.x.view())?.view(), vo.targets.view())?;
            } else if weights.0 != 0.0 {
                return Err(LossError::MissingBatch("virtual-out"));
            }
            if cfg.kind == LossKind::TernaryMixOe {
                if let Some(vi) = &batch.virtual_in {
                    in_term = soft_cross_entropy(model.forward_batch(vi.x.view())?.view(), vi.targets.view())?;
                } else if weights.1 != 0.0 {
                    return Err(LossError::MissingBatch("virtual-in"));
                }
            }
        }
    }
    Ok(LossTerms::new(ce, out_term, in_term, weights))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, ArrayView1};
    use proptest::prelude::*;

    fn row(v: &[f64]) -> Array2<f64> {
        Array2::from_shape_vec((1, v.len()), v.to_vec()).unwrap()
    }

    #[test]
    fn ce_examples() {
        let ce = soft_cross_entropy(row(&[0.0, 0.0]).view(), row(&[0.5, 0.5]).view()).unwrap();
        assert!((ce - std::f64::consts::LN_2).abs() < 1e-15);
        let ce = soft_cross_entropy(row(&[10.0, 0.0]).view(), row(&[1.0, 0.0]).view()).unwrap();
        // softplus(-10) = log(1 + e^-10)
        assert!((ce - (-10f64).exp().ln_1p()).abs() < 1e-15);
    }

    #[test]
    fn ce_prefers_correct_argmax() {
        // brute force over a small logit grid: moving the max away from the target never helps
        let grid = [-2.0, -1.0, 0.0, 1.0, 2.0];
        let t = row(&[1.0, 0.0, 0.0]);
        for &a in &grid {
            for &b in &grid {
                for &c in &grid {
                    if a > b && a > c {
                        let good = soft_cross_entropy(row(&[a, b, c]).view(), t.view()).unwrap();
                        let swapped = soft_cross_entropy(row(&[b, a, c]).view(), t.view()).unwrap();
                        assert!(good <= swapped);
                    }
                }
            }
        }
    }

    #[test]
    fn ce_errors() {
        assert!(matches!(
            soft_cross_entropy(row(&[0.0, 0.0]).view(), row(&[1.0, 0.0, 0.0]).view()),
            Err(LossError::ShapeMismatch { .. })
        ));
        assert_eq!(
            soft_cross_entropy(row(&[0.0, 0.0]).view(), row(&[0.7, 0.7]).view()),
            Err(LossError::NotNormalized { row: 0, sum: 1.4 })
        );
    }

    #[test]
    fn oe_examples() {
        let id = array![[2.0, -1.0, 0.5], [0.0, 1.0, 0.0]];
        let t = array![[1.0, 0.0, 0.0], [0.0, 0.5, 0.5]];
        let out = array![[3.0, 3.0, 3.0], [-1.0, -1.0, -1.0]];
        let ce = soft_cross_entropy(id.view(), t.view()).unwrap();
        assert_eq!(oe_loss(id.view(), t.view(), out.view(), 0.0).unwrap(), ce);
        let full = oe_loss(id.view(), t.view(), out.view(), 1.0).unwrap();
        assert!((full - ce - 3f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn energy_examples() {
        let id = array![[30.0, 0.0]];
        let t = array![[1.0, 0.0]];
        let out = array![[0.0, 0.0]];
        let ce = soft_cross_entropy(id.view(), t.view()).unwrap();
        // E_in ≈ -30 < -25 and E_out = -ln 2 > -7: margins inactive
        assert_eq!(energy_ft_loss(id.view(), t.view(), out.view(), -25.0, -7.0).unwrap(), ce);
        // E_in = -ln 2 set against m_in = -ln 2 - 2 gives relu(2)^2 = 4
        let id = array![[0.0, 0.0]];
        let m_in = -std::f64::consts::LN_2 - 2.0;
        let t = array![[0.5, 0.5]];
        let total = energy_ft_loss(id.view(), t.view(), array![[50.0, 0.0]].view(), m_in, -60.0).unwrap();
        let ce = soft_cross_entropy(id.view(), t.view()).unwrap();
        assert!((total - ce - 4.0).abs() < 1e-12);
    }

    fn triplet() -> BatchTriplet {
        let lab = |l: Array2<f64>, t: Array2<f64>| LabeledLogits { logits: l, targets: t };
        BatchTriplet {
            in_batch: lab(array![[1.0, -0.5, 2.0]], array![[0.0, 0.0, 1.0]]),
            virtual_out: Some(lab(array![[0.3, 0.1, -0.2]], array![[0.6, 0.2, 0.2]])),
            virtual_in: Some(lab(array![[-1.0, 2.0, 0.0]], array![[0.25, 0.75, 0.0]])),
        }
    }

    #[test]
    fn mix_reductions() {
        let t = triplet();
        let base = soft_cross_entropy(t.in_batch.logits.view(), t.in_batch.targets.view()).unwrap();
        assert_eq!(mixoe_loss(&t, 0.0).unwrap(), base);
        assert_eq!(ternary_mixoe_loss(&t, 3.0, 0.0).unwrap(), mixoe_loss(&t, 3.0).unwrap());
        assert_eq!(ternary_mixoe_loss(&t, 0.0, 0.0).unwrap(), base);
        let mut no_vin = t.clone();
        no_vin.virtual_in = None;
        assert_eq!(ternary_mixoe_loss(&no_vin, 5.0, 0.0).unwrap(), mixoe_loss(&t, 5.0).unwrap());
        assert_eq!(ternary_mixoe_loss(&no_vin, 5.0, 1.0), Err(LossError::MissingBatch("virtual-in")));
        let mut no_vout = t;
        no_vout.virtual_out = None;
        assert_eq!(mixoe_loss(&no_vout, 5.0), Err(LossError::MissingBatch("virtual-out")));
    }

    #[test]
    fn lambda_one_virtual_out_is_plain_ce() {
        let logits = array![[0.2, 1.4, -0.3]];
        let y = crate::mixing::virtual_out_targets(&crate::mixing::Label::Class(1), 1.0, 3).unwrap();
        let targets = Array2::from_shape_vec((1, 3), y).unwrap();
        let t = BatchTriplet {
            in_batch: LabeledLogits { logits: logits.clone(), targets: targets.clone() },
            virtual_out: Some(LabeledLogits { logits: logits.clone(), targets: targets.clone() }),
            virtual_in: None,
        };
        let ce = soft_cross_entropy(logits.view(), targets.view()).unwrap();
        assert_eq!(mixoe_loss(&t, 1.0).unwrap(), ce + ce);
    }

    #[test]
    fn config_parsing() {
        let cfg: LossConfig = serde_json::from_str(r#"{"kind":"TERNARY_MIXOE","gamma":2.0}"#).unwrap();
        assert_eq!(cfg.beta, 5.0);
        assert_eq!(cfg.gamma, 2.0);
        assert_eq!(cfg.m_in, -25.0);
        assert!(serde_json::from_str::<LossConfig>(r#"{"kind":"OE","lr":1}"#).is_err());
        assert_eq!("ternary-mixoe".parse::<LossKind>().unwrap(), LossKind::TernaryMixOe);
        let bad = LossConfig { beta: -1.0, ..LossConfig::new(LossKind::MixOe) };
        assert!(bad.validate().is_err());
    }

    use crate::trainer::model::MlpModel;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> Array2<f64> {
        Array2::from_shape_fn((r, c), |_| rng.random_range(-scale..scale))
    }

    fn rand_targets(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
        let mut t = rand_matrix(rng, r, c, 1.0).mapv(f64::abs);
        for mut row in t.rows_mut() {
            let s = row.sum();
            row.mapv_inplace(|v| v / s);
        }
        t
    }

    fn check_batch(seed: u64) -> (MlpModel, LossBatch) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = MlpModel::init(&[4, 6, 3], &mut rng).unwrap();
        let lab = |rng: &mut ChaCha8Rng, n| LabeledInputs {
            x: rand_matrix(rng, n, 4, 2.0),
            targets: rand_targets(rng, n, 3),
        };
        let batch = LossBatch {
            id: lab(&mut rng, 5),
            outliers: Some(rand_matrix(&mut rng, 4, 4, 3.0)),
            virtual_out: Some(lab(&mut rng, 5)),
            virtual_in: Some(lab(&mut rng, 5)),
        };
        (model, batch)
    }

    /// Central differences over every parameter, compared norm-wise.
    fn fd_relative_error(cfg: &LossConfig, model: &MlpModel, batch: &LossBatch) -> f64 {
        let (_, grads) = loss_gradient(cfg, batch, model).unwrap();
        let analytic = grads.flatten();
        let theta = model.params();
        let h = 1e-5;
        let mut probe = model.clone();
        let numeric: Vec<f64> = (0..theta.len())
            .map(|i| {
                let mut p = theta.clone();
                p[i] += h;
                probe.set_params(&p).unwrap();
                let up = evaluate_loss(cfg, batch, &probe).unwrap().total;
                p[i] -= 2.0 * h;
                probe.set_params(&p).unwrap();
                let down = evaluate_loss(cfg, batch, &probe).unwrap().total;
                (up - down) / (2.0 * h)
            })
            .collect();
        let diff: f64 = analytic.iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
        let nn: f64 = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
        diff / na.max(nn).max(1e-12)
    }

    #[test]
    fn gradients_match_finite_differences() {
        for kind in LossKind::ALL {
            for seed in 0..3 {
                let (model, batch) = check_batch(seed);
                let mut cfg = LossConfig::new(kind);
                // margins that keep both energy hinges active on this small model
                cfg.m_in = -6.0;
                cfg.m_out = 2.0;
                let err = fd_relative_error(&cfg, &model, &batch);
                assert!(err <= 1e-5, "{kind} seed {seed}: relative error {err}");
            }
        }
    }

    #[test]
    fn gradient_terms_agree_with_evaluation() {
        let (model, batch) = check_batch(7);
        for kind in LossKind::ALL {
            let cfg = LossConfig::new(kind);
            let (terms, _) = loss_gradient(&cfg, &batch, &model).unwrap();
            assert_eq!(terms, evaluate_loss(&cfg, &batch, &model).unwrap());
            assert_eq!(terms.total, terms.ce + terms.out_weight * terms.out_term + terms.in_weight * terms.in_term);
        }
        let mut no_outliers = batch.clone();
        no_outliers.outliers = None;
        assert_eq!(
            loss_gradient(&LossConfig::new(LossKind::Oe), &no_outliers, &model).err(),
            Some(LossError::MissingBatch("outlier"))
        );
    }

    #[test]
    fn zero_weights_reduce_to_baseline() {
        let (model, batch) = check_batch(3);
        let base = loss_gradient(&LossConfig::new(LossKind::Baseline), &batch, &model).unwrap();
        let mut cfg = LossConfig::new(LossKind::TernaryMixOe);
        cfg.beta = 0.0;
        cfg.gamma = 0.0;
        let (terms, grads) = loss_gradient(&cfg, &batch, &model).unwrap();
        assert_eq!(terms.total, base.0.total);
        assert_eq!(grads.flatten(), base.1.flatten());
        let mut bare = batch;
        bare.virtual_in = None;
        bare.virtual_out = None;
        assert_eq!(loss_gradient(&cfg, &bare, &model).unwrap().0.total, base.0.total);
    }

    /// Cross-entropy straight from the definition, no stabilisation.
    fn naive_ce(logits: &Array2<f64>, targets: &Array2<f64>) -> f64 {
        let mut total = 0.0;
        for (l, t) in logits.rows().into_iter().zip(targets.rows()) {
            let z: f64 = l.iter().map(|v| v.exp()).sum();
            for (lk, tk) in l.iter().zip(t) {
                total -= tk * (lk.exp() / z).ln();
            }
        }
        total / logits.nrows() as f64
    }

    fn naive_energy(l: ArrayView1<f64>) -> f64 {
        -l.iter().map(|v| v.exp()).sum::<f64>().ln()
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-12 * a.abs().max(1.0)
    }

    #[test]
    fn random_batches_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let lab = |rng: &mut ChaCha8Rng, n| LabeledLogits {
                logits: rand_matrix(rng, n, 4, 3.0),
                targets: rand_targets(rng, n, 4),
            };
            let t = BatchTriplet {
                in_batch: lab(&mut rng, 6),
                virtual_out: Some(lab(&mut rng, 6)),
                virtual_in: Some(lab(&mut rng, 6)),
            };
            let ce = |b: &Option<LabeledLogits>| {
                let b = b.as_ref().unwrap();
                naive_ce(&b.logits, &b.targets)
            };
            let base = naive_ce(&t.in_batch.logits, &t.in_batch.targets);
            assert!(close(mixoe_loss(&t, 5.0).unwrap(), base + 5.0 * ce(&t.virtual_out)));
            assert!(close(
                ternary_mixoe_loss(&t, 5.0, 2.0).unwrap(),
                base + 5.0 * ce(&t.virtual_out) + 2.0 * ce(&t.virtual_in)
            ));

            let out = rand_matrix(&mut rng, 5, 4, 3.0);
            let u = Array2::from_elem((5, 4), 0.25);
            let id = &t.in_batch;
            assert!(close(
                oe_loss(id.logits.view(), id.targets.view(), out.view(), 0.5).unwrap(),
                base + 0.5 * naive_ce(&out, &u)
            ));
            let (m_in, m_out) = (-1.5, -0.5);
            let pin: f64 = id.logits.rows().into_iter().map(|l| (naive_energy(l) - m_in).max(0.0).powi(2)).sum::<f64>() / 6.0;
            let pout: f64 = out.rows().into_iter().map(|l| (m_out - naive_energy(l)).max(0.0).powi(2)).sum::<f64>() / 5.0;
            assert!(close(
                energy_ft_loss(id.logits.view(), id.targets.view(), out.view(), m_in, m_out).unwrap(),
                base + pin + pout
            ));
        }
    }

    #[test]
    fn symmetric_batch_leaves_output_bias_still() {
        // zero model: uniform softmax; every class appears once as a target,
        // so the mean target is uniform too
        let model = MlpModel::zeros(&[3, 5, 4]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let eye = Array2::from_shape_fn((4, 4), |(i, j)| if i == j { 1.0 } else { 0.0 });
        let batch = LossBatch {
            id: LabeledInputs { x: rand_matrix(&mut rng, 4, 3, 1.0), targets: eye.clone() },
            outliers: Some(rand_matrix(&mut rng, 4, 3, 1.0)),
            virtual_out: Some(LabeledInputs { x: rand_matrix(&mut rng, 4, 3, 1.0), targets: eye.clone() }),
            virtual_in: Some(LabeledInputs { x: rand_matrix(&mut rng, 4, 3, 1.0), targets: eye }),
        };
        for kind in LossKind::ALL {
            let (_, g) = loss_gradient(&LossConfig::new(kind), &batch, &model).unwrap();
            let bias = &g.layers.last().unwrap().bias;
            assert!(bias.iter().all(|b| (b - bias[0]).abs() < 1e-15), "{kind}: {bias}");
            // the energy hinges move all logits together; the CE-type terms cancel
            if kind != LossKind::Energy {
                assert!(bias[0].abs() < 1e-15, "{kind}: {bias}");
            }
        }
    }

    #[test]
    fn gradient_is_linear_in_beta() {
        let (model, batch) = check_batch(5);
        let grad = |beta: f64| {
            let cfg = LossConfig { beta, gamma: 2.0, ..LossConfig::new(LossKind::TernaryMixOe) };
            loss_gradient(&cfg, &batch, &model).unwrap().1.flatten()
        };
        let g0 = grad(0.0);
        let g1 = grad(1.0);
        for beta in [0.5, 5.0, 12.0] {
            let gb = grad(beta);
            for ((a, b), c) in gb.iter().zip(&g0).zip(&g1) {
                let predicted = b + beta * (c - b);
                assert!((a - predicted).abs() <= 1e-12 * (1.0 + a.abs()), "β={beta}: {a} vs {predicted}");
            }
        }
    }

    proptest! {
        #[test]
        fn gibbs_inequality(l in prop::collection::vec(-5.0f64..5.0, 3), t in prop::collection::vec(0.01f64..1.0, 3)) {
            let s: f64 = t.iter().sum();
            let t: Vec<f64> = t.iter().map(|v| v / s).collect();
            let ce = soft_cross_entropy(row(&l).view(), row(&t).view()).unwrap();
            let entropy: f64 = t.iter().map(|p| -p * p.ln()).sum();
            prop_assert!(ce >= entropy - 1e-12);
            let p = crate::numeric::softmax(&l);
            let at_softmax = soft_cross_entropy(row(&l).view(), row(&p).view()).unwrap();
            let h: f64 = p.iter().map(|q| -q * q.ln()).sum();
            prop_assert!((at_softmax - h).abs() < 1e-12);
        }

        #[test]
        fn ce_row_shift_invariant(l in prop::collection::vec(-5.0f64..5.0, 4), c in -50.0f64..50.0) {
            let t = row(&[0.1, 0.2, 0.3, 0.4]);
            let shifted: Vec<f64> = l.iter().map(|v| v + c).collect();
            let a = soft_cross_entropy(row(&l).view(), t.view()).unwrap();
            let b = soft_cross_entropy(row(&shifted).view(), t.view()).unwrap();
            prop_assert!((a - b).abs() < 1e-10);
        }
    }
}
