//! ROC machinery and the two stratified OOD evaluations.
//!
//! Conventions used throughout:
//!
//! * Scores are oriented so that higher means "more in-distribution", and a
//!   sample is predicted positive when `score >= tau`.
//! * AUROC is the Mann–Whitney statistic `P(pos > neg) + ½·P(pos = neg)`,
//!   i.e. midrank tie handling. It is computed exactly as a ratio of integer
//!   counts, so it is bit-identical to the pairwise definition.
//! * FPR@TPR picks the largest threshold whose TPR reaches the target.
//! * Metrics over an empty set are errors, never NaN or 0.
//!
//! The hierarchical report compares ID against each holdout level separately
//! and against their union ("All", weighted by sample count). The
//! semantic-vs-true row treats semantic OOD (held-out classes) as the
//! positive, higher-scoring class and true OOD as the negative class.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detectors::LogitRecord;
use crate::hierarchy::HoldoutLevel;
use crate::numeric::argmax;

/// Default operating point for FPR.
pub const TPR_95: f64 = 0.95;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("undefined metric: the {0} set is empty")]
    EmptySet(&'static str),
    #[error("non-finite score {0}")]
    NonFinite(f64),
    #[error("TPR target must lie in (0, 1], got {0}")]
    BadTarget(f64),
    #[error("no in-distribution records")]
    NoId,
    #[error("no held-out (OOD_L*) records")]
    NoSemantic,
    #[error("no TRUE_OOD records")]
    NoTrueOod,
    #[error("no labelled in-distribution records")]
    NoLabelled,
    #[error("histogram needs at least one bin")]
    NoBins,
}

/// Which test population a record belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Membership {
    #[serde(rename = "ID")]
    Id,
    #[serde(rename = "OOD_L1")]
    OodL1,
    #[serde(rename = "OOD_L2")]
    OodL2,
    #[serde(rename = "OOD_L3")]
    OodL3,
    #[serde(rename = "TRUE_OOD")]
    TrueOod,
}

impl Membership {
    pub const ALL: [Membership; 5] = [
        Membership::Id,
        Membership::OodL1,
        Membership::OodL2,
        Membership::OodL3,
        Membership::TrueOod,
    ];

    pub fn from_level(level: HoldoutLevel) -> Self {
        match level {
            HoldoutLevel::L1 => Membership::OodL1,
            HoldoutLevel::L2 => Membership::OodL2,
            HoldoutLevel::L3 => Membership::OodL3,
        }
    }

    pub fn level(self) -> Option<HoldoutLevel> {
        match self {
            Membership::OodL1 => Some(HoldoutLevel::L1),
            Membership::OodL2 => Some(HoldoutLevel::L2),
            Membership::OodL3 => Some(HoldoutLevel::L3),
            _ => None,
        }
    }

    pub fn is_semantic(self) -> bool {
        self.level().is_some()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Membership::Id => "ID",
            Membership::OodL1 => "OOD_L1",
            Membership::OodL2 => "OOD_L2",
            Membership::OodL3 => "OOD_L3",
            Membership::TrueOod => "TRUE_OOD",
        }
    }
}

impl fmt::Display for Membership {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Membership {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Membership::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown membership '{s}'"))
    }
}

/// One scored test sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub record_id: String,
    pub score: f64,
    pub membership: Membership,
}

fn check_finite(scores: &[f64]) -> Result<(), MetricError> {
    match scores.iter().find(|s| !s.is_finite()) {
        Some(&s) => Err(MetricError::NonFinite(s)),
        None => Ok(()),
    }
}

fn cmp_scores(a: &f64, b: &f64) -> Ordering {
    // inputs are checked finite, so partial_cmp is total here and -0.0 == 0.0
    a.partial_cmp(b).expect("finite scores")
}

/// Area under the ROC curve via sort-and-rank with midranks.
pub fn auroc(pos: &[f64], neg: &[f64]) -> Result<f64, MetricError> {
    if pos.is_empty() {
        return Err(MetricError::EmptySet("positive"));
    }
    if neg.is_empty() {
        return Err(MetricError::EmptySet("negative"));
    }
    check_finite(pos)?;
    check_finite(neg)?;

    let mut all: Vec<(f64, bool)> = pos
        .iter()
        .map(|&s| (s, true))
        .chain(neg.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| cmp_scores(&a.0, &b.0));

    // Twice the positive rank sum; midrank of ranks i+1..=j is (i+1+j)/2.
    let mut rank_sum2: u64 = 0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i + 1;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        let pos_in_group = all[i..j].iter().filter(|(_, p)| *p).count() as u64;
        rank_sum2 += pos_in_group * (i as u64 + 1 + j as u64);
        i = j;
    }
    let n = pos.len() as u64;
    let m = neg.len() as u64;
    let u2 = rank_sum2 - n * (n + 1);
    Ok(u2 as f64 / (2 * n * m) as f64)
}

/// False-positive rate at the largest threshold reaching `tpr_target`.
pub fn fpr_at_tpr(pos: &[f64], neg: &[f64], tpr_target: f64) -> Result<f64, MetricError> {
    let tau = threshold_at_tpr(pos, tpr_target)?;
    if neg.is_empty() {
        return Err(MetricError::EmptySet("negative"));
    }
    check_finite(neg)?;
    let above = neg.iter().filter(|&&s| s >= tau).count();
    Ok(above as f64 / neg.len() as f64)
}

/// Largest `tau` with `#{pos >= tau} / n >= tpr_target`.
pub fn threshold_at_tpr(pos: &[f64], tpr_target: f64) -> Result<f64, MetricError> {
    if !(tpr_target > 0.0 && tpr_target <= 1.0) {
        return Err(MetricError::BadTarget(tpr_target));
    }
    if pos.is_empty() {
        return Err(MetricError::EmptySet("positive"));
    }
    check_finite(pos)?;
    let mut sorted = pos.to_vec();
    sorted.sort_by(|a, b| cmp_scores(b, a));
    let n = sorted.len();
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && sorted[j] == sorted[i] {
            j += 1;
        }
        if j as f64 / n as f64 >= tpr_target {
            return Ok(sorted[i]);
        }
        i = j;
    }
    Ok(sorted[n - 1])
}

/// Full ROC curve, ordered by decreasing threshold. The first point uses an
/// infinite threshold and sits at (0, 0); the last reaches (1, 1).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RocCurve {
    pub thresholds: Vec<f64>,
    pub tpr: Vec<f64>,
    pub fpr: Vec<f64>,
}

impl RocCurve {
    pub fn compute(pos: &[f64], neg: &[f64]) -> Result<Self, MetricError> {
        if pos.is_empty() {
            return Err(MetricError::EmptySet("positive"));
        }
        if neg.is_empty() {
            return Err(MetricError::EmptySet("negative"));
        }
        check_finite(pos)?;
        check_finite(neg)?;
        let mut all: Vec<(f64, bool)> = pos
            .iter()
            .map(|&s| (s, true))
            .chain(neg.iter().map(|&s| (s, false)))
            .collect();
        all.sort_by(|a, b| cmp_scores(&b.0, &a.0));
        let (n, m) = (pos.len() as f64, neg.len() as f64);
        let mut curve = RocCurve {
            thresholds: vec![f64::INFINITY],
            tpr: vec![0.0],
            fpr: vec![0.0],
        };
        let (mut tp, mut fp) = (0usize, 0usize);
        let mut i = 0;
        while i < all.len() {
            let t = all[i].0;
            while i < all.len() && all[i].0 == t {
                if all[i].1 {
                    tp += 1;
                } else {
                    fp += 1;
                }
                i += 1;
            }
            curve.thresholds.push(t);
            curve.tpr.push(tp as f64 / n);
            curve.fpr.push(fp as f64 / m);
        }
        Ok(curve)
    }

    /// Trapezoidal area; agrees with [`auroc`] up to rounding.
    pub fn area(&self) -> f64 {
        self.fpr
            .windows(2)
            .zip(self.tpr.windows(2))
            .map(|(f, t)| (f[1] - f[0]) * (t[0] + t[1]) / 2.0)
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricRow {
    pub set: String,
    pub auroc: f64,
    pub fpr95: f64,
    pub n_pos: usize,
    pub n_neg: usize,
}

impl MetricRow {
    pub fn compute(set: impl Into<String>, pos: &[f64], neg: &[f64]) -> Result<Self, MetricError> {
        Ok(MetricRow {
            set: set.into(),
            auroc: auroc(pos, neg)?,
            fpr95: fpr_at_tpr(pos, neg, TPR_95)?,
            n_pos: pos.len(),
            n_neg: neg.len(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
    pub id_accuracy: Option<f64>,
}

impl MetricReport {
    pub fn row(&self, set: &str) -> Option<&MetricRow> {
        self.rows.iter().find(|r| r.set == set)
    }
}

pub const ALL_ROW: &str = "All";
pub const ST_ROW: &str = "ST";

fn scores_where(records: &[ScoreRecord], pred: impl Fn(Membership) -> bool) -> Vec<f64> {
    records
        .iter()
        .filter(|r| pred(r.membership))
        .map(|r| r.score)
        .collect()
}

/// ID versus each present holdout level, then ID versus their union.
pub fn hierarchical_report(records: &[ScoreRecord]) -> Result<MetricReport, MetricError> {
    let id = scores_where(records, |m| m == Membership::Id);
    if id.is_empty() {
        return Err(MetricError::NoId);
    }
    let mut rows = Vec::new();
    for level in HoldoutLevel::ALL {
        let tag = Membership::from_level(level);
        let ood = scores_where(records, |m| m == tag);
        if !ood.is_empty() {
            rows.push(MetricRow::compute(level.as_str(), &id, &ood)?);
        }
    }
    if rows.is_empty() {
        return Err(MetricError::NoSemantic);
    }
    let union = scores_where(records, Membership::is_semantic);
    rows.push(MetricRow::compute(ALL_ROW, &id, &union)?);
    Ok(MetricReport {
        rows,
        id_accuracy: None,
    })
}

/// Semantic OOD (positive) versus true OOD (negative).
pub fn semantic_true_report(records: &[ScoreRecord]) -> Result<MetricRow, MetricError> {
    let semantic = scores_where(records, Membership::is_semantic);
    if semantic.is_empty() {
        return Err(MetricError::NoSemantic);
    }
    let true_ood = scores_where(records, |m| m == Membership::TrueOod);
    if true_ood.is_empty() {
        return Err(MetricError::NoTrueOod);
    }
    MetricRow::compute(ST_ROW, &semantic, &true_ood)
}

/// Hierarchical rows, plus the ST row whenever true-OOD records exist.
pub fn full_report(records: &[ScoreRecord]) -> Result<MetricReport, MetricError> {
    let mut report = hierarchical_report(records)?;
    if records.iter().any(|r| r.membership == Membership::TrueOod) {
        report.rows.push(semantic_true_report(records)?);
    }
    Ok(report)
}

/// Top-1 accuracy over labelled ID records; ties go to the lowest class index.
pub fn id_accuracy(records: &[LogitRecord]) -> Result<f64, MetricError> {
    let mut total = 0usize;
    let mut correct = 0usize;
    for r in records.iter().filter(|r| r.membership == Membership::Id) {
        if let Some(c) = r.true_class {
            total += 1;
            if argmax(r.logits.as_slice()) == c {
                correct += 1;
            }
        }
    }
    if total == 0 {
        return Err(MetricError::NoLabelled);
    }
    Ok(correct as f64 / total as f64)
}

/// Two-threshold view of a detector: `score >= tau_high` is ID,
/// `tau_low <= score < tau_high` is semantic OOD, anything lower is true OOD.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TernarySummary {
    pub tau_high: f64,
    pub tau_low: f64,
    /// `confusion[true][predicted]`, classes ordered ID, semantic, true.
    pub confusion: [[u64; 3]; 3],
}

impl TernarySummary {
    pub fn predict(&self, score: f64) -> usize {
        if score >= self.tau_high {
            0
        } else if score >= self.tau_low {
            1
        } else {
            2
        }
    }

    pub fn diagonal_fraction(&self) -> f64 {
        let total: u64 = self.confusion.iter().flatten().sum();
        let diag: u64 = (0..3).map(|i| self.confusion[i][i]).sum();
        diag as f64 / total as f64
    }
}

fn ternary_class(m: Membership) -> usize {
    match m {
        Membership::Id => 0,
        Membership::TrueOod => 2,
        _ => 1,
    }
}

pub fn ternary_threshold_summary(records: &[ScoreRecord]) -> Result<TernarySummary, MetricError> {
    let id = scores_where(records, |m| m == Membership::Id);
    if id.is_empty() {
        return Err(MetricError::NoId);
    }
    let semantic = scores_where(records, Membership::is_semantic);
    if semantic.is_empty() {
        return Err(MetricError::NoSemantic);
    }
    if !records.iter().any(|r| r.membership == Membership::TrueOod) {
        return Err(MetricError::NoTrueOod);
    }
    check_finite(&scores_where(records, |_| true))?;
    let mut summary = TernarySummary {
        tau_high: threshold_at_tpr(&id, TPR_95)?,
        tau_low: threshold_at_tpr(&semantic, TPR_95)?,
        confusion: [[0; 3]; 3],
    };
    for r in records {
        let predicted = summary.predict(r.score);
        summary.confusion[ternary_class(r.membership)][predicted] += 1;
    }
    Ok(summary)
}

/// Per-membership score counts over equal-width bins.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreHistogram {
    pub edges: Vec<f64>,
    pub counts: BTreeMap<Membership, Vec<u64>>,
}

pub fn score_histogram(records: &[ScoreRecord], bins: usize) -> Result<ScoreHistogram, MetricError> {
    if bins == 0 {
        return Err(MetricError::NoBins);
    }
    if records.is_empty() {
        return Err(MetricError::EmptySet("record"));
    }
    let scores = scores_where(records, |_| true);
    check_finite(&scores)?;
    let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let edges = (0..=bins).map(|i| lo + width * i as f64).collect();
    let mut counts: BTreeMap<Membership, Vec<u64>> = BTreeMap::new();
    for r in records {
        let b = (((r.score - lo) / width) as usize).min(bins - 1);
        counts.entry(r.membership).or_insert_with(|| vec![0; bins])[b] += 1;
    }
    Ok(ScoreHistogram { edges, counts })
}
