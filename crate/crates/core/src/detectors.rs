//! Logit-to-score detectors. Every score is oriented so that higher means
//! more in-distribution.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{Membership, ScoreRecord};
use crate::numeric::log_sum_exp;

#[derive(Debug, Error, PartialEq)]
pub enum DetectorError {
    #[error("logits need at least two classes, got {0}")]
    TooFewClasses(usize),
    #[error("non-finite logit at index {0}")]
    NonFinite(usize),
    #[error("temperature must be positive and finite, got {0}")]
    BadTemperature(f64),
    #[error("record '{record}' has {got} logits, expected {expected}")]
    DimensionMismatch {
        record: String,
        got: usize,
        expected: usize,
    },
}

/// Finite logit vector with at least two classes.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Logits(Vec<f64>);

impl Logits {
    pub fn new(values: Vec<f64>) -> Result<Self, DetectorError> {
        if values.len() < 2 {
            return Err(DetectorError::TooFewClasses(values.len()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(DetectorError::NonFinite(i));
        }
        Ok(Logits(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl<'de> Deserialize<'de> for Logits {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = Vec::<f64>::deserialize(d)?;
        Logits::new(v).map_err(serde::de::Error::custom)
    }
}

impl TryFrom<Vec<f64>> for Logits {
    type Error = DetectorError;

    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        Logits::new(v)
    }
}

fn check_temperature(t: f64) -> Result<(), DetectorError> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(DetectorError::BadTemperature(t))
    }
}

/// Maximum softmax probability of `logits / temperature`.
pub fn msp_score(logits: &Logits, temperature: f64) -> Result<f64, DetectorError> {
    check_temperature(temperature)?;
    let l = logits.as_slice();
    let scaled_max = l.iter().copied().fold(f64::NEG_INFINITY, f64::max) / temperature;
    // max_k softmax = exp(max/T) / Σ exp(l_k/T) = 1 / Σ exp((l_k - max)/T)
    let denom: f64 = l.iter().map(|v| (v / temperature - scaled_max).exp()).sum();
    Ok(1.0 / denom)
}

/// Negative free energy `T · log Σ exp(l_k / T)`.
pub fn energy_score(logits: &Logits, temperature: f64) -> Result<f64, DetectorError> {
    check_temperature(temperature)?;
    let scaled: Vec<f64> = logits.as_slice().iter().map(|v| v / temperature).collect();
    Ok(temperature * log_sum_exp(&scaled))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DetectorKind {
    Msp,
    MspTemp,
    Energy,
}

impl FromStr for DetectorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "msp" => Ok(DetectorKind::Msp),
            "msp-temp" => Ok(DetectorKind::MspTemp),
            "energy" => Ok(DetectorKind::Energy),
            other => Err(format!("unknown detector '{other}' (msp, msp-temp, energy)")),
        }
    }
}

impl fmt::Display for DetectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DetectorKind::Msp => "msp",
            DetectorKind::MspTemp => "msp-temp",
            DetectorKind::Energy => "energy",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorConfig {
    pub kind: DetectorKind,
    pub temperature: f64,
}

impl DetectorConfig {
    pub const SCALED_TEMPERATURE: f64 = 1000.0;

    pub fn msp() -> Self {
        DetectorConfig {
            kind: DetectorKind::Msp,
            temperature: 1.0,
        }
    }

    pub fn msp_temp(temperature: f64) -> Self {
        DetectorConfig {
            kind: DetectorKind::MspTemp,
            temperature,
        }
    }

    pub fn energy() -> Self {
        DetectorConfig {
            kind: DetectorKind::Energy,
            temperature: 1.0,
        }
    }

    /// Default temperature for each kind.
    pub fn for_kind(kind: DetectorKind) -> Self {
        match kind {
            DetectorKind::Msp => Self::msp(),
            DetectorKind::MspTemp => Self::msp_temp(Self::SCALED_TEMPERATURE),
            DetectorKind::Energy => Self::energy(),
        }
    }

    pub fn validate(&self) -> Result<(), DetectorError> {
        check_temperature(self.temperature)
    }

    pub fn score(&self, logits: &Logits) -> Result<f64, DetectorError> {
        match self.kind {
            DetectorKind::Msp | DetectorKind::MspTemp => msp_score(logits, self.temperature),
            DetectorKind::Energy => energy_score(logits, self.temperature),
        }
    }

    /// Short label used in tables, e.g. `MSP (t=1000)`.
    pub fn label(&self) -> String {
        match self.kind {
            DetectorKind::Msp if self.temperature == 1.0 => "MSP".to_string(),
            DetectorKind::Msp | DetectorKind::MspTemp => format!("MSP (t={})", self.temperature),
            DetectorKind::Energy => "Energy".to_string(),
        }
    }
}

/// A test sample as seen by a detector: its logits plus evaluation tags.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitRecord {
    pub record_id: String,
    pub membership: Membership,
    pub logits: Logits,
    pub true_class: Option<usize>,
}

/// Score every record; every logit vector must have exactly `num_classes` entries.
pub fn score_batch(
    records: &[LogitRecord],
    cfg: &DetectorConfig,
    num_classes: usize,
) -> Result<Vec<ScoreRecord>, DetectorError> {
    cfg.validate()?;
    records
        .iter()
        .map(|r| {
            if r.logits.len() != num_classes {
                return Err(DetectorError::DimensionMismatch {
                    record: r.record_id.clone(),
                    got: r.logits.len(),
                    expected: num_classes,
                });
            }
            Ok(ScoreRecord {
                record_id: r.record_id.clone(),
                score: cfg.score(&r.logits)?,
                membership: r.membership,
            })
        })
        .collect()
}
