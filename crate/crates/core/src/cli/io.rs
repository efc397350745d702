//! File formats: line-delimited score/logit records, sample files and the
//! synthetic data directory layout.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{CliError, RunProvenance};
use crate::detectors::{LogitRecord, Logits};
use crate::hierarchy::SplitManifest;
use crate::metrics::{Membership, ScoreRecord};
use crate::trainer::{Sample, SynthConfig, SynthData};

/// One line of a scores file. Exactly one of `logits` and `score` is set, and
/// every line of a file uses the same one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreLine {
    pub record_id: String,
    pub membership: Membership,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logits: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_class: Option<usize>,
}

impl From<&LogitRecord> for ScoreLine {
    fn from(r: &LogitRecord) -> Self {
        ScoreLine {
            record_id: r.record_id.clone(),
            membership: r.membership,
            logits: Some(r.logits.as_slice().to_vec()),
            score: None,
            true_class: r.true_class,
        }
    }
}

impl From<&ScoreRecord> for ScoreLine {
    fn from(r: &ScoreRecord) -> Self {
        ScoreLine {
            record_id: r.record_id.clone(),
            membership: r.membership,
            logits: None,
            score: Some(r.score),
            true_class: None,
        }
    }
}

/// A validated scores file: either raw logits or detector scores.
#[derive(Debug, Clone, PartialEq)]
pub enum ScoresFile {
    Logits { records: Vec<LogitRecord>, num_classes: usize },
    Scores(Vec<ScoreRecord>),
}

impl ScoresFile {
    pub fn len(&self) -> usize {
        match self {
            ScoresFile::Logits { records, .. } => records.len(),
            ScoresFile::Scores(r) => r.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn line_err(path: &Path, line: usize, reason: impl Into<String>) -> CliError {
    CliError::Line {
        path: path.to_path_buf(),
        line,
        reason: reason.into(),
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    #[serde(rename = "provenance")]
    _provenance: RunProvenance,
}

fn is_provenance_header(raw: &str) -> bool {
    serde_json::from_str::<Header>(raw).is_ok()
}

/// `{"provenance": ...}` line that may open a records file.
pub fn provenance_header(p: &RunProvenance) -> String {
    let mut s = serde_json::to_string(&serde_json::json!({ "provenance": p })).expect("provenance serializes");
    s.push('\n');
    s
}

/// Parse scores text, skipping an opening provenance header. `path` only
/// labels errors.
pub fn parse_scores(text: &str, path: &Path) -> Result<ScoresFile, CliError> {
    let mut logits = Vec::new();
    let mut scores = Vec::new();
    let mut k: Option<usize> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        if line == 1 && is_provenance_header(raw) {
            continue;
        }
        let rec: ScoreLine = serde_json::from_str(raw).map_err(|e| line_err(path, line, e.to_string()))?;
        match (rec.logits, rec.score) {
            (Some(_), Some(_)) => return Err(line_err(path, line, "record has both 'logits' and 'score'")),
            (None, None) => return Err(line_err(path, line, "record has neither 'logits' nor 'score'")),
            (Some(l), None) => {
                if !scores.is_empty() {
                    return Err(line_err(path, line, "heterogeneous file: logits after pre-scored records"));
                }
                match k {
                    None => k = Some(l.len()),
                    Some(k) if k != l.len() => {
                        return Err(line_err(path, line, format!("{} logits, earlier lines have {k}", l.len())))
                    }
                    _ => {}
                }
                let l = Logits::new(l).map_err(|e| line_err(path, line, e.to_string()))?;
                if let Some(c) = rec.true_class {
                    if c >= l.len() {
                        return Err(line_err(path, line, format!("true_class {c} out of range")));
                    }
                }
                logits.push(LogitRecord {
                    record_id: rec.record_id,
                    membership: rec.membership,
                    logits: l,
                    true_class: rec.true_class,
                });
            }
            (None, Some(s)) => {
                if !logits.is_empty() {
                    return Err(line_err(path, line, "heterogeneous file: score after logits records"));
                }
                if !s.is_finite() {
                    return Err(line_err(path, line, format!("non-finite score {s}")));
                }
                scores.push(ScoreRecord {
                    record_id: rec.record_id,
                    score: s,
                    membership: rec.membership,
                });
            }
        }
    }
    if let Some(num_classes) = k {
        Ok(ScoresFile::Logits {
            records: logits,
            num_classes,
        })
    } else if scores.is_empty() {
        Err(CliError::Data(format!("{}: no records", path.display())))
    } else {
        Ok(ScoresFile::Scores(scores))
    }
}

/// Read and validate a scores file; errors carry the offending line number.
pub fn ingest_scores(path: &Path) -> Result<ScoresFile, CliError> {
    let text = read_text(path)?;
    parse_scores(&text, path)
}

pub fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

/// Write a file, creating parent directories.
pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn to_jsonl<T: Serialize>(items: impl IntoIterator<Item = T>) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(&item).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, CliError> {
    read_text(path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| line_err(path, i + 1, e.to_string())))
        .collect()
}

pub fn to_pretty_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("value serializes");
    s.push('\n');
    s
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    serde_json::from_str(&read_text(path)?).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Metadata written next to generated data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataInfo {
    pub dims: usize,
    pub num_classes: usize,
    pub synth: Option<SynthConfig>,
    pub provenance: RunProvenance,
}

/// A data directory as consumed by `train` and `evaluate`.
#[derive(Debug, Clone, PartialEq)]
pub struct DataDir {
    pub info: DataInfo,
    pub manifest: SplitManifest,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
    pub outliers: Vec<Sample>,
}

pub const DATA_INFO: &str = "data.json";
pub const MANIFEST: &str = "manifest.json";
pub const HIERARCHY: &str = "hierarchy.json";
pub const TRAIN: &str = "train.jsonl";
pub const TEST: &str = "test.jsonl";
pub const OUTLIERS: &str = "outliers.jsonl";

/// Lay out generated data as `data.json`, `manifest.json`, `hierarchy.json`
/// and one JSONL file per sample set.
pub fn write_data_dir(dir: &Path, data: &SynthData, cfg: &SynthConfig, provenance: RunProvenance) -> Result<Vec<PathBuf>, CliError> {
    let info = DataInfo {
        dims: cfg.dims,
        num_classes: data.manifest.num_classes(),
        synth: Some(cfg.clone()),
        provenance,
    };
    let files = [
        (DATA_INFO, to_pretty_json(&info)),
        (MANIFEST, data.manifest.to_json()),
        (HIERARCHY, data.hierarchy.to_json()),
        (TRAIN, to_jsonl(&data.train)),
        (TEST, to_jsonl(&data.test)),
        (OUTLIERS, to_jsonl(&data.outliers)),
    ];
    let mut written = Vec::new();
    for (name, text) in files {
        let p = dir.join(name);
        write_text(&p, &text)?;
        written.push(p);
    }
    Ok(written)
}

pub fn read_data_dir(dir: &Path) -> Result<DataDir, CliError> {
    let info: DataInfo = read_json(&dir.join(DATA_INFO))?;
    let manifest_path = dir.join(MANIFEST);
    let manifest = SplitManifest::from_json(&read_text(&manifest_path)?)
        .map_err(|e| CliError::Data(format!("{}: {e}", manifest_path.display())))?;
    if manifest.num_classes() != info.num_classes {
        return Err(CliError::Data(format!(
            "{}: manifest has {} classes, data.json says {}",
            dir.display(),
            manifest.num_classes(),
            info.num_classes
        )));
    }
    let outliers_path = dir.join(OUTLIERS);
    let outliers = if outliers_path.exists() {
        read_jsonl(&outliers_path)?
    } else {
        Vec::new()
    };
    Ok(DataDir {
        train: read_jsonl(&dir.join(TRAIN))?,
        test: read_jsonl(&dir.join(TEST))?,
        outliers,
        info,
        manifest,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ScoresFile, CliError> {
        parse_scores(text, Path::new("s.jsonl"))
    }

    fn line_of(e: CliError) -> usize {
        match e {
            CliError::Line { line, .. } => line,
            other => panic!("expected a line error, got {other}"),
        }
    }

    #[test]
    fn well_formed_file() {
        let text = r#"{"record_id":"a","membership":"ID","logits":[1.0,2.0,0.5],"true_class":1}
{"record_id":"b","membership":"OOD_L1","logits":[0.0,0.0,0.0]}
{"record_id":"c","membership":"TRUE_OOD","logits":[3.0,-1.0,0.0]}
"#;
        match parse(text).unwrap() {
            ScoresFile::Logits { records, num_classes } => {
                assert_eq!(records.len(), 3);
                assert_eq!(num_classes, 3);
                assert_eq!(records[0].true_class, Some(1));
                assert_eq!(records[2].membership, Membership::TrueOod);
            }
            other => panic!("{other:?}"),
        }
        let scored = "{\"record_id\":\"a\",\"membership\":\"ID\",\"score\":0.5}\n\n";
        assert_eq!(parse(scored).unwrap().len(), 1);
    }

    #[test]
    fn ragged_logits_fail_at_first_bad_line() {
        let text = r#"{"record_id":"a","membership":"ID","logits":[1.0,2.0]}
{"record_id":"b","membership":"ID","logits":[1.0,2.0]}
{"record_id":"c","membership":"ID","logits":[1.0,2.0,3.0]}
{"record_id":"d","membership":"ID","logits":[1.0]}
"#;
        assert_eq!(line_of(parse(text).unwrap_err()), 3);
    }

    #[test]
    fn mixed_fields_are_rejected() {
        let text = r#"{"record_id":"a","membership":"ID","logits":[1.0,2.0]}
{"record_id":"b","membership":"ID","score":0.3}
"#;
        let e = parse(text).unwrap_err();
        assert!(e.to_string().contains("heterogeneous"), "{e}");
        assert_eq!(line_of(e), 2);
        let both = r#"{"record_id":"a","membership":"ID","logits":[1.0,2.0],"score":1.0}"#;
        assert_eq!(line_of(parse(both).unwrap_err()), 1);
    }

    #[test]
    fn bad_lines() {
        let unknown = "{\"record_id\":\"a\",\"membership\":\"ID\",\"score\":1.0}\n{\"record_id\":\"b\",\"membership\":\"OOD_L4\",\"score\":1.0}";
        let e = parse(unknown).unwrap_err();
        assert!(e.to_string().contains("OOD_L4"), "{e}");
        assert_eq!(line_of(e), 2);
        assert_eq!(line_of(parse("not json").unwrap_err()), 1);
        let extra = r#"{"record_id":"a","membership":"ID","score":1.0,"weight":2}"#;
        assert!(parse(extra).unwrap_err().to_string().contains("weight"));
        let range = r#"{"record_id":"a","membership":"ID","logits":[1.0,2.0],"true_class":2}"#;
        assert_eq!(line_of(parse(range).unwrap_err()), 1);
        assert!(matches!(parse("\n").unwrap_err(), CliError::Data(_)));
    }

    #[test]
    fn lines_round_trip() {
        let rec = LogitRecord {
            record_id: "x".into(),
            membership: Membership::OodL2,
            logits: Logits::new(vec![0.1, -2.5, 1e-17]).unwrap(),
            true_class: None,
        };
        let text = to_jsonl([ScoreLine::from(&rec)]);
        match parse(&text).unwrap() {
            ScoresFile::Logits { records, .. } => assert_eq!(records, vec![rec]),
            other => panic!("{other:?}"),
        }
    }
}
