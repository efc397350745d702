//! Multi-seed, multi-method sweep over the synthetic benchmark.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::io::{to_pretty_json, write_text};
use super::render::{aggregate, render_table, AggregateRow, ReportFile};
use super::{CliError, RunProvenance};
use crate::detectors::DetectorConfig;
use crate::losses::LossKind;
use crate::trainer::{evaluate, generate_synthetic, init_model, train, MlpModel, SynthConfig, SynthData, TrainConfig, TrainData};

/// A training objective paired with the detector used to score it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSpec {
    pub name: String,
    pub loss: LossKind,
    pub detector: DetectorConfig,
}

impl MethodSpec {
    pub fn new(name: &str, loss: LossKind, detector: DetectorConfig) -> Self {
        MethodSpec {
            name: name.to_string(),
            loss,
            detector,
        }
    }

    /// The six method/detector combinations of the benchmark tables.
    pub fn roster() -> Vec<MethodSpec> {
        vec![
            MethodSpec::new("Baseline", LossKind::Baseline, DetectorConfig::msp()),
            MethodSpec::new("OE", LossKind::Oe, DetectorConfig::msp()),
            MethodSpec::new(
                "OE t=1000",
                LossKind::Oe,
                DetectorConfig::msp_temp(DetectorConfig::SCALED_TEMPERATURE),
            ),
            MethodSpec::new("Energy", LossKind::Energy, DetectorConfig::energy()),
            MethodSpec::new("MixOE", LossKind::MixOe, DetectorConfig::msp()),
            MethodSpec::new("TernaryMixOE", LossKind::TernaryMixOe, DetectorConfig::msp()),
        ]
    }

    fn slug(&self) -> String {
        self.name
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '-' })
            .collect()
    }
}

fn default_seeds() -> Vec<u64> {
    (0..5).collect()
}

fn default_train() -> TrainConfig {
    TrainConfig::new(LossKind::Baseline)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub synth: SynthConfig,
    /// Template for every run; each method replaces `loss.kind` and both
    /// seeds are replaced by the run seed.
    #[serde(default = "default_train")]
    pub train: TrainConfig,
    #[serde(default = "MethodSpec::roster")]
    pub methods: Vec<MethodSpec>,
    /// Worker threads; all cores when unset.
    #[serde(default)]
    pub workers: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seeds: default_seeds(),
            synth: SynthConfig::default(),
            train: default_train(),
            methods: MethodSpec::roster(),
            workers: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        if self.seeds.is_empty() || self.methods.is_empty() {
            return Err(CliError::Config("experiment needs at least one seed and one method".into()));
        }
        let names: BTreeSet<&str> = self.methods.iter().map(|m| m.name.as_str()).collect();
        if names.len() != self.methods.len() {
            return Err(CliError::Config("method names must be unique".into()));
        }
        if self.seeds.iter().collect::<BTreeSet<_>>().len() != self.seeds.len() {
            return Err(CliError::Config("seeds must be unique".into()));
        }
        if self.workers == Some(0) {
            return Err(CliError::Config("workers must be positive".into()));
        }
        self.synth.validate()?;
        for m in &self.methods {
            m.detector.validate()?;
            self.run_config(m.loss, 0).validate()?;
        }
        Ok(())
    }

    fn run_config(&self, kind: LossKind, seed: u64) -> TrainConfig {
        let mut t = self.train.clone();
        t.loss.kind = kind;
        t.seed = seed;
        t.mix.rng_seed = seed;
        t
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub method: String,
    pub seed: u64,
    pub exit_code: i32,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutcome {
    /// Successful runs, method-major then by seed.
    pub reports: Vec<ReportFile>,
    pub failures: Vec<RunFailure>,
    pub aggregate: Vec<AggregateRow>,
}

impl ExperimentOutcome {
    pub fn succeeded(&self) -> bool {
        self.failures.is_empty()
    }
}

fn train_one(data: &SynthData, tcfg: &TrainConfig) -> Result<MlpModel, CliError> {
    let td = TrainData::from_synth(data)?;
    let init = init_model(tcfg, td.dims(), td.num_classes)?;
    Ok(train(&init, &td, tcfg)?.0)
}

/// Generate data once per seed, train once per distinct objective and seed,
/// then score each method. A failed run is recorded and skipped.
pub fn run_experiment(cfg: &ExperimentConfig, config_hash: &str) -> Result<ExperimentOutcome, CliError> {
    cfg.validate()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cfg.workers {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| CliError::Config(format!("worker pool: {e}")))?;

    let kinds: Vec<LossKind> = cfg.methods.iter().fold(Vec::new(), |mut acc, m| {
        if !acc.contains(&m.loss) {
            acc.push(m.loss);
        }
        acc
    });

    let (datasets, models) = pool.install(|| {
        let datasets: Vec<Result<SynthData, CliError>> = cfg
            .seeds
            .par_iter()
            .map(|&seed| {
                let sc = SynthConfig { seed, ..cfg.synth.clone() };
                generate_synthetic(&sc).map_err(CliError::from)
            })
            .collect();
        let jobs: Vec<(usize, usize)> = (0..kinds.len())
            .flat_map(|k| (0..cfg.seeds.len()).map(move |s| (k, s)))
            .collect();
        let models: Vec<Result<MlpModel, (i32, String)>> = jobs
            .par_iter()
            .map(|&(k, s)| match &datasets[s] {
                Ok(data) => train_one(data, &cfg.run_config(kinds[k], cfg.seeds[s])).map_err(|e| (e.exit_code(), e.to_string())),
                Err(e) => Err((e.exit_code(), e.to_string())),
            })
            .collect();
        (datasets, models)
    });

    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for m in &cfg.methods {
        let k = kinds.iter().position(|&x| x == m.loss).expect("kind listed");
        for (s, &seed) in cfg.seeds.iter().enumerate() {
            let fail = |code: i32, error: String| RunFailure {
                method: m.name.clone(),
                seed,
                exit_code: code,
                error,
            };
            let model = match &models[k * cfg.seeds.len() + s] {
                Ok(model) => model,
                Err((code, msg)) => {
                    failures.push(fail(*code, msg.clone()));
                    continue;
                }
            };
            let data = datasets[s].as_ref().expect("model implies data");
            match evaluate(model, &data.test, &m.detector) {
                Ok(report) => reports.push(ReportFile::new(
                    Some(m.name.clone()),
                    report,
                    m.detector.label(),
                    RunProvenance::new(config_hash, seed),
                )),
                Err(e) => {
                    let e = CliError::from(e);
                    failures.push(fail(e.exit_code(), e.to_string()));
                }
            }
        }
    }
    let aggregate = aggregate(&reports);
    Ok(ExperimentOutcome {
        reports,
        failures,
        aggregate,
    })
}

/// Per-run reports under `runs/`, then the aggregate as JSON, CSV and text,
/// and `failures.json` when any run failed.
pub fn write_experiment(dir: &Path, outcome: &ExperimentOutcome, methods: &[MethodSpec]) -> Result<Vec<PathBuf>, CliError> {
    let mut written = Vec::new();
    let mut put = |name: PathBuf, text: String| -> Result<(), CliError> {
        write_text(&name, &text)?;
        written.push(name);
        Ok(())
    };
    for r in &outcome.reports {
        let method = methods
            .iter()
            .find(|m| Some(&m.name) == r.method.as_ref())
            .expect("report comes from a listed method");
        put(
            dir.join("runs").join(format!("{}_seed{}.json", method.slug(), r.provenance.seed)),
            r.to_json(),
        )?;
    }
    let table = render_table(&outcome.aggregate);
    put(dir.join("aggregate.json"), to_pretty_json(&outcome.aggregate))?;
    put(dir.join("aggregate.csv"), table.to_csv())?;
    put(dir.join("aggregate.txt"), table.to_text())?;
    if !outcome.failures.is_empty() {
        put(dir.join("failures.json"), to_pretty_json(&outcome.failures))?;
    }
    Ok(written)
}
