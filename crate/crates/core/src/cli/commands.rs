use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use super::experiment::{run_experiment, write_experiment, ExperimentConfig};
use super::io::{
    ingest_scores, provenance_header, read_data_dir, read_text, to_jsonl, to_pretty_json, write_data_dir, write_text,
    ScoreLine, ScoresFile,
};
use super::render::{aggregate, render_table, ReportFile, Table};
use super::{CliError, RunConfig, RunProvenance, SplitSection, OUT_DIR_ENV};
use crate::detectors::{score_batch, DetectorConfig, DetectorKind};
use crate::hierarchy::{bundled, compile_split, emit_manifest, parse_hierarchy, Holdout, LabelHierarchy, SplitManifest};
use crate::metrics::{full_report, id_accuracy, score_histogram, Membership, ScoreRecord};
use crate::trainer::{generate_synthetic, init_model, logit_records, train, MlpModel, TrainConfig, TrainData};

#[derive(Debug, Parser)]
#[command(name = "hierood", version, about = "Fine-grained OOD detection toolkit")]
pub struct Cli {
    /// Seed overriding any seed in the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output file or directory (meaning depends on the command).
    #[arg(long, global = true)]
    pub out: Option<String>,
    /// Versioned JSON run config.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Suppress the summary printed on success.
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compile holdout rules over a hierarchy into a split manifest.
    Split {
        #[command(subcommand)]
        action: SplitAction,
    },
    /// Generate a synthetic hierarchical dataset directory.
    Synth,
    /// Train a model on a data directory; `--out MODEL[,LOG]`.
    Train {
        #[arg(long)]
        data: PathBuf,
    },
    /// Turn a logits file into a detector-scores file.
    Score {
        #[command(flatten)]
        detector: DetectorArgs,
        #[arg(long)]
        logits: PathBuf,
    },
    /// Score a data directory's test set with a trained model.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        detector: DetectorArgs,
        /// Also write the test logits here.
        #[arg(long)]
        logits_out: Option<PathBuf>,
    },
    /// Metric report from a logits or scores file.
    Report {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        detector: DetectorArgs,
        /// Rendered one-row table (CSV).
        #[arg(long)]
        table: Option<PathBuf>,
        /// Binned score counts per membership (JSON).
        #[arg(long)]
        histogram: Option<PathBuf>,
        #[arg(long, default_value_t = 20)]
        bins: usize,
    },
    /// Seeds x methods sweep on synthetic data with an aggregate table.
    Experiment,
    /// Render report files (or re-render a table CSV).
    Render {
        #[arg(long, num_args = 1..)]
        reports: Vec<PathBuf>,
        #[arg(long, conflicts_with = "reports")]
        csv: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum SplitAction {
    Compile {
        /// Hierarchy spec file, or `bundled:fgvc-aircraft` / `bundled:ships-rs`.
        #[arg(long)]
        hierarchy: Option<String>,
        /// Holdout as NODE=L1|L2|L3; repeatable.
        #[arg(long = "holdout")]
        holdouts: Vec<String>,
    },
}

#[derive(Debug, Clone, Args)]
pub struct DetectorArgs {
    #[arg(long)]
    detector: Option<String>,
    #[arg(long)]
    temperature: Option<f64>,
}

impl DetectorArgs {
    fn resolve(&self, from_config: Option<DetectorConfig>) -> Result<DetectorConfig, CliError> {
        let mut cfg = match &self.detector {
            Some(k) => DetectorConfig::for_kind(k.parse::<DetectorKind>().map_err(CliError::Config)?),
            None => from_config.unwrap_or_else(DetectorConfig::msp),
        };
        if let Some(t) = self.temperature {
            cfg.temperature = t;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

struct Ctx {
    cfg: RunConfig,
    out: Option<String>,
    quiet: bool,
}

impl Ctx {
    /// `--out`, else the default name; relative paths land under the
    /// override directory (env) or the config's `out_dir`.
    fn out_path(&self, out: Option<&str>, default: &str) -> PathBuf {
        let p = PathBuf::from(out.unwrap_or(default));
        if p.is_absolute() {
            return p;
        }
        match std::env::var_os(OUT_DIR_ENV) {
            Some(dir) if !dir.is_empty() => PathBuf::from(dir).join(p),
            _ => match &self.cfg.out_dir {
                Some(dir) => dir.join(p),
                None => p,
            },
        }
    }

    fn provenance(&self, seed: u64) -> RunProvenance {
        RunProvenance::new(self.cfg.hash(), seed)
    }

    fn say(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", msg.as_ref());
        }
    }
}

/// Parse arguments and execute; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute(cli: Cli) -> Result<i32, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::new(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = Some(s);
    }
    let ctx = Ctx {
        cfg,
        out: cli.out,
        quiet: cli.quiet,
    };
    match cli.command {
        Command::Split {
            action: SplitAction::Compile { hierarchy, holdouts },
        } => split(&ctx, hierarchy, &holdouts),
        Command::Synth => synth(&ctx),
        Command::Train { data } => train_cmd(&ctx, &data),
        Command::Score { detector, logits } => score(&ctx, &detector, &logits),
        Command::Evaluate {
            model,
            data,
            detector,
            logits_out,
        } => evaluate_cmd(&ctx, &model, &data, &detector, logits_out.as_deref()),
        Command::Report {
            scores,
            manifest,
            detector,
            table,
            histogram,
            bins,
        } => report(&ctx, &scores, &manifest, &detector, table.as_deref(), histogram.as_deref(), bins),
        Command::Experiment => experiment(&ctx),
        Command::Render { reports, csv } => render(&ctx, &reports, csv.as_deref()),
    }
}

fn load_hierarchy(spec: &str) -> Result<LabelHierarchy, CliError> {
    match spec {
        "bundled:fgvc-aircraft" => Ok(bundled::fgvc_aircraft()),
        "bundled:ships-rs" => Ok(bundled::ships_rs()),
        path => Ok(parse_hierarchy(&read_text(Path::new(path))?)?),
    }
}

fn split(ctx: &Ctx, hierarchy: Option<String>, holdouts: &[String]) -> Result<i32, CliError> {
    let section = match (hierarchy, &ctx.cfg.split) {
        (Some(h), _) => SplitSection {
            hierarchy: h,
            holdouts: holdouts.iter().map(|s| s.parse()).collect::<Result<Vec<Holdout>, _>>()?,
        },
        (None, Some(s)) if holdouts.is_empty() => s.clone(),
        (None, Some(_)) => return Err(CliError::Config("--holdout needs --hierarchy".into())),
        (None, None) => return Err(CliError::Config("no hierarchy: pass --hierarchy or a config with a split section".into())),
    };
    let h = load_hierarchy(&section.hierarchy)?;
    let plan = compile_split(&h, &section.holdouts)?;
    let manifest = emit_manifest(&plan);
    let out = ctx.out_path(ctx.out.as_deref(), "manifest.json");
    write_text(&out, &manifest.to_json())?;
    ctx.say(format!(
        "{}: {} ID classes, {} held-out leaves -> {}",
        h.id(),
        manifest.num_classes(),
        manifest.ood_sets.values().map(Vec::len).sum::<usize>(),
        out.display()
    ));
    Ok(0)
}

fn synth(ctx: &Ctx) -> Result<i32, CliError> {
    let mut sc = ctx.cfg.synth.clone().unwrap_or_default();
    if let Some(s) = ctx.cfg.seed {
        sc.seed = s;
    }
    let data = generate_synthetic(&sc)?;
    let dir = ctx.out_path(ctx.out.as_deref(), "data");
    write_data_dir(&dir, &data, &sc, ctx.provenance(sc.seed))?;
    ctx.say(format!(
        "{} train / {} test / {} outlier samples, {} classes -> {}",
        data.train.len(),
        data.test.len(),
        data.outliers.len(),
        data.manifest.num_classes(),
        dir.display()
    ));
    Ok(0)
}

fn train_config(ctx: &Ctx) -> Result<TrainConfig, CliError> {
    let mut tc = ctx
        .cfg
        .train
        .clone()
        .ok_or_else(|| CliError::Config("config has no train section".into()))?;
    if let Some(s) = ctx.cfg.seed {
        tc.seed = s;
        tc.mix.rng_seed = s;
    }
    Ok(tc)
}

fn train_cmd(ctx: &Ctx, data_dir: &Path) -> Result<i32, CliError> {
    let tc = train_config(ctx)?;
    let data = read_data_dir(data_dir)?;
    let td = TrainData::from_samples(&data.train, &data.outliers, data.manifest.num_classes())?;
    let init = init_model(&tc, td.dims(), td.num_classes)?;
    let (model, logs) = train(&init, &td, &tc)?;

    let spec = ctx.out.clone().unwrap_or_else(|| "model.json,train_log.jsonl".into());
    let (model_name, log_name) = match spec.split_once(',') {
        Some((m, l)) => (m.to_string(), l.to_string()),
        None => (spec.clone(), format!("{spec}.log.jsonl")),
    };
    let model_path = ctx.out_path(Some(&model_name), "");
    let log_path = ctx.out_path(Some(&log_name), "");
    let prov = ctx.provenance(tc.seed);
    write_text(&model_path, &model.to_json_with(Some(serde_json::to_value(&prov).expect("provenance"))))?;
    write_text(&log_path, &(provenance_header(&prov) + &to_jsonl(&logs)))?;
    if let Some(last) = logs.last() {
        ctx.say(format!(
            "{} epochs, final total {:.6} (ce {:.6}) -> {}",
            logs.len(),
            last.total,
            last.ce,
            model_path.display()
        ));
    }
    Ok(0)
}

fn score(ctx: &Ctx, args: &DetectorArgs, logits: &Path) -> Result<i32, CliError> {
    let det = args.resolve(ctx.cfg.score)?;
    let (records, k) = match ingest_scores(logits)? {
        ScoresFile::Logits { records, num_classes } => (records, num_classes),
        ScoresFile::Scores(_) => return Err(CliError::Data(format!("{}: already scored", logits.display()))),
    };
    let scored = score_batch(&records, &det, k)?;
    let out = ctx.out_path(ctx.out.as_deref(), "scores.jsonl");
    let prov = ctx.provenance(ctx.cfg.seed.unwrap_or(0));
    write_text(&out, &(provenance_header(&prov) + &to_jsonl(scored.iter().map(ScoreLine::from))))?;
    ctx.say(format!("{} records scored with {} -> {}", scored.len(), det.label(), out.display()));
    Ok(0)
}

fn load_model(path: &Path) -> Result<MlpModel, CliError> {
    MlpModel::from_json(&read_text(path)?).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn evaluate_cmd(
    ctx: &Ctx,
    model_path: &Path,
    data_dir: &Path,
    args: &DetectorArgs,
    logits_out: Option<&Path>,
) -> Result<i32, CliError> {
    let det = args.resolve(ctx.cfg.evaluate)?;
    let model = load_model(model_path)?;
    let data = read_data_dir(data_dir)?;
    if model.num_classes() != data.manifest.num_classes() {
        return Err(CliError::Data(format!(
            "model has {} outputs, manifest has {} classes",
            model.num_classes(),
            data.manifest.num_classes()
        )));
    }
    let records = logit_records(&model, &data.test)?;
    let seed = ctx.cfg.seed.unwrap_or(data.info.provenance.seed);
    let prov = ctx.provenance(seed);
    if let Some(p) = logits_out {
        let p = ctx.out_path(Some(&p.to_string_lossy()), "");
        write_text(&p, &(provenance_header(&prov) + &to_jsonl(records.iter().map(ScoreLine::from))))?;
    }
    let scores = score_batch(&records, &det, model.num_classes())?;
    let mut rep = full_report(&scores)?;
    rep.id_accuracy = id_accuracy(&records).ok();
    let file = ReportFile::new(None, rep, det.label(), prov);
    let out = ctx.out_path(ctx.out.as_deref(), "report.json");
    write_text(&out, &file.to_json())?;
    ctx.say(render_table(&aggregate(std::slice::from_ref(&file))).to_text());
    Ok(0)
}

fn check_memberships(records: &[ScoreRecord], manifest: &SplitManifest) -> Result<(), CliError> {
    for r in records {
        if let Some(level) = r.membership.level() {
            if !manifest.ood_sets.get(&level).is_some_and(|s| !s.is_empty()) {
                return Err(CliError::Data(format!(
                    "record '{}' is {} but the manifest holds nothing out at {level}",
                    r.record_id, r.membership
                )));
            }
        }
    }
    Ok(())
}

fn report(
    ctx: &Ctx,
    scores_path: &Path,
    manifest_path: &Path,
    args: &DetectorArgs,
    table: Option<&Path>,
    histogram: Option<&Path>,
    bins: usize,
) -> Result<i32, CliError> {
    let manifest = SplitManifest::from_json(&read_text(manifest_path)?)
        .map_err(|e| CliError::Data(format!("{}: {e}", manifest_path.display())))?;
    let (scores, accuracy, detector) = match ingest_scores(scores_path)? {
        ScoresFile::Logits { records, num_classes } => {
            if num_classes != manifest.num_classes() {
                return Err(CliError::Data(format!(
                    "logits have {num_classes} classes, manifest has {}",
                    manifest.num_classes()
                )));
            }
            let det = args.resolve(ctx.cfg.report)?;
            let scores = score_batch(&records, &det, num_classes)?;
            (scores, id_accuracy(&records).ok(), det.label())
        }
        ScoresFile::Scores(s) => {
            if args.detector.is_some() || args.temperature.is_some() {
                return Err(CliError::Config("detector flags given for an already scored file".into()));
            }
            (s, None, "pre-scored".to_string())
        }
    };
    check_memberships(&scores, &manifest)?;
    let mut rep = full_report(&scores)?;
    rep.id_accuracy = accuracy;
    let file = ReportFile::new(None, rep, detector, ctx.provenance(ctx.cfg.seed.unwrap_or(0)));
    let out = ctx.out_path(ctx.out.as_deref(), "report.json");
    write_text(&out, &file.to_json())?;
    let rendered = render_table(&aggregate(std::slice::from_ref(&file)));
    if let Some(t) = table {
        write_text(&ctx.out_path(Some(&t.to_string_lossy()), ""), &rendered.to_csv())?;
    }
    if let Some(h) = histogram {
        let hist = score_histogram(&scores, bins)?;
        write_text(&ctx.out_path(Some(&h.to_string_lossy()), ""), &to_pretty_json(&hist))?;
    }
    let n_true = scores.iter().filter(|r| r.membership == Membership::TrueOod).count();
    ctx.say(format!("{} records ({n_true} true OOD)", scores.len()));
    ctx.say(rendered.to_text());
    Ok(0)
}

fn experiment(ctx: &Ctx) -> Result<i32, CliError> {
    let mut ec: ExperimentConfig = ctx.cfg.experiment.clone().unwrap_or_default();
    if let Some(s) = ctx.cfg.seed {
        ec.seeds = vec![s];
    }
    // hash the effective experiment, not output locations
    let hash = super::config_hash(&ec);
    let outcome = run_experiment(&ec, &hash)?;
    let dir = ctx.out_path(ctx.out.as_deref(), "experiment");
    write_experiment(&dir, &outcome, &ec.methods)?;
    ctx.say(render_table(&outcome.aggregate).to_text());
    for f in &outcome.failures {
        eprintln!("run failed: {} seed {}: {}", f.method, f.seed, f.error);
    }
    Ok(outcome.failures.first().map_or(0, |f| f.exit_code))
}

fn render(ctx: &Ctx, reports: &[PathBuf], csv: Option<&Path>) -> Result<i32, CliError> {
    let table = match csv {
        Some(p) => Table::from_csv(&read_text(p)?)?,
        None if reports.is_empty() => return Err(CliError::Config("render needs --reports or --csv".into())),
        None => {
            let files = reports
                .iter()
                .map(|p| {
                    ReportFile::from_json(&read_text(p)?).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))
                })
                .collect::<Result<Vec<_>, _>>()?;
            render_table(&aggregate(&files))
        }
    };
    let out = ctx.out_path(ctx.out.as_deref(), "table.csv");
    write_text(&out, &table.to_csv())?;
    ctx.say(table.to_text());
    Ok(0)
}
