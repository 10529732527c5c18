//! Command-line front end. Each subcommand reads and writes artifacts under a run directory:
//!
//! ```text
//! <run>/ingest/      records.jsonl  stats.json
//! <run>/prepared/    train.jsonl  validation.jsonl  test.jsonl  split_manifest.json  stats.json  config.json
//! <run>/train/       config.json  history.json  timings.json  report.json  checkpoint/
//! <run>/evaluate/    report.json  table.txt
//! <run>/baselines/   <kind>.json  table.txt
//! <run>/ablation/    base/  removed_<feature>/  summary.json  table.txt
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::baselines::run_baselines;
use crate::corpus::{
    ingest, load_tweet_records, write_tweet_records, CorpusStats, DatasetSplit, IngestFilter, IngestSummary,
    SplitManifest, TweetRecord, NUM_CLASSES,
};
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::evaluation::{render_ablation_table, render_comparison_table, EvalReport};
use crate::features::{parse_feature_order, FeatureConfig};
use crate::loss::LossConfig;
use crate::model::{read_json, write_json, ViralBert, ViralBertConfig};
use crate::pipeline::{evaluate_model, prepare, run_ablation, run_metadata, run_viralbert, ExperimentConfig};
use crate::training::TrainConfig;

#[derive(Debug, Parser)]
#[command(name = "viralbert", version, about = "Tweet virality classification toolkit")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides the configured run directory.
    #[arg(long, global = true)]
    pub run_dir: Option<PathBuf>,
    /// Text backbone id, e.g. `toy-random` or `bertweet-base`.
    #[arg(long, global = true)]
    pub backbone: Option<String>,
    /// Comma-separated numeric feature order.
    #[arg(long, global = true, value_delimiter = ',')]
    pub feature_order: Option<Vec<String>>,
    /// Overrides the configured corpus file.
    #[arg(long, global = true)]
    pub corpus: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate, deduplicate and filter a record file; print corpus statistics.
    Ingest {
        /// Where to write the retained records.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Label, rebalance and split the corpus.
    Prepare,
    /// Train ViralBERT on the prepared splits.
    Train,
    /// Evaluate a checkpoint on the prepared test split.
    Evaluate {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Fit and evaluate every baseline.
    Baselines,
    /// Retrain with each feature removed in turn.
    Ablate,
    /// Class predictions with probabilities, one JSON line per record.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub corpus: Option<PathBuf>,
    pub run_dir: Option<PathBuf>,
}

/// Contents of the `--config` file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: PathsConfig,
    pub seed: u64,
    pub filter: IngestFilter,
    pub features: FeatureConfig,
    pub model: ViralBertConfig,
    pub loss: LossConfig,
    pub training: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::from_experiment(PathsConfig::default(), ExperimentConfig::default())
    }
}

impl RunConfig {
    pub fn from_experiment(paths: PathsConfig, e: ExperimentConfig) -> Self {
        RunConfig {
            paths,
            seed: e.seed,
            filter: e.filter,
            features: e.features,
            model: e.model,
            loss: e.loss,
            training: e.training,
        }
    }

    pub fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            seed: self.seed,
            filter: self.filter.clone(),
            features: self.features.clone(),
            model: self.model.clone(),
            loss: self.loss,
            training: self.training.clone(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Apply command-line overrides.
    pub fn with_overrides(mut self, args: &GlobalArgs) -> Result<Self> {
        if let Some(seed) = args.seed {
            self.seed = seed;
        }
        if let Some(dir) = &args.run_dir {
            self.paths.run_dir = Some(dir.clone());
        }
        if let Some(corpus) = &args.corpus {
            self.paths.corpus = Some(corpus.clone());
        }
        if let Some(id) = &args.backbone {
            self.model.encoder = EncoderConfig::for_backbone(id, self.model.encoder.hidden_dim)?;
        }
        if let Some(order) = &args.feature_order {
            self.features.order = parse_feature_order(order)?;
        }
        self.experiment().validate()?;
        Ok(self)
    }

    fn run_dir(&self) -> Result<&Path> {
        self.paths
            .run_dir
            .as_deref()
            .ok_or_else(|| Error::Config("no run directory: pass --run-dir or set paths.run_dir".into()))
    }

    fn corpus(&self) -> Result<&Path> {
        self.paths
            .corpus
            .as_deref()
            .ok_or_else(|| Error::Config("no corpus: pass --corpus or set paths.corpus".into()))
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

const SPLIT_NAMES: [&str; 3] = ["train", "validation", "test"];

fn band_name(class: usize) -> &'static str {
    ["0", "1", "2-20", "21+"][class]
}

fn print_stats(summary: Option<&IngestSummary>, stats: &CorpusStats) {
    if let Some(s) = summary {
        println!(
            "{} lines read, {} duplicates removed, {} filtered out",
            s.lines_read, s.duplicates_removed, s.filtered_out
        );
    }
    println!("{} records retained", stats.total);
    println!("per class (retweet band):");
    for c in 0..NUM_CLASSES {
        println!("  class {c} ({:>4}): {}", band_name(c), stats.class_counts[c]);
    }
    println!("per topic:");
    for (topic, n) in &stats.topic_counts {
        println!("  {topic}: {n}");
    }
}

fn cmd_ingest(cfg: &RunConfig, out: Option<&Path>) -> Result<()> {
    let (records, summary) = ingest(cfg.corpus()?, &cfg.filter)?;
    let stats = CorpusStats::from_records(&records);
    print_stats(Some(&summary), &stats);
    let target = match (out, cfg.paths.run_dir.as_deref()) {
        (Some(p), _) => Some(p.to_path_buf()),
        (None, Some(run)) => Some(run.join("ingest").join("records.jsonl")),
        (None, None) => None,
    };
    if let Some(path) = target {
        let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
        create_dir(dir)?;
        write_tweet_records(&path, &records)?;
        write_json(
            &dir.join("stats.json"),
            &serde_json::json!({ "summary": summary, "stats": stats }),
        )?;
    }
    Ok(())
}

fn cmd_prepare(cfg: &RunConfig) -> Result<()> {
    let (records, summary) = ingest(cfg.corpus()?, &cfg.filter)?;
    let prepared = prepare(&records, cfg.seed)?;
    let dir = cfg.run_dir()?.join("prepared");
    create_dir(&dir)?;
    let split = &prepared.split;
    for (name, part) in SPLIT_NAMES.into_iter().zip([&split.train, &split.validation, &split.test]) {
        write_tweet_records(dir.join(format!("{name}.jsonl")), part)?;
    }
    write_json(&dir.join("split_manifest.json"), &SplitManifest::from(split))?;
    write_json(
        &dir.join("stats.json"),
        &serde_json::json!({
            "ingest": summary,
            "before_rebalance": prepared.before_rebalance,
            "after_rebalance": prepared.after_rebalance,
        }),
    )?;
    write_json(&dir.join("config.json"), &cfg.experiment())?;
    print_stats(None, &prepared.after_rebalance);
    println!(
        "split: {} train, {} validation, {} test",
        split.train.len(),
        split.validation.len(),
        split.test.len()
    );
    Ok(())
}

fn load_split(cfg: &RunConfig) -> Result<DatasetSplit> {
    let dir = cfg.run_dir()?.join("prepared");
    let manifest_path = dir.join("split_manifest.json");
    if !manifest_path.exists() {
        return Err(Error::Input(format!(
            "no prepared data at {}; run `prepare` first",
            dir.display()
        )));
    }
    let manifest: SplitManifest = read_json(&manifest_path)?;
    let load = |name: &str| load_tweet_records(dir.join(format!("{name}.jsonl")));
    Ok(DatasetSplit {
        train: load("train")?,
        validation: load("validation")?,
        test: load("test")?,
        seed: manifest.seed,
    })
}

fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let split = load_split(cfg)?;
    let experiment = cfg.experiment();
    let run = run_viralbert(&experiment, &split)?;
    let dir = cfg.run_dir()?.join("train");
    create_dir(&dir)?;
    write_json(&dir.join("config.json"), &experiment)?;
    write_json(&dir.join("history.json"), &run.outcome.history)?;
    write_json(&dir.join("timings.json"), &run.outcome.epoch_seconds)?;
    write_json(&dir.join("report.json"), &run.report)?;
    run.model.save_checkpoint(&dir.join("checkpoint"), Some(&run.scaler))?;
    let h = &run.outcome.history;
    for e in &h.epochs {
        println!(
            "epoch {:>3}  train loss {:.4}  validation loss {:.4}  validation macro-F1 {:.4}",
            e.epoch, e.train_loss, e.validation_loss, e.validation_macro_f1
        );
    }
    println!("best epoch {} (validation macro-F1 {:.4})", h.best_epoch, h.best_validation_macro_f1);
    print!("{}", render_comparison_table(std::slice::from_ref(&run.report)));
    Ok(())
}

fn cmd_evaluate(cfg: &RunConfig, checkpoint: Option<&Path>, explicit_config: bool) -> Result<()> {
    let default_ckpt = cfg.run_dir()?.join("train").join("checkpoint");
    let ckpt = checkpoint.unwrap_or(&default_ckpt);
    if !ckpt.exists() {
        return Err(Error::Load(format!("checkpoint {} not found", ckpt.display())));
    }
    let model = ViralBert::load_checkpoint(ckpt)?;
    if explicit_config {
        if model.config() != &cfg.model {
            return Err(Error::Config(format!(
                "model block of the configuration does not match checkpoint {}",
                ckpt.display()
            )));
        }
        if model.feature_order() != cfg.features.order.as_slice() {
            return Err(Error::Config(format!(
                "feature order of the configuration does not match checkpoint {}",
                ckpt.display()
            )));
        }
    }
    let split = load_split(cfg)?;
    let report = evaluate_model(&model, &split.test, run_metadata(&cfg.experiment(), None)?)?;
    let dir = cfg.run_dir()?.join("evaluate");
    create_dir(&dir)?;
    write_json(&dir.join("report.json"), &report)?;
    let table = render_comparison_table(std::slice::from_ref(&report));
    write_text(&dir.join("table.txt"), &table)?;
    print!("{table}");
    Ok(())
}

fn cmd_baselines(cfg: &RunConfig) -> Result<()> {
    let split = load_split(cfg)?;
    let mut reports = run_baselines(&split, &cfg.experiment())?;
    let run = cfg.run_dir()?;
    let dir = run.join("baselines");
    create_dir(&dir)?;
    for (kind, report) in crate::baselines::BaselineKind::ALL.iter().zip(&reports) {
        write_json(&dir.join(format!("{}.json", kind.key())), report)?;
    }
    // the full model's row, when it has been trained in this run directory
    let trained = run.join("train").join("report.json");
    if trained.exists() {
        reports.push(read_json::<EvalReport>(&trained)?);
    }
    let table = render_comparison_table(&reports);
    write_text(&dir.join("table.txt"), &table)?;
    print!("{table}");
    Ok(())
}

fn cmd_ablate(cfg: &RunConfig) -> Result<()> {
    let split = load_split(cfg)?;
    let results = run_ablation(&cfg.experiment(), &split)?;
    let dir = cfg.run_dir()?.join("ablation");
    let base_dir = dir.join("base");
    create_dir(&base_dir)?;
    write_json(&base_dir.join("config.json"), &results.base_config)?;
    write_json(&base_dir.join("report.json"), &results.base)?;
    let mut rows = Vec::new();
    for r in &results.runs {
        let d = dir.join(format!("removed_{}", r.feature.key()));
        create_dir(&d)?;
        write_json(&d.join("config.json"), &r.config)?;
        write_json(&d.join("report.json"), &r.report)?;
        rows.push((r.feature.display_name().to_string(), r.report.clone()));
    }
    let summary: Vec<_> = std::iter::once(serde_json::json!({
        "feature_removed": null,
        "classifier_input_dim": results.base_input_dim,
        "macro_f1": results.base.macro_f1,
        "accuracy": results.base.accuracy,
    }))
    .chain(results.runs.iter().map(|r| {
        serde_json::json!({
            "feature_removed": r.feature.key(),
            "classifier_input_dim": r.classifier_input_dim,
            "macro_f1": r.report.macro_f1,
            "accuracy": r.report.accuracy,
        })
    }))
    .collect();
    write_json(&dir.join("summary.json"), &summary)?;
    let table = render_ablation_table(&results.base, &rows);
    write_text(&dir.join("table.txt"), &table)?;
    print!("{table}");
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub class: usize,
    pub probabilities: Vec<f64>,
}

fn cmd_predict(checkpoint: &Path, input: &Path, out: Option<&Path>) -> Result<()> {
    if !checkpoint.exists() {
        return Err(Error::Load(format!("checkpoint {} not found", checkpoint.display())));
    }
    let model = ViralBert::load_checkpoint(checkpoint)?;
    let records: Vec<TweetRecord> = load_tweet_records(input)?;
    let mut lines = String::new();
    for chunk in records.chunks(32) {
        let encoded = model.encode_records(chunk)?;
        let logits = model.forward(&encoded)?;
        let probs = logits.probabilities();
        for ((r, p), class) in chunk.iter().zip(probs.rows()).zip(logits.predictions()) {
            let pred = Prediction {
                id: r.id.clone(),
                class,
                probabilities: p.to_vec(),
            };
            lines.push_str(&serde_json::to_string(&pred)?);
            lines.push('\n');
        }
    }
    match out {
        Some(path) => write_text(path, &lines),
        None => {
            print!("{lines}");
            Ok(())
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let explicit_config = cli.global.config.is_some();
    let base = match &cli.global.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let cfg = base.with_overrides(&cli.global)?;
    match &cli.command {
        Command::Ingest { out } => cmd_ingest(&cfg, out.as_deref()),
        Command::Prepare => cmd_prepare(&cfg),
        Command::Train => cmd_train(&cfg),
        Command::Evaluate { checkpoint } => cmd_evaluate(&cfg, checkpoint.as_deref(), explicit_config),
        Command::Baselines => cmd_baselines(&cfg),
        Command::Ablate => cmd_ablate(&cfg),
        Command::Predict { checkpoint, input, out } => cmd_predict(checkpoint, input, out.as_deref()),
    }
}
