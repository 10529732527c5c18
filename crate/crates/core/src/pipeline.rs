//! End-to-end steps shared by the CLI and tests: prepare, train, evaluate, ablate.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::corpus::{rebalance_zero_class, split_dataset, CorpusStats, DatasetSplit, IngestFilter, TweetRecord};
use crate::error::{Error, Result};
use crate::evaluation::{config_hash, EvalReport, RunMetadata};
use crate::features::{extract_features, fit_minmax, FeatureConfig, NumericFeature, ScalerState};
use crate::loss::LossConfig;
use crate::model::{argmax_rows, ViralBert, ViralBertConfig};
use crate::training::{predict_logits, train, TrainConfig, TrainOutcome};

pub const VIRALBERT_NAME: &str = "ViralBERT";

/// Everything that determines a run, apart from file paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub filter: IngestFilter,
    pub features: FeatureConfig,
    pub model: ViralBertConfig,
    pub loss: LossConfig,
    pub training: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 1,
            filter: IngestFilter::default(),
            features: FeatureConfig::default(),
            model: ViralBertConfig::default(),
            loss: LossConfig::default(),
            training: TrainConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Training settings with the run seed and loss filled in.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            loss: self.loss,
            ..self.training.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.features.validate()?;
        self.model.validate()?;
        self.training.validate()?;
        self.loss.with_counts(vec![1; self.model.num_classes])?;
        Ok(())
    }

    pub fn hash(&self) -> Result<String> {
        config_hash(self)
    }
}

/// Output of label → rebalance → split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreparedData {
    pub before_rebalance: CorpusStats,
    pub after_rebalance: CorpusStats,
    pub split: DatasetSplit,
}

pub fn prepare(records: &[TweetRecord], seed: u64) -> Result<PreparedData> {
    let rebalanced = rebalance_zero_class(records, seed);
    Ok(PreparedData {
        before_rebalance: CorpusStats::from_records(records),
        after_rebalance: CorpusStats::from_records(&rebalanced),
        split: split_dataset(&rebalanced, seed)?,
    })
}

/// A trained model with its history and test report.
pub struct ViralBertRun {
    pub model: ViralBert,
    pub outcome: TrainOutcome,
    pub report: EvalReport,
    /// Fitted on the training split; stored with the checkpoint for pairing with baselines.
    pub scaler: ScalerState,
}

pub fn run_metadata(config: &ExperimentConfig, ablated: Option<AblationFeature>) -> Result<RunMetadata> {
    Ok(RunMetadata {
        seed: config.seed,
        config_hash: config.hash()?,
        ablated_feature: ablated.map(|f| f.key().to_string()),
    })
}

/// Macro metrics of `model` on `records`.
pub fn evaluate_model(model: &ViralBert, records: &[TweetRecord], metadata: RunMetadata) -> Result<EvalReport> {
    let examples = model.encode_records(records)?;
    let batch = 32;
    let preds = argmax_rows(&predict_logits(model, &examples, batch)?);
    let labels: Vec<usize> = records.iter().map(|r| r.label().class_index()).collect();
    EvalReport::from_predictions(VIRALBERT_NAME, &preds, &labels, metadata)
}

/// Build a fresh model from `config`, train it on the split and report on its test part.
pub fn run_viralbert(config: &ExperimentConfig, split: &DatasetSplit) -> Result<ViralBertRun> {
    run_viralbert_tagged(config, split, None)
}

fn run_viralbert_tagged(
    config: &ExperimentConfig,
    split: &DatasetSplit,
    ablated: Option<AblationFeature>,
) -> Result<ViralBertRun> {
    config.validate()?;
    let mut model = ViralBert::new(&config.model, &config.features, config.seed)?;
    let train_set = model.encode_records(&split.train)?;
    let validation = model.encode_records(&split.validation)?;
    let outcome = train(&mut model, &train_set, &validation, &config.train_config())?;
    let report = evaluate_model(&model, &split.test, run_metadata(config, ablated)?)?;
    let vectors: Vec<_> = split.train.iter().map(|r| extract_features(r, &config.features)).collect();
    Ok(ViralBertRun {
        model,
        outcome,
        report,
        scaler: fit_minmax(&vectors)?,
    })
}

/// One removable input: the sentiment module or a numeric segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationFeature {
    Sentiment,
    Numeric(NumericFeature),
}

impl AblationFeature {
    /// Ablation table order.
    pub const ALL: [AblationFeature; 7] = [
        AblationFeature::Sentiment,
        AblationFeature::Numeric(NumericFeature::Hashtags),
        AblationFeature::Numeric(NumericFeature::Mentions),
        AblationFeature::Numeric(NumericFeature::Followers),
        AblationFeature::Numeric(NumericFeature::Following),
        AblationFeature::Numeric(NumericFeature::Verified),
        AblationFeature::Numeric(NumericFeature::TextLength),
    ];

    pub fn key(self) -> &'static str {
        match self {
            AblationFeature::Sentiment => "sentiment",
            AblationFeature::Numeric(f) => f.name(),
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            AblationFeature::Sentiment => "Sentiment",
            AblationFeature::Numeric(NumericFeature::Hashtags) => "Hashtags",
            AblationFeature::Numeric(NumericFeature::Mentions) => "Mentions",
            AblationFeature::Numeric(NumericFeature::Followers) => "Followers",
            AblationFeature::Numeric(NumericFeature::Following) => "Following",
            AblationFeature::Numeric(NumericFeature::Verified) => "Verified",
            AblationFeature::Numeric(NumericFeature::TextLength) => "Text length",
        }
    }
}

impl fmt::Display for AblationFeature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for AblationFeature {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AblationFeature::ALL
            .into_iter()
            .find(|f| f.key() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation feature `{s}`")))
    }
}

/// `base` with exactly one input removed.
pub fn ablation_config(base: &ExperimentConfig, feature: AblationFeature) -> Result<ExperimentConfig> {
    let mut c = base.clone();
    match feature {
        AblationFeature::Sentiment => {
            if !c.model.use_sentiment {
                return Err(Error::Config("sentiment is already disabled in the base config".into()));
            }
            c.model.use_sentiment = false;
        }
        AblationFeature::Numeric(f) => {
            if !c.model.use_numeric_features {
                return Err(Error::Config("numeric features are disabled in the base config".into()));
            }
            let before = c.features.order.len();
            c.features.order.retain(|&g| g != f);
            if c.features.order.len() == before {
                return Err(Error::Config(format!("feature `{f}` is not in the base feature order")));
            }
        }
    }
    Ok(c)
}

/// Paths of JSON leaves that differ between two configs. Arrays count as single leaves.
pub fn config_diff<T: Serialize>(a: &T, b: &T) -> Result<Vec<String>> {
    fn walk(path: &str, a: &Value, b: &Value, out: &mut Vec<String>) {
        match (a, b) {
            (Value::Object(x), Value::Object(y)) => {
                let keys: std::collections::BTreeSet<&String> = x.keys().chain(y.keys()).collect();
                for k in keys {
                    let p = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                    walk(&p, x.get(k).unwrap_or(&Value::Null), y.get(k).unwrap_or(&Value::Null), out);
                }
            }
            _ if a != b => out.push(path.to_string()),
            _ => {}
        }
    }
    let mut out = Vec::new();
    walk("", &serde_json::to_value(a)?, &serde_json::to_value(b)?, &mut out);
    Ok(out)
}

/// One ablated run.
pub struct AblationRun {
    pub feature: AblationFeature,
    pub config: ExperimentConfig,
    pub classifier_input_dim: usize,
    pub report: EvalReport,
}

pub struct AblationResults {
    pub base_config: ExperimentConfig,
    pub base_input_dim: usize,
    pub base: EvalReport,
    pub runs: Vec<AblationRun>,
}

/// Retrain from scratch with `feature` removed and report on the test split.
pub fn ablation_run(base: &ExperimentConfig, feature: &str, split: &DatasetSplit) -> Result<EvalReport> {
    let feature: AblationFeature = feature.parse()?;
    let config = ablation_config(base, feature)?;
    Ok(run_viralbert_tagged(&config, split, Some(feature))?.report)
}

/// The base run followed by one run per removable input, trained in parallel.
pub fn run_ablation(base: &ExperimentConfig, split: &DatasetSplit) -> Result<AblationResults> {
    let configs = AblationFeature::ALL
        .into_iter()
        .map(|f| Ok((f, ablation_config(base, f)?)))
        .collect::<Result<Vec<_>>>()?;
    let base_run = run_viralbert(base, split)?;
    let runs = configs
        .into_par_iter()
        .map(|(feature, config)| {
            let run = run_viralbert_tagged(&config, split, Some(feature))?;
            Ok(AblationRun {
                feature,
                classifier_input_dim: run.model.classifier_input_width(),
                report: run.report,
                config,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AblationResults {
        base_config: base.clone(),
        base_input_dim: base_run.model.classifier_input_width(),
        base: base_run.report,
        runs,
    })
}
