//! ViralBERT: the text encoder's start-token embedding concatenated with the
//! sentiment distribution, classified by a tanh MLP head.
//!
//! ```text
//! X_CLS  = h_B ⊕ S                              (H + 3)
//! hidden = dropout(tanh(X_CLS · W₁ + b₁))       (H + 3 units)
//! logits = hidden · W₂ + b₂                     (num_classes)
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{TweetRecord, NUM_CLASSES};
use crate::encoder::{
    sentiment_probs_with, EncoderConfig, SentimentDistribution, SentimentHead, Tokenizer, TransformerEncoder,
    SENTIMENT_CLASSES,
};
use crate::error::{Error, Result};
use crate::features::{extract_features, serialize_segments, FeatureConfig, NumericFeature, ScalerState};
use crate::nn::{dropout, Linear, Mode};
use crate::seed::derive_seed;
use crate::tensor::{softmax_rows, Matrix, ParamGroup, ParamId, ParamStore, StoredTensor, Tape, Var};
use crate::training::{Classifier, Labeled};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ViralBertConfig {
    pub encoder: EncoderConfig,
    pub sentiment_encoder: EncoderConfig,
    pub use_numeric_features: bool,
    pub use_sentiment: bool,
    pub num_classes: usize,
    pub dropout: f64,
    /// Number of tanh hidden layers in the classifier head.
    pub classifier_depth: usize,
}

impl Default for ViralBertConfig {
    fn default() -> Self {
        ViralBertConfig {
            encoder: EncoderConfig::toy(32),
            sentiment_encoder: EncoderConfig::toy(32),
            use_numeric_features: true,
            use_sentiment: true,
            num_classes: NUM_CLASSES,
            dropout: 0.1,
            classifier_depth: 1,
        }
    }
}

impl ViralBertConfig {
    /// Text-only variant: no numeric segments, no sentiment head.
    pub fn text_only(mut self) -> Self {
        self.use_numeric_features = false;
        self.use_sentiment = false;
        self
    }

    /// Width of h_B ⊕ S.
    pub fn classifier_input_dim(&self) -> usize {
        self.encoder.hidden_dim + if self.use_sentiment { SENTIMENT_CLASSES } else { 0 }
    }

    /// Hidden width of the classifier head; equal to its input width.
    pub fn classifier_hidden(&self) -> usize {
        self.classifier_input_dim()
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.use_sentiment {
            self.sentiment_encoder.validate()?;
        }
        if self.num_classes < 2 {
            return Err(Error::Config(format!("num_classes must be >= 2, got {}", self.num_classes)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout must lie in [0, 1), got {}", self.dropout)));
        }
        if self.classifier_depth == 0 {
            return Err(Error::Config("classifier_depth must be >= 1".into()));
        }
        Ok(())
    }
}

/// Tokenized model input for one tweet.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedExample {
    pub id: String,
    /// Start ⊕ text ⊕ sep ⊕ N₀ ⊕ sep ⊕ … for the text encoder.
    pub tokens: Vec<usize>,
    /// Start ⊕ text ⊕ sep for the sentiment head.
    pub sentiment_tokens: Vec<usize>,
    pub label: Option<usize>,
}

impl Labeled for EncodedExample {
    fn label(&self) -> Option<usize> {
        self.label
    }
}

/// Per-example class scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassLogits(pub Matrix);

impl ClassLogits {
    pub fn probabilities(&self) -> Matrix {
        softmax_rows(&self.0)
    }

    pub fn predictions(&self) -> Vec<usize> {
        argmax_rows(&self.0)
    }

    pub fn len(&self) -> usize {
        self.0.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.nrows() == 0
    }
}

/// Row-wise argmax, ties resolved toward the lowest index.
pub fn argmax_rows(m: &Matrix) -> Vec<usize> {
    m.rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

pub struct ViralBert {
    config: ViralBertConfig,
    feature_order: Vec<NumericFeature>,
    parse_text: bool,
    seed: u64,
    store: ParamStore,
    text_encoder: TransformerEncoder,
    sentiment: Option<SentimentHead>,
    hidden: Vec<Linear>,
    output: Linear,
    tokenizer: Tokenizer,
    sentiment_tokenizer: Option<Tokenizer>,
}

impl ViralBert {
    pub fn new(config: &ViralBertConfig, features: &FeatureConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        features.validate()?;
        let mut store = ParamStore::new();
        let text_encoder = TransformerEncoder::build(&mut store, "text", &config.encoder, seed)?;
        let (sentiment, sentiment_tokenizer) = if config.use_sentiment {
            (
                Some(SentimentHead::build(&mut store, "sentiment", &config.sentiment_encoder, seed)?),
                Some(Tokenizer::for_config(&config.sentiment_encoder)?),
            )
        } else {
            (None, None)
        };

        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "classifier"));
        let width = config.classifier_hidden();
        let mut in_dim = config.classifier_input_dim();
        let hidden = (0..config.classifier_depth)
            .map(|i| {
                let layer = Linear::new(&mut store, &format!("classifier.hidden{i}"), ParamGroup::Head, in_dim, width, &mut rng);
                in_dim = width;
                layer
            })
            .collect();
        let output = Linear::new(&mut store, "classifier.output", ParamGroup::Head, width, config.num_classes, &mut rng);

        Ok(ViralBert {
            config: config.clone(),
            feature_order: if config.use_numeric_features {
                features.order.clone()
            } else {
                Vec::new()
            },
            parse_text: features.parse_text,
            seed,
            store,
            text_encoder,
            sentiment,
            hidden,
            output,
            tokenizer: Tokenizer::for_config(&config.encoder)?,
            sentiment_tokenizer,
        })
    }

    pub fn config(&self) -> &ViralBertConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Numeric features serialized into the encoder input, in order.
    pub fn feature_order(&self) -> &[NumericFeature] {
        &self.feature_order
    }

    pub fn x_cls_dim(&self) -> usize {
        self.config.classifier_input_dim()
    }

    pub fn classifier_hidden_units(&self) -> usize {
        self.hidden.last().map_or(0, |l| l.out_dim)
    }

    /// Input width of the first classifier layer, read from its weight shape.
    pub fn classifier_input_width(&self) -> usize {
        self.store.get(self.hidden[0].weight).nrows()
    }

    pub fn has_sentiment(&self) -> bool {
        self.sentiment.is_some()
    }

    pub fn tokenizer(&self) -> &Tokenizer {
        &self.tokenizer
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    /// Parameters of the classifier head.
    pub fn head_params(&self) -> Vec<ParamId> {
        self.store
            .iter()
            .filter(|(_, p)| p.group == ParamGroup::Head)
            .map(|(id, _)| id)
            .collect()
    }

    pub fn encode_record(&self, record: &TweetRecord) -> Result<EncodedExample> {
        let features = extract_features(
            record,
            &FeatureConfig {
                order: self.feature_order.clone(),
                parse_text: self.parse_text,
            },
        );
        let segments = serialize_segments(&record.text, &features, &self.feature_order);
        let sentiment_tokens = match &self.sentiment_tokenizer {
            Some(t) => t.tokenize(&[record.text.as_str()])?,
            None => Vec::new(),
        };
        Ok(EncodedExample {
            id: record.id.clone(),
            tokens: self.tokenizer.tokenize(&segments)?,
            sentiment_tokens,
            label: Some(record.label().class_index()),
        })
    }

    pub fn encode_records(&self, records: &[TweetRecord]) -> Result<Vec<EncodedExample>> {
        records.iter().map(|r| self.encode_record(r)).collect()
    }

    /// X_CLS rows (B × (H + 3·[sentiment])).
    pub fn x_cls<'a>(&'a self, tape: &mut Tape<'a>, batch: &[&EncodedExample]) -> Result<Var> {
        let rows = batch
            .iter()
            .map(|ex| {
                let h_b = self.text_encoder.pooled(tape, &self.store, &ex.tokens)?;
                match &self.sentiment {
                    Some(head) => {
                        let s = head.probs(tape, &self.store, &ex.sentiment_tokens)?;
                        Ok(tape.concat_cols(&[h_b, s]))
                    }
                    None => Ok(h_b),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(tape.concat_rows(&rows))
    }

    /// Classifier head over precomputed X_CLS rows.
    pub fn head<'a>(&'a self, tape: &mut Tape<'a>, x_cls: Var, mode: &mut Mode<'_>) -> Var {
        let mut h = x_cls;
        for layer in &self.hidden {
            let z = layer.forward(tape, &self.store, h);
            let a = tape.tanh(z);
            h = dropout(tape, a, self.config.dropout, mode);
        }
        self.output.forward(tape, &self.store, h)
    }

    /// Inference-mode logits.
    pub fn forward(&self, batch: &[EncodedExample]) -> Result<ClassLogits> {
        if batch.is_empty() {
            return Err(Error::Input("empty batch".into()));
        }
        let refs: Vec<&EncodedExample> = batch.iter().collect();
        let mut tape = Tape::new();
        let logits = self.logits(&mut tape, &refs, &mut Mode::Eval)?;
        Ok(ClassLogits(tape.value(logits).clone()))
    }

    pub fn predict(&self, batch: &[EncodedExample]) -> Result<Vec<usize>> {
        Ok(self.forward(batch)?.predictions())
    }

    pub fn sentiment_probs(&self, text: &str) -> Result<SentimentDistribution> {
        match (&self.sentiment, &self.sentiment_tokenizer) {
            (Some(head), Some(tok)) => sentiment_probs_with(head, &self.store, tok, text),
            _ => Err(Error::Config("model was built without a sentiment head".into())),
        }
    }

    pub fn checkpoint_meta(&self) -> CheckpointMeta {
        CheckpointMeta {
            format_version: CHECKPOINT_VERSION,
            model: self.config.clone(),
            feature_order: self.feature_order.clone(),
            parse_text: self.parse_text,
            seed: self.seed,
            backbone_id: self.config.encoder.backbone_id.clone(),
            tokenizer_vocab_id: self.tokenizer.vocab_id(),
            sentiment_backbone_id: self
                .sentiment
                .as_ref()
                .map(|h| h.config().backbone_id.clone()),
            sentiment_vocab_id: self.sentiment_tokenizer.as_ref().map(Tokenizer::vocab_id),
        }
    }

    /// Write config snapshot, weights and optional scaler state into `dir`.
    pub fn save_checkpoint(&self, dir: &Path, scaler: Option<&ScalerState>) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_json(&dir.join(CHECKPOINT_CONFIG), &self.checkpoint_meta())?;
        write_json(&dir.join(CHECKPOINT_WEIGHTS), &self.store.to_named())?;
        if let Some(s) = scaler {
            write_json(&dir.join(CHECKPOINT_SCALER), s)?;
        }
        Ok(())
    }

    pub fn load_checkpoint(dir: &Path) -> Result<Self> {
        let meta: CheckpointMeta = read_json(&dir.join(CHECKPOINT_CONFIG))?;
        if meta.format_version != CHECKPOINT_VERSION {
            return Err(Error::Load(format!(
                "checkpoint format {} unsupported (expected {CHECKPOINT_VERSION})",
                meta.format_version
            )));
        }
        let features = FeatureConfig {
            order: meta.feature_order.clone(),
            parse_text: meta.parse_text,
        };
        let mut model = ViralBert::new(&meta.model, &features, meta.seed)?;
        if model.tokenizer.vocab_id() != meta.tokenizer_vocab_id {
            return Err(Error::Load(format!(
                "tokenizer `{}` does not match checkpoint tokenizer `{}`",
                model.tokenizer.vocab_id(),
                meta.tokenizer_vocab_id
            )));
        }
        let weights: BTreeMap<String, StoredTensor> = read_json(&dir.join(CHECKPOINT_WEIGHTS))?;
        model.store.load_named(&weights)?;
        Ok(model)
    }

    pub fn load_scaler(dir: &Path) -> Result<Option<ScalerState>> {
        let path = dir.join(CHECKPOINT_SCALER);
        if !path.exists() {
            return Ok(None);
        }
        read_json(&path).map(Some)
    }
}

impl Classifier for ViralBert {
    type Example = EncodedExample;

    fn params(&self) -> &ParamStore {
        &self.store
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn logits<'a>(&'a self, tape: &mut Tape<'a>, batch: &[&EncodedExample], mode: &mut Mode<'_>) -> Result<Var> {
        let x = self.x_cls(tape, batch)?;
        Ok(self.head(tape, x, mode))
    }
}

pub const CHECKPOINT_VERSION: u32 = 1;
pub const CHECKPOINT_CONFIG: &str = "config.json";
pub const CHECKPOINT_WEIGHTS: &str = "weights.json";
pub const CHECKPOINT_SCALER: &str = "scaler.json";

/// Everything besides weights needed to rebuild a model bit-for-bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub model: ViralBertConfig,
    pub feature_order: Vec<NumericFeature>,
    pub parse_text: bool,
    pub seed: u64,
    pub backbone_id: String,
    pub tokenizer_vocab_id: String,
    pub sentiment_backbone_id: Option<String>,
    pub sentiment_vocab_id: Option<String>,
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Load(format!("{}: {e}", path.display())))
}

/// Softmax probabilities per example, as plain rows.
pub fn probability_rows(logits: &ClassLogits) -> Vec<Vec<f64>> {
    logits.probabilities().rows().into_iter().map(|r| r.to_vec()).collect()
}

/// Matrix with one row per example, convenient for tests.
pub fn logits_matrix(rows: &[Vec<f64>]) -> Matrix {
    let cols = rows.first().map_or(0, Vec::len);
    Array2::from_shape_fn((rows.len(), cols), |(i, j)| rows[i][j])
}
