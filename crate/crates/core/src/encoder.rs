//! Text encoder and sentiment head.
//!
//! Both are post-norm transformer encoders pooled at the start token. Two
//! backbone families share the same contracts:
//!
//! * `toy-random`: small, randomly initialized, hash-bucket tokenizer. Used by
//!   every test and desk-scale run.
//! * registered pretrained backbones (`bertweet-base`,
//!   `twitter-roberta-base-sentiment`): fixed 768-wide, 12-layer shapes whose
//!   weights and vocabulary are read from the backbone cache directory.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{LayerNorm, Linear};
use crate::seed::{derive_seed, fnv1a64};
use crate::tensor::{normal_init, softmax_rows, ParamGroup, ParamId, ParamStore, StoredTensor, Tape, Var};

pub const PAD_ID: usize = 0;
pub const CLS_ID: usize = 1;
pub const SEP_ID: usize = 2;
pub const UNK_ID: usize = 3;
const DIGIT_BASE: usize = 4;
const FIRST_HASHED_ID: usize = DIGIT_BASE + 10;

pub const TOY_BACKBONE: &str = "toy-random";
pub const TEXT_BACKBONE: &str = "bertweet-base";
pub const SENTIMENT_BACKBONE: &str = "twitter-roberta-base-sentiment";

/// Environment variable naming the pretrained backbone cache directory.
pub const BACKBONE_CACHE_ENV: &str = "VIRALBERT_BACKBONE_CACHE";

pub const SENTIMENT_CLASSES: usize = 3;

/// Probabilities of negative, neutral and positive sentiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SentimentDistribution {
    pub negative: f64,
    pub neutral: f64,
    pub positive: f64,
}

impl SentimentDistribution {
    pub fn new(negative: f64, neutral: f64, positive: f64) -> Result<Self> {
        let s = SentimentDistribution {
            negative,
            neutral,
            positive,
        };
        let probs = s.to_array();
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Domain(format!("sentiment probabilities out of [0, 1]: {probs:?}")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Domain(format!("sentiment probabilities sum to {sum}")));
        }
        Ok(s)
    }

    pub fn from_logits(logits: [f64; SENTIMENT_CLASSES]) -> Self {
        let m = Array2::from_shape_vec((1, SENTIMENT_CLASSES), logits.to_vec()).expect("1x3");
        let p = softmax_rows(&m);
        SentimentDistribution {
            negative: p[[0, 0]],
            neutral: p[[0, 1]],
            positive: p[[0, 2]],
        }
    }

    pub fn to_array(self) -> [f64; SENTIMENT_CLASSES] {
        [self.negative, self.neutral, self.positive]
    }
}

/// Architecture and backbone selection for one encoder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub backbone_id: String,
    pub hidden_dim: usize,
    pub max_sequence_length: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub intermediate_dim: usize,
    pub vocab_size: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig::toy(32)
    }
}

struct PretrainedShape {
    id: &'static str,
    vocab_size: usize,
    max_positions: usize,
}

const PRETRAINED: [PretrainedShape; 2] = [
    PretrainedShape {
        id: TEXT_BACKBONE,
        vocab_size: 64_001,
        max_positions: 130,
    },
    PretrainedShape {
        id: SENTIMENT_BACKBONE,
        vocab_size: 50_265,
        max_positions: 514,
    },
];

impl EncoderConfig {
    /// Randomly initialized backbone of width `hidden_dim`.
    pub fn toy(hidden_dim: usize) -> Self {
        let heads = if hidden_dim % 4 == 0 { 4 } else { 1 };
        EncoderConfig {
            backbone_id: TOY_BACKBONE.to_string(),
            hidden_dim,
            max_sequence_length: 128,
            num_layers: 2,
            num_heads: heads,
            intermediate_dim: 2 * hidden_dim,
            vocab_size: 2048,
        }
    }

    /// Shape of a registered pretrained backbone (12 layers, 12 heads, width 768).
    pub fn pretrained(backbone_id: &str) -> Result<Self> {
        let shape = PRETRAINED
            .iter()
            .find(|s| s.id == backbone_id)
            .ok_or_else(|| Error::Config(format!("unknown backbone `{backbone_id}`")))?;
        Ok(EncoderConfig {
            backbone_id: shape.id.to_string(),
            hidden_dim: 768,
            max_sequence_length: 128.min(shape.max_positions),
            num_layers: 12,
            num_heads: 12,
            intermediate_dim: 3072,
            vocab_size: shape.vocab_size,
        })
    }

    /// Config for a backbone id, using `toy_hidden` when the id is the toy backbone.
    pub fn for_backbone(backbone_id: &str, toy_hidden: usize) -> Result<Self> {
        if backbone_id == TOY_BACKBONE {
            Ok(EncoderConfig::toy(toy_hidden))
        } else {
            EncoderConfig::pretrained(backbone_id)
        }
    }

    pub fn is_pretrained(&self) -> bool {
        self.backbone_id != TOY_BACKBONE
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.hidden_dim == 0 {
            return fail("hidden_dim must be >= 1".into());
        }
        if self.max_sequence_length < 8 {
            return fail(format!("max_sequence_length must be >= 8, got {}", self.max_sequence_length));
        }
        if self.num_layers == 0 || self.num_heads == 0 || self.intermediate_dim == 0 {
            return fail("num_layers, num_heads and intermediate_dim must be >= 1".into());
        }
        if self.hidden_dim % self.num_heads != 0 {
            return fail(format!(
                "hidden_dim {} not divisible by num_heads {}",
                self.hidden_dim, self.num_heads
            ));
        }
        if self.vocab_size < 2 * FIRST_HASHED_ID {
            return fail(format!("vocab_size must be >= {}", 2 * FIRST_HASHED_ID));
        }
        if self.is_pretrained() {
            let reference = EncoderConfig::pretrained(&self.backbone_id)?;
            let same_arch = reference.hidden_dim == self.hidden_dim
                && reference.num_layers == self.num_layers
                && reference.num_heads == self.num_heads
                && reference.intermediate_dim == self.intermediate_dim
                && reference.vocab_size == self.vocab_size;
            if !same_arch {
                return fail(format!(
                    "backbone `{}` has a fixed architecture; only max_sequence_length may change",
                    self.backbone_id
                ));
            }
        }
        Ok(())
    }
}

/// Directory holding converted pretrained weights, one subdirectory per backbone id.
pub fn backbone_cache_dir() -> PathBuf {
    if let Ok(dir) = std::env::var(BACKBONE_CACHE_ENV) {
        return PathBuf::from(dir);
    }
    std::env::var("HOME")
        .map(|h| Path::new(&h).join(".cache").join("viralbert"))
        .unwrap_or_else(|_| PathBuf::from(".viralbert-cache"))
}

fn read_json<T: serde::de::DeserializeOwned>(id: &str, path: &Path) -> Result<T> {
    let raw = fs::read_to_string(path).map_err(|e| Error::BackboneUnavailable {
        id: id.to_string(),
        reason: format!("cannot read {}: {e}", path.display()),
    })?;
    serde_json::from_str(&raw).map_err(|e| Error::BackboneUnavailable {
        id: id.to_string(),
        reason: format!("cannot parse {}: {e}", path.display()),
    })
}

/// Vocabulary file of a pretrained backbone.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VocabFile {
    pub tokens: HashMap<String, usize>,
}

#[derive(Debug, Clone)]
enum TokenizerKind {
    Hash { vocab_size: usize },
    Vocab { backbone_id: String, tokens: HashMap<String, usize> },
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Piece {
    Word(String),
    Digit(u8),
    Symbol(char),
}

fn pieces(text: &str) -> Vec<Piece> {
    let mut out = Vec::new();
    let mut word = String::new();
    let flush = |word: &mut String, out: &mut Vec<Piece>| {
        if !word.is_empty() {
            out.push(Piece::Word(std::mem::take(word)));
        }
    };
    for c in text.chars().flat_map(char::to_lowercase) {
        if c.is_whitespace() {
            flush(&mut word, &mut out);
        } else if let Some(d) = c.to_digit(10).filter(|_| c.is_ascii_digit()) {
            flush(&mut word, &mut out);
            out.push(Piece::Digit(d as u8));
        } else if c.is_alphanumeric() || c == '_' {
            word.push(c);
        } else {
            flush(&mut word, &mut out);
            out.push(Piece::Symbol(c));
        }
    }
    flush(&mut word, &mut out);
    out
}

/// Maps segments to the start ⊕ s₀ ⊕ sep ⊕ s₁ ⊕ sep ⊕ … layout.
///
/// Text is lowercased and split into words, single ASCII digits and single
/// symbols, so rendered integers become one token per digit.
#[derive(Debug, Clone)]
pub struct Tokenizer {
    kind: TokenizerKind,
    max_len: usize,
}

impl Tokenizer {
    pub fn for_config(config: &EncoderConfig) -> Result<Self> {
        config.validate()?;
        let kind = if config.is_pretrained() {
            let path = backbone_cache_dir().join(&config.backbone_id).join("vocab.json");
            let vocab: VocabFile = read_json(&config.backbone_id, &path)?;
            TokenizerKind::Vocab {
                backbone_id: config.backbone_id.clone(),
                tokens: vocab.tokens,
            }
        } else {
            TokenizerKind::Hash {
                vocab_size: config.vocab_size,
            }
        };
        Ok(Tokenizer {
            kind,
            max_len: config.max_sequence_length,
        })
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    /// Identifier recorded in checkpoints.
    pub fn vocab_id(&self) -> String {
        match &self.kind {
            TokenizerKind::Hash { vocab_size } => format!("hash-fnv1a-v1/{vocab_size}"),
            TokenizerKind::Vocab { backbone_id, .. } => format!("vocab/{backbone_id}"),
        }
    }

    fn piece_id(&self, piece: &Piece) -> usize {
        match piece {
            Piece::Digit(d) => DIGIT_BASE + *d as usize,
            Piece::Word(w) => self.word_id(w),
            Piece::Symbol(c) => self.word_id(c.encode_utf8(&mut [0; 4])),
        }
    }

    fn word_id(&self, w: &str) -> usize {
        match &self.kind {
            TokenizerKind::Hash { vocab_size } => {
                FIRST_HASHED_ID + (fnv1a64(w.as_bytes()) % (vocab_size - FIRST_HASHED_ID) as u64) as usize
            }
            TokenizerKind::Vocab { tokens, .. } => tokens.get(w).copied().unwrap_or(UNK_ID),
        }
    }

    /// Content tokens of one segment, without markers.
    pub fn segment_tokens(&self, segment: &str) -> Vec<usize> {
        pieces(segment).iter().map(|p| self.piece_id(p)).collect()
    }

    /// Bracket segments with start and separator markers, truncating to the
    /// maximum length. The first (text) segment is shortened first; the start
    /// token and the final separator always survive.
    pub fn tokenize<S: AsRef<str>>(&self, segments: &[S]) -> Result<Vec<usize>> {
        if segments.is_empty() {
            return Err(Error::Input("no segments to tokenize".into()));
        }
        let mut parts: Vec<Vec<usize>> = segments.iter().map(|s| self.segment_tokens(s.as_ref())).collect();
        let fixed = 1 + parts.len() + parts[1..].iter().map(Vec::len).sum::<usize>();
        let text_budget = self.max_len.saturating_sub(fixed);
        parts[0].truncate(text_budget);

        let mut seq = Vec::with_capacity(self.max_len);
        seq.push(CLS_ID);
        for part in parts {
            seq.extend(part);
            seq.push(SEP_ID);
        }
        if seq.len() > self.max_len {
            seq.truncate(self.max_len - 1);
            seq.push(SEP_ID);
        }
        Ok(seq)
    }
}

/// Overwrite every parameter under `prefix.` with the backbone's cached
/// weights, whose names are relative to the prefix.
fn load_backbone_weights(store: &mut ParamStore, prefix: &str, id: &str) -> Result<()> {
    let path = backbone_cache_dir().join(id).join("weights.json");
    let weights: BTreeMap<String, StoredTensor> = read_json(id, &path)?;
    let prefixed = weights
        .into_iter()
        .map(|(name, t)| (format!("{prefix}.{name}"), t))
        .collect();
    store
        .load_subset(&format!("{prefix}."), &prefixed)
        .map_err(|e| Error::BackboneUnavailable {
            id: id.to_string(),
            reason: e.to_string(),
        })
}

struct Block {
    query: Linear,
    key: Linear,
    value: Linear,
    attn_out: Linear,
    attn_norm: LayerNorm,
    ffn_in: Linear,
    ffn_out: Linear,
    ffn_norm: LayerNorm,
}

/// Post-norm transformer encoder producing the start-token embedding.
pub struct TransformerEncoder {
    config: EncoderConfig,
    token_embedding: ParamId,
    position_embedding: ParamId,
    embedding_norm: LayerNorm,
    blocks: Vec<Block>,
}

impl TransformerEncoder {
    /// Register the encoder's parameters under `prefix`, initialized from `seed`
    /// and overwritten by cached weights for pretrained backbones.
    pub fn build(store: &mut ParamStore, prefix: &str, config: &EncoderConfig, seed: u64) -> Result<Self> {
        let encoder = Self::init(store, prefix, config, seed)?;
        if config.is_pretrained() {
            load_backbone_weights(store, prefix, &config.backbone_id)?;
        }
        Ok(encoder)
    }

    fn init(store: &mut ParamStore, prefix: &str, config: &EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, prefix));
        let h = config.hidden_dim;
        let g = ParamGroup::Encoder;
        let token_embedding = store.add(
            format!("{prefix}.token_embedding"),
            g,
            normal_init(&mut rng, config.vocab_size, h, 0.02),
        );
        let position_embedding = store.add(
            format!("{prefix}.position_embedding"),
            g,
            normal_init(&mut rng, config.max_sequence_length, h, 0.02),
        );
        let embedding_norm = LayerNorm::new(store, &format!("{prefix}.embedding_norm"), g, h);
        let blocks = (0..config.num_layers)
            .map(|i| {
                let p = format!("{prefix}.layer{i}");
                let mut lin = |name: &str, i, o| Linear::new(store, &format!("{p}.{name}"), g, i, o, &mut rng);
                let query = lin("query", h, h);
                let key = lin("key", h, h);
                let value = lin("value", h, h);
                let attn_out = lin("attn_out", h, h);
                let ffn_in = lin("ffn_in", h, config.intermediate_dim);
                let ffn_out = lin("ffn_out", config.intermediate_dim, h);
                Block {
                    query,
                    key,
                    value,
                    attn_out,
                    attn_norm: LayerNorm::new(store, &format!("{p}.attn_norm"), g, h),
                    ffn_in,
                    ffn_out,
                    ffn_norm: LayerNorm::new(store, &format!("{p}.ffn_norm"), g, h),
                }
            })
            .collect();
        Ok(TransformerEncoder {
            config: config.clone(),
            token_embedding,
            position_embedding,
            embedding_norm,
            blocks,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn hidden_dim(&self) -> usize {
        self.config.hidden_dim
    }

    fn check_tokens(&self, tokens: &[usize]) -> Result<()> {
        if tokens.len() > self.config.max_sequence_length {
            return Err(Error::Length {
                len: tokens.len(),
                max: self.config.max_sequence_length,
            });
        }
        if tokens.first() != Some(&CLS_ID) {
            return Err(Error::Input("token sequence must begin with the start token".into()));
        }
        if let Some(&t) = tokens.iter().find(|&&t| t >= self.config.vocab_size) {
            return Err(Error::Input(format!("token id {t} outside vocabulary")));
        }
        Ok(())
    }

    /// Hidden states for every position (L × H).
    pub fn hidden_states<'a>(&self, tape: &mut Tape<'a>, store: &'a ParamStore, tokens: &[usize]) -> Result<Var> {
        self.check_tokens(tokens)?;
        let positions: Vec<usize> = (0..tokens.len()).collect();
        let tok_table = tape.param(store, self.token_embedding);
        let pos_table = tape.param(store, self.position_embedding);
        let tok = tape.gather(tok_table, tokens);
        let pos = tape.gather(pos_table, &positions);
        let summed = tape.add(tok, pos);
        let mut x = self.embedding_norm.forward(tape, store, summed);

        let heads = self.config.num_heads;
        let head_dim = self.config.hidden_dim / heads;
        let scale = 1.0 / (head_dim as f64).sqrt();
        for block in &self.blocks {
            let q = block.query.forward(tape, store, x);
            let k = block.key.forward(tape, store, x);
            let v = block.value.forward(tape, store, x);
            let contexts: Vec<Var> = (0..heads)
                .map(|h| {
                    let qh = tape.slice_cols(q, h * head_dim, head_dim);
                    let kh = tape.slice_cols(k, h * head_dim, head_dim);
                    let vh = tape.slice_cols(v, h * head_dim, head_dim);
                    let scores = tape.matmul_t(qh, kh);
                    let scores = tape.scale(scores, scale);
                    let attn = tape.softmax_rows(scores);
                    tape.matmul(attn, vh)
                })
                .collect();
            let ctx = if heads == 1 { contexts[0] } else { tape.concat_cols(&contexts) };
            let attn_out = block.attn_out.forward(tape, store, ctx);
            let res = tape.add(x, attn_out);
            x = block.attn_norm.forward(tape, store, res);

            let inner = block.ffn_in.forward(tape, store, x);
            let inner = tape.gelu(inner);
            let ffn = block.ffn_out.forward(tape, store, inner);
            let res = tape.add(x, ffn);
            x = block.ffn_norm.forward(tape, store, res);
        }
        Ok(x)
    }

    /// Start-token embedding (1 × H).
    pub fn pooled<'a>(&self, tape: &mut Tape<'a>, store: &'a ParamStore, tokens: &[usize]) -> Result<Var> {
        let hidden = self.hidden_states(tape, store, tokens)?;
        Ok(tape.slice_rows(hidden, 0, 1))
    }
}

/// Encoder plus a 3-way output layer over raw tweet text.
pub struct SentimentHead {
    encoder: TransformerEncoder,
    output: Linear,
}

impl SentimentHead {
    pub fn build(store: &mut ParamStore, prefix: &str, config: &EncoderConfig, seed: u64) -> Result<Self> {
        let encoder = TransformerEncoder::init(store, &format!("{prefix}.encoder"), config, seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("{prefix}.output")));
        let output = Linear::new(
            store,
            &format!("{prefix}.output"),
            ParamGroup::Encoder,
            config.hidden_dim,
            SENTIMENT_CLASSES,
            &mut rng,
        );
        if config.is_pretrained() {
            // the output layer ships with the pretrained sentiment weights
            load_backbone_weights(store, prefix, &config.backbone_id)?;
        }
        Ok(SentimentHead { encoder, output })
    }

    pub fn config(&self) -> &EncoderConfig {
        self.encoder.config()
    }

    /// Pre-softmax scores (1 × 3).
    pub fn logits<'a>(&self, tape: &mut Tape<'a>, store: &'a ParamStore, tokens: &[usize]) -> Result<Var> {
        let pooled = self.encoder.pooled(tape, store, tokens)?;
        Ok(self.output.forward(tape, store, pooled))
    }

    /// Softmaxed distribution (1 × 3), differentiable.
    pub fn probs<'a>(&self, tape: &mut Tape<'a>, store: &'a ParamStore, tokens: &[usize]) -> Result<Var> {
        let logits = self.logits(tape, store, tokens)?;
        Ok(tape.softmax_rows(logits))
    }
}

fn require_text(text: &str) -> Result<()> {
    if text.trim().is_empty() {
        Err(Error::Input("sentiment input text is empty".into()))
    } else {
        Ok(())
    }
}

/// Evaluate the sentiment head of `store` on raw text.
pub fn sentiment_probs_with(
    head: &SentimentHead,
    store: &ParamStore,
    tokenizer: &Tokenizer,
    text: &str,
) -> Result<SentimentDistribution> {
    require_text(text)?;
    let tokens = tokenizer.tokenize(&[text])?;
    let mut tape = Tape::new();
    let logits = head.logits(&mut tape, store, &tokens)?;
    let l = tape.value(logits);
    Ok(SentimentDistribution::from_logits([l[[0, 0]], l[[0, 1]], l[[0, 2]]]))
}

/// A text encoder with its own parameters and tokenizer.
pub struct TextEncoderModel {
    pub store: ParamStore,
    pub encoder: TransformerEncoder,
    pub tokenizer: Tokenizer,
}

impl TextEncoderModel {
    pub fn new(config: &EncoderConfig, seed: u64) -> Result<Self> {
        let tokenizer = Tokenizer::for_config(config)?;
        let mut store = ParamStore::new();
        let encoder = TransformerEncoder::build(&mut store, "text", config, seed)?;
        Ok(TextEncoderModel {
            store,
            encoder,
            tokenizer,
        })
    }

    pub fn tokenize<S: AsRef<str>>(&self, segments: &[S]) -> Result<Vec<usize>> {
        self.tokenizer.tokenize(segments)
    }

    /// Start-token embedding of length H.
    pub fn encode(&self, tokens: &[usize]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let pooled = self.encoder.pooled(&mut tape, &self.store, tokens)?;
        Ok(tape.value(pooled).iter().copied().collect())
    }
}

/// A sentiment head with its own parameters and tokenizer.
pub struct SentimentModel {
    pub store: ParamStore,
    pub head: SentimentHead,
    pub tokenizer: Tokenizer,
}

impl SentimentModel {
    pub fn new(config: &EncoderConfig, seed: u64) -> Result<Self> {
        let tokenizer = Tokenizer::for_config(config)?;
        let mut store = ParamStore::new();
        let head = SentimentHead::build(&mut store, "sentiment", config, seed)?;
        Ok(SentimentModel { store, head, tokenizer })
    }

    pub fn sentiment_probs(&self, text: &str) -> Result<SentimentDistribution> {
        sentiment_probs_with(&self.head, &self.store, &self.tokenizer, text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toy_tokenizer(max: usize) -> Tokenizer {
        let mut c = EncoderConfig::toy(16);
        c.max_sequence_length = max;
        Tokenizer::for_config(&c).unwrap()
    }

    #[test]
    fn layout_matches_start_sep_pattern() {
        let t = toy_tokenizer(128);
        let gm = t.segment_tokens("gm");
        assert_eq!(gm.len(), 1);
        let seq = t.tokenize(&["gm", "0"]).unwrap();
        assert_eq!(seq, vec![CLS_ID, gm[0], SEP_ID, DIGIT_BASE, SEP_ID]);
    }

    #[test]
    fn empty_segment_yields_bare_separator() {
        let t = toy_tokenizer(128);
        assert_eq!(t.tokenize(&[""]).unwrap(), vec![CLS_ID, SEP_ID]);
        assert!(matches!(t.tokenize::<&str>(&[]), Err(Error::Input(_))));
    }

    #[test]
    fn truncation_keeps_numerics_and_markers() {
        let t = toy_tokenizer(16);
        let long = "word ".repeat(100);
        let seq = t.tokenize(&[long.as_str(), "250", "1"]).unwrap();
        assert_eq!(seq.len(), 16);
        assert_eq!(seq[0], CLS_ID);
        assert_eq!(*seq.last().unwrap(), SEP_ID);
        let d = |n| DIGIT_BASE + n;
        let tail = [SEP_ID, d(2), d(5), d(0), SEP_ID, d(1), SEP_ID];
        assert_eq!(&seq[16 - tail.len()..], &tail);

        // numerics alone overflow: hard cut, final separator restored
        let many: Vec<String> = (0..20).map(|_| "123456".to_string()).collect();
        let seq = t.tokenize(&many).unwrap();
        assert_eq!(seq.len(), 16);
        assert_eq!(*seq.last().unwrap(), SEP_ID);
    }

    #[test]
    fn pieces_split_digits_and_symbols() {
        assert_eq!(
            pieces("Hi #Cat 42!"),
            vec![
                Piece::Word("hi".into()),
                Piece::Symbol('#'),
                Piece::Word("cat".into()),
                Piece::Digit(4),
                Piece::Digit(2),
                Piece::Symbol('!'),
            ]
        );
    }

    #[test]
    fn encode_shape_and_determinism() {
        let m = TextEncoderModel::new(&EncoderConfig::toy(32), 5).unwrap();
        let tokens = m.tokenize(&["good morning", "12"]).unwrap();
        let a = m.encode(&tokens).unwrap();
        assert_eq!(a.len(), 32);
        assert_eq!(a, m.encode(&tokens).unwrap());
    }

    #[test]
    fn encode_rejects_bad_sequences() {
        let mut cfg = EncoderConfig::toy(8);
        cfg.max_sequence_length = 8;
        let m = TextEncoderModel::new(&cfg, 1).unwrap();
        assert!(matches!(m.encode(&[CLS_ID; 9]), Err(Error::Length { len: 9, max: 8 })));
        assert!(matches!(m.encode(&[SEP_ID, SEP_ID]), Err(Error::Input(_))));
    }

    #[test]
    fn sentiment_is_distribution_and_deterministic() {
        let a = SentimentModel::new(&EncoderConfig::toy(16), 11).unwrap();
        let b = SentimentModel::new(&EncoderConfig::toy(16), 11).unwrap();
        let p = a.sentiment_probs("what a lovely day").unwrap();
        assert_eq!(p, b.sentiment_probs("what a lovely day").unwrap());
        assert!((p.to_array().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(matches!(a.sentiment_probs("  "), Err(Error::Input(_))));
    }

    #[test]
    fn zero_logits_give_uniform_distribution() {
        let s = SentimentDistribution::from_logits([0.0; 3]);
        for p in s.to_array() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn config_validation() {
        let mut c = EncoderConfig::toy(30);
        assert_eq!(c.num_heads, 1);
        c.max_sequence_length = 7;
        assert!(c.validate().is_err());
        let p = EncoderConfig::pretrained(TEXT_BACKBONE).unwrap();
        assert_eq!((p.hidden_dim, p.num_layers, p.num_heads), (768, 12, 12));
        let mut bad = p.clone();
        bad.hidden_dim = 64;
        assert!(bad.validate().is_err());
        assert!(EncoderConfig::pretrained("gpt-17").is_err());
    }

    #[test]
    fn missing_pretrained_weights_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        // only this test reads pretrained backbones
        std::env::set_var(BACKBONE_CACHE_ENV, dir.path());
        let err = Tokenizer::for_config(&EncoderConfig::pretrained(TEXT_BACKBONE).unwrap()).unwrap_err();
        assert!(matches!(err, Error::BackboneUnavailable { .. }), "{err}");
    }

    proptest! {
        #[test]
        fn separators_recover_segments(segs in prop::collection::vec("[a-z0-9 #@!]{0,12}", 1..6)) {
            let t = toy_tokenizer(512);
            let seq = t.tokenize(&segs).unwrap();
            let mut recovered: Vec<Vec<usize>> = Vec::new();
            let mut cur = Vec::new();
            for &tok in &seq[1..] {
                if tok == SEP_ID {
                    recovered.push(std::mem::take(&mut cur));
                } else {
                    cur.push(tok);
                }
            }
            let expected: Vec<_> = segs.iter().map(|s| t.segment_tokens(s)).collect();
            prop_assert_eq!(recovered, expected);
        }

        #[test]
        fn sentiment_normalized_for_any_text(text in "[a-zA-Z0-9 #@!?.]{1,40}") {
            prop_assume!(!text.trim().is_empty());
            let m = SentimentModel::new(&EncoderConfig::toy(8), 3).unwrap();
            let p = m.sentiment_probs(&text).unwrap();
            prop_assert!(SentimentDistribution::new(p.negative, p.neutral, p.positive).is_ok());
        }
    }
}
