//! Numeric tweet features, min-max scaling for the baselines, and
//! serialization of text plus raw numerics into encoder segments.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::TweetRecord;
use crate::encoder::SentimentDistribution;
use crate::error::{Error, Result};

pub const NUM_NUMERIC_FEATURES: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NumericFeature {
    Hashtags,
    Mentions,
    Followers,
    Following,
    Verified,
    TextLength,
}

impl NumericFeature {
    /// hashtags, mentions, followers, following, verified, text_length.
    pub const CANONICAL_ORDER: [NumericFeature; NUM_NUMERIC_FEATURES] = [
        NumericFeature::Hashtags,
        NumericFeature::Mentions,
        NumericFeature::Followers,
        NumericFeature::Following,
        NumericFeature::Verified,
        NumericFeature::TextLength,
    ];

    pub fn name(self) -> &'static str {
        match self {
            NumericFeature::Hashtags => "hashtags",
            NumericFeature::Mentions => "mentions",
            NumericFeature::Followers => "followers",
            NumericFeature::Following => "following",
            NumericFeature::Verified => "verified",
            NumericFeature::TextLength => "text_length",
        }
    }

    /// Position in the canonical order, which is also the column in scaled vectors.
    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for NumericFeature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NumericFeature {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        NumericFeature::CANONICAL_ORDER
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown feature name `{s}`")))
    }
}

/// Parse a feature order, rejecting unknown and repeated names.
pub fn parse_feature_order<S: AsRef<str>>(names: &[S]) -> Result<Vec<NumericFeature>> {
    let mut order = Vec::with_capacity(names.len());
    for name in names {
        let f: NumericFeature = name.as_ref().parse()?;
        if order.contains(&f) {
            return Err(Error::Config(format!("feature `{f}` listed twice")));
        }
        order.push(f);
    }
    Ok(order)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    /// Enabled numeric features in serialization order.
    pub order: Vec<NumericFeature>,
    /// Count hashtags and mentions from the text; otherwise use the stored counts.
    pub parse_text: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            order: NumericFeature::CANONICAL_ORDER.to_vec(),
            parse_text: true,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        let names: Vec<_> = self.order.iter().map(|f| f.name()).collect();
        parse_feature_order(&names).map(|_| ())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub hashtags: u64,
    pub mentions: u64,
    pub followers: u64,
    pub following: u64,
    pub verified: u8,
    /// Unicode scalar count of the raw text.
    pub text_length: u64,
    pub sentiment: Option<SentimentDistribution>,
}

impl FeatureVector {
    pub fn get(&self, feature: NumericFeature) -> u64 {
        match feature {
            NumericFeature::Hashtags => self.hashtags,
            NumericFeature::Mentions => self.mentions,
            NumericFeature::Followers => self.followers,
            NumericFeature::Following => self.following,
            NumericFeature::Verified => self.verified as u64,
            NumericFeature::TextLength => self.text_length,
        }
    }

    pub fn numeric(&self) -> [f64; NUM_NUMERIC_FEATURES] {
        NumericFeature::CANONICAL_ORDER.map(|f| self.get(f) as f64)
    }

    pub fn with_sentiment(mut self, s: SentimentDistribution) -> Self {
        self.sentiment = Some(s);
        self
    }
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

/// Count maximal tokens made of `marker` followed by at least one word character.
pub fn count_prefixed_tokens(text: &str, marker: char) -> u64 {
    let chars: Vec<char> = text.chars().collect();
    let mut count = 0;
    let mut i = 0;
    while i < chars.len() {
        if chars[i] == marker && chars.get(i + 1).is_some_and(|&c| is_word_char(c)) {
            count += 1;
            i += 1;
            while i < chars.len() && is_word_char(chars[i]) {
                i += 1;
            }
        } else {
            i += 1;
        }
    }
    count
}

pub fn extract_features(record: &TweetRecord, config: &FeatureConfig) -> FeatureVector {
    let (hashtags, mentions) = if config.parse_text {
        (
            count_prefixed_tokens(&record.text, '#'),
            count_prefixed_tokens(&record.text, '@'),
        )
    } else {
        (record.hashtag_count, record.mention_count)
    };
    FeatureVector {
        hashtags,
        mentions,
        followers: record.followers,
        following: record.following,
        verified: record.verified as u8,
        text_length: record.text.chars().count() as u64,
        sentiment: None,
    }
}

/// Segments for the text encoder: the text followed by each feature in
/// `order`, rendered as base-10 integers. The tokenizer adds the start and
/// separator markers.
pub fn serialize_model_input<S: AsRef<str>>(
    text: &str,
    v: &FeatureVector,
    order: &[S],
) -> Result<Vec<String>> {
    let order = parse_feature_order(order)?;
    Ok(serialize_segments(text, v, &order))
}

pub fn serialize_segments(text: &str, v: &FeatureVector, order: &[NumericFeature]) -> Vec<String> {
    std::iter::once(text.to_string())
        .chain(order.iter().map(|&f| v.get(f).to_string()))
        .collect()
}

/// Per-feature min/max fitted on training vectors, in canonical order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerState {
    pub min: [f64; NUM_NUMERIC_FEATURES],
    pub max: [f64; NUM_NUMERIC_FEATURES],
}

impl ScalerState {
    pub fn is_constant(&self, feature: NumericFeature) -> bool {
        let i = feature.index();
        self.max[i] == self.min[i]
    }

    pub fn constant_features(&self) -> Vec<NumericFeature> {
        NumericFeature::CANONICAL_ORDER
            .into_iter()
            .filter(|&f| self.is_constant(f))
            .collect()
    }

    /// `(x - min) / (max - min)` per feature, unclipped; constant features map to 0.
    pub fn apply(&self, v: &FeatureVector) -> [f64; NUM_NUMERIC_FEATURES] {
        let raw = v.numeric();
        std::array::from_fn(|i| {
            let range = self.max[i] - self.min[i];
            if range == 0.0 {
                0.0
            } else {
                (raw[i] - self.min[i]) / range
            }
        })
    }
}

pub fn fit_minmax(train: &[FeatureVector]) -> Result<ScalerState> {
    let first = train
        .first()
        .ok_or_else(|| Error::Fit("cannot fit min-max scaler on an empty training set".into()))?
        .numeric();
    let (mut min, mut max) = (first, first);
    for v in &train[1..] {
        for (i, x) in v.numeric().into_iter().enumerate() {
            min[i] = min[i].min(x);
            max[i] = max[i].max(x);
        }
    }
    Ok(ScalerState { min, max })
}

pub fn apply_minmax(state: &ScalerState, v: &FeatureVector) -> [f64; NUM_NUMERIC_FEATURES] {
    state.apply(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::tests::record;
    use proptest::prelude::*;

    fn fv(followers: u64) -> FeatureVector {
        FeatureVector {
            hashtags: 0,
            mentions: 1,
            followers,
            following: 100,
            verified: 1,
            text_length: 2,
            sentiment: None,
        }
    }

    #[test]
    fn extract_counts_tags_and_mentions() {
        let mut r = record("x", 0);
        r.text = "Hello #a #b @c".into();
        r.verified = true;
        let v = extract_features(&r, &FeatureConfig::default());
        assert_eq!((v.hashtags, v.mentions, v.verified, v.text_length), (2, 1, 1, 14));

        r.text = "nohash".into();
        let v = extract_features(&r, &FeatureConfig::default());
        assert_eq!((v.hashtags, v.mentions), (0, 0));

        r.text = "#".into();
        assert_eq!(extract_features(&r, &FeatureConfig::default()).hashtags, 0);
    }

    #[test]
    fn tokenization_edge_cases() {
        assert_eq!(count_prefixed_tokens("#a#b", '#'), 2);
        assert_eq!(count_prefixed_tokens("# a ## #_x", '#'), 1);
        assert_eq!(count_prefixed_tokens("mail@host @ @é", '@'), 2);
    }

    #[test]
    fn stored_counts_when_parsing_disabled() {
        let mut r = record("x", 0);
        r.text = "#a #b".into();
        r.hashtag_count = 9;
        r.mention_count = 4;
        let cfg = FeatureConfig {
            parse_text: false,
            ..FeatureConfig::default()
        };
        let v = extract_features(&r, &cfg);
        assert_eq!((v.hashtags, v.mentions), (9, 4));
    }

    #[test]
    fn text_length_counts_chars_not_bytes() {
        let mut r = record("x", 0);
        r.text = "héllo 🐶".into();
        assert_eq!(extract_features(&r, &FeatureConfig::default()).text_length, 7);
    }

    #[test]
    fn serialize_canonical_and_variants() {
        let names: Vec<_> = NumericFeature::CANONICAL_ORDER.iter().map(|f| f.name()).collect();
        let segs = serialize_model_input("gm", &fv(250), &names).unwrap();
        assert_eq!(segs, ["gm", "0", "1", "250", "100", "1", "2"]);

        let none: [&str; 0] = [];
        assert_eq!(serialize_model_input("gm", &fv(250), &none).unwrap(), ["gm"]);

        let ablated = &names[1..];
        let segs = serialize_model_input("gm", &fv(250), ablated).unwrap();
        assert_eq!(segs.len(), 6);
        assert_eq!(segs, ["gm", "1", "250", "100", "1", "2"]);
    }

    #[test]
    fn serialize_rejects_unknown_and_repeated_names() {
        assert!(matches!(
            serialize_model_input("gm", &fv(1), &["likes"]),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            serialize_model_input("gm", &fv(1), &["followers", "followers"]),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn minmax_fit_and_apply() {
        let train = vec![fv(0), fv(5), fv(10)];
        let s = fit_minmax(&train).unwrap();
        let i = NumericFeature::Followers.index();
        assert_eq!((s.min[i], s.max[i]), (0.0, 10.0));
        assert_eq!(s.apply(&fv(5))[i], 0.5);
        assert_eq!(s.apply(&fv(20))[i], 2.0);
        // following is 100 everywhere
        assert!(s.is_constant(NumericFeature::Following));
        assert_eq!(s.apply(&fv(3))[NumericFeature::Following.index()], 0.0);
    }

    #[test]
    fn single_row_fit_is_all_constant() {
        let s = fit_minmax(&[fv(7)]).unwrap();
        assert_eq!(s.constant_features().len(), NUM_NUMERIC_FEATURES);
        assert!(s.apply(&fv(123)).iter().all(|&x| x == 0.0));
        assert!(matches!(fit_minmax(&[]), Err(Error::Fit(_))));
    }

    proptest! {
        #[test]
        fn scaled_training_columns_span_unit_interval(
            rows in prop::collection::vec((0u64..10_000, 0u64..50, 0u64..2), 2..40)
        ) {
            let train: Vec<_> = rows
                .iter()
                .map(|&(f, h, v)| FeatureVector { hashtags: h, verified: v as u8, ..fv(f) })
                .collect();
            let s = fit_minmax(&train).unwrap();
            let scaled: Vec<_> = train.iter().map(|v| s.apply(v)).collect();
            for f in NumericFeature::CANONICAL_ORDER {
                if s.is_constant(f) {
                    continue;
                }
                let col = scaled.iter().map(|r| r[f.index()]);
                let lo = col.clone().fold(f64::INFINITY, f64::min);
                let hi = col.fold(f64::NEG_INFINITY, f64::max);
                prop_assert_eq!(lo, 0.0);
                prop_assert_eq!(hi, 1.0);
            }
        }

        #[test]
        fn serialization_is_injective(
            a in (0u64..1000, 0u64..1000), b in (0u64..1000, 0u64..1000),
            ta in "[a-z ]{1,8}", tb in "[a-z ]{1,8}",
        ) {
            let va = FeatureVector { hashtags: a.0, followers: a.1, ..fv(0) };
            let vb = FeatureVector { hashtags: b.0, followers: b.1, ..fv(0) };
            let order = NumericFeature::CANONICAL_ORDER;
            let sa = serialize_segments(&ta, &va, &order);
            let sb = serialize_segments(&tb, &vb, &order);
            prop_assert_eq!(sa == sb, ta == tb && a == b);
        }
    }
}
