//! Tweet record ingestion, virality banding, zero-class rebalancing and the
//! train/validation/test split.
//!
//! Record files are line-delimited JSON, one [`TweetRecord`] per line, keyed by
//! the record's field names. Records are deduplicated by id (first occurrence
//! wins) and every schema violation is reported with its line number.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use chrono::{DateTime, Utc};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, LineError, Result};

pub const NUM_CLASSES: usize = 4;

/// Topic assigned to records that carry no topic annotation.
pub const UNKNOWN_TOPIC: &str = "unknown";

/// One collected tweet with its 24-hour engagement counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TweetRecord {
    pub id: String,
    pub text: String,
    pub created_at: DateTime<Utc>,
    pub source_client: String,
    pub hashtag_count: u64,
    pub mention_count: u64,
    pub followers: u64,
    pub following: u64,
    pub verified: bool,
    pub retweet_count: u64,
    // like/reply/quote are collected alongside retweets but never used as
    // features or labels.
    pub like_count: u64,
    pub reply_count: u64,
    pub quote_count: u64,
    pub topic: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lang: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub is_retweet: Option<bool>,
}

impl TweetRecord {
    pub fn label(&self) -> ViralityLabel {
        ViralityLabel::from_retweets(self.retweet_count)
    }
}

/// Virality class derived from the 24-hour retweet count.
///
/// | class | retweets |
/// |-------|----------|
/// | 0     | 0        |
/// | 1     | 1        |
/// | 2     | 2..=20   |
/// | 3     | 21+      |
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ViralityLabel(u8);

impl ViralityLabel {
    pub fn new(class_index: usize) -> Result<Self> {
        if class_index < NUM_CLASSES {
            Ok(ViralityLabel(class_index as u8))
        } else {
            Err(Error::Domain(format!(
                "class index {class_index} outside 0..{NUM_CLASSES}"
            )))
        }
    }

    pub fn from_retweets(retweets: u64) -> Self {
        ViralityLabel(match retweets {
            0 => 0,
            1 => 1,
            2..=20 => 2,
            _ => 3,
        })
    }

    pub fn class_index(self) -> usize {
        self.0 as usize
    }
}

/// Map a (possibly signed) retweet count onto its virality band.
pub fn assign_virality_class(retweet_count: i64) -> Result<ViralityLabel> {
    u64::try_from(retweet_count)
        .map(ViralityLabel::from_retweets)
        .map_err(|_| Error::Domain(format!("negative retweet count {retweet_count}")))
}

/// Ingestion-time predicates standing in for the collection API's filters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestFilter {
    /// Allowed topics; `None` keeps every topic (including "unknown").
    pub topics: Option<Vec<String>>,
    /// Drop records whose `lang` is present and not "en".
    pub english_only: bool,
    /// Drop records flagged `is_retweet: true`.
    pub originals_only: bool,
}

impl Default for IngestFilter {
    fn default() -> Self {
        IngestFilter {
            topics: None,
            english_only: true,
            originals_only: true,
        }
    }
}

impl IngestFilter {
    pub fn accepts(&self, record: &TweetRecord) -> bool {
        if self.english_only && record.lang.as_deref().is_some_and(|l| l != "en") {
            return false;
        }
        if self.originals_only && record.is_retweet == Some(true) {
            return false;
        }
        match &self.topics {
            Some(topics) => topics.iter().any(|t| *t == record.topic),
            None => true,
        }
    }
}

/// Summary of an ingestion pass.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub lines_read: usize,
    pub duplicates_removed: usize,
    pub filtered_out: usize,
    pub retained: usize,
}

/// Load, validate and deduplicate a record file.
pub fn load_tweet_records(path: impl AsRef<Path>) -> Result<Vec<TweetRecord>> {
    let (records, _) = parse_records(path.as_ref())?;
    Ok(records)
}

/// [`load_tweet_records`] followed by the ingestion filters.
pub fn ingest(path: impl AsRef<Path>, filter: &IngestFilter) -> Result<(Vec<TweetRecord>, IngestSummary)> {
    let (records, mut summary) = parse_records(path.as_ref())?;
    let before = records.len();
    let kept: Vec<TweetRecord> = records.into_iter().filter(|r| filter.accepts(r)).collect();
    summary.filtered_out = before - kept.len();
    summary.retained = kept.len();
    Ok((kept, summary))
}

fn parse_records(path: &Path) -> Result<(Vec<TweetRecord>, IngestSummary)> {
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut errors = Vec::new();
    let mut seen = HashSet::new();
    let mut records = Vec::new();
    let mut summary = IngestSummary::default();

    for (idx, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        summary.lines_read += 1;
        match parse_record_line(idx + 1, line) {
            Ok(record) => {
                if seen.insert(record.id.clone()) {
                    records.push(record);
                } else {
                    summary.duplicates_removed += 1;
                }
            }
            Err(mut e) => errors.append(&mut e),
        }
    }
    if !errors.is_empty() {
        return Err(Error::Validation(errors));
    }
    summary.retained = records.len();
    Ok((records, summary))
}

/// Parse one line, collecting every field-level problem.
pub fn parse_record_line(line_no: usize, line: &str) -> std::result::Result<TweetRecord, Vec<LineError>> {
    let value: Value = serde_json::from_str(line).map_err(|e| {
        vec![LineError {
            line: line_no,
            field: "<record>".into(),
            message: format!("malformed JSON: {e}"),
        }]
    })?;
    let Value::Object(obj) = value else {
        return Err(vec![LineError {
            line: line_no,
            field: "<record>".into(),
            message: "expected a JSON object".into(),
        }]);
    };

    let mut fields = FieldReader {
        line: line_no,
        obj: &obj,
        errors: Vec::new(),
    };
    let id = fields.string("id");
    let text = fields.string("text");
    let created_at = fields.timestamp("created_at");
    let source_client = fields.string("source_client");
    let hashtag_count = fields.count("hashtag_count");
    let mention_count = fields.count("mention_count");
    let followers = fields.count("followers");
    let following = fields.count("following");
    let verified = fields.boolean("verified");
    let retweet_count = fields.count("retweet_count");
    let like_count = fields.count("like_count");
    let reply_count = fields.count("reply_count");
    let quote_count = fields.count("quote_count");
    let topic = fields.optional_string("topic");
    let lang = fields.optional_string("lang");
    let is_retweet = fields.optional_bool("is_retweet");

    if let Some(t) = &text {
        if t.trim().is_empty() {
            fields.fail("text", "empty after trimming whitespace");
        }
    }
    if let Some(id) = &id {
        if id.is_empty() {
            fields.fail("id", "empty id");
        }
    }
    if !fields.errors.is_empty() {
        return Err(fields.errors);
    }

    // Every required field is Some once no errors were recorded.
    Ok(TweetRecord {
        id: id.unwrap(),
        text: text.unwrap(),
        created_at: created_at.unwrap(),
        source_client: source_client.unwrap(),
        hashtag_count: hashtag_count.unwrap(),
        mention_count: mention_count.unwrap(),
        followers: followers.unwrap(),
        following: following.unwrap(),
        verified: verified.unwrap(),
        retweet_count: retweet_count.unwrap(),
        like_count: like_count.unwrap(),
        reply_count: reply_count.unwrap(),
        quote_count: quote_count.unwrap(),
        topic: topic.unwrap_or_else(|| UNKNOWN_TOPIC.to_string()),
        lang,
        is_retweet,
    })
}

struct FieldReader<'a> {
    line: usize,
    obj: &'a Map<String, Value>,
    errors: Vec<LineError>,
}

impl FieldReader<'_> {
    fn fail(&mut self, field: &str, message: impl Into<String>) {
        self.errors.push(LineError {
            line: self.line,
            field: field.to_string(),
            message: message.into(),
        });
    }

    fn required(&mut self, field: &str) -> Option<&Value> {
        match self.obj.get(field) {
            None | Some(Value::Null) => {
                self.fail(field, "missing required field");
                None
            }
            Some(v) => Some(v),
        }
    }

    fn string(&mut self, field: &str) -> Option<String> {
        match self.required(field)? {
            Value::String(s) => Some(s.clone()),
            other => {
                let msg = format!("expected string, found {other}");
                self.fail(field, msg);
                None
            }
        }
    }

    fn optional_string(&mut self, field: &str) -> Option<String> {
        match self.obj.get(field) {
            None | Some(Value::Null) => None,
            Some(Value::String(s)) => Some(s.clone()),
            Some(other) => {
                let msg = format!("expected string, found {other}");
                self.fail(field, msg);
                None
            }
        }
    }

    fn optional_bool(&mut self, field: &str) -> Option<bool> {
        match self.obj.get(field) {
            None | Some(Value::Null) => None,
            Some(Value::Bool(b)) => Some(*b),
            Some(other) => {
                let msg = format!("expected boolean, found {other}");
                self.fail(field, msg);
                None
            }
        }
    }

    fn count(&mut self, field: &str) -> Option<u64> {
        let v = self.required(field)?;
        match v.as_u64() {
            Some(n) => Some(n),
            None => {
                let msg = format!("expected non-negative integer, found {v}");
                self.fail(field, msg);
                None
            }
        }
    }

    fn boolean(&mut self, field: &str) -> Option<bool> {
        match self.required(field)? {
            Value::Bool(b) => Some(*b),
            other => {
                let msg = format!("expected boolean, found {other}");
                self.fail(field, msg);
                None
            }
        }
    }

    fn timestamp(&mut self, field: &str) -> Option<DateTime<Utc>> {
        let raw = self.string(field)?;
        match DateTime::parse_from_rfc3339(&raw) {
            Ok(t) => Some(t.with_timezone(&Utc)),
            Err(e) => {
                self.fail(field, format!("invalid RFC 3339 timestamp {raw:?}: {e}"));
                None
            }
        }
    }
}

/// Write records as line-delimited JSON.
pub fn write_tweet_records(path: impl AsRef<Path>, records: &[TweetRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Per-class and per-topic counts of a corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub total: usize,
    pub class_counts: [usize; NUM_CLASSES],
    pub topic_counts: BTreeMap<String, usize>,
}

impl CorpusStats {
    pub fn from_records(records: &[TweetRecord]) -> Self {
        let mut class_counts = [0; NUM_CLASSES];
        let mut topic_counts = BTreeMap::new();
        for r in records {
            class_counts[r.label().class_index()] += 1;
            *topic_counts.entry(r.topic.clone()).or_insert(0) += 1;
        }
        CorpusStats {
            total: records.len(),
            class_counts,
            topic_counts,
        }
    }
}

pub fn class_counts(records: &[TweetRecord]) -> [usize; NUM_CLASSES] {
    CorpusStats::from_records(records).class_counts
}

/// Downsample zero-retweet records to the number of records with at least one
/// retweet. A zero class that is already no larger is left as is.
///
/// Membership is decided by a uniform sample without replacement; surviving
/// records keep their input order.
pub fn rebalance_zero_class(records: &[TweetRecord], seed: u64) -> Vec<TweetRecord> {
    let zero: Vec<usize> = records
        .iter()
        .enumerate()
        .filter(|(_, r)| r.label().class_index() == 0)
        .map(|(i, _)| i)
        .collect();
    let nonzero = records.len() - zero.len();
    if zero.len() <= nonzero {
        return records.to_vec();
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = vec![true; records.len()];
    for &i in &zero {
        keep[i] = false;
    }
    for pick in rand::seq::index::sample(&mut rng, zero.len(), nonzero) {
        keep[zero[pick]] = true;
    }
    records
        .iter()
        .zip(keep)
        .filter_map(|(r, k)| k.then(|| r.clone()))
        .collect()
}

/// Random 80:10:10 partition of a labeled corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<TweetRecord>,
    pub validation: Vec<TweetRecord>,
    pub test: Vec<TweetRecord>,
    pub seed: u64,
}

pub const MIN_SPLIT_RECORDS: usize = 10;

/// Sizes for a corpus of `n` records: validation and test get n / 10 each,
/// rounded to nearest with ties down, and train takes the remainder.
///
/// Flooring the tenth instead would leave train up to 1.8 records above 80%
/// (36 records give 30/3/3); nearest rounding keeps every subset within one.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let tenth = (n + 4) / 10;
    (n - 2 * tenth, tenth, tenth)
}

pub fn split_dataset(records: &[TweetRecord], seed: u64) -> Result<DatasetSplit> {
    if records.len() < MIN_SPLIT_RECORDS {
        return Err(Error::Size(format!(
            "need at least {MIN_SPLIT_RECORDS} records to split, got {}",
            records.len()
        )));
    }
    let mut order: Vec<usize> = (0..records.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let (n_train, n_val, _) = split_sizes(records.len());
    let take = |idx: &[usize]| idx.iter().map(|&i| records[i].clone()).collect::<Vec<_>>();
    Ok(DatasetSplit {
        train: take(&order[..n_train]),
        validation: take(&order[n_train..n_train + n_val]),
        test: take(&order[n_train + n_val..]),
        seed,
    })
}

/// Ids per split, the artifact written by `prepare`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
    pub train_class_counts: [usize; NUM_CLASSES],
}

impl From<&DatasetSplit> for SplitManifest {
    fn from(split: &DatasetSplit) -> Self {
        let ids = |v: &[TweetRecord]| v.iter().map(|r| r.id.clone()).collect();
        SplitManifest {
            seed: split.seed,
            train: ids(&split.train),
            validation: ids(&split.validation),
            test: ids(&split.test),
            train_class_counts: class_counts(&split.train),
        }
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn record(id: &str, retweets: u64) -> TweetRecord {
        TweetRecord {
            id: id.to_string(),
            text: format!("tweet {id}"),
            created_at: DateTime::parse_from_rfc3339("2021-10-01T12:00:00Z")
                .unwrap()
                .with_timezone(&Utc),
            source_client: "Twitter Web App".into(),
            hashtag_count: 0,
            mention_count: 0,
            followers: 10,
            following: 5,
            verified: false,
            retweet_count: retweets,
            like_count: 0,
            reply_count: 0,
            quote_count: 0,
            topic: "Pets".into(),
            lang: None,
            is_retweet: None,
        }
    }

    fn line(id: &str, retweets: u64) -> String {
        serde_json::to_string(&record(id, retweets)).unwrap()
    }

    #[test]
    fn bands() {
        let class = |n| assign_virality_class(n).unwrap().class_index();
        assert_eq!(class(0), 0);
        assert_eq!(class(1), 1);
        assert_eq!(class(2), 2);
        assert_eq!(class(20), 2);
        assert_eq!(class(21), 3);
        assert_eq!(class(i64::MAX), 3);
        assert!(matches!(assign_virality_class(-1), Err(Error::Domain(_))));
    }

    #[test]
    fn duplicate_ids_keep_first() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let mut second = record("t1", 5);
        second.text = "later copy".into();
        let content = format!("{}\n{}\n", line("t1", 0), serde_json::to_string(&second).unwrap());
        fs::write(&path, content).unwrap();
        let records = load_tweet_records(&path).unwrap();
        assert_eq!(records.len(), 1);
        assert_eq!(records[0].retweet_count, 0);
    }

    #[test]
    fn empty_file_is_empty_corpus() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        fs::write(&path, "").unwrap();
        assert!(load_tweet_records(&path).unwrap().is_empty());
    }

    #[test]
    fn missing_retweet_count_names_line_and_field() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        let mut v: Value = serde_json::from_str(&line("t2", 3)).unwrap();
        v.as_object_mut().unwrap().remove("retweet_count");
        fs::write(&path, format!("{}\n{}\n", line("t1", 0), v)).unwrap();
        match load_tweet_records(&path) {
            Err(Error::Validation(errs)) => {
                assert_eq!(errs.len(), 1);
                assert_eq!(errs[0].line, 2);
                assert_eq!(errs[0].field, "retweet_count");
            }
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn negative_count_and_blank_text_rejected() {
        let mut v: Value = serde_json::from_str(&line("t1", 0)).unwrap();
        v["followers"] = Value::from(-3);
        v["text"] = Value::from("   ");
        let errs = parse_record_line(7, &v.to_string()).unwrap_err();
        let fields: Vec<_> = errs.iter().map(|e| e.field.as_str()).collect();
        assert!(fields.contains(&"followers"));
        assert!(fields.contains(&"text"));
        assert!(errs.iter().all(|e| e.line == 7));
    }

    #[test]
    fn missing_topic_becomes_unknown() {
        let mut v: Value = serde_json::from_str(&line("t1", 0)).unwrap();
        v.as_object_mut().unwrap().remove("topic");
        let r = parse_record_line(1, &v.to_string()).unwrap();
        assert_eq!(r.topic, UNKNOWN_TOPIC);
    }

    #[test]
    fn unreadable_file_is_io_error() {
        let err = load_tweet_records("/definitely/not/here.jsonl").unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn filters() {
        let mut foreign = record("a", 0);
        foreign.lang = Some("es".into());
        let mut rt = record("b", 0);
        rt.is_retweet = Some(true);
        let mut other_topic = record("c", 0);
        other_topic.topic = "K-pop".into();
        let plain = record("d", 0);

        let f = IngestFilter {
            topics: Some(vec!["Pets".into()]),
            ..IngestFilter::default()
        };
        assert!(!f.accepts(&foreign));
        assert!(!f.accepts(&rt));
        assert!(!f.accepts(&other_topic));
        assert!(f.accepts(&plain));
        assert!(IngestFilter::default().accepts(&other_topic));
    }

    #[test]
    fn rebalance_downsamples_zero_class() {
        let mut records: Vec<_> = (0..10).map(|i| record(&format!("z{i}"), 0)).collect();
        records.extend((0..4).map(|i| record(&format!("n{i}"), 1 + i)));
        let out = rebalance_zero_class(&records, 3);
        assert_eq!(out.len(), 8);
        assert_eq!(class_counts(&out)[0], 4);
        let nonzero: Vec<_> = out.iter().filter(|r| r.retweet_count > 0).collect();
        assert_eq!(nonzero.len(), 4);
        for r in &out {
            assert!(records.contains(r));
        }
    }

    #[test]
    fn rebalance_leaves_small_zero_class() {
        let mut records: Vec<_> = (0..3).map(|i| record(&format!("z{i}"), 0)).collect();
        records.extend((0..5).map(|i| record(&format!("n{i}"), 7)));
        assert_eq!(rebalance_zero_class(&records, 1), records);
    }

    #[test]
    fn rebalance_is_deterministic() {
        let mut records: Vec<_> = (0..50).map(|i| record(&format!("z{i}"), 0)).collect();
        records.extend((0..9).map(|i| record(&format!("n{i}"), 30)));
        let ids = |v: Vec<TweetRecord>| v.into_iter().map(|r| r.id).collect::<Vec<_>>();
        assert_eq!(
            ids(rebalance_zero_class(&records, 42)),
            ids(rebalance_zero_class(&records, 42))
        );
    }

    #[test]
    fn split_sizes_follow_rounding_rule() {
        let mk = |n: usize| (0..n).map(|i| record(&i.to_string(), 0)).collect::<Vec<_>>();
        let s = split_dataset(&mk(100), 0).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (80, 10, 10));
        let s = split_dataset(&mk(101), 0).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (81, 10, 10));
        assert!(matches!(split_dataset(&mk(9), 0), Err(Error::Size(_))));
        assert_eq!(split_sizes(36), (28, 4, 4));
        assert_eq!(split_sizes(35), (29, 3, 3));
    }

    #[test]
    fn split_sizes_stay_within_one_record_of_ratio() {
        for n in MIN_SPLIT_RECORDS..2000 {
            let (tr, va, te) = split_sizes(n);
            assert_eq!(tr + va + te, n);
            let m = n as f64;
            for (s, t) in [(tr, 0.8 * m), (va, 0.1 * m), (te, 0.1 * m)] {
                assert!((s as f64 - t).abs() <= 1.0, "n={n}: {:?}", (tr, va, te));
            }
        }
    }

    #[test]
    fn split_is_deterministic() {
        let records: Vec<_> = (0..37).map(|i| record(&i.to_string(), i)).collect();
        assert_eq!(split_dataset(&records, 9).unwrap(), split_dataset(&records, 9).unwrap());
    }
}
