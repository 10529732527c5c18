//! Confusion matrices, macro-averaged metrics and report tables.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::NUM_CLASSES;
use crate::error::{Error, Result};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn zeros(n: usize) -> Self {
        ConfusionMatrix {
            counts: vec![vec![0; n]; n],
        }
    }

    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        let n = counts.len();
        if n == 0 || counts.iter().any(|r| r.len() != n) {
            return Err(Error::Input("confusion matrix must be square and non-empty".into()));
        }
        Ok(ConfusionMatrix { counts })
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth][pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.num_classes()).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sum(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    pub fn col_sum(&self, class: usize) -> u64 {
        self.counts.iter().map(|r| r[class]).sum()
    }
}

/// 4-class confusion matrix.
pub fn confusion_matrix(preds: &[usize], labels: &[usize]) -> Result<ConfusionMatrix> {
    confusion_matrix_n(preds, labels, NUM_CLASSES)
}

pub fn confusion_matrix_n(preds: &[usize], labels: &[usize], num_classes: usize) -> Result<ConfusionMatrix> {
    if preds.len() != labels.len() {
        return Err(Error::Input(format!(
            "{} predictions but {} labels",
            preds.len(),
            labels.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::Input("no predictions to evaluate".into()));
    }
    let mut cm = ConfusionMatrix::zeros(num_classes);
    for (&p, &t) in preds.iter().zip(labels) {
        if p >= num_classes || t >= num_classes {
            return Err(Error::Input(format!(
                "class out of range: prediction {p}, label {t}, {num_classes} classes"
            )));
        }
        cm.counts[t][p] += 1;
    }
    Ok(cm)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroMetrics {
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
    /// One entry per 0/0 that was replaced by 0.
    pub warnings: Vec<String>,
}

fn ratio(num: f64, den: f64, what: &str, class: usize, warnings: &mut Vec<String>) -> f64 {
    if den == 0.0 {
        warnings.push(format!("class {class}: {what} undefined (0/0), set to 0"));
        0.0
    } else {
        num / den
    }
}

pub fn macro_metrics(cm: &ConfusionMatrix) -> Result<MacroMetrics> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Input("confusion matrix is all zeros".into()));
    }
    let n = cm.num_classes();
    let mut warnings = Vec::new();
    let per_class: Vec<ClassMetrics> = (0..n)
        .map(|c| {
            let tp = cm.get(c, c) as f64;
            let precision = ratio(tp, cm.col_sum(c) as f64, "precision", c, &mut warnings);
            let recall = ratio(tp, cm.row_sum(c) as f64, "recall", c, &mut warnings);
            let f1 = ratio(2.0 * precision * recall, precision + recall, "f1", c, &mut warnings);
            ClassMetrics {
                precision,
                recall,
                f1,
                support: cm.row_sum(c),
            }
        })
        .collect();
    let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / n as f64;
    Ok(MacroMetrics {
        macro_precision: mean(|m| m.precision),
        macro_recall: mean(|m| m.recall),
        macro_f1: mean(|m| m.f1),
        accuracy: cm.trace() as f64 / total as f64,
        per_class,
        warnings,
    })
}

/// Macro-F1 of a prediction list; the validation metric during training.
pub fn macro_f1(preds: &[usize], labels: &[usize], num_classes: usize) -> Result<f64> {
    Ok(macro_metrics(&confusion_matrix_n(preds, labels, num_classes)?)?.macro_f1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct RunMetadata {
    pub seed: u64,
    /// SHA-256 of the canonical JSON form of the run configuration.
    pub config_hash: String,
    pub ablated_feature: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub model: String,
    pub macro_f1: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
    pub confusion: ConfusionMatrix,
    pub warnings: Vec<String>,
    pub metadata: RunMetadata,
    /// Set when the training split held a single class, so the model is a constant predictor.
    pub single_class_training: bool,
}

impl EvalReport {
    pub fn from_confusion(model: impl Into<String>, confusion: ConfusionMatrix, metadata: RunMetadata) -> Result<Self> {
        let m = macro_metrics(&confusion)?;
        Ok(EvalReport {
            schema_version: REPORT_SCHEMA_VERSION,
            model: model.into(),
            macro_f1: m.macro_f1,
            macro_precision: m.macro_precision,
            macro_recall: m.macro_recall,
            accuracy: m.accuracy,
            per_class: m.per_class,
            confusion,
            warnings: m.warnings,
            metadata,
            single_class_training: false,
        })
    }

    pub fn from_predictions(
        model: impl Into<String>,
        preds: &[usize],
        labels: &[usize],
        metadata: RunMetadata,
    ) -> Result<Self> {
        Self::from_confusion(model, confusion_matrix(preds, labels)?, metadata)
    }

    /// Recompute every metric from the embedded confusion matrix and compare.
    pub fn verify_consistency(&self, tol: f64) -> Result<()> {
        let m = macro_metrics(&self.confusion)?;
        let pairs = [
            ("macro_f1", self.macro_f1, m.macro_f1),
            ("macro_precision", self.macro_precision, m.macro_precision),
            ("macro_recall", self.macro_recall, m.macro_recall),
            ("accuracy", self.accuracy, m.accuracy),
        ];
        for (name, stored, fresh) in pairs {
            if (stored - fresh).abs() > tol {
                return Err(Error::Input(format!("{name}: report has {stored}, matrix gives {fresh}")));
            }
        }
        if self.per_class != m.per_class {
            return Err(Error::Input("per-class metrics disagree with the confusion matrix".into()));
        }
        Ok(())
    }
}

/// SHA-256 hex digest of `value` serialized as JSON with sorted keys.
pub fn config_hash<T: Serialize>(value: &T) -> Result<String> {
    // `Value` objects are BTreeMaps, so keys come out sorted
    let canonical = serde_json::to_string(&serde_json::to_value(value)?)?;
    let digest = Sha256::digest(canonical.as_bytes());
    Ok(digest.iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    }))
}

fn render(header: &[&str], rows: &[Vec<String>]) -> String {
    let widths: Vec<usize> = (0..header.len())
        .map(|i| {
            rows.iter()
                .map(|r| r[i].len())
                .chain([header[i].len()])
                .max()
                .unwrap_or(0)
        })
        .collect();
    let line = |cells: Vec<&str>| {
        let padded: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        format!("| {} |\n", padded.join(" | "))
    };
    let mut out = line(header.to_vec());
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    out.push_str(&line(rule.iter().map(String::as_str).collect()));
    for r in rows {
        out.push_str(&line(r.iter().map(String::as_str).collect()));
    }
    out
}

/// Model comparison table: Method, F1 Score, Precision, Recall, Accuracy.
pub fn render_comparison_table(reports: &[EvalReport]) -> String {
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|r| {
            vec![
                r.model.clone(),
                format!("{:.3}", r.macro_f1),
                format!("{:.3}", r.macro_precision),
                format!("{:.3}", r.macro_recall),
                format!("{:.3}", r.accuracy),
            ]
        })
        .collect();
    render(&["Method", "F1 Score", "Precision", "Recall", "Accuracy"], &rows)
}

/// Ablation table with the unablated run first, labelled "None".
pub fn render_ablation_table(base: &EvalReport, ablated: &[(String, EvalReport)]) -> String {
    let rows: Vec<Vec<String>> = std::iter::once(("None".to_string(), base))
        .chain(ablated.iter().map(|(name, r)| (name.clone(), r)))
        .map(|(name, r)| vec![name, format!("{:.3}", r.macro_f1), format!("{:.3}", r.accuracy)])
        .collect();
    render(&["Feature removed", "F1 Score", "Accuracy"], &rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identity_pattern() {
        let cm = confusion_matrix(&[0, 1, 2, 3], &[0, 1, 2, 3]).unwrap();
        for t in 0..4 {
            for p in 0..4 {
                assert_eq!(cm.get(t, p), u64::from(t == p));
            }
        }
        let m = macro_metrics(&cm).unwrap();
        assert_eq!((m.macro_f1, m.macro_precision, m.macro_recall, m.accuracy), (1.0, 1.0, 1.0, 1.0));
        assert!(m.warnings.is_empty());
    }

    #[test]
    fn counts_pairs() {
        let cm = confusion_matrix(&[1, 1], &[0, 1]).unwrap();
        assert_eq!(cm.get(0, 1), 1);
        assert_eq!(cm.get(1, 1), 1);
        assert_eq!(cm.total(), 2);
    }

    #[test]
    fn input_errors() {
        assert!(matches!(confusion_matrix(&[], &[]), Err(Error::Input(_))));
        assert!(matches!(confusion_matrix(&[0], &[0, 1]), Err(Error::Input(_))));
        assert!(matches!(confusion_matrix(&[4], &[0]), Err(Error::Input(_))));
        assert!(matches!(macro_metrics(&ConfusionMatrix::zeros(4)), Err(Error::Input(_))));
    }

    #[test]
    fn padded_two_class_matrix() {
        let mut cm = ConfusionMatrix::zeros(4);
        cm.counts[0][0] = 1;
        cm.counts[0][1] = 1;
        cm.counts[1][1] = 2;
        let m = macro_metrics(&cm).unwrap();
        assert_eq!(m.per_class[0].precision, 1.0);
        assert_eq!(m.per_class[0].recall, 0.5);
        assert!((m.per_class[1].precision - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(m.per_class[1].recall, 1.0);
        // hand-computed: F1 = (2/3 + 4/5) / 4, P = (1 + 2/3) / 4, R = 1.5 / 4
        assert!((m.macro_f1 - 0.366_666_666_666_666_7).abs() < 1e-12);
        assert!((m.macro_precision - 0.416_666_666_666_666_7).abs() < 1e-12);
        assert!((m.macro_recall - 0.375).abs() < 1e-12);
        assert_eq!(m.accuracy, 0.75);
        assert_eq!(m.per_class[2].f1, 0.0);
        assert!(!m.warnings.is_empty());
    }

    #[test]
    fn report_round_trip_and_consistency() {
        let r = EvalReport::from_predictions("x", &[0, 1, 2, 2], &[0, 1, 2, 3], RunMetadata::default()).unwrap();
        r.verify_consistency(1e-12).unwrap();
        let json = serde_json::to_string(&r).unwrap();
        let back: EvalReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
        let mut bad = r.clone();
        bad.accuracy = 0.1;
        assert!(bad.verify_consistency(1e-12).is_err());
    }

    #[test]
    fn config_hash_is_key_order_independent() {
        let a = serde_json::json!({"a": 1, "b": [1, 2]});
        let b = serde_json::json!({"b": [1, 2], "a": 1});
        assert_eq!(config_hash(&a).unwrap(), config_hash(&b).unwrap());
        assert_eq!(config_hash(&a).unwrap().len(), 64);
        assert_ne!(config_hash(&a).unwrap(), config_hash(&serde_json::json!({"a": 2})).unwrap());
    }

    #[test]
    fn tables_have_expected_layout() {
        let r = EvalReport::from_predictions("SVM", &[0, 1], &[0, 1], RunMetadata::default()).unwrap();
        let t = render_comparison_table(std::slice::from_ref(&r));
        let first = t.lines().next().unwrap();
        assert!(first.contains("Method") && first.contains("F1 Score") && first.contains("Accuracy"));
        assert!(t.lines().nth(2).unwrap().starts_with("| SVM"));
        let a = render_ablation_table(&r, &[("Hashtags".into(), r.clone())]);
        assert_eq!(a.lines().count(), 4);
        assert!(a.lines().nth(2).unwrap().contains("None"));
    }

    fn matrix() -> impl Strategy<Value = ConfusionMatrix> {
        prop::collection::vec(0u64..20, 16).prop_filter_map("all zero", |v| {
            let counts: Vec<Vec<u64>> = v.chunks(4).map(<[u64]>::to_vec).collect();
            let cm = ConfusionMatrix { counts };
            (cm.total() > 0).then_some(cm)
        })
    }

    proptest! {
        #[test]
        fn permutation_invariant(cm in matrix(), perm in Just(vec![0usize, 1, 2, 3]).prop_shuffle()) {
            let mut p = ConfusionMatrix::zeros(4);
            for t in 0..4 {
                for q in 0..4 {
                    p.counts[perm[t]][perm[q]] = cm.counts[t][q];
                }
            }
            let a = macro_metrics(&cm).unwrap();
            let b = macro_metrics(&p).unwrap();
            prop_assert!((a.macro_f1 - b.macro_f1).abs() < 1e-12);
            prop_assert!((a.macro_precision - b.macro_precision).abs() < 1e-12);
            prop_assert!((a.macro_recall - b.macro_recall).abs() < 1e-12);
            prop_assert!((a.accuracy - b.accuracy).abs() < 1e-12);
        }

        #[test]
        fn accuracy_equals_macro_recall_under_equal_support(
            rows in prop::collection::vec(prop::collection::vec(0u64..10, 3), 4),
            support in 1u64..15,
        ) {
            // each row: three off-diagonal counts, diagonal fills up to `support`
            let mut cm = ConfusionMatrix::zeros(4);
            for (t, off) in rows.iter().enumerate() {
                let mut left = support;
                let mut k = 0;
                for p in 0..4 {
                    if p != t {
                        let c = off[k].min(left);
                        cm.counts[t][p] = c;
                        left -= c;
                        k += 1;
                    }
                }
                cm.counts[t][t] = left;
            }
            let m = macro_metrics(&cm).unwrap();
            prop_assert!((m.accuracy - m.macro_recall).abs() < 1e-12);
        }

        #[test]
        fn metrics_bounded(cm in matrix()) {
            let m = macro_metrics(&cm).unwrap();
            for v in [m.macro_f1, m.macro_precision, m.macro_recall, m.accuracy] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
    }
}
