//! Comparison models over the 9-dimensional numeric input (six min-max-scaled
//! metadata features followed by the sentiment distribution), plus the
//! text-only ViralBERT variant.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{DatasetSplit, TweetRecord, NUM_CLASSES};
use crate::encoder::{SentimentModel, SENTIMENT_CLASSES};
use crate::error::{Error, Result};
use crate::evaluation::{config_hash, EvalReport, RunMetadata};
use crate::features::{extract_features, fit_minmax, FeatureConfig, ScalerState, NUM_NUMERIC_FEATURES};
use crate::model::argmax_rows;
use crate::nn::{Linear, Mode};
use crate::pipeline::{run_viralbert, ExperimentConfig};
use crate::seed::derive_seed;
use crate::tensor::{softmax_rows, Matrix, ParamGroup, ParamStore, Tape, Var};
use crate::training::{train, Classifier, Labeled, TrainConfig};

pub const BASELINE_INPUT_DIM: usize = NUM_NUMERIC_FEATURES + SENTIMENT_CLASSES;
pub const FOREST_TREES: usize = 100;
pub const MLP_HIDDEN_UNITS: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    LogisticRegression,
    Svm,
    DecisionTree,
    RandomForest,
    MlpNum,
    ViralbertText,
}

impl BaselineKind {
    /// Report order.
    pub const ALL: [BaselineKind; 6] = [
        BaselineKind::LogisticRegression,
        BaselineKind::Svm,
        BaselineKind::DecisionTree,
        BaselineKind::RandomForest,
        BaselineKind::MlpNum,
        BaselineKind::ViralbertText,
    ];

    pub fn key(self) -> &'static str {
        match self {
            BaselineKind::LogisticRegression => "logistic_regression",
            BaselineKind::Svm => "svm",
            BaselineKind::DecisionTree => "decision_tree",
            BaselineKind::RandomForest => "random_forest",
            BaselineKind::MlpNum => "mlp_num",
            BaselineKind::ViralbertText => "viralbert_text",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            BaselineKind::LogisticRegression => "Logistic Regression",
            BaselineKind::Svm => "SVM",
            BaselineKind::DecisionTree => "Decision Tree Classifier",
            BaselineKind::RandomForest => "Random Forest Classifier",
            BaselineKind::MlpNum => "MLP_Num",
            BaselineKind::ViralbertText => "ViralBERT_Text",
        }
    }
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BaselineKind::ALL
            .into_iter()
            .find(|k| k.key() == s)
            .ok_or_else(|| Error::Config(format!("unknown baseline `{s}`")))
    }
}

/// Scaled numeric inputs with labels, one row per record.
#[derive(Debug, Clone, PartialEq)]
pub struct NumericDataset {
    pub ids: Vec<String>,
    pub x: Matrix,
    pub y: Vec<usize>,
}

impl NumericDataset {
    pub fn new(ids: Vec<String>, x: Matrix, y: Vec<usize>) -> Result<Self> {
        if x.nrows() != y.len() || ids.len() != y.len() {
            return Err(Error::Input(format!(
                "{} rows, {} labels, {} ids",
                x.nrows(),
                y.len(),
                ids.len()
            )));
        }
        Ok(NumericDataset { ids, x, y })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// Turns records into baseline inputs. The scaler is fitted on the training
/// split only; sentiment comes from the frozen sentiment model.
pub struct NumericFeaturizer {
    features: FeatureConfig,
    scaler: ScalerState,
    sentiment: SentimentModel,
}

impl NumericFeaturizer {
    pub fn fit(train: &[TweetRecord], config: &ExperimentConfig) -> Result<Self> {
        let vectors: Vec<_> = train.iter().map(|r| extract_features(r, &config.features)).collect();
        Ok(NumericFeaturizer {
            features: config.features.clone(),
            scaler: fit_minmax(&vectors)?,
            sentiment: SentimentModel::new(&config.model.sentiment_encoder, config.seed)?,
        })
    }

    pub fn scaler(&self) -> &ScalerState {
        &self.scaler
    }

    pub fn row(&self, record: &TweetRecord) -> Result<[f64; BASELINE_INPUT_DIM]> {
        let scaled = self.scaler.apply(&extract_features(record, &self.features));
        let s = self.sentiment.sentiment_probs(&record.text)?.to_array();
        let mut out = [0.0; BASELINE_INPUT_DIM];
        out[..NUM_NUMERIC_FEATURES].copy_from_slice(&scaled);
        out[NUM_NUMERIC_FEATURES..].copy_from_slice(&s);
        Ok(out)
    }

    pub fn transform(&self, records: &[TweetRecord]) -> Result<NumericDataset> {
        let rows = records.iter().map(|r| self.row(r)).collect::<Result<Vec<_>>>()?;
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let x = Array2::from_shape_vec((rows.len(), BASELINE_INPUT_DIM), flat)
            .map_err(|e| Error::Input(e.to_string()))?;
        NumericDataset::new(
            records.iter().map(|r| r.id.clone()).collect(),
            x,
            records.iter().map(|r| r.label().class_index()).collect(),
        )
    }
}

/// A classifier over numeric feature rows.
pub trait NumericClassifier: Send + Sync {
    /// `validation` is used only by models with early stopping.
    fn fit(&mut self, train: &NumericDataset, validation: &NumericDataset) -> Result<()>;
    fn predict_proba(&self, x: &Matrix) -> Result<Matrix>;

    fn predict(&self, x: &Matrix) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.predict_proba(x)?))
    }
}

fn check_fit_input(train: &NumericDataset) -> Result<()> {
    if train.is_empty() {
        return Err(Error::Fit("empty training set".into()));
    }
    if let Some(&y) = train.y.iter().find(|&&y| y >= NUM_CLASSES) {
        return Err(Error::Fit(format!("label {y} out of range")));
    }
    if train.x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Fit("non-finite feature value".into()));
    }
    Ok(())
}

fn check_columns(x: &Matrix, expected: usize) -> Result<()> {
    if x.ncols() != expected {
        return Err(Error::Input(format!("expected {expected} columns, got {}", x.ncols())));
    }
    Ok(())
}

/// Predicts one class with certainty; stands in when training data has a single class.
#[derive(Debug, Clone)]
pub struct ConstantClassifier {
    pub class: usize,
}

impl NumericClassifier for ConstantClassifier {
    fn fit(&mut self, train: &NumericDataset, _validation: &NumericDataset) -> Result<()> {
        check_fit_input(train)?;
        self.class = train.y[0];
        Ok(())
    }

    fn predict_proba(&self, x: &Matrix) -> Result<Matrix> {
        let mut p = Array2::zeros((x.nrows(), NUM_CLASSES));
        p.column_mut(self.class).fill(1.0);
        Ok(p)
    }
}

/// Multinomial logistic regression fitted by damped Newton iterations.
/// The last class present in training is the reference with logit 0.
#[derive(Debug, Clone)]
pub struct LogisticRegression {
    pub max_iter: usize,
    pub tol: f64,
    classes: Vec<usize>,
    /// (d + 1) × (m - 1), first row is the intercept.
    coef: DMatrix<f64>,
    dim: usize,
}

impl Default for LogisticRegression {
    fn default() -> Self {
        LogisticRegression {
            max_iter: 100,
            tol: 1e-8,
            classes: Vec::new(),
            coef: DMatrix::zeros(0, 0),
            dim: 0,
        }
    }
}

fn augmented(x: &Matrix) -> DMatrix<f64> {
    DMatrix::from_fn(x.nrows(), x.ncols() + 1, |i, j| if j == 0 { 1.0 } else { x[[i, j - 1]] })
}

/// Class probabilities (n × m) for coefficients `theta` laid out column by column.
fn lr_probs(xa: &DMatrix<f64>, theta: &DVector<f64>, m: usize) -> DMatrix<f64> {
    let coef = DMatrix::from_column_slice(xa.ncols(), m - 1, theta.as_slice());
    let z = xa * coef;
    let mut out = DMatrix::zeros(xa.nrows(), m);
    for i in 0..xa.nrows() {
        let max = z.row(i).max().max(0.0);
        let mut sum = (-max).exp();
        out[(i, m - 1)] = sum;
        for k in 0..m - 1 {
            let e = (z[(i, k)] - max).exp();
            out[(i, k)] = e;
            sum += e;
        }
        out.row_mut(i).unscale_mut(sum);
    }
    out
}

fn lr_nll(probs: &DMatrix<f64>, y: &[usize]) -> f64 {
    y.iter()
        .enumerate()
        .map(|(i, &k)| -probs[(i, k)].max(f64::MIN_POSITIVE).ln())
        .sum()
}

impl NumericClassifier for LogisticRegression {
    fn fit(&mut self, train: &NumericDataset, _validation: &NumericDataset) -> Result<()> {
        check_fit_input(train)?;
        let mut classes: Vec<usize> = train.y.clone();
        classes.sort_unstable();
        classes.dedup();
        self.dim = train.x.ncols();
        let xa = augmented(&train.x);
        let p = xa.ncols();
        let m = classes.len();
        // labels re-indexed into the present classes
        let y: Vec<usize> = train
            .y
            .iter()
            .map(|c| classes.binary_search(c).expect("class present"))
            .collect();
        self.classes = classes;
        if m == 1 {
            self.coef = DMatrix::zeros(p, 0);
            return Ok(());
        }
        let q = p * (m - 1);
        let mut theta = DVector::zeros(q);
        let mut probs = lr_probs(&xa, &theta, m);
        let mut nll = lr_nll(&probs, &y);
        for _ in 0..self.max_iter {
            let mut grad = DVector::zeros(q);
            let mut hess = DMatrix::zeros(q, q);
            for i in 0..xa.nrows() {
                let xi = xa.row(i);
                for k in 0..m - 1 {
                    let r = probs[(i, k)] - f64::from(u8::from(y[i] == k));
                    for j in 0..p {
                        grad[k * p + j] += r * xi[j];
                    }
                    for l in 0..m - 1 {
                        let w = probs[(i, k)] * (f64::from(u8::from(k == l)) - probs[(i, l)]);
                        if w == 0.0 {
                            continue;
                        }
                        for a in 0..p {
                            let wa = w * xi[a];
                            for b in 0..p {
                                hess[(k * p + a, l * p + b)] += wa * xi[b];
                            }
                        }
                    }
                }
            }
            if grad.amax() < self.tol {
                break;
            }
            let step = newton_direction(hess, &grad)?;
            let slope = grad.dot(&step);
            let mut t = 1.0;
            let mut accepted = None;
            while t > 1e-12 {
                let cand = &theta - &step * t;
                let cp = lr_probs(&xa, &cand, m);
                let cn = lr_nll(&cp, &y);
                if cn.is_finite() && cn <= nll - 1e-4 * t * slope {
                    accepted = Some((cand, cp, cn));
                    break;
                }
                t *= 0.5;
            }
            let Some((cand, cp, cn)) = accepted else { break };
            let improvement = nll - cn;
            theta = cand;
            probs = cp;
            nll = cn;
            if improvement <= 1e-12 * (1.0 + nll.abs()) {
                break;
            }
        }
        self.coef = DMatrix::from_column_slice(p, m - 1, theta.as_slice());
        Ok(())
    }

    fn predict_proba(&self, x: &Matrix) -> Result<Matrix> {
        if self.classes.is_empty() {
            return Err(Error::Fit("logistic regression used before fit".into()));
        }
        check_columns(x, self.dim)?;
        let m = self.classes.len();
        let mut out = Array2::zeros((x.nrows(), NUM_CLASSES));
        if m == 1 {
            out.column_mut(self.classes[0]).fill(1.0);
            return Ok(out);
        }
        let theta = DVector::from_column_slice(self.coef.as_slice());
        let probs = lr_probs(&augmented(x), &theta, m);
        for i in 0..x.nrows() {
            for (k, &c) in self.classes.iter().enumerate() {
                out[[i, c]] = probs[(i, k)];
            }
        }
        Ok(out)
    }
}

/// Solve `H d = g`, adding diagonal jitter until the Cholesky factorization succeeds.
fn newton_direction(mut hess: DMatrix<f64>, grad: &DVector<f64>) -> Result<DVector<f64>> {
    let scale = hess.diagonal().amax().max(1.0);
    let mut jitter = 1e-10 * scale;
    for _ in 0..12 {
        let mut h = hess.clone();
        for i in 0..h.nrows() {
            h[(i, i)] += jitter;
        }
        if let Some(ch) = h.cholesky() {
            return Ok(ch.solve(grad));
        }
        jitter *= 10.0;
    }
    for i in 0..hess.nrows() {
        hess[(i, i)] += jitter;
    }
    hess.lu()
        .solve(grad)
        .ok_or_else(|| Error::Fit("singular Hessian in Newton step".into()))
}

/// One-vs-rest linear SVM trained by SGD on the hinge loss with an L2 penalty,
/// using the `1 / (α (t₀ + t))` learning-rate schedule.
#[derive(Debug, Clone)]
pub struct LinearSvm {
    pub alpha: f64,
    pub max_epochs: usize,
    pub tol: f64,
    pub n_iter_no_change: usize,
    pub seed: u64,
    weights: Vec<Vec<f64>>,
    intercepts: Vec<f64>,
}

impl LinearSvm {
    pub fn new(seed: u64) -> Self {
        LinearSvm {
            alpha: 1e-4,
            max_epochs: 1000,
            tol: 1e-3,
            n_iter_no_change: 5,
            seed,
            weights: Vec::new(),
            intercepts: Vec::new(),
        }
    }

    fn fit_binary(&self, x: &Matrix, target: &[f64]) -> (Vec<f64>, f64) {
        let (n, d) = x.dim();
        let typw = (1.0 / self.alpha.sqrt()).sqrt();
        // hinge derivative at -typw is bounded by 1, so eta0 = typw
        let t0 = 1.0 / (typw * self.alpha);
        let mut w = vec![0.0; d];
        let mut b = 0.0;
        let mut t = 1.0;
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, "svm"));
        let mut best_loss = f64::INFINITY;
        let mut stale = 0;
        for _ in 0..self.max_epochs {
            order.shuffle(&mut rng);
            let mut sum_loss = 0.0;
            for &i in &order {
                let eta = 1.0 / (self.alpha * (t0 + t - 1.0));
                let row = x.row(i);
                let margin = target[i] * (row.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + b);
                sum_loss += (1.0 - margin).max(0.0);
                let shrink = (1.0 - eta * self.alpha).max(0.0);
                w.iter_mut().for_each(|v| *v *= shrink);
                if margin < 1.0 {
                    let u = eta * target[i];
                    for (v, a) in w.iter_mut().zip(row) {
                        *v += u * a;
                    }
                    b += u;
                }
                t += 1.0;
            }
            if sum_loss > best_loss - self.tol * n as f64 {
                stale += 1;
            } else {
                stale = 0;
            }
            best_loss = best_loss.min(sum_loss);
            if stale >= self.n_iter_no_change {
                break;
            }
        }
        (w, b)
    }

    pub fn decision_function(&self, x: &Matrix) -> Result<Matrix> {
        if self.weights.is_empty() {
            return Err(Error::Fit("SVM used before fit".into()));
        }
        check_columns(x, self.weights[0].len())?;
        Ok(Array2::from_shape_fn((x.nrows(), NUM_CLASSES), |(i, k)| {
            x.row(i).iter().zip(&self.weights[k]).map(|(a, b)| a * b).sum::<f64>() + self.intercepts[k]
        }))
    }
}

impl NumericClassifier for LinearSvm {
    fn fit(&mut self, train: &NumericDataset, _validation: &NumericDataset) -> Result<()> {
        check_fit_input(train)?;
        let fitted: Vec<(Vec<f64>, f64)> = (0..NUM_CLASSES)
            .into_par_iter()
            .map(|k| {
                let target: Vec<f64> = train.y.iter().map(|&y| if y == k { 1.0 } else { -1.0 }).collect();
                self.fit_binary(&train.x, &target)
            })
            .collect();
        if fitted.iter().flat_map(|(w, b)| w.iter().chain([b])).any(|v| !v.is_finite()) {
            return Err(Error::Fit("SGD produced non-finite weights".into()));
        }
        (self.weights, self.intercepts) = fitted.into_iter().unzip();
        Ok(())
    }

    /// Softmax over the one-vs-rest scores; the argmax matches the decision function.
    fn predict_proba(&self, x: &Matrix) -> Result<Matrix> {
        Ok(softmax_rows(&self.decision_function(x)?))
    }
}

#[derive(Debug, Clone)]
enum TreeNode {
    Leaf([f64; NUM_CLASSES]),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// CART with Gini impurity and no depth limit. A node is split whenever it is
/// impure and some feature takes two distinct values in it.
#[derive(Debug, Clone)]
pub struct DecisionTree {
    /// Features examined per split; `None` means all.
    pub max_features: Option<usize>,
    pub seed: u64,
    nodes: Vec<TreeNode>,
    dim: usize,
}

struct SplitChoice {
    feature: usize,
    threshold: f64,
    score: f64,
}

fn class_hist(y: &[usize], idx: &[usize]) -> [usize; NUM_CLASSES] {
    let mut c = [0; NUM_CLASSES];
    for &i in idx {
        c[y[i]] += 1;
    }
    c
}

/// n · gini = n - Σ cₖ² / n.
fn weighted_gini(counts: &[usize; NUM_CLASSES], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let sq: f64 = counts.iter().map(|&c| (c * c) as f64).sum();
    n as f64 - sq / n as f64
}

impl DecisionTree {
    pub fn new(max_features: Option<usize>, seed: u64) -> Self {
        DecisionTree {
            max_features,
            seed,
            nodes: Vec::new(),
            dim: 0,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[TreeNode], i: usize) -> usize {
            match nodes[i] {
                TreeNode::Leaf(_) => 0,
                TreeNode::Split { left, right, .. } => 1 + go(nodes, left).max(go(nodes, right)),
            }
        }
        if self.nodes.is_empty() {
            0
        } else {
            go(&self.nodes, 0)
        }
    }

    fn best_split<R: Rng>(&self, x: &Matrix, y: &[usize], idx: &[usize], rng: &mut R) -> Option<SplitChoice> {
        let d = x.ncols();
        let mut features: Vec<usize> = (0..d).collect();
        let budget = match self.max_features {
            Some(k) => {
                features.shuffle(rng);
                k.clamp(1, d)
            }
            None => d,
        };
        let total = class_hist(y, idx);
        let n = idx.len();
        let mut best: Option<SplitChoice> = None;
        let mut visited = 0;
        let mut sorted = idx.to_vec();
        for &f in &features {
            // keep drawing past constant features until `budget` informative ones are seen
            if visited >= budget && best.is_some() {
                break;
            }
            sorted.sort_by(|&a, &b| x[[a, f]].total_cmp(&x[[b, f]]));
            let lo = x[[sorted[0], f]];
            let hi = x[[sorted[n - 1], f]];
            if lo == hi {
                continue;
            }
            visited += 1;
            let mut left = [0; NUM_CLASSES];
            for pos in 0..n - 1 {
                left[y[sorted[pos]]] += 1;
                let (a, b) = (x[[sorted[pos], f]], x[[sorted[pos + 1], f]]);
                if a == b {
                    continue;
                }
                let right: [usize; NUM_CLASSES] = std::array::from_fn(|k| total[k] - left[k]);
                let score = weighted_gini(&left, pos + 1) + weighted_gini(&right, n - pos - 1);
                if best.as_ref().is_none_or(|s| score < s.score) {
                    let mid = a + (b - a) / 2.0;
                    let threshold = if mid >= b { a } else { mid };
                    best = Some(SplitChoice {
                        feature: f,
                        threshold,
                        score,
                    });
                }
            }
        }
        best
    }

    /// Fit on the rows listed in `sample` (duplicates allowed, as in a bootstrap).
    pub fn fit_rows(&mut self, x: &Matrix, y: &[usize], sample: &[usize]) -> Result<()> {
        if sample.is_empty() {
            return Err(Error::Fit("empty training set".into()));
        }
        self.dim = x.ncols();
        self.nodes.clear();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, "tree"));
        self.nodes.push(TreeNode::Leaf([0.0; NUM_CLASSES]));
        let mut stack = vec![(0usize, sample.to_vec())];
        while let Some((slot, idx)) = stack.pop() {
            let hist = class_hist(y, &idx);
            let pure = hist.iter().filter(|&&c| c > 0).count() <= 1;
            let split = if pure { None } else { self.best_split(x, y, &idx, &mut rng) };
            match split {
                None => {
                    let n = idx.len() as f64;
                    self.nodes[slot] = TreeNode::Leaf(std::array::from_fn(|k| hist[k] as f64 / n));
                }
                Some(s) => {
                    let (l, r): (Vec<usize>, Vec<usize>) =
                        idx.iter().partition(|&&i| x[[i, s.feature]] <= s.threshold);
                    let left = self.nodes.len();
                    self.nodes.push(TreeNode::Leaf([0.0; NUM_CLASSES]));
                    self.nodes.push(TreeNode::Leaf([0.0; NUM_CLASSES]));
                    self.nodes[slot] = TreeNode::Split {
                        feature: s.feature,
                        threshold: s.threshold,
                        left,
                        right: left + 1,
                    };
                    stack.push((left + 1, r));
                    stack.push((left, l));
                }
            }
        }
        Ok(())
    }

    fn leaf(&self, row: ndarray::ArrayView1<f64>) -> &[f64; NUM_CLASSES] {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                TreeNode::Leaf(p) => return p,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if row[*feature] <= *threshold { *left } else { *right },
            }
        }
    }
}

impl NumericClassifier for DecisionTree {
    fn fit(&mut self, train: &NumericDataset, _validation: &NumericDataset) -> Result<()> {
        check_fit_input(train)?;
        let all: Vec<usize> = (0..train.len()).collect();
        self.fit_rows(&train.x, &train.y, &all)
    }

    fn predict_proba(&self, x: &Matrix) -> Result<Matrix> {
        if self.nodes.is_empty() {
            return Err(Error::Fit("decision tree used before fit".into()));
        }
        check_columns(x, self.dim)?;
        let mut out = Array2::zeros((x.nrows(), NUM_CLASSES));
        for (i, row) in x.rows().into_iter().enumerate() {
            out.row_mut(i).assign(&ndarray::ArrayView1::from(self.leaf(row)));
        }
        Ok(out)
    }
}

/// Bagged CART trees with `floor(sqrt(d))` candidate features per split.
#[derive(Debug, Clone)]
pub struct RandomForest {
    pub n_trees: usize,
    pub seed: u64,
    trees: Vec<DecisionTree>,
}

impl RandomForest {
    pub fn new(n_trees: usize, seed: u64) -> Self {
        RandomForest {
            n_trees,
            seed,
            trees: Vec::new(),
        }
    }

    pub fn trees(&self) -> &[DecisionTree] {
        &self.trees
    }
}

impl NumericClassifier for RandomForest {
    fn fit(&mut self, train: &NumericDataset, _validation: &NumericDataset) -> Result<()> {
        check_fit_input(train)?;
        let n = train.len();
        let max_features = ((train.x.ncols() as f64).sqrt().floor() as usize).max(1);
        self.trees = (0..self.n_trees)
            .into_par_iter()
            .map(|t| {
                let tree_seed = derive_seed(self.seed, &format!("tree{t}"));
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(tree_seed, "bootstrap"));
                let sample: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
                let mut tree = DecisionTree::new(Some(max_features), tree_seed);
                tree.fit_rows(&train.x, &train.y, &sample)?;
                Ok(tree)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(())
    }

    /// Mean of the trees' leaf class frequencies.
    fn predict_proba(&self, x: &Matrix) -> Result<Matrix> {
        if self.trees.is_empty() {
            return Err(Error::Fit("random forest used before fit".into()));
        }
        let mut acc = Array2::zeros((x.nrows(), NUM_CLASSES));
        for t in &self.trees {
            acc += &t.predict_proba(x)?;
        }
        Ok(acc / self.trees.len() as f64)
    }
}

/// One labeled numeric row, as fed to the MLP through the shared trainer.
#[derive(Debug, Clone)]
pub struct NumericExample {
    pub x: Vec<f64>,
    pub label: Option<usize>,
}

impl Labeled for NumericExample {
    fn label(&self) -> Option<usize> {
        self.label
    }
}

fn numeric_examples(data: &NumericDataset) -> Vec<NumericExample> {
    data.x
        .rows()
        .into_iter()
        .zip(&data.y)
        .map(|(r, &y)| NumericExample {
            x: r.to_vec(),
            label: Some(y),
        })
        .collect()
}

/// `in → 32 ReLU → 4`, trained with the class-balanced focal loss and AdamW.
pub struct MlpNum {
    store: ParamStore,
    hidden: Linear,
    output: Linear,
    training: TrainConfig,
}

impl MlpNum {
    pub fn new(input_dim: usize, training: TrainConfig) -> Self {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(training.seed, "mlp_num"));
        let hidden = Linear::new(&mut store, "mlp.hidden", ParamGroup::Head, input_dim, MLP_HIDDEN_UNITS, &mut rng);
        let output = Linear::new(&mut store, "mlp.output", ParamGroup::Head, MLP_HIDDEN_UNITS, NUM_CLASSES, &mut rng);
        MlpNum {
            store,
            hidden,
            output,
            training,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.hidden.in_dim
    }

    pub fn hidden_units(&self) -> usize {
        self.hidden.out_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output.out_dim
    }
}

impl Classifier for MlpNum {
    type Example = NumericExample;

    fn params(&self) -> &ParamStore {
        &self.store
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn logits<'a>(&'a self, tape: &mut Tape<'a>, batch: &[&NumericExample], _mode: &mut Mode<'_>) -> Result<Var> {
        let d = self.input_dim();
        if let Some(bad) = batch.iter().find(|e| e.x.len() != d) {
            return Err(Error::Input(format!("expected {d} inputs, got {}", bad.x.len())));
        }
        let flat: Vec<f64> = batch.iter().flat_map(|e| e.x.iter().copied()).collect();
        let x = tape.constant(Array2::from_shape_vec((batch.len(), d), flat).map_err(|e| Error::Input(e.to_string()))?);
        let h = self.hidden.forward(tape, &self.store, x);
        let a = tape.relu(h);
        Ok(self.output.forward(tape, &self.store, a))
    }
}

impl NumericClassifier for MlpNum {
    fn fit(&mut self, train_set: &NumericDataset, validation: &NumericDataset) -> Result<()> {
        check_fit_input(train_set)?;
        let config = self.training.clone();
        train(self, &numeric_examples(train_set), &numeric_examples(validation), &config)?;
        Ok(())
    }

    fn predict_proba(&self, x: &Matrix) -> Result<Matrix> {
        let examples: Vec<NumericExample> = x
            .rows()
            .into_iter()
            .map(|r| NumericExample { x: r.to_vec(), label: None })
            .collect();
        let logits = crate::training::predict_logits(self, &examples, self.training.batch_size)?;
        Ok(softmax_rows(&logits))
    }
}

/// A constructed baseline: either a numeric classifier or the text-only model.
pub enum Baseline {
    Numeric(Box<dyn NumericClassifier>),
    /// Text-only ViralBERT configuration; trained through the model pipeline.
    Text(ExperimentConfig),
}

/// Text-only variant of an experiment: no numeric segments and no sentiment head.
pub fn text_only_experiment(config: &ExperimentConfig) -> ExperimentConfig {
    let mut c = config.clone();
    c.model = c.model.text_only();
    c
}

pub fn build_baseline(kind: BaselineKind, config: &ExperimentConfig) -> Baseline {
    let seed = derive_seed(config.seed, kind.key());
    match kind {
        BaselineKind::LogisticRegression => Baseline::Numeric(Box::new(LogisticRegression::default())),
        BaselineKind::Svm => Baseline::Numeric(Box::new(LinearSvm::new(seed))),
        BaselineKind::DecisionTree => Baseline::Numeric(Box::new(DecisionTree::new(None, seed))),
        BaselineKind::RandomForest => Baseline::Numeric(Box::new(RandomForest::new(FOREST_TREES, seed))),
        BaselineKind::MlpNum => {
            let mut training = config.train_config();
            training.seed = seed;
            Baseline::Numeric(Box::new(MlpNum::new(BASELINE_INPUT_DIM, training)))
        }
        BaselineKind::ViralbertText => Baseline::Text(text_only_experiment(config)),
    }
}

/// Featurized splits shared by the numeric baselines.
pub struct BaselineData {
    pub train: NumericDataset,
    pub validation: NumericDataset,
    pub test: NumericDataset,
    pub scaler: ScalerState,
}

impl BaselineData {
    pub fn from_split(split: &DatasetSplit, config: &ExperimentConfig) -> Result<Self> {
        let f = NumericFeaturizer::fit(&split.train, config)?;
        Ok(BaselineData {
            train: f.transform(&split.train)?,
            validation: f.transform(&split.validation)?,
            test: f.transform(&split.test)?,
            scaler: f.scaler().clone(),
        })
    }
}

fn metadata(kind: BaselineKind, config: &ExperimentConfig) -> Result<RunMetadata> {
    Ok(RunMetadata {
        seed: config.seed,
        config_hash: config_hash(&serde_json::json!({
            "baseline": kind.key(),
            "experiment": config,
        }))?,
        ablated_feature: None,
    })
}

fn single_class(labels: &[usize]) -> Option<usize> {
    let first = *labels.first()?;
    labels.iter().all(|&y| y == first).then_some(first)
}

/// Fit a numeric baseline on pre-featurized data and report on the test rows.
pub fn fit_and_evaluate_numeric(kind: BaselineKind, data: &BaselineData, config: &ExperimentConfig) -> Result<EvalReport> {
    let wrap = |e: Error| Error::Baseline {
        kind: kind.key().into(),
        source: Box::new(e),
    };
    let constant = single_class(&data.train.y);
    let mut model: Box<dyn NumericClassifier> = match (constant, build_baseline(kind, config)) {
        (Some(class), _) => Box::new(ConstantClassifier { class }),
        (None, Baseline::Numeric(m)) => m,
        (None, Baseline::Text(_)) => {
            return Err(wrap(Error::Config("text baseline has no numeric form".into())));
        }
    };
    model.fit(&data.train, &data.validation).map_err(wrap)?;
    let preds = model.predict(&data.test.x).map_err(wrap)?;
    let mut report = EvalReport::from_predictions(kind.display_name(), &preds, &data.test.y, metadata(kind, config)?)
        .map_err(wrap)?;
    report.single_class_training = constant.is_some();
    Ok(report)
}

/// Train `kind` on the split's training records and report macro metrics on its test records.
pub fn fit_and_evaluate(kind: BaselineKind, split: &DatasetSplit, config: &ExperimentConfig) -> Result<EvalReport> {
    match kind {
        BaselineKind::ViralbertText => {
            let wrap = |e: Error| Error::Baseline {
                kind: kind.key().into(),
                source: Box::new(e),
            };
            let labels: Vec<usize> = split.train.iter().map(|r| r.label().class_index()).collect();
            if let Some(class) = single_class(&labels) {
                let test: Vec<usize> = split.test.iter().map(|r| r.label().class_index()).collect();
                let preds = vec![class; test.len()];
                let mut report =
                    EvalReport::from_predictions(kind.display_name(), &preds, &test, metadata(kind, config)?)
                        .map_err(wrap)?;
                report.single_class_training = true;
                return Ok(report);
            }
            let run = run_viralbert(&text_only_experiment(config), split).map_err(wrap)?;
            let mut report = run.report;
            report.model = kind.display_name().into();
            report.metadata = metadata(kind, config)?;
            Ok(report)
        }
        _ => {
            let data = BaselineData::from_split(split, config).map_err(|e| Error::Baseline {
                kind: kind.key().into(),
                source: Box::new(e),
            })?;
            fit_and_evaluate_numeric(kind, &data, config)
        }
    }
}

/// Every baseline in report order. Numeric baselines share one featurization
/// and train in parallel.
pub fn run_baselines(split: &DatasetSplit, config: &ExperimentConfig) -> Result<Vec<EvalReport>> {
    let data = BaselineData::from_split(split, config)?;
    BaselineKind::ALL
        .par_iter()
        .map(|&kind| match kind {
            BaselineKind::ViralbertText => fit_and_evaluate(kind, split, config),
            _ => fit_and_evaluate_numeric(kind, &data, config),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dataset(x: Vec<[f64; 2]>, y: Vec<usize>) -> NumericDataset {
        let n = x.len();
        let flat: Vec<f64> = x.into_iter().flatten().collect();
        NumericDataset::new(
            (0..n).map(|i| i.to_string()).collect(),
            Array2::from_shape_vec((n, 2), flat).unwrap(),
            y,
        )
        .unwrap()
    }

    /// Four quadrant blobs, class = quadrant.
    fn quadrants(n: usize, seed: u64) -> NumericDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let c = i % 4;
            let cx = if c & 1 == 1 { 0.8 } else { 0.2 };
            let cy = if c & 2 == 2 { 0.8 } else { 0.2 };
            x.push([cx + rng.random_range(-0.15..0.15), cy + rng.random_range(-0.15..0.15)]);
            y.push(c);
        }
        dataset(x, y)
    }

    fn accuracy(m: &dyn NumericClassifier, d: &NumericDataset) -> f64 {
        let p = m.predict(&d.x).unwrap();
        p.iter().zip(&d.y).filter(|(a, b)| a == b).count() as f64 / d.len() as f64
    }

    #[test]
    fn kinds_parse_and_display() {
        for k in BaselineKind::ALL {
            assert_eq!(k.key().parse::<BaselineKind>().unwrap(), k);
        }
        assert!(matches!("knn".parse::<BaselineKind>(), Err(Error::Config(_))));
        assert_eq!(BaselineKind::RandomForest.display_name(), "Random Forest Classifier");
    }

    #[test]
    fn numeric_models_fit_quadrants() {
        let train = quadrants(200, 1);
        let test = quadrants(80, 2);
        let training = TrainConfig {
            learning_rate: 0.01,
            max_epochs: 150,
            patience: 150,
            seed: 3,
            ..TrainConfig::default()
        };
        let models: Vec<(&str, Box<dyn NumericClassifier>)> = vec![
            ("logreg", Box::new(LogisticRegression::default())),
            ("svm", Box::new(LinearSvm::new(1))),
            ("tree", Box::new(DecisionTree::new(None, 1))),
            ("forest", Box::new(RandomForest::new(20, 1))),
            ("mlp", Box::new(MlpNum::new(2, training))),
        ];
        for (name, mut m) in models {
            m.fit(&train, &test).unwrap();
            let acc = accuracy(m.as_ref(), &test);
            assert!(acc >= 0.95, "{name}: {acc}");
            let p = m.predict_proba(&test.x).unwrap();
            for row in p.rows() {
                assert!((row.sum() - 1.0).abs() < 1e-9, "{name}");
            }
        }
    }

    #[test]
    fn logistic_regression_matches_closed_form_two_class() {
        // one binary feature, no separation: MLE gives the empirical log-odds per group
        let x = vec![[0.0, 0.0], [0.0, 0.0], [0.0, 0.0], [1.0, 0.0], [1.0, 0.0], [1.0, 0.0], [1.0, 0.0]];
        let y = vec![0, 1, 1, 0, 0, 0, 1];
        let d = dataset(x, y);
        let mut lr = LogisticRegression::default();
        lr.fit(&d, &d).unwrap();
        let p = lr.predict_proba(&d.x).unwrap();
        assert!((p[[0, 1]] - 2.0 / 3.0).abs() < 1e-8);
        assert!((p[[3, 1]] - 1.0 / 4.0).abs() < 1e-8);
        assert_eq!(p.column(2).sum(), 0.0);
    }

    #[test]
    fn forest_has_100_unbounded_trees_and_is_deterministic() {
        let train = quadrants(120, 5);
        let mut a = RandomForest::new(FOREST_TREES, 7);
        a.fit(&train, &train).unwrap();
        assert_eq!(a.trees().len(), 100);
        assert!(a.trees().iter().all(|t| t.max_features == Some(1)));
        let mut b = RandomForest::new(FOREST_TREES, 7);
        b.fit(&train, &train).unwrap();
        assert_eq!(a.predict_proba(&train.x).unwrap(), b.predict_proba(&train.x).unwrap());
    }

    #[test]
    fn tree_splits_at_zero_gain() {
        // XOR: no single split lowers impurity at the root
        let d = dataset(
            vec![[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]],
            vec![0, 1, 1, 0],
        );
        let mut t = DecisionTree::new(None, 0);
        t.fit(&d, &d).unwrap();
        assert_eq!(accuracy(&t, &d), 1.0);
        assert_eq!(t.depth(), 2);
    }

    #[test]
    fn constant_features_make_a_leaf() {
        let d = dataset(vec![[1.0, 1.0], [1.0, 1.0]], vec![0, 1]);
        let mut t = DecisionTree::new(None, 0);
        t.fit(&d, &d).unwrap();
        assert_eq!(t.num_nodes(), 1);
        let p = t.predict_proba(&d.x).unwrap();
        assert_eq!(p.row(0).to_vec(), vec![0.5, 0.5, 0.0, 0.0]);
    }

    #[test]
    fn fit_errors() {
        let empty = dataset(vec![], vec![]);
        assert!(matches!(
            LogisticRegression::default().fit(&empty, &empty),
            Err(Error::Fit(_))
        ));
        let d = dataset(vec![[0.0, 1.0]], vec![0]);
        let mut lr = LogisticRegression::default();
        lr.fit(&d, &d).unwrap();
        let wide = Array2::zeros((1, 3));
        assert!(matches!(lr.predict_proba(&wide), Err(Error::Input(_))));
    }

    #[test]
    fn mlp_shape() {
        let m = MlpNum::new(BASELINE_INPUT_DIM, TrainConfig::default());
        assert_eq!((m.input_dim(), m.hidden_units(), m.output_dim()), (9, 32, 4));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn unlimited_tree_fits_consistent_data(
            rows in prop::collection::vec((0u8..6, 0u8..6, 0usize..4), 1..60)
        ) {
            // drop rows that repeat a feature pair with a different label
            let mut seen = std::collections::HashMap::new();
            let rows: Vec<_> = rows.into_iter().filter(|&(a, b, y)| *seen.entry((a, b)).or_insert(y) == y).collect();
            let d = dataset(
                rows.iter().map(|&(a, b, _)| [f64::from(a), f64::from(b)]).collect(),
                rows.iter().map(|r| r.2).collect(),
            );
            let mut t = DecisionTree::new(None, 0);
            t.fit(&d, &d).unwrap();
            prop_assert_eq!(accuracy(&t, &d), 1.0);
        }
    }
}
