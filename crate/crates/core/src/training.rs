//! Mini-batch training with AdamW and early stopping on validation macro-F1.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::NUM_CLASSES;
use crate::error::{Error, Result};
use crate::evaluation::macro_f1;
use crate::loss::{effective_number_weights, focal_loss_with_weights, LossConfig};
use crate::model::argmax_rows;
use crate::nn::Mode;
use crate::optim::{AdamW, AdamWConfig};
use crate::seed::derive_seed;
use crate::tensor::{Gradients, Matrix, ParamStore, Tape, Var};

/// Anything with an optional class label.
pub trait Labeled {
    fn label(&self) -> Option<usize>;
}

/// A model trainable by [`train`]: differentiable logits over a batch of examples.
pub trait Classifier {
    type Example: Labeled;

    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;
    fn logits<'a>(&'a self, tape: &mut Tape<'a>, batch: &[&Self::Example], mode: &mut Mode<'_>) -> Result<Var>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Learning rate of the classifier head.
    pub learning_rate: f64,
    /// Learning rate of encoder parameters.
    pub encoder_learning_rate: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    pub patience: usize,
    #[serde(skip)]
    pub seed: u64,
    #[serde(skip)]
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            learning_rate: 1e-3,
            encoder_learning_rate: 2e-5,
            weight_decay: 0.01,
            max_epochs: 20,
            patience: 3,
            seed: 0,
            loss: LossConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be >= 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be >= 1".into()));
        }
        for (name, v) in [
            ("learning_rate", self.learning_rate),
            ("encoder_learning_rate", self.encoder_learning_rate),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be finite and non-negative")));
            }
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::Config("weight_decay must be finite and non-negative".into()));
        }
        Ok(())
    }

    pub fn optimizer(&self) -> AdamWConfig {
        AdamWConfig {
            encoder_lr: self.encoder_learning_rate,
            head_lr: self.learning_rate,
            weight_decay: self.weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: f64,
    pub validation_macro_f1: f64,
}

/// Deterministic part of a training run. Wall-clock times are kept apart in
/// [`TrainOutcome::epoch_seconds`] so reruns compare equal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch with the highest validation macro-F1 (earliest on ties).
    pub best_epoch: usize,
    pub best_validation_macro_f1: f64,
    pub first_batch_loss: f64,
    pub class_counts: Vec<u64>,
    pub class_weights: Vec<f64>,
    pub beta: f64,
    pub gamma: f64,
    pub stopped_early: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub history: TrainHistory,
    pub epoch_seconds: Vec<f64>,
}

/// Patience counter over a metric where larger is better.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<(usize, f64)>,
    stale: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StopDecision {
    pub improved: bool,
    pub stop: bool,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: None,
            stale: 0,
        }
    }

    /// Record the metric for `epoch`. Only a strict improvement resets patience.
    pub fn observe(&mut self, epoch: usize, metric: f64) -> StopDecision {
        let improved = match self.best {
            None => true,
            Some((_, b)) => metric > b,
        };
        if improved {
            self.best = Some((epoch, metric));
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        StopDecision {
            improved,
            stop: self.stale >= self.patience,
        }
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }
}

/// Example order for one epoch, a pure function of (seed, epoch).
pub fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("epoch{epoch}")));
    order.shuffle(&mut rng);
    order
}

fn labels_of<E: Labeled>(examples: &[E]) -> Result<Vec<usize>> {
    examples
        .iter()
        .enumerate()
        .map(|(i, e)| match e.label() {
            Some(y) if y < NUM_CLASSES => Ok(y),
            Some(y) => Err(Error::Input(format!("example {i} has label {y} out of range"))),
            None => Err(Error::Input(format!("example {i} is unlabeled"))),
        })
        .collect()
}

pub fn class_counts_of(labels: &[usize]) -> Vec<u64> {
    let mut counts = vec![0u64; NUM_CLASSES];
    for &y in labels {
        counts[y] += 1;
    }
    counts
}

/// Evaluation-mode logits for every example, in order.
pub fn predict_logits<M: Classifier>(model: &M, examples: &[M::Example], batch_size: usize) -> Result<Matrix> {
    if examples.is_empty() {
        return Err(Error::Input("no examples to predict".into()));
    }
    let mut parts = Vec::new();
    for chunk in examples.chunks(batch_size.max(1)) {
        let refs: Vec<&M::Example> = chunk.iter().collect();
        let mut tape = Tape::new();
        let out = model.logits(&mut tape, &refs, &mut Mode::Eval)?;
        parts.push(tape.value(out).clone());
    }
    let views: Vec<_> = parts.iter().map(|m| m.view()).collect();
    ndarray::concatenate(ndarray::Axis(0), &views).map_err(|e| Error::Input(e.to_string()))
}

/// Loss and parameter gradients for one batch, evaluated without dropout.
pub fn loss_and_gradients<M: Classifier>(
    model: &M,
    batch: &[&M::Example],
    weights: &[f64],
    gamma: f64,
) -> Result<(f64, Gradients)> {
    let labels: Vec<usize> = batch
        .iter()
        .map(|e| e.label().ok_or_else(|| Error::Input("unlabeled example".into())))
        .collect::<Result<_>>()?;
    let mut tape = Tape::new();
    let logits = model.logits(&mut tape, batch, &mut Mode::Eval)?;
    let loss = tape.cb_focal_loss(logits, &labels, weights, gamma);
    let value = tape.value(loss)[[0, 0]];
    Ok((value, tape.backward(loss)))
}

/// Validation loss and macro-F1 under the training class weights.
fn validate<M: Classifier>(
    model: &M,
    examples: &[M::Example],
    labels: &[usize],
    weights: &[f64],
    config: &TrainConfig,
) -> Result<(f64, f64)> {
    let logits = predict_logits(model, examples, config.batch_size)?;
    let loss = focal_loss_with_weights(&logits, labels, weights, config.loss.gamma);
    let f1 = macro_f1(&argmax_rows(&logits), labels, NUM_CLASSES)?;
    Ok((loss, f1))
}

/// Train `model` in place. On return the model holds the parameters of the best epoch.
pub fn train<M: Classifier>(
    model: &mut M,
    train: &[M::Example],
    validation: &[M::Example],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Input("training split is empty".into()));
    }
    if validation.is_empty() {
        return Err(Error::Input("validation split is empty".into()));
    }
    let train_labels = labels_of(train)?;
    let val_labels = labels_of(validation)?;
    let class_counts = class_counts_of(&train_labels);
    let balance = config.loss.with_counts(class_counts.clone())?;
    let weights = effective_number_weights(&balance)?;

    let mut optimizer = AdamW::new(config.optimizer(), model.params());
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "dropout"));
    let mut stopper = EarlyStopping::new(config.patience);
    let mut best_params = model.params().snapshot();
    let mut epochs = Vec::new();
    let mut epoch_seconds = Vec::new();
    let mut first_batch_loss = None;
    let mut stopped_early = false;

    for epoch in 1..=config.max_epochs {
        let started = Instant::now();
        let order = epoch_order(config.seed, epoch, train.len());
        let mut loss_sum = 0.0;
        for (b, idx) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&M::Example> = idx.iter().map(|&i| &train[i]).collect();
            let labels: Vec<usize> = idx.iter().map(|&i| train_labels[i]).collect();
            let (loss, grads) = {
                let mut tape = Tape::new();
                let logits = model.logits(&mut tape, &batch, &mut Mode::Train(&mut dropout_rng))?;
                let loss = tape.cb_focal_loss(logits, &labels, &weights, config.loss.gamma);
                let value = tape.value(loss)[[0, 0]];
                if !value.is_finite() {
                    return Err(Error::Divergence {
                        epoch,
                        batch: b + 1,
                        loss: value,
                    });
                }
                (value, tape.backward(loss))
            };
            first_batch_loss.get_or_insert(loss);
            loss_sum += loss * idx.len() as f64;
            optimizer.step(model.params_mut(), &grads);
        }
        let (validation_loss, f1) = validate(model, validation, &val_labels, &weights, config)?;
        epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            validation_loss,
            validation_macro_f1: f1,
        });
        epoch_seconds.push(started.elapsed().as_secs_f64());
        let decision = stopper.observe(epoch, f1);
        if decision.improved {
            best_params = model.params().snapshot();
        }
        if decision.stop && epoch < config.max_epochs {
            stopped_early = true;
            break;
        }
    }

    model.params_mut().restore(best_params);
    let (best_epoch, best_f1) = stopper.best().expect("at least one epoch ran");
    Ok(TrainOutcome {
        history: TrainHistory {
            epochs,
            best_epoch,
            best_validation_macro_f1: best_f1,
            first_batch_loss: first_batch_loss.expect("at least one batch ran"),
            class_counts,
            class_weights: weights,
            beta: config.loss.beta,
            gamma: config.loss.gamma,
            stopped_early,
        },
        epoch_seconds,
    })
}
