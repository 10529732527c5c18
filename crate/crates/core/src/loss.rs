//! Class-balanced focal loss.
//!
//! Each class gets the inverse effective number of samples as its weight,
//! `w_y = (1 - β) / (1 - β^{n_y})`, renormalized so the weights sum to the
//! number of classes. The per-example loss is `w_y · (1 - p_y)^γ · (-log p_y)`
//! with `p = softmax(logits)`, averaged over the batch.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// β and γ as they appear in a run configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            beta: 0.9999,
            gamma: 2.0,
        }
    }
}

impl LossConfig {
    pub fn with_counts(self, class_counts: Vec<u64>) -> Result<ClassBalanceConfig> {
        let cfg = ClassBalanceConfig {
            beta: self.beta,
            gamma: self.gamma,
            class_counts,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassBalanceConfig {
    pub beta: f64,
    pub gamma: f64,
    /// Training-split count per class.
    pub class_counts: Vec<u64>,
}

impl ClassBalanceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.beta) {
            return Err(Error::Domain(format!("beta must lie in [0, 1), got {}", self.beta)));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::Domain(format!("gamma must be finite and >= 0, got {}", self.gamma)));
        }
        if self.class_counts.is_empty() {
            return Err(Error::Domain("no classes".into()));
        }
        if let Some(c) = self.class_counts.iter().position(|&n| n == 0) {
            return Err(Error::Domain(format!("class {c} has zero training examples")));
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.class_counts.len()
    }
}

/// Unnormalized `(1 - β) / (1 - β^n)` per class.
pub fn raw_class_weights(beta: f64, counts: &[u64]) -> Vec<f64> {
    counts
        .iter()
        .map(|&n| {
            // 1 - β^n, accurate for β close to 1
            let denom = -(n as f64 * beta.ln()).exp_m1();
            (1.0 - beta) / denom
        })
        .collect()
}

/// Class weights normalized to sum to the number of classes.
pub fn effective_number_weights(config: &ClassBalanceConfig) -> Result<Vec<f64>> {
    config.validate()?;
    let raw = raw_class_weights(config.beta, &config.class_counts);
    let total: f64 = raw.iter().sum();
    let k = raw.len() as f64;
    Ok(raw.into_iter().map(|w| w * k / total).collect())
}

fn check_batch(logits: &Matrix, labels: &[usize], classes: usize) -> Result<()> {
    if logits.nrows() != labels.len() {
        return Err(Error::Input(format!(
            "{} logit rows but {} labels",
            logits.nrows(),
            labels.len()
        )));
    }
    if logits.nrows() == 0 {
        return Err(Error::Input("empty batch".into()));
    }
    if logits.ncols() != classes {
        return Err(Error::Input(format!(
            "logits have {} columns, loss configured for {classes} classes",
            logits.ncols()
        )));
    }
    if let Some(&y) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::Input(format!("label {y} out of range")));
    }
    Ok(())
}

pub fn cb_focal_loss(logits: &Matrix, labels: &[usize], config: &ClassBalanceConfig) -> Result<f64> {
    let weights = effective_number_weights(config)?;
    check_batch(logits, labels, weights.len())?;
    Ok(focal_loss_with_weights(logits, labels, &weights, config.gamma))
}

/// Gradient of [`cb_focal_loss`] with respect to the logits.
pub fn cb_focal_loss_grad(logits: &Matrix, labels: &[usize], config: &ClassBalanceConfig) -> Result<Matrix> {
    let weights = effective_number_weights(config)?;
    check_batch(logits, labels, weights.len())?;
    Ok(focal_loss_grad_with_weights(logits, labels, &weights, config.gamma))
}

/// Log-softmax of one row at index `y`, together with the full softmax.
fn log_prob_row(row: ndarray::ArrayView1<f64>, y: usize) -> (f64, Vec<f64>) {
    let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    let probs = row.iter().map(|v| (v - lse).exp()).collect();
    (row[y] - lse, probs)
}

pub(crate) fn focal_loss_with_weights(logits: &Matrix, labels: &[usize], weights: &[f64], gamma: f64) -> f64 {
    let total: f64 = logits
        .rows()
        .into_iter()
        .zip(labels)
        .map(|(row, &y)| {
            let (log_p, _) = log_prob_row(row, y);
            let one_minus = -log_p.exp_m1();
            weights[y] * one_minus.powf(gamma) * -log_p
        })
        .sum();
    total / labels.len() as f64
}

pub(crate) fn focal_loss_grad_with_weights(
    logits: &Matrix,
    labels: &[usize],
    weights: &[f64],
    gamma: f64,
) -> Matrix {
    let n = labels.len() as f64;
    let mut grad = Array2::zeros(logits.dim());
    for ((row, &y), mut out) in logits.rows().into_iter().zip(labels).zip(grad.rows_mut()) {
        let (log_p, probs) = log_prob_row(row, y);
        let p = log_p.exp();
        let one_minus = -log_p.exp_m1();
        // dL/dz_j = w [γ (1-p)^(γ-1) p log p - (1-p)^γ] (δ_jy - p_j)
        let focus = if gamma == 0.0 || one_minus == 0.0 {
            0.0
        } else {
            gamma * one_minus.powf(gamma - 1.0) * p * log_p
        };
        let coef = weights[y] * (focus - one_minus.powf(gamma)) / n;
        for (j, g) in out.iter_mut().enumerate() {
            let delta = if j == y { 1.0 } else { 0.0 };
            *g = coef * (delta - probs[j]);
        }
    }
    grad
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;
    use proptest::prelude::*;

    fn cfg(beta: f64, gamma: f64, counts: &[u64]) -> ClassBalanceConfig {
        ClassBalanceConfig {
            beta,
            gamma,
            class_counts: counts.to_vec(),
        }
    }

    #[test]
    fn beta_zero_gives_unit_weights() {
        let w = effective_number_weights(&cfg(0.0, 2.0, &[5, 900, 3, 1])).unwrap();
        assert_eq!(w, vec![1.0; 4]);
    }

    #[test]
    fn singleton_class_raw_weight_is_one() {
        for beta in [0.0, 0.3, 0.9, 0.9999] {
            assert_relative_eq!(raw_class_weights(beta, &[1])[0], 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn raw_weights_match_direct_formula() {
        // Oracle: direct evaluation with powi.
        let beta: f64 = 0.9;
        let oracle = [
            (1.0 - beta) / (1.0 - beta.powi(10)),
            (1.0 - beta) / (1.0 - beta.powi(100)),
        ];
        // Frozen from a 50-digit mpmath evaluation.
        let frozen = [0.153_533_993_278_762_95, 0.100_002_656_210_441_42];
        let got = raw_class_weights(beta, &[10, 100]);
        for i in 0..2 {
            assert_relative_eq!(got[i], oracle[i], max_relative = 1e-12);
            assert_relative_eq!(got[i], frozen[i], max_relative = 1e-12);
        }
    }

    #[test]
    fn normalized_weights_sum_to_class_count() {
        let w = effective_number_weights(&cfg(0.999, 1.0, &[164, 98, 60, 5])).unwrap();
        assert_relative_eq!(w.iter().sum::<f64>(), 4.0, epsilon = 1e-12);
        assert!(w[3] > w[2] && w[2] > w[1] && w[1] > w[0]);
    }

    #[test]
    fn zero_count_is_domain_error() {
        assert!(matches!(
            effective_number_weights(&cfg(0.9, 2.0, &[3, 0])),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            effective_number_weights(&cfg(1.0, 2.0, &[3, 4])),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn uniform_logits_gamma_two() {
        let logits = array![[0.0, 0.0, 0.0, 0.0]];
        let l = cb_focal_loss(&logits, &[0], &cfg(0.0, 2.0, &[1, 1, 1, 1])).unwrap();
        let expected = 0.75f64.powi(2) * 4f64.ln();
        assert_relative_eq!(l, expected, epsilon = 1e-12);
        assert_relative_eq!(l, 0.7797, epsilon = 1e-4);
    }

    #[test]
    fn reduces_to_cross_entropy() {
        let logits = array![[1.0, -2.0, 0.5, 3.0], [0.2, 0.1, -0.3, 0.0]];
        let labels = [3, 2];
        let ce: f64 = logits
            .rows()
            .into_iter()
            .zip(labels)
            .map(|(r, y)| {
                let lse = r.iter().map(|v: &f64| v.exp()).sum::<f64>().ln();
                lse - r[y]
            })
            .sum::<f64>()
            / 2.0;
        let l = cb_focal_loss(&logits, &labels, &cfg(0.0, 0.0, &[4, 4, 4, 4])).unwrap();
        assert_relative_eq!(l, ce, epsilon = 1e-12);
    }

    #[test]
    fn confident_correct_prediction_loss_vanishes() {
        let c = cfg(0.9, 2.0, &[10, 10, 10, 10]);
        let mut last = f64::INFINITY;
        for margin in [0.0, 2.0, 5.0, 10.0, 20.0, 40.0] {
            let l = cb_focal_loss(&array![[margin, 0.0, 0.0, 0.0]], &[0], &c).unwrap();
            assert!(l < last);
            last = l;
        }
        assert!(last < 1e-30);
    }

    #[test]
    fn extreme_logits_stay_finite() {
        let c = cfg(0.9999, 0.5, &[10, 10, 10, 10]);
        let logits = array![[800.0, -800.0, 0.0, 1.0], [-900.0, 900.0, 0.0, 0.0]];
        let l = cb_focal_loss(&logits, &[0, 0], &c).unwrap();
        let g = cb_focal_loss_grad(&logits, &[0, 0], &c).unwrap();
        assert!(l.is_finite());
        assert!(g.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn length_mismatch_is_input_error() {
        let c = cfg(0.0, 0.0, &[1, 1, 1, 1]);
        let logits = array![[0.0, 0.0, 0.0, 0.0]];
        assert!(matches!(cb_focal_loss(&logits, &[0, 1], &c), Err(Error::Input(_))));
        assert!(matches!(cb_focal_loss(&logits, &[4], &c), Err(Error::Input(_))));
    }

    proptest! {
        #[test]
        fn loss_is_non_negative(
            z in prop::collection::vec(-20.0f64..20.0, 4),
            y in 0usize..4, beta in 0.0f64..0.9999, gamma in 0.0f64..5.0,
        ) {
            let logits = Array2::from_shape_vec((1, 4), z).unwrap();
            let l = cb_focal_loss(&logits, &[y], &cfg(beta, gamma, &[3, 9, 27, 81])).unwrap();
            prop_assert!(l >= 0.0);
        }

        #[test]
        fn modulating_factor_decreases_in_gamma(
            z in prop::collection::vec(-3.0f64..3.0, 4), g1 in 0.0f64..4.0, dg in 0.1f64..2.0,
        ) {
            let logits = Array2::from_shape_vec((1, 4), z).unwrap();
            let c = |g| cfg(0.0, g, &[1, 1, 1, 1]);
            let lo = cb_focal_loss(&logits, &[0], &c(g1)).unwrap();
            let hi = cb_focal_loss(&logits, &[0], &c(g1 + dg)).unwrap();
            prop_assert!(hi < lo);
        }
    }
}
