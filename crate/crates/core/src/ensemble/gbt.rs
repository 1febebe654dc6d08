//! Second-order gradient boosting on logistic loss.
//!
//! Each round fits a depth-limited regression tree to the gradients
//! `p - y` and hessians `p (1 - p)` with exact greedy splits; leaves carry
//! `-G / (H + lambda)` and the ensemble adds them shrunk by the learning rate.
//! No row or column sampling, so training is fully deterministic.

use serde::{Deserialize, Serialize};

use super::tree::{RegressionGrower, Tree};
use super::{sigmoid, TrainSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XgbParams {
    pub learning_rate: f64,
    pub max_depth: usize,
    /// L2 regularization on leaf weights.
    pub l2_reg: f64,
    pub n_trees: usize,
}

impl Default for XgbParams {
    fn default() -> Self {
        XgbParams {
            learning_rate: 0.1,
            max_depth: 3,
            l2_reg: 1.0,
            n_trees: 50,
        }
    }
}

impl XgbParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::param("lr_xgb", "must be positive"));
        }
        if self.max_depth == 0 {
            return Err(Error::param("d_xgb", "must be at least 1"));
        }
        if !(self.l2_reg >= 0.0 && self.l2_reg.is_finite()) {
            return Err(Error::param("rc_xgb", "must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientBoostedTrees {
    /// Prior log-odds of the positive class.
    pub base_score: f64,
    pub learning_rate: f64,
    pub trees: Vec<Tree<f64>>,
}

fn log_loss(margins: &[f64], y: &[usize]) -> f64 {
    margins
        .iter()
        .zip(y)
        .map(|(&m, &t)| {
            // log(1 + e^m) - t m, stable for both signs
            let softplus = if m > 0.0 {
                m + (-m).exp().ln_1p()
            } else {
                m.exp().ln_1p()
            };
            softplus - t as f64 * m
        })
        .sum::<f64>()
        / y.len() as f64
}

impl GradientBoostedTrees {
    pub fn fit(data: &TrainSet, params: &XgbParams) -> Result<Self> {
        Ok(Self::fit_traced(data, params)?.0)
    }

    /// Also returns the mean training log-loss before the first round and after each round.
    pub fn fit_traced(data: &TrainSet, params: &XgbParams) -> Result<(Self, Vec<f64>)> {
        params.validate()?;
        data.require_binary()?;
        let n = data.len();
        let pos = data.y.iter().filter(|&&c| c == 1).count() as f64;
        let prior = pos / n as f64;
        let base_score = (prior / (1.0 - prior)).ln();
        let mut margins = vec![base_score; n];
        let mut losses = vec![log_loss(&margins, &data.y)];
        let mut trees = Vec::with_capacity(params.n_trees);
        let idx: Vec<usize> = (0..n).collect();
        let mut grad = vec![0.0; n];
        let mut hess = vec![0.0; n];
        for _ in 0..params.n_trees {
            for i in 0..n {
                let p = sigmoid(margins[i]);
                grad[i] = p - data.y[i] as f64;
                hess[i] = p * (1.0 - p);
            }
            let tree = RegressionGrower {
                x: &data.x,
                grad: &grad,
                hess: &hess,
                lambda: params.l2_reg,
                max_depth: params.max_depth,
                min_child_hessian: 1e-6,
            }
            .grow(&idx);
            for (m, x) in margins.iter_mut().zip(&data.x) {
                *m += params.learning_rate * tree.leaf_for(x);
            }
            losses.push(log_loss(&margins, &data.y));
            trees.push(tree);
        }
        Ok((
            GradientBoostedTrees {
                base_score,
                learning_rate: params.learning_rate,
                trees,
            },
            losses,
        ))
    }

    pub fn margin(&self, x: &[f64]) -> f64 {
        self.base_score + self.learning_rate * self.trees.iter().map(|t| t.leaf_for(x)).sum::<f64>()
    }

    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        sigmoid(self.margin(x))
    }
}
