//! Bagged Gini trees with a `sqrt(F)` random feature subset per split.
//! Class probability is the fraction of trees voting for it.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::tree::{ClassLeaf, ClassTreeGrower, Tree};
use super::TrainSet;
use crate::error::{Error, Result};
use crate::{par, seed};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RfParams {
    /// 0 gives single-leaf trees.
    pub max_depth: usize,
    pub n_trees: usize,
    /// Disabling bagging is a test hook; always on in normal use.
    #[serde(default = "yes", skip_serializing_if = "is_true")]
    pub bootstrap: bool,
}

fn yes() -> bool {
    true
}

fn is_true(b: &bool) -> bool {
    *b
}

impl Default for RfParams {
    fn default() -> Self {
        RfParams {
            max_depth: 10,
            n_trees: 100,
            bootstrap: true,
        }
    }
}

impl RfParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::param("nt_rf", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub n_classes: usize,
    pub trees: Vec<Tree<ClassLeaf>>,
}

/// `round(sqrt(F))`, at least 1.
pub fn features_per_split(n_features: usize) -> usize {
    ((n_features as f64).sqrt().round() as usize).max(1)
}

impl RandomForest {
    pub fn fit(data: &TrainSet, params: &RfParams, seed: u64) -> Result<Self> {
        params.validate()?;
        let n = data.len();
        let n_classes = data.n_classes();
        let grower = ClassTreeGrower {
            x: &data.x,
            y: &data.y,
            n_classes,
            max_depth: params.max_depth,
            max_features: features_per_split(data.dim()),
        };
        let trees = par::map_range(params.n_trees, |t| {
            let mut rng = seed::rng_for(seed, &[t as u64]);
            let idx: Vec<usize> = if params.bootstrap {
                (0..n).map(|_| rng.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            grower.grow(&idx, &mut rng)
        });
        Ok(RandomForest { n_classes, trees })
    }

    pub fn votes(&self, x: &[f64]) -> Vec<usize> {
        let mut v = vec![0; self.n_classes];
        for t in &self.trees {
            v[t.leaf_for(x).majority()] += 1;
        }
        v
    }

    pub fn class_probs(&self, x: &[f64]) -> Vec<f64> {
        let nt = self.trees.len() as f64;
        self.votes(x).into_iter().map(|v| v as f64 / nt).collect()
    }
}
