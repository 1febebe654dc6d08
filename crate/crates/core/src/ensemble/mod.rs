//! Candidate verification ensemble: gradient-boosted trees, a random forest
//! and a kernel SVM, fused by soft vote.
//!
//! The task is binary by default (class 0 = background, 1 = object). The
//! fusion rule itself works over any number of classes.

pub mod forest;
pub mod gbt;
pub mod svm;
pub mod testing;
pub mod tree;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::{par, seed};

pub use forest::{RandomForest, RfParams};
pub use gbt::{GradientBoostedTrees, XgbParams};
pub use svm::{Kernel, KernelSvm, SvmParams};

pub const BACKGROUND: usize = 0;
pub const OBJECT: usize = 1;

#[inline]
pub fn sigmoid(m: f64) -> f64 {
    if m >= 0.0 {
        1.0 / (1.0 + (-m).exp())
    } else {
        let e = m.exp();
        e / (1.0 + e)
    }
}

/// Feature vectors with class ids.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSet {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<usize>,
}

impl TrainSet {
    pub fn new(x: Vec<Vec<f64>>, y: Vec<usize>) -> Result<Self> {
        if x.is_empty() {
            return Err(Error::EmptyTraining("no examples".into()));
        }
        if x.len() != y.len() {
            return Err(Error::param(
                "labels",
                format!("{} feature vectors but {} labels", x.len(), y.len()),
            ));
        }
        let d = x[0].len();
        if d == 0 {
            return Err(Error::param("features", "zero-length feature vectors"));
        }
        for (i, v) in x.iter().enumerate() {
            if v.len() != d {
                return Err(Error::param(
                    "features",
                    format!("row {i} has {} values, expected {d}", v.len()),
                ));
            }
            if !v.iter().all(|f| f.is_finite()) {
                return Err(Error::param(
                    "features",
                    format!("row {i} has a non-finite value"),
                ));
            }
        }
        Ok(TrainSet { x, y })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x[0].len()
    }

    /// At least two; one more than the largest label.
    pub fn n_classes(&self) -> usize {
        self.y.iter().copied().max().unwrap_or(0).max(1) + 1
    }

    /// Checks labels are in {0, 1} with both present.
    pub fn require_binary(&self) -> Result<()> {
        if let Some(&bad) = self.y.iter().find(|&&c| c > 1) {
            return Err(Error::param(
                "labels",
                format!("class {bad} in a binary task"),
            ));
        }
        let pos = self.y.iter().filter(|&&c| c == 1).count();
        match pos {
            0 => Err(Error::SingleClass(0)),
            p if p == self.len() => Err(Error::SingleClass(1)),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EnsembleParams {
    pub xgb: XgbParams,
    pub rf: RfParams,
    pub svm: SvmParams,
}

impl EnsembleParams {
    pub fn validate(&self) -> Result<()> {
        self.xgb.validate()?;
        self.rf.validate()?;
        self.svm.validate()
    }
}

/// One member's opinion: its label and the probability it assigns to it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemberVote {
    pub label: usize,
    pub probability: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsemblePrediction {
    pub label: usize,
    pub confidence: f64,
    /// In member order: gbt, rf, svm.
    pub per_member: [MemberVote; 3],
}

fn argmax_lowest(p: &[f64]) -> usize {
    let mut best = 0;
    for (c, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = c;
        }
    }
    best
}

const TIE_EPS: f64 = 1e-12;

fn fuse_inner(dists: &[Vec<f64>; 3], labels: [usize; 3]) -> Result<EnsemblePrediction> {
    let k = dists[0].len();
    for (m, d) in dists.iter().enumerate() {
        if d.len() != k {
            return Err(Error::param(
                "fuse",
                "members disagree on the number of classes",
            ));
        }
        if let Some(&bad) = d.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::BadProbability {
                member: m,
                value: bad,
            });
        }
    }
    let sums: Vec<f64> = (0..k).map(|c| dists.iter().map(|d| d[c]).sum()).collect();
    let top = sums.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tied: Vec<usize> = (0..k).filter(|&c| top - sums[c] <= TIE_EPS).collect();
    let label = if tied.len() == 1 {
        tied[0]
    } else {
        // member precedence gbt > rf > svm, then lowest class
        labels
            .iter()
            .copied()
            .find(|l| tied.contains(l))
            .unwrap_or(tied[0])
    };
    let per_member = [0, 1, 2].map(|m| MemberVote {
        label: labels[m],
        probability: dists[m][labels[m]],
    });
    Ok(EnsemblePrediction {
        label,
        confidence: (sums[label] / 3.0).clamp(0.0, 1.0),
        per_member,
    })
}

/// Soft vote over binary member opinions. A member's `(label, p)` puts `p`
/// on `label` and `1 - p` on the other class.
pub fn fuse(members: [MemberVote; 3]) -> Result<EnsemblePrediction> {
    let mut dists: [Vec<f64>; 3] = Default::default();
    for (m, v) in members.iter().enumerate() {
        if v.label > 1 {
            return Err(Error::param(
                "fuse",
                format!("label {} in a binary vote", v.label),
            ));
        }
        if !(0.0..=1.0).contains(&v.probability) {
            return Err(Error::BadProbability {
                member: m,
                value: v.probability,
            });
        }
        let mut d = vec![1.0 - v.probability; 2];
        d[v.label] = v.probability;
        dists[m] = d;
    }
    fuse_inner(&dists, members.map(|v| v.label))
}

/// Soft vote over full class distributions; each member's label is its argmax
/// (lowest class on ties).
pub fn fuse_distributions(dists: &[Vec<f64>; 3]) -> Result<EnsemblePrediction> {
    if dists[0].is_empty() {
        return Err(Error::param("fuse", "empty distribution"));
    }
    let labels = [0, 1, 2].map(|m| argmax_lowest(&dists[m]));
    fuse_inner(dists, labels)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub gbt: GradientBoostedTrees,
    pub rf: RandomForest,
    pub svm: KernelSvm,
}

pub const MODEL_FORMAT: &str = "densecotrain-ensemble";
pub const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelDocument {
    format: String,
    version: u32,
    model: Ensemble,
}

impl Ensemble {
    /// Trains the three members concurrently on seeds derived from `seed`.
    pub fn train(data: &TrainSet, params: &EnsembleParams, seed: u64) -> Result<Self> {
        params.validate()?;
        data.require_binary()?;
        let s = |k: u64| seed::derive(seed, &[seed::TAG_ENSEMBLE, k]);
        let (gbt, (rf, svm)) = par::join(
            || GradientBoostedTrees::fit(data, &params.xgb),
            || {
                par::join(
                    || RandomForest::fit(data, &params.rf, s(1)),
                    || KernelSvm::fit(data, &params.svm, s(2)),
                )
            },
        );
        Ok(Ensemble {
            gbt: gbt?,
            rf: rf?,
            svm: svm?,
        })
    }

    /// Object probabilities from gbt, rf, svm.
    pub fn member_probs(&self, x: &[f64]) -> [f64; 3] {
        [
            self.gbt.predict_proba(x),
            self.rf.class_probs(x)[OBJECT],
            self.svm.predict_proba(x),
        ]
    }

    pub fn predict(&self, x: &[f64]) -> EnsemblePrediction {
        let dists = self.member_probs(x).map(|p| vec![1.0 - p, p]);
        fuse_distributions(&dists).expect("member probabilities are calibrated into [0, 1]")
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&ModelDocument {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            model: self.clone(),
        })?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: ModelDocument = serde_json::from_str(s)?;
        if doc.format != MODEL_FORMAT || doc.version != MODEL_VERSION {
            return Err(Error::param(
                "model",
                format!("unsupported document {} v{}", doc.format, doc.version),
            ));
        }
        Ok(doc.model)
    }
}
