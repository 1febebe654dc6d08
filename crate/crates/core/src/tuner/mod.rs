//! Hyperparameter search over the 20-gene pipeline vector.
//!
//! Genes are handled generically as [`GeneValue`]s aligned with a list of
//! [`GeneSpec`]s; [`HyperVector`] is the typed view used by the pipeline.

mod ops;
mod optimize;

use serde::{Deserialize, Serialize};

use crate::cotrain::PipelineParams;
use crate::detector::AnchorScale;
use crate::ensemble::{EnsembleParams, Kernel, RfParams, SvmParams, XgbParams};
use crate::error::{Error, Result};

pub use ops::{crossover, crossover_with_mask, mutate, random_vector};
pub use optimize::{
    optimize, planted_objective, tune_pipeline, Algorithm, TraceRow, TuneOutcome, TunerConfig,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum GeneKind {
    Continuous {
        lo: f64,
        hi: f64,
    },
    /// Sampled and mutated uniformly in log space.
    LogContinuous {
        lo: f64,
        hi: f64,
    },
    Integer {
        lo: i64,
        hi: i64,
    },
    Categorical {
        menu: Vec<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: GeneKind,
}

impl GeneSpec {
    fn new(name: &str, kind: GeneKind) -> Self {
        GeneSpec {
            name: name.to_string(),
            kind,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |r: &str| Err(Error::param(format!("gene {}", self.name), r.to_string()));
        match &self.kind {
            GeneKind::Continuous { lo, hi } if !(lo < hi && lo.is_finite() && hi.is_finite()) => {
                bad("needs finite lo < hi")
            }
            GeneKind::LogContinuous { lo, hi } if !(*lo > 0.0 && lo < hi && hi.is_finite()) => {
                bad("needs 0 < lo < hi")
            }
            GeneKind::Integer { lo, hi } if lo >= hi => bad("needs lo < hi"),
            GeneKind::Categorical { menu } if menu.is_empty() => bad("empty menu"),
            _ => Ok(()),
        }
    }

    pub fn contains(&self, v: &GeneValue) -> bool {
        match (&self.kind, v) {
            (GeneKind::Continuous { lo, hi }, GeneValue::Real(x))
            | (GeneKind::LogContinuous { lo, hi }, GeneValue::Real(x)) => (lo..=hi).contains(&x),
            (GeneKind::Integer { lo, hi }, GeneValue::Int(x)) => (lo..=hi).contains(&x),
            (GeneKind::Categorical { menu }, GeneValue::Cat(s)) => menu.contains(s),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GeneValue {
    Int(i64),
    Real(f64),
    Cat(String),
}

impl std::fmt::Display for GeneValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            GeneValue::Real(x) => write!(f, "{x}"),
            GeneValue::Int(x) => write!(f, "{x}"),
            GeneValue::Cat(s) => f.write_str(s),
        }
    }
}

/// Gene order of the solution vector.
pub const GENE_NAMES: [&str; 20] = [
    "lr_xgb", "d_xgb", "rc_xgb", "nt_xgb", "d_rf", "nt_rf", "c_svm", "k_svm", "g_svm", "ep_yolo",
    "ct_yolo", "iou_yolo", "bs_yolo", "lr_yolo", "ep_rcnn", "ct_rcnn", "iou_rcnn", "bs_rcnn",
    "lr_rcnn", "as_rcnn",
];

fn menu(items: &[&str]) -> GeneKind {
    GeneKind::Categorical {
        menu: items.iter().map(|s| s.to_string()).collect(),
    }
}

/// Default search bounds, in [`GENE_NAMES`] order.
pub fn default_specs() -> Vec<GeneSpec> {
    use GeneKind::*;
    let batch = || menu(&["4", "8", "16", "32"]);
    vec![
        GeneSpec::new("lr_xgb", Continuous { lo: 0.01, hi: 0.5 }),
        GeneSpec::new("d_xgb", Integer { lo: 1, hi: 12 }),
        GeneSpec::new("rc_xgb", Continuous { lo: 0.0, hi: 10.0 }),
        GeneSpec::new("nt_xgb", Integer { lo: 10, hi: 300 }),
        GeneSpec::new("d_rf", Integer { lo: 1, hi: 20 }),
        GeneSpec::new("nt_rf", Integer { lo: 10, hi: 300 }),
        GeneSpec::new(
            "c_svm",
            LogContinuous {
                lo: 0.01,
                hi: 100.0,
            },
        ),
        GeneSpec::new("k_svm", menu(&["linear", "rbf", "poly"])),
        GeneSpec::new("g_svm", LogContinuous { lo: 1e-4, hi: 10.0 }),
        GeneSpec::new("ep_yolo", Integer { lo: 1, hi: 60 }),
        GeneSpec::new("ct_yolo", Continuous { lo: 0.05, hi: 0.95 }),
        GeneSpec::new("iou_yolo", Continuous { lo: 0.3, hi: 0.9 }),
        GeneSpec::new("bs_yolo", batch()),
        GeneSpec::new("lr_yolo", LogContinuous { lo: 1e-5, hi: 1e-2 }),
        GeneSpec::new("ep_rcnn", Integer { lo: 1, hi: 60 }),
        GeneSpec::new("ct_rcnn", Continuous { lo: 0.05, hi: 0.95 }),
        GeneSpec::new("iou_rcnn", Continuous { lo: 0.3, hi: 0.9 }),
        GeneSpec::new("bs_rcnn", batch()),
        GeneSpec::new("lr_rcnn", LogContinuous { lo: 1e-5, hi: 1e-2 }),
        GeneSpec::new("as_rcnn", menu(&["small", "medium", "large", "mixed"])),
    ]
}

/// Reorders `specs` into [`GENE_NAMES`] order, erroring on missing genes.
/// Unknown names are rejected too.
pub fn complete_specs(specs: &[GeneSpec]) -> Result<Vec<GeneSpec>> {
    if let Some(s) = specs
        .iter()
        .find(|s| !GENE_NAMES.contains(&s.name.as_str()))
    {
        return Err(Error::param(
            "gene specs",
            format!("unknown gene {}", s.name),
        ));
    }
    let missing: Vec<String> = GENE_NAMES
        .iter()
        .filter(|n| !specs.iter().any(|s| s.name == **n))
        .map(|n| n.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingGenes(missing));
    }
    let out: Vec<GeneSpec> = GENE_NAMES
        .iter()
        .map(|n| {
            specs
                .iter()
                .find(|s| s.name == *n)
                .cloned()
                .expect("checked above")
        })
        .collect();
    for s in &out {
        s.validate()?;
    }
    Ok(out)
}

/// Checks a gene list against `specs` position by position.
pub fn validate_genes(genes: &[GeneValue], specs: &[GeneSpec]) -> Result<()> {
    if genes.len() != specs.len() {
        return Err(Error::param(
            "vector",
            format!("{} genes, expected {}", genes.len(), specs.len()),
        ));
    }
    for (g, s) in genes.iter().zip(specs) {
        if !s.contains(g) {
            return Err(Error::param(
                format!("gene {}", s.name),
                format!("{g} outside its bounds"),
            ));
        }
    }
    Ok(())
}

/// The typed 20-gene solution vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperVector {
    pub lr_xgb: f64,
    pub d_xgb: u32,
    pub rc_xgb: f64,
    pub nt_xgb: u32,
    pub d_rf: u32,
    pub nt_rf: u32,
    pub c_svm: f64,
    pub k_svm: Kernel,
    pub g_svm: f64,
    pub ep_yolo: u32,
    pub ct_yolo: f64,
    pub iou_yolo: f64,
    pub bs_yolo: u32,
    pub lr_yolo: f64,
    pub ep_rcnn: u32,
    pub ct_rcnn: f64,
    pub iou_rcnn: f64,
    pub bs_rcnn: u32,
    pub lr_rcnn: f64,
    pub as_rcnn: AnchorScale,
}

impl Default for HyperVector {
    fn default() -> Self {
        HyperVector::from_pipeline(&PipelineParams::default())
    }
}

impl HyperVector {
    pub fn from_pipeline(p: &PipelineParams) -> Self {
        let (e, y, r) = (&p.ensemble, &p.contextual, &p.localizer);
        HyperVector {
            lr_xgb: e.xgb.learning_rate,
            d_xgb: e.xgb.max_depth as u32,
            rc_xgb: e.xgb.l2_reg,
            nt_xgb: e.xgb.n_trees as u32,
            d_rf: e.rf.max_depth as u32,
            nt_rf: e.rf.n_trees as u32,
            c_svm: e.svm.c,
            k_svm: e.svm.kernel,
            g_svm: e.svm.gamma,
            ep_yolo: y.epochs,
            ct_yolo: y.confidence_threshold,
            iou_yolo: y.nms_iou,
            bs_yolo: y.batch_size,
            lr_yolo: y.learning_rate,
            ep_rcnn: r.epochs,
            ct_rcnn: r.confidence_threshold,
            iou_rcnn: r.nms_iou,
            bs_rcnn: r.batch_size,
            lr_rcnn: r.learning_rate,
            as_rcnn: r.anchor_scales.unwrap_or(AnchorScale::Medium),
        }
    }

    /// Routes genes: yolo block to the contextual view, rcnn block to the
    /// localizer, the rest to the classifier blocks.
    pub fn to_pipeline(&self) -> PipelineParams {
        let mut p = PipelineParams {
            ensemble: EnsembleParams {
                xgb: XgbParams {
                    learning_rate: self.lr_xgb,
                    max_depth: self.d_xgb as usize,
                    l2_reg: self.rc_xgb,
                    n_trees: self.nt_xgb as usize,
                },
                rf: RfParams {
                    max_depth: self.d_rf as usize,
                    n_trees: self.nt_rf as usize,
                    bootstrap: true,
                },
                svm: SvmParams {
                    c: self.c_svm,
                    kernel: self.k_svm,
                    gamma: self.g_svm,
                },
            },
            ..PipelineParams::default()
        };
        let y = &mut p.contextual;
        y.epochs = self.ep_yolo;
        y.confidence_threshold = self.ct_yolo;
        y.nms_iou = self.iou_yolo;
        y.batch_size = self.bs_yolo;
        y.learning_rate = self.lr_yolo;
        let r = &mut p.localizer;
        r.epochs = self.ep_rcnn;
        r.confidence_threshold = self.ct_rcnn;
        r.nms_iou = self.iou_rcnn;
        r.batch_size = self.bs_rcnn;
        r.learning_rate = self.lr_rcnn;
        r.anchor_scales = Some(self.as_rcnn);
        p
    }

    pub fn to_genes(&self) -> Vec<GeneValue> {
        use GeneValue::*;
        let i = |v: u32| Int(v as i64);
        vec![
            Real(self.lr_xgb),
            i(self.d_xgb),
            Real(self.rc_xgb),
            i(self.nt_xgb),
            i(self.d_rf),
            i(self.nt_rf),
            Real(self.c_svm),
            Cat(self.k_svm.name().into()),
            Real(self.g_svm),
            i(self.ep_yolo),
            Real(self.ct_yolo),
            Real(self.iou_yolo),
            Cat(self.bs_yolo.to_string()),
            Real(self.lr_yolo),
            i(self.ep_rcnn),
            Real(self.ct_rcnn),
            Real(self.iou_rcnn),
            Cat(self.bs_rcnn.to_string()),
            Real(self.lr_rcnn),
            Cat(self.as_rcnn.name().into()),
        ]
    }

    pub fn from_genes(genes: &[GeneValue]) -> Result<Self> {
        if genes.len() != GENE_NAMES.len() {
            return Err(Error::param(
                "vector",
                format!("{} genes, expected 20", genes.len()),
            ));
        }
        let bad = |k: usize| {
            Error::param(
                format!("gene {}", GENE_NAMES[k]),
                format!("wrong kind: {}", genes[k]),
            )
        };
        let real = |k: usize| match genes[k] {
            GeneValue::Real(x) => Ok(x),
            _ => Err(bad(k)),
        };
        let int = |k: usize| match genes[k] {
            GeneValue::Int(x) if x >= 0 && x <= u32::MAX as i64 => Ok(x as u32),
            _ => Err(bad(k)),
        };
        let cat = |k: usize| match &genes[k] {
            GeneValue::Cat(s) => Ok(s.as_str()),
            _ => Err(bad(k)),
        };
        let batch = |k: usize| cat(k)?.parse::<u32>().map_err(|_| bad(k));
        Ok(HyperVector {
            lr_xgb: real(0)?,
            d_xgb: int(1)?,
            rc_xgb: real(2)?,
            nt_xgb: int(3)?,
            d_rf: int(4)?,
            nt_rf: int(5)?,
            c_svm: real(6)?,
            k_svm: Kernel::parse(cat(7)?).ok_or_else(|| bad(7))?,
            g_svm: real(8)?,
            ep_yolo: int(9)?,
            ct_yolo: real(10)?,
            iou_yolo: real(11)?,
            bs_yolo: batch(12)?,
            lr_yolo: real(13)?,
            ep_rcnn: int(14)?,
            ct_rcnn: real(15)?,
            iou_rcnn: real(16)?,
            bs_rcnn: batch(17)?,
            lr_rcnn: real(18)?,
            as_rcnn: AnchorScale::parse(cat(19)?).ok_or_else(|| bad(19))?,
        })
    }

    /// Bounds check against (complete) `specs`, plus pipeline validity.
    pub fn validate(&self, specs: &[GeneSpec]) -> Result<()> {
        let specs = complete_specs(specs)?;
        validate_genes(&self.to_genes(), &specs)?;
        self.to_pipeline().validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_vector_is_in_bounds_and_round_trips() {
        let v = HyperVector::default();
        v.validate(&default_specs()).unwrap();
        assert_eq!(HyperVector::from_genes(&v.to_genes()).unwrap(), v);
        assert_eq!(HyperVector::from_pipeline(&v.to_pipeline()), v);
        let json = serde_json::to_string(&v).unwrap();
        assert_eq!(serde_json::from_str::<HyperVector>(&json).unwrap(), v);
    }

    #[test]
    fn genes_route_to_the_right_views() {
        let v = HyperVector {
            ep_yolo: 7,
            ep_rcnn: 9,
            as_rcnn: AnchorScale::Large,
            ..HyperVector::default()
        };
        let p = v.to_pipeline();
        assert_eq!(p.contextual.epochs, 7);
        assert_eq!(p.localizer.epochs, 9);
        assert_eq!(p.localizer.anchor_scales, Some(AnchorScale::Large));
    }

    #[test]
    fn incomplete_specs_name_missing_genes() {
        let mut specs = default_specs();
        specs.retain(|s| s.name != "g_svm" && s.name != "as_rcnn");
        match complete_specs(&specs) {
            Err(Error::MissingGenes(m)) => assert_eq!(m, vec!["g_svm", "as_rcnn"]),
            other => panic!("{other:?}"),
        }
        let mut rev = default_specs();
        rev.reverse();
        assert_eq!(complete_specs(&rev).unwrap(), default_specs());
    }

    #[test]
    fn out_of_bounds_rejected() {
        let v = HyperVector {
            d_xgb: 13,
            ..HyperVector::default()
        };
        assert!(v.validate(&default_specs()).is_err());
        let v = HyperVector {
            bs_yolo: 12,
            ..HyperVector::default()
        };
        assert!(v.validate(&default_specs()).is_err());
    }
}
