//! The run configuration document and its resolution into a dataset.

use std::path::{Path, PathBuf};

use densecotrain::cotrain::{CoTrainConfig, PipelineParams};
use densecotrain::dataset::{
    generate_synthetic_dataset, load_annotations, select_and_split, Dataset, DatasetSplit,
    DensityVariation, SceneSpec, SplitFractions,
};
use densecotrain::tuner::{default_specs, GeneSpec, HyperVector, TunerConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetSource {
    /// Scenes generated on the fly: `n_labeled + n_unlabeled` of them.
    Synthetic {
        #[serde(default)]
        scene: SceneSpec,
        #[serde(default)]
        variation: DensityVariation,
    },
    /// An annotation CSV; unlabeled images keep their boxes only for auditing.
    Csv { path: PathBuf },
}

impl Default for DatasetSource {
    fn default() -> Self {
        DatasetSource::Synthetic {
            scene: SceneSpec::default(),
            variation: DensityVariation::default(),
        }
    }
}

fn default_labeled() -> usize {
    2000
}

fn default_unlabeled() -> usize {
    8000
}

/// Everything a run needs. The echo written next to each report reproduces it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub dataset: DatasetSource,
    #[serde(default = "default_labeled")]
    pub n_labeled: usize,
    #[serde(default = "default_unlabeled")]
    pub n_unlabeled: usize,
    #[serde(default)]
    pub fractions: SplitFractions,
    #[serde(default)]
    pub pipeline: PipelineParams,
    /// Overrides `pipeline` when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hyper: Option<HyperVector>,
    #[serde(default)]
    pub cotrain: CoTrainConfig,
    #[serde(default)]
    pub tuner: TunerConfig,
    #[serde(default = "default_specs")]
    pub gene_specs: Vec<GeneSpec>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: DatasetSource::default(),
            n_labeled: default_labeled(),
            n_unlabeled: default_unlabeled(),
            fractions: SplitFractions::default(),
            pipeline: PipelineParams::default(),
            hyper: None,
            cotrain: CoTrainConfig::default(),
            tuner: TunerConfig::default(),
            gene_specs: default_specs(),
            seed: None,
            out: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_slice(&bytes)
            .map_err(|e| CliError::usage(format!("{}: invalid config: {e}", path.display())))
    }

    pub fn seed(&self) -> CliResult<u64> {
        self.seed.ok_or_else(|| {
            CliError::usage("missing required flag --seed (or `seed` in the config file)")
        })
    }

    pub fn pipeline(&self) -> PipelineParams {
        self.hyper
            .as_ref()
            .map_or_else(|| self.pipeline.clone(), HyperVector::to_pipeline)
    }

    pub fn validate(&self) -> CliResult<()> {
        self.seed()?;
        self.fractions.validate()?;
        if self.n_labeled == 0 {
            return Err(CliError::usage("n_labeled must be at least 1"));
        }
        if let Some(h) = &self.hyper {
            h.validate(&self.gene_specs)?;
        }
        if let DatasetSource::Synthetic { scene, .. } = &self.dataset {
            scene.validate()?;
        }
        self.pipeline().validate()?;
        self.cotrain.validate()?;
        self.tuner.validate()?;
        for s in &self.gene_specs {
            s.validate()?;
        }
        Ok(())
    }

    /// Builds (or loads) the records and the seeded split.
    pub fn materialize(&self) -> CliResult<(Dataset, DatasetSplit)> {
        let seed = self.seed()?;
        let records = match &self.dataset {
            DatasetSource::Synthetic { scene, variation } => {
                generate_synthetic_dataset(
                    self.n_labeled + self.n_unlabeled,
                    scene,
                    variation,
                    seed,
                )?
                .0
            }
            DatasetSource::Csv { path } => {
                let ann = load_annotations(path)?;
                for w in &ann.warnings {
                    log::warn!("{w}");
                }
                ann.records
            }
        };
        let split = select_and_split(
            &records,
            self.n_labeled,
            self.n_unlabeled,
            self.fractions,
            seed,
        )?;
        let mut ds = Dataset::new(records);
        ds.apply_split(&split);
        Ok((ds, split))
    }
}
