use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use skiplab::data::{cross_polytope_dataset, load_dataset, sphere_dataset, Dataset, TargetSpec};
use skiplab::landscape::ProbeConfig;
use skiplab::resnetlab::{ResNetMode, DEFAULT_PATH_LAMBDA};
use skiplab::trainer::TrainConfig;
use skiplab::{ActivationKind, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "skipnet")]
    SkipNet,
    #[serde(rename = "rf")]
    Rf,
    #[serde(rename = "resnet")]
    ResNet,
    #[serde(rename = "resnet-frozenV")]
    ResNetFrozenV,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    /// A CSV written by `save_dataset`; relative paths resolve against the
    /// directory holding the config file.
    File { path: PathBuf },
    Sphere { n: usize, target: TargetSpec, seed: u64 },
    CrossPolytope {
        target: TargetSpec,
        #[serde(default)]
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResNetSection {
    pub mode: ResNetMode,
    #[serde(default)]
    pub lambda: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    Forward,
    Backward,
    Gradient,
    Certified,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySection {
    #[serde(default)]
    pub probe: ProbeConfig,
    #[serde(default = "default_checks")]
    pub checks: Vec<CheckKind>,
}

fn default_checks() -> Vec<CheckKind> {
    vec![CheckKind::Forward, CheckKind::Backward, CheckKind::Gradient]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoupleSection {
    /// Depths to run; defaults to the model depth.
    #[serde(default)]
    pub depths: Vec<usize>,
    #[serde(default = "default_n_test")]
    pub n_test: usize,
    #[serde(default)]
    pub test_seed: u64,
    /// Initialization seed of the random-feature partner; must equal `seed`.
    #[serde(default)]
    pub rf_seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub depths: Vec<usize>,
    pub seeds: Vec<u64>,
    #[serde(default = "default_n_test")]
    pub n_test: usize,
    #[serde(default)]
    pub test_seed: u64,
}

fn default_n_test() -> usize {
    1000
}

/// One JSON document describing a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    pub model: ModelKind,
    pub d: usize,
    pub m: usize,
    pub depth: usize,
    pub seed: u64,
    #[serde(default)]
    pub activation: ActivationKind,
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resnet: Option<ResNetSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verify: Option<VerifySection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub couple: Option<CoupleSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
}

impl RunConfig {
    /// Parses a config file, applies the seed override and makes a dataset
    /// path absolute so that the canonical copy is self-contained.
    pub fn load(path: &Path, seed_override: Option<u64>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg: RunConfig = serde_json::from_str(&text)?;
        if let Some(k) = seed_override {
            cfg.seed = k;
        }
        cfg.train.seed = cfg.seed;
        if let DatasetSpec::File { path: p } = &mut cfg.dataset {
            if p.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                *p = base.join(&*p);
            }
            *p = std::fs::canonicalize(&*p)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) || self.name.starts_with('.') {
            return Err(Error::Input(format!("invalid run name {:?}", self.name)));
        }
        if self.d == 0 || self.m == 0 || self.depth < 2 {
            return Err(Error::Dimension(format!("need d, m >= 1 and depth >= 2 (d={}, m={}, L={})", self.d, self.m, self.depth)));
        }
        self.train.validate()?;
        match (self.model, &self.resnet) {
            (ModelKind::ResNet, Some(r)) if r.mode == ResNetMode::FrozenVGd => {
                return Err(Error::Input("model resnet cannot use mode frozen-V-gd; use resnet-frozenV".into()));
            }
            (ModelKind::ResNetFrozenV, Some(r)) if r.mode != ResNetMode::FrozenVGd => {
                return Err(Error::Input("model resnet-frozenV only supports mode frozen-V-gd".into()));
            }
            (ModelKind::SkipNet | ModelKind::Rf, Some(_)) => {
                return Err(Error::Input("resnet section given for a non-ResNet model".into()));
            }
            _ => {}
        }
        Ok(())
    }

    pub fn resnet_mode(&self) -> (ResNetMode, f64) {
        match (self.model, &self.resnet) {
            (ModelKind::ResNetFrozenV, _) => (ResNetMode::FrozenVGd, 0.0),
            (_, Some(r)) if r.mode == ResNetMode::PathnormAdam => (r.mode, r.lambda.unwrap_or(DEFAULT_PATH_LAMBDA)),
            _ => (ResNetMode::PlainGd, 0.0),
        }
    }

    pub fn build_dataset(&self) -> Result<Dataset> {
        let ds = match &self.dataset {
            DatasetSpec::File { path } => load_dataset(path)?,
            DatasetSpec::Sphere { n, target, seed } => sphere_dataset(self.d, *n, target.clone(), *seed)?,
            DatasetSpec::CrossPolytope { target, seed } => cross_polytope_dataset(self.d, target.clone(), *seed)?,
        };
        if ds.d != self.d {
            return Err(Error::Dimension(format!("dataset has d = {}, config has d = {}", ds.d, self.d)));
        }
        Ok(ds)
    }

    pub fn canonical_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}
