//! Run configuration: a TOML file with one section per concern. Unknown keys
//! are rejected; `prdl --dump-config` prints every default.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{format_err, Result};
use crate::fitting::{FitConfig, LossWeights};
use crate::gradcheck::GradCheckConfig;
use crate::ingest::Preprocess;
use crate::model::Camera;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnnotateConfig {
    /// Nearest vertices each target pixel votes for.
    pub k: usize,
    pub visibility_slack: f64,
    /// Camera the annotation label map was rendered with; falls back to the
    /// run camera.
    pub camera: Option<Camera>,
}

impl Default for AnnotateConfig {
    fn default() -> Self {
        AnnotateConfig {
            k: 1,
            visibility_slack: 0.5,
            camera: None,
        }
    }
}

/// Input and output locations. Relative paths are resolved against the
/// directory of the config file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub model: Option<PathBuf>,
    pub label_map: Option<PathBuf>,
    pub landmarks: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Worker threads for batch commands.
    pub jobs: usize,
    /// Missing means the toy camera for the label-map size.
    pub camera: Option<Camera>,
    pub weights: LossWeights,
    pub fit: FitConfig,
    pub preprocess: Preprocess,
    pub annotate: AnnotateConfig,
    pub grad_check: GradCheckConfig,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            jobs: 1,
            camera: None,
            weights: LossWeights::standard(),
            fit: FitConfig::default(),
            preprocess: Preprocess::default(),
            annotate: AnnotateConfig::default(),
            grad_check: GradCheckConfig::default(),
            paths: Paths::default(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| format_err(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file and resolves its relative paths.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::parse(&std::fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let p = &mut cfg.paths;
        for x in [&mut p.model, &mut p.label_map, &mut p.landmarks, &mut p.manifest, &mut p.out].into_iter().flatten() {
            if x.is_relative() {
                *x = base.join(&*x);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable")
    }

    pub fn validate(&self) -> Result<()> {
        if self.jobs == 0 {
            return Err(crate::error::invalid("jobs must be at least 1"));
        }
        if let Some(c) = &self.camera {
            c.validate()?;
        }
        if let Some(c) = &self.annotate.camera {
            c.validate()?;
        }
        if self.annotate.k == 0 {
            return Err(crate::error::invalid("annotate.k must be at least 1"));
        }
        self.weights.validate()?;
        self.fit.validate()
    }
}
