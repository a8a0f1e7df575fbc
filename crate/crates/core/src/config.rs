//! The single versioned configuration file that drives every subcommand.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::AugmentPolicy;
use crate::dataset::{ValidationPolicy, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::frontend::FrameSpec;
use crate::inference::FusionMode;
use crate::model::ModelConfig;
use crate::stats::TTestKind;
use crate::train::TrainConfig;
use crate::warp::{WarpConfig, WarpGrid};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Corpus root with one directory per keyword.
    pub root: Option<PathBuf>,
    /// Split manifest written by `fetch-manifest`.
    pub manifest: Option<PathBuf>,
    pub validation_policy: ValidationPolicy,
    /// Background noise recordings; defaults to `<root>/_background_noise_`.
    pub noise_dir: Option<PathBuf>,
    /// Drop unreadable files instead of failing.
    pub skip_bad: bool,
    pub target_samples: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            root: None,
            manifest: None,
            validation_policy: ValidationPolicy::Exclude,
            noise_dir: None,
            skip_bad: false,
            target_samples: SAMPLE_RATE as usize,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WarpSection {
    pub f0_hz: f64,
    pub fm_fraction_of_nyquist: f64,
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub alpha_step: f64,
}

impl Default for WarpSection {
    fn default() -> Self {
        WarpSection {
            f0_hz: 20.0,
            fm_fraction_of_nyquist: 0.85,
            alpha_min: 0.80,
            alpha_max: 1.20,
            alpha_step: 0.02,
        }
    }
}

impl WarpSection {
    pub fn warp_config(&self, sample_rate: u32) -> Result<WarpConfig> {
        let cfg = WarpConfig::from_fraction(self.f0_hz, self.fm_fraction_of_nyquist, sample_rate)?;
        cfg.check_nyquist(sample_rate)?;
        Ok(cfg)
    }

    pub fn grid(&self) -> Result<WarpGrid> {
        WarpGrid::from_range(self.alpha_min, self.alpha_max, self.alpha_step)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub fusion: FusionMode,
    pub ttest: TTestKind,
    pub significance_level: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            fusion: FusionMode::Posterior,
            ttest: TTestKind::Student,
            significance_level: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub cache_dir: PathBuf,
    pub runs_dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            cache_dir: "cache".into(),
            runs_dir: "runs".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolkitConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub frontend: FrameSpec,
    #[serde(default)]
    pub warp: WarpSection,
    #[serde(default)]
    pub augment: AugmentPolicy,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub output: OutputConfig,
}

impl Default for ToolkitConfig {
    fn default() -> Self {
        ToolkitConfig {
            schema_version: SCHEMA_VERSION,
            data: DataConfig::default(),
            frontend: FrameSpec::default(),
            warp: WarpSection::default(),
            augment: AugmentPolicy::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            eval: EvalSection::default(),
            output: OutputConfig::default(),
        }
    }
}

impl ToolkitConfig {
    /// Parse and validate. Structural problems (unknown keys, wrong types,
    /// wrong schema version) are `Error::Schema`; bad values are `Error::Config`.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ToolkitConfig = serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(Error::Schema(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                cfg.schema_version
            )));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Schema(m) => Error::Schema(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.frontend.validate()?;
        self.warp.warp_config(self.frontend.sample_rate)?;
        self.warp.grid()?;
        self.augment.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        if !(self.eval.significance_level > 0.0 && self.eval.significance_level < 1.0) {
            return Err(Error::Config("significance level must be in (0, 1)".into()));
        }
        Ok(())
    }
}
