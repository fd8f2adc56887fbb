use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use vasculo::biomarkers::FeatureConfig;
use vasculo::prep::{DetectParams, EnhanceParams};
use vasculo::raster::LabelScheme;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeName {
    /// Single-file masks with labels 0..=3.
    Av4,
    /// Single-file vessel masks without artery/vein labels.
    Binary,
}

impl From<SchemeName> for LabelScheme {
    fn from(s: SchemeName) -> Self {
        match s {
            SchemeName::Av4 => LabelScheme::Av4,
            SchemeName::Binary => LabelScheme::Binary,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSettings {
    /// Number of group folds reported in the metrics table.
    pub folds: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self { folds: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Scheme of single-file masks; artery/vein file pairs are always binary.
    pub scheme: SchemeName,
    pub detect: DetectParams,
    pub enhance: EnhanceParams,
    pub features: FeatureConfig,
    pub eval: EvalSettings,
    /// Worker threads; 0 uses every core.
    pub threads: usize,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scheme: SchemeName::Av4,
            detect: DetectParams::default(),
            enhance: EnhanceParams::default(),
            features: FeatureConfig::default(),
            eval: EvalSettings::default(),
            threads: 0,
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let cfg: RunConfig = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?
            }
            None => RunConfig::default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.features.validate()?;
        let e = &self.enhance;
        if !(e.sigma_divisor > 0.0 && e.alpha > 0.0) {
            bail!("enhance.sigma_divisor and enhance.alpha must be positive");
        }
        let d = &self.detect;
        if !(d.min_area_fraction > 0.0 && d.min_area_fraction < 1.0) {
            bail!("detect.min_area_fraction must lie in (0, 1)");
        }
        if !(d.max_residual_fraction > 0.0 && d.min_residual_px > 0.0) {
            bail!("detect residual limits must be positive");
        }
        if self.eval.folds < 2 {
            bail!("eval.folds must be at least 2");
        }
        Ok(())
    }
}
