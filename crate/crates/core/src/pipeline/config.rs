//! Experiment configuration.
//!
//! The config is a single JSON document. Loading is strict: unknown keys are
//! hard errors so typos in hyperparameter names cannot pass silently.

use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::errorsynth::{AirwayErrorParams, VesselErrorParams};
use crate::model::NormKind;

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum ErrorMode {
    Airway,
    Vessel,
}

/// Which refinement-training variant to run.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum AblationMode {
    /// Plain refinement on the initial segmentations.
    Lr,
    /// Synthetic errors injected into the initial segmentations.
    LrSynInit,
    /// Synthetic errors injected into the ground truth.
    LrSyn,
    /// Synthetic errors plus the label appearance simulation network.
    LrSynLasn,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentFlags {
    /// Random mirror along each axis.
    pub flip: bool,
    /// Random quarter-turn around a random axis (exact, no interpolation).
    pub rot90: bool,
    /// Random rotations up to 30 degrees per axis (trilinear for the image,
    /// nearest for labels).
    pub rotate: bool,
    /// Random scaling with factor 0.7-1.4 (same interpolation rules).
    pub scale: bool,
}

impl Default for AugmentFlags {
    fn default() -> Self {
        AugmentFlags { flip: true, rot90: false, rotate: false, scale: false }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Dataset directory with one subdirectory per case.
    pub data_dir: PathBuf,
    pub train_cases: Vec<String>,
    pub val_cases: Vec<String>,
    pub test_cases: Vec<String>,
    pub unlabeled_cases: Vec<String>,

    /// Cubic training/inference patch edge length.
    pub patch_size: usize,
    pub base_steps: usize,
    pub lasn_steps: usize,
    pub refine_steps: usize,
    /// Steps between validation passes (0 disables checkpoint selection).
    pub val_interval: usize,
    pub learning_rate: f64,
    /// Identity-loss weight in the appearance-simulation objective.
    pub lambda_identity: f64,
    /// Probability-map binarization threshold.
    pub threshold: f32,
    /// Probability that a refinement sample's label channel comes from the
    /// synthetic side rather than the initial segmentation.
    pub mix_ratio: f64,
    /// If set, the generator objective maximizes log D(x_a); otherwise it
    /// minimizes log(1 - D(x_a)).
    pub non_saturating: bool,

    pub levels: usize,
    pub base_channels: usize,
    pub norm: NormKind,

    pub error_mode: ErrorMode,
    pub airway: AirwayErrorParams,
    pub vessel: VesselErrorParams,
    /// Pre-generated corruption variants per case and stage.
    pub n_syn_variants: usize,

    pub augment: AugmentFlags,
    pub ablation: AblationMode,
    /// Image padding intensity for patches outside the volume.
    pub pad_intensity: f32,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data_dir: PathBuf::from("."),
            train_cases: Vec::new(),
            val_cases: Vec::new(),
            test_cases: Vec::new(),
            unlabeled_cases: Vec::new(),
            patch_size: 32,
            base_steps: 600,
            lasn_steps: 300,
            refine_steps: 600,
            val_interval: 50,
            learning_rate: 1e-2,
            lambda_identity: 0.01,
            threshold: 0.5,
            mix_ratio: 0.5,
            non_saturating: true,
            levels: 3,
            base_channels: 8,
            norm: NormKind::Affine,
            error_mode: ErrorMode::Airway,
            airway: AirwayErrorParams::default(),
            vessel: VesselErrorParams::default(),
            n_syn_variants: 4,
            augment: AugmentFlags::default(),
            ablation: AblationMode::LrSynLasn,
            pad_intensity: 0.35,
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen: BTreeSet<&str> = BTreeSet::new();
        for id in self
            .train_cases
            .iter()
            .chain(&self.val_cases)
            .chain(&self.test_cases)
            .chain(&self.unlabeled_cases)
        {
            if !seen.insert(id.as_str()) {
                return Err(Error::Config(format!("case {id} appears in more than one split")));
            }
        }
        if self.patch_size == 0 || self.patch_size % (1 << (self.levels - 1)) != 0 {
            return Err(Error::Config(format!(
                "patch size {} must be divisible by 2^(levels-1) = {}",
                self.patch_size,
                1 << (self.levels - 1)
            )));
        }
        if self.levels == 0 || self.base_channels == 0 {
            return Err(Error::Config("levels and base_channels must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.mix_ratio) {
            return Err(Error::Config("mix_ratio must be in [0, 1]".into()));
        }
        if self.lambda_identity < 0.0 {
            return Err(Error::Config("lambda_identity must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config("threshold must be in [0, 1]".into()));
        }
        let rates = [
            self.airway.max_rate_terminal,
            self.airway.max_rate_discontinuity,
            self.vessel.max_rate,
        ];
        if rates.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::Config("max error rates must be in [0, 1]".into()));
        }
        if self.n_syn_variants == 0 {
            return Err(Error::Config("n_syn_variants must be at least 1".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        ExperimentConfig::default().validate().unwrap();
    }

    #[test]
    fn overlapping_splits_are_rejected() {
        let cfg = ExperimentConfig {
            train_cases: vec!["a".into(), "b".into()],
            val_cases: vec!["b".into()],
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn unknown_keys_are_hard_errors() {
        let text = r#"{"patch_size": 32, "no_such_option": 1}"#;
        let parsed: std::result::Result<ExperimentConfig, _> = serde_json::from_str(text);
        assert!(parsed.is_err());
    }

    #[test]
    fn patch_must_match_levels() {
        let cfg = ExperimentConfig { patch_size: 20, levels: 3, ..Default::default() };
        assert!(cfg.validate().is_err());
    }
}
