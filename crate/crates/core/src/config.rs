//! Pipeline configuration, stored as TOML with one section per stage.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bagging::{BaggingConfig, RankingMode};
use crate::error::{Error, Result};
use crate::evaluation::SplitMode;
use crate::features::{FeatureConfig, SelectionConfig, SelectionScope, WindowSpec};
use crate::forest::ForestHyperparams;
use crate::fusion::FusionParams;
use crate::synth::SynthSpec;

/// Where the fusion probability matrices come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatrixSource {
    /// Out-of-bag predictions on the training rows.
    #[default]
    Oob,
    /// Full-model predictions on the training rows.
    Resubstitution,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    pub w1: f64,
    pub w2: f64,
    pub epsilon: f64,
    pub matrices: MatrixSource,
}

impl Default for FusionConfig {
    fn default() -> Self {
        let p = FusionParams::default();
        Self {
            w1: p.w1,
            w2: p.w2,
            epsilon: p.epsilon,
            matrices: MatrixSource::Oob,
        }
    }
}

impl FusionConfig {
    pub fn params(&self) -> FusionParams {
        FusionParams {
            w1: self.w1,
            w2: self.w2,
            epsilon: self.epsilon,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub folds: usize,
    pub split: SplitMode,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            folds: 5,
            split: SplitMode::ByDriver,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Master seed; every stochastic stage derives its seed from it.
    pub seed: u64,
    pub window: WindowSpec,
    pub features: FeatureConfig,
    pub selection: SelectionConfig,
    pub forest: ForestHyperparams,
    pub bagging: BaggingConfig,
    pub fusion: FusionConfig,
    pub evaluation: EvaluationConfig,
    pub synth: SynthSpec,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            window: WindowSpec::default(),
            features: FeatureConfig::default(),
            selection: SelectionConfig::default(),
            forest: ForestHyperparams::default(),
            bagging: BaggingConfig::default(),
            fusion: FusionConfig::default(),
            evaluation: EvaluationConfig::default(),
            synth: SynthSpec::default(),
        }
    }
}

/// Seed streams carved out of the master seed.
pub mod streams {
    pub const SYNTH: u64 = 1;
    pub const FOLDS: u64 = 2;
    pub const TRAIN: u64 = 3;
    pub const FOLD_BAGGING: u64 = 100;
    pub const FOLD_BASELINE: u64 = 200;
}

/// SplitMix64 finaliser.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, stream: u64) -> u64 {
    mix(master ^ mix(stream))
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.window.validate()?;
        self.features.validate()?;
        self.selection.validate()?;
        self.forest.validate(0)?;
        self.bagging.validate()?;
        self.fusion.params().validate()?;
        if self.evaluation.folds < 2 {
            return Err(Error::Config("evaluation needs at least 2 folds".into()));
        }
        self.synth.validate(self.window.length_s)?;
        Ok(())
    }

    /// Resubstitution ranking and matrices, global selection, window split.
    pub fn apply_fidelity_paper(&mut self) {
        self.bagging.ranking_mode = RankingMode::Resubstitution;
        self.fusion.matrices = MatrixSource::Resubstitution;
        self.selection.scope = SelectionScope::Global;
        self.evaluation.split = SplitMode::ByWindow;
    }

    pub fn seed_for(&self, stream: u64) -> u64 {
        derive_seed(self.seed, stream)
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: PipelineConfig =
            toml::from_str(s).map_err(|e| Error::Config(e.to_string().trim().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("reading {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
            .map_err(|e| Error::Config(format!("{}: {}", path.display(), strip_prefix(&e))))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_toml_string()?)
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }
}

fn strip_prefix(e: &Error) -> String {
    match e {
        Error::Config(m) => m.clone(),
        other => other.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = PipelineConfig::default();
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(PipelineConfig::from_toml_str(&text).unwrap(), cfg);
        assert!(text.contains("[bagging]"));
        assert!(text.contains("ranking_mode = \"oob\""));
    }

    #[test]
    fn non_default_round_trip() {
        let mut cfg = PipelineConfig::default();
        cfg.apply_fidelity_paper();
        cfg.forest.max_depth = Some(7);
        cfg.window.length_s = 512;
        cfg.seed = i64::MAX as u64;
        cfg.synth.channels.speed.level_offset = -0.123456789012345;
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(PipelineConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn partial_file_takes_defaults() {
        let cfg = PipelineConfig::from_toml_str("seed = 7\n[bagging]\nmax_features = 5\nmax_iterations = 10\nranking_mode = \"resubstitution\"\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.bagging.max_features, 5);
        assert_eq!(cfg.fusion, FusionConfig::default());
        let sparse = PipelineConfig::from_toml_str("[bagging]\nmax_features = 4\n[synth]\ndrivers_per_class = 3\n").unwrap();
        assert_eq!(sparse.bagging.max_iterations, BaggingConfig::default().max_iterations);
        assert_eq!(sparse.synth.trip_duration_s, SynthSpec::default().trip_duration_s);
    }

    #[test]
    fn invalid_values_are_config_errors() {
        for text in [
            "[bagging]\nmax_features = 10\nmax_iterations = 2\nranking_mode = \"oob\"\n",
            "[fusion]\nw1 = 0.0\nw2 = 0.6\nepsilon = 0.0001\nmatrices = \"oob\"\n",
            "unknown_key = 1\n",
            "[window]\nlength_s = 1\nstride_s = 1\n",
        ] {
            assert!(matches!(PipelineConfig::from_toml_str(text), Err(Error::Config(_))), "{text}");
        }
    }

    #[test]
    fn derived_seeds_differ_by_stream() {
        let a = derive_seed(42, streams::FOLDS);
        assert_ne!(a, derive_seed(42, streams::TRAIN));
        assert_ne!(a, derive_seed(43, streams::FOLDS));
        assert_eq!(a, derive_seed(42, streams::FOLDS));
    }
}
