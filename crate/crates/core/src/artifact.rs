//! Persisted fusion model: a self-describing JSON document.
//!
//! Every real number is written as a shortest round-trip decimal string, so
//! a reloaded model reproduces its predictions bit-for-bit. A probe row and
//! its fused prediction are stored alongside and re-checked on load.

use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::features::{write_feature_csv, FeatureTable};
use crate::forest::ForestModel;
use crate::fusion::{FusionEnsemble, FusionOutcome, FusionParams, ProbabilityMatrix};
use crate::pipeline::FittedEnsemble;
use crate::telemetry::BinaryLabel;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArtifactMember {
    /// Position of this forest among the trained candidates.
    pub candidate_index: usize,
    #[serde(with = "crate::decimal")]
    pub score: f64,
    pub subset: Vec<String>,
    pub probability_matrix: ProbabilityMatrix,
    pub forest: ForestModel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoredFusionParams {
    #[serde(with = "crate::decimal")]
    pub w1: f64,
    #[serde(with = "crate::decimal")]
    pub w2: f64,
    #[serde(with = "crate::decimal")]
    pub epsilon: f64,
}

impl From<FusionParams> for StoredFusionParams {
    fn from(p: FusionParams) -> Self {
        Self {
            w1: p.w1,
            w2: p.w2,
            epsilon: p.epsilon,
        }
    }
}

impl From<StoredFusionParams> for FusionParams {
    fn from(p: StoredFusionParams) -> Self {
        Self {
            w1: p.w1,
            w2: p.w2,
            epsilon: p.epsilon,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub seed: u64,
    /// SHA-256 of the training table in feature-CSV form.
    pub dataset_digest: String,
    pub n_rows: usize,
}

/// One input row and the prediction it produced at save time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Probe {
    /// In catalog order.
    #[serde(with = "crate::decimal::vec")]
    pub values: Vec<f64>,
    pub label: BinaryLabel,
    #[serde(with = "crate::decimal")]
    pub score: f64,
    #[serde(with = "crate::decimal::vec")]
    pub integrals: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelArtifact {
    pub format_version: u32,
    /// The pipeline configuration in its TOML file form.
    pub config: String,
    pub catalog: Vec<String>,
    /// Point-biserial r of the catalog features on the training rows.
    pub correlations: IndexMap<String, String>,
    pub fusion: StoredFusionParams,
    pub members: Vec<ArtifactMember>,
    pub provenance: Provenance,
    pub probe: Probe,
}

/// Hex SHA-256 of `table` serialized as a feature CSV.
pub fn dataset_digest(table: &FeatureTable) -> Result<String> {
    let mut buf = Vec::new();
    write_feature_csv(&mut buf, table)?;
    Ok(hex::encode(Sha256::digest(&buf)))
}

/// Fuses one row given in `catalog` order.
pub fn predict_catalog_values(
    ensemble: &FusionEnsemble,
    catalog: &[String],
    values: &[f64],
) -> Result<FusionOutcome> {
    if values.len() != catalog.len() {
        return Err(Error::Schema(format!(
            "expected {} feature values, got {}",
            catalog.len(),
            values.len()
        )));
    }
    let row: IndexMap<String, f64> = catalog.iter().cloned().zip(values.iter().copied()).collect();
    ensemble.predict(&row)
}

impl ModelArtifact {
    pub fn build(
        fitted: &FittedEnsemble,
        cfg: &PipelineConfig,
        seed: u64,
        train: &FeatureTable,
    ) -> Result<Self> {
        let first = train
            .rows
            .first()
            .ok_or_else(|| Error::EmptyInput("training table has no rows".into()))?;
        let values = fitted
            .catalog
            .iter()
            .map(|name| Ok(first.values[train.column_index(name)?]))
            .collect::<Result<Vec<_>>>()?;
        let outcome = predict_catalog_values(&fitted.ensemble, &fitted.catalog, &values)?;
        let members = fitted
            .top
            .iter()
            .zip(&fitted.ensemble.prob_matrices)
            .map(|(c, pm)| ArtifactMember {
                candidate_index: c.index,
                score: c.score,
                subset: c.subset.clone(),
                probability_matrix: pm.clone(),
                forest: c.model.clone(),
            })
            .collect();
        let correlations = fitted
            .catalog
            .iter()
            .filter_map(|n| {
                fitted
                    .selection
                    .correlations
                    .get(n)
                    .map(|r| (n.clone(), crate::decimal::to_string(*r)))
            })
            .collect();
        Ok(Self {
            format_version: FORMAT_VERSION,
            config: cfg.to_toml_string()?,
            catalog: fitted.catalog.clone(),
            correlations,
            fusion: fitted.ensemble.params.into(),
            members,
            provenance: Provenance {
                seed,
                dataset_digest: dataset_digest(train)?,
                n_rows: train.len(),
            },
            probe: Probe {
                values,
                label: outcome.label,
                score: outcome.score,
                integrals: outcome.integrals,
            },
        })
    }

    pub fn config(&self) -> Result<PipelineConfig> {
        PipelineConfig::from_toml_str(&self.config)
    }

    pub fn ensemble(&self) -> Result<FusionEnsemble> {
        FusionEnsemble::new(
            self.members.iter().map(|m| m.forest.clone()).collect(),
            self.members.iter().map(|m| m.probability_matrix.clone()).collect(),
            self.fusion.into(),
        )
    }

    /// Checks structure and that the probe prediction reproduces exactly.
    pub fn verify(&self, ensemble: &FusionEnsemble) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Schema(format!(
                "unsupported format_version {} (expected {FORMAT_VERSION})",
                self.format_version
            )));
        }
        for m in &self.members {
            if let Some(f) = m.forest.feature_names.iter().find(|f| !self.catalog.contains(f)) {
                return Err(Error::Schema(format!(
                    "member {} uses `{f}`, which is not in the catalog",
                    m.candidate_index
                )));
            }
        }
        let got = predict_catalog_values(ensemble, &self.catalog, &self.probe.values)?;
        let same = got.label == self.probe.label
            && got.score.to_bits() == self.probe.score.to_bits()
            && got.integrals.len() == self.probe.integrals.len()
            && got
                .integrals
                .iter()
                .zip(&self.probe.integrals)
                .all(|(a, b)| a.to_bits() == b.to_bits());
        if !same {
            return Err(Error::Numeric(format!(
                "probe mismatch after reload: stored score {}, recomputed {}",
                self.probe.score, got.score
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// Parses and verifies; returns the artifact with its ready ensemble.
    pub fn from_json(text: &str) -> Result<(Self, FusionEnsemble)> {
        let artifact: ModelArtifact = serde_json::from_str(text)?;
        artifact.config()?;
        let ensemble = artifact.ensemble()?;
        artifact.verify(&ensemble)?;
        Ok((artifact, ensemble))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?)
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, FusionEnsemble)> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Schema(m) => Error::Schema(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}
