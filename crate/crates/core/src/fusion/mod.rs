//! Adaptive fuzzy-density fusion of classifier outputs.
//!
//! Each classifier's initial density for class `j` is its historical hit
//! rate on `j` (diagonal of its probability matrix). Per sample, densities
//! are lowered for classifiers that disagree with the others (`δ`) and for
//! classifiers that historically err more than the others on the contested
//! confusion cell (`γ`). The adjusted densities define one λ-measure per
//! class; the Choquet integral of the class-`j` supports under that measure
//! is the ensemble's support for `j`.

mod matrices;
mod measure;

pub use matrices::{confusion_matrix, probability_matrix, ConfusionMatrix, ProbabilityMatrix};
pub use measure::{choquet_integral, lambda_residual, solve_lambda, FuzzyMeasure, RESIDUAL_TOL};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureTable;
use crate::forest::{argmax, FeatureSource, ForestModel};
use crate::telemetry::BinaryLabel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionParams {
    /// Exponent on the product of `δ` factors.
    pub w1: f64,
    /// Exponent on the product of `γ` factors.
    pub w2: f64,
    /// Floor for `δ`/`γ` and clamp margin for densities.
    pub epsilon: f64,
}

impl Default for FusionParams {
    fn default() -> Self {
        Self {
            w1: 0.9,
            w2: 0.6,
            epsilon: 0.0001,
        }
    }
}

impl FusionParams {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("w1", self.w1), ("w2", self.w2)] {
            if !(w > 0.0 && w <= 1.0) {
                return Err(Error::Config(format!("{name} = {w} must lie in (0, 1]")));
            }
        }
        if !(self.epsilon > 0.0 && self.epsilon < 0.01) {
            return Err(Error::Config(format!(
                "epsilon = {} must lie in (0, 0.01)",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// Disagreement factor of classifier `i` against a classifier that
/// predicted `claimed`, for class `j`.
fn delta(pm_i: &ProbabilityMatrix, j: usize, claimed: usize, eps: f64) -> f64 {
    let hit = pm_i.get(j, j);
    if hit == 0.0 {
        return eps;
    }
    ((hit - pm_i.get(j, claimed)) / hit).clamp(eps, 1.0)
}

/// Relative-error factor on the confusion cell `(j, claimed)`.
fn gamma(pm_i: &ProbabilityMatrix, pm_m: &ProbabilityMatrix, j: usize, claimed: usize, eps: f64) -> f64 {
    let e_i = pm_i.get(j, claimed);
    let e_m = pm_m.get(j, claimed);
    if e_i <= e_m {
        1.0
    } else if e_m > 0.0 {
        e_m / e_i
    } else {
        eps
    }
}

/// Per-classifier densities for class `j` given each classifier's
/// predicted class on the current sample. Results lie in `[ε, 1−ε]`.
pub fn adaptive_densities(
    prob_matrices: &[ProbabilityMatrix],
    predicted: &[usize],
    j: usize,
    params: &FusionParams,
) -> Vec<f64> {
    let eps = params.epsilon;
    (0..prob_matrices.len())
        .map(|i| {
            let pm_i = &prob_matrices[i];
            let mut delta_prod = 1.0;
            let mut gamma_prod = 1.0;
            for m in (0..prob_matrices.len()).filter(|&m| m != i) {
                if predicted[i] == predicted[m] {
                    continue;
                }
                delta_prod *= delta(pm_i, j, predicted[m], eps);
                gamma_prod *= gamma(pm_i, &prob_matrices[m], j, predicted[m], eps);
            }
            let g = pm_i.get(j, j) * delta_prod.powf(params.w1) * gamma_prod.powf(params.w2);
            g.clamp(eps, 1.0 - eps)
        })
        .collect()
}

/// Everything computed while fusing one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionOutcome {
    pub label: BinaryLabel,
    /// Choquet integral per class.
    pub integrals: Vec<f64>,
    /// `C₁ / (C₀ + C₁)`, or 0.5 when both are zero.
    pub score: f64,
    /// Argmax of each classifier's probability vector.
    pub predicted: Vec<BinaryLabel>,
    /// Adaptive densities, indexed `[class][classifier]`.
    pub densities: Vec<Vec<f64>>,
    pub lambdas: Vec<f64>,
}

fn check_support(h: &[f64], m: usize, i: usize) -> Result<()> {
    if h.len() != m {
        return Err(Error::Domain(format!(
            "classifier {i}: probability vector has {} entries, expected {m}",
            h.len()
        )));
    }
    if h.iter().any(|p| !p.is_finite() || *p < -1e-12 || *p > 1.0 + 1e-12) {
        return Err(Error::Domain(format!("classifier {i}: probabilities {h:?} leave [0, 1]")));
    }
    let s: f64 = h.iter().sum();
    if (s - 1.0).abs() > 1e-6 {
        return Err(Error::Domain(format!("classifier {i}: probabilities sum to {s}")));
    }
    Ok(())
}

/// Fuses per-classifier probability vectors `probs` (one per matrix).
pub fn fuse(
    prob_matrices: &[ProbabilityMatrix],
    probs: &[Vec<f64>],
    params: &FusionParams,
) -> Result<FusionOutcome> {
    let p = prob_matrices.len();
    if p < 2 || probs.len() != p {
        return Err(Error::Domain(format!(
            "need one probability vector per classifier (>= 2), got {} for {p}",
            probs.len()
        )));
    }
    let m = prob_matrices[0].n_classes();
    if m != 2 {
        return Err(Error::Domain(format!("binary fusion only, got {m} classes")));
    }
    for (i, h) in probs.iter().enumerate() {
        check_support(h, m, i)?;
    }
    let predicted: Vec<usize> = probs.iter().map(|h| argmax(h)).collect();

    let mut integrals = Vec::with_capacity(m);
    let mut densities = Vec::with_capacity(m);
    let mut lambdas = Vec::with_capacity(m);
    for j in 0..m {
        let g = adaptive_densities(prob_matrices, &predicted, j, params);
        let measure = FuzzyMeasure::new(g.clone())?;
        let column: Vec<f64> = probs.iter().map(|h| h[j].clamp(0.0, 1.0)).collect();
        integrals.push(choquet_integral(&column, &measure)?);
        lambdas.push(measure.lambda());
        densities.push(g);
    }
    let label = BinaryLabel::from_index(argmax(&integrals)).expect("binary");
    let total = integrals[0] + integrals[1];
    let score = if total == 0.0 { 0.5 } else { integrals[1] / total };
    Ok(FusionOutcome {
        label,
        integrals,
        score,
        predicted: predicted
            .into_iter()
            .map(|c| BinaryLabel::from_index(c).expect("binary"))
            .collect(),
        densities,
        lambdas,
    })
}

pub const ENSEMBLE_SIZE: usize = 3;

/// The selected forests with the probability matrices that weight them.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionEnsemble {
    pub models: Vec<ForestModel>,
    pub prob_matrices: Vec<ProbabilityMatrix>,
    pub params: FusionParams,
}

impl FusionEnsemble {
    pub fn new(
        models: Vec<ForestModel>,
        prob_matrices: Vec<ProbabilityMatrix>,
        params: FusionParams,
    ) -> Result<Self> {
        if models.len() != ENSEMBLE_SIZE || prob_matrices.len() != ENSEMBLE_SIZE {
            return Err(Error::Config(format!(
                "ensemble needs exactly {ENSEMBLE_SIZE} models and matrices, got {} and {}",
                models.len(),
                prob_matrices.len()
            )));
        }
        params.validate()?;
        for pm in &prob_matrices {
            pm.validate()?;
        }
        Ok(Self {
            models,
            prob_matrices,
            params,
        })
    }

    pub fn fuse_predict(&self, probs: &[Vec<f64>]) -> Result<FusionOutcome> {
        fuse(&self.prob_matrices, probs, &self.params)
    }

    pub fn predict(&self, x: &impl FeatureSource) -> Result<FusionOutcome> {
        let probs = self
            .models
            .iter()
            .map(|m| m.predict_proba(x))
            .collect::<Result<Vec<_>>>()?;
        self.fuse_predict(&probs)
    }

    /// Fused outcome plus each member's probability vectors, for every row.
    pub fn predict_table(&self, table: &FeatureTable) -> Result<Vec<(FusionOutcome, Vec<Vec<f64>>)>> {
        let per_model = self
            .models
            .iter()
            .map(|m| m.predict_table(table))
            .collect::<Result<Vec<_>>>()?;
        (0..table.len())
            .map(|r| {
                let probs: Vec<Vec<f64>> = per_model.iter().map(|p| p[r].clone()).collect();
                Ok((self.fuse_predict(&probs)?, probs))
            })
            .collect()
    }
}
