use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureTable;
use crate::forest::{label_of, ForestModel};

/// Rows are the true class, columns the predicted class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn zeros(m: usize) -> Self {
        Self {
            counts: vec![vec![0; m]; m],
        }
    }

    pub fn n_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.counts.len()).map(|i| self.counts[i][i]).sum()
    }
}

/// Row-normalised confusion matrix; the diagonal holds the initial
/// per-class densities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityMatrix {
    #[serde(with = "crate::decimal::matrix")]
    pub rates: Vec<Vec<f64>>,
}

impl ProbabilityMatrix {
    pub fn n_classes(&self) -> usize {
        self.rates.len()
    }

    pub fn get(&self, truth: usize, predicted: usize) -> f64 {
        self.rates[truth][predicted]
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.rates.len();
        for (i, row) in self.rates.iter().enumerate() {
            if row.len() != m {
                return Err(Error::Schema(format!("probability matrix row {i} is not length {m}")));
            }
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::Schema(format!("probability matrix row {i} leaves [0, 1]")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::Schema(format!("probability matrix row {i} sums to {s}")));
            }
        }
        Ok(())
    }
}

/// Predictions of `model` on `eval_set` tallied against the true labels.
pub fn confusion_matrix(model: &ForestModel, eval_set: &FeatureTable) -> Result<ConfusionMatrix> {
    if eval_set.is_empty() {
        return Err(Error::Precondition("confusion matrix needs a non-empty evaluation set".into()));
    }
    let labels = eval_set.labels()?;
    let probs = model.predict_table(eval_set)?;
    let mut cm = ConfusionMatrix::zeros(model.n_classes);
    for (truth, p) in labels.iter().zip(&probs) {
        cm.counts[truth.index()][label_of(p).index()] += 1;
    }
    Ok(cm)
}

/// Divides each row by its sum. An all-zero row becomes uniform.
pub fn probability_matrix(cm: &ConfusionMatrix) -> ProbabilityMatrix {
    let m = cm.n_classes();
    let rates = cm
        .counts
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let total: u64 = row.iter().sum();
            if total == 0 {
                log::warn!("confusion row {i} is empty; using a uniform row");
                vec![1.0 / m as f64; m]
            } else {
                row.iter().map(|&c| c as f64 / total as f64).collect()
            }
        })
        .collect();
    ProbabilityMatrix { rates }
}
