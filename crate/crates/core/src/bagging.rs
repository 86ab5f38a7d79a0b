//! Vertical bagging: one forest per random feature subset, best three kept.

use std::collections::HashSet;
use std::io::Write;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureTable;
use crate::fusion::confusion_matrix;
use crate::forest::{train_forest, ForestHyperparams, ForestModel};

/// Redraws allowed before a duplicate subset is accepted.
const MAX_REDRAWS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RankingMode {
    /// Out-of-bag accuracy.
    #[default]
    Oob,
    /// Accuracy on the full training set.
    Resubstitution,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaggingConfig {
    /// Features per subset (F).
    pub max_features: usize,
    /// Number of candidate subsets (K).
    pub max_iterations: usize,
    pub ranking_mode: RankingMode,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for BaggingConfig {
    fn default() -> Self {
        Self {
            max_features: 10,
            max_iterations: 100,
            ranking_mode: RankingMode::Oob,
            seed: 0,
        }
    }
}

impl BaggingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_features == 0 {
            return Err(Error::Config("max_features must be positive".into()));
        }
        if self.max_iterations < 3 {
            return Err(Error::Config(format!(
                "max_iterations = {} cannot yield a top three",
                self.max_iterations
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedCandidate {
    pub index: usize,
    pub subset: Vec<String>,
    pub model: ForestModel,
    pub score: f64,
}

/// Draws K subsets of F distinct catalog features (kept in catalog order).
pub fn sample_subsets(catalog: &[String], cfg: &BaggingConfig) -> Result<Vec<Vec<String>>> {
    cfg.validate()?;
    let f = cfg.max_features;
    if catalog.len() < f {
        return Err(Error::Config(format!(
            "catalog has {} features, fewer than max_features = {f}",
            catalog.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut seen: HashSet<Vec<usize>> = HashSet::new();
    let mut subsets = Vec::with_capacity(cfg.max_iterations);
    for k in 0..cfg.max_iterations {
        let mut draw = Vec::new();
        for attempt in 0..=MAX_REDRAWS {
            draw = index::sample(&mut rng, catalog.len(), f).into_vec();
            draw.sort_unstable();
            if !seen.contains(&draw) {
                break;
            }
            if attempt == MAX_REDRAWS {
                log::warn!("subset {k}: still a duplicate after {MAX_REDRAWS} redraws; accepted");
            }
        }
        seen.insert(draw.clone());
        subsets.push(draw.into_iter().map(|i| catalog[i].clone()).collect());
    }
    Ok(subsets)
}

/// Trains candidate `i` on `subsets[i]` with seed `cfg.seed + i`.
pub fn train_candidates(
    table: &FeatureTable,
    subsets: &[Vec<String>],
    hp: &ForestHyperparams,
    cfg: &BaggingConfig,
) -> Result<Vec<RankedCandidate>> {
    subsets
        .par_iter()
        .enumerate()
        .map(|(index, subset)| {
            let annotate = |e: Error| Error::Candidate {
                index,
                source: Box::new(e),
            };
            let projected = table.project(subset).map_err(annotate)?;
            let hp = ForestHyperparams {
                seed: cfg.seed.wrapping_add(index as u64),
                ..*hp
            };
            let model = train_forest(&projected, &hp).map_err(annotate)?;
            let score = match cfg.ranking_mode {
                RankingMode::Oob => model.oob_accuracy,
                RankingMode::Resubstitution => {
                    let cm = confusion_matrix(&model, &projected).map_err(annotate)?;
                    cm.trace() as f64 / cm.total() as f64
                }
            };
            Ok(RankedCandidate {
                index,
                subset: subset.clone(),
                model,
                score,
            })
        })
        .collect()
}

/// Best `count` candidates by score, ties to the lower index.
pub fn select_top(candidates: &[RankedCandidate], count: usize) -> Result<Vec<RankedCandidate>> {
    if candidates.len() < count {
        return Err(Error::Config(format!(
            "{} candidates cannot fill a top {count}",
            candidates.len()
        )));
    }
    let mut order: Vec<&RankedCandidate> = candidates.iter().collect();
    order.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.index.cmp(&b.index)));
    Ok(order.into_iter().take(count).cloned().collect())
}

/// `index,score,features` with features joined by `;`.
pub fn write_candidates_csv<W: Write>(writer: W, candidates: &[RankedCandidate]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let wrap = |e: csv::Error| Error::io("writing candidates report", std::io::Error::other(e));
    w.write_record(["index", "score", "features"]).map_err(wrap)?;
    for c in candidates {
        w.write_record([c.index.to_string(), c.score.to_string(), c.subset.join(";")])
            .map_err(wrap)?;
    }
    w.flush().map_err(|e| Error::io("writing candidates report", e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forest::{Node, Tree};
    use crate::fusion::ConfusionMatrix;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("f{i:02}")).collect()
    }

    fn cfg(f: usize, k: usize) -> BaggingConfig {
        BaggingConfig {
            max_features: f,
            max_iterations: k,
            seed: 11,
            ..Default::default()
        }
    }

    #[test]
    fn forced_full_catalog() {
        let cat = names(10);
        let subsets = sample_subsets(&cat, &cfg(10, 5)).unwrap();
        assert_eq!(subsets.len(), 5);
        assert!(subsets.iter().all(|s| *s == cat));
    }

    #[test]
    fn subsets_are_deterministic_and_distinct_members() {
        let cat = names(15);
        let a = sample_subsets(&cat, &cfg(10, 100)).unwrap();
        let b = sample_subsets(&cat, &cfg(10, 100)).unwrap();
        assert_eq!(a, b);
        for s in &a {
            let uniq: HashSet<_> = s.iter().collect();
            assert_eq!(uniq.len(), 10);
            assert!(s.iter().all(|n| cat.contains(n)));
        }
        let uniq: HashSet<_> = a.iter().collect();
        assert_eq!(uniq.len(), 100, "C(15,10) = 3003 leaves room for 100 distinct draws");
    }

    #[test]
    fn config_errors() {
        assert!(matches!(sample_subsets(&names(5), &cfg(10, 5)), Err(Error::Config(_))));
        assert!(matches!(sample_subsets(&names(15), &cfg(10, 2)), Err(Error::Config(_))));
    }

    fn cand(index: usize, score: f64) -> RankedCandidate {
        RankedCandidate {
            index,
            subset: vec![],
            model: ForestModel {
                feature_names: vec![],
                n_classes: 2,
                trees: vec![Tree {
                    nodes: vec![Node::Leaf {
                        distribution: vec![1.0, 0.0],
                    }],
                }],
                oob_accuracy: score,
                oob_confusion: ConfusionMatrix::zeros(2),
                seed: 0,
            },
            score,
        }
    }

    fn top_indices(scores: &[f64], count: usize) -> Result<Vec<usize>> {
        let c: Vec<_> = scores.iter().enumerate().map(|(i, &s)| cand(i, s)).collect();
        Ok(select_top(&c, count)?.iter().map(|c| c.index).collect())
    }

    #[test]
    fn top_three_ordering() {
        assert_eq!(top_indices(&[0.6, 0.9, 0.7], 3).unwrap(), vec![1, 2, 0]);
        assert_eq!(top_indices(&[0.8, 0.8, 0.5, 0.8], 3).unwrap(), vec![0, 1, 3]);
        assert!(matches!(top_indices(&[0.8, 0.8], 3), Err(Error::Config(_))));
    }
}
