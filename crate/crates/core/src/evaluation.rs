//! Cross-validation, accuracy and rank-based AUC.

use std::fmt::Write as _;
use std::io::Write;

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{streams, PipelineConfig};
use crate::error::{Error, Result};
use crate::features::{select_features, FeatureTable, SelectionReport, SelectionScope};
use crate::forest::{label_of, train_forest, ForestHyperparams};
use crate::pipeline::{fit_ensemble, FittedEnsemble};
use crate::telemetry::BinaryLabel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitMode {
    /// All windows of a driver share a fold.
    #[default]
    ByDriver,
    ByWindow,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldPlan {
    pub k: usize,
    /// Group key (driver id, or `#<row>` per window) → fold.
    pub assignment: IndexMap<String, usize>,
    pub split_mode: SplitMode,
    pub seed: u64,
}

impl FoldPlan {
    fn key(&self, table: &FeatureTable, row: usize) -> String {
        match self.split_mode {
            SplitMode::ByDriver => table.rows[row].driver_id.clone(),
            SplitMode::ByWindow => format!("#{row}"),
        }
    }

    /// Fold of every row of `table`.
    pub fn row_folds(&self, table: &FeatureTable) -> Result<Vec<usize>> {
        (0..table.len())
            .map(|r| {
                let key = self.key(table, r);
                self.assignment
                    .get(&key)
                    .copied()
                    .ok_or_else(|| Error::Precondition(format!("row {r} (`{key}`) has no fold")))
            })
            .collect()
    }
}

/// Shuffles the groups with `seed` and deals them round-robin into `k` folds.
pub fn make_folds(table: &FeatureTable, k: usize, split_mode: SplitMode, seed: u64) -> Result<FoldPlan> {
    if table.is_empty() {
        return Err(Error::Precondition("cannot fold an empty dataset".into()));
    }
    if k < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {k}")));
    }
    let mut groups: Vec<String> = match split_mode {
        SplitMode::ByDriver => {
            let mut d: Vec<String> = table.rows.iter().map(|r| r.driver_id.clone()).collect();
            d.sort();
            d.dedup();
            d
        }
        SplitMode::ByWindow => (0..table.len()).map(|r| format!("#{r}")).collect(),
    };
    if groups.len() < k {
        return Err(Error::Precondition(format!(
            "{} groups cannot fill {k} folds",
            groups.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    groups.shuffle(&mut rng);
    let assignment = groups
        .into_iter()
        .enumerate()
        .map(|(i, g)| (g, i % k))
        .collect();
    Ok(FoldPlan {
        k,
        assignment,
        split_mode,
        seed,
    })
}

pub fn accuracy_score(truth: &[BinaryLabel], predicted: &[BinaryLabel]) -> Result<f64> {
    if truth.len() != predicted.len() {
        return Err(Error::Precondition(format!(
            "{} labels vs {} predictions",
            truth.len(),
            predicted.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::Precondition("accuracy of an empty set".into()));
    }
    let hits = truth.iter().zip(predicted).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / truth.len() as f64)
}

/// Mann-Whitney AUC with `Class1` as positive: the chance a random positive
/// outscores a random negative, ties counting one half.
pub fn auc_score(truth: &[BinaryLabel], scores: &[f64]) -> Result<f64> {
    if truth.len() != scores.len() {
        return Err(Error::Precondition(format!(
            "{} labels vs {} scores",
            truth.len(),
            scores.len()
        )));
    }
    let n_pos = truth.iter().filter(|l| **l == BinaryLabel::Class1).count();
    let n_neg = truth.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Undefined("AUC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // average 1-based ranks over tie groups
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        let pos_in_group = order[i..=j]
            .iter()
            .filter(|&&r| truth[r] == BinaryLabel::Class1)
            .count();
        rank_sum_pos += avg_rank * pos_in_group as f64;
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldMetrics {
    pub accuracy: f64,
    pub auc: f64,
}

/// Per-model, per-fold accuracy and AUC.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub k: usize,
    /// model name → one entry per fold, in fold order
    pub models: IndexMap<String, Vec<FoldMetrics>>,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let std = if v.len() > 1 {
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

pub const FUSED: &str = "fused";
pub const BASELINE: &str = "baseline";

impl MetricsReport {
    pub fn accuracies(&self, model: &str) -> Vec<f64> {
        self.models.get(model).map_or(Vec::new(), |f| f.iter().map(|m| m.accuracy).collect())
    }

    pub fn aucs(&self, model: &str) -> Vec<f64> {
        self.models.get(model).map_or(Vec::new(), |f| f.iter().map(|m| m.auc).collect())
    }

    pub fn mean_accuracy(&self, model: &str) -> f64 {
        mean_std(&self.accuracies(model)).0
    }

    pub fn mean_auc(&self, model: &str) -> f64 {
        mean_std(&self.aucs(model)).0
    }

    /// `model,fold,accuracy,auc`, then `mean` and `std` rows per model.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let wrap = |e: csv::Error| Error::io("writing metrics csv", std::io::Error::other(e));
        w.write_record(["model", "fold", "accuracy", "auc"]).map_err(wrap)?;
        for (name, folds) in &self.models {
            for (f, m) in folds.iter().enumerate() {
                w.write_record([name.clone(), f.to_string(), m.accuracy.to_string(), m.auc.to_string()])
                    .map_err(wrap)?;
            }
            let (am, asd) = mean_std(&self.accuracies(name));
            let (um, usd) = mean_std(&self.aucs(name));
            w.write_record([name.as_str(), "mean", &am.to_string(), &um.to_string()])
                .map_err(wrap)?;
            w.write_record([name.as_str(), "std", &asd.to_string(), &usd.to_string()])
                .map_err(wrap)?;
        }
        w.flush().map_err(|e| Error::io("writing metrics csv", e))
    }

    /// Aligned text table: mean ± std in percent, then per-fold values.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = write!(out, "{:<10} {:>16} {:>16}", "model", "AUC (%)", "Accuracy (%)");
        for f in 0..self.k {
            let _ = write!(out, " {:>8}", format!("acc[{f}]"));
        }
        out.push('\n');
        for name in self.models.keys() {
            let (am, asd) = mean_std(&self.accuracies(name));
            let (um, usd) = mean_std(&self.aucs(name));
            let _ = write!(
                out,
                "{:<10} {:>16} {:>16}",
                name,
                format!("{:.2} ± {:.2}", 100.0 * um, 100.0 * usd),
                format!("{:.2} ± {:.2}", 100.0 * am, 100.0 * asd)
            );
            for a in self.accuracies(name) {
                let _ = write!(out, " {:>8.2}", 100.0 * a);
            }
            out.push('\n');
        }
        out
    }
}

fn split_rows(folds: &[usize], f: usize) -> (Vec<usize>, Vec<usize>) {
    (0..folds.len()).partition(|&r| folds[r] != f)
}

fn both_classes(labels: &[BinaryLabel]) -> bool {
    BinaryLabel::ALL.iter().all(|c| labels.contains(c))
}

/// Training rows of fold `f` and the ensemble fitted on them. Nothing about
/// the held-out rows reaches the fit unless selection is global.
fn fit_training_split(
    table: &FeatureTable,
    folds: &[usize],
    f: usize,
    cfg: &PipelineConfig,
    global: Option<&SelectionReport>,
) -> Result<(FeatureTable, FittedEnsemble)> {
    let (train_idx, _) = split_rows(folds, f);
    let train = table.subset_rows(&train_idx);
    if !both_classes(&train.labels()?) {
        return Err(Error::Training("training split holds a single class".into()));
    }
    let fitted = fit_ensemble(
        &train,
        cfg,
        cfg.seed_for(streams::FOLD_BAGGING + f as u64),
        global,
    )?;
    Ok((train, fitted))
}

fn global_selection(table: &FeatureTable, cfg: &PipelineConfig) -> Result<Option<SelectionReport>> {
    match cfg.selection.scope {
        SelectionScope::Global => Ok(Some(select_features(table, &cfg.selection)?)),
        SelectionScope::PerFold => Ok(None),
    }
}

/// The ensemble that [`run_experiment`] trains for fold `f`.
pub fn fit_fold(table: &FeatureTable, cfg: &PipelineConfig, f: usize) -> Result<FittedEnsemble> {
    let plan = make_folds(table, cfg.evaluation.folds, cfg.evaluation.split, cfg.seed_for(streams::FOLDS))?;
    let folds = plan.row_folds(table)?;
    let global = global_selection(table, cfg)?;
    Ok(fit_training_split(table, &folds, f, cfg, global.as_ref())?.1)
}

fn run_fold(
    table: &FeatureTable,
    folds: &[usize],
    f: usize,
    cfg: &PipelineConfig,
    global: Option<&SelectionReport>,
) -> Result<IndexMap<String, FoldMetrics>> {
    let (_, test_idx) = split_rows(folds, f);
    let test = table.subset_rows(&test_idx);
    if test.is_empty() {
        return Err(Error::Precondition("held-out fold is empty".into()));
    }
    let truth = test.labels()?;
    let (train, fitted) = fit_training_split(table, folds, f, cfg, global)?;

    let mut out = IndexMap::new();
    let outcomes = fitted.ensemble.predict_table(&test)?;
    let fused_labels: Vec<BinaryLabel> = outcomes.iter().map(|(o, _)| o.label).collect();
    let fused_scores: Vec<f64> = outcomes.iter().map(|(o, _)| o.score).collect();
    out.insert(
        FUSED.to_string(),
        FoldMetrics {
            accuracy: accuracy_score(&truth, &fused_labels)?,
            auc: auc_score(&truth, &fused_scores)?,
        },
    );
    for m in 0..fitted.top.len() {
        let labels: Vec<BinaryLabel> = outcomes.iter().map(|(_, p)| label_of(&p[m])).collect();
        let scores: Vec<f64> = outcomes.iter().map(|(_, p)| p[m][1]).collect();
        out.insert(
            format!("forest_{}", m + 1),
            FoldMetrics {
                accuracy: accuracy_score(&truth, &labels)?,
                auc: auc_score(&truth, &scores)?,
            },
        );
    }

    let hp = ForestHyperparams {
        seed: cfg.seed_for(streams::FOLD_BASELINE + f as u64),
        ..cfg.forest
    };
    let baseline = train_forest(&train, &hp)?;
    let probs = baseline.predict_table(&test)?;
    let labels: Vec<BinaryLabel> = probs.iter().map(|p| label_of(p)).collect();
    let scores: Vec<f64> = probs.iter().map(|p| p[1]).collect();
    out.insert(
        BASELINE.to_string(),
        FoldMetrics {
            accuracy: accuracy_score(&truth, &labels)?,
            auc: auc_score(&truth, &scores)?,
        },
    );
    Ok(out)
}

/// k-fold cross-validation of the fused ensemble, its three members and a
/// baseline forest trained on every feature column.
pub fn run_experiment(table: &FeatureTable, cfg: &PipelineConfig) -> Result<MetricsReport> {
    cfg.validate()?;
    let labels = table.labels()?;
    if !both_classes(&labels) {
        return Err(Error::Precondition("dataset needs both classes".into()));
    }
    let k = cfg.evaluation.folds;
    let plan = make_folds(table, k, cfg.evaluation.split, cfg.seed_for(streams::FOLDS))?;
    let folds = plan.row_folds(table)?;
    let global = global_selection(table, cfg)?;

    let per_fold: Vec<IndexMap<String, FoldMetrics>> = (0..k)
        .into_par_iter()
        .map(|f| {
            run_fold(table, &folds, f, cfg, global.as_ref()).map_err(|e| Error::Fold {
                fold: f,
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;

    let mut models: IndexMap<String, Vec<FoldMetrics>> = IndexMap::new();
    for fold in per_fold {
        for (name, m) in fold {
            models.entry(name).or_default().push(m);
        }
    }
    Ok(MetricsReport { k, models })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureRow;
    use BinaryLabel::{Class0 as N, Class1 as P};

    #[test]
    fn accuracy_cases() {
        assert_eq!(accuracy_score(&[N, P], &[N, P]).unwrap(), 1.0);
        assert_eq!(accuracy_score(&[N, P, N, P], &[N, P, P, P]).unwrap(), 0.75);
        assert!(accuracy_score(&[], &[]).is_err());
        assert!(accuracy_score(&[N], &[N, P]).is_err());
    }

    #[test]
    fn auc_cases() {
        assert_eq!(auc_score(&[P, P, N, N], &[0.9, 0.8, 0.4, 0.3]).unwrap(), 1.0);
        assert_eq!(auc_score(&[P, N, P, N], &[0.5; 4]).unwrap(), 0.5);
        assert_eq!(auc_score(&[P, N, P, N], &[0.6, 0.6, 0.2, 0.1]).unwrap(), 0.625);
        assert!(matches!(auc_score(&[P, P], &[0.1, 0.2]), Err(Error::Undefined(_))));
    }

    #[test]
    fn auc_ignores_monotone_transforms() {
        let truth = [P, N, P, N, N, P, N];
        let s = [0.3, 0.1, 0.9, 0.3, 0.5, 0.2, 0.0];
        let t: Vec<f64> = s.iter().map(|x: &f64| (5.0 * x).exp() - 3.0).collect();
        assert_eq!(auc_score(&truth, &s).unwrap(), auc_score(&truth, &t).unwrap());
    }

    fn drivers_table(n_drivers: usize, windows_each: usize) -> FeatureTable {
        FeatureTable {
            names: vec!["x".into()],
            rows: (0..n_drivers * windows_each)
                .map(|i| FeatureRow {
                    trip_id: format!("t{}", i / windows_each),
                    driver_id: format!("d{}", i / windows_each),
                    label: Some(if (i / windows_each) % 2 == 0 { N } else { P }),
                    values: vec![i as f64],
                })
                .collect(),
        }
    }

    #[test]
    fn by_driver_round_robin() {
        let t = drivers_table(10, 3);
        let plan = make_folds(&t, 5, SplitMode::ByDriver, 1).unwrap();
        let folds = plan.row_folds(&t).unwrap();
        for f in 0..5 {
            let drivers: std::collections::BTreeSet<_> = (0..t.len())
                .filter(|&r| folds[r] == f)
                .map(|r| t.rows[r].driver_id.clone())
                .collect();
            assert_eq!(drivers.len(), 2);
        }
        assert_eq!(plan, make_folds(&t, 5, SplitMode::ByDriver, 1).unwrap());
        assert!(make_folds(&drivers_table(3, 2), 5, SplitMode::ByDriver, 1).is_err());
    }

    #[test]
    fn by_window_partitions_rows() {
        let t = drivers_table(3, 4);
        let plan = make_folds(&t, 5, SplitMode::ByWindow, 9).unwrap();
        let folds = plan.row_folds(&t).unwrap();
        let mut sizes = [0; 5];
        folds.iter().for_each(|&f| sizes[f] += 1);
        assert_eq!(sizes.iter().sum::<usize>(), 12);
        assert!(sizes.iter().all(|&s| s >= 2));
    }

    #[test]
    fn report_shape() {
        let mut models = IndexMap::new();
        models.insert(
            FUSED.to_string(),
            vec![FoldMetrics { accuracy: 0.5, auc: 0.6 }, FoldMetrics { accuracy: 0.7, auc: 0.8 }],
        );
        let r = MetricsReport { k: 2, models };
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 2 + 2);
        assert!(text.contains("fused,mean,0.6,0.7"));
        assert!((r.mean_accuracy(FUSED) - 0.6).abs() < 1e-15);
        assert!(r.to_table().contains("fused"));
    }
}
