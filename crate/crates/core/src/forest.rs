//! CART decision trees with Gini splits, bagged into a random forest.

use std::collections::HashMap;

use indexmap::IndexMap;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureTable;
use crate::fusion::ConfusionMatrix;
use crate::telemetry::BinaryLabel;

const N_CLASSES: usize = 2;

/// Smallest Gini decrease that counts as an improvement.
const MIN_IMPURITY_DECREASE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "SplitFeaturesRepr", into = "SplitFeaturesRepr")]
pub enum SplitFeatures {
    /// `ceil(sqrt(feature count))`
    #[default]
    Sqrt,
    Count(usize),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum SplitFeaturesRepr {
    Count(usize),
    Name(String),
}

impl TryFrom<SplitFeaturesRepr> for SplitFeatures {
    type Error = String;
    fn try_from(r: SplitFeaturesRepr) -> std::result::Result<Self, String> {
        match r {
            SplitFeaturesRepr::Count(n) => Ok(SplitFeatures::Count(n)),
            SplitFeaturesRepr::Name(s) if s == "sqrt" => Ok(SplitFeatures::Sqrt),
            SplitFeaturesRepr::Name(s) => s
                .parse()
                .map(SplitFeatures::Count)
                .map_err(|_| format!("split_features must be \"sqrt\" or a count, got `{s}`")),
        }
    }
}

impl From<SplitFeatures> for SplitFeaturesRepr {
    fn from(s: SplitFeatures) -> Self {
        match s {
            SplitFeatures::Sqrt => SplitFeaturesRepr::Name("sqrt".into()),
            SplitFeatures::Count(n) => SplitFeaturesRepr::Count(n),
        }
    }
}

impl SplitFeatures {
    pub fn resolve(self, n_features: usize) -> usize {
        match self {
            SplitFeatures::Sqrt => (n_features as f64).sqrt().ceil() as usize,
            SplitFeatures::Count(n) => n,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestHyperparams {
    pub n_trees: usize,
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub split_features: SplitFeatures,
    /// Set from the pipeline's master seed, never read from config files.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for ForestHyperparams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: None,
            min_samples_split: 2,
            split_features: SplitFeatures::Sqrt,
            seed: 0,
        }
    }
}

impl ForestHyperparams {
    pub fn validate(&self, n_features: usize) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::Config("n_trees must be positive".into()));
        }
        if self.max_depth == Some(0) {
            return Err(Error::Config("max_depth must be positive".into()));
        }
        if self.min_samples_split < 2 {
            return Err(Error::Config("min_samples_split must be >= 2".into()));
        }
        if let SplitFeatures::Count(k) = self.split_features {
            if k == 0 || (n_features > 0 && k > n_features) {
                return Err(Error::Config(format!(
                    "split_features {k} must be in 1..={n_features}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Node {
    /// Samples with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        #[serde(with = "crate::decimal")]
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        #[serde(with = "crate::decimal::vec")]
        distribution: Vec<f64>,
    },
}

/// Node array with the root at index 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf_for(&self, x: &[f64]) -> &[f64] {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[*feature] <= *threshold { *left } else { *right },
                Node::Leaf { distribution } => return distribution,
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, *left).max(go(nodes, *right)),
            }
        }
        go(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub feature_names: Vec<String>,
    pub n_classes: usize,
    pub trees: Vec<Tree>,
    #[serde(with = "crate::decimal")]
    pub oob_accuracy: f64,
    /// Majority-vote predictions of out-of-bag trees on the training rows.
    pub oob_confusion: ConfusionMatrix,
    pub seed: u64,
}

/// Named feature lookup used by the prediction entry points.
pub trait FeatureSource {
    fn feature(&self, name: &str) -> Option<f64>;
}

impl FeatureSource for IndexMap<String, f64> {
    fn feature(&self, name: &str) -> Option<f64> {
        self.get(name).copied()
    }
}

impl FeatureSource for HashMap<String, f64> {
    fn feature(&self, name: &str) -> Option<f64> {
        self.get(name).copied()
    }
}

/// Index of the first maximal entry; ties resolve to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

impl ForestModel {
    /// Mean of the leaf class-frequency vectors reached in every tree.
    /// `x` is ordered like [`ForestModel::feature_names`].
    pub fn predict_proba_values(&self, x: &[f64]) -> Vec<f64> {
        let mut acc = vec![0.0; self.n_classes];
        for tree in &self.trees {
            for (a, p) in acc.iter_mut().zip(tree.leaf_for(x)) {
                *a += p;
            }
        }
        let n = self.trees.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        acc
    }

    pub fn predict_proba(&self, x: &impl FeatureSource) -> Result<Vec<f64>> {
        let values = self
            .feature_names
            .iter()
            .map(|n| x.feature(n).ok_or_else(|| Error::MissingFeature(n.clone())))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.predict_proba_values(&values))
    }

    pub fn predict_label(&self, x: &impl FeatureSource) -> Result<BinaryLabel> {
        Ok(label_of(&self.predict_proba(x)?))
    }

    /// Column positions of this model's features within `names`.
    pub fn bind(&self, names: &[String]) -> Result<Vec<usize>> {
        self.feature_names
            .iter()
            .map(|f| {
                names
                    .iter()
                    .position(|n| n == f)
                    .ok_or_else(|| Error::MissingFeature(f.clone()))
            })
            .collect()
    }

    /// Probability vectors for every row of `table`.
    pub fn predict_table(&self, table: &FeatureTable) -> Result<Vec<Vec<f64>>> {
        let cols = self.bind(&table.names)?;
        let mut buf = vec![0.0; cols.len()];
        Ok(table
            .rows
            .iter()
            .map(|r| {
                for (b, &c) in buf.iter_mut().zip(&cols) {
                    *b = r.values[c];
                }
                self.predict_proba_values(&buf)
            })
            .collect())
    }
}

pub fn label_of(proba: &[f64]) -> BinaryLabel {
    BinaryLabel::from_index(argmax(proba)).expect("binary probability vector")
}

/// Column-major training data in canonical row order.
struct TrainData {
    cols: Vec<Vec<f64>>,
    y: Vec<usize>,
}

/// Row order that does not depend on input order: by trip id, then feature
/// bits, then label.
fn canonical_order(table: &FeatureTable) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..table.len()).collect();
    idx.sort_by(|&a, &b| {
        let (ra, rb) = (&table.rows[a], &table.rows[b]);
        ra.trip_id
            .cmp(&rb.trip_id)
            .then_with(|| {
                ra.values
                    .iter()
                    .zip(&rb.values)
                    .map(|(x, y)| x.total_cmp(y))
                    .find(|o| o.is_ne())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
            .then_with(|| ra.label.cmp(&rb.label))
    });
    idx
}

struct TreeBuilder<'a> {
    data: &'a TrainData,
    hp: &'a ForestHyperparams,
    mtry: usize,
    nodes: Vec<Node>,
}

fn gini(counts: &[usize; N_CLASSES], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let nf = n as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / nf).powi(2)).sum::<f64>()
}

impl TreeBuilder<'_> {
    fn leaf(&mut self, counts: &[usize; N_CLASSES], n: usize) -> usize {
        let distribution = counts.iter().map(|&c| c as f64 / n as f64).collect();
        self.nodes.push(Node::Leaf { distribution });
        self.nodes.len() - 1
    }

    /// Best `(feature, threshold, decrease)` among the candidate features.
    fn best_split(
        &self,
        samples: &[usize],
        candidates: &[usize],
        counts: &[usize; N_CLASSES],
    ) -> Option<(usize, f64, f64)> {
        let n = samples.len();
        let parent = gini(counts, n);
        let mut best: Option<(usize, f64, f64)> = None;
        let mut pairs: Vec<(f64, usize)> = Vec::with_capacity(n);
        for &f in candidates {
            let col = &self.data.cols[f];
            pairs.clear();
            pairs.extend(samples.iter().map(|&s| (col[s], self.data.y[s])));
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left = [0usize; N_CLASSES];
            for i in 0..n - 1 {
                left[pairs[i].1] += 1;
                let (lo, hi) = (pairs[i].0, pairs[i + 1].0);
                if lo == hi {
                    continue;
                }
                let nl = i + 1;
                let nr = n - nl;
                let mut right = *counts;
                for c in 0..N_CLASSES {
                    right[c] -= left[c];
                }
                let weighted =
                    (nl as f64 * gini(&left, nl) + nr as f64 * gini(&right, nr)) / n as f64;
                let decrease = parent - weighted;
                if best.is_none_or(|b| decrease > b.2) {
                    let mut threshold = lo + (hi - lo) / 2.0;
                    if threshold >= hi {
                        threshold = lo;
                    }
                    best = Some((f, threshold, decrease));
                }
            }
        }
        best
    }

    fn grow(&mut self, samples: &mut [usize], depth: usize, rng: &mut ChaCha8Rng) -> usize {
        let n = samples.len();
        let mut counts = [0usize; N_CLASSES];
        for &s in samples.iter() {
            counts[self.data.y[s]] += 1;
        }
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        let at_depth = self.hp.max_depth.is_some_and(|d| depth >= d);
        if pure || n < self.hp.min_samples_split || at_depth {
            return self.leaf(&counts, n);
        }

        let n_features = self.data.cols.len();
        let mut candidates = index::sample(rng, n_features, self.mtry).into_vec();
        candidates.sort_unstable();
        let Some((feature, threshold, decrease)) = self.best_split(samples, &candidates, &counts)
        else {
            return self.leaf(&counts, n);
        };
        if decrease <= MIN_IMPURITY_DECREASE {
            return self.leaf(&counts, n);
        }

        let col = &self.data.cols[feature];
        let mut split = 0;
        for i in 0..n {
            if col[samples[i]] <= threshold {
                samples.swap(i, split);
                split += 1;
            }
        }
        let id = self.nodes.len();
        self.nodes.push(Node::Split {
            feature,
            threshold,
            left: 0,
            right: 0,
        });
        let (l, r) = samples.split_at_mut(split);
        let left = self.grow(l, depth + 1, rng);
        let right = self.grow(r, depth + 1, rng);
        if let Node::Split {
            left: lref,
            right: rref,
            ..
        } = &mut self.nodes[id]
        {
            *lref = left;
            *rref = right;
        }
        id
    }
}

struct TreeFit {
    tree: Tree,
    /// (sample, predicted class) for every out-of-bag sample.
    oob: Vec<(usize, usize)>,
}

fn fit_tree(data: &TrainData, hp: &ForestHyperparams, mtry: usize, tree_index: usize) -> TreeFit {
    let n = data.y.len();
    // one ChaCha stream per tree under the forest seed
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    rng.set_stream(tree_index as u64);
    let mut samples: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
    let mut in_bag = vec![false; n];
    for &s in &samples {
        in_bag[s] = true;
    }
    let mut builder = TreeBuilder {
        data,
        hp,
        mtry,
        nodes: Vec::new(),
    };
    builder.grow(&mut samples, 0, &mut rng);
    let tree = Tree {
        nodes: builder.nodes,
    };
    let mut row = vec![0.0; data.cols.len()];
    let oob = (0..n)
        .filter(|&s| !in_bag[s])
        .map(|s| {
            for (r, col) in row.iter_mut().zip(&data.cols) {
                *r = col[s];
            }
            (s, argmax(tree.leaf_for(&row)))
        })
        .collect();
    TreeFit { tree, oob }
}

/// Trains a forest on every column of `table`.
pub fn train_forest(table: &FeatureTable, hp: &ForestHyperparams) -> Result<ForestModel> {
    let n_features = table.names.len();
    if n_features == 0 {
        return Err(Error::Training("dataset has no features".into()));
    }
    hp.validate(n_features)?;
    if table.len() < 2 {
        return Err(Error::Training(format!(
            "need at least 2 samples, got {}",
            table.len()
        )));
    }
    let labels = table.labels()?;
    if !BinaryLabel::ALL.iter().all(|c| labels.contains(c)) {
        return Err(Error::Training("both classes must be present".into()));
    }

    let order = canonical_order(table);
    let data = TrainData {
        cols: (0..n_features)
            .map(|j| order.iter().map(|&i| table.rows[i].values[j]).collect())
            .collect(),
        y: order.iter().map(|&i| labels[i].index()).collect(),
    };
    let mtry = hp.split_features.resolve(n_features).clamp(1, n_features);

    let fits: Vec<TreeFit> = (0..hp.n_trees)
        .into_par_iter()
        .map(|t| fit_tree(&data, hp, mtry, t))
        .collect();

    let n = data.y.len();
    let mut votes = vec![[0usize; N_CLASSES]; n];
    for fit in &fits {
        for &(s, c) in &fit.oob {
            votes[s][c] += 1;
        }
    }
    let mut confusion = ConfusionMatrix::zeros(N_CLASSES);
    for (s, v) in votes.iter().enumerate() {
        if v.iter().sum::<usize>() == 0 {
            continue;
        }
        // majority vote, ties to class 0
        let pred = if v[1] > v[0] { 1 } else { 0 };
        confusion.counts[data.y[s]][pred] += 1;
    }
    let evaluated = confusion.total();
    let oob_accuracy = if evaluated == 0 {
        log::warn!("no sample was ever out-of-bag; oob accuracy reported as 0");
        0.0
    } else {
        confusion.trace() as f64 / evaluated as f64
    };

    Ok(ForestModel {
        feature_names: table.names.clone(),
        n_classes: N_CLASSES,
        trees: fits.into_iter().map(|f| f.tree).collect(),
        oob_accuracy,
        oob_confusion: confusion,
        seed: hp.seed,
    })
}
