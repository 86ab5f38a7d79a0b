//! End-to-end pipeline steps shared by the CLI and the evaluation harness.

use crate::bagging::{sample_subsets, select_top, train_candidates, BaggingConfig, RankedCandidate};
use crate::config::{MatrixSource, PipelineConfig};
use crate::error::{Error, Result};
use crate::features::{
    extract_features, select_features, FeatureTable, SelectionReport,
};
use crate::fusion::{confusion_matrix, probability_matrix, FusionEnsemble, ENSEMBLE_SIZE};
use crate::telemetry::{downsample_to_1hz, validate_stream, TripStream};

/// Validates, downsamples and windows trips into a feature table.
pub fn trips_to_features(trips: &[TripStream], cfg: &PipelineConfig) -> Result<FeatureTable> {
    let mut downsampled = Vec::with_capacity(trips.len());
    for trip in trips {
        let report = validate_stream(trip);
        if let Some(v) = report.violations.first() {
            return Err(Error::Validation(format!(
                "trip `{}`: {} violation(s), first at sample {}: {}",
                trip.trip_id,
                report.violations.len(),
                v.index,
                v.kind
            )));
        }
        downsampled.push(downsample_to_1hz(trip)?);
    }
    let windows = extract_features(&downsampled, &cfg.window, &cfg.features)?;
    FeatureTable::from_windows(&windows)
}

/// A trained fusion ensemble plus the intermediate artefacts.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedEnsemble {
    pub selection: SelectionReport,
    pub catalog: Vec<String>,
    /// Every candidate, in index order.
    pub candidates: Vec<RankedCandidate>,
    /// The top three, best first.
    pub top: Vec<RankedCandidate>,
    pub ensemble: FusionEnsemble,
}

/// Selection → subsets → candidate forests → top three → fusion matrices.
///
/// `selection` short-circuits feature selection (global-selection mode).
pub fn fit_ensemble(
    train: &FeatureTable,
    cfg: &PipelineConfig,
    seed: u64,
    selection: Option<&SelectionReport>,
) -> Result<FittedEnsemble> {
    let selection = match selection {
        Some(s) => s.clone(),
        None => select_features(train, &cfg.selection)?,
    };
    let catalog = selection.catalog_with_min(cfg.bagging.max_features);
    let bagging = BaggingConfig { seed, ..cfg.bagging };
    let subsets = sample_subsets(&catalog, &bagging)?;
    let candidates = train_candidates(train, &subsets, &cfg.forest, &bagging)?;
    let top = select_top(&candidates, ENSEMBLE_SIZE)?;
    let matrices = top
        .iter()
        .map(|c| match cfg.fusion.matrices {
            MatrixSource::Oob => Ok(probability_matrix(&c.model.oob_confusion)),
            MatrixSource::Resubstitution => Ok(probability_matrix(&confusion_matrix(&c.model, train)?)),
        })
        .collect::<Result<Vec<_>>>()?;
    let ensemble = FusionEnsemble::new(
        top.iter().map(|c| c.model.clone()).collect(),
        matrices,
        cfg.fusion.params(),
    )?;
    Ok(FittedEnsemble {
        selection,
        catalog,
        candidates,
        top,
        ensemble,
    })
}
