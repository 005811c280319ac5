//! Grouped k-fold cross-validation: every group (project) lands in exactly
//! one fold.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{derive_seed, evaluate, train_forest, ClassifierError, ForestConfig, LabeledSample, MetricsReport};
use crate::exec::Execution;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvPrediction {
    pub mutant_id: String,
    pub group_id: String,
    pub fold: usize,
    pub score: f64,
    pub label: bool,
    pub truth: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub groups: Vec<String>,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub folds: Vec<FoldReport>,
    /// Metrics over the union of all fold predictions.
    pub pooled: MetricsReport,
    /// Unweighted mean of the per-fold precision, recall and MCC.
    pub mean: FoldMean,
    pub predictions: Vec<CvPrediction>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FoldMean {
    pub precision: f64,
    pub recall: f64,
    pub mcc: f64,
}

/// Shuffle the sorted distinct groups with `seed` and deal them round-robin
/// into `k` folds.
pub fn assign_folds<'a, I>(groups: I, k: usize, seed: u64) -> Result<BTreeMap<String, usize>, ClassifierError>
where
    I: IntoIterator<Item = &'a str>,
{
    let distinct: BTreeSet<&str> = groups.into_iter().collect();
    if k < 2 || distinct.len() < k {
        return Err(ClassifierError::TooFewGroups {
            groups: distinct.len(),
            k,
        });
    }
    let mut order: Vec<&str> = distinct.into_iter().collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(order
        .into_iter()
        .enumerate()
        .map(|(i, g)| (g.to_string(), i % k))
        .collect())
}

/// Train on k-1 folds, predict the held-out fold, for every fold. Groups are
/// dealt with `fold_seed`; fold `i` trains with `derive_seed(forest.seed, i)`.
/// Folds whose training part has a single class still train (a constant
/// forest).
pub fn cross_validate(
    data: &[LabeledSample],
    k: usize,
    fold_seed: u64,
    forest: &ForestConfig,
    exec: Execution,
) -> Result<CvReport, ClassifierError> {
    let folds = assign_folds(data.iter().map(|s| s.group_id.as_str()), k, fold_seed)?;
    let fold_of = |s: &LabeledSample| folds[&s.group_id];
    let per_fold = exec.map_range(k, |fold| -> Result<(FoldReport, Vec<CvPrediction>), ClassifierError> {
        let train: Vec<LabeledSample> = data.iter().filter(|s| fold_of(s) != fold).cloned().collect();
        let test: Vec<&LabeledSample> = data.iter().filter(|s| fold_of(s) == fold).collect();
        let cfg = ForestConfig {
            seed: derive_seed(forest.seed, fold as u64),
            allow_degenerate: true,
            ..forest.clone()
        };
        let model = train_forest(&train, &cfg, exec)?;
        let mut preds = Vec::with_capacity(test.len());
        for s in &test {
            let (label, score) = model.predict(&s.features)?;
            preds.push(CvPrediction {
                mutant_id: s.mutant_id.clone(),
                group_id: s.group_id.clone(),
                fold,
                score,
                label,
                truth: s.truth,
            });
        }
        let labels: Vec<bool> = preds.iter().map(|p| p.label).collect();
        let truths: Vec<bool> = preds.iter().map(|p| p.truth).collect();
        let groups = folds
            .iter()
            .filter(|(_, &f)| f == fold)
            .map(|(g, _)| g.clone())
            .collect();
        Ok((
            FoldReport {
                fold,
                groups,
                metrics: evaluate(&labels, &truths)?,
            },
            preds,
        ))
    });
    let mut reports = Vec::with_capacity(k);
    let mut predictions = Vec::with_capacity(data.len());
    for r in per_fold {
        let (report, preds) = r?;
        reports.push(report);
        predictions.extend(preds);
    }
    let labels: Vec<bool> = predictions.iter().map(|p| p.label).collect();
    let truths: Vec<bool> = predictions.iter().map(|p| p.truth).collect();
    let mean = |f: fn(&MetricsReport) -> f64| reports.iter().map(|r| f(&r.metrics)).sum::<f64>() / k as f64;
    Ok(CvReport {
        pooled: evaluate(&labels, &truths)?,
        mean: FoldMean {
            precision: mean(|m| m.precision),
            recall: mean(|m| m.recall),
            mcc: mean(|m| m.mcc),
        },
        folds: reports,
        predictions,
    })
}
