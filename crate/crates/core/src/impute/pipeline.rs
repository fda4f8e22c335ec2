//! Missing-value imputation of one series from other complete series.
//!
//! For each correlation threshold the pipeline screens predictors, reserves
//! a seeded holdout, tunes the boosting hyperparameters by k-fold grid search
//! and scores the tuned model on the holdout. The setup with the higher
//! validation R² fills the gaps; without a usable model the gaps take the
//! mean of the observed values.

use serde::{Deserialize, Serialize};

use super::cv::{grid_search_cv, split_holdout, HyperGrid};
use super::gbrt::{fit_gbrt, Dataset, HyperParams, TrainedEnsemble};
use super::metrics::{r2, rate_confidence, rmse};
use crate::error::{Error, Result};
use crate::proxy::ProxyEnv;
use crate::store::{pearson, ConfidenceLevel, Observation, SeriesMeta, VariableSeries};

/// Candidates correlated at least this strongly are near-duplicates.
pub const DUPLICATE_CORRELATION: f64 = 0.9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectedPredictor {
    pub variable_id: String,
    /// Pearson correlation with the target on its observed rows.
    pub correlation: f64,
}

/// Observed target values and the matching candidate columns, in region order.
type ObservedRows = (Vec<String>, Vec<f64>, Vec<Vec<f64>>);

fn observed_rows(target: &VariableSeries, candidates: &[&VariableSeries]) -> Result<ObservedRows> {
    let regions: Vec<String> = target
        .observations
        .values()
        .filter(|o| !o.is_missing())
        .map(|o| o.region.clone())
        .collect();
    let y: Vec<f64> = regions.iter().map(|r| target.value(r).unwrap_or_default()).collect();
    let columns = candidates
        .iter()
        .map(|c| column(c, &regions))
        .collect::<Result<Vec<_>>>()?;
    Ok((regions, y, columns))
}

fn column(s: &VariableSeries, regions: &[String]) -> Result<Vec<f64>> {
    regions
        .iter()
        .map(|r| {
            s.value(r).ok_or_else(|| Error::MissingProxyValue {
                variable: s.variable_id.clone(),
                region: r.clone(),
            })
        })
        .collect()
}

/// Screens candidate predictors for `target`:
///
/// 1. drops candidates constant over the target's observed rows;
/// 2. walks the rest in id order and drops any candidate with
///    |r| ≥ 0.9 against an already kept one;
/// 3. keeps those with |corr(candidate, target)| ≥ `threshold`,
///    ordered by descending |corr|, ties by id.
pub fn select_predictors(
    target: &VariableSeries,
    candidates: &[&VariableSeries],
    threshold: f64,
) -> Result<Vec<SelectedPredictor>> {
    let mut sorted: Vec<&VariableSeries> = candidates
        .iter()
        .copied()
        .filter(|c| c.variable_id != target.variable_id)
        .collect();
    sorted.sort_by(|a, b| a.variable_id.cmp(&b.variable_id));
    let (_, y, columns) = observed_rows(target, &sorted)?;
    if y.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "`{}` has {} observed values",
            target.variable_id,
            y.len()
        )));
    }

    let mut kept: Vec<usize> = Vec::new();
    for (i, col) in columns.iter().enumerate() {
        if col.iter().all(|&v| v == col[0]) {
            continue;
        }
        let duplicate = kept.iter().try_fold(false, |dup, &j| -> Result<bool> {
            Ok(dup || pearson(col, &columns[j])?.unwrap_or(0.0).abs() >= DUPLICATE_CORRELATION)
        })?;
        if !duplicate {
            kept.push(i);
        }
    }

    let mut selected = Vec::new();
    for i in kept {
        let r = pearson(&columns[i], &y)?.unwrap_or(0.0);
        if r.abs() >= threshold {
            selected.push(SelectedPredictor {
                variable_id: sorted[i].variable_id.clone(),
                correlation: r,
            });
        }
    }
    if selected.is_empty() {
        return Err(Error::NoPredictors);
    }
    selected.sort_by(|a, b| {
        b.correlation
            .abs()
            .total_cmp(&a.correlation.abs())
            .then_with(|| a.variable_id.cmp(&b.variable_id))
    });
    Ok(selected)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImputationConfig {
    pub thresholds: Vec<f64>,
    pub grid: HyperGrid,
    pub folds: usize,
    pub holdout_fraction: f64,
    pub seed: u64,
}

impl Default for ImputationConfig {
    fn default() -> Self {
        ImputationConfig {
            thresholds: vec![0.1, 0.5],
            grid: HyperGrid::default(),
            folds: 5,
            holdout_fraction: 0.1,
            seed: 42,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ImputationMethod {
    Ensemble,
    MeanFallback,
}

impl std::fmt::Display for ImputationMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ImputationMethod::Ensemble => "ENSEMBLE",
            ImputationMethod::MeanFallback => "MEAN_FALLBACK",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImputationReport {
    pub variable_id: String,
    pub threshold_used: Option<f64>,
    pub selected_predictors: Vec<String>,
    pub best_hyperparams: Option<HyperParams>,
    pub rmse_train: Option<f64>,
    pub r2_train: Option<f64>,
    pub rmse_val: Option<f64>,
    pub r2_val: Option<f64>,
    pub method: ImputationMethod,
    pub confidence: ConfidenceLevel,
}

/// Outcome of one threshold setup.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SetupResult {
    pub threshold: f64,
    pub selected_predictors: Vec<SelectedPredictor>,
    pub best_hyperparams: Option<HyperParams>,
    pub cv_rmse: Option<f64>,
    pub rmse_train: Option<f64>,
    pub r2_train: Option<f64>,
    pub rmse_val: Option<f64>,
    pub r2_val: Option<f64>,
    /// Why the setup produced no model, if it did not.
    pub failure: Option<String>,
}

#[derive(Clone, Debug)]
pub struct ImputationOutcome {
    pub series: VariableSeries,
    pub report: ImputationReport,
    /// The winning model, absent for the mean fallback and no-op runs.
    pub model: Option<TrainedEnsemble>,
    pub setups: Vec<SetupResult>,
    pub imputed_regions: Vec<String>,
}

struct FittedSetup {
    result: SetupResult,
    model: TrainedEnsemble,
    r2_val: f64,
    rmse_val: f64,
}

fn run_setup(
    target: &VariableSeries,
    candidates: &[&VariableSeries],
    threshold: f64,
    config: &ImputationConfig,
) -> Result<FittedSetup> {
    let selected = select_predictors(target, candidates, threshold)?;
    let chosen: Vec<&VariableSeries> = selected
        .iter()
        .map(|p| {
            *candidates
                .iter()
                .find(|c| c.variable_id == p.variable_id)
                .expect("selected from candidates")
        })
        .collect();
    let (_, y, columns) = observed_rows(target, &chosen)?;
    let rows: Vec<Vec<f64>> = (0..y.len()).map(|i| columns.iter().map(|c| c[i]).collect()).collect();
    let ids = selected.iter().map(|p| p.variable_id.clone()).collect();
    let data = Dataset::new(ids, rows, y)?;

    let (train_idx, val_idx) = split_holdout(data.len(), config.holdout_fraction, config.seed)?;
    let train = data.subset(&train_idx);
    let val = data.subset(&val_idx);
    let cv = grid_search_cv(&train, &config.grid, config.folds, config.seed.wrapping_add(1))?;
    let model = fit_gbrt(&train, &cv.best)?;
    let train_pred = model.predict(&train);
    let val_pred = model.predict(&val);
    let rmse_val = rmse(&val_pred, &val.target)?;
    let r2_val = r2(&val_pred, &val.target)?;
    Ok(FittedSetup {
        result: SetupResult {
            threshold,
            selected_predictors: selected,
            best_hyperparams: Some(cv.best),
            cv_rmse: Some(cv.best_rmse),
            rmse_train: Some(rmse(&train_pred, &train.target)?),
            r2_train: r2(&train_pred, &train.target).ok(),
            rmse_val: Some(rmse_val),
            r2_val: Some(r2_val),
            failure: None,
        },
        model,
        r2_val,
        rmse_val,
    })
}

fn failed_setup(threshold: f64, err: &Error) -> SetupResult {
    SetupResult {
        threshold,
        selected_predictors: Vec::new(),
        best_hyperparams: None,
        cv_rmse: None,
        rmse_train: None,
        r2_train: None,
        rmse_val: None,
        r2_val: None,
        failure: Some(err.to_string()),
    }
}

/// Fills the missing observations of `target`.
///
/// Observed values stay untouched at their original confidence. Imputed
/// values are graded from the winning setup's validation R²; when no setup
/// yields a model with positive validation R², the mean of the observed
/// values is used instead, graded `LOW`. When every observed value is
/// nonnegative, predictions are clamped at zero.
pub fn impute_series(
    target: &VariableSeries,
    candidates: &[&VariableSeries],
    config: &ImputationConfig,
) -> Result<ImputationOutcome> {
    config.grid.validate()?;
    let missing: Vec<String> = target.missing_regions().map(str::to_string).collect();
    if missing.is_empty() {
        return Ok(ImputationOutcome {
            series: target.clone(),
            report: ImputationReport {
                variable_id: target.variable_id.clone(),
                threshold_used: None,
                selected_predictors: Vec::new(),
                best_hyperparams: None,
                rmse_train: None,
                r2_train: None,
                rmse_val: None,
                r2_val: None,
                method: ImputationMethod::Ensemble,
                confidence: ConfidenceLevel::VeryHigh,
            },
            model: None,
            setups: Vec::new(),
            imputed_regions: Vec::new(),
        });
    }
    let observed: Vec<f64> = target.observations.values().filter_map(|o| o.value).collect();
    if observed.is_empty() {
        return Err(Error::InsufficientData(format!(
            "`{}` has no observed values",
            target.variable_id
        )));
    }
    // Prediction needs every candidate on the missing rows as well.
    for c in candidates {
        column(c, &missing)?;
    }

    let mut setups = Vec::new();
    let mut best: Option<FittedSetup> = None;
    for &threshold in &config.thresholds {
        match run_setup(target, candidates, threshold, config) {
            Ok(fitted) => {
                setups.push(fitted.result.clone());
                let better = best.as_ref().is_none_or(|b| {
                    fitted.r2_val > b.r2_val || (fitted.r2_val == b.r2_val && fitted.rmse_val < b.rmse_val)
                });
                if better {
                    best = Some(fitted);
                }
            }
            Err(e @ (Error::NoPredictors | Error::InsufficientData(_) | Error::UndefinedR2)) => {
                setups.push(failed_setup(threshold, &e));
            }
            Err(e) => return Err(e),
        }
    }

    let clamp_at_zero = observed.iter().all(|&v| v >= 0.0);
    let mut series = target.clone();
    let report_from = |b: &FittedSetup, method, confidence| ImputationReport {
        variable_id: target.variable_id.clone(),
        threshold_used: Some(b.result.threshold),
        selected_predictors: b
            .result
            .selected_predictors
            .iter()
            .map(|p| p.variable_id.clone())
            .collect(),
        best_hyperparams: b.result.best_hyperparams,
        rmse_train: b.result.rmse_train,
        r2_train: b.result.r2_train,
        rmse_val: b.result.rmse_val,
        r2_val: b.result.r2_val,
        method,
        confidence,
    };

    let (report, model) = match best {
        Some(b) if b.r2_val > 0.0 => {
            let confidence = rate_confidence(b.r2_val);
            let chosen: Vec<&VariableSeries> = b
                .model
                .feature_ids
                .iter()
                .map(|id| *candidates.iter().find(|c| &c.variable_id == id).expect("feature"))
                .collect();
            let cols = chosen
                .iter()
                .map(|c| column(c, &missing))
                .collect::<Result<Vec<_>>>()?;
            for (i, region) in missing.iter().enumerate() {
                let x: Vec<f64> = cols.iter().map(|c| c[i]).collect();
                let mut v = b.model.predict_row(&x);
                if clamp_at_zero {
                    v = v.max(0.0);
                }
                series.insert(Observation {
                    region: region.clone(),
                    value: Some(v),
                    confidence,
                });
            }
            (report_from(&b, ImputationMethod::Ensemble, confidence), Some(b.model))
        }
        other => {
            let mean = observed.iter().sum::<f64>() / observed.len() as f64;
            for region in &missing {
                series.insert(Observation {
                    region: region.clone(),
                    value: Some(mean),
                    confidence: ConfidenceLevel::Low,
                });
            }
            let report = match &other {
                Some(b) => report_from(b, ImputationMethod::MeanFallback, ConfidenceLevel::Low),
                None => ImputationReport {
                    variable_id: target.variable_id.clone(),
                    threshold_used: None,
                    selected_predictors: Vec::new(),
                    best_hyperparams: None,
                    rmse_train: None,
                    r2_train: None,
                    rmse_val: None,
                    r2_val: None,
                    method: ImputationMethod::MeanFallback,
                    confidence: ConfidenceLevel::Low,
                },
            };
            (report, None)
        }
    };
    Ok(ImputationOutcome {
        series,
        report,
        model,
        setups,
        imputed_regions: missing,
    })
}

/// Applies a trained model to regions of another country. Every model
/// feature must be available in `env` with values for all `regions`.
///
/// The predictions are unrated (`VERY_LOW`) until compared against a
/// reference, e.g. with [`crate::validate::compare_at_level`].
pub fn cross_country_predict<E: ProxyEnv + ?Sized>(
    model: &TrainedEnsemble,
    env: &E,
    regions: &[String],
    meta: SeriesMeta,
) -> Result<VariableSeries> {
    let cols = model
        .feature_ids
        .iter()
        .map(|id| {
            let s = env.series(id).ok_or_else(|| Error::MissingFeature(id.clone()))?;
            column(s, regions)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = VariableSeries::new(meta);
    for (i, region) in regions.iter().enumerate() {
        let x: Vec<f64> = cols.iter().map(|c| c[i]).collect();
        out.insert(Observation {
            region: region.clone(),
            value: Some(model.predict_row(&x)),
            confidence: ConfidenceLevel::VeryLow,
        });
    }
    Ok(out)
}
