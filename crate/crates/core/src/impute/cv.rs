//! Holdout split, k-fold partitioning and grid search.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::gbrt::{fit_gbrt, Dataset, HyperParams};
use super::metrics::rmse;
use crate::error::{Error, Result};

pub const MIN_HOLDOUT_ROWS: usize = 10;

fn shuffled(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx
}

/// Splits row indices `0..n` into `(train, validation)` with
/// `⌈fraction·n⌉` validation rows, after a seeded shuffle. Both lists are
/// returned in ascending order.
pub fn split_holdout(n: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < MIN_HOLDOUT_ROWS {
        return Err(Error::InsufficientData(format!(
            "{n} complete rows, at least {MIN_HOLDOUT_ROWS} required"
        )));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("holdout fraction {fraction} outside (0, 1)")));
    }
    // the epsilon keeps 0.1·30 = 3.0000000000000004 from rounding up to 4
    let n_val = ((fraction * n as f64) - 1e-9).ceil() as usize;
    let idx = shuffled(n, seed);
    let mut val = idx[..n_val].to_vec();
    let mut train = idx[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    Ok((train, val))
}

/// Seeded partition of `0..n` into `k` folds whose sizes differ by at most one.
pub fn kfold(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 || n < k {
        return Err(Error::InsufficientData(format!(
            "{n} rows cannot form {k} folds"
        )));
    }
    let idx = shuffled(n, seed);
    Ok((0..k)
        .map(|f| {
            let mut fold = idx[f * n / k..(f + 1) * n / k].to_vec();
            fold.sort_unstable();
            fold
        })
        .collect())
}

/// Cartesian hyperparameter lattice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperGrid {
    pub n_estimators: Vec<usize>,
    pub learning_rate: Vec<f64>,
    pub max_depth: Vec<usize>,
}

impl Default for HyperGrid {
    fn default() -> Self {
        HyperGrid {
            n_estimators: vec![50, 100, 200],
            learning_rate: vec![0.05, 0.1, 0.3],
            max_depth: vec![2, 4, 6],
        }
    }
}

impl HyperGrid {
    pub fn single(hp: HyperParams) -> Self {
        HyperGrid {
            n_estimators: vec![hp.n_estimators],
            learning_rate: vec![hp.learning_rate],
            max_depth: vec![hp.max_depth],
        }
    }

    pub fn points(&self) -> Vec<HyperParams> {
        let mut out = Vec::new();
        for &n_estimators in &self.n_estimators {
            for &learning_rate in &self.learning_rate {
                for &max_depth in &self.max_depth {
                    out.push(HyperParams {
                        n_estimators,
                        learning_rate,
                        max_depth,
                    });
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_estimators.is_empty() || self.learning_rate.is_empty() || self.max_depth.is_empty() {
            return Err(Error::InvalidHyperParams("empty hyperparameter grid".into()));
        }
        self.points().iter().try_for_each(HyperParams::validate)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridScore {
    pub params: HyperParams,
    pub mean_rmse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvOutcome {
    pub best: HyperParams,
    pub best_rmse: f64,
    /// Every grid point with its mean held-fold RMSE, in grid order.
    pub scores: Vec<GridScore>,
}

/// k-fold cross-validated grid search minimising mean held-fold RMSE.
/// Ties go to fewer estimators, then shallower trees, then the smaller
/// learning rate.
///
/// For each `(learning_rate, max_depth)` pair one ensemble with the largest
/// requested `n_estimators` is fitted per fold and scored at every requested
/// size; boosting is deterministic, so the truncated ensembles are exactly
/// the smaller fits.
pub fn grid_search_cv(train: &Dataset, grid: &HyperGrid, k: usize, seed: u64) -> Result<CvOutcome> {
    grid.validate()?;
    if train.len() < k {
        return Err(Error::InsufficientData(format!(
            "{} training rows for {k}-fold cross-validation",
            train.len()
        )));
    }
    let folds = kfold(train.len(), k, seed)?;
    let splits: Vec<(Dataset, Dataset)> = folds
        .iter()
        .map(|held| {
            let fit_idx: Vec<usize> = (0..train.len())
                .filter(|i| held.binary_search(i).is_err())
                .collect();
            (train.subset(&fit_idx), train.subset(held))
        })
        .collect();

    let mut sizes = grid.n_estimators.clone();
    sizes.sort_unstable();
    sizes.dedup();
    let max_n = *sizes.last().unwrap_or(&0);

    let mut groups = Vec::new();
    for &lr in &grid.learning_rate {
        for &depth in &grid.max_depth {
            groups.push((lr, depth));
        }
    }
    // per group: mean RMSE for each entry of `sizes`
    let group_scores: Vec<Vec<f64>> = groups
        .par_iter()
        .map(|&(lr, depth)| -> Result<Vec<f64>> {
            let hp = HyperParams::new(max_n, lr, depth)?;
            let mut totals = vec![0.0; sizes.len()];
            for (fit, held) in &splits {
                let model = fit_gbrt(fit, &hp)?;
                let mut err = None;
                model.staged_predict(held, |m, pred| {
                    if let Ok(pos) = sizes.binary_search(&m) {
                        match rmse(pred, &held.target) {
                            Ok(e) => totals[pos] += e,
                            Err(e) => err = Some(e),
                        }
                    }
                });
                if let Some(e) = err {
                    return Err(e);
                }
            }
            Ok(totals.into_iter().map(|t| t / k as f64).collect())
        })
        .collect::<Result<_>>()?;

    let scores: Vec<GridScore> = grid
        .points()
        .into_iter()
        .map(|p| {
            let g = groups
                .iter()
                .position(|&(lr, d)| lr == p.learning_rate && d == p.max_depth)
                .expect("grid point belongs to a group");
            let s = sizes.binary_search(&p.n_estimators).expect("size requested");
            GridScore {
                params: p,
                mean_rmse: group_scores[g][s],
            }
        })
        .collect();

    let best = scores
        .iter()
        .min_by(|a, b| {
            a.mean_rmse
                .total_cmp(&b.mean_rmse)
                .then(a.params.n_estimators.cmp(&b.params.n_estimators))
                .then(a.params.max_depth.cmp(&b.params.max_depth))
                .then(a.params.learning_rate.total_cmp(&b.params.learning_rate))
        })
        .expect("non-empty grid");
    Ok(CvOutcome {
        best: best.params,
        best_rmse: best.mean_rmse,
        scores,
    })
}
