//! Least-squares gradient boosting over exact greedy regression trees.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub n_estimators: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
}

impl HyperParams {
    pub fn new(n_estimators: usize, learning_rate: f64, max_depth: usize) -> Result<Self> {
        let hp = HyperParams {
            n_estimators,
            learning_rate,
            max_depth,
        };
        hp.validate()?;
        Ok(hp)
    }

    /// `n_estimators = 0` is accepted and yields the constant mean model.
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::InvalidHyperParams(format!(
                "learning_rate {} outside (0, 1]",
                self.learning_rate
            )));
        }
        if self.max_depth == 0 {
            return Err(Error::InvalidHyperParams("max_depth must be positive".into()));
        }
        Ok(())
    }
}

/// Row-major feature matrix with its regression target.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub feature_ids: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub target: Vec<f64>,
}

impl Dataset {
    pub fn new(feature_ids: Vec<String>, rows: Vec<Vec<f64>>, target: Vec<f64>) -> Result<Self> {
        if rows.len() != target.len() {
            return Err(Error::LengthMismatch(rows.len(), target.len()));
        }
        if let Some(bad) = rows.iter().find(|r| r.len() != feature_ids.len()) {
            return Err(Error::LengthMismatch(bad.len(), feature_ids.len()));
        }
        Ok(Dataset {
            feature_ids,
            rows,
            target,
        })
    }

    pub fn len(&self) -> usize {
        self.target.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.feature_ids.len()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            feature_ids: self.feature_ids.clone(),
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
            target: indices.iter().map(|&i| self.target[i]).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

/// Binary regression tree; node 0 is the root. Samples with
/// `x[feature] <= threshold` go left.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub nodes: Vec<TreeNode>,
}

impl RegressionTree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                TreeNode::Leaf { value } => return *value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    /// Number of split levels on the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], i: usize) -> usize {
            match &nodes[i] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }

    /// The root split, if the tree is not a single leaf.
    pub fn root_split(&self) -> Option<(usize, f64)> {
        match self.nodes.first()? {
            TreeNode::Split {
                feature, threshold, ..
            } => Some((*feature, *threshold)),
            TreeNode::Leaf { .. } => None,
        }
    }
}

/// Prediction is `base_prediction + learning_rate * Σ tree(x)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainedEnsemble {
    pub base_prediction: f64,
    pub trees: Vec<RegressionTree>,
    pub learning_rate: f64,
    pub feature_ids: Vec<String>,
}

impl TrainedEnsemble {
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        self.base_prediction + self.learning_rate * self.trees.iter().map(|t| t.predict(x)).sum::<f64>()
    }

    pub fn predict(&self, data: &Dataset) -> Vec<f64> {
        data.rows.iter().map(|r| self.predict_row(r)).collect()
    }

    /// Calls `visit(m, predictions)` after the base prediction (`m = 0`) and
    /// after each of the first `m` trees, so the truncated ensembles can be
    /// scored without refitting.
    pub fn staged_predict(&self, data: &Dataset, mut visit: impl FnMut(usize, &[f64])) {
        let mut pred = vec![self.base_prediction; data.len()];
        visit(0, &pred);
        for (m, tree) in self.trees.iter().enumerate() {
            for (p, row) in pred.iter_mut().zip(&data.rows) {
                *p += self.learning_rate * tree.predict(row);
            }
            visit(m + 1, &pred);
        }
    }
}

/// Fits `n_estimators` trees to successive residuals, starting from the
/// target mean.
pub fn fit_gbrt(train: &Dataset, hp: &HyperParams) -> Result<TrainedEnsemble> {
    hp.validate()?;
    if train.is_empty() {
        return Err(Error::InsufficientData("empty training set".into()));
    }
    let n = train.len();
    let base = train.target.iter().sum::<f64>() / n as f64;
    let columns: Vec<Vec<f64>> = (0..train.n_features())
        .map(|f| train.rows.iter().map(|r| r[f]).collect())
        .collect();
    // Feature order never changes across rounds, so sort once.
    let sorted: Vec<Vec<usize>> = columns
        .iter()
        .map(|col| {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&a, &b| col[a].total_cmp(&col[b]).then(a.cmp(&b)));
            idx
        })
        .collect();

    let mut pred = vec![base; n];
    let mut trees = Vec::with_capacity(hp.n_estimators);
    let mut builder = TreeBuilder {
        columns: &columns,
        residual: vec![0.0; n],
        max_depth: hp.max_depth,
        nodes: Vec::new(),
        goes_left: vec![false; n],
    };
    for _ in 0..hp.n_estimators {
        for ((r, t), p) in builder.residual.iter_mut().zip(&train.target).zip(&pred) {
            *r = t - p;
        }
        let tree = if sorted.is_empty() {
            RegressionTree {
                nodes: vec![TreeNode::Leaf {
                    value: builder.residual.iter().sum::<f64>() / n as f64,
                }],
            }
        } else {
            builder.build(sorted.clone(), 0);
            RegressionTree {
                nodes: std::mem::take(&mut builder.nodes),
            }
        };
        for (p, row) in pred.iter_mut().zip(&train.rows) {
            *p += hp.learning_rate * tree.predict(row);
        }
        trees.push(tree);
    }
    Ok(TrainedEnsemble {
        base_prediction: base,
        trees,
        learning_rate: hp.learning_rate,
        feature_ids: train.feature_ids.clone(),
    })
}

struct TreeBuilder<'a> {
    columns: &'a [Vec<f64>],
    residual: Vec<f64>,
    max_depth: usize,
    nodes: Vec<TreeNode>,
    goes_left: Vec<bool>,
}

struct BestSplit {
    gain: f64,
    feature: usize,
    threshold: f64,
}

impl TreeBuilder<'_> {
    /// `members[f]` lists the node's samples in ascending order of feature `f`.
    /// Returns the index of the created node.
    fn build(&mut self, members: Vec<Vec<usize>>, depth: usize) -> usize {
        let samples: &[usize] = members.first().map_or(&[], Vec::as_slice);
        let n = samples.len();
        let total: f64 = samples.iter().map(|&i| self.residual[i]).sum();
        let id = self.nodes.len();
        self.nodes.push(TreeNode::Leaf {
            value: if n > 0 { total / n as f64 } else { 0.0 },
        });
        if depth >= self.max_depth || n < 2 {
            return id;
        }
        let Some(best) = self.best_split(&members, total) else {
            return id;
        };
        let col = &self.columns[best.feature];
        for &i in samples {
            self.goes_left[i] = col[i] <= best.threshold;
        }
        let (left, right): (Vec<_>, Vec<_>) = members
            .into_iter()
            .map(|list| list.into_iter().partition::<Vec<usize>, _>(|&i| self.goes_left[i]))
            .unzip();
        let l = self.build(left, depth + 1);
        let r = self.build(right, depth + 1);
        self.nodes[id] = TreeNode::Split {
            feature: best.feature,
            threshold: best.threshold,
            left: l,
            right: r,
        };
        id
    }

    /// Exact greedy search: maximises the squared-error reduction
    /// `S_L²/n_L + S_R²/n_R − S²/n` over midpoints between consecutive
    /// distinct values. The first strictly best candidate wins.
    fn best_split(&self, members: &[Vec<usize>], total: f64) -> Option<BestSplit> {
        let mut best: Option<BestSplit> = None;
        for (f, list) in members.iter().enumerate() {
            let col = &self.columns[f];
            let n = list.len();
            let parent = total * total / n as f64;
            let mut left_sum = 0.0;
            for k in 0..n - 1 {
                left_sum += self.residual[list[k]];
                let (a, b) = (col[list[k]], col[list[k + 1]]);
                if a >= b {
                    continue;
                }
                let nl = (k + 1) as f64;
                let nr = (n - k - 1) as f64;
                let right_sum = total - left_sum;
                let gain = left_sum * left_sum / nl + right_sum * right_sum / nr - parent;
                if gain > 0.0 && best.as_ref().is_none_or(|b| gain > b.gain) {
                    best = Some(BestSplit {
                        gain,
                        feature: f,
                        threshold: midpoint(a, b),
                    });
                }
            }
        }
        best
    }
}

fn midpoint(a: f64, b: f64) -> f64 {
    let m = a + (b - a) / 2.0;
    // adjacent floats: keep `a` on the left
    if m >= b {
        a
    } else {
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data(rows: &[&[f64]], y: &[f64]) -> Dataset {
        let nf = rows.first().map_or(0, |r| r.len());
        Dataset::new(
            (0..nf).map(|i| format!("f{i}")).collect(),
            rows.iter().map(|r| r.to_vec()).collect(),
            y.to_vec(),
        )
        .unwrap()
    }

    #[test]
    fn empty_ensemble_predicts_mean() {
        let d = data(&[&[0.0], &[1.0], &[5.0]], &[1.0, 2.0, 6.0]);
        let m = fit_gbrt(&d, &HyperParams::new(0, 0.1, 3).unwrap()).unwrap();
        assert!(m.trees.is_empty());
        assert_eq!(m.predict(&d), [3.0, 3.0, 3.0]);
    }

    #[test]
    fn single_stump_separates_two_points() {
        let d = data(&[&[0.0], &[1.0]], &[0.0, 1.0]);
        let m = fit_gbrt(&d, &HyperParams::new(1, 1.0, 1).unwrap()).unwrap();
        assert_eq!(m.predict(&d), [0.0, 1.0]);
        assert_eq!(m.trees[0].root_split(), Some((0, 0.5)));
    }

    #[test]
    fn ensemble_prediction_identity() {
        let d = data(
            &[&[0.0, 1.0], &[1.0, 0.0], &[2.0, 3.0], &[3.0, 1.0], &[4.0, 2.0]],
            &[1.0, 3.0, 2.0, 5.0, 4.0],
        );
        let m = fit_gbrt(&d, &HyperParams::new(4, 0.3, 2).unwrap()).unwrap();
        for row in &d.rows {
            let by_hand = m.base_prediction + 0.3 * m.trees.iter().map(|t| t.predict(row)).sum::<f64>();
            assert_eq!(m.predict_row(row), by_hand);
        }
        assert!(m.trees.iter().all(|t| t.depth() <= 2));
    }

    #[test]
    fn constant_features_give_leaf() {
        let d = data(&[&[1.0], &[1.0], &[1.0]], &[0.0, 3.0, 6.0]);
        let m = fit_gbrt(&d, &HyperParams::new(1, 1.0, 3).unwrap()).unwrap();
        assert_eq!(m.trees[0].nodes.len(), 1);
    }

    #[test]
    fn invalid_hyperparams() {
        assert!(HyperParams::new(10, 0.0, 2).is_err());
        assert!(HyperParams::new(10, 1.5, 2).is_err());
        assert!(HyperParams::new(10, 0.1, 0).is_err());
        assert!(HyperParams::new(10, 1.0, 1).is_ok());
    }

    #[test]
    fn deep_tree_interpolates_training_data() {
        let xs: Vec<Vec<f64>> = (0..16).map(|i| vec![i as f64]).collect();
        let rows: Vec<&[f64]> = xs.iter().map(|r| r.as_slice()).collect();
        let y: Vec<f64> = (0..16).map(|i| ((i * 7) % 5) as f64).collect();
        let d = data(&rows, &y);
        // greedy splits need not be balanced, so allow one level per row
        let m = fit_gbrt(&d, &HyperParams::new(1, 1.0, 16).unwrap()).unwrap();
        for (p, t) in m.predict(&d).iter().zip(&y) {
            assert!((p - t).abs() < 1e-12);
        }
    }

    #[test]
    fn staged_predictions_match_truncated_models() {
        let d = data(
            &[&[0.0], &[1.0], &[2.0], &[3.0], &[4.0], &[5.0]],
            &[1.0, 0.0, 2.0, 5.0, 4.0, 3.0],
        );
        let full = fit_gbrt(&d, &HyperParams::new(6, 0.5, 1).unwrap()).unwrap();
        let mut staged = Vec::new();
        full.staged_predict(&d, |m, p| staged.push((m, p.to_vec())));
        for (m, p) in staged {
            let short = fit_gbrt(&d, &HyperParams::new(m, 0.5, 1).unwrap()).unwrap();
            for (a, b) in short.predict(&d).iter().zip(&p) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
