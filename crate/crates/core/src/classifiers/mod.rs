//! Tree-based binary classifiers sharing one fit/predict contract.
//!
//! All three learners split on thresholds placed at midpoints between
//! consecutive distinct feature values present in a node, and break ties by
//! lowest feature index, then lowest threshold. None of them draws random
//! numbers, so a fit is a pure function of data and hyperparameters.

mod adaboost;
mod gbt;
mod tree;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use adaboost::{fit_adaboost_traced, AdaBoostModel, AdaBoostRound, Stump};
pub use gbt::{fit_gbt_traced, leaf_value, GbtModel, RegressionNode, RegressionTree};
pub use tree::{best_gini_split, gini, DecisionTree, GiniSplit, TreeNode};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparameters {
    pub tree_max_depth: usize,
    pub tree_min_leaf: usize,
    pub ada_rounds: usize,
    /// Zero is allowed and yields a prior-only model.
    pub gbt_rounds: usize,
    pub gbt_depth: usize,
    pub gbt_learning_rate: f64,
    pub gbt_l2: f64,
    /// Recorded for provenance; the learners themselves are deterministic.
    pub seed: u64,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Self {
            tree_max_depth: 4,
            tree_min_leaf: 5,
            ada_rounds: 50,
            gbt_rounds: 100,
            gbt_depth: 3,
            gbt_learning_rate: 0.1,
            gbt_l2: 1.0,
            seed: 0,
        }
    }
}

impl Hyperparameters {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("tree_max_depth", self.tree_max_depth),
            ("tree_min_leaf", self.tree_min_leaf),
            ("ada_rounds", self.ada_rounds),
            ("gbt_depth", self.gbt_depth),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if !(self.gbt_learning_rate > 0.0 && self.gbt_learning_rate <= 1.0) {
            return Err(Error::Config(format!(
                "gbt_learning_rate {} must lie in (0, 1]",
                self.gbt_learning_rate
            )));
        }
        if !(self.gbt_l2 > 0.0 && self.gbt_l2.is_finite()) {
            return Err(Error::Config(format!("gbt_l2 {} must be positive", self.gbt_l2)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelFamily {
    DecisionTree,
    #[serde(rename = "adaboost")]
    AdaBoost,
    Gbt,
}

impl ModelFamily {
    pub const ALL: [ModelFamily; 3] = [ModelFamily::DecisionTree, ModelFamily::AdaBoost, ModelFamily::Gbt];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelFamily::DecisionTree => "decision_tree",
            ModelFamily::AdaBoost => "adaboost",
            ModelFamily::Gbt => "gbt",
        }
    }
}

impl fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelFamily {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        ModelFamily::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| format!("unknown model family `{s}`"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelParams {
    DecisionTree(DecisionTree),
    AdaBoost(AdaBoostModel),
    Gbt(GbtModel),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub family: ModelFamily,
    pub feature_names: Vec<String>,
    pub params: ModelParams,
}

impl TrainedModel {
    /// Rows must have exactly the training columns, in training order.
    pub fn predict(&self, rows: &[Vec<f64>]) -> Result<Vec<u8>> {
        let expected = self.feature_names.len();
        if let Some(bad) = rows.iter().find(|r| r.len() != expected) {
            return Err(Error::ColumnMismatch {
                expected,
                actual: bad.len(),
            });
        }
        Ok(rows
            .iter()
            .map(|r| match &self.params {
                ModelParams::DecisionTree(t) => t.predict_row(r),
                ModelParams::AdaBoost(a) => a.predict_row(r),
                ModelParams::Gbt(g) => g.predict_row(r),
            })
            .collect())
    }

    /// Like [`predict`](Self::predict) but also checks column names.
    pub fn predict_named(&self, names: &[String], rows: &[Vec<f64>]) -> Result<Vec<u8>> {
        if names != self.feature_names.as_slice() {
            return Err(Error::ColumnMismatch {
                expected: self.feature_names.len(),
                actual: names.len(),
            });
        }
        self.predict(rows)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Human-readable tree dump; `None` for ensembles.
    pub fn dump(&self) -> Option<String> {
        match &self.params {
            ModelParams::DecisionTree(t) => Some(t.dump(&self.feature_names)),
            _ => None,
        }
    }
}

pub fn fit(
    family: ModelFamily,
    x: &[Vec<f64>],
    y: &[u8],
    feature_names: &[String],
    hp: &Hyperparameters,
) -> Result<TrainedModel> {
    match family {
        ModelFamily::DecisionTree => fit_decision_tree(x, y, feature_names, hp),
        ModelFamily::AdaBoost => fit_adaboost(x, y, feature_names, hp),
        ModelFamily::Gbt => fit_gbt(x, y, feature_names, hp),
    }
}

pub fn fit_decision_tree(
    x: &[Vec<f64>],
    y: &[u8],
    feature_names: &[String],
    hp: &Hyperparameters,
) -> Result<TrainedModel> {
    let data = Binned::new(x, y, feature_names.len())?;
    Ok(TrainedModel {
        family: ModelFamily::DecisionTree,
        feature_names: feature_names.to_vec(),
        params: ModelParams::DecisionTree(DecisionTree::fit(&data, hp.tree_max_depth, hp.tree_min_leaf)),
    })
}

pub fn fit_adaboost(x: &[Vec<f64>], y: &[u8], feature_names: &[String], hp: &Hyperparameters) -> Result<TrainedModel> {
    let (model, _) = fit_adaboost_traced(x, y, feature_names.len(), hp.ada_rounds)?;
    Ok(TrainedModel {
        family: ModelFamily::AdaBoost,
        feature_names: feature_names.to_vec(),
        params: ModelParams::AdaBoost(model),
    })
}

pub fn fit_gbt(x: &[Vec<f64>], y: &[u8], feature_names: &[String], hp: &Hyperparameters) -> Result<TrainedModel> {
    let model = gbt::fit_gbt_untraced(x, y, feature_names.len(), hp)?;
    Ok(TrainedModel {
        family: ModelFamily::Gbt,
        feature_names: feature_names.to_vec(),
        params: ModelParams::Gbt(model),
    })
}

/// Column-major view of the training data with each feature mapped to the
/// rank of its value among the feature's sorted distinct values.
pub(crate) struct Binned<'a> {
    pub y: &'a [u8],
    /// Sorted distinct values per feature.
    pub values: Vec<Vec<f64>>,
    /// `bins[f][i]` indexes `values[f]` for row `i`.
    pub bins: Vec<Vec<u32>>,
}

impl<'a> Binned<'a> {
    pub fn new(x: &[Vec<f64>], y: &'a [u8], n_features: usize) -> Result<Self> {
        if x.is_empty() {
            return Err(Error::EmptyInput);
        }
        if x.len() != y.len() {
            return Err(Error::LengthMismatch(x.len(), y.len()));
        }
        if let Some(bad) = x.iter().find(|r| r.len() != n_features) {
            return Err(Error::ColumnMismatch {
                expected: n_features,
                actual: bad.len(),
            });
        }
        if x.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Config("feature values must be finite".into()));
        }
        let mut values = Vec::with_capacity(n_features);
        let mut bins = Vec::with_capacity(n_features);
        for f in 0..n_features {
            let mut distinct: Vec<f64> = x.iter().map(|r| r[f]).collect();
            distinct.sort_by(f64::total_cmp);
            distinct.dedup();
            let col = x
                .iter()
                .map(|r| distinct.partition_point(|&v| v < r[f]) as u32)
                .collect();
            values.push(distinct);
            bins.push(col);
        }
        Ok(Self { y, values, bins })
    }

    pub fn n_rows(&self) -> usize {
        self.y.len()
    }

    pub fn n_features(&self) -> usize {
        self.values.len()
    }

    pub fn threshold(&self, feature: usize, lower_bin: usize, upper_bin: usize) -> f64 {
        let v = &self.values[feature];
        (v[lower_bin] + v[upper_bin]) / 2.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("f{i}")).collect()
    }

    #[test]
    fn hyperparameter_validation() {
        assert!(Hyperparameters::default().validate().is_ok());
        let hp = Hyperparameters {
            gbt_learning_rate: 0.0,
            ..Default::default()
        };
        assert!(hp.validate().is_err());
        let hp = Hyperparameters {
            tree_min_leaf: 0,
            ..Default::default()
        };
        assert!(hp.validate().is_err());
        let hp = Hyperparameters {
            gbt_rounds: 0,
            ..Default::default()
        };
        assert!(hp.validate().is_ok());
    }

    #[test]
    fn predict_contract() {
        let x = vec![vec![1.0], vec![1.0], vec![3.0], vec![3.0]];
        let y = [0, 0, 1, 1];
        let hp = Hyperparameters {
            tree_min_leaf: 1,
            ..Default::default()
        };
        for family in ModelFamily::ALL {
            let m = fit(family, &x, &y, &names(1), &hp).unwrap();
            assert_eq!(m.predict(&[]).unwrap(), Vec::<u8>::new());
            assert!(matches!(
                m.predict(&[vec![1.0, 2.0]]),
                Err(Error::ColumnMismatch { expected: 1, actual: 2 })
            ));
            assert!(m.predict_named(&names(1), &x).is_ok());
            assert!(m.predict_named(&["g".to_string()], &x).is_err());
            let a = m.predict(&x).unwrap();
            assert_eq!(a, m.predict(&x).unwrap());
            assert_eq!(a, y, "{family}");
            let back = TrainedModel::from_json(&m.to_json().unwrap()).unwrap();
            assert_eq!(back.to_json().unwrap(), m.to_json().unwrap());
            assert_eq!(back.predict(&x).unwrap(), a);
        }
    }

    #[test]
    fn empty_input_is_an_error() {
        let hp = Hyperparameters::default();
        for family in ModelFamily::ALL {
            assert!(matches!(fit(family, &[], &[], &names(1), &hp), Err(Error::EmptyInput)));
        }
    }

    #[test]
    fn binning_ranks_values() {
        let x = vec![vec![3.0], vec![1.0], vec![3.0], vec![2.5]];
        let y = [0, 1, 0, 1];
        let b = Binned::new(&x, &y, 1).unwrap();
        assert_eq!(b.values[0], [1.0, 2.5, 3.0]);
        assert_eq!(b.bins[0], [2, 0, 2, 1]);
        assert_eq!(b.threshold(0, 0, 1), 1.75);
    }
}
