//! Individual classifiers.
//!
//! | family          | parameters (default)                                                  |
//! |-----------------|-----------------------------------------------------------------------|
//! | `logreg`        | `c` (1.0), `max_iter` (100), `tol` (1e-8)                             |
//! | `linear_svc`    | `lambda` (1e-4), `epochs` (20)                                        |
//! | `gaussian_nb`   | `var_floor` (1e-9)                                                    |
//! | `knn`           | `k` (5)                                                               |
//! | `tree`          | `max_depth` (0 = unlimited), `min_samples_split` (2), `min_samples_leaf` (1), `max_bins` (256) |
//! | `random_forest` | `n_trees` (100), `max_features` (`sqrt` / `all` / integer), `bootstrap` (1), plus the `tree` parameters |
//! | `gbdt`          | `preset` (`xgb`), `n_trees`, `max_depth`, `learning_rate`, `min_child_weight`, `l2_reg`, `max_bins`, `subsample` |
//!
//! GBDT presets fill in every parameter not given explicitly; see
//! [`GbdtParams::preset`].

mod gbdt;
mod knn;
mod linear;
mod naive_bayes;
mod params;
mod tree;

pub use gbdt::{log_loss, logistic_grad_hess, GbdtParams};
pub use knn::KnnModel;
pub use linear::{logistic_irls, LinearModel, LogisticFit};
pub use naive_bayes::GaussianNb;
pub use params::{ParamValue, Params};
pub use tree::{ForestParams, MaxFeatures, Tree, TreeEnsemble, TreeNode, TreeOutput};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::Classifier;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Logreg,
    LinearSvc,
    GaussianNb,
    Knn,
    Tree,
    RandomForest,
    Gbdt,
}

impl Family {
    pub const ALL: [Family; 7] = [
        Family::Logreg,
        Family::LinearSvc,
        Family::GaussianNb,
        Family::Knn,
        Family::Tree,
        Family::RandomForest,
        Family::Gbdt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::Logreg => "logreg",
            Family::LinearSvc => "linear_svc",
            Family::GaussianNb => "gaussian_nb",
            Family::Knn => "knn",
            Family::Tree => "tree",
            Family::RandomForest => "random_forest",
            Family::Gbdt => "gbdt",
        }
    }

    /// Accepted hyperparameter names.
    pub fn param_names(self) -> &'static [&'static str] {
        match self {
            Family::Logreg => &["c", "max_iter", "tol"],
            Family::LinearSvc => &["lambda", "epochs"],
            Family::GaussianNb => &["var_floor"],
            Family::Knn => &["k"],
            Family::Tree => &[
                "max_depth",
                "min_samples_split",
                "min_samples_leaf",
                "max_bins",
            ],
            Family::RandomForest => &[
                "n_trees",
                "max_depth",
                "min_samples_split",
                "min_samples_leaf",
                "max_bins",
                "max_features",
                "bootstrap",
            ],
            Family::Gbdt => &[
                "preset",
                "n_trees",
                "max_depth",
                "learning_rate",
                "min_child_weight",
                "l2_reg",
                "max_bins",
                "subsample",
            ],
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.replace('-', "_");
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown learner family `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerSpec {
    pub family: Family,
    #[serde(default)]
    pub params: Params,
    #[serde(default)]
    pub seed: u64,
}

impl LearnerSpec {
    pub fn new(family: Family) -> Self {
        LearnerSpec {
            family,
            params: Params::new(),
            seed: 0,
        }
    }

    pub fn gbdt_preset(preset: &str) -> Self {
        LearnerSpec::new(Family::Gbdt).with("preset", preset)
    }

    pub fn with(mut self, name: &str, value: impl Into<ParamValue>) -> Self {
        self.params.insert(name.to_string(), value.into());
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let known = self.family.param_names();
        for name in self.params.keys() {
            if !known.contains(&name.as_str()) {
                return Err(Error::UnknownParam {
                    family: self.family.name().to_string(),
                    param: name.clone(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ModelKind {
    Linear(LinearModel),
    GaussianNb(GaussianNb),
    Knn(KnnModel),
    Trees(TreeEnsemble),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub spec: LearnerSpec,
    pub feature_names: Vec<String>,
    pub train_rows: usize,
    pub kind: ModelKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScore {
    pub name: String,
    pub score: f64,
}

pub fn fit(spec: &LearnerSpec, train: &Dataset) -> Result<TrainedModel> {
    fit_xy(spec, &train.features, &train.labels, train.feature_names())
}

/// Fits on a raw matrix; `names` label its columns.
pub fn fit_xy(
    spec: &LearnerSpec,
    x: &Matrix,
    y: &[u8],
    names: Vec<String>,
) -> Result<TrainedModel> {
    spec.validate()?;
    if x.rows() == 0 {
        return Err(Error::EmptyDataset);
    }
    if y.len() != x.rows() {
        return Err(Error::DimensionMismatch {
            expected: x.rows(),
            got: y.len(),
        });
    }
    if names.len() != x.cols() {
        return Err(Error::DimensionMismatch {
            expected: x.cols(),
            got: names.len(),
        });
    }
    x.ensure_finite()?;
    let positives = y.iter().filter(|&&v| v == 1).count();
    if spec.family != Family::Knn && (positives == 0 || positives == y.len()) {
        return Err(Error::SingleClass);
    }
    let kind = match spec.family {
        Family::Logreg => ModelKind::Linear(linear::fit_logreg(&spec.params, x, y)?),
        Family::LinearSvc => {
            ModelKind::Linear(linear::fit_linear_svc(&spec.params, x, y, spec.seed)?)
        }
        Family::GaussianNb => ModelKind::GaussianNb(naive_bayes::fit(&spec.params, x, y)?),
        Family::Knn => ModelKind::Knn(knn::fit(&spec.params, x, y)?),
        Family::Tree => ModelKind::Trees(tree::fit_tree(&spec.params, x, y, spec.seed)?),
        Family::RandomForest => ModelKind::Trees(tree::fit_forest(&spec.params, x, y, spec.seed)?),
        Family::Gbdt => {
            ModelKind::Trees(gbdt::fit(&GbdtParams::from_params(&spec.params)?, x, y, spec.seed)?.0)
        }
    };
    Ok(TrainedModel {
        spec: spec.clone(),
        feature_names: names,
        train_rows: x.rows(),
        kind,
    })
}

impl TrainedModel {
    pub fn family(&self) -> Family {
        self.spec.family
    }

    /// Native importances in feature order: `|w|` for linear models,
    /// normalized total split gain for tree models.
    pub fn feature_importance(&self) -> Result<Vec<FeatureScore>> {
        let raw = match &self.kind {
            ModelKind::Linear(m) => m.weights.iter().map(|w| w.abs()).collect(),
            ModelKind::Trees(t) => t.gain_importance(self.feature_names.len()),
            ModelKind::Knn(_) => {
                return Err(Error::Unsupported(
                    "knn has no native feature importance; use metrics::permutation_importance"
                        .into(),
                ))
            }
            ModelKind::GaussianNb(_) => return Err(Error::Unsupported(
                "gaussian_nb has no native feature importance; use metrics::permutation_importance"
                    .into(),
            )),
        };
        Ok(self
            .feature_names
            .iter()
            .zip(raw)
            .map(|(n, score)| FeatureScore {
                name: n.clone(),
                score,
            })
            .collect())
    }
}

impl Classifier for TrainedModel {
    fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    fn predict_proba(&self, rows: &Matrix) -> Result<Vec<f64>> {
        if rows.cols() != self.feature_names.len() {
            return Err(Error::DimensionMismatch {
                expected: self.feature_names.len(),
                got: rows.cols(),
            });
        }
        Ok(match &self.kind {
            ModelKind::Linear(m) => m.predict_proba(rows),
            ModelKind::GaussianNb(m) => m.predict_proba(rows),
            ModelKind::Knn(m) => m.predict_proba(rows),
            ModelKind::Trees(m) => m.predict_proba(rows),
        })
    }
}

#[inline]
pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_param_rejected() {
        let spec = LearnerSpec::new(Family::Knn).with("depth", 3i64);
        assert!(matches!(spec.validate(), Err(Error::UnknownParam { .. })));
    }

    #[test]
    fn family_round_trip() {
        for f in Family::ALL {
            assert_eq!(f.name().parse::<Family>().unwrap(), f);
        }
        assert_eq!("linear-svc".parse::<Family>().unwrap(), Family::LinearSvc);
    }

    #[test]
    fn single_class_rejected_except_knn() {
        let x = Matrix::from_rows(&[[0.0], [1.0], [2.0]]).unwrap();
        let y = [1, 1, 1];
        let names = vec!["a".to_string()];
        for f in Family::ALL {
            let r = fit_xy(&LearnerSpec::new(f).with_seed(1), &x, &y, names.clone());
            if f == Family::Knn {
                assert!(r.is_ok());
            } else {
                assert!(matches!(r, Err(Error::SingleClass)), "{f}");
            }
        }
    }

    #[test]
    fn non_finite_rejected() {
        let x = Matrix::from_rows(&[[0.0], [f64::INFINITY]]).unwrap();
        let r = fit_xy(
            &LearnerSpec::new(Family::Logreg),
            &x,
            &[0, 1],
            vec!["a".into()],
        );
        assert!(matches!(r, Err(Error::NonFinite { row: 1, col: 0 })));
    }

    #[test]
    fn linear_importance_is_absolute_weight() {
        let m = TrainedModel {
            spec: LearnerSpec::new(Family::Logreg),
            feature_names: vec!["a".into(), "b".into()],
            train_rows: 0,
            kind: ModelKind::Linear(LinearModel {
                weights: vec![0.5, -2.0],
                intercept: 0.0,
                platt: None,
                iterations: 0,
                converged: true,
            }),
        };
        let imp: Vec<f64> = m
            .feature_importance()
            .unwrap()
            .into_iter()
            .map(|s| s.score)
            .collect();
        assert_eq!(imp, vec![0.5, 2.0]);
    }
}
