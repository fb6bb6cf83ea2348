//! Stacked generalization over out-of-fold base predictions.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::learners::{self, Family, LearnerSpec, TrainedModel};
use crate::matrix::Matrix;
use crate::rng::derive_seed;
use crate::tuning::{complement, kfold_indices};
use crate::Classifier;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackSpec {
    pub bases: Vec<LearnerSpec>,
    pub meta: LearnerSpec,
    #[serde(default = "default_folds")]
    pub n_folds: usize,
    #[serde(default)]
    pub passthrough: bool,
    #[serde(default)]
    pub seed: u64,
}

fn default_folds() -> usize {
    5
}

impl Default for StackSpec {
    /// GBDT (`xgb`) and KNN bases under a GBDT (`lgbm`) meta-learner.
    fn default() -> Self {
        StackSpec {
            bases: vec![
                LearnerSpec::gbdt_preset("xgb"),
                LearnerSpec::new(Family::Knn),
            ],
            meta: LearnerSpec::gbdt_preset("lgbm"),
            n_folds: 5,
            passthrough: false,
            seed: 42,
        }
    }
}

impl StackSpec {
    pub fn validate(&self) -> Result<()> {
        if self.bases.is_empty() {
            return Err(Error::InvalidArgument(
                "stack needs at least one base learner".into(),
            ));
        }
        if self.n_folds < 2 {
            return Err(Error::InvalidArgument(format!(
                "n_folds must be >= 2, got {}",
                self.n_folds
            )));
        }
        for s in self.bases.iter().chain(std::iter::once(&self.meta)) {
            s.validate()?;
        }
        Ok(())
    }

    pub fn meta_feature_names(&self, features: &[String]) -> Vec<String> {
        let mut names: Vec<String> = self
            .bases
            .iter()
            .enumerate()
            .map(|(b, s)| format!("base{b}_{}", s.family))
            .collect();
        if self.passthrough {
            names.extend(features.iter().cloned());
        }
        names
    }
}

/// Out-of-fold predictions with the fold bookkeeping used to produce them.
#[derive(Debug, Clone, PartialEq)]
pub struct OofResult {
    /// `n × n_bases`.
    pub matrix: Matrix,
    pub folds: Vec<Vec<usize>>,
    pub fold_of_row: Vec<usize>,
    /// Rows each fold's models were trained on.
    pub train_rows: Vec<Vec<usize>>,
}

impl OofResult {
    /// Fails if any row's prediction came from a model that saw that row.
    pub fn check_hygiene(&self) -> Result<()> {
        for (i, &f) in self.fold_of_row.iter().enumerate() {
            if self.train_rows[f].binary_search(&i).is_ok() {
                return Err(Error::InvalidArgument(format!(
                    "row {i} was in the training rows of its own fold {f}"
                )));
            }
        }
        Ok(())
    }
}

/// Generic out-of-fold driver. `fit_predict(base, train_rows, predict_rows)`
/// must return one probability per entry of `predict_rows`.
pub fn oof_with<F>(
    labels: &[u8],
    n_bases: usize,
    n_folds: usize,
    seed: u64,
    fit_predict: F,
) -> Result<OofResult>
where
    F: Fn(usize, &[usize], &[usize]) -> Result<Vec<f64>> + Sync,
{
    let n = labels.len();
    let folds = kfold_indices(labels, n_folds, true, seed)?;
    let train_rows: Vec<Vec<usize>> = (0..n_folds).map(|f| complement(&folds, f)).collect();
    for rows in &train_rows {
        let pos = rows.iter().filter(|&&i| labels[i] == 1).count();
        if pos == 0 || pos == rows.len() {
            return Err(Error::SingleClass);
        }
    }
    let jobs: Vec<(usize, usize)> = (0..n_bases)
        .flat_map(|b| (0..n_folds).map(move |f| (b, f)))
        .collect();
    let preds: Vec<Vec<f64>> = jobs
        .par_iter()
        .map(|&(b, f)| fit_predict(b, &train_rows[f], &folds[f]))
        .collect::<Result<_>>()?;
    let mut matrix = Matrix::zeros(n, n_bases);
    let mut fold_of_row = vec![0; n];
    for (&(b, f), p) in jobs.iter().zip(&preds) {
        if p.len() != folds[f].len() {
            return Err(Error::DimensionMismatch {
                expected: folds[f].len(),
                got: p.len(),
            });
        }
        for (&i, &v) in folds[f].iter().zip(p) {
            matrix.set(i, b, v);
            fold_of_row[i] = f;
        }
    }
    Ok(OofResult {
        matrix,
        folds,
        fold_of_row,
        train_rows,
    })
}

/// Cell `(i, b)` is base `b`'s probability for row `i` from a model trained
/// without row `i`'s fold.
pub fn oof_matrix(
    bases: &[LearnerSpec],
    train: &Dataset,
    n_folds: usize,
    seed: u64,
) -> Result<OofResult> {
    oof_with(
        &train.labels,
        bases.len(),
        n_folds,
        seed,
        |b, fit_rows, predict_rows| {
            let model = learners::fit(&bases[b], &train.subset(fit_rows))?;
            model.predict_proba(&train.features.select_rows(predict_rows))
        },
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackModel {
    pub spec: StackSpec,
    pub feature_names: Vec<String>,
    /// Refitted on the full training set.
    pub bases: Vec<TrainedModel>,
    pub meta: TrainedModel,
}

fn meta_input(passthrough: bool, base_probs: Matrix, rows: &Matrix) -> Result<Matrix> {
    if passthrough {
        base_probs.hstack(rows)
    } else {
        Ok(base_probs)
    }
}

/// Fits the meta-learner on the out-of-fold matrix, then refits every base
/// on all of `train`.
pub fn fit_stack(spec: &StackSpec, train: &Dataset) -> Result<StackModel> {
    spec.validate()?;
    let oof = oof_matrix(&spec.bases, train, spec.n_folds, derive_seed(spec.seed, 0))?;
    oof.check_hygiene()?;
    let names = train.feature_names();
    let meta_x = meta_input(spec.passthrough, oof.matrix, &train.features)?;
    let meta = learners::fit_xy(
        &spec.meta,
        &meta_x,
        &train.labels,
        spec.meta_feature_names(&names),
    )?;
    let bases = spec
        .bases
        .par_iter()
        .map(|s| learners::fit(s, train))
        .collect::<Result<Vec<_>>>()?;
    Ok(StackModel {
        spec: spec.clone(),
        feature_names: names,
        bases,
        meta,
    })
}

impl StackModel {
    /// `n × n_bases` matrix of base probabilities.
    pub fn base_probabilities(&self, rows: &Matrix) -> Result<Matrix> {
        let cols = self
            .bases
            .iter()
            .map(|b| b.predict_proba(rows))
            .collect::<Result<Vec<_>>>()?;
        if cols.is_empty() {
            return Ok(Matrix::zeros(rows.rows(), 0));
        }
        Matrix::from_columns(&cols)
    }
}

impl Classifier for StackModel {
    fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    fn predict_proba(&self, rows: &Matrix) -> Result<Vec<f64>> {
        if rows.cols() != self.n_features() {
            return Err(Error::DimensionMismatch {
                expected: self.n_features(),
                got: rows.cols(),
            });
        }
        let x = meta_input(self.spec.passthrough, self.base_probabilities(rows)?, rows)?;
        self.meta.predict_proba(&x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(n: usize) -> Dataset {
        let rows: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64, (i % 3) as f64]).collect();
        let labels: Vec<u8> = (0..n).map(|i| u8::from(i >= n / 2)).collect();
        Dataset::new(Matrix::from_rows(&rows).unwrap(), labels, &["a", "b"]).unwrap()
    }

    #[test]
    fn spec_validation() {
        assert!(StackSpec::default().validate().is_ok());
        let s = StackSpec {
            n_folds: 1,
            ..Default::default()
        };
        assert!(s.validate().is_err());
        let mut s = StackSpec::default();
        s.bases.clear();
        assert!(s.validate().is_err());
    }

    #[test]
    fn oof_rows_never_seen() {
        let d = toy(10);
        let seen = std::sync::Mutex::new(Vec::new());
        let oof = oof_with(&d.labels, 1, 5, 7, |_, fit_rows, predict_rows| {
            seen.lock()
                .unwrap()
                .push((fit_rows.to_vec(), predict_rows.to_vec()));
            Ok(vec![0.5; predict_rows.len()])
        })
        .unwrap();
        oof.check_hygiene().unwrap();
        let log = seen.into_inner().unwrap();
        assert_eq!(log.len(), 5);
        for (fit_rows, predict_rows) in log {
            assert_eq!(predict_rows.len(), 2);
            assert!(predict_rows.iter().all(|i| !fit_rows.contains(i)));
        }
    }

    #[test]
    fn single_class_fold_rejected() {
        let labels = [0, 0, 0, 0, 0, 0, 0, 0, 0, 1];
        let r = oof_with(&labels, 1, 2, 0, |_, _, p| Ok(vec![0.0; p.len()]));
        assert!(matches!(r, Err(Error::SingleClass)));
    }

    #[test]
    fn stack_predicts_probabilities() {
        let d = toy(40);
        let spec = StackSpec {
            bases: vec![
                LearnerSpec::new(Family::Logreg),
                LearnerSpec::new(Family::Knn).with("k", 3i64),
            ],
            meta: LearnerSpec::new(Family::Logreg),
            n_folds: 4,
            passthrough: false,
            seed: 1,
        };
        let m = fit_stack(&spec, &d).unwrap();
        let p = m
            .predict_proba(&Matrix::from_rows(&[[3.0, 0.0]]).unwrap())
            .unwrap();
        assert_eq!(p.len(), 1);
        assert!((0.0..=1.0).contains(&p[0]));
        assert!(m.predict_proba(&Matrix::zeros(1, 3)).is_err());
    }
}
