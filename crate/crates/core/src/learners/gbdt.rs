//! Newton boosting of histogram trees on the logistic loss.

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::params::{ParamReader, Params};
use super::sigmoid;
use super::tree::{BinnedMatrix, GrowConfig, Grower, Newton, Stats, TreeEnsemble, TreeOutput};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::{self, derive_seed};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_child_weight: f64,
    pub l2_reg: f64,
    pub max_bins: usize,
    pub subsample: f64,
}

impl GbdtParams {
    /// Named defaults standing in for the common boosting libraries:
    ///
    /// | preset | trees | depth | lr   | min_child_weight | l2  | bins | subsample |
    /// |--------|-------|-------|------|------------------|-----|------|-----------|
    /// | `xgb`  | 300   | 6     | 0.1  | 1.0              | 1.0 | 256  | 0.8       |
    /// | `lgbm` | 200   | 5     | 0.1  | 1e-3             | 0.0 | 255  | 1.0       |
    /// | `cat`  | 400   | 6     | 0.08 | 1.0              | 3.0 | 254  | 0.8       |
    /// | `gb`   | 100   | 3     | 0.1  | 1e-3             | 0.0 | 256  | 1.0       |
    pub fn preset(name: &str) -> Result<Self> {
        let (n_trees, max_depth, learning_rate, min_child_weight, l2_reg, max_bins, subsample) =
            match name {
                "xgb" => (300, 6, 0.1, 1.0, 1.0, 256, 0.8),
                "lgbm" => (200, 5, 0.1, 1e-3, 0.0, 255, 1.0),
                "cat" => (400, 6, 0.08, 1.0, 3.0, 254, 0.8),
                "gb" => (100, 3, 0.1, 1e-3, 0.0, 256, 1.0),
                other => {
                    return Err(Error::InvalidArgument(format!(
                        "unknown gbdt preset `{other}`"
                    )))
                }
            };
        Ok(GbdtParams {
            n_trees,
            max_depth,
            learning_rate,
            min_child_weight,
            l2_reg,
            max_bins,
            subsample,
        })
    }

    pub fn from_params(params: &Params) -> Result<Self> {
        let r = ParamReader::new("gbdt", params);
        let base = Self::preset(r.str_or("preset", "xgb")?)?;
        let p = GbdtParams {
            n_trees: r.usize_or("n_trees", base.n_trees)?,
            max_depth: r.usize_or("max_depth", base.max_depth)?,
            learning_rate: r.f64_or("learning_rate", base.learning_rate)?,
            min_child_weight: r.f64_or("min_child_weight", base.min_child_weight)?,
            l2_reg: r.f64_or("l2_reg", base.l2_reg)?,
            max_bins: r.usize_or("max_bins", base.max_bins)?,
            subsample: r.f64_or("subsample", base.subsample)?,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::InvalidArgument("gbdt: n_trees must be >= 1".into()));
        }
        if !(2..=u16::MAX as usize).contains(&self.max_bins) {
            return Err(Error::InvalidArgument(
                "gbdt: max_bins must lie in [2, 65535]".into(),
            ));
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return Err(Error::InvalidArgument(
                "gbdt: subsample must lie in (0, 1]".into(),
            ));
        }
        if self.learning_rate.is_nan()
            || self.learning_rate <= 0.0
            || self.l2_reg < 0.0
            || self.min_child_weight < 0.0
        {
            return Err(Error::InvalidArgument(
                "gbdt: learning_rate must be > 0, l2_reg and min_child_weight >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Logistic loss `ln(1 + e^m) − y·m` of a raw margin.
pub fn log_loss(y: f64, margin: f64) -> f64 {
    margin.max(0.0) + (-margin.abs()).exp().ln_1p() - y * margin
}

/// First and second derivative of [`log_loss`] in the margin.
pub fn logistic_grad_hess(y: f64, margin: f64) -> (f64, f64) {
    let p = sigmoid(margin);
    (p - y, p * (1.0 - p))
}

/// Returns the ensemble and the mean training log-loss after each round.
pub fn fit(p: &GbdtParams, x: &Matrix, y: &[u8], seed: u64) -> Result<(TreeEnsemble, Vec<f64>)> {
    p.validate()?;
    let n = x.rows();
    let prior = (y.iter().filter(|&&v| v == 1).count() as f64 / n as f64).clamp(1e-12, 1.0 - 1e-12);
    let base_score = (prior / (1.0 - prior)).ln();
    let binned = BinnedMatrix::new(x, p.max_bins);
    let criterion = Newton {
        l2: p.l2_reg,
        min_child_weight: p.min_child_weight,
        learning_rate: p.learning_rate,
    };
    let cfg = GrowConfig {
        max_depth: p.max_depth,
        min_split_rows: 2,
        features_per_node: None,
    };
    let yf: Vec<f64> = y.iter().map(|&v| f64::from(v)).collect();
    let mut margin = vec![base_score; n];
    let mut trees = Vec::with_capacity(p.n_trees);
    let mut loss_trace = Vec::with_capacity(p.n_trees);
    let n_sample = ((p.subsample * n as f64).round() as usize).clamp(1, n);

    for round in 0..p.n_trees {
        let stats: Vec<Stats> = margin
            .par_iter()
            .zip(&yf)
            .map(|(&m, &t)| {
                let (g, h) = logistic_grad_hess(t, m);
                Stats { s0: g, s1: h }
            })
            .collect();
        let rows: Vec<u32> = if n_sample < n {
            let mut r = rng::seeded(derive_seed(seed, round as u64));
            let mut idx: Vec<u32> = sample(&mut r, n, n_sample)
                .into_iter()
                .map(|i| i as u32)
                .collect();
            idx.sort_unstable();
            idx
        } else {
            (0..n as u32).collect()
        };
        let tree = Grower::new(
            &binned,
            &stats,
            &criterion,
            &cfg,
            derive_seed(seed, round as u64),
        )
        .grow(rows);
        margin
            .par_iter_mut()
            .enumerate()
            .for_each(|(i, m)| *m += tree.predict_binned(&binned, i));
        trees.push(tree);
        let total: f64 = margin.iter().zip(&yf).map(|(&m, &t)| log_loss(t, m)).sum();
        loss_trace.push(total / n as f64);
    }
    Ok((
        TreeEnsemble {
            trees,
            output: TreeOutput::Logit {
                base_score,
                learning_rate: p.learning_rate,
            },
        },
        loss_trace,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::{fit_xy, LearnerSpec};
    use crate::Classifier;
    use rand::Rng;

    fn xor(n: usize, seed: u64) -> (Matrix, Vec<u8>) {
        let mut rng = rng::seeded(seed);
        let mut data = Vec::with_capacity(2 * n);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let a: f64 = rng.gen();
            let b: f64 = rng.gen();
            data.extend([a, b]);
            y.push(u8::from((a > 0.5) != (b > 0.5)));
        }
        (Matrix::from_vec(n, 2, data).unwrap(), y)
    }

    fn accuracy(m: &impl Classifier, x: &Matrix, y: &[u8]) -> f64 {
        let pred = m.predict(x, 0.5).unwrap();
        pred.iter().zip(y).filter(|(a, b)| a == b).count() as f64 / y.len() as f64
    }

    #[test]
    fn xor_needs_depth_two() {
        let (x, y) = xor(400, 21);
        let names = vec!["a".to_string(), "b".to_string()];
        let spec = |depth: i64| {
            LearnerSpec::gbdt_preset("xgb")
                .with("max_depth", depth)
                .with("n_trees", 50i64)
                .with("subsample", 1.0)
                .with("learning_rate", 0.3)
        };
        let stumps = fit_xy(&spec(1), &x, &y, names.clone()).unwrap();
        let deep = fit_xy(&spec(2), &x, &y, names).unwrap();
        let (a1, a2) = (accuracy(&stumps, &x, &y), accuracy(&deep, &x, &y));
        assert!(a1 < 0.7, "depth-1 accuracy {a1}");
        assert!(a2 >= 0.99, "depth-2 accuracy {a2}");
    }

    #[test]
    fn empty_ensemble_returns_base_rate() {
        let ens = TreeEnsemble {
            trees: vec![],
            output: TreeOutput::Logit {
                base_score: 0.7,
                learning_rate: 0.1,
            },
        };
        let x = Matrix::from_rows(&[[1.0], [2.0]]).unwrap();
        assert_eq!(ens.predict_proba(&x), vec![sigmoid(0.7); 2]);
    }

    #[test]
    fn training_loss_non_increasing() {
        let mut rng = rng::seeded(31);
        for trial in 0..5 {
            let n = 300;
            let x = Matrix::from_vec(n, 4, (0..4 * n).map(|_| rng.gen::<f64>()).collect()).unwrap();
            let y: Vec<u8> = (0..n)
                .map(|i| u8::from(x.get(i, 0) + 0.5 * x.get(i, 1) + 0.3 * rng.gen::<f64>() > 0.9))
                .collect();
            let p = GbdtParams {
                subsample: 1.0,
                learning_rate: 0.3,
                n_trees: 40,
                ..GbdtParams::preset("xgb").unwrap()
            };
            let (_, trace) = fit(&p, &x, &y, trial).unwrap();
            for w in trace.windows(2) {
                assert!(w[1] <= w[0] + 1e-12, "trial {trial}: {} -> {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn informative_feature_dominates_importance() {
        let mut rng = rng::seeded(17);
        let n = 400;
        let x = Matrix::from_vec(n, 5, (0..5 * n).map(|_| rng.gen::<f64>()).collect()).unwrap();
        let y: Vec<u8> = (0..n).map(|i| u8::from(x.get(i, 2) > 0.5)).collect();
        let names: Vec<String> = (0..5).map(|j| format!("f{j}")).collect();
        let m = fit_xy(
            &LearnerSpec::gbdt_preset("gb").with_seed(1),
            &x,
            &y,
            names.clone(),
        )
        .unwrap();
        let imp = m.feature_importance().unwrap();
        let top = imp
            .iter()
            .max_by(|a, b| a.score.total_cmp(&b.score))
            .unwrap();
        assert_eq!(top.name, "f2");

        // oracle: without the feature, held-out accuracy collapses
        let xt = Matrix::from_vec(n, 5, (0..5 * n).map(|_| rng.gen::<f64>()).collect()).unwrap();
        let yt: Vec<u8> = (0..n).map(|i| u8::from(xt.get(i, 2) > 0.5)).collect();
        let keep = [0usize, 1, 3, 4];
        let names_r: Vec<String> = keep.iter().map(|&j| names[j].clone()).collect();
        let without = fit_xy(
            &LearnerSpec::gbdt_preset("gb").with_seed(1),
            &x.select_columns(&keep),
            &y,
            names_r,
        )
        .unwrap();
        let drop = accuracy(&m, &xt, &yt) - accuracy(&without, &xt.select_columns(&keep), &yt);
        assert!(drop > 0.3, "{drop}");
    }

    #[test]
    fn unknown_preset_rejected() {
        assert!(GbdtParams::preset("catboost").is_err());
    }
}
