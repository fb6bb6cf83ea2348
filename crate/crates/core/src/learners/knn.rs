use serde::{Deserialize, Serialize};

use super::params::{ParamReader, Params};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::neighbors::KdTree;

/// Stored training rows; the probability is the class-1 share of the `k`
/// nearest rows (ties by lower training index).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnModel {
    pub k: usize,
    pub labels: Vec<u8>,
    pub index: KdTree,
}

pub(super) fn fit(params: &Params, x: &Matrix, y: &[u8]) -> Result<KnnModel> {
    let k = ParamReader::new("knn", params).usize_or("k", 5)?;
    if k == 0 {
        return Err(Error::InvalidArgument("knn: k must be >= 1".into()));
    }
    Ok(KnnModel {
        k,
        labels: y.to_vec(),
        index: KdTree::build(x.clone()),
    })
}

impl KnnModel {
    pub fn predict_proba(&self, rows: &Matrix) -> Vec<f64> {
        self.index
            .knn_batch(rows, self.k)
            .into_iter()
            .map(|nb| {
                let pos = nb.iter().filter(|n| self.labels[n.index] == 1).count();
                pos as f64 / nb.len() as f64
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use crate::learners::{fit_xy, Family, LearnerSpec};
    use crate::matrix::Matrix;
    use crate::Classifier;
    use rand::seq::SliceRandom;
    use rand::Rng;

    fn names(p: usize) -> Vec<String> {
        (0..p).map(|j| format!("f{j}")).collect()
    }

    #[test]
    fn one_nn_training_accuracy_is_perfect() {
        let mut rng = crate::rng::seeded(1);
        let x = Matrix::from_vec(200, 3, (0..600).map(|_| rng.gen()).collect()).unwrap();
        let y: Vec<u8> = (0..200).map(|_| rng.gen_range(0..2)).collect();
        let m = fit_xy(
            &LearnerSpec::new(Family::Knn).with("k", 1i64),
            &x,
            &y,
            names(3),
        )
        .unwrap();
        assert_eq!(m.predict(&x, 0.5).unwrap(), y);
    }

    #[test]
    fn unanimous_vote() {
        let x = Matrix::from_rows(&[[0.0], [0.1], [0.2], [0.3], [0.4], [9.0], [9.5]]).unwrap();
        let y = [1, 1, 1, 1, 1, 0, 0];
        let m = fit_xy(&LearnerSpec::new(Family::Knn), &x, &y, names(1)).unwrap();
        let p = m
            .predict_proba(&Matrix::from_rows(&[[0.2]]).unwrap())
            .unwrap();
        assert_eq!(p, vec![1.0]);
    }

    #[test]
    fn invariant_to_training_row_permutation() {
        let mut rng = crate::rng::seeded(6);
        let rows: Vec<[f64; 2]> = (0..150).map(|_| [rng.gen(), rng.gen()]).collect();
        let y: Vec<u8> = rows.iter().map(|r| u8::from(r[0] + r[1] > 1.0)).collect();
        let q = Matrix::from_vec(40, 2, (0..80).map(|_| rng.gen()).collect()).unwrap();
        let spec = LearnerSpec::new(Family::Knn).with("k", 7i64);
        let base = fit_xy(&spec, &Matrix::from_rows(&rows).unwrap(), &y, names(2)).unwrap();

        let mut perm: Vec<usize> = (0..150).collect();
        perm.shuffle(&mut rng);
        let prow: Vec<[f64; 2]> = perm.iter().map(|&i| rows[i]).collect();
        let py: Vec<u8> = perm.iter().map(|&i| y[i]).collect();
        let shuffled = fit_xy(&spec, &Matrix::from_rows(&prow).unwrap(), &py, names(2)).unwrap();
        assert_eq!(
            base.predict_proba(&q).unwrap(),
            shuffled.predict_proba(&q).unwrap()
        );
    }
}
