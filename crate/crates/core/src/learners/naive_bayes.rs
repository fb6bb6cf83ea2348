use serde::{Deserialize, Serialize};

use super::params::{ParamReader, Params};
use super::sigmoid;
use crate::error::Result;
use crate::matrix::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianNb {
    /// Indexed by class (0, 1).
    pub priors: [f64; 2],
    pub means: [Vec<f64>; 2],
    pub variances: [Vec<f64>; 2],
}

pub(super) fn fit(params: &Params, x: &Matrix, y: &[u8]) -> Result<GaussianNb> {
    let var_floor = ParamReader::new("gaussian_nb", params).f64_or("var_floor", 1e-9)?;
    let p = x.cols();
    let mut counts = [0usize; 2];
    let mut sums = [vec![0.0; p], vec![0.0; p]];
    for (row, &c) in x.iter_rows().zip(y) {
        let c = usize::from(c);
        counts[c] += 1;
        sums[c].iter_mut().zip(row).for_each(|(s, v)| *s += v);
    }
    let means = [0, 1].map(|c| {
        sums[c]
            .iter()
            .map(|s| s / counts[c] as f64)
            .collect::<Vec<_>>()
    });
    let mut sq = [vec![0.0; p], vec![0.0; p]];
    for (row, &c) in x.iter_rows().zip(y) {
        let c = usize::from(c);
        for ((s, v), m) in sq[c].iter_mut().zip(row).zip(&means[c]) {
            *s += (v - m) * (v - m);
        }
    }
    let variances = [0, 1].map(|c| {
        sq[c]
            .iter()
            .map(|s| (s / counts[c] as f64).max(var_floor))
            .collect::<Vec<_>>()
    });
    let n = y.len() as f64;
    Ok(GaussianNb {
        priors: [counts[0] as f64 / n, counts[1] as f64 / n],
        means,
        variances,
    })
}

impl GaussianNb {
    fn log_likelihood(&self, c: usize, row: &[f64]) -> f64 {
        row.iter()
            .zip(&self.means[c])
            .zip(&self.variances[c])
            .map(|((x, m), v)| {
                -0.5 * ((2.0 * std::f64::consts::PI * v).ln() + (x - m) * (x - m) / v)
            })
            .sum::<f64>()
            + self.priors[c].ln()
    }

    pub fn predict_proba(&self, rows: &Matrix) -> Vec<f64> {
        rows.iter_rows()
            .map(|r| sigmoid(self.log_likelihood(1, r) - self.log_likelihood(0, r)))
            .collect()
    }
}
