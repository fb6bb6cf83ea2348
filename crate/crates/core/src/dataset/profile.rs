use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};

/// `1 - R²` below this counts as perfect collinearity.
const COLLINEAR_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub feature: String,
    /// `counts.len() + 1` equal-width edges from min to max.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub features: Vec<String>,
    /// Row-major `p x p` Pearson correlations.
    pub matrix: Vec<Vec<f64>>,
}

/// `value` is `None` exactly when `infinite` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VifEntry {
    pub feature: String,
    pub value: Option<f64>,
    pub infinite: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassBalance {
    pub negative: usize,
    pub positive: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileReport {
    pub rows: usize,
    pub histograms: Vec<Histogram>,
    pub correlation: Correlation,
    pub vif: Vec<VifEntry>,
    pub class_balance: ClassBalance,
}

pub fn profile(d: &Dataset, bins: usize) -> Result<ProfileReport> {
    if d.row_count() < 3 {
        return Err(Error::InvalidArgument(format!(
            "profiling needs at least 3 rows, got {}",
            d.row_count()
        )));
    }
    if d.has_missing() {
        return Err(Error::HasMissing);
    }
    if bins == 0 {
        return Err(Error::InvalidArgument("bins must be >= 1".into()));
    }
    let columns = d.features.columns();
    let names = d.feature_names();

    let histograms = columns
        .par_iter()
        .zip(names.par_iter())
        .map(|(c, n)| histogram(n, c, bins))
        .collect();

    let standardized: Vec<Option<Vec<f64>>> = columns.par_iter().map(|c| standardize(c)).collect();
    let corr = correlation_matrix(&standardized);
    let vif = vif_from_correlation(&corr, &standardized)
        .into_iter()
        .zip(&names)
        .map(|(v, n)| VifEntry {
            feature: n.clone(),
            value: v,
            infinite: v.is_none(),
        })
        .collect();

    let [negative, positive] = d.class_counts();
    Ok(ProfileReport {
        rows: d.row_count(),
        histograms,
        correlation: Correlation {
            features: names,
            matrix: corr,
        },
        vif,
        class_balance: ClassBalance { negative, positive },
    })
}

fn histogram(name: &str, col: &[f64], bins: usize) -> Histogram {
    let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / bins as f64;
    let edges = (0..=bins)
        .map(|b| if b == bins { hi } else { lo + width * b as f64 })
        .collect();
    let mut counts = vec![0usize; bins];
    for &v in col {
        let b = if width > 0.0 {
            (((v - lo) / width) as usize).min(bins - 1)
        } else {
            0
        };
        counts[b] += 1;
    }
    Histogram {
        feature: name.to_string(),
        edges,
        counts,
    }
}

/// Centered, unit-norm column; `None` for constant columns.
fn standardize(col: &[f64]) -> Option<Vec<f64>> {
    let n = col.len() as f64;
    let mean = col.iter().sum::<f64>() / n;
    let centered: Vec<f64> = col.iter().map(|v| v - mean).collect();
    let norm = centered.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return None;
    }
    Some(centered.into_iter().map(|v| v / norm).collect())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Constant columns correlate 0 with everything else (1 with themselves).
fn correlation_matrix(std_cols: &[Option<Vec<f64>>]) -> Vec<Vec<f64>> {
    let p = std_cols.len();
    let pairs: Vec<(usize, usize)> = (0..p)
        .flat_map(|i| (i + 1..p).map(move |j| (i, j)))
        .collect();
    let values: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| match (&std_cols[i], &std_cols[j]) {
            (Some(a), Some(b)) => dot(a, b).clamp(-1.0, 1.0),
            _ => 0.0,
        })
        .collect();
    let mut m = vec![vec![0.0; p]; p];
    for (k, &(i, j)) in pairs.iter().enumerate() {
        m[i][j] = values[k];
        m[j][i] = values[k];
    }
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    m
}

/// `R_j² = r_jᵀ C⁻¹ r_j` with `C` the correlation matrix of the other
/// features, solved by SVD so singular sub-blocks are handled.
fn vif_from_correlation(corr: &[Vec<f64>], std_cols: &[Option<Vec<f64>>]) -> Vec<Option<f64>> {
    let p = corr.len();
    (0..p)
        .into_par_iter()
        .map(|j| {
            std_cols[j].as_ref()?;
            let others: Vec<usize> = (0..p)
                .filter(|&k| k != j && std_cols[k].is_some())
                .collect();
            if others.is_empty() {
                return Some(1.0);
            }
            let c = DMatrix::from_fn(others.len(), others.len(), |a, b| {
                corr[others[a]][others[b]]
            });
            let r = DVector::from_iterator(others.len(), others.iter().map(|&k| corr[j][k]));
            let r2 = if r.iter().all(|&v| v == 0.0) {
                0.0
            } else {
                let beta = c.svd(true, true).solve(&r, 1e-12).ok()?;
                r.dot(&beta)
            };
            let resid = 1.0 - r2;
            if resid < COLLINEAR_EPS {
                None
            } else {
                Some(1.0 / resid)
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;
    use rand::Rng;

    fn table(cols: &[Vec<f64>], labels: Vec<u8>) -> Dataset {
        let names: Vec<String> = (0..cols.len()).map(|j| format!("x{j}")).collect();
        let names: Vec<&str> = names.iter().map(String::as_str).collect();
        Dataset::new(Matrix::from_columns(cols).unwrap(), labels, &names).unwrap()
    }

    #[test]
    fn orthogonal_features_have_unit_vif() {
        // centered and mutually orthogonal
        let a = vec![1.0, -1.0, 1.0, -1.0];
        let b = vec![1.0, 1.0, -1.0, -1.0];
        let rep = profile(&table(&[a, b], vec![0, 1, 0, 1]), 4).unwrap();
        for v in &rep.vif {
            assert!((v.value.unwrap() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn duplicated_column_is_infinite() {
        let mut rng = crate::rng::seeded(3);
        let a: Vec<f64> = (0..50).map(|_| rng.gen()).collect();
        let c: Vec<f64> = (0..50).map(|_| rng.gen()).collect();
        let rep = profile(&table(&[a.clone(), a, c], vec![0; 50]), 5).unwrap();
        assert!(rep.vif[0].infinite && rep.vif[1].infinite);
        assert!(rep.vif[0].value.is_none());
        assert!(!rep.vif[2].infinite);
    }

    #[test]
    fn correlation_matches_textbook_formula() {
        let mut rng = crate::rng::seeded(11);
        let n = 120;
        let cols: Vec<Vec<f64>> = (0..5)
            .map(|k| {
                (0..n)
                    .map(|i| rng.gen::<f64>() + (k as f64) * (i as f64 % 3.0))
                    .collect()
            })
            .collect();
        let rep = profile(&table(&cols, vec![0; n]), 10).unwrap();
        let nf = n as f64;
        for i in 0..5 {
            for j in 0..5 {
                let (x, y) = (&cols[i], &cols[j]);
                let sx: f64 = x.iter().sum();
                let sy: f64 = y.iter().sum();
                let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
                let sxx: f64 = x.iter().map(|a| a * a).sum();
                let syy: f64 = y.iter().map(|a| a * a).sum();
                let r = (nf * sxy - sx * sy)
                    / ((nf * sxx - sx * sx).sqrt() * (nf * syy - sy * sy).sqrt());
                assert!((rep.correlation.matrix[i][j] - r).abs() < 1e-10, "{i},{j}");
            }
        }
    }

    #[test]
    fn histogram_counts_cover_rows() {
        let col: Vec<f64> = (0..10).map(f64::from).collect();
        let h = histogram("x", &col, 3);
        assert_eq!(h.counts.iter().sum::<usize>(), 10);
        assert_eq!(h.edges.len(), 4);
        assert_eq!(h.edges[3], 9.0);
    }

    #[test]
    fn too_few_rows() {
        let d = table(&[vec![1.0, 2.0]], vec![0, 1]);
        assert!(profile(&d, 3).is_err());
    }
}
