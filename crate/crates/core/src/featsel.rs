//! Feature ranking by mutual information, recursive feature elimination and
//! LASSO, and rank aggregation across methods.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, FeatureKind};
use crate::error::{Error, Result};
use crate::learners::logistic_irls;
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "MI")]
    MutualInfo,
    #[serde(rename = "RFE")]
    Rfe,
    #[serde(rename = "LASSO")]
    Lasso,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankEntry {
    pub name: String,
    /// 1 = best.
    pub rank: usize,
    pub score: f64,
}

/// Entries are listed best rank first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRanking {
    pub method: Method,
    pub entries: Vec<RankEntry>,
}

impl MethodRanking {
    /// Ranks by score (descending when `higher_is_better`); ties go to the
    /// lexicographically smaller name.
    pub fn from_scores(
        method: Method,
        names: &[String],
        scores: &[f64],
        higher_is_better: bool,
    ) -> Self {
        let mut order: Vec<usize> = (0..names.len()).collect();
        order.sort_by(|&a, &b| {
            let c = scores[a].total_cmp(&scores[b]);
            let c = if higher_is_better { c.reverse() } else { c };
            c.then_with(|| names[a].cmp(&names[b]))
        });
        MethodRanking {
            method,
            entries: order
                .iter()
                .enumerate()
                .map(|(r, &i)| RankEntry {
                    name: names[i].clone(),
                    rank: r + 1,
                    score: scores[i],
                })
                .collect(),
        }
    }

    pub fn rank_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().find(|e| e.name == name).map(|e| e.rank)
    }

    pub fn ordered_names(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.name.clone()).collect()
    }
}

// ---------------------------------------------------------------------------
// Mutual information
// ---------------------------------------------------------------------------

/// Plug-in mutual information (nats) of a contingency table of counts.
pub fn mi_from_contingency(table: &[Vec<f64>]) -> f64 {
    let n: f64 = table.iter().flatten().sum();
    if n <= 0.0 {
        return 0.0;
    }
    let row: Vec<f64> = table.iter().map(|r| r.iter().sum()).collect();
    let cols = table.iter().map(Vec::len).max().unwrap_or(0);
    let col: Vec<f64> = (0..cols)
        .map(|j| table.iter().map(|r| r.get(j).copied().unwrap_or(0.0)).sum())
        .collect();
    let mut mi = 0.0;
    for (i, r) in table.iter().enumerate() {
        for (j, &c) in r.iter().enumerate() {
            if c > 0.0 {
                mi += c / n * (c * n / (row[i] * col[j])).ln();
            }
        }
    }
    mi.max(0.0)
}

/// Mutual information between two discrete code vectors.
pub fn mutual_information_codes(a: &[u32], b: &[u32]) -> f64 {
    let na = a.iter().max().map_or(0, |&m| m as usize + 1);
    let nb = b.iter().max().map_or(0, |&m| m as usize + 1);
    let mut table = vec![vec![0.0; nb]; na];
    for (&x, &y) in a.iter().zip(b) {
        table[x as usize][y as usize] += 1.0;
    }
    mi_from_contingency(&table)
}

/// Discrete codes for a column: distinct values as-is for binary/ordinal
/// columns, at most `bins` quantile bins for continuous ones.
pub fn discretize(values: &[f64], kind: FeatureKind, bins: usize) -> Vec<u32> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let edges: Vec<f64> = match kind {
        FeatureKind::Continuous => {
            let n = sorted.len();
            let mut e: Vec<f64> = (1..bins.max(1))
                .map(|b| sorted[(b * n / bins).min(n - 1)])
                .collect();
            e.dedup();
            e
        }
        _ => {
            let mut d = sorted;
            d.dedup();
            // codes by position among distinct values
            return values
                .iter()
                .map(|v| d.partition_point(|x| x < v) as u32)
                .collect();
        }
    };
    values
        .iter()
        .map(|v| edges.partition_point(|e| e < v) as u32)
        .collect()
}

pub fn mutual_info(d: &Dataset, bins: usize) -> Result<MethodRanking> {
    let [neg, pos] = d.class_counts();
    if neg == 0 || pos == 0 {
        return Err(Error::SingleClass);
    }
    if d.has_missing() {
        return Err(Error::HasMissing);
    }
    let labels: Vec<u32> = d.labels.iter().map(|&l| u32::from(l)).collect();
    let scores: Vec<f64> = (0..d.n_features())
        .into_par_iter()
        .map(|j| {
            let codes = discretize(&d.features.column_vec(j), d.schema[j].kind, bins);
            mutual_information_codes(&codes, &labels)
        })
        .collect();
    Ok(MethodRanking::from_scores(
        Method::MutualInfo,
        &d.feature_names(),
        &scores,
        true,
    ))
}

// ---------------------------------------------------------------------------
// Standardization shared by RFE and LASSO
// ---------------------------------------------------------------------------

/// Zero-mean, unit (population) variance columns. Constant columns become
/// all-zero with scale 0.
pub fn standardize_columns(x: &Matrix) -> (Matrix, Vec<f64>, Vec<f64>) {
    let n = x.rows() as f64;
    let cols = x.columns();
    let stats: Vec<(f64, f64)> = cols
        .iter()
        .map(|c| {
            let mean = c.iter().sum::<f64>() / n;
            let var = c.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            (mean, var.sqrt())
        })
        .collect();
    let scaled: Vec<Vec<f64>> = cols
        .iter()
        .zip(&stats)
        .map(|(c, &(m, s))| {
            c.iter()
                .map(|v| if s > 0.0 { (v - m) / s } else { 0.0 })
                .collect()
        })
        .collect();
    let means = stats.iter().map(|s| s.0).collect();
    let sds = stats.iter().map(|s| s.1).collect();
    (
        Matrix::from_columns(&scaled).expect("columns share a length"),
        means,
        sds,
    )
}

// ---------------------------------------------------------------------------
// Recursive feature elimination
// ---------------------------------------------------------------------------

pub const RFE_C: f64 = 1.0;
pub const RFE_MAX_ITER: usize = 100;
pub const RFE_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RfeResult {
    pub ranking: MethodRanking,
    /// Names in the order they were eliminated.
    pub eliminated: Vec<String>,
}

/// Fits L2 logistic regression on the standardized surviving features and
/// drops the smallest `|coefficient|` (ties: the lexicographically larger
/// name) until `keep` remain. Survivors rank first, in name order; the rest
/// rank by reverse elimination order.
pub fn rfe_with_log(d: &Dataset, keep: usize) -> Result<RfeResult> {
    let p = d.n_features();
    if keep == 0 {
        return Err(Error::InvalidArgument("rfe: keep must be >= 1".into()));
    }
    let names = d.feature_names();
    let (z, _, _) = standardize_columns(&d.features);
    let mut alive: Vec<usize> = (0..p).collect();
    let mut eliminated = Vec::new();
    while alive.len() > keep {
        let fit = logistic_irls(
            &z.select_columns(&alive),
            &d.labels,
            RFE_C,
            RFE_MAX_ITER,
            RFE_TOL,
        );
        if !fit.converged {
            return Err(Error::NotConverged {
                iterations: fit.iterations,
            });
        }
        let weakest = (0..alive.len())
            .min_by(|&a, &b| {
                fit.weights[a]
                    .abs()
                    .total_cmp(&fit.weights[b].abs())
                    .then_with(|| names[alive[b]].cmp(&names[alive[a]]))
            })
            .expect("at least one surviving feature");
        eliminated.push(alive.remove(weakest));
    }
    let mut survivors = alive.clone();
    survivors.sort_by(|&a, &b| names[a].cmp(&names[b]));
    let order: Vec<usize> = survivors
        .into_iter()
        .chain(eliminated.iter().rev().copied())
        .collect();
    let entries = order
        .iter()
        .enumerate()
        .map(|(r, &j)| RankEntry {
            name: names[j].clone(),
            rank: r + 1,
            score: (p - r - 1) as f64,
        })
        .collect();
    Ok(RfeResult {
        ranking: MethodRanking {
            method: Method::Rfe,
            entries,
        },
        eliminated: eliminated.iter().map(|&j| names[j].clone()).collect(),
    })
}

pub fn rfe(d: &Dataset, keep: usize) -> Result<MethodRanking> {
    rfe_with_log(d, keep).map(|r| r.ranking)
}

// ---------------------------------------------------------------------------
// LASSO
// ---------------------------------------------------------------------------

/// Coefficients refer to the standardized design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoFit {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub lambda: f64,
    pub iterations_run: usize,
    pub converged: bool,
    /// Objective after each full sweep.
    pub objective_trace: Vec<f64>,
}

#[inline]
pub fn soft_threshold(z: f64, lambda: f64) -> f64 {
    z.signum() * (z.abs() - lambda).max(0.0)
}

/// Smallest λ at which every coefficient is zero: `max_j |x_jᵀ(y − ȳ)| / n`
/// over standardized columns.
pub fn lambda_max(x: &Matrix, y: &[f64]) -> f64 {
    let (z, _, _) = standardize_columns(x);
    let n = y.len() as f64;
    let ybar = y.iter().sum::<f64>() / n;
    (0..z.cols())
        .map(|j| (z.column(j).zip(y).map(|(a, b)| a * (b - ybar)).sum::<f64>() / n).abs())
        .fold(0.0, f64::max)
}

fn lasso_objective(z: &Matrix, yc: &[f64], beta: &[f64], lambda: f64) -> f64 {
    let n = yc.len() as f64;
    let rss: f64 = z
        .iter_rows()
        .zip(yc)
        .map(|(r, y)| {
            let f: f64 = r.iter().zip(beta).map(|(a, b)| a * b).sum();
            (y - f) * (y - f)
        })
        .sum();
    rss / (2.0 * n) + lambda * beta.iter().map(|b| b.abs()).sum::<f64>()
}

/// Cyclic coordinate descent on `(1/2n)‖y − Xβ − b‖² + λ‖β‖₁` over the
/// standardized columns of `x`. Stops once the largest coordinate change
/// in a sweep is below `tol`.
pub fn lasso_fit_xy(
    x: &Matrix,
    y: &[f64],
    lambda: f64,
    tol: f64,
    max_sweeps: usize,
) -> Result<LassoFit> {
    if lambda < 0.0 {
        return Err(Error::InvalidArgument("lasso: lambda must be >= 0".into()));
    }
    if y.len() != x.rows() {
        return Err(Error::DimensionMismatch {
            expected: x.rows(),
            got: y.len(),
        });
    }
    let (z, _, _) = standardize_columns(x);
    let n = y.len() as f64;
    let p = z.cols();
    let ybar = y.iter().sum::<f64>() / n;
    let yc: Vec<f64> = y.iter().map(|v| v - ybar).collect();
    let cols = z.columns();
    let norms: Vec<f64> = cols
        .iter()
        .map(|c| c.iter().map(|v| v * v).sum::<f64>() / n)
        .collect();

    let mut beta = vec![0.0; p];
    let mut resid = yc.clone();
    let mut trace = Vec::new();
    let mut sweeps = 0;
    let mut converged = false;
    while sweeps < max_sweeps {
        sweeps += 1;
        let mut max_change = 0.0f64;
        for j in 0..p {
            if norms[j] == 0.0 {
                continue;
            }
            let col = &cols[j];
            let rho =
                col.iter().zip(&resid).map(|(a, r)| a * r).sum::<f64>() / n + norms[j] * beta[j];
            let new = soft_threshold(rho, lambda) / norms[j];
            let delta = new - beta[j];
            if delta != 0.0 {
                resid.iter_mut().zip(col).for_each(|(r, a)| *r -= a * delta);
                beta[j] = new;
                max_change = max_change.max(delta.abs());
            }
        }
        trace.push(lasso_objective(&z, &yc, &beta, lambda));
        if max_change < tol {
            converged = true;
            break;
        }
    }
    Ok(LassoFit {
        coefficients: beta,
        intercept: ybar,
        lambda,
        iterations_run: sweeps,
        converged,
        objective_trace: trace,
    })
}

pub fn lasso_fit(d: &Dataset, lambda: f64, tol: f64, max_sweeps: usize) -> Result<LassoFit> {
    let y: Vec<f64> = d.labels.iter().map(|&l| f64::from(l)).collect();
    lasso_fit_xy(&d.features, &y, lambda, tol, max_sweeps)
}

/// LASSO on the 0/1 label at `λ_max / 100`, ranked by `|coefficient|`.
pub fn lasso_rank(d: &Dataset) -> Result<MethodRanking> {
    let y: Vec<f64> = d.labels.iter().map(|&l| f64::from(l)).collect();
    let lambda = lambda_max(&d.features, &y) / 100.0;
    let fit = lasso_fit_xy(&d.features, &y, lambda, 1e-7, 10_000)?;
    if !fit.converged {
        log::warn!("lasso did not converge in {} sweeps", fit.iterations_run);
    }
    let scores: Vec<f64> = fit.coefficients.iter().map(|c| c.abs()).collect();
    Ok(MethodRanking::from_scores(
        Method::Lasso,
        &d.feature_names(),
        &scores,
        true,
    ))
}

// ---------------------------------------------------------------------------
// Aggregation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateEntry {
    pub name: String,
    /// Mean of `(rank − 1)/(p − 1)` over methods; 0 is best.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRanking {
    pub methods: Vec<MethodRanking>,
    /// Best first.
    pub aggregate: Vec<AggregateEntry>,
    pub selected: Vec<String>,
}

pub fn aggregate(rankings: &[MethodRanking], keep: usize) -> Result<FeatureRanking> {
    let first = rankings
        .first()
        .ok_or_else(|| Error::InvalidArgument("aggregate needs at least one ranking".into()))?;
    let mut names = first.ordered_names();
    names.sort();
    for r in &rankings[1..] {
        let mut other = r.ordered_names();
        other.sort();
        if other != names {
            return Err(Error::FeatureSetMismatch(format!(
                "{:?} vs {:?}",
                first.method, r.method
            )));
        }
    }
    let p = names.len();
    let mut totals: BTreeMap<&str, f64> = names.iter().map(|n| (n.as_str(), 0.0)).collect();
    for r in rankings {
        for e in &r.entries {
            let norm = if p > 1 {
                (e.rank - 1) as f64 / (p - 1) as f64
            } else {
                0.0
            };
            *totals.get_mut(e.name.as_str()).expect("same feature set") += norm;
        }
    }
    let m = rankings.len() as f64;
    let mut aggregate: Vec<AggregateEntry> = totals
        .into_iter()
        .map(|(name, s)| AggregateEntry {
            name: name.to_string(),
            score: s / m,
        })
        .collect();
    aggregate.sort_by(|a, b| {
        a.score
            .total_cmp(&b.score)
            .then_with(|| a.name.cmp(&b.name))
    });
    let selected = aggregate
        .iter()
        .take(keep.min(p))
        .map(|e| e.name.clone())
        .collect();
    Ok(FeatureRanking {
        methods: rankings.to_vec(),
        aggregate,
        selected,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectConfig {
    pub keep: usize,
    pub mi_bins: usize,
}

impl Default for SelectConfig {
    fn default() -> Self {
        SelectConfig {
            keep: 18,
            mi_bins: 10,
        }
    }
}

/// MI, full RFE and LASSO rankings, aggregated.
pub fn rank_features(d: &Dataset, cfg: &SelectConfig) -> Result<FeatureRanking> {
    let mi = mutual_info(d, cfg.mi_bins)?;
    let rfe = rfe(d, 1)?;
    let lasso = lasso_rank(d)?;
    aggregate(&[mi, rfe, lasso], cfg.keep)
}

impl FeatureRanking {
    /// Plain-text table, best feature first.
    pub fn to_table(&self) -> String {
        let width = self
            .aggregate
            .iter()
            .map(|e| e.name.len())
            .max()
            .unwrap_or(7)
            .max(7);
        let mut out = String::new();
        let _ = write!(out, "{:>4}  {:<width$}  {:>9}", "#", "feature", "aggregate");
        for m in &self.methods {
            let _ = write!(
                out,
                "  {:>5}",
                format!("{:?}", m.method)
                    .to_uppercase()
                    .replace("MUTUALINFO", "MI")
            );
        }
        out.push_str("  selected\n");
        for (i, e) in self.aggregate.iter().enumerate() {
            let _ = write!(out, "{:>4}  {:<width$}  {:>9.4}", i + 1, e.name, e.score);
            for m in &self.methods {
                let _ = write!(out, "  {:>5}", m.rank_of(&e.name).unwrap_or(0));
            }
            let mark = if self.selected.contains(&e.name) {
                "*"
            } else {
                ""
            };
            let _ = writeln!(out, "  {mark}");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn perfectly_informative_binary_is_ln2() {
        let a: Vec<u32> = (0..100).map(|i| i % 2).collect();
        assert!((mutual_information_codes(&a, &a) - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn independence_is_zero() {
        // product distribution: p(x)=(1/3,2/3), p(y)=(1/4,3/4)
        let t = vec![vec![2.0, 6.0], vec![4.0, 12.0]];
        assert!(mi_from_contingency(&t).abs() < 1e-12);
    }

    #[test]
    fn mi_symmetric() {
        let a = [0, 1, 2, 2, 1, 0, 0, 2, 1, 1];
        let b = [1, 1, 0, 0, 1, 0, 1, 0, 0, 1];
        assert!(
            (mutual_information_codes(&a, &b) - mutual_information_codes(&b, &a)).abs() < 1e-15
        );
    }

    #[test]
    fn mi_rejects_constant_label() {
        let d = Dataset::new(
            Matrix::from_rows(&[[0.0], [1.0]]).unwrap(),
            vec![1, 1],
            &["a"],
        )
        .unwrap();
        assert_eq!(
            mutual_info(&d, 10).unwrap_err().to_string(),
            "label has one class"
        );
    }

    #[test]
    fn continuous_discretization_respects_bin_count() {
        let v: Vec<f64> = (0..1000).map(|i| (i as f64).sin()).collect();
        let codes = discretize(&v, FeatureKind::Continuous, 10);
        assert!(*codes.iter().max().unwrap() <= 9);
        let ord = discretize(&[3.0, 1.0, 3.0, 7.0], FeatureKind::Ordinal, 10);
        assert_eq!(ord, vec![1, 0, 1, 2]);
    }

    #[test]
    fn aggregate_single_method_reproduces_order() {
        let r = MethodRanking::from_scores(
            Method::MutualInfo,
            &names(&["a", "b", "c"]),
            &[0.1, 0.9, 0.5],
            true,
        );
        let agg = aggregate(std::slice::from_ref(&r), 2).unwrap();
        assert_eq!(
            agg.aggregate
                .iter()
                .map(|e| e.name.as_str())
                .collect::<Vec<_>>(),
            vec!["b", "c", "a"]
        );
        assert_eq!(agg.selected, names(&["b", "c"]));
        assert_eq!(agg.aggregate[0].score, 0.0);
        assert_eq!(agg.aggregate[2].score, 1.0);
    }

    #[test]
    fn aggregate_reversed_orders_tie_lexicographically() {
        let n = names(&["d", "a", "c", "b"]);
        let r1 = MethodRanking::from_scores(Method::MutualInfo, &n, &[4.0, 3.0, 2.0, 1.0], true);
        let r2 = MethodRanking::from_scores(Method::Lasso, &n, &[1.0, 2.0, 3.0, 4.0], true);
        let agg = aggregate(&[r1, r2], 2).unwrap();
        assert!(agg.aggregate.iter().all(|e| (e.score - 0.5).abs() < 1e-15));
        assert_eq!(agg.selected, names(&["a", "b"]));
    }

    #[test]
    fn aggregate_rejects_mismatched_sets() {
        let r1 =
            MethodRanking::from_scores(Method::MutualInfo, &names(&["a", "b"]), &[1.0, 2.0], true);
        let r2 = MethodRanking::from_scores(Method::Lasso, &names(&["a", "c"]), &[1.0, 2.0], true);
        assert!(matches!(
            aggregate(&[r1, r2], 1),
            Err(Error::FeatureSetMismatch(_))
        ));
    }

    #[test]
    fn rfe_keep_all_is_lexicographic() {
        let d = Dataset::new(
            Matrix::from_rows(&[[0.0, 1.0], [1.0, 0.5], [0.2, 0.1], [0.9, 0.7]]).unwrap(),
            vec![0, 1, 0, 1],
            &["zeta", "alpha"],
        )
        .unwrap();
        let r = rfe(&d, 2).unwrap();
        assert_eq!(r.ordered_names(), names(&["alpha", "zeta"]));
        assert_eq!(r.entries[1].rank, 2);
    }

    #[test]
    fn soft_threshold_cases() {
        assert_eq!(soft_threshold(3.0, 1.0), 2.0);
        assert_eq!(soft_threshold(-3.0, 1.0), -2.0);
        assert_eq!(soft_threshold(0.5, 1.0), 0.0);
    }
}
