//! Stratified k-fold cross-validation with random and grid hyperparameter
//! search.
//!
//! The two-stage protocol is [`random_search`] (default budget
//! [`DEFAULT_BUDGET`]) followed by [`grid_search`] over
//! [`refinement_grid`], which moves each numeric parameter one step either
//! way from the random-search winner.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::learners::{self, Family, LearnerSpec, ParamValue, Params};
use crate::metrics::Metric;
use crate::rng::{self, derive_seed};
use crate::Classifier;

pub const DEFAULT_BUDGET: usize = 25;

/// `k` disjoint sorted index sets covering `0..labels.len()`.
///
/// With `stratify`, each class is shuffled and dealt round-robin, continuing
/// the deal across classes, so fold sizes and per-class counts each differ
/// by at most one.
pub fn kfold_indices(
    labels: &[u8],
    k: usize,
    stratify: bool,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    let n = labels.len();
    if k < 2 {
        return Err(Error::InvalidArgument(format!("k must be >= 2, got {k}")));
    }
    if k > n {
        return Err(Error::InvalidArgument(format!("k = {k} exceeds n = {n}")));
    }
    let mut rng = rng::seeded(seed);
    let groups: Vec<Vec<usize>> = if stratify {
        let mut g = vec![Vec::new(), Vec::new()];
        for (i, &y) in labels.iter().enumerate() {
            g[usize::from(y)].push(i);
        }
        g
    } else {
        vec![(0..n).collect()]
    };
    let mut folds = vec![Vec::with_capacity(n / k + 1); k];
    let mut deal = 0usize;
    for mut members in groups {
        members.shuffle(&mut rng);
        for i in members {
            folds[deal % k].push(i);
            deal += 1;
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

/// Indices of every fold except `fold`, sorted.
pub fn complement(folds: &[Vec<usize>], fold: usize) -> Vec<usize> {
    let mut out: Vec<usize> = folds
        .iter()
        .enumerate()
        .filter(|&(f, _)| f != fold)
        .flat_map(|(_, idx)| idx.iter().copied())
        .collect();
    out.sort_unstable();
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Domain {
    Discrete {
        values: Vec<ParamValue>,
    },
    /// Inclusive.
    IntRange {
        low: i64,
        high: i64,
    },
    LogUniform {
        low: f64,
        high: f64,
    },
}

impl Domain {
    fn validate(&self, name: &str) -> Result<()> {
        let ok = match self {
            Domain::Discrete { values } => !values.is_empty(),
            Domain::IntRange { low, high } => low <= high,
            Domain::LogUniform { low, high } => *low > 0.0 && low <= high && high.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "empty or unordered domain for `{name}`"
            )))
        }
    }

    fn enumerate(&self) -> Option<Vec<ParamValue>> {
        match self {
            Domain::Discrete { values } => Some(values.clone()),
            Domain::IntRange { low, high } => Some((*low..=*high).map(ParamValue::Int).collect()),
            Domain::LogUniform { .. } => None,
        }
    }

    fn sample(&self, rng: &mut rng::Rng) -> ParamValue {
        match self {
            Domain::Discrete { values } => values[rng.gen_range(0..values.len())].clone(),
            Domain::IntRange { low, high } => ParamValue::Int(rng.gen_range(*low..=*high)),
            Domain::LogUniform { low, high } => {
                let u: f64 = rng.gen();
                ParamValue::Float((low.ln() + u * (high.ln() - low.ln())).exp())
            }
        }
    }
}

pub type SearchSpace = BTreeMap<String, Domain>;
pub type Grid = BTreeMap<String, Vec<ParamValue>>;

/// Default random-search spaces.
pub fn default_space(family: Family) -> SearchSpace {
    let int = |low, high| Domain::IntRange { low, high };
    let log = |low, high| Domain::LogUniform { low, high };
    let mut s = SearchSpace::new();
    match family {
        Family::Logreg => {
            s.insert("c".into(), log(1e-3, 1e2));
        }
        Family::LinearSvc => {
            s.insert("lambda".into(), log(1e-6, 1e-2));
        }
        Family::GaussianNb => {
            s.insert("var_floor".into(), log(1e-12, 1e-3));
        }
        Family::Knn => {
            s.insert("k".into(), int(1, 25));
        }
        Family::Tree => {
            s.insert("max_depth".into(), int(2, 20));
            s.insert("min_samples_leaf".into(), int(1, 20));
        }
        Family::RandomForest => {
            s.insert("n_trees".into(), int(50, 300));
            s.insert("max_depth".into(), int(4, 24));
            s.insert("min_samples_leaf".into(), int(1, 10));
        }
        Family::Gbdt => {
            s.insert("n_trees".into(), int(50, 400));
            s.insert("max_depth".into(), int(2, 8));
            s.insert("learning_rate".into(), log(0.01, 0.3));
        }
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub params: Params,
    pub fold_scores: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation of `fold_scores`.
    pub std: f64,
}

impl CvResult {
    pub fn from_scores(params: Params, fold_scores: Vec<f64>) -> Self {
        let n = fold_scores.len() as f64;
        let mean = fold_scores.iter().sum::<f64>() / n;
        let std = (fold_scores
            .iter()
            .map(|s| (s - mean) * (s - mean))
            .sum::<f64>()
            / n)
            .sqrt();
        CvResult {
            params,
            fold_scores,
            mean,
            std,
        }
    }
}

/// Candidate params layered over the base spec's params.
fn candidate_spec(base: &LearnerSpec, params: &Params) -> LearnerSpec {
    let mut spec = base.clone();
    spec.params
        .extend(params.iter().map(|(k, v)| (k.clone(), v.clone())));
    spec
}

/// Scores `params` by k-fold CV using precomputed `folds`.
pub fn cross_validate(
    base: &LearnerSpec,
    params: &Params,
    train: &Dataset,
    folds: &[Vec<usize>],
    metric: Metric,
) -> Result<CvResult> {
    let spec = candidate_spec(base, params);
    let scores = (0..folds.len())
        .map(|f| {
            let fit_rows = complement(folds, f);
            let model = learners::fit(&spec, &train.subset(&fit_rows))?;
            let held = train.subset(&folds[f]);
            metric.score(&held.labels, &model.predict_proba(&held.features)?)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(CvResult::from_scores(params.clone(), scores))
}

fn evaluate_all(
    base: &LearnerSpec,
    candidates: &[Params],
    train: &Dataset,
    cv_k: usize,
    metric: Metric,
    seed: u64,
) -> Result<Vec<CvResult>> {
    let folds = kfold_indices(&train.labels, cv_k, true, seed)?;
    candidates
        .par_iter()
        .map(|p| cross_validate(base, p, train, &folds, metric))
        .collect()
}

/// Highest mean; ties go to the earliest entry.
pub fn best_of(results: &[CvResult]) -> Option<&CvResult> {
    let mut best: Option<&CvResult> = None;
    for r in results {
        if best.is_none_or(|b| r.mean > b.mean) {
            best = Some(r);
        }
    }
    best
}

fn cartesian(grid: &[(String, Vec<ParamValue>)]) -> Vec<Params> {
    let mut out = vec![Params::new()];
    for (name, values) in grid {
        out = out
            .into_iter()
            .flat_map(|p| {
                values.iter().map(move |v| {
                    let mut q = p.clone();
                    q.insert(name.clone(), v.clone());
                    q
                })
            })
            .collect();
    }
    out
}

/// Draws the candidate list for a random search.
pub fn sample_candidates(space: &SearchSpace, budget: usize, seed: u64) -> Result<Vec<Params>> {
    if space.is_empty() {
        return Err(Error::InvalidArgument("empty search space".into()));
    }
    if budget == 0 {
        return Err(Error::InvalidArgument("budget must be >= 1".into()));
    }
    for (name, d) in space {
        d.validate(name)?;
    }
    let mut rng = rng::seeded(seed);
    let finite: Option<Vec<(String, Vec<ParamValue>)>> = space
        .iter()
        .map(|(n, d)| d.enumerate().map(|v| (n.clone(), v)))
        .collect();
    if let Some(axes) = finite {
        let size = axes
            .iter()
            .try_fold(1usize, |acc, (_, v)| acc.checked_mul(v.len()));
        if size.is_some_and(|s| s <= 100_000) {
            let mut all = cartesian(&axes);
            all.shuffle(&mut rng);
            all.truncate(budget);
            return Ok(all);
        }
    }
    Ok((0..budget)
        .map(|_| {
            space
                .iter()
                .map(|(n, d)| (n.clone(), d.sample(&mut rng)))
                .collect()
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best: CvResult,
    /// In evaluation order.
    pub results: Vec<CvResult>,
}

/// Samples `budget` candidates (without replacement when the space is
/// finite) and returns the best mean CV score.
pub fn random_search(
    base: &LearnerSpec,
    space: &SearchSpace,
    budget: usize,
    cv_k: usize,
    metric: Metric,
    train: &Dataset,
    seed: u64,
) -> Result<SearchResult> {
    let candidates = sample_candidates(space, budget, derive_seed(seed, 0))?;
    let results = evaluate_all(base, &candidates, train, cv_k, metric, derive_seed(seed, 1))?;
    let best = best_of(&results)
        .cloned()
        .ok_or_else(|| Error::InvalidArgument("no candidates".into()))?;
    Ok(SearchResult { best, results })
}

/// Full Cartesian product of `grid`, iterated by parameter name with the
/// first name varying slowest.
pub fn grid_search(
    base: &LearnerSpec,
    grid: &Grid,
    cv_k: usize,
    metric: Metric,
    train: &Dataset,
    seed: u64,
) -> Result<SearchResult> {
    if grid.is_empty() || grid.values().any(Vec::is_empty) {
        return Err(Error::InvalidArgument("empty grid".into()));
    }
    let axes: Vec<(String, Vec<ParamValue>)> =
        grid.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
    let candidates = cartesian(&axes);
    let results = evaluate_all(base, &candidates, train, cv_k, metric, derive_seed(seed, 1))?;
    let best = best_of(&results)
        .cloned()
        .ok_or_else(|| Error::InvalidArgument("no candidates".into()))?;
    Ok(SearchResult { best, results })
}

/// One step either side of `center` for each numeric parameter in `space`.
/// Discrete domains step through their listed order, integer ranges by 1,
/// log-uniform ranges by a factor of 2; values are clipped to the domain.
pub fn refinement_grid(space: &SearchSpace, center: &Params) -> Grid {
    let mut grid = Grid::new();
    for (name, domain) in space {
        let Some(c) = center.get(name) else { continue };
        let values = match domain {
            Domain::Discrete { values } => match values.iter().position(|v| v == c) {
                Some(i) if c.as_f64().is_some() => {
                    values[i.saturating_sub(1)..=(i + 1).min(values.len() - 1)].to_vec()
                }
                _ => vec![c.clone()],
            },
            Domain::IntRange { low, high } => {
                let v = c.as_f64().map_or(*low, |f| f as i64);
                ((v - 1).max(*low)..=(v + 1).min(*high))
                    .map(ParamValue::Int)
                    .collect()
            }
            Domain::LogUniform { low, high } => {
                let v = c.as_f64().unwrap_or(*low);
                let mut vs = vec![(v / 2.0).max(*low), v, (v * 2.0).min(*high)];
                vs.dedup();
                vs.into_iter().map(ParamValue::Float).collect()
            }
        };
        grid.insert(name.clone(), values);
    }
    grid
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneConfig {
    pub budget: usize,
    pub cv_k: usize,
    pub metric: Metric,
    pub seed: u64,
}

impl Default for TuneConfig {
    fn default() -> Self {
        TuneConfig {
            budget: DEFAULT_BUDGET,
            cv_k: 5,
            metric: Metric::RocAuc,
            seed: 42,
        }
    }
}

/// Audit trail of a two-stage search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneTrace {
    pub family: Family,
    pub metric: Metric,
    pub random: SearchResult,
    pub refinement: SearchResult,
    pub best: CvResult,
}

pub fn tune(
    base: &LearnerSpec,
    space: &SearchSpace,
    train: &Dataset,
    cfg: &TuneConfig,
) -> Result<TuneTrace> {
    let random = random_search(
        base, space, cfg.budget, cfg.cv_k, cfg.metric, train, cfg.seed,
    )?;
    let grid = refinement_grid(space, &random.best.params);
    let refinement = grid_search(base, &grid, cfg.cv_k, cfg.metric, train, cfg.seed)?;
    let best = if refinement.best.mean > random.best.mean {
        refinement.best.clone()
    } else {
        random.best.clone()
    };
    Ok(TuneTrace {
        family: base.family,
        metric: cfg.metric,
        random,
        refinement,
        best,
    })
}

impl TuneTrace {
    /// Base spec with the winning parameters applied.
    pub fn best_spec(&self, base: &LearnerSpec) -> LearnerSpec {
        candidate_spec(base, &self.best.params)
    }
}
