//! Histogram-binned decision trees shared by CART, random forests and
//! gradient boosting.
//!
//! Each feature is cut at no more than `max_bins - 1` thresholds. When a
//! column has fewer distinct values than `max_bins`, the cuts sit at the
//! midpoints between consecutive distinct values and the search is exact;
//! otherwise the cuts follow the empirical quantiles.

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::params::{ParamReader, Params};
use super::sigmoid;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::{self, derive_seed};

const MIN_GAIN: f64 = 1e-10;
const PAR_WORK: usize = 1 << 15;

pub(crate) struct BinnedMatrix {
    /// Column-major bin codes.
    pub bins: Vec<Vec<u16>>,
    pub cuts: Vec<Vec<f64>>,
}

impl BinnedMatrix {
    pub fn new(x: &Matrix, max_bins: usize) -> Self {
        let cuts: Vec<Vec<f64>> = (0..x.cols())
            .into_par_iter()
            .map(|j| column_cuts(x.column_vec(j), max_bins))
            .collect();
        let bins = cuts
            .par_iter()
            .enumerate()
            .map(|(j, c)| x.column(j).map(|v| bin_of(c, v)).collect())
            .collect();
        BinnedMatrix { bins, cuts }
    }

    pub fn n_features(&self) -> usize {
        self.cuts.len()
    }
}

#[inline]
fn bin_of(cuts: &[f64], v: f64) -> u16 {
    cuts.partition_point(|&c| c < v) as u16
}

fn column_cuts(mut values: Vec<f64>, max_bins: usize) -> Vec<f64> {
    values.sort_by(f64::total_cmp);
    let mut distinct = values.clone();
    distinct.dedup();
    let midpoint = |a: f64, b: f64| a + (b - a) / 2.0;
    if distinct.len() <= max_bins {
        return distinct.windows(2).map(|w| midpoint(w[0], w[1])).collect();
    }
    let n = values.len();
    let mut cuts = Vec::with_capacity(max_bins);
    for b in 1..max_bins {
        let q = values[b * n / max_bins];
        // midpoint between the quantile and the next larger value
        let next = distinct.partition_point(|&v| v <= q);
        if next < distinct.len() {
            let c = midpoint(q, distinct[next]);
            if cuts.last().is_none_or(|&l| c > l) {
                cuts.push(c);
            }
        }
    }
    cuts
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub(crate) struct Stats {
    pub s0: f64,
    pub s1: f64,
}

impl Stats {
    #[inline]
    fn add(&mut self, o: Stats) {
        self.s0 += o.s0;
        self.s1 += o.s1;
    }

    #[inline]
    fn sub(self, o: Stats) -> Stats {
        Stats {
            s0: self.s0 - o.s0,
            s1: self.s1 - o.s1,
        }
    }
}

pub(crate) trait Criterion: Sync {
    fn gain(&self, parent: Stats, left: Stats, right: Stats) -> f64;
    fn leaf_value(&self, s: Stats) -> f64;
    fn admissible_child(&self, s: Stats) -> bool;
    fn is_pure(&self, s: Stats) -> bool;
}

/// Weighted Gini over `(Σw, Σw·y)`.
pub(crate) struct Gini {
    pub min_leaf_weight: f64,
}

impl Gini {
    #[inline]
    fn impurity(s: Stats) -> f64 {
        if s.s0 <= 0.0 {
            0.0
        } else {
            2.0 * s.s1 * (s.s0 - s.s1) / s.s0
        }
    }
}

impl Criterion for Gini {
    fn gain(&self, parent: Stats, left: Stats, right: Stats) -> f64 {
        Self::impurity(parent) - Self::impurity(left) - Self::impurity(right)
    }

    fn leaf_value(&self, s: Stats) -> f64 {
        s.s1 / s.s0
    }

    fn admissible_child(&self, s: Stats) -> bool {
        s.s0 >= self.min_leaf_weight
    }

    fn is_pure(&self, s: Stats) -> bool {
        s.s1 <= 0.0 || s.s1 >= s.s0
    }
}

/// Second-order boosting criterion over `(Σg, Σh)`.
pub(crate) struct Newton {
    pub l2: f64,
    pub min_child_weight: f64,
    pub learning_rate: f64,
}

impl Newton {
    #[inline]
    fn score(&self, s: Stats) -> f64 {
        let d = s.s1 + self.l2;
        if d > 0.0 {
            s.s0 * s.s0 / d
        } else {
            0.0
        }
    }
}

impl Criterion for Newton {
    fn gain(&self, parent: Stats, left: Stats, right: Stats) -> f64 {
        0.5 * (self.score(left) + self.score(right) - self.score(parent))
    }

    fn leaf_value(&self, s: Stats) -> f64 {
        let d = s.s1 + self.l2;
        if d > 0.0 {
            -self.learning_rate * s.s0 / d
        } else {
            0.0
        }
    }

    fn admissible_child(&self, s: Stats) -> bool {
        s.s1 >= self.min_child_weight
    }

    fn is_pure(&self, _s: Stats) -> bool {
        false
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    Split {
        feature: u32,
        threshold: f64,
        bin: u16,
        left: u32,
        right: u32,
        gain: f64,
    },
    Leaf {
        value: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    /// Rows with `x[feature] <= threshold` go left.
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut id = 0usize;
        loop {
            match self.nodes[id] {
                TreeNode::Leaf { value } => return value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    id = if row[feature as usize] <= threshold {
                        left as usize
                    } else {
                        right as usize
                    };
                }
            }
        }
    }

    pub(crate) fn predict_binned(&self, binned: &BinnedMatrix, row: usize) -> f64 {
        let mut id = 0usize;
        loop {
            match self.nodes[id] {
                TreeNode::Leaf { value } => return value,
                TreeNode::Split {
                    feature,
                    bin,
                    left,
                    right,
                    ..
                } => {
                    id = if binned.bins[feature as usize][row] <= bin {
                        left as usize
                    } else {
                        right as usize
                    };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(t: &Tree, id: usize) -> usize {
            match t.nodes[id] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => {
                    1 + walk(t, left as usize).max(walk(t, right as usize))
                }
            }
        }
        if self.nodes.is_empty() {
            0
        } else {
            walk(self, 0)
        }
    }
}

pub(crate) struct GrowConfig {
    pub max_depth: usize,
    pub min_split_rows: usize,
    /// Features drawn per node; `None` means all.
    pub features_per_node: Option<usize>,
}

#[derive(Clone, Copy)]
struct Candidate {
    gain: f64,
    feature: usize,
    bin: u16,
}

pub(crate) struct Grower<'a, C: Criterion> {
    binned: &'a BinnedMatrix,
    row_stats: &'a [Stats],
    criterion: &'a C,
    cfg: &'a GrowConfig,
    rng: rng::Rng,
    nodes: Vec<TreeNode>,
}

impl<'a, C: Criterion> Grower<'a, C> {
    pub fn new(
        binned: &'a BinnedMatrix,
        row_stats: &'a [Stats],
        criterion: &'a C,
        cfg: &'a GrowConfig,
        seed: u64,
    ) -> Self {
        Grower {
            binned,
            row_stats,
            criterion,
            cfg,
            rng: rng::seeded(seed),
            nodes: Vec::new(),
        }
    }

    pub fn grow(mut self, mut rows: Vec<u32>) -> Tree {
        self.grow_node(&mut rows, 0);
        Tree { nodes: self.nodes }
    }

    fn grow_node(&mut self, rows: &mut [u32], depth: usize) -> u32 {
        let mut total = Stats::default();
        for &r in rows.iter() {
            total.add(self.row_stats[r as usize]);
        }
        let id = self.nodes.len() as u32;
        self.nodes.push(TreeNode::Leaf {
            value: self.criterion.leaf_value(total),
        });
        if depth >= self.cfg.max_depth
            || rows.len() < self.cfg.min_split_rows
            || self.criterion.is_pure(total)
        {
            return id;
        }
        let p = self.binned.n_features();
        let features: Vec<usize> = match self.cfg.features_per_node {
            Some(k) if k < p => {
                let mut f = sample(&mut self.rng, p, k).into_vec();
                f.sort_unstable();
                f
            }
            _ => (0..p).collect(),
        };
        let best = self.best_split(rows, &features, total);
        let Some(best) = best else { return id };

        let codes = &self.binned.bins[best.feature];
        let mut lo = 0;
        for i in 0..rows.len() {
            if codes[rows[i] as usize] <= best.bin {
                rows.swap(lo, i);
                lo += 1;
            }
        }
        let (left_rows, right_rows) = rows.split_at_mut(lo);
        let left = self.grow_node(left_rows, depth + 1);
        let right = self.grow_node(right_rows, depth + 1);
        self.nodes[id as usize] = TreeNode::Split {
            feature: best.feature as u32,
            threshold: self.binned.cuts[best.feature][best.bin as usize],
            bin: best.bin,
            left,
            right,
            gain: best.gain,
        };
        id
    }

    fn best_split(&self, rows: &[u32], features: &[usize], total: Stats) -> Option<Candidate> {
        let scan = |&j: &usize| self.best_for_feature(rows, j, total);
        let per_feature: Vec<Option<Candidate>> = if rows.len() * features.len() >= PAR_WORK {
            features.par_iter().map(scan).collect()
        } else {
            features.iter().map(scan).collect()
        };
        let mut best: Option<Candidate> = None;
        for c in per_feature.into_iter().flatten() {
            if best.is_none_or(|b| c.gain > b.gain) {
                best = Some(c);
            }
        }
        best
    }

    fn best_for_feature(&self, rows: &[u32], j: usize, total: Stats) -> Option<Candidate> {
        let n_cuts = self.binned.cuts[j].len();
        if n_cuts == 0 {
            return None;
        }
        let codes = &self.binned.bins[j];
        let mut hist = vec![Stats::default(); n_cuts + 1];
        for &r in rows {
            hist[codes[r as usize] as usize].add(self.row_stats[r as usize]);
        }
        let mut left = Stats::default();
        let mut best: Option<Candidate> = None;
        for (b, h) in hist.iter().enumerate().take(n_cuts) {
            left.add(*h);
            let right = total.sub(left);
            if !self.criterion.admissible_child(left) || !self.criterion.admissible_child(right) {
                continue;
            }
            let gain = self.criterion.gain(total, left, right);
            if gain > MIN_GAIN && best.is_none_or(|c| gain > c.gain) {
                best = Some(Candidate {
                    gain,
                    feature: j,
                    bin: b as u16,
                });
            }
        }
        best
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TreeOutput {
    /// Mean of leaf probabilities.
    Average,
    /// `sigmoid(base_score + Σ leaf)`; leaves already include the learning rate.
    Logit { base_score: f64, learning_rate: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeEnsemble {
    pub trees: Vec<Tree>,
    pub output: TreeOutput,
}

impl TreeEnsemble {
    pub fn margin_row(&self, row: &[f64]) -> f64 {
        match self.output {
            TreeOutput::Average => {
                self.trees.iter().map(|t| t.predict_row(row)).sum::<f64>() / self.trees.len() as f64
            }
            TreeOutput::Logit { base_score, .. } => {
                base_score + self.trees.iter().map(|t| t.predict_row(row)).sum::<f64>()
            }
        }
    }

    pub fn predict_proba(&self, rows: &Matrix) -> Vec<f64> {
        (0..rows.rows())
            .into_par_iter()
            .map(|r| {
                let m = self.margin_row(rows.row(r));
                match self.output {
                    TreeOutput::Average => m.clamp(0.0, 1.0),
                    TreeOutput::Logit { .. } => sigmoid(m),
                }
            })
            .collect()
    }

    /// Total split gain per feature, normalized to sum to 1.
    pub fn gain_importance(&self, n_features: usize) -> Vec<f64> {
        let mut imp = vec![0.0; n_features];
        for t in &self.trees {
            for node in &t.nodes {
                if let TreeNode::Split { feature, gain, .. } = node {
                    imp[*feature as usize] += gain;
                }
            }
        }
        let total: f64 = imp.iter().sum();
        if total > 0.0 {
            imp.iter_mut().for_each(|v| *v /= total);
        }
        imp
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum MaxFeatures {
    Sqrt,
    All,
    Count(usize),
}

impl MaxFeatures {
    fn resolve(self, p: usize) -> usize {
        match self {
            MaxFeatures::Sqrt => ((p as f64).sqrt().floor() as usize).max(1),
            MaxFeatures::All => p,
            MaxFeatures::Count(k) => k.clamp(1, p.max(1)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    /// 0 = unlimited.
    pub max_depth: usize,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    pub max_bins: usize,
    pub max_features: MaxFeatures,
    pub bootstrap: bool,
}

impl ForestParams {
    pub fn single_tree() -> Self {
        ForestParams {
            n_trees: 1,
            max_depth: 0,
            min_samples_split: 2,
            min_samples_leaf: 1,
            max_bins: 256,
            max_features: MaxFeatures::All,
            bootstrap: false,
        }
    }

    pub fn forest() -> Self {
        ForestParams {
            n_trees: 100,
            max_features: MaxFeatures::Sqrt,
            bootstrap: true,
            ..Self::single_tree()
        }
    }

    fn read(family: &'static str, params: &Params, mut base: ForestParams) -> Result<Self> {
        let r = ParamReader::new(family, params);
        base.n_trees = r.usize_or("n_trees", base.n_trees)?;
        base.max_depth = r.usize_or("max_depth", base.max_depth)?;
        base.min_samples_split = r.usize_or("min_samples_split", base.min_samples_split)?;
        base.min_samples_leaf = r.usize_or("min_samples_leaf", base.min_samples_leaf)?;
        base.max_bins = r.usize_or("max_bins", base.max_bins)?;
        base.bootstrap = r.bool_or("bootstrap", base.bootstrap)?;
        if let Some(v) = params.get("max_features") {
            base.max_features = match (v.as_str(), v.as_usize()) {
                (Some("sqrt"), _) => MaxFeatures::Sqrt,
                (Some("all"), _) => MaxFeatures::All,
                (_, Some(k)) if k >= 1 => MaxFeatures::Count(k),
                _ => {
                    return Err(Error::InvalidArgument(format!(
                        "{family}: max_features must be `sqrt`, `all` or a positive integer"
                    )))
                }
            };
        }
        if base.n_trees == 0 || !(2..=u16::MAX as usize).contains(&base.max_bins) {
            return Err(Error::InvalidArgument(format!(
                "{family}: n_trees must be >= 1 and max_bins in [2, 65535]"
            )));
        }
        Ok(base)
    }
}

pub(super) fn fit_tree(params: &Params, x: &Matrix, y: &[u8], seed: u64) -> Result<TreeEnsemble> {
    let p = ForestParams::read("tree", params, ForestParams::single_tree())?;
    Ok(fit_forest_with(&p, x, y, seed))
}

pub(super) fn fit_forest(params: &Params, x: &Matrix, y: &[u8], seed: u64) -> Result<TreeEnsemble> {
    let p = ForestParams::read("random_forest", params, ForestParams::forest())?;
    Ok(fit_forest_with(&p, x, y, seed))
}

pub fn fit_forest_with(p: &ForestParams, x: &Matrix, y: &[u8], seed: u64) -> TreeEnsemble {
    let n = x.rows();
    let binned = BinnedMatrix::new(x, p.max_bins);
    let cfg = GrowConfig {
        max_depth: if p.max_depth == 0 {
            usize::MAX
        } else {
            p.max_depth
        },
        min_split_rows: p.min_samples_split.max(2),
        features_per_node: Some(p.max_features.resolve(x.cols())),
    };
    let criterion = Gini {
        min_leaf_weight: p.min_samples_leaf as f64,
    };
    let trees = (0..p.n_trees)
        .into_par_iter()
        .map(|t| {
            let tree_seed = derive_seed(seed, t as u64);
            let mut weights = vec![1.0f64; n];
            if p.bootstrap {
                let mut rng = rng::seeded(derive_seed(tree_seed, u64::MAX));
                weights.iter_mut().for_each(|w| *w = 0.0);
                for _ in 0..n {
                    weights[rng.gen_range(0..n)] += 1.0;
                }
            }
            let stats: Vec<Stats> = weights
                .iter()
                .zip(y)
                .map(|(&w, &l)| Stats {
                    s0: w,
                    s1: w * f64::from(l),
                })
                .collect();
            let rows: Vec<u32> = (0..n as u32)
                .filter(|&i| weights[i as usize] > 0.0)
                .collect();
            Grower::new(&binned, &stats, &criterion, &cfg, tree_seed).grow(rows)
        })
        .collect();
    TreeEnsemble {
        trees,
        output: TreeOutput::Average,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::{fit_xy, Family, LearnerSpec};
    use crate::Classifier;

    fn names(p: usize) -> Vec<String> {
        (0..p).map(|j| format!("f{j}")).collect()
    }

    #[test]
    fn cuts_are_midpoints_for_low_cardinality() {
        assert_eq!(column_cuts(vec![3.0, 1.0, 2.0, 1.0], 256), vec![1.5, 2.5]);
        let many: Vec<f64> = (0..1000).map(f64::from).collect();
        let c = column_cuts(many, 16);
        assert!(c.len() <= 15 && c.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn binned_and_raw_traversal_agree() {
        let mut rng = crate::rng::seeded(3);
        let x = Matrix::from_vec(300, 3, (0..900).map(|_| rng.gen::<f64>()).collect()).unwrap();
        let y: Vec<u8> = (0..300)
            .map(|i| u8::from(x.get(i, 0) > 0.4 && x.get(i, 2) < 0.7))
            .collect();
        let ens = fit_forest_with(&ForestParams::single_tree(), &x, &y, 0);
        let binned = BinnedMatrix::new(&x, 256);
        for i in 0..300 {
            assert_eq!(
                ens.trees[0].predict_binned(&binned, i),
                ens.trees[0].predict_row(x.row(i))
            );
        }
        // full-depth CART on a noise-free rule fits it exactly
        let p = ens.predict_proba(&x);
        assert!(p.iter().zip(&y).all(|(p, &l)| *p == f64::from(l)));
    }

    #[test]
    fn single_tree_forest_equals_tree() {
        let mut rng = crate::rng::seeded(12);
        let x = Matrix::from_vec(200, 4, (0..800).map(|_| rng.gen::<f64>()).collect()).unwrap();
        let y: Vec<u8> = (0..200).map(|_| rng.gen_range(0..2)).collect();
        let tree = fit_xy(
            &LearnerSpec::new(Family::Tree).with("max_depth", 5i64),
            &x,
            &y,
            names(4),
        )
        .unwrap();
        let forest = fit_xy(
            &LearnerSpec::new(Family::RandomForest)
                .with("n_trees", 1i64)
                .with("max_depth", 5i64)
                .with("bootstrap", 0i64)
                .with("max_features", "all"),
            &x,
            &y,
            names(4),
        )
        .unwrap();
        assert_eq!(
            tree.predict_proba(&x).unwrap(),
            forest.predict_proba(&x).unwrap()
        );
    }

    #[test]
    fn forest_is_seed_deterministic() {
        let mut rng = crate::rng::seeded(13);
        let x = Matrix::from_vec(150, 5, (0..750).map(|_| rng.gen::<f64>()).collect()).unwrap();
        let y: Vec<u8> = (0..150).map(|i| u8::from(x.get(i, 1) > 0.5)).collect();
        let spec = LearnerSpec::new(Family::RandomForest)
            .with("n_trees", 10i64)
            .with_seed(77);
        let a = fit_xy(&spec, &x, &y, names(5)).unwrap();
        let b = fit_xy(&spec, &x, &y, names(5)).unwrap();
        assert_eq!(a, b);
        let imp = a.feature_importance().unwrap();
        let top = imp
            .iter()
            .max_by(|a, b| a.score.total_cmp(&b.score))
            .unwrap();
        assert_eq!(top.name, "f1");
        assert!(imp.iter().all(|s| s.score >= 0.0));
    }
}
