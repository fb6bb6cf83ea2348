//! Class balancing: SMOTE oversampling followed by one pass of Tomek-link
//! cleaning.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{ClassBalance, Dataset};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::neighbors::KdTree;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Distance {
    #[default]
    Euclidean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ResampleConfig {
    pub smote_k: usize,
    /// Minority/majority count ratio to reach with synthetic rows.
    pub target_ratio: f64,
    pub seed: u64,
    pub distance: Distance,
}

impl Default for ResampleConfig {
    fn default() -> Self {
        ResampleConfig {
            smote_k: 5,
            target_ratio: 1.0,
            seed: 42,
            distance: Distance::Euclidean,
        }
    }
}

impl ResampleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.smote_k == 0 {
            return Err(Error::InvalidArgument("smote_k must be >= 1".into()));
        }
        if !(self.target_ratio > 0.0 && self.target_ratio <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "target_ratio must lie in (0, 1], got {}",
                self.target_ratio
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResampleReport {
    pub counts_before: ClassBalance,
    pub counts_after_smote: ClassBalance,
    pub counts_after: ClassBalance,
    pub minority_label: u8,
    pub synthetic_created: usize,
    pub tomek_pairs_found: usize,
    pub majority_removed: usize,
}

fn balance_of(d: &Dataset) -> ClassBalance {
    let [negative, positive] = d.class_counts();
    ClassBalance { negative, positive }
}

/// Majority label; ties resolve to 0.
fn majority_label(d: &Dataset) -> u8 {
    let [neg, pos] = d.class_counts();
    u8::from(pos > neg)
}

/// Appends synthetic minority rows until the minority reaches
/// `target_ratio` of the majority. Original rows come first, unchanged.
pub fn smote(d: &Dataset, cfg: &ResampleConfig) -> Result<(Dataset, ResampleReport)> {
    cfg.validate()?;
    let before = balance_of(d);
    let minority = 1 - majority_label(d);
    let counts = d.class_counts();
    let n_min = counts[usize::from(minority)];
    let n_maj = counts[usize::from(1 - minority)];
    let target = (cfg.target_ratio * n_maj as f64).round() as usize;
    let synthetic = target.saturating_sub(n_min);

    let mut out = d.clone();
    if synthetic > 0 {
        if n_min < cfg.smote_k + 1 {
            return Err(Error::ClassTooSmall {
                class: minority,
                count: n_min,
                required: cfg.smote_k + 1,
            });
        }
        let members: Vec<usize> = (0..d.row_count())
            .filter(|&i| d.labels[i] == minority)
            .collect();
        let minority_rows = d.features.select_rows(&members);
        let tree = KdTree::build(minority_rows.clone());
        let neighbors = tree.knn_self(cfg.smote_k);

        let mut rng = rng::seeded(cfg.seed);
        let p_dim = d.n_features();
        let mut data = Vec::with_capacity(synthetic * p_dim);
        for _ in 0..synthetic {
            let a = rng.gen_range(0..members.len());
            let nb = &neighbors[a];
            let b = nb[rng.gen_range(0..nb.len())].index;
            let lambda: f64 = rng.gen();
            let (pa, pb) = (minority_rows.row(a), minority_rows.row(b));
            data.extend(pa.iter().zip(pb).map(|(x, y)| x + lambda * (y - x)));
        }
        let extra = Matrix::from_vec(synthetic, p_dim, data)?;
        let mut features = Vec::with_capacity((d.row_count() + synthetic) * p_dim);
        features.extend_from_slice(d.features.as_slice());
        features.extend_from_slice(extra.as_slice());
        out.features = Matrix::from_vec(d.row_count() + synthetic, p_dim, features)?;
        out.labels.extend(std::iter::repeat_n(minority, synthetic));
    }
    out.log(
        "smote",
        format!(
            "k={} ratio={} seed={} created={synthetic}",
            cfg.smote_k, cfg.target_ratio, cfg.seed
        ),
    );
    let after = balance_of(&out);
    Ok((
        out,
        ResampleReport {
            counts_before: before,
            counts_after_smote: after,
            counts_after: after,
            minority_label: minority,
            synthetic_created: synthetic,
            tomek_pairs_found: 0,
            majority_removed: 0,
        },
    ))
}

/// Cross-class mutual nearest-neighbour pairs `(a, b)` with `a < b`.
pub fn tomek_links(features: &Matrix, labels: &[u8]) -> Vec<(usize, usize)> {
    if features.rows() < 2 {
        return Vec::new();
    }
    let tree = KdTree::build(features.clone());
    let nn: Vec<usize> = tree.knn_self(1).into_iter().map(|v| v[0].index).collect();
    (0..nn.len())
        .filter(|&a| {
            let b = nn[a];
            a < b && nn[b] == a && labels[a] != labels[b]
        })
        .map(|a| (a, nn[a]))
        .collect()
}

/// Removes the `majority`-labelled member of every Tomek link.
pub fn tomek_with_majority(d: &Dataset, majority: u8) -> Result<(Dataset, ResampleReport)> {
    let before = balance_of(d);
    let links = tomek_links(&d.features, &d.labels);
    let mut drop = vec![false; d.row_count()];
    for &(a, b) in &links {
        let victim = if d.labels[a] == majority { a } else { b };
        drop[victim] = true;
    }
    let keep: Vec<usize> = (0..d.row_count()).filter(|&i| !drop[i]).collect();
    let removed = d.row_count() - keep.len();
    let mut out = d.subset(&keep);
    out.log(
        "tomek",
        format!(
            "links={} removed={removed} majority={majority}",
            links.len()
        ),
    );
    let after = balance_of(&out);
    Ok((
        out,
        ResampleReport {
            counts_before: before,
            counts_after_smote: before,
            counts_after: after,
            minority_label: 1 - majority,
            synthetic_created: 0,
            tomek_pairs_found: links.len(),
            majority_removed: removed,
        },
    ))
}

/// Single-pass Tomek cleaning; the majority is the larger class (ties: 0).
pub fn tomek(d: &Dataset) -> Result<(Dataset, ResampleReport)> {
    tomek_with_majority(d, majority_label(d))
}

/// SMOTE, then Tomek cleaning of the class that was the majority before
/// oversampling.
pub fn balance(d: &Dataset, cfg: &ResampleConfig) -> Result<(Dataset, ResampleReport)> {
    let majority = majority_label(d);
    let (oversampled, s) = smote(d, cfg)?;
    let (cleaned, t) = tomek_with_majority(&oversampled, majority)?;
    Ok((
        cleaned,
        ResampleReport {
            counts_before: s.counts_before,
            counts_after_smote: s.counts_after_smote,
            counts_after: t.counts_after,
            minority_label: 1 - majority,
            synthetic_created: s.synthetic_created,
            tomek_pairs_found: t.tomek_pairs_found,
            majority_removed: t.majority_removed,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ds(rows: &[[f64; 2]], labels: &[u8]) -> Dataset {
        Dataset::new(
            Matrix::from_rows(rows).unwrap(),
            labels.to_vec(),
            &["a", "b"],
        )
        .unwrap()
    }

    #[test]
    fn smote_count_arithmetic() {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..10 {
            rows.push([i as f64, 0.0]);
            labels.push(0);
        }
        for i in 0..4 {
            rows.push([i as f64, 5.0 + i as f64]);
            labels.push(1);
        }
        let d = ds(&rows, &labels);
        let cfg = ResampleConfig {
            smote_k: 3,
            ..Default::default()
        };
        let (out, rep) = smote(&d, &cfg).unwrap();
        assert_eq!(rep.synthetic_created, 6);
        assert_eq!(out.class_counts(), [10, 10]);
        assert_eq!(
            out.subset(&(0..14).collect::<Vec<_>>()).features,
            d.features
        );
    }

    #[test]
    fn smote_noop_when_balanced() {
        let d = ds(&[[0.0, 0.0], [1.0, 1.0]], &[0, 1]);
        let (out, rep) = smote(&d, &ResampleConfig::default()).unwrap();
        assert_eq!(rep.synthetic_created, 0);
        assert_eq!(out.features, d.features);
        assert_eq!(out.labels, d.labels);
    }

    #[test]
    fn smote_too_small_minority() {
        let d = ds(
            &[[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [3.0, 3.0]],
            &[0, 0, 0, 1],
        );
        let err = smote(&d, &ResampleConfig::default()).unwrap_err();
        assert!(err.to_string().contains("at least 6"), "{err}");
    }

    #[test]
    fn smote_segment_geometry() {
        let mut rows = vec![[0.0, 0.0], [1.0, 1.0]];
        let mut labels = vec![1, 1];
        for i in 0..8 {
            rows.push([5.0 + i as f64, -3.0]);
            labels.push(0);
        }
        let d = ds(&rows, &labels);
        let cfg = ResampleConfig {
            smote_k: 1,
            ..Default::default()
        };
        let (out, rep) = smote(&d, &cfg).unwrap();
        assert_eq!(rep.synthetic_created, 6);
        for r in 10..out.row_count() {
            let p = out.features.row(r);
            assert_eq!(p[0], p[1]);
            assert!((0.0..=1.0).contains(&p[0]));
            assert_eq!(out.labels[r], 1);
        }
    }

    #[test]
    fn tomek_removes_majority_member() {
        let d = ds(
            &[
                [0.5, 0.0],
                [0.55, 0.0],
                [10.0, 10.0],
                [10.0, 11.0],
                [-10.0, 8.0],
                [-10.0, 9.0],
            ],
            &[0, 1, 0, 0, 1, 1],
        );
        let (out, rep) = tomek(&d).unwrap();
        assert_eq!(rep.tomek_pairs_found, 1);
        assert_eq!(rep.majority_removed, 1);
        assert_eq!(out.row_count(), 5);
        assert_eq!(out.features.row(0), &[0.55, 0.0]);
    }

    #[test]
    fn tomek_separated_clusters_and_single_class() {
        let d = ds(
            &[[0.0, 0.0], [0.1, 0.0], [5.0, 5.0], [5.1, 5.0]],
            &[0, 0, 1, 1],
        );
        assert_eq!(tomek(&d).unwrap().1.tomek_pairs_found, 0);
        let d = ds(&[[0.0, 0.0], [0.1, 0.0], [5.0, 5.0]], &[0, 0, 0]);
        let (out, rep) = tomek(&d).unwrap();
        assert_eq!(rep.tomek_pairs_found, 0);
        assert_eq!(out.row_count(), 3);
    }

    #[test]
    fn balance_noop_on_separated_balanced_input() {
        let d = ds(
            &[[0.0, 0.0], [0.1, 0.0], [5.0, 5.0], [5.1, 5.0]],
            &[0, 0, 1, 1],
        );
        let (out, rep) = balance(&d, &ResampleConfig::default()).unwrap();
        assert_eq!(out.features, d.features);
        assert_eq!(rep.synthetic_created + rep.majority_removed, 0);
    }
}
