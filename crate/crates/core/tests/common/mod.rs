//! Independent reference implementations used by the integration suites.
#![allow(dead_code)]

use std::collections::BTreeSet;

use rand::Rng;
use riskml::matrix::Matrix;
use riskml::rng;

/// `P(s⁺ > s⁻) + ½ P(s⁺ = s⁻)` by enumerating every pair.
pub fn auc_pairs(labels: &[u8], scores: &[f64]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &li) in labels.iter().enumerate() {
        if li != 1 {
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj != 0 {
                continue;
            }
            pairs += 1.0;
            if scores[i] > scores[j] {
                wins += 1.0;
            } else if scores[i] == scores[j] {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// Step-wise average precision by explicitly rebuilding every prefix.
pub fn ap_prefix(labels: &[u8], scores: &[f64]) -> f64 {
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let pos = labels.iter().filter(|&&l| l == 1).count() as f64;
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for t in thresholds {
        let selected: Vec<u8> = labels
            .iter()
            .zip(scores)
            .filter(|(_, &s)| s >= t)
            .map(|(&l, _)| l)
            .collect();
        let tp = selected.iter().filter(|&&l| l == 1).count() as f64;
        let recall = tp / pos;
        let precision = tp / selected.len() as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    ap
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest other point, lower index on ties.
pub fn nearest(x: &Matrix, i: usize) -> usize {
    let mut best = (f64::INFINITY, usize::MAX);
    for j in 0..x.rows() {
        if j == i {
            continue;
        }
        let d = dist2(x.row(i), x.row(j));
        if d < best.0 {
            best = (d, j);
        }
    }
    best.1
}

/// Cross-class mutual nearest-neighbour pairs, `(low, high)`.
pub fn tomek_brute(x: &Matrix, labels: &[u8]) -> BTreeSet<(usize, usize)> {
    let nn: Vec<usize> = (0..x.rows()).map(|i| nearest(x, i)).collect();
    let mut out = BTreeSet::new();
    for (i, &j) in nn.iter().enumerate() {
        if j != usize::MAX && nn[j] == i && labels[i] != labels[j] {
            out.insert((i.min(j), i.max(j)));
        }
    }
    out
}

/// The `k` nearest other rows among `pool`, by (distance, index).
pub fn knn_brute(x: &Matrix, pool: &[usize], i: usize, k: usize) -> Vec<usize> {
    let mut c: Vec<(f64, usize)> = pool
        .iter()
        .filter(|&&j| j != i)
        .map(|&j| (dist2(x.row(i), x.row(j)), j))
        .collect();
    c.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    c.into_iter().take(k).map(|(_, j)| j).collect()
}

/// Whether `s = p + λ(q − p)` for some `λ ∈ [0, 1)`.
pub fn on_segment(p: &[f64], q: &[f64], s: &[f64], tol: f64) -> bool {
    let (d, span) = p
        .iter()
        .zip(q)
        .map(|(a, b)| (b - a).abs())
        .enumerate()
        .fold((0, 0.0), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
    if span == 0.0 {
        return p.iter().zip(s).all(|(a, b)| (a - b).abs() <= tol);
    }
    let lambda = (s[d] - p[d]) / (q[d] - p[d]);
    (-tol..1.0).contains(&lambda)
        && (0..p.len()).all(|j| (p[j] + lambda * (q[j] - p[j]) - s[j]).abs() <= tol)
}

/// Random integer-grid points so that ties and duplicates are common.
pub fn grid_points(n: usize, dim: usize, span: i32, seed: u64) -> (Matrix, Vec<u8>) {
    let mut r = rng::seeded(seed);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..dim).map(|_| f64::from(r.gen_range(0..span))).collect())
        .collect();
    let labels = (0..n).map(|_| u8::from(r.gen_bool(0.35))).collect();
    (Matrix::from_rows(&rows).unwrap(), labels)
}

/// Random scores (with deliberate ties) and labels with both classes.
pub fn scored_labels(n: usize, seed: u64) -> (Vec<u8>, Vec<f64>) {
    let mut r = rng::seeded(seed);
    loop {
        let labels: Vec<u8> = (0..n).map(|_| u8::from(r.gen_bool(0.4))).collect();
        let coarse = r.gen_bool(0.5);
        let scores: Vec<f64> = labels
            .iter()
            .map(|&l| {
                let s = r.gen::<f64>() + 0.3 * f64::from(l);
                if coarse {
                    (s * 10.0).round() / 10.0
                } else {
                    s
                }
            })
            .collect();
        let pos = labels.iter().filter(|&&l| l == 1).count();
        if pos > 0 && pos < n {
            return (labels, scores);
        }
    }
}

/// Spearman correlation (average ranks for ties).
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &k in &idx[i..=j] {
                r[k] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma) * (x - ma)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb) * (y - mb)).sum();
    cov / (va * vb).sqrt()
}
