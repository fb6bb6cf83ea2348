//! Exact k-nearest-neighbour search (squared Euclidean distance).
//!
//! Neighbours are ordered by `(distance, row index)`, so equidistant points
//! resolve to the lower row index and results match a brute-force scan
//! exactly.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::matrix::Matrix;

const LEAF_SIZE: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub dist2: f64,
}

impl Eq for Neighbor {}

impl Ord for Neighbor {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist2
            .total_cmp(&other.dist2)
            .then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Neighbor {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[inline]
pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Node {
    Leaf {
        start: u32,
        end: u32,
    },
    Split {
        dim: u32,
        value: f64,
        left: u32,
        right: u32,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KdTree {
    points: Matrix,
    order: Vec<u32>,
    nodes: Vec<Node>,
}

impl KdTree {
    pub fn build(points: Matrix) -> Self {
        let n = points.rows();
        let mut tree = KdTree {
            order: (0..n as u32).collect(),
            nodes: Vec::new(),
            points,
        };
        if n > 0 {
            tree.build_node(0, n);
        }
        tree
    }

    pub fn points(&self) -> &Matrix {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.rows() == 0
    }

    fn build_node(&mut self, start: usize, end: usize) -> u32 {
        let id = self.nodes.len() as u32;
        self.nodes.push(Node::Leaf {
            start: start as u32,
            end: end as u32,
        });
        if end - start <= LEAF_SIZE {
            return id;
        }
        let d = self.points.cols();
        let mut best_dim = 0;
        let mut best_spread = 0.0;
        for dim in 0..d {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for &i in &self.order[start..end] {
                let v = self.points.get(i as usize, dim);
                lo = lo.min(v);
                hi = hi.max(v);
            }
            if hi - lo > best_spread {
                best_spread = hi - lo;
                best_dim = dim;
            }
        }
        if best_spread <= 0.0 {
            return id;
        }
        let mid = start + (end - start) / 2;
        let points = &self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            points
                .get(a as usize, best_dim)
                .total_cmp(&points.get(b as usize, best_dim))
                .then(a.cmp(&b))
        });
        let value = self.points.get(self.order[mid] as usize, best_dim);
        let left = self.build_node(start, mid);
        let right = self.build_node(mid, end);
        self.nodes[id as usize] = Node::Split {
            dim: best_dim as u32,
            value,
            left,
            right,
        };
        id
    }

    /// The `k` nearest rows to `query`, closest first. `exclude` skips one
    /// row index (the query point itself when it belongs to the tree).
    pub fn knn(&self, query: &[f64], k: usize, exclude: Option<usize>) -> Vec<Neighbor> {
        if k == 0 || self.nodes.is_empty() {
            return Vec::new();
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.search(0, query, k, exclude, &mut heap);
        heap.into_sorted_vec()
    }

    fn search(
        &self,
        node: u32,
        q: &[f64],
        k: usize,
        exclude: Option<usize>,
        heap: &mut BinaryHeap<Neighbor>,
    ) {
        match self.nodes[node as usize] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start as usize..end as usize] {
                    let i = i as usize;
                    if Some(i) == exclude {
                        continue;
                    }
                    let cand = Neighbor {
                        index: i,
                        dist2: squared_distance(q, self.points.row(i)),
                    };
                    if heap.len() < k {
                        heap.push(cand);
                    } else if cand < *heap.peek().expect("heap is full") {
                        heap.pop();
                        heap.push(cand);
                    }
                }
            }
            Node::Split {
                dim,
                value,
                left,
                right,
            } => {
                let diff = q[dim as usize] - value;
                let (near, far) = if diff < 0.0 {
                    (left, right)
                } else {
                    (right, left)
                };
                self.search(near, q, k, exclude, heap);
                // `<=` so that equidistant lower-index rows are still visited
                if heap.len() < k || diff * diff <= heap.peek().expect("heap is full").dist2 {
                    self.search(far, q, k, exclude, heap);
                }
            }
        }
    }

    /// Neighbours of every row of `queries`, in row order.
    pub fn knn_batch(&self, queries: &Matrix, k: usize) -> Vec<Vec<Neighbor>> {
        (0..queries.rows())
            .into_par_iter()
            .map(|r| self.knn(queries.row(r), k, None))
            .collect()
    }

    /// Neighbours of every tree row among the other tree rows.
    pub fn knn_self(&self, k: usize) -> Vec<Vec<Neighbor>> {
        (0..self.len())
            .into_par_iter()
            .map(|r| self.knn(self.points.row(r), k, Some(r)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn brute(points: &Matrix, q: &[f64], k: usize, exclude: Option<usize>) -> Vec<Neighbor> {
        let mut all: Vec<Neighbor> = (0..points.rows())
            .filter(|&i| Some(i) != exclude)
            .map(|i| Neighbor {
                index: i,
                dist2: squared_distance(q, points.row(i)),
            })
            .collect();
        all.sort();
        all.truncate(k);
        all
    }

    #[test]
    fn matches_brute_force_with_heavy_ties() {
        let mut rng = crate::rng::seeded(5);
        for trial in 0..20 {
            let n = 50 + trial * 13;
            let d = 1 + trial % 4;
            // coarse grid so many distances tie
            let data: Vec<f64> = (0..n * d)
                .map(|_| f64::from(rng.gen_range(0..4u8)))
                .collect();
            let pts = Matrix::from_vec(n, d, data).unwrap();
            let tree = KdTree::build(pts.clone());
            for q in 0..n {
                for k in [1, 3, 7] {
                    assert_eq!(
                        tree.knn(pts.row(q), k, Some(q)),
                        brute(&pts, pts.row(q), k, Some(q)),
                        "trial {trial} q {q} k {k}"
                    );
                }
            }
        }
    }

    #[test]
    fn continuous_queries_match() {
        let mut rng = crate::rng::seeded(9);
        let pts = Matrix::from_vec(400, 3, (0..1200).map(|_| rng.gen()).collect()).unwrap();
        let qs = Matrix::from_vec(30, 3, (0..90).map(|_| rng.gen()).collect()).unwrap();
        let tree = KdTree::build(pts.clone());
        let got = tree.knn_batch(&qs, 5);
        for (r, g) in got.iter().enumerate() {
            assert_eq!(*g, brute(&pts, qs.row(r), 5, None));
        }
    }

    #[test]
    fn k_larger_than_n() {
        let pts = Matrix::from_rows(&[[0.0], [1.0]]).unwrap();
        let tree = KdTree::build(pts);
        assert_eq!(tree.knn(&[0.2], 5, None).len(), 2);
        assert_eq!(tree.knn(&[0.2], 5, Some(0)).len(), 1);
    }
}
