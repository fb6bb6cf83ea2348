use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::params::{ParamReader, Params};
use super::sigmoid;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng;

const CHUNK: usize = 4096;

/// Linear score `w·x + b`, optionally mapped through a Platt link
/// `sigmoid(a·score + c)` (linear SVC).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub platt: Option<(f64, f64)>,
    pub iterations: usize,
    pub converged: bool,
}

impl LinearModel {
    #[inline]
    pub fn score(&self, row: &[f64]) -> f64 {
        self.weights
            .iter()
            .zip(row)
            .map(|(w, x)| w * x)
            .sum::<f64>()
            + self.intercept
    }

    pub fn predict_proba(&self, rows: &Matrix) -> Vec<f64> {
        rows.iter_rows()
            .map(|r| {
                let s = self.score(r);
                match self.platt {
                    Some((a, c)) => sigmoid(a * s + c),
                    None => sigmoid(s),
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticFit {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub iterations: usize,
    pub converged: bool,
    pub gradient_norm: f64,
}

#[inline]
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Penalized negative log-likelihood `Σ softplus(z) − y·z + ‖w‖²/(2C)`.
fn objective(x: &Matrix, y: &[u8], beta: &[f64], inv_c: f64) -> f64 {
    let p = x.cols();
    let partial: Vec<f64> = (0..x.rows())
        .collect::<Vec<_>>()
        .par_chunks(CHUNK)
        .map(|chunk| {
            chunk
                .iter()
                .map(|&i| {
                    let z = linear_term(x.row(i), beta);
                    softplus(z) - f64::from(y[i]) * z
                })
                .sum::<f64>()
        })
        .collect();
    partial.iter().sum::<f64>() + 0.5 * inv_c * beta[..p].iter().map(|b| b * b).sum::<f64>()
}

#[inline]
fn linear_term(row: &[f64], beta: &[f64]) -> f64 {
    let p = row.len();
    row.iter().zip(&beta[..p]).map(|(a, b)| a * b).sum::<f64>() + beta[p]
}

/// L2-regularized logistic regression by IRLS (damped Newton).
/// Stops when `‖∇‖ / n < tol` or after `max_iter` Newton steps.
pub fn logistic_irls(x: &Matrix, y: &[u8], c: f64, max_iter: usize, tol: f64) -> LogisticFit {
    let (n, p) = (x.rows(), x.cols());
    let dim = p + 1;
    let inv_c = if c.is_finite() && c > 0.0 {
        1.0 / c
    } else {
        0.0
    };
    let mut beta = vec![0.0; dim];
    let mut obj = objective(x, y, &beta, inv_c);
    let mut iterations = 0;
    let mut grad_norm;

    loop {
        // gradient and Hessian, summed per fixed-size chunk then in order
        let parts: Vec<(Vec<f64>, Vec<f64>)> = (0..n)
            .collect::<Vec<_>>()
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut g = vec![0.0; dim];
                let mut h = vec![0.0; dim * dim];
                for &i in chunk {
                    let row = x.row(i);
                    let mu = sigmoid(linear_term(row, &beta));
                    let r = mu - f64::from(y[i]);
                    let s = mu * (1.0 - mu);
                    for a in 0..dim {
                        let xa = if a < p { row[a] } else { 1.0 };
                        g[a] += r * xa;
                        let sxa = s * xa;
                        for b in a..dim {
                            let xb = if b < p { row[b] } else { 1.0 };
                            h[a * dim + b] += sxa * xb;
                        }
                    }
                }
                (g, h)
            })
            .collect();
        let mut g = vec![0.0; dim];
        let mut h = vec![0.0; dim * dim];
        for (pg, ph) in &parts {
            g.iter_mut().zip(pg).for_each(|(a, b)| *a += b);
            h.iter_mut().zip(ph).for_each(|(a, b)| *a += b);
        }
        for a in 0..p {
            g[a] += inv_c * beta[a];
            h[a * dim + a] += inv_c;
        }
        grad_norm = g.iter().map(|v| v * v).sum::<f64>().sqrt() / n as f64;
        if grad_norm < tol || iterations >= max_iter {
            break;
        }
        let hm = DMatrix::from_fn(dim, dim, |a, b| {
            if a <= b {
                h[a * dim + b]
            } else {
                h[b * dim + a]
            }
        });
        let gv = DVector::from_vec(g);
        let step = solve_spd(hm, &gv);
        iterations += 1;

        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let cand: Vec<f64> = beta
                .iter()
                .zip(step.iter())
                .map(|(b, d)| b - t * d)
                .collect();
            let cand_obj = objective(x, y, &cand, inv_c);
            if cand_obj <= obj {
                beta = cand;
                obj = cand_obj;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }

    let intercept = beta[p];
    beta.truncate(p);
    LogisticFit {
        weights: beta,
        intercept,
        iterations,
        converged: grad_norm < tol,
        gradient_norm: grad_norm,
    }
}

fn solve_spd(mut h: DMatrix<f64>, g: &DVector<f64>) -> DVector<f64> {
    let dim = h.nrows();
    let mut jitter = 0.0;
    for _ in 0..12 {
        if let Some(ch) = h.clone().cholesky() {
            return ch.solve(g);
        }
        let scale = (0..dim)
            .map(|i| h[(i, i)].abs())
            .fold(0.0, f64::max)
            .max(1.0);
        let next = if jitter == 0.0 {
            1e-12 * scale
        } else {
            jitter * 10.0
        };
        for i in 0..dim {
            h[(i, i)] += next - jitter;
        }
        jitter = next;
    }
    h.svd(true, true)
        .solve(g, 1e-14)
        .unwrap_or_else(|_| DVector::zeros(dim))
}

pub(super) fn fit_logreg(params: &Params, x: &Matrix, y: &[u8]) -> Result<LinearModel> {
    let r = ParamReader::new("logreg", params);
    let c = r.f64_or("c", 1.0)?;
    let max_iter = r.usize_or("max_iter", 100)?;
    let tol = r.f64_or("tol", 1e-8)?;
    if c <= 0.0 {
        return Err(Error::InvalidArgument("logreg: c must be > 0".into()));
    }
    let fit = logistic_irls(x, y, c, max_iter, tol);
    Ok(LinearModel {
        weights: fit.weights,
        intercept: fit.intercept,
        platt: None,
        iterations: fit.iterations,
        converged: fit.converged,
    })
}

/// Hinge loss + L2 by stochastic subgradient steps `η_t = 1/(λt)`; the
/// bias is an extra constant feature. Weights are averaged over the final
/// epoch, then a Platt link is fitted on the training margins.
pub(super) fn fit_linear_svc(
    params: &Params,
    x: &Matrix,
    y: &[u8],
    seed: u64,
) -> Result<LinearModel> {
    let r = ParamReader::new("linear_svc", params);
    let lambda = r.f64_or("lambda", 1e-4)?;
    let epochs = r.usize_or("epochs", 20)?;
    if lambda <= 0.0 || epochs == 0 {
        return Err(Error::InvalidArgument(
            "linear_svc: lambda must be > 0 and epochs >= 1".into(),
        ));
    }
    let (n, p) = (x.rows(), x.cols());
    let mut w = vec![0.0; p + 1];
    let mut avg = vec![0.0; p + 1];
    let mut averaged = 0usize;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = rng::seeded(seed);
    let mut t = 0usize;
    for epoch in 0..epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            t += 1;
            let eta = 1.0 / (lambda * t as f64);
            let row = x.row(i);
            let yi = if y[i] == 1 { 1.0 } else { -1.0 };
            let margin = yi * (row.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + w[p]);
            let shrink = 1.0 - eta * lambda;
            w.iter_mut().for_each(|v| *v *= shrink);
            if margin < 1.0 {
                for (wj, xj) in w.iter_mut().zip(row) {
                    *wj += eta * yi * xj;
                }
                w[p] += eta * yi;
            }
            if epoch + 1 == epochs {
                averaged += 1;
                let k = averaged as f64;
                for (a, v) in avg.iter_mut().zip(&w) {
                    *a += (v - *a) / k;
                }
            }
        }
    }
    let intercept = avg[p];
    avg.truncate(p);
    let mut model = LinearModel {
        weights: avg,
        intercept,
        platt: None,
        iterations: t,
        converged: true,
    };
    let scores: Vec<f64> = x.iter_rows().map(|r| model.score(r)).collect();
    let score_matrix = Matrix::from_vec(n, 1, scores)?;
    let link = logistic_irls(&score_matrix, y, 1e6, 100, 1e-10);
    model.platt = Some((link.weights[0], link.intercept));
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::{fit_xy, Family, LearnerSpec};
    use crate::Classifier;
    use rand::Rng;

    #[test]
    fn logreg_monotone_on_separable_1d() {
        let x = Matrix::from_rows(&[[-3.0], [-2.0], [-1.0], [1.0], [2.0], [3.0]]).unwrap();
        let y = [0, 0, 0, 1, 1, 1];
        let m = fit_xy(&LearnerSpec::new(Family::Logreg), &x, &y, vec!["x".into()]).unwrap();
        let grid =
            Matrix::from_vec(41, 1, (0..41).map(|i| -5.0 + 0.25 * i as f64).collect()).unwrap();
        let p = m.predict_proba(&grid).unwrap();
        assert!(p.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn irls_reaches_stationary_point() {
        let mut rng = crate::rng::seeded(4);
        let n = 500;
        let mut data = Vec::new();
        let mut y = Vec::new();
        for _ in 0..n {
            let a: f64 = rng.gen_range(-2.0..2.0);
            let b: f64 = rng.gen_range(-2.0..2.0);
            data.extend([a, b]);
            let pr = sigmoid(1.5 * a - 0.7 * b + 0.3);
            y.push(u8::from(rng.gen::<f64>() < pr));
        }
        let x = Matrix::from_vec(n, 2, data).unwrap();
        let fit = logistic_irls(&x, &y, 10.0, 100, 1e-8);
        assert!(fit.converged, "{fit:?}");
        assert!(fit.iterations < 20);
        // gradient recomputed independently
        let mut g = [0.0; 3];
        for (i, &yi) in y.iter().enumerate() {
            let r = x.row(i);
            let z = fit.weights[0] * r[0] + fit.weights[1] * r[1] + fit.intercept;
            let e = 1.0 / (1.0 + (-z).exp()) - f64::from(yi);
            g[0] += e * r[0];
            g[1] += e * r[1];
            g[2] += e;
        }
        g[0] += fit.weights[0] / 10.0;
        g[1] += fit.weights[1] / 10.0;
        assert!(g.iter().all(|v| v.abs() / (n as f64) < 1e-7), "{g:?}");
        assert!((fit.weights[0] - 1.5).abs() < 0.5 && (fit.weights[1] + 0.7).abs() < 0.5);
    }

    #[test]
    fn svc_separates_and_calibrates() {
        let mut rng = crate::rng::seeded(2);
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for i in 0..300 {
            let c = (i % 2) as f64;
            rows.push([c * 2.0 + rng.gen_range(-0.8..0.8), rng.gen_range(-1.0..1.0)]);
            y.push((i % 2) as u8);
        }
        let x = Matrix::from_rows(&rows).unwrap();
        let m = fit_xy(
            &LearnerSpec::new(Family::LinearSvc).with_seed(3),
            &x,
            &y,
            vec!["a".into(), "b".into()],
        )
        .unwrap();
        let pred = m.predict(&x, 0.5).unwrap();
        let acc = pred.iter().zip(&y).filter(|(a, b)| a == b).count() as f64 / 300.0;
        assert!(acc > 0.97, "{acc}");
        let p = m.predict_proba(&x).unwrap();
        assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
