//! Self-contained dense decompositions: one-sided Jacobi SVD and cyclic
//! Jacobi eigendecomposition for symmetric matrices.
//!
//! Both results follow the same sign convention: each left singular vector
//! (eigenvector) is flipped so that its entry of largest magnitude is
//! positive, ties going to the lowest index.

use crate::error::{Error, Result};
use crate::tensor::Matrix;

const TOL: f64 = 1e-12;
const MAX_SWEEPS: usize = 100;

/// Thin SVD `m = u · diag(s) · vt` with `p = min(rows, cols)` components.
#[derive(Clone, Debug)]
pub struct SvdResult {
    pub u: Matrix,
    pub s: Vec<f64>,
    pub vt: Matrix,
}

impl SvdResult {
    pub fn reconstruct(&self) -> Matrix {
        let mut us = self.u.clone();
        let p = self.s.len();
        for i in 0..us.rows() {
            for j in 0..p {
                let v = us.get(i, j) * self.s[j];
                us.set(i, j, v);
            }
        }
        us.matmul(&self.vt).expect("conformable by construction")
    }
}

/// Symmetric eigendecomposition with eigenvalues sorted non-increasing and
/// eigenvectors stored as columns.
#[derive(Clone, Debug)]
pub struct SymEigen {
    pub values: Vec<f64>,
    pub vectors: Matrix,
}

fn check_finite(m: &Matrix) -> Result<()> {
    if m.data().iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric("matrix has non-finite entries".into()))
    }
}

/// Index of the entry with largest magnitude; first one wins on ties.
fn dominant_index(v: impl Iterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_abs = f64::NEG_INFINITY;
    for (i, x) in v.enumerate() {
        if x.abs() > best_abs {
            best_abs = x.abs();
            best = i;
        }
    }
    best
}

pub fn svd(m: &Matrix) -> Result<SvdResult> {
    check_finite(m)?;
    if m.rows() >= m.cols() {
        svd_tall(m)
    } else {
        let t = svd_tall(&m.transpose())?;
        // A^T = U S V^T  =>  A = V S U^T; re-normalize signs on the new left factor.
        let mut u = t.vt.transpose();
        let mut vt = t.u.transpose();
        for j in 0..t.s.len() {
            let d = dominant_index((0..u.rows()).map(|i| u.get(i, j)));
            if u.get(d, j) < 0.0 {
                flip_column(&mut u, j);
                flip_row(&mut vt, j);
            }
        }
        Ok(SvdResult { u, s: t.s, vt })
    }
}

fn flip_column(m: &mut Matrix, j: usize) {
    for i in 0..m.rows() {
        let v = -m.get(i, j);
        m.set(i, j, v);
    }
}

fn flip_row(m: &mut Matrix, i: usize) {
    for j in 0..m.cols() {
        let v = -m.get(i, j);
        m.set(i, j, v);
    }
}

/// One-sided (Hestenes) Jacobi on the columns of a matrix with rows >= cols.
fn svd_tall(a: &Matrix) -> Result<SvdResult> {
    let (m, n) = (a.rows(), a.cols());
    // Work on columns stored contiguously.
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| a.column(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| (0..n).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();

    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha: f64 = cols[p].iter().map(|x| x * x).sum();
                let beta: f64 = cols[q].iter().map(|x| x * x).sum();
                let gamma: f64 = cols[p].iter().zip(&cols[q]).map(|(x, y)| x * y).sum();
                if gamma == 0.0 || gamma.abs() <= TOL * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let (left, right) = cols.split_at_mut(q);
                rotate(&mut left[p], &mut right[0], c, s);
                let (left, right) = v.split_at_mut(q);
                rotate(&mut left[p], &mut right[0], c, s);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Numeric("Jacobi SVD did not converge".into()));
    }

    let mut order: Vec<usize> = (0..n).collect();
    let norms: Vec<f64> = cols
        .iter()
        .map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]).then(i.cmp(&j)));

    let scale = norms.iter().cloned().fold(0.0, f64::max);
    let mut u = Matrix::zeros(m, n);
    let mut vt = Matrix::zeros(n, n);
    let mut s = Vec::with_capacity(n);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(n);
    for (dst, &src) in order.iter().enumerate() {
        let sigma = norms[src];
        let null = sigma <= scale * 1e-15 * (m.max(n) as f64) || sigma == 0.0;
        let mut col: Vec<f64> = if null {
            complete_basis(&basis, m)
        } else {
            cols[src].iter().map(|x| x / sigma).collect()
        };
        let d = dominant_index(col.iter().copied());
        let sign = if col[d] < 0.0 { -1.0 } else { 1.0 };
        col.iter_mut().for_each(|x| *x *= sign);
        for i in 0..m {
            u.set(i, dst, col[i]);
        }
        for j in 0..n {
            vt.set(dst, j, sign * v[src][j]);
        }
        s.push(if null { 0.0 } else { sigma });
        basis.push(col);
    }
    Ok(SvdResult { u, s, vt })
}

fn rotate(x: &mut [f64], y: &mut [f64], c: f64, s: f64) {
    for (a, b) in x.iter_mut().zip(y.iter_mut()) {
        let (xa, yb) = (*a, *b);
        *a = c * xa - s * yb;
        *b = s * xa + c * yb;
    }
}

/// A unit vector orthogonal to every vector in `basis`, found by
/// Gram-Schmidt over the standard basis.
fn complete_basis(basis: &[Vec<f64>], m: usize) -> Vec<f64> {
    let mut best: Option<Vec<f64>> = None;
    let mut best_norm = 0.0;
    for e in 0..m {
        let mut cand = vec![0.0; m];
        cand[e] = 1.0;
        for _ in 0..2 {
            for b in basis {
                let dot: f64 = cand.iter().zip(b).map(|(x, y)| x * y).sum();
                cand.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
            }
        }
        let norm = cand.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.5 {
            return cand.into_iter().map(|x| x / norm).collect();
        }
        if norm > best_norm {
            best_norm = norm;
            best = Some(cand);
        }
    }
    let cand = best.expect("basis is not complete");
    cand.into_iter().map(|x| x / best_norm).collect()
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
pub fn sym_eigen(a: &Matrix) -> Result<SymEigen> {
    check_finite(a)?;
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::Shape(format!("{}x{} is not square", n, a.cols())));
    }
    let mut w = a.clone();
    let mut v = Matrix::identity(n);
    let total: f64 = w.frobenius_norm();
    let mut converged = n == 1;
    for _ in 0..MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| w.get(i, j).powi(2))
            .sum::<f64>()
            .sqrt();
        if off <= TOL * total || off == 0.0 {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = w.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let theta = (w.get(q, q) - w.get(p, p)) / (2.0 * apq);
                let t = if theta == 0.0 {
                    1.0
                } else {
                    theta.signum() / (theta.abs() + (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                // W <- J^T W J with J the rotation in the (p, q) plane.
                for k in 0..n {
                    let (wkp, wkq) = (w.get(k, p), w.get(k, q));
                    w.set(k, p, c * wkp - s * wkq);
                    w.set(k, q, s * wkp + c * wkq);
                }
                for k in 0..n {
                    let (wpk, wqk) = (w.get(p, k), w.get(q, k));
                    w.set(p, k, c * wpk - s * wqk);
                    w.set(q, k, s * wpk + c * wqk);
                }
                for k in 0..n {
                    let (vkp, vkq) = (v.get(k, p), v.get(k, q));
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }
    if !converged {
        return Err(Error::Numeric("Jacobi eigensolver did not converge".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| w.get(j, j).total_cmp(&w.get(i, i)).then(i.cmp(&j)));
    let mut vectors = Matrix::zeros(n, n);
    let mut values = Vec::with_capacity(n);
    for (dst, &src) in order.iter().enumerate() {
        let d = dominant_index((0..n).map(|i| v.get(i, src)));
        let sign = if v.get(d, src) < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            vectors.set(i, dst, sign * v.get(i, src));
        }
        values.push(w.get(src, src));
    }
    Ok(SymEigen { values, vectors })
}
