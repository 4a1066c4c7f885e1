//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, SVD};
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::rng::Rng;
use crate::tensor::Matrix;

/// Full thin SVD of `m`, checked against its reconstruction.
///
/// nalgebra's default convergence threshold can return a wrong factorization
/// for exactly rank-deficient inputs, so looser thresholds are tried in turn
/// until `U Σ Vᵀ` reproduces `m`.
pub fn svd(m: &DMatrix<f64>) -> SVD<f64, nalgebra::Dyn, nalgebra::Dyn> {
    let scale = m.norm().max(f64::MIN_POSITIVE);
    let mut last = None;
    for eps in [f64::EPSILON, 1e-14, 1e-12, 1e-10] {
        let Some(d) = m.clone().try_svd(true, true, eps, 0) else {
            continue;
        };
        let err = d
            .clone()
            .recompose()
            .map_or(f64::INFINITY, |r| (r - m).norm());
        if err <= 1e-10 * scale {
            return d;
        }
        last = Some(d);
    }
    last.unwrap_or_else(|| m.clone().svd(true, true))
}

/// Singular values of `m`, descending.
pub fn singular_values(m: &Matrix) -> Vec<f64> {
    let mut s: Vec<f64> = svd(&m.to_nalgebra())
        .singular_values
        .iter()
        .copied()
        .collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Top-`k` left singular vectors of `m` as the columns of a `rows x k` matrix,
/// ordered by descending singular value. When `k` exceeds the number of
/// singular vectors the SVD provides, the basis is completed with an
/// orthonormal complement.
pub fn leading_left_singular_vectors(m: &Matrix, k: usize) -> Result<Matrix> {
    let d = svd(&m.to_nalgebra());
    let u = d.u.expect("requested left singular vectors");
    let mut order: Vec<usize> = (0..d.singular_values.len()).collect();
    order.sort_by(|&a, &b| d.singular_values[b].total_cmp(&d.singular_values[a]));
    let mut cols: Vec<Vec<f64>> = order
        .iter()
        .take(k)
        .map(|&j| u.column(j).iter().copied().collect())
        .collect();
    while cols.len() < k {
        let next = complement_vector(&cols, m.rows());
        cols.push(next);
    }
    for c in &mut cols {
        fix_sign(c);
    }
    Matrix::from_columns(&cols)
}

/// Flips `v` so that its first entry of largest magnitude is positive.
pub fn fix_sign(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v.get(best).is_some_and(|&x| x < 0.0) {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Removes from `v` its components along the (orthonormal) `basis`, twice
/// for numerical stability, and returns the remaining norm.
pub fn orthogonalize(v: &mut [f64], basis: &[Vec<f64>]) -> f64 {
    for _ in 0..2 {
        for b in basis {
            let c = dot(v, b);
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
        }
    }
    norm(v)
}

/// Unit vector orthogonal to every vector in `basis`, taken from the
/// standard basis vector with the largest orthogonal remainder.
pub fn complement_vector(basis: &[Vec<f64>], dim: usize) -> Vec<f64> {
    let mut best: Option<(f64, Vec<f64>)> = None;
    for i in 0..dim {
        let mut e = vec![0.0; dim];
        e[i] = 1.0;
        let n = orthogonalize(&mut e, basis);
        if best.as_ref().is_none_or(|(bn, _)| n > *bn + 1e-12) {
            best = Some((n, e));
        }
    }
    let (n, mut v) = best.expect("dim >= 1");
    v.iter_mut().for_each(|x| *x /= n);
    v
}

/// `rows x cols` matrix with orthonormal columns: Q factor of a standard
/// Gaussian matrix.
pub fn random_orthonormal(rows: usize, cols: usize, rng: &mut Rng) -> Result<Matrix> {
    if cols > rows {
        return Err(crate::error::TpgError::InvalidArgument(format!(
            "cannot fit {cols} orthonormal columns in dimension {rows}"
        )));
    }
    let g = DMatrix::<f64>::from_fn(rows, cols, |_, _| StandardNormal.sample(rng));
    let q = g.qr().q();
    Matrix::from_nalgebra(&q.columns(0, cols).into_owned())
}

pub fn gaussian_vec(n: usize, rng: &mut Rng) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Solves the symmetric positive definite system `a · x = b` (columns of `b`).
/// Falls back to LU when the Cholesky factorization fails.
pub fn solve_spd(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    match a.clone().cholesky() {
        Some(ch) => Some(ch.solve(b)),
        None => a.clone().lu().solve(b),
    }
}

/// `‖Uᵀ U − I‖_F`.
pub fn orthonormality_defect(u: &Matrix) -> f64 {
    let g = u.view().transpose() * u.view();
    let mut acc = 0.0;
    for i in 0..g.nrows() {
        for j in 0..g.ncols() {
            let target = if i == j { 1.0 } else { 0.0 };
            acc += (g[(i, j)] - target).powi(2);
        }
    }
    acc.sqrt()
}
