//! Dense N-mode tensors and the multilinear primitives built on them.
//!
//! Storage is first-index-fastest: entry `(i_0, ..., i_{N-1})` lives at
//! `sum_k i_k * prod_{m<k} D_m`. A [`Matrix`] is the order-2 case of the same
//! layout, i.e. column-major. Unfoldings follow the Kolda index map: in the
//! mode-`n` unfolding, entry `(i_0, ..., i_{N-1})` sits at row `i_n`, column
//! `sum_{k != n} i_k * J_k` with `J_k = prod_{m<k, m != n} D_m`.

use nalgebra::{DMatrixView, DMatrixViewMut};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{mismatch, Result, TpgError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

/// Column-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(TpgError::InvalidShape("order must be at least 1".into()));
    }
    if let Some(pos) = shape.iter().position(|&d| d == 0) {
        return Err(TpgError::InvalidShape(format!(
            "mode {pos} has size 0 in {shape:?}"
        )));
    }
    shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| TpgError::InvalidShape(format!("{shape:?} overflows")))
}

impl DenseTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let len = check_shape(&shape)?;
        if data.len() != len {
            return Err(mismatch(format!(
                "shape {shape:?} needs {len} entries, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        let len = check_shape(shape)?;
        Ok(Self {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        })
    }

    /// Builds a tensor by evaluating `f` at every multi-index, in storage order.
    pub fn from_fn(shape: &[usize], mut f: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        let len = check_shape(shape)?;
        let mut data = Vec::with_capacity(len);
        let mut idx = vec![0usize; shape.len()];
        for _ in 0..len {
            data.push(f(&idx));
            increment(&mut idx, shape);
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn order(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn linear_index(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.shape.len());
        let mut lin = 0;
        let mut stride = 1;
        for (&i, &d) in idx.iter().zip(&self.shape) {
            debug_assert!(i < d);
            lin += i * stride;
            stride *= d;
        }
        lin
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.linear_index(idx)]
    }

    pub fn set(&mut self, idx: &[usize], value: f64) {
        let lin = self.linear_index(idx);
        self.data[lin] = value;
    }

    pub fn frobenius_norm(&self) -> f64 {
        frobenius_norm(self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| alpha * v).collect(),
        }
    }

    /// `self + alpha * other`.
    pub fn add_scaled(&self, other: &DenseTensor, alpha: f64) -> Result<Self> {
        if self.shape != other.shape {
            return Err(mismatch(format!(
                "shapes {:?} and {:?} differ",
                self.shape, other.shape
            )));
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + alpha * b)
                .collect(),
        })
    }

    pub fn sub(&self, other: &DenseTensor) -> Result<Self> {
        self.add_scaled(other, -1.0)
    }

    /// Frobenius inner product.
    pub fn dot(&self, other: &DenseTensor) -> Result<f64> {
        if self.shape != other.shape {
            return Err(mismatch(format!(
                "shapes {:?} and {:?} differ",
                self.shape, other.shape
            )));
        }
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    /// Mode-`mode` unfolding (Kolda convention).
    pub fn unfold(&self, mode: usize) -> Result<Matrix> {
        unfold(self, mode)
    }

    pub fn nmode_product(&self, m: &Matrix, mode: usize) -> Result<Self> {
        nmode_product(self, m, mode)
    }

    fn check_mode(&self, mode: usize) -> Result<()> {
        if mode >= self.order() {
            return Err(TpgError::InvalidMode {
                mode,
                order: self.order(),
            });
        }
        Ok(())
    }

    /// `(left, size, right)` where `left`/`right` are the products of the mode
    /// sizes before/after `mode`.
    fn split_at_mode(&self, mode: usize) -> (usize, usize, usize) {
        let left = self.shape[..mode].iter().product();
        let right = self.shape[mode + 1..].iter().product();
        (left, self.shape[mode], right)
    }
}

fn increment(idx: &mut [usize], shape: &[usize]) {
    for (i, &d) in idx.iter_mut().zip(shape) {
        *i += 1;
        if *i < d {
            return;
        }
        *i = 0;
    }
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        check_shape(&[rows, cols])?;
        if rows * cols != data.len() {
            return Err(mismatch(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Result<Self> {
        check_shape(&[rows, cols])?;
        Ok(Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        })
    }

    pub fn identity(n: usize) -> Result<Self> {
        let mut m = Self::zeros(n, n)?;
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        Ok(m)
    }

    /// Row-major nested input, mostly for tests and literals.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(mismatch("ragged rows"));
        }
        let mut m = Self::zeros(r, c)?;
        for (i, row) in rows.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                m.set(i, j, v);
            }
        }
        Ok(m)
    }

    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let c = columns.len();
        let r = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|col| col.len() != r) {
            return Err(mismatch("ragged columns"));
        }
        Self::new(r, c, columns.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r + c * self.rows]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r + c * self.rows] = v;
    }

    pub fn column(&self, c: usize) -> &[f64] {
        &self.data[c * self.rows..(c + 1) * self.rows]
    }

    pub fn row(&self, r: usize) -> Vec<f64> {
        (0..self.cols).map(|c| self.get(r, c)).collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix {
            rows: self.cols,
            cols: self.rows,
            data: vec![0.0; self.data.len()],
        };
        for c in 0..self.cols {
            for r in 0..self.rows {
                t.set(c, r, self.get(r, c));
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(mismatch(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols)?;
        DMatrixViewMut::from_slice(&mut out.data, self.rows, other.cols).gemm(
            1.0,
            &self.view(),
            &other.view(),
            0.0,
        );
        Ok(out)
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(mismatch(format!(
                "vector of length {} against {} columns",
                x.len(),
                self.cols
            )));
        }
        let mut y = vec![0.0; self.rows];
        for (c, &xc) in x.iter().enumerate() {
            for (yr, &a) in y.iter_mut().zip(self.column(c)) {
                *yr += a * xc;
            }
        }
        Ok(y)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn view(&self) -> DMatrixView<'_, f64> {
        DMatrixView::from_slice(&self.data, self.rows, self.cols)
    }

    pub fn to_nalgebra(&self) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_column_slice(self.rows, self.cols, &self.data)
    }

    pub fn from_nalgebra(m: &nalgebra::DMatrix<f64>) -> Result<Matrix> {
        Matrix::new(m.nrows(), m.ncols(), m.as_slice().to_vec())
    }
}

impl From<Matrix> for DenseTensor {
    fn from(m: Matrix) -> Self {
        DenseTensor {
            shape: vec![m.rows, m.cols],
            data: m.data,
        }
    }
}

impl TryFrom<DenseTensor> for Matrix {
    type Error = TpgError;

    fn try_from(t: DenseTensor) -> Result<Matrix> {
        if t.order() != 2 {
            return Err(mismatch(format!(
                "expected an order-2 tensor, got shape {:?}",
                t.shape
            )));
        }
        Ok(Matrix {
            rows: t.shape[0],
            cols: t.shape[1],
            data: t.data,
        })
    }
}

pub fn unfold(t: &DenseTensor, mode: usize) -> Result<Matrix> {
    t.check_mode(mode)?;
    let (left, size, right) = t.split_at_mode(mode);
    if left == 1 {
        return Matrix::new(size, right, t.data.clone());
    }
    let cols = left * right;
    let mut out = vec![0.0; t.len()];
    for b in 0..right {
        for i in 0..size {
            let src = &t.data[left * (i + size * b)..left * (i + size * b + 1)];
            for (a, &v) in src.iter().enumerate() {
                out[i + size * (a + left * b)] = v;
            }
        }
    }
    Matrix::new(size, cols, out)
}

/// Inverse of [`unfold`].
pub fn refold(m: &Matrix, mode: usize, shape: &[usize]) -> Result<DenseTensor> {
    let len = check_shape(shape)?;
    if mode >= shape.len() {
        return Err(TpgError::InvalidMode {
            mode,
            order: shape.len(),
        });
    }
    let size = shape[mode];
    if m.rows != size || m.rows * m.cols != len {
        return Err(mismatch(format!(
            "{}x{} matrix cannot be refolded at mode {mode} into {shape:?}",
            m.rows, m.cols
        )));
    }
    let left: usize = shape[..mode].iter().product();
    let right: usize = shape[mode + 1..].iter().product();
    let mut data = vec![0.0; len];
    for b in 0..right {
        for i in 0..size {
            let dst = &mut data[left * (i + size * b)..left * (i + size * b + 1)];
            for (a, v) in dst.iter_mut().enumerate() {
                *v = m.data[i + size * (a + left * b)];
            }
        }
    }
    DenseTensor::new(shape.to_vec(), data)
}

/// `t ×_mode m`: replaces mode size `D_mode` by `rows(m)`, with
/// `unfold(result, mode) = m · unfold(t, mode)`.
pub fn nmode_product(t: &DenseTensor, m: &Matrix, mode: usize) -> Result<DenseTensor> {
    t.check_mode(mode)?;
    let (left, size, right) = t.split_at_mode(mode);
    if m.cols != size {
        return Err(mismatch(format!(
            "matrix with {} columns against mode {mode} of size {size}",
            m.cols
        )));
    }
    let new_size = m.rows;
    let mut shape = t.shape.clone();
    shape[mode] = new_size;
    let mut out = vec![0.0; left * new_size * right];
    if left == 1 {
        // The tensor is a size x right column-major matrix.
        DMatrixViewMut::from_slice(&mut out, new_size, right).gemm(
            1.0,
            &m.view(),
            &DMatrixView::from_slice(&t.data, size, right),
            0.0,
        );
    } else {
        // Each slab at fixed trailing index is a left x size matrix; multiply by m^T.
        out.par_chunks_mut(left * new_size)
            .zip(t.data.par_chunks(left * size))
            .for_each(|(dst, src)| {
                DMatrixViewMut::from_slice(dst, left, new_size).gemm(
                    1.0,
                    &DMatrixView::from_slice(src, left, size),
                    &m.view().transpose(),
                    0.0,
                );
            });
    }
    DenseTensor::new(shape, out)
}

fn check_slicewise(x: &DenseTensor, w: &DenseTensor) -> Result<(usize, usize, usize, usize)> {
    if x.order() != 3 || w.order() != 3 {
        return Err(mismatch(format!(
            "slicewise product needs order-3 tensors, got {:?} and {:?}",
            x.shape, w.shape
        )));
    }
    let (t, d1, m) = (x.shape[0], x.shape[1], x.shape[2]);
    if w.shape[0] != d1 || w.shape[2] != m {
        return Err(mismatch(format!(
            "predictors {:?} incompatible with coefficients {:?}",
            x.shape, w.shape
        )));
    }
    Ok((t, d1, w.shape[1], m))
}

/// Per-slice product: slice `m` of the result is `X[:,:,m] · W[:,:,m]`.
pub fn slicewise_matmul(x: &DenseTensor, w: &DenseTensor) -> Result<DenseTensor> {
    let (t, d1, d2, m) = check_slicewise(x, w)?;
    let mut out = vec![0.0; t * d2 * m];
    out.par_chunks_mut(t * d2)
        .zip(x.data.par_chunks(t * d1))
        .zip(w.data.par_chunks(d1 * d2))
        .for_each(|((dst, xs), ws)| {
            DMatrixViewMut::from_slice(dst, t, d2).gemm(
                1.0,
                &DMatrixView::from_slice(xs, t, d1),
                &DMatrixView::from_slice(ws, d1, d2),
                0.0,
            );
        });
    DenseTensor::new(vec![t, d2, m], out)
}

/// Per-slice transposed product: slice `m` of the result is `X[:,:,m]ᵀ · R[:,:,m]`.
pub fn slicewise_matmul_tn(x: &DenseTensor, r: &DenseTensor) -> Result<DenseTensor> {
    if x.order() != 3 || r.order() != 3 || x.shape[0] != r.shape[0] || x.shape[2] != r.shape[2] {
        return Err(mismatch(format!(
            "cannot form slicewise X^T R for {:?} and {:?}",
            x.shape, r.shape
        )));
    }
    let (t, d1, m) = (x.shape[0], x.shape[1], x.shape[2]);
    let d2 = r.shape[1];
    let mut out = vec![0.0; d1 * d2 * m];
    out.par_chunks_mut(d1 * d2)
        .zip(x.data.par_chunks(t * d1))
        .zip(r.data.par_chunks(t * d2))
        .for_each(|((dst, xs), rs)| {
            DMatrixViewMut::from_slice(dst, d1, d2).gemm_tr(
                1.0,
                &DMatrixView::from_slice(xs, t, d1),
                &DMatrixView::from_slice(rs, t, d2),
                0.0,
            );
        });
    DenseTensor::new(vec![d1, d2, m], out)
}

pub fn frobenius_norm(t: &DenseTensor) -> f64 {
    t.data.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng as _;

    fn seq_tensor(shape: &[usize]) -> DenseTensor {
        let n: usize = shape.iter().product();
        DenseTensor::new(shape.to_vec(), (1..=n).map(|v| v as f64).collect()).unwrap()
    }

    fn random_tensor(shape: &[usize], seed: u64) -> DenseTensor {
        let mut rng = crate::rng::seeded(seed);
        DenseTensor::from_fn(shape, |_| rng.random_range(-1.0..1.0)).unwrap()
    }

    /// Kolda index map enumerated entry by entry.
    fn unfold_oracle(t: &DenseTensor, mode: usize) -> Vec<Vec<f64>> {
        let shape = t.shape();
        let cols: usize = shape
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != mode)
            .map(|(_, d)| d)
            .product();
        let mut out = vec![vec![0.0; cols]; shape[mode]];
        let mut idx = vec![0usize; shape.len()];
        for _ in 0..t.len() {
            let mut j = 0;
            for k in 0..shape.len() {
                if k == mode {
                    continue;
                }
                let jk: usize = (0..k).filter(|&m| m != mode).map(|m| shape[m]).product();
                j += idx[k] * jk;
            }
            out[idx[mode]][j] = t.get(&idx);
            increment(&mut idx, shape);
        }
        out
    }

    #[test]
    fn unfold_matches_worked_examples() {
        let t = seq_tensor(&[2, 2, 2]);
        let m0 = unfold(&t, 0).unwrap();
        assert_eq!(m0.row(0), vec![1.0, 3.0, 5.0, 7.0]);
        assert_eq!(m0.row(1), vec![2.0, 4.0, 6.0, 8.0]);
        let m2 = unfold(&t, 2).unwrap();
        assert_eq!(m2.row(0), vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m2.row(1), vec![5.0, 6.0, 7.0, 8.0]);
        for mode in 0..3 {
            let m = unfold(&t, mode).unwrap();
            let oracle = unfold_oracle(&t, mode);
            for (i, row) in oracle.iter().enumerate() {
                assert_eq!(&m.row(i), row);
            }
        }
    }

    #[test]
    fn unfold_order_two_is_identity() {
        let t = random_tensor(&[3, 5], 1);
        let m = unfold(&t, 0).unwrap();
        assert_eq!(DenseTensor::from(m), t);
    }

    #[test]
    fn unfold_rejects_bad_mode() {
        let t = seq_tensor(&[2, 2, 2]);
        let err = unfold(&t, 3).unwrap_err();
        assert!(err.to_string().contains("invalid mode"));
    }

    #[test]
    fn refold_inverts_examples() {
        let t = random_tensor(&[3, 4, 2], 2);
        assert_eq!(refold(&unfold(&t, 1).unwrap(), 1, t.shape()).unwrap(), t);
        let m = Matrix::from_rows(&[vec![1., 3., 5., 7.], vec![2., 4., 6., 8.]]).unwrap();
        assert_eq!(refold(&m, 0, &[2, 2, 2]).unwrap(), seq_tensor(&[2, 2, 2]));
        let bad = Matrix::zeros(2, 3).unwrap();
        assert!(refold(&bad, 0, &[2, 2, 2]).is_err());
    }

    #[test]
    fn nmode_product_examples() {
        let t = random_tensor(&[3, 4, 2], 3);
        for mode in 0..3 {
            let eye = Matrix::identity(t.shape()[mode]).unwrap();
            assert_eq!(nmode_product(&t, &eye, mode).unwrap(), t);
        }
        let t2 = DenseTensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let ones = Matrix::from_rows(&[vec![1.0, 1.0]]).unwrap();
        let sums = nmode_product(&t2, &ones, 0).unwrap();
        assert_eq!(sums.shape(), &[1, 2]);
        assert_eq!(sums.data(), &[3.0, 7.0]);

        let a = Matrix::from_nalgebra(&nalgebra::DMatrix::from_fn(5, 3, |i, j| {
            (i as f64 + 1.0) * 0.3 - j as f64
        }))
        .unwrap();
        let b = Matrix::from_nalgebra(&nalgebra::DMatrix::from_fn(2, 4, |i, j| {
            (i * j) as f64 - 0.5
        }))
        .unwrap();
        let ab = nmode_product(&nmode_product(&t, &a, 0).unwrap(), &b, 1).unwrap();
        let ba = nmode_product(&nmode_product(&t, &b, 1).unwrap(), &a, 0).unwrap();
        assert!(ab.sub(&ba).unwrap().frobenius_norm() < 1e-12);
    }

    #[test]
    fn nmode_product_dimension_mismatch() {
        let t = random_tensor(&[3, 4, 2], 4);
        let m = Matrix::zeros(2, 3).unwrap();
        assert!(nmode_product(&t, &m, 1).is_err());
    }

    #[test]
    fn slicewise_examples() {
        let x = random_tensor(&[4, 3, 2], 5);
        let w = DenseTensor::zeros(&[3, 2, 2]).unwrap();
        let y = slicewise_matmul(&x, &w).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));

        // M = 1: [[1,2],[3,4],[5,6]] · [[1,0],[2,1]]
        let x1 = DenseTensor::new(vec![3, 2, 1], vec![1., 3., 5., 2., 4., 6.]).unwrap();
        let w1 = DenseTensor::new(vec![2, 2, 1], vec![1., 2., 0., 1.]).unwrap();
        let y1 = slicewise_matmul(&x1, &w1).unwrap();
        assert_eq!(y1.data(), &[5., 11., 17., 2., 4., 6.]);

        assert!(slicewise_matmul(&x, &DenseTensor::zeros(&[2, 2, 2]).unwrap()).is_err());
    }

    #[test]
    fn frobenius_examples() {
        assert_eq!(DenseTensor::zeros(&[2, 3]).unwrap().frobenius_norm(), 0.0);
        assert_eq!(
            DenseTensor::new(vec![1], vec![3.0])
                .unwrap()
                .frobenius_norm(),
            3.0
        );
        assert_eq!(
            DenseTensor::new(vec![3], vec![1.0, 2.0, 2.0])
                .unwrap()
                .frobenius_norm(),
            3.0
        );
    }

    #[test]
    fn rejects_zero_sized_modes() {
        assert!(DenseTensor::zeros(&[2, 0]).is_err());
        assert!(DenseTensor::zeros(&[]).is_err());
        assert!(DenseTensor::new(vec![2, 2], vec![1.0; 3]).is_err());
    }

    fn shape_strategy() -> impl Strategy<Value = Vec<usize>> {
        prop::collection::vec(1usize..5, 1..5)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn refold_unfold_roundtrip(shape in shape_strategy(), seed in any::<u64>()) {
            let t = random_tensor(&shape, seed);
            for mode in 0..shape.len() {
                let back = refold(&unfold(&t, mode).unwrap(), mode, &shape).unwrap();
                prop_assert_eq!(&back, &t);
            }
        }

        #[test]
        fn unfolding_preserves_frobenius(shape in shape_strategy(), seed in any::<u64>()) {
            let t = random_tensor(&shape, seed);
            let total = t.frobenius_norm().powi(2);
            for mode in 0..shape.len() {
                let m = unfold(&t, mode).unwrap();
                let by_rows: f64 = (0..m.rows())
                    .map(|i| m.row(i).iter().map(|v| v * v).sum::<f64>())
                    .sum();
                prop_assert!((by_rows - total).abs() <= 1e-12 * total.max(1.0));
            }
        }

        #[test]
        fn nmode_product_matches_unfolded_matmul(
            shape in shape_strategy(),
            rows in 1usize..5,
            seed in any::<u64>(),
        ) {
            let t = random_tensor(&shape, seed);
            for mode in 0..shape.len() {
                let mut rng = crate::rng::seeded(seed ^ mode as u64);
                let m = Matrix::new(
                    rows,
                    shape[mode],
                    (0..rows * shape[mode]).map(|_| rng.random_range(-1.0..1.0)).collect(),
                ).unwrap();
                let lhs = unfold(&nmode_product(&t, &m, mode).unwrap(), mode).unwrap();
                let rhs = m.matmul(&unfold(&t, mode).unwrap()).unwrap();
                for (a, b) in lhs.data().iter().zip(rhs.data()) {
                    prop_assert!((a - b).abs() <= 1e-12);
                }
            }
        }

        #[test]
        fn slicewise_matches_triple_loop(
            t in 1usize..9, d1 in 1usize..7, d2 in 1usize..7, m in 1usize..5,
            seed in any::<u64>(),
        ) {
            let x = random_tensor(&[t, d1, m], seed);
            let w = random_tensor(&[d1, d2, m], seed.wrapping_add(1));
            let y = slicewise_matmul(&x, &w).unwrap();
            for s in 0..m {
                for i in 0..t {
                    for j in 0..d2 {
                        let mut acc = 0.0;
                        for k in 0..d1 {
                            acc += x.get(&[i, k, s]) * w.get(&[k, j, s]);
                        }
                        prop_assert!((y.get(&[i, j, s]) - acc).abs() <= 1e-12);
                    }
                }
            }
        }
    }
}
