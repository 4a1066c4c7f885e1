//! Regression losses over a coefficient tensor `W`.
//!
//! * slicewise-linear: `‖Y − ⟨X, W⟩‖²_F`, where slice `m` of `⟨X, W⟩` is
//!   `X[:,:,m] · W[:,:,m]`.
//! * mlmtl: `Σ_t ‖y_t − X_t w_t‖²` with `w_t` a column of the mode-0 unfolding.
//! * var-laplacian: the slicewise loss on lagged designs plus
//!   `μ Σ_m tr(X̂_m L X̂_mᵀ)`, where `X̂_m = X_m W_m` holds one prediction row
//!   per time step and `L` is a spatial graph Laplacian over locations.
//!
//! Gradients are true gradients of these losses, so `W − η ∇L` descends.

use std::borrow::Cow;

use nalgebra::DVectorView;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{mismatch, Result, TpgError};
use crate::sketch::{Sketch, SketchSpec};
use crate::tensor::{nmode_product, slicewise_matmul, slicewise_matmul_tn, DenseTensor, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelVariant {
    SlicewiseLinear,
    Mlmtl,
    VarLaplacian,
}

/// Predictors `(T, D1, M)` and responses `(T, D2, M)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SlicewiseModel {
    x: DenseTensor,
    y: DenseTensor,
}

/// One task of a multi-linear multi-task problem. `column` is the column of
/// the mode-0 unfolding of `W` that holds this task's coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlmtlTask {
    pub x: Matrix,
    pub y: Vec<f64>,
    pub column: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlmtlModel {
    shape: Vec<usize>,
    tasks: Vec<MlmtlTask>,
}

/// Lagged design `(n, P·L, M)`, targets `(n, P, M)`, Laplacian `P x P`.
#[derive(Debug, Clone, PartialEq)]
pub struct VarLaplacianModel {
    x: DenseTensor,
    y: DenseTensor,
    laplacian: Matrix,
    mu: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RegressionModel {
    Slicewise(SlicewiseModel),
    Mlmtl(MlmtlModel),
    VarLaplacian(VarLaplacianModel),
}

fn check_xy(x: &DenseTensor, y: &DenseTensor) -> Result<()> {
    if x.order() != 3 || y.order() != 3 {
        return Err(mismatch(format!(
            "predictors {:?} and responses {:?} must both have order 3",
            x.shape(),
            y.shape()
        )));
    }
    if x.shape()[0] != y.shape()[0] || x.shape()[2] != y.shape()[2] {
        return Err(mismatch(format!(
            "predictors {:?} and responses {:?} disagree on samples or slices",
            x.shape(),
            y.shape()
        )));
    }
    Ok(())
}

impl SlicewiseModel {
    pub fn new(x: DenseTensor, y: DenseTensor) -> Result<Self> {
        check_xy(&x, &y)?;
        Ok(Self { x, y })
    }

    pub fn x(&self) -> &DenseTensor {
        &self.x
    }

    pub fn y(&self) -> &DenseTensor {
        &self.y
    }
}

impl MlmtlModel {
    pub fn new(shape: Vec<usize>, tasks: Vec<MlmtlTask>) -> Result<Self> {
        DenseTensor::zeros(&shape)?;
        let d = shape[0];
        let cols: usize = shape[1..].iter().product();
        if tasks.is_empty() {
            return Err(TpgError::InvalidArgument("no tasks".into()));
        }
        for (i, t) in tasks.iter().enumerate() {
            if t.x.cols() != d {
                return Err(mismatch(format!(
                    "task {i} has {} features, model expects {d}",
                    t.x.cols()
                )));
            }
            if t.x.rows() != t.y.len() {
                return Err(mismatch(format!(
                    "task {i} has {} rows but {} targets",
                    t.x.rows(),
                    t.y.len()
                )));
            }
            if t.column >= cols {
                return Err(mismatch(format!(
                    "task {i} maps to column {} of {cols}",
                    t.column
                )));
            }
        }
        Ok(Self { shape, tasks })
    }

    pub fn tasks(&self) -> &[MlmtlTask] {
        &self.tasks
    }
}

/// Checks symmetry and zero row sums within `1e-8`.
pub fn validate_laplacian(l: &Matrix) -> Result<()> {
    if l.rows() != l.cols() {
        return Err(mismatch("Laplacian must be square"));
    }
    let scale = l.data().iter().fold(1.0f64, |a, v| a.max(v.abs()));
    for i in 0..l.rows() {
        let mut row_sum = 0.0;
        for j in 0..l.cols() {
            if (l.get(i, j) - l.get(j, i)).abs() > 1e-8 * scale {
                return Err(TpgError::InvalidArgument(
                    "Laplacian is not symmetric".into(),
                ));
            }
            row_sum += l.get(i, j);
        }
        if row_sum.abs() > 1e-8 * scale {
            return Err(TpgError::InvalidArgument(format!(
                "Laplacian row {i} sums to {row_sum}"
            )));
        }
    }
    Ok(())
}

impl VarLaplacianModel {
    pub fn new(x: DenseTensor, y: DenseTensor, laplacian: Matrix, mu: f64) -> Result<Self> {
        check_xy(&x, &y)?;
        if !(mu >= 0.0) || !mu.is_finite() {
            return Err(TpgError::InvalidArgument(format!(
                "mu must be >= 0, got {mu}"
            )));
        }
        if laplacian.rows() != y.shape()[1] {
            return Err(mismatch(format!(
                "Laplacian of size {} for {} locations",
                laplacian.rows(),
                y.shape()[1]
            )));
        }
        validate_laplacian(&laplacian)?;
        Ok(Self {
            x,
            y,
            laplacian,
            mu,
        })
    }

    pub fn x(&self) -> &DenseTensor {
        &self.x
    }

    pub fn y(&self) -> &DenseTensor {
        &self.y
    }

    pub fn laplacian(&self) -> &Matrix {
        &self.laplacian
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    /// Sum over slices and time steps of `x̂_t L x̂_tᵀ`, along with `X̂ L`.
    fn penalty(&self, pred: &DenseTensor) -> Result<(f64, DenseTensor)> {
        let pl = nmode_product(pred, &self.laplacian, 1)?;
        Ok((pred.dot(&pl)?, pl))
    }
}

fn sq_residual(y: &DenseTensor, pred: &DenseTensor) -> (f64, DenseTensor) {
    let r = y.sub(pred).expect("same shape");
    let s = r.data().iter().map(|v| v * v).sum();
    (s, r)
}

impl RegressionModel {
    pub fn slicewise(x: DenseTensor, y: DenseTensor) -> Result<Self> {
        Ok(RegressionModel::Slicewise(SlicewiseModel::new(x, y)?))
    }

    pub fn mlmtl(shape: Vec<usize>, tasks: Vec<MlmtlTask>) -> Result<Self> {
        Ok(RegressionModel::Mlmtl(MlmtlModel::new(shape, tasks)?))
    }

    pub fn var_laplacian(
        x: DenseTensor,
        y: DenseTensor,
        laplacian: Matrix,
        mu: f64,
    ) -> Result<Self> {
        Ok(RegressionModel::VarLaplacian(VarLaplacianModel::new(
            x, y, laplacian, mu,
        )?))
    }

    pub fn variant(&self) -> ModelVariant {
        match self {
            RegressionModel::Slicewise(_) => ModelVariant::SlicewiseLinear,
            RegressionModel::Mlmtl(_) => ModelVariant::Mlmtl,
            RegressionModel::VarLaplacian(_) => ModelVariant::VarLaplacian,
        }
    }

    /// Shape of the coefficient tensor `W`.
    pub fn model_shape(&self) -> Vec<usize> {
        match self {
            RegressionModel::Slicewise(m) => vec![m.x.shape()[1], m.y.shape()[1], m.x.shape()[2]],
            RegressionModel::VarLaplacian(m) => {
                vec![m.x.shape()[1], m.y.shape()[1], m.x.shape()[2]]
            }
            RegressionModel::Mlmtl(m) => m.shape.clone(),
        }
    }

    /// Number of samples along mode 0 (slicewise and VAR models).
    pub fn sample_count(&self) -> Option<usize> {
        match self {
            RegressionModel::Slicewise(m) => Some(m.x.shape()[0]),
            RegressionModel::VarLaplacian(m) => Some(m.x.shape()[0]),
            RegressionModel::Mlmtl(_) => None,
        }
    }

    fn check_w(&self, w: &DenseTensor) -> Result<()> {
        let shape = self.model_shape();
        if w.shape() != shape.as_slice() {
            return Err(mismatch(format!(
                "coefficients {:?}, model expects {shape:?}",
                w.shape()
            )));
        }
        Ok(())
    }

    pub fn loss(&self, w: &DenseTensor) -> Result<f64> {
        self.check_w(w)?;
        match self {
            RegressionModel::Slicewise(m) => Ok(sq_residual(&m.y, &slicewise_matmul(&m.x, w)?).0),
            RegressionModel::VarLaplacian(m) => {
                let pred = slicewise_matmul(&m.x, w)?;
                let (fit, _) = sq_residual(&m.y, &pred);
                if m.mu == 0.0 {
                    return Ok(fit);
                }
                Ok(fit + m.mu * m.penalty(&pred)?.0)
            }
            RegressionModel::Mlmtl(m) => {
                let d = m.shape[0];
                Ok(m.tasks
                    .par_iter()
                    .map(|t| {
                        let wt =
                            DVectorView::from_slice(&w.data()[t.column * d..(t.column + 1) * d], d);
                        let r = DVectorView::from_slice(&t.y, t.y.len()) - t.x.view() * wt;
                        r.norm_squared()
                    })
                    .collect::<Vec<f64>>()
                    .iter()
                    .sum())
            }
        }
    }

    pub fn gradient(&self, w: &DenseTensor) -> Result<DenseTensor> {
        self.check_w(w)?;
        match self {
            RegressionModel::Slicewise(m) => {
                let pred = slicewise_matmul(&m.x, w)?;
                let resid = m.y.sub(&pred)?;
                Ok(slicewise_matmul_tn(&m.x, &resid)?.scaled(-2.0))
            }
            RegressionModel::VarLaplacian(m) => {
                let pred = slicewise_matmul(&m.x, w)?;
                // −2(Y − X̂) + 2μ X̂ L, pulled back through Xᵀ.
                let mut inner = pred.sub(&m.y)?.scaled(2.0);
                if m.mu != 0.0 {
                    let (_, pl) = m.penalty(&pred)?;
                    inner = inner.add_scaled(&pl, 2.0 * m.mu)?;
                }
                slicewise_matmul_tn(&m.x, &inner)
            }
            RegressionModel::Mlmtl(m) => {
                let d = m.shape[0];
                let mut g = DenseTensor::zeros(&m.shape)?;
                for t in &m.tasks {
                    let cols = t.column * d..(t.column + 1) * d;
                    let wt = DVectorView::from_slice(&w.data()[cols.clone()], d);
                    let r = DVectorView::from_slice(&t.y, t.y.len()) - t.x.view() * wt;
                    let gt = t.x.view().tr_mul(&r);
                    for (dst, v) in g.data_mut()[cols].iter_mut().zip(gt.iter()) {
                        *dst -= 2.0 * v;
                    }
                }
                Ok(g)
            }
        }
    }

    /// Model with predictors and responses compressed along the sample mode.
    /// A spec with `N = 0` takes `N` from the data.
    pub fn sketched(&self, spec: &SketchSpec) -> Result<RegressionModel> {
        let samples = self.sample_count().ok_or_else(|| {
            TpgError::InvalidArgument("sketching needs a model with a sample mode".into())
        })?;
        let mut spec = *spec;
        if spec.n == 0 {
            spec.n = samples;
        }
        if spec.n != samples {
            return Err(mismatch(format!(
                "sketch built for {} samples, model has {samples}",
                spec.n
            )));
        }
        let sketch = spec.build()?;
        self.sketched_with(&sketch)
    }

    pub fn sketched_with(&self, sketch: &Sketch) -> Result<RegressionModel> {
        match self {
            RegressionModel::Slicewise(m) => {
                RegressionModel::slicewise(sketch.apply(&m.x)?, sketch.apply(&m.y)?)
            }
            RegressionModel::VarLaplacian(m) => RegressionModel::var_laplacian(
                sketch.apply(&m.x)?,
                sketch.apply(&m.y)?,
                m.laplacian.clone(),
                m.mu,
            ),
            RegressionModel::Mlmtl(_) => Err(TpgError::InvalidArgument(
                "sketching is not supported for multi-task models".into(),
            )),
        }
    }

    /// Same model restricted to the given sample indices (mode 0), or for
    /// multi-task models to the given rows of every task.
    pub fn subset_samples(&self, keep: &dyn Fn(usize) -> bool) -> Result<RegressionModel> {
        fn take(t: &DenseTensor, rows: &[usize]) -> Result<DenseTensor> {
            let shape = t.shape();
            let mut new_shape = shape.to_vec();
            new_shape[0] = rows.len();
            DenseTensor::from_fn(&new_shape, |idx| {
                let mut src = idx.to_vec();
                src[0] = rows[idx[0]];
                t.get(&src)
            })
        }
        match self {
            RegressionModel::Slicewise(m) => {
                let rows: Vec<usize> = (0..m.x.shape()[0]).filter(|&i| keep(i)).collect();
                RegressionModel::slicewise(take(&m.x, &rows)?, take(&m.y, &rows)?)
            }
            RegressionModel::VarLaplacian(m) => {
                let rows: Vec<usize> = (0..m.x.shape()[0]).filter(|&i| keep(i)).collect();
                RegressionModel::var_laplacian(
                    take(&m.x, &rows)?,
                    take(&m.y, &rows)?,
                    m.laplacian.clone(),
                    m.mu,
                )
            }
            RegressionModel::Mlmtl(m) => {
                let mut tasks = Vec::new();
                for t in &m.tasks {
                    let rows: Vec<usize> = (0..t.y.len()).filter(|&i| keep(i)).collect();
                    if rows.is_empty() {
                        continue;
                    }
                    let mut x = Matrix::zeros(rows.len(), t.x.cols())?;
                    for (r, &src) in rows.iter().enumerate() {
                        for c in 0..t.x.cols() {
                            x.set(r, c, t.x.get(src, c));
                        }
                    }
                    tasks.push(MlmtlTask {
                        x,
                        y: rows.iter().map(|&i| t.y[i]).collect(),
                        column: t.column,
                    });
                }
                RegressionModel::mlmtl(m.shape.clone(), tasks)
            }
        }
    }

    /// Largest sample count along which rows can be split (per task for
    /// multi-task models).
    pub fn max_rows(&self) -> usize {
        match self {
            RegressionModel::Mlmtl(m) => m.tasks.iter().map(|t| t.y.len()).max().unwrap_or(0),
            _ => self.sample_count().unwrap_or(0),
        }
    }

    /// Residual sum of squares without any regularizer, and the number of
    /// scalar responses it covers.
    pub fn prediction_error(&self, w: &DenseTensor) -> Result<(f64, usize)> {
        self.check_w(w)?;
        match self {
            RegressionModel::Slicewise(m) => Ok((self.loss(w)?, m.y.len())),
            RegressionModel::VarLaplacian(m) => {
                Ok((sq_residual(&m.y, &slicewise_matmul(&m.x, w)?).0, m.y.len()))
            }
            RegressionModel::Mlmtl(m) => {
                Ok((self.loss(w)?, m.tasks.iter().map(|t| t.y.len()).sum()))
            }
        }
    }
}

/// Borrowed or sketched model, whichever the solver ends up using.
pub(crate) fn maybe_sketched<'a>(
    model: &'a RegressionModel,
    spec: Option<&SketchSpec>,
) -> Result<Cow<'a, RegressionModel>> {
    match spec {
        Some(s) => Ok(Cow::Owned(model.sketched(s)?)),
        None => Ok(Cow::Borrowed(model)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand_distr::{Distribution, StandardNormal};

    fn randn(shape: &[usize], seed: u64) -> DenseTensor {
        let mut r = rng::seeded(seed);
        DenseTensor::from_fn(shape, |_| StandardNormal.sample(&mut r)).unwrap()
    }

    fn path_laplacian(p: usize) -> Matrix {
        let mut l = Matrix::zeros(p, p).unwrap();
        for i in 0..p - 1 {
            l.set(i, i + 1, -1.0);
            l.set(i + 1, i, -1.0);
            l.set(i, i, l.get(i, i) + 1.0);
            l.set(i + 1, i + 1, l.get(i + 1, i + 1) + 1.0);
        }
        l
    }

    fn slicewise_loss_oracle(x: &DenseTensor, y: &DenseTensor, w: &DenseTensor) -> f64 {
        let (t, d1, m) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let d2 = y.shape()[1];
        let mut acc = 0.0;
        for s in 0..m {
            for i in 0..t {
                for j in 0..d2 {
                    let mut p = 0.0;
                    for k in 0..d1 {
                        p += x.get(&[i, k, s]) * w.get(&[k, j, s]);
                    }
                    acc += (y.get(&[i, j, s]) - p).powi(2);
                }
            }
        }
        acc
    }

    fn var_penalty_oracle(x: &DenseTensor, w: &DenseTensor, l: &Matrix) -> f64 {
        let (t, d1, m) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let p = w.shape()[1];
        let mut acc = 0.0;
        for s in 0..m {
            for i in 0..t {
                let pred: Vec<f64> = (0..p)
                    .map(|j| (0..d1).map(|k| x.get(&[i, k, s]) * w.get(&[k, j, s])).sum())
                    .collect();
                for a in 0..p {
                    for b in 0..p {
                        acc += pred[a] * l.get(a, b) * pred[b];
                    }
                }
            }
        }
        acc
    }

    fn models() -> Vec<RegressionModel> {
        let x = randn(&[7, 3, 2], 1);
        let y = randn(&[7, 2, 2], 2);
        let mut r = rng::seeded(3);
        let tasks = (0..3)
            .map(|i| {
                let rows = 4 + i;
                MlmtlTask {
                    x: Matrix::new(rows, 3, crate::linalg::gaussian_vec(rows * 3, &mut r)).unwrap(),
                    y: crate::linalg::gaussian_vec(rows, &mut r),
                    column: [0, 3, 5][i],
                }
            })
            .collect();
        vec![
            RegressionModel::slicewise(x.clone(), y.clone()).unwrap(),
            RegressionModel::mlmtl(vec![3, 2, 3], tasks).unwrap(),
            RegressionModel::var_laplacian(x, y, path_laplacian(2), 0.7).unwrap(),
        ]
    }

    #[test]
    fn loss_matches_loop_oracles() {
        let x = randn(&[6, 3, 2], 10);
        let y = randn(&[6, 4, 2], 11);
        let w = randn(&[3, 4, 2], 12);
        let l = path_laplacian(4);
        let s = RegressionModel::slicewise(x.clone(), y.clone()).unwrap();
        let want = slicewise_loss_oracle(&x, &y, &w);
        assert!((s.loss(&w).unwrap() - want).abs() <= 1e-10 * want);
        let v = RegressionModel::var_laplacian(x.clone(), y.clone(), l.clone(), 0.3).unwrap();
        let want_v = want + 0.3 * var_penalty_oracle(&x, &w, &l);
        assert!((v.loss(&w).unwrap() - want_v).abs() <= 1e-10 * want_v);
    }

    #[test]
    fn loss_at_zero_is_response_energy() {
        let x = randn(&[5, 3, 2], 1);
        let y = randn(&[5, 2, 2], 2);
        let m = RegressionModel::slicewise(x, y.clone()).unwrap();
        let l0 = m.loss(&DenseTensor::zeros(&[3, 2, 2]).unwrap()).unwrap();
        assert!((l0 - y.frobenius_norm().powi(2)).abs() <= 1e-12 * l0);
    }

    #[test]
    fn exact_model_has_zero_loss_and_gradient() {
        let x = randn(&[20, 4, 3], 5);
        let w = randn(&[4, 3, 3], 6);
        let y = slicewise_matmul(&x, &w).unwrap();
        let m = RegressionModel::slicewise(x, y.clone()).unwrap();
        assert!(m.loss(&w).unwrap() <= 1e-18 * y.frobenius_norm().powi(2).max(1.0));
        assert!(m.gradient(&w).unwrap().frobenius_norm() <= 1e-10 * y.frobenius_norm());
    }

    #[test]
    fn gradients_match_central_differences() {
        let h = 1e-5;
        for (k, m) in models().iter().enumerate() {
            let w = randn(&m.model_shape(), 40 + k as u64);
            let g = m.gradient(&w).unwrap();
            for i in 0..w.len() {
                let mut wp = w.clone();
                wp.data_mut()[i] += h;
                let mut wm = w.clone();
                wm.data_mut()[i] -= h;
                let fd = (m.loss(&wp).unwrap() - m.loss(&wm).unwrap()) / (2.0 * h);
                let an = g.data()[i];
                let scale = an.abs().max(fd.abs()).max(1e-3);
                assert!(
                    (fd - an).abs() <= 1e-5 * scale,
                    "variant {:?} entry {i}: fd {fd} vs analytic {an}",
                    m.variant()
                );
            }
        }
    }

    #[test]
    fn var_without_regularizer_matches_slicewise() {
        let x = randn(&[9, 3, 2], 20);
        let y = randn(&[9, 3, 2], 21);
        let w = randn(&[3, 3, 2], 22);
        let s = RegressionModel::slicewise(x.clone(), y.clone()).unwrap();
        let v = RegressionModel::var_laplacian(x, y, path_laplacian(3), 0.0).unwrap();
        assert!((s.loss(&w).unwrap() - v.loss(&w).unwrap()).abs() <= 1e-12);
        let diff = s
            .gradient(&w)
            .unwrap()
            .sub(&v.gradient(&w).unwrap())
            .unwrap();
        assert!(diff.data().iter().all(|d| d.abs() <= 1e-12));
    }

    #[test]
    fn shape_errors() {
        let m = &models()[0];
        assert!(m.loss(&DenseTensor::zeros(&[3, 3, 2]).unwrap()).is_err());
        assert!(RegressionModel::slicewise(randn(&[4, 2, 2], 1), randn(&[5, 2, 2], 1)).is_err());
        let mut bad = path_laplacian(2);
        bad.set(0, 0, 3.0);
        assert!(RegressionModel::var_laplacian(
            randn(&[4, 2, 1], 1),
            randn(&[4, 2, 1], 2),
            bad,
            1.0
        )
        .is_err());
    }
}
