//! Python bindings. Tensors cross the boundary as [`Tensor`] objects holding
//! a shape and a flat list in first-index-fastest order, so
//! `numpy.reshape(t.data, t.shape, order="F")` recovers the array.

use pyo3::exceptions::{PyArithmeticError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use tpg_core::bench::{self, SyntheticSpec};
use tpg_core::model::RegressionModel;
use tpg_core::projection::{self, ProjectionConfig, RankSpec};
use tpg_core::sketch::{SketchKind, SketchSpec};
use tpg_core::solver::{self, SolverConfig, StepSize, StopReason};
use tpg_core::{io, tensor, DenseTensor, ErrorKind, Matrix, TpgError};

fn to_py(e: TpgError) -> PyErr {
    match e.kind() {
        ErrorKind::Numerical => PyArithmeticError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

trait OrPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for tpg_core::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(to_py)
    }
}

#[pyclass(name = "Tensor", module = "tpg_py", from_py_object)]
#[derive(Clone)]
pub struct Tensor {
    inner: DenseTensor,
}

impl From<DenseTensor> for Tensor {
    fn from(inner: DenseTensor) -> Self {
        Self { inner }
    }
}

impl Tensor {
    fn matrix(&self) -> PyResult<Matrix> {
        Matrix::try_from(self.inner.clone()).py()
    }
}

#[pymethods]
impl Tensor {
    #[new]
    fn new(shape: Vec<usize>, data: Vec<f64>) -> PyResult<Self> {
        DenseTensor::new(shape, data).py().map(Self::from)
    }

    #[staticmethod]
    fn zeros(shape: Vec<usize>) -> PyResult<Self> {
        DenseTensor::zeros(&shape).py().map(Self::from)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        io::tensor_read(path).py().map(Self::from)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        io::tensor_write(&self.inner, path).py()
    }

    #[getter]
    fn shape(&self) -> Vec<usize> {
        self.inner.shape().to_vec()
    }

    #[getter]
    fn data(&self) -> Vec<f64> {
        self.inner.data().to_vec()
    }

    fn __getitem__(&self, idx: Vec<usize>) -> PyResult<f64> {
        if idx.len() != self.inner.order()
            || idx.iter().zip(self.inner.shape()).any(|(i, d)| i >= d)
        {
            return Err(PyValueError::new_err(format!(
                "index {idx:?} outside shape {:?}",
                self.inner.shape()
            )));
        }
        Ok(self.inner.get(&idx))
    }

    fn frobenius_norm(&self) -> f64 {
        self.inner.frobenius_norm()
    }

    fn unfold(&self, mode: usize) -> PyResult<Self> {
        tensor::unfold(&self.inner, mode)
            .py()
            .map(|m| DenseTensor::from(m).into())
    }

    /// Inverse of `unfold` for a matrix and the original shape.
    #[staticmethod]
    fn refold(m: &Tensor, mode: usize, shape: Vec<usize>) -> PyResult<Self> {
        tensor::refold(&m.matrix()?, mode, &shape)
            .py()
            .map(Self::from)
    }

    fn nmode_product(&self, m: &Tensor, mode: usize) -> PyResult<Self> {
        tensor::nmode_product(&self.inner, &m.matrix()?, mode)
            .py()
            .map(Self::from)
    }

    fn __sub__(&self, other: &Tensor) -> PyResult<Self> {
        self.inner.sub(&other.inner).py().map(Self::from)
    }

    fn __repr__(&self) -> String {
        format!("Tensor(shape={:?})", self.inner.shape())
    }
}

#[derive(FromPyObject)]
enum RankArg {
    Shared(usize),
    PerMode(Vec<usize>),
}

impl From<RankArg> for RankSpec {
    fn from(r: RankArg) -> Self {
        match r {
            RankArg::Shared(r) => RankSpec::Shared(r),
            RankArg::PerMode(rs) => RankSpec::PerMode(rs),
        }
    }
}

fn parse_kind(kind: &str) -> PyResult<SketchKind> {
    kind.parse().py()
}

#[pyfunction]
fn slicewise_matmul(x: &Tensor, w: &Tensor) -> PyResult<Tensor> {
    tensor::slicewise_matmul(&x.inner, &w.inner)
        .py()
        .map(Tensor::from)
}

/// Iterative tensor projection onto Tucker rank `rank`.
#[pyfunction]
#[pyo3(signature = (w, rank, seed = 0))]
fn itp_project(w: &Tensor, rank: RankArg, seed: u64) -> PyResult<Tensor> {
    let cfg = ProjectionConfig {
        seed,
        ..ProjectionConfig::with_rank(RankSpec::from(rank))
    };
    projection::itp_project(&w.inner, &cfg, None)
        .py()
        .map(|p| p.tensor.into())
}

#[pyfunction]
fn thosvd_truncate(w: &Tensor, rank: RankArg) -> PyResult<Tensor> {
    let ranks = RankSpec::from(rank).resolve(w.inner.shape()).py()?;
    projection::thosvd_truncate(&w.inner, &ranks)
        .py()
        .map(Tensor::from)
}

/// `t` compressed to `k` rows along mode 0.
#[pyfunction]
#[pyo3(signature = (t, k, seed, kind = "count"))]
fn sketch(t: &Tensor, k: usize, seed: u64, kind: &str) -> PyResult<Tensor> {
    let spec = SketchSpec {
        k,
        n: t.inner.shape()[0],
        seed,
        kind: parse_kind(kind)?,
    };
    spec.build().py()?.apply(&t.inner).py().map(Tensor::from)
}

/// Fits `y[:, :, m] ≈ x[:, :, m] w[:, :, m]` with Tucker rank `rank`.
/// Returns `(w, report)` where `report` is a dict.
#[pyfunction]
#[pyo3(signature = (x, y, rank, max_iters = 1000, step_size = None, sketch_k = None, sketch_kind = "count", seed = 0))]
#[allow(clippy::too_many_arguments)]
fn tpg_fit<'py>(
    py: Python<'py>,
    x: &Tensor,
    y: &Tensor,
    rank: RankArg,
    max_iters: usize,
    step_size: Option<f64>,
    sketch_k: Option<usize>,
    sketch_kind: &str,
    seed: u64,
) -> PyResult<(Tensor, Bound<'py, PyDict>)> {
    let model = RegressionModel::slicewise(x.inner.clone(), y.inner.clone()).py()?;
    let sketch = match sketch_k {
        Some(k) => Some(SketchSpec {
            k,
            n: 0,
            seed,
            kind: parse_kind(sketch_kind)?,
        }),
        None => None,
    };
    let cfg = SolverConfig {
        rank: rank.into(),
        max_iters,
        step_size: step_size.map_or(StepSize::Auto, StepSize::Fixed),
        sketch,
        seed,
        ..SolverConfig::default()
    };
    let (w, report) = py.detach(|| solver::tpg_fit(&model, &cfg)).py()?;
    let d = PyDict::new(py);
    d.set_item("iterations", report.iterations)?;
    d.set_item("loss_trace", report.loss_trace.clone())?;
    d.set_item("final_loss", report.final_loss())?;
    d.set_item("step_size", report.step_size)?;
    d.set_item("halvings", report.halvings)?;
    d.set_item("sketched", report.sketched)?;
    let reason = match report.stop_reason {
        StopReason::MaxIters => "max-iters",
        StopReason::GradTol => "grad-tol",
        StopReason::LossTol => "loss-tol",
    };
    d.set_item("stop_reason", reason)?;
    Ok((w.into(), d))
}

#[pyfunction]
fn ols_fit(x: &Tensor, y: &Tensor) -> PyResult<Tensor> {
    let model = RegressionModel::slicewise(x.inner.clone(), y.inner.clone()).py()?;
    solver::ols_fit(&model).py().map(Tensor::from)
}

#[pyfunction]
fn thosvd_fit(x: &Tensor, y: &Tensor, rank: RankArg) -> PyResult<Tensor> {
    let model = RegressionModel::slicewise(x.inner.clone(), y.inner.clone()).py()?;
    solver::thosvd_fit(&model, &rank.into())
        .py()
        .map(Tensor::from)
}

/// Synthetic low-rank problem; returns a dict with `x`, `y`, `w_true`,
/// `noise`.
#[pyfunction]
#[pyo3(signature = (model_shape, rank, sample_count, noise_sigma, seed))]
fn gen_synthetic<'py>(
    py: Python<'py>,
    model_shape: Vec<usize>,
    rank: RankArg,
    sample_count: usize,
    noise_sigma: f64,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let spec = SyntheticSpec {
        model_shape,
        tucker_rank: rank.into(),
        sample_count,
        noise_sigma,
        runs: 1,
        seed,
    };
    let data = bench::gen_synthetic(&spec).py()?;
    let d = PyDict::new(py);
    d.set_item("x", Tensor::from(data.x))?;
    d.set_item("y", Tensor::from(data.y))?;
    d.set_item("w_true", Tensor::from(data.w_true))?;
    d.set_item("noise", Tensor::from(data.noise))?;
    Ok(d)
}

#[pyfunction]
fn param_rmse(w: &Tensor, w_true: &Tensor) -> PyResult<f64> {
    bench::param_rmse(&w.inner, &w_true.inner).py()
}

#[pymodule]
pub fn tpg_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Tensor>()?;
    m.add_function(wrap_pyfunction!(slicewise_matmul, m)?)?;
    m.add_function(wrap_pyfunction!(itp_project, m)?)?;
    m.add_function(wrap_pyfunction!(thosvd_truncate, m)?)?;
    m.add_function(wrap_pyfunction!(sketch, m)?)?;
    m.add_function(wrap_pyfunction!(tpg_fit, m)?)?;
    m.add_function(wrap_pyfunction!(ols_fit, m)?)?;
    m.add_function(wrap_pyfunction!(thosvd_fit, m)?)?;
    m.add_function(wrap_pyfunction!(gen_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(param_rmse, m)?)?;
    Ok(())
}
