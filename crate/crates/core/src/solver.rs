//! Rank-constrained regression solvers.
//!
//! [`tpg_fit`] alternates a gradient step with [`itp_project`], starting from
//! the zero tensor, optionally on sketched data. [`ols_fit`] and
//! [`thosvd_fit`] are the unconstrained and two-step baselines.

use std::time::Instant;

use nalgebra::{DMatrix, DMatrixView};
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Result, TpgError};
use crate::linalg;
use crate::model::{maybe_sketched, RegressionModel};
use crate::projection::{itp_project, thosvd_truncate, LossFn, ProjectionConfig, RankSpec};
use crate::rng;
use crate::sketch::SketchSpec;
use crate::tensor::DenseTensor;

/// Explicit step size, or `"auto"` for the curvature estimate.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum StepSize {
    #[default]
    Auto,
    Fixed(f64),
}

impl Serialize for StepSize {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            StepSize::Auto => s.serialize_str("auto"),
            StepSize::Fixed(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for StepSize {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(StepSize::Fixed(v)),
            Raw::Str(s) if s == "auto" => Ok(StepSize::Auto),
            Raw::Str(s) => Err(serde::de::Error::custom(format!(
                "step_size must be a number or \"auto\", got {s:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub rank: RankSpec,
    pub step_size: StepSize,
    pub max_iters: usize,
    /// Stop once `‖W^{k+1} − W^k‖_F / max(1, ‖W^k‖_F)` drops below this.
    pub grad_tol: f64,
    /// Stop once the loss drops to this level; also the early-stop threshold
    /// handed to the projection. 0 disables both.
    pub loss_tol: f64,
    /// `N = 0` takes the sample count from the data.
    pub sketch: Option<SketchSpec>,
    /// Power-iteration settings; `rank`, `early_stop_eps` and `seed` are
    /// overridden by the solver's own `rank`, `loss_tol` and `seed`.
    pub projection: ProjectionConfig,
    /// Seeds the projection's restarts after degenerate power iterations.
    pub seed: u64,
    /// Upper bound on step halvings when the loss goes up (auto step only).
    pub max_halvings: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            rank: RankSpec::Shared(1),
            step_size: StepSize::Auto,
            max_iters: 1000,
            grad_tol: 1e-7,
            loss_tol: 0.0,
            sketch: None,
            projection: ProjectionConfig::default(),
            seed: 0,
            max_halvings: 20,
        }
    }
}

impl SolverConfig {
    pub fn with_rank(rank: impl Into<RankSpec>) -> Self {
        Self {
            rank: rank.into(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let StepSize::Fixed(eta) = self.step_size {
            if !(eta > 0.0) || !eta.is_finite() {
                return Err(TpgError::InvalidArgument(format!(
                    "step size must be positive, got {eta}"
                )));
            }
        }
        if !(self.grad_tol >= 0.0) || !(self.loss_tol >= 0.0) {
            return Err(TpgError::InvalidArgument("tolerances must be >= 0".into()));
        }
        self.projection.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    MaxIters,
    GradTol,
    LossTol,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverReport {
    pub iterations: usize,
    /// Loss before the first step followed by the loss after every iteration.
    pub loss_trace: Vec<f64>,
    /// Step applied to the gradient at the end of the run.
    pub step_size: f64,
    pub halvings: usize,
    pub stop_reason: StopReason,
    pub sketched: bool,
    pub wall_time_ms: f64,
}

impl SolverReport {
    pub fn final_loss(&self) -> f64 {
        *self
            .loss_trace
            .last()
            .expect("trace holds the initial loss")
    }
}

const STEP_POWER_ITERS: usize = 50;
const STEP_SEED: u64 = 0x5EED_57E9;

/// `1/λ̂`, where `λ̂` is a 50-step power-iteration estimate of the largest
/// eigenvalue of `W ↦ ½(∇L(W) − ∇L(0))`.
pub fn estimate_step_size(model: &RegressionModel) -> Result<f64> {
    let shape = model.model_shape();
    let zero = DenseTensor::zeros(&shape)?;
    let g0 = model.gradient(&zero)?;
    let hessian =
        |v: &DenseTensor| -> Result<DenseTensor> { Ok(model.gradient(v)?.sub(&g0)?.scaled(0.5)) };
    let mut r = rng::seeded(STEP_SEED);
    let mut v = DenseTensor::new(shape.clone(), linalg::gaussian_vec(zero.len(), &mut r))?;
    v = v.scaled(1.0 / v.frobenius_norm());
    let mut lambda = 0.0;
    for _ in 0..STEP_POWER_ITERS {
        let hv = hessian(&v)?;
        lambda = v.dot(&hv)?;
        let n = hv.frobenius_norm();
        if !(n > 0.0) || !n.is_finite() {
            return Err(TpgError::DegenerateDesign);
        }
        v = hv.scaled(1.0 / n);
    }
    let lambda = lambda.max(v.dot(&hessian(&v)?)?);
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(TpgError::DegenerateDesign);
    }
    Ok(1.0 / lambda)
}

fn relative_change(new: &DenseTensor, old: &DenseTensor) -> Result<f64> {
    Ok(new.sub(old)?.frobenius_norm() / old.frobenius_norm().max(1.0))
}

/// Tensor projected gradient.
///
/// `W⁰ = 0`; each iteration forms `W̃ = W − η ∇L(W)` and projects it with
/// [`itp_project`]. With an automatic step, `η` is half of
/// [`estimate_step_size`] (the estimate targets `½∇L`), and is halved
/// whenever an iteration would increase the loss.
pub fn tpg_fit(model: &RegressionModel, cfg: &SolverConfig) -> Result<(DenseTensor, SolverReport)> {
    cfg.validate()?;
    let started = Instant::now();
    let model = maybe_sketched(model, cfg.sketch.as_ref())?;
    let shape = model.model_shape();
    cfg.rank.resolve(&shape)?;

    let mut w = DenseTensor::zeros(&shape)?;
    let mut current = model.loss(&w)?;
    let mut trace = vec![current];
    let mut report = SolverReport {
        iterations: 0,
        loss_trace: Vec::new(),
        step_size: 0.0,
        halvings: 0,
        stop_reason: StopReason::MaxIters,
        sketched: cfg.sketch.is_some(),
        wall_time_ms: 0.0,
    };
    if cfg.max_iters == 0 {
        report.loss_trace = trace;
        report.wall_time_ms = started.elapsed().as_secs_f64() * 1e3;
        return Ok((w, report));
    }

    let (mut eta, backtrack) = match cfg.step_size {
        StepSize::Fixed(eta) => (eta, false),
        StepSize::Auto => (0.5 * estimate_step_size(&model)?, true),
    };
    let pcfg = ProjectionConfig {
        rank: cfg.rank.clone(),
        early_stop_eps: cfg.loss_tol,
        seed: cfg.seed,
        ..cfg.projection.clone()
    };
    let evaluator = |t: &DenseTensor| model.loss(t);
    let early_stop = (cfg.loss_tol > 0.0).then_some(&evaluator as &LossFn<'_>);

    for _ in 0..cfg.max_iters {
        let grad = model.gradient(&w)?;
        let (next, next_loss) = loop {
            let stepped = w.add_scaled(&grad, -eta)?;
            if !stepped.frobenius_norm().is_finite() {
                return Err(TpgError::Diverged(f64::INFINITY));
            }
            let projected = itp_project(&stepped, &pcfg, early_stop)?.tensor;
            let loss = model.loss(&projected)?;
            if !loss.is_finite() {
                return Err(TpgError::Diverged(loss));
            }
            if backtrack && loss > current && report.halvings < cfg.max_halvings {
                eta *= 0.5;
                report.halvings += 1;
                continue;
            }
            break (projected, loss);
        };
        let change = relative_change(&next, &w)?;
        w = next;
        current = next_loss;
        trace.push(current);
        report.iterations += 1;
        if cfg.loss_tol > 0.0 && current <= cfg.loss_tol {
            report.stop_reason = StopReason::LossTol;
            break;
        }
        if change < cfg.grad_tol {
            report.stop_reason = StopReason::GradTol;
            break;
        }
    }
    report.loss_trace = trace;
    report.step_size = eta;
    report.wall_time_ms = started.elapsed().as_secs_f64() * 1e3;
    Ok((w, report))
}

/// Ridge constant `1e-8 · tr(G) / d` for a `d x d` Gram matrix `G`.
fn ridge(gram: &DMatrix<f64>) -> f64 {
    1e-8 * gram.trace() / gram.nrows() as f64
}

fn ridge_solve(gram: DMatrix<f64>, rhs: &DMatrix<f64>) -> DMatrix<f64> {
    let lambda = ridge(&gram);
    if !(lambda > 0.0) {
        return DMatrix::zeros(rhs.nrows(), rhs.ncols());
    }
    let mut a = gram;
    for i in 0..a.nrows() {
        a[(i, i)] += lambda;
    }
    linalg::solve_spd(&a, rhs).unwrap_or_else(|| DMatrix::zeros(rhs.nrows(), rhs.ncols()))
}

fn per_slice_ridge(x: &DenseTensor, y: &DenseTensor) -> Vec<DMatrix<f64>> {
    let (t, d1, m) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let d2 = y.shape()[1];
    x.data()
        .par_chunks(t * d1)
        .zip(y.data().par_chunks(t * d2))
        .map(|(xs, ys)| {
            let xs = DMatrixView::from_slice(xs, t, d1);
            let ys = DMatrixView::from_slice(ys, t, d2);
            ridge_solve(xs.tr_mul(&xs), &xs.tr_mul(&ys))
        })
        .collect::<Vec<_>>()
        .into_iter()
        .take(m)
        .collect()
}

/// Unconstrained least squares with a tiny ridge, slice by slice (or task
/// column by task column). For VAR models with a Laplacian the penalty is
/// included: `W_m = (X_mᵀX_m + λI)⁻¹ X_mᵀ Y_m (I + μL)⁻¹`.
pub fn ols_fit(model: &RegressionModel) -> Result<DenseTensor> {
    let shape = model.model_shape();
    match model {
        RegressionModel::Slicewise(m) => {
            let slices = per_slice_ridge(m.x(), m.y());
            DenseTensor::new(
                shape,
                slices.iter().flat_map(|s| s.iter().copied()).collect(),
            )
        }
        RegressionModel::VarLaplacian(m) => {
            let slices = per_slice_ridge(m.x(), m.y());
            let p = m.laplacian().rows();
            let right = if m.mu() > 0.0 {
                let a = DMatrix::identity(p, p) + m.laplacian().to_nalgebra() * m.mu();
                linalg::solve_spd(&a, &DMatrix::identity(p, p)).ok_or(TpgError::DegenerateDesign)?
            } else {
                DMatrix::identity(p, p)
            };
            let data = slices
                .iter()
                .flat_map(|s| (s * &right).iter().copied().collect::<Vec<_>>())
                .collect();
            DenseTensor::new(shape, data)
        }
        RegressionModel::Mlmtl(m) => {
            let d = shape[0];
            let cols: usize = shape[1..].iter().product();
            let mut grams = vec![DMatrix::<f64>::zeros(d, d); cols];
            let mut rhs = vec![DMatrix::<f64>::zeros(d, 1); cols];
            for t in m.tasks() {
                let x = t.x.view();
                let y = DMatrixView::from_slice(&t.y, t.y.len(), 1);
                grams[t.column] += x.tr_mul(&x);
                rhs[t.column] += x.tr_mul(&y);
            }
            let mut w = DenseTensor::zeros(&shape)?;
            for (c, (g, r)) in grams.into_iter().zip(&rhs).enumerate() {
                let sol = ridge_solve(g, r);
                w.data_mut()[c * d..(c + 1) * d].copy_from_slice(sol.as_slice());
            }
            Ok(w)
        }
    }
}

/// Least squares followed by truncated HOSVD.
pub fn thosvd_fit(model: &RegressionModel, rank: &RankSpec) -> Result<DenseTensor> {
    let shape = model.model_shape();
    let ranks = rank.resolve(&shape)?;
    thosvd_truncate(&ols_fit(model)?, &ranks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::random_orthonormal;
    use crate::projection::{unfolding_ranks, TuckerFactors};
    use crate::tensor::{slicewise_matmul, Matrix};
    use rand_distr::{Distribution, StandardNormal};

    fn randn(shape: &[usize], seed: u64) -> DenseTensor {
        let mut r = rng::seeded(seed);
        DenseTensor::from_fn(shape, |_| StandardNormal.sample(&mut r)).unwrap()
    }

    fn low_rank(shape: &[usize], rank: usize, seed: u64) -> DenseTensor {
        let mut r = rng::seeded(seed);
        let factors = shape
            .iter()
            .map(|&d| random_orthonormal(d, rank, &mut r).unwrap())
            .collect();
        let core = DenseTensor::from_fn(&[rank; 3], |_| StandardNormal.sample(&mut r)).unwrap();
        TuckerFactors::new(core, factors)
            .unwrap()
            .reconstruct()
            .unwrap()
    }

    struct Instance {
        model: RegressionModel,
        w_true: DenseTensor,
        noise: DenseTensor,
    }

    fn instance(shape: [usize; 3], t: usize, sigma: f64, seed: u64) -> Instance {
        let w_true = low_rank(&shape, 2, seed);
        let x = randn(&[t, shape[0], shape[2]], seed + 1);
        let noise = randn(&[t, shape[1], shape[2]], seed + 2).scaled(sigma);
        let y = slicewise_matmul(&x, &w_true)
            .unwrap()
            .add_scaled(&noise, 1.0)
            .unwrap();
        Instance {
            model: RegressionModel::slicewise(x, y).unwrap(),
            w_true,
            noise,
        }
    }

    fn rel(a: &DenseTensor, b: &DenseTensor) -> f64 {
        a.sub(b).unwrap().frobenius_norm() / b.frobenius_norm()
    }

    #[test]
    fn step_size_for_scaled_orthonormal_slices() {
        let c = 3.0;
        let mut r = rng::seeded(4);
        let mut data = Vec::new();
        for _ in 0..2 {
            data.extend(
                random_orthonormal(10, 4, &mut r)
                    .unwrap()
                    .data()
                    .iter()
                    .map(|v| c * v),
            );
        }
        let x = DenseTensor::new(vec![10, 4, 2], data).unwrap();
        let y = randn(&[10, 3, 2], 5);
        let m = RegressionModel::slicewise(x.clone(), y.clone()).unwrap();
        let eta = estimate_step_size(&m).unwrap();
        assert!((eta - 1.0 / (c * c)).abs() <= 0.05 / (c * c));
        let m2 = RegressionModel::slicewise(x.scaled(2.0), y).unwrap();
        let eta2 = estimate_step_size(&m2).unwrap();
        assert!((eta2 / eta - 0.25).abs() <= 0.05 * 0.25);
    }

    #[test]
    fn step_size_single_entry_design() {
        let x = DenseTensor::new(vec![1, 1, 1], vec![1.0]).unwrap();
        let y = DenseTensor::new(vec![1, 1, 1], vec![2.0]).unwrap();
        let eta = estimate_step_size(&RegressionModel::slicewise(x, y).unwrap()).unwrap();
        assert!((eta - 1.0).abs() <= 1e-6);
    }

    #[test]
    fn step_size_rejects_zero_design() {
        let x = DenseTensor::zeros(&[5, 2, 1]).unwrap();
        let y = randn(&[5, 2, 1], 1);
        let err = estimate_step_size(&RegressionModel::slicewise(x, y).unwrap()).unwrap_err();
        assert!(matches!(err, TpgError::DegenerateDesign));
    }

    #[test]
    fn zero_iterations_returns_zero() {
        let inst = instance([4, 4, 2], 30, 0.0, 1);
        let cfg = SolverConfig {
            max_iters: 0,
            ..SolverConfig::with_rank(2)
        };
        let (w, rep) = tpg_fit(&inst.model, &cfg).unwrap();
        assert_eq!(w.frobenius_norm(), 0.0);
        let RegressionModel::Slicewise(m) = &inst.model else {
            unreachable!()
        };
        assert_eq!(rep.loss_trace.len(), 1);
        assert!(
            (rep.loss_trace[0] - m.y().frobenius_norm().powi(2)).abs() <= 1e-9 * rep.loss_trace[0]
        );
    }

    #[test]
    fn recovers_noiseless_low_rank() {
        let inst = instance([10, 10, 4], 2000, 0.0, 7);
        let cfg = SolverConfig {
            max_iters: 200,
            ..SolverConfig::with_rank(2)
        };
        let (w, rep) = tpg_fit(&inst.model, &cfg).unwrap();
        assert!(rel(&w, &inst.w_true) <= 1e-3, "{}", rel(&w, &inst.w_true));
        assert_eq!(rep.loss_trace.len(), rep.iterations + 1);
        let ranks = unfolding_ranks(&w, 1e-8).unwrap();
        assert!(ranks.iter().all(|&r| r <= 2));
    }

    #[test]
    fn noisy_final_loss_near_noise_level() {
        let inst = instance([8, 8, 3], 600, 0.1, 11);
        let (_, rep) = tpg_fit(&inst.model, &SolverConfig::with_rank(2)).unwrap();
        let noise = inst.noise.frobenius_norm().powi(2);
        assert!(rep.final_loss() <= 2.0 * noise);
    }

    #[test]
    fn huge_fixed_step_diverges() {
        let inst = instance([5, 5, 2], 100, 0.0, 3);
        let cfg = SolverConfig {
            step_size: StepSize::Fixed(1e6),
            max_iters: 500,
            ..SolverConfig::with_rank(2)
        };
        let res = tpg_fit(&inst.model, &cfg);
        assert!(
            matches!(res, Err(TpgError::Diverged(_))),
            "{:?}",
            res.map(|r| r.1)
        );
    }

    #[test]
    fn sketched_fit_reports_sketched_loss() {
        let inst = instance([6, 6, 2], 400, 0.01, 5);
        let cfg = SolverConfig {
            sketch: Some(SketchSpec {
                k: 100,
                n: 0,
                seed: 9,
                kind: crate::sketch::SketchKind::Count,
            }),
            ..SolverConfig::with_rank(2)
        };
        let (w, rep) = tpg_fit(&inst.model, &cfg).unwrap();
        assert!(rep.sketched);
        assert!(rel(&w, &inst.w_true) < 0.05);
    }

    #[test]
    fn ols_exact_on_noiseless_data() {
        let inst = instance([5, 4, 3], 50, 0.0, 13);
        let w = ols_fit(&inst.model).unwrap();
        assert!(rel(&w, &inst.w_true) <= 1e-6);
    }

    #[test]
    fn ols_matches_normal_equations() {
        let x = randn(&[20, 4, 2], 21);
        let y = randn(&[20, 3, 2], 22);
        let w = ols_fit(&RegressionModel::slicewise(x.clone(), y.clone()).unwrap()).unwrap();
        for m in 0..2 {
            let xm = DMatrix::from_fn(20, 4, |i, j| x.get(&[i, j, m]));
            let ym = DMatrix::from_fn(20, 3, |i, j| y.get(&[i, j, m]));
            let gram = xm.transpose() * &xm;
            let ridged = &gram + DMatrix::identity(4, 4) * (1e-8 * gram.trace() / 4.0);
            let direct = ridged.try_inverse().unwrap() * xm.transpose() * ym;
            for i in 0..4 {
                for j in 0..3 {
                    assert!((w.get(&[i, j, m]) - direct[(i, j)]).abs() <= 1e-8);
                }
            }
        }
    }

    #[test]
    fn ols_underdetermined_fits_at_least_as_well_as_truth() {
        let inst = instance([8, 3, 2], 5, 0.1, 31);
        let w = ols_fit(&inst.model).unwrap();
        assert!(inst.model.loss(&w).unwrap() <= inst.model.loss(&inst.w_true).unwrap());
    }

    #[test]
    fn ols_zero_design_slice_is_zero() {
        let mut x = randn(&[6, 2, 2], 1);
        x.data_mut()[..12].iter_mut().for_each(|v| *v = 0.0);
        let y = randn(&[6, 2, 2], 2);
        let w = ols_fit(&RegressionModel::slicewise(x, y).unwrap()).unwrap();
        assert!(w.data()[..4].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn thosvd_examples() {
        let inst = instance([6, 6, 4], 300, 0.0, 41);
        let w = thosvd_fit(&inst.model, &RankSpec::Shared(2)).unwrap();
        assert!(rel(&w, &inst.w_true) <= 1e-5);
        let full = thosvd_fit(&inst.model, &RankSpec::PerMode(vec![6, 6, 4])).unwrap();
        assert!(
            full.sub(&ols_fit(&inst.model).unwrap())
                .unwrap()
                .frobenius_norm()
                <= 1e-10
        );

        let noisy = instance([8, 8, 4], 60, 0.5, 43);
        let ols_err = ols_fit(&noisy.model)
            .unwrap()
            .sub(&noisy.w_true)
            .unwrap()
            .frobenius_norm();
        let th_err = thosvd_fit(&noisy.model, &RankSpec::Shared(2))
            .unwrap()
            .sub(&noisy.w_true)
            .unwrap()
            .frobenius_norm();
        assert!(th_err <= ols_err);
    }

    #[test]
    fn var_ols_includes_laplacian() {
        let x = randn(&[30, 3, 1], 1);
        let y = randn(&[30, 3, 1], 2);
        let l = Matrix::from_rows(&[
            vec![1.0, -1.0, 0.0],
            vec![-1.0, 2.0, -1.0],
            vec![0.0, -1.0, 1.0],
        ])
        .unwrap();
        let model = RegressionModel::var_laplacian(x, y, l, 0.5).unwrap();
        let w = ols_fit(&model).unwrap();
        // Stationary point of the penalized objective (ridge is negligible).
        let g = model.gradient(&w).unwrap();
        assert!(g.frobenius_norm() <= 1e-6, "{}", g.frobenius_norm());
    }

    #[test]
    fn config_json() {
        let cfg: SolverConfig = serde_json::from_str(
            r#"{"rank": [2, 2, 1], "step_size": "auto", "max_iters": 50,
                "sketch": {"K": 100, "N": 0, "seed": 3}}"#,
        )
        .unwrap();
        assert_eq!(cfg.rank, RankSpec::PerMode(vec![2, 2, 1]));
        assert_eq!(cfg.step_size, StepSize::Auto);
        assert_eq!(cfg.grad_tol, 1e-7);
        let fixed: SolverConfig = serde_json::from_str(r#"{"step_size": 0.01}"#).unwrap();
        assert_eq!(fixed.step_size, StepSize::Fixed(0.01));
        assert!(serde_json::from_str::<SolverConfig>(r#"{"step_size": "fast"}"#).is_err());
    }
}
