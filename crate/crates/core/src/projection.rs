//! Projection onto tensors of bounded Tucker rank.
//!
//! [`itp_project`] builds the factor matrices one rank-1 component at a
//! time with alternating power iterations, deflating against what has
//! already been captured, and can stop as soon as a caller-supplied loss
//! falls below a threshold. [`thosvd_truncate`] is the classical truncated
//! HOSVD used by the two-step baseline.

use serde::{Deserialize, Serialize};

use crate::error::{mismatch, Result, TpgError};
use crate::linalg;
use crate::rng;
use crate::tensor::{nmode_product, unfold, DenseTensor, Matrix};

pub use crate::tucker::{tucker_reconstruct, TuckerFactors};

/// Rank bound: one value shared by every mode, or one per mode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RankSpec {
    Shared(usize),
    PerMode(Vec<usize>),
}

impl RankSpec {
    pub fn resolve(&self, shape: &[usize]) -> Result<Vec<usize>> {
        let ranks = match self {
            RankSpec::Shared(r) => vec![*r; shape.len()],
            RankSpec::PerMode(rs) => {
                if rs.len() != shape.len() {
                    return Err(mismatch(format!(
                        "{} per-mode ranks for a tensor of order {}",
                        rs.len(),
                        shape.len()
                    )));
                }
                rs.clone()
            }
        };
        for (n, (&r, &d)) in ranks.iter().zip(shape).enumerate() {
            if r == 0 || r > d {
                return Err(TpgError::InvalidArgument(format!(
                    "rank {r} for mode {n} must lie in [1, {d}]"
                )));
            }
        }
        Ok(ranks)
    }
}

/// `"2"` is a shared rank, `"3,2,2"` one rank per mode.
impl std::str::FromStr for RankSpec {
    type Err = TpgError;

    fn from_str(s: &str) -> Result<Self> {
        let parts = s
            .split(',')
            .map(|p| {
                p.trim().parse::<usize>().map_err(|_| {
                    TpgError::InvalidArgument(format!("rank {s:?} is not a list of integers"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(match parts.as_slice() {
            [r] if !s.contains(',') => RankSpec::Shared(*r),
            _ => RankSpec::PerMode(parts),
        })
    }
}

impl From<usize> for RankSpec {
    fn from(r: usize) -> Self {
        RankSpec::Shared(r)
    }
}

impl From<Vec<usize>> for RankSpec {
    fn from(rs: Vec<usize>) -> Self {
        RankSpec::PerMode(rs)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProjectionConfig {
    pub rank: RankSpec,
    pub power_tol: f64,
    pub power_max_iters: usize,
    /// Early-stop threshold on the caller's loss; only consulted when a loss
    /// evaluator is passed to [`itp_project`].
    pub early_stop_eps: f64,
    /// Seed for random restarts after a degenerate power iteration.
    pub seed: u64,
    /// Alternating sweeps applied to the collected factors: each replaces
    /// `U_n` by the leading left singular vectors of `w` contracted with the
    /// other factors. Skipped when the loss criterion stopped the loop.
    pub refine_sweeps: usize,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        Self {
            rank: RankSpec::Shared(1),
            power_tol: 1e-8,
            power_max_iters: 500,
            early_stop_eps: 0.0,
            seed: 0,
            refine_sweeps: 1,
        }
    }
}

impl ProjectionConfig {
    pub fn with_rank(rank: impl Into<RankSpec>) -> Self {
        Self {
            rank: rank.into(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.power_tol > 0.0) {
            return Err(TpgError::InvalidArgument("power_tol must be > 0".into()));
        }
        if self.power_max_iters == 0 {
            return Err(TpgError::InvalidArgument(
                "power_max_iters must be >= 1".into(),
            ));
        }
        if !(self.early_stop_eps >= 0.0) {
            return Err(TpgError::InvalidArgument(
                "early_stop_eps must be >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Loss callback used for early stopping inside the projection.
pub type LossFn<'a> = dyn Fn(&DenseTensor) -> Result<f64> + Sync + 'a;

#[derive(Debug, Clone)]
pub struct Projection {
    pub tensor: DenseTensor,
    pub factors: TuckerFactors,
    pub components_used: usize,
    pub early_stopped: bool,
}

#[derive(Debug, Clone)]
pub struct PowerResult {
    pub vectors: Vec<Vec<f64>>,
    pub converged: bool,
    pub iterations: usize,
}

fn factors_only(w: &DenseTensor, ranks: &[usize]) -> Result<Vec<Matrix>> {
    ranks
        .iter()
        .enumerate()
        .map(|(n, &r)| linalg::leading_left_singular_vectors(&unfold(w, n)?, r))
        .collect()
}

/// Core `w ×_0 U_0ᵀ ⋯ ×_{N-1} U_{N-1}ᵀ`.
fn project_core(w: &DenseTensor, factors: &[Matrix]) -> Result<DenseTensor> {
    let mut core = w.clone();
    for (n, u) in factors.iter().enumerate() {
        core = nmode_product(&core, &u.transpose(), n)?;
    }
    Ok(core)
}

/// Truncated HOSVD factors: top left singular vectors of each unfolding and
/// the matching core.
pub fn hosvd_init(w: &DenseTensor, ranks: &[usize]) -> Result<TuckerFactors> {
    let ranks = RankSpec::PerMode(ranks.to_vec()).resolve(w.shape())?;
    let factors = factors_only(w, &ranks)?;
    let core = project_core(w, &factors)?;
    TuckerFactors::new(core, factors)
}

pub fn thosvd_truncate(w: &DenseTensor, ranks: &[usize]) -> Result<DenseTensor> {
    hosvd_init(w, ranks)?.reconstruct()
}

/// Contraction of `w` with every vector except the one for `skip`.
fn contract_except(w: &DenseTensor, vectors: &[Vec<f64>], skip: usize) -> Result<Vec<f64>> {
    let mut t = w.clone();
    for (n, v) in vectors.iter().enumerate() {
        if n == skip {
            continue;
        }
        let row = Matrix::new(1, v.len(), v.clone())?;
        t = nmode_product(&t, &row, n)?;
    }
    Ok(t.into_data())
}

/// Alternating rank-1 power iteration. Each sweep updates the modes in
/// order, each from the latest values of the others, and stops once the
/// largest sign-invariant change of a vector falls below `tol`.
pub fn rank1_power(
    w: &DenseTensor,
    init: &[Vec<f64>],
    tol: f64,
    max_iters: usize,
) -> Result<PowerResult> {
    if init.len() != w.order() {
        return Err(mismatch(format!(
            "{} initial vectors for a tensor of order {}",
            init.len(),
            w.order()
        )));
    }
    let mut vectors = Vec::with_capacity(init.len());
    for (n, v) in init.iter().enumerate() {
        if v.len() != w.shape()[n] {
            return Err(mismatch(format!(
                "initial vector {n} has length {}, mode size is {}",
                v.len(),
                w.shape()[n]
            )));
        }
        let nv = linalg::norm(v);
        if !(nv > 0.0) || !nv.is_finite() {
            return Err(TpgError::InvalidArgument(format!(
                "initial vector {n} must be nonzero and finite"
            )));
        }
        vectors.push(v.iter().map(|x| x / nv).collect::<Vec<f64>>());
    }
    let floor = 1e-15 * w.frobenius_norm();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iters {
        iterations += 1;
        let mut max_change: f64 = 0.0;
        for n in 0..vectors.len() {
            let mut next = contract_except(w, &vectors, n)?;
            let nn = linalg::norm(&next);
            if nn <= floor || nn == 0.0 {
                return Err(TpgError::DegenerateFiber);
            }
            next.iter_mut().for_each(|x| *x /= nn);
            let prev = &vectors[n];
            let (mut minus, mut plus) = (0.0, 0.0);
            for (a, b) in next.iter().zip(prev) {
                minus += (a - b) * (a - b);
                plus += (a + b) * (a + b);
            }
            max_change = max_change.max(minus.min(plus).sqrt());
            vectors[n] = next;
        }
        if max_change < tol {
            converged = true;
            break;
        }
    }
    for v in &mut vectors {
        linalg::fix_sign(v);
    }
    Ok(PowerResult {
        vectors,
        converged,
        iterations,
    })
}

const MAX_POWER_FAILURES: usize = 3;

/// Smallest norm a unit power vector may keep outside its mode's current
/// span and still be appended as is. Below this the vector mostly repeats
/// captured directions, and normalizing the remainder would amplify noise.
const MIN_NEW_DIRECTION: f64 = 0.5;

/// Direction to append to `basis` for mode `mode`: the power-iteration
/// vector if it carries enough weight outside the current span, otherwise
/// the leading direction of the target's unfolding outside that span.
fn next_basis_vector(
    mut candidate: Vec<f64>,
    basis: &[Vec<f64>],
    target: &DenseTensor,
    mode: usize,
) -> Result<Vec<f64>> {
    let remaining = linalg::orthogonalize(&mut candidate, basis);
    if remaining > MIN_NEW_DIRECTION {
        candidate.iter_mut().for_each(|x| *x /= remaining);
        return Ok(candidate);
    }
    let unfolded = unfold(target, mode)?;
    let dim = unfolded.rows();
    let mut residual = unfolded.to_nalgebra();
    for b in basis {
        let bv = nalgebra::DVector::from_column_slice(b);
        let coeffs = residual.tr_mul(&bv);
        residual -= &bv * coeffs.transpose();
    }
    let mut v = if residual.norm() > 1e-12 * unfolded.frobenius_norm().max(f64::MIN_POSITIVE) {
        let m = Matrix::from_nalgebra(&residual)?;
        linalg::leading_left_singular_vectors(&m, 1)?
            .column(0)
            .to_vec()
    } else {
        linalg::complement_vector(basis, dim)
    };
    let n = linalg::orthogonalize(&mut v, basis);
    v.iter_mut().for_each(|x| *x /= n);
    Ok(v)
}

/// Alternating sweeps over the modes, each factor recomputed from `w`
/// contracted with the latest other factors.
fn refine(w: &DenseTensor, mut factors: Vec<Matrix>, sweeps: usize) -> Result<TuckerFactors> {
    for _ in 0..sweeps {
        for n in 0..factors.len() {
            let mut z = w.clone();
            for (m, u) in factors.iter().enumerate() {
                if m != n {
                    z = nmode_product(&z, &u.transpose(), m)?;
                }
            }
            let r = factors[n].cols();
            factors[n] = linalg::leading_left_singular_vectors(&unfold(&z, n)?, r)?;
        }
    }
    let core = project_core(w, &factors)?;
    TuckerFactors::new(core, factors)
}

/// Iterative tensor projection.
///
/// Component `i` runs [`rank1_power`] on the residual `w − P_i(w)`, where
/// `P_i` projects with the factors collected so far, starting from the
/// `i`-th leading left singular vectors of the unfoldings of `w`. Each new
/// vector is orthogonalized against its mode's factor (modified
/// Gram–Schmidt) before being appended; modes already at their rank bound
/// keep their factor. If the residual vanishes first, the factors are padded
/// with orthonormal complement directions up to their ranks. The returned
/// tensor is `w ×_n U_n U_nᵀ` for all `n`.
pub fn itp_project(
    w: &DenseTensor,
    cfg: &ProjectionConfig,
    loss: Option<&LossFn<'_>>,
) -> Result<Projection> {
    cfg.validate()?;
    if !w.is_finite() {
        return Err(TpgError::NonFinite("projection input".into()));
    }
    let ranks = cfg.rank.resolve(w.shape())?;
    let w_norm = w.frobenius_norm();
    if !w_norm.is_finite() {
        return Err(TpgError::NonFinite(
            "projection input norm overflows".into(),
        ));
    }
    if w_norm == 0.0 {
        let factors = hosvd_init(w, &ranks)?;
        return Ok(Projection {
            tensor: w.clone(),
            factors,
            components_used: 0,
            early_stopped: false,
        });
    }

    let max_rank = *ranks.iter().max().expect("order >= 1");
    let init_ranks: Vec<usize> = w.shape().iter().map(|&d| max_rank.min(d)).collect();
    let init = factors_only(w, &init_ranks)?;

    let order = w.order();
    let mut basis: Vec<Vec<Vec<f64>>> = vec![Vec::new(); order];
    let mut projected = DenseTensor::zeros(w.shape())?;
    let mut factors: Option<TuckerFactors> = None;
    let mut components_used = 0;
    let mut early_stopped = false;
    let mut restart_rng = rng::stream(cfg.seed, 0x1779);

    for i in 0..max_rank {
        let residual = w.sub(&projected)?;
        if residual.frobenius_norm() <= 1e-14 * w_norm {
            break;
        }
        let start: Vec<Vec<f64>> = init
            .iter()
            .map(|u| u.column(i.min(u.cols() - 1)).to_vec())
            .collect();
        let mut attempt = start;
        let mut failures = 0;
        let power = loop {
            match rank1_power(&residual, &attempt, cfg.power_tol, cfg.power_max_iters) {
                Ok(p) => break p,
                Err(TpgError::DegenerateFiber) if failures + 1 < MAX_POWER_FAILURES => {
                    failures += 1;
                    attempt = w
                        .shape()
                        .iter()
                        .map(|&d| linalg::gaussian_vec(d, &mut restart_rng))
                        .collect();
                }
                Err(e) => return Err(e),
            }
        };

        for (n, u) in power.vectors.into_iter().enumerate() {
            if basis[n].len() < ranks[n] {
                let v = next_basis_vector(u, &basis[n], w, n)?;
                basis[n].push(v);
            }
        }
        let mats = basis
            .iter()
            .map(|cols| Matrix::from_columns(cols))
            .collect::<Result<Vec<_>>>()?;
        let core = project_core(w, &mats)?;
        let tf = TuckerFactors::new(core, mats)?;
        projected = tf.reconstruct()?;
        factors = Some(tf);
        components_used = i + 1;

        if let Some(eval) = loss {
            if eval(&projected)? <= cfg.early_stop_eps {
                early_stopped = true;
                break;
            }
        }
    }

    if !early_stopped && factors.is_some() && basis.iter().zip(&ranks).any(|(b, &r)| b.len() < r) {
        for (n, cols) in basis.iter_mut().enumerate() {
            while cols.len() < ranks[n] {
                let v = linalg::complement_vector(cols, w.shape()[n]);
                cols.push(v);
            }
        }
        let mats = basis
            .iter()
            .map(|cols| Matrix::from_columns(cols))
            .collect::<Result<Vec<_>>>()?;
        let core = project_core(w, &mats)?;
        factors = Some(TuckerFactors::new(core, mats)?);
    }

    let factors = match factors {
        Some(mut f) => {
            if !early_stopped && cfg.refine_sweeps > 0 {
                f = refine(w, f.factors, cfg.refine_sweeps)?;
                projected = f.reconstruct()?;
            }
            f
        }
        None => hosvd_init(w, &ranks)?,
    };
    Ok(Projection {
        tensor: projected,
        factors,
        components_used,
        early_stopped,
    })
}

/// Numerical rank of each unfolding: number of singular values above
/// `rel_tol · σ_1`.
pub fn unfolding_ranks(w: &DenseTensor, rel_tol: f64) -> Result<Vec<usize>> {
    (0..w.order())
        .map(|n| {
            let s = linalg::singular_values(&unfold(w, n)?);
            let top = s.first().copied().unwrap_or(0.0);
            Ok(s.iter().filter(|&&v| v > rel_tol * top).count())
        })
        .collect()
}
