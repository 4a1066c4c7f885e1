use crate::error::{mismatch, Result, TpgError};
use crate::model::RegressionModel;
use crate::tensor::{DenseTensor, Matrix};

/// Measurements `(T, P, M)` over time, locations and variables, with one
/// `(lat, lon)` row per location.
#[derive(Debug, Clone, PartialEq)]
pub struct StationSeries {
    values: DenseTensor,
    coords: Matrix,
    lag: usize,
}

impl StationSeries {
    pub fn new(values: DenseTensor, coords: Matrix, lag: usize) -> Result<Self> {
        if values.order() != 3 {
            return Err(mismatch(format!(
                "series values must have shape (T, P, M), got {:?}",
                values.shape()
            )));
        }
        if coords.rows() != values.shape()[1] || coords.cols() != 2 {
            return Err(mismatch(format!(
                "coordinates are {}x{}, expected {}x2",
                coords.rows(),
                coords.cols(),
                values.shape()[1]
            )));
        }
        if lag == 0 {
            return Err(TpgError::InvalidArgument("lag must be >= 1".into()));
        }
        if values.shape()[0] <= lag {
            return Err(TpgError::InvalidArgument(format!(
                "{} time steps do not cover lag {lag}",
                values.shape()[0]
            )));
        }
        if !values.is_finite() || !coords.data().iter().all(|v| v.is_finite()) {
            return Err(TpgError::NonFinite("series values or coordinates".into()));
        }
        Ok(Self {
            values,
            coords,
            lag,
        })
    }

    pub fn values(&self) -> &DenseTensor {
        &self.values
    }

    pub fn coords(&self) -> &Matrix {
        &self.coords
    }

    pub fn lag(&self) -> usize {
        self.lag
    }

    pub fn with_lag(&self, lag: usize) -> Result<Self> {
        Self::new(self.values.clone(), self.coords.clone(), lag)
    }
}

/// Lagged design `(T−L, P·L, M)` and targets `(T−L, P, M)`. Row `r` is time
/// `t = r + L`; column `l·P + p` of its design row holds `x[t−1−l, p, m]`.
pub fn lag_design(values: &DenseTensor, lag: usize) -> Result<(DenseTensor, DenseTensor)> {
    if values.order() != 3 {
        return Err(mismatch("series values must have order 3"));
    }
    let (t, p, m) = (values.shape()[0], values.shape()[1], values.shape()[2]);
    if lag == 0 || t <= lag {
        return Err(TpgError::InvalidArgument(format!(
            "{t} time steps do not cover lag {lag}"
        )));
    }
    let n = t - lag;
    let x = DenseTensor::from_fn(&[n, p * lag, m], |i| {
        let (l, loc) = (i[1] / p, i[1] % p);
        values.get(&[i[0] + lag - 1 - l, loc, i[2]])
    })?;
    let y = DenseTensor::from_fn(&[n, p, m], |i| values.get(&[i[0] + lag, i[1], i[2]]))?;
    Ok((x, y))
}

fn sq_dist(coords: &Matrix, i: usize, j: usize) -> f64 {
    (0..coords.cols())
        .map(|c| (coords.get(i, c) - coords.get(j, c)).powi(2))
        .sum()
}

/// `L = diag(K·1) − K` with `K_ij = exp(−‖c_i − c_j‖² / (2h²))`.
pub fn build_laplacian(coords: &Matrix, bandwidth: f64) -> Result<Matrix> {
    if !(bandwidth > 0.0) || !bandwidth.is_finite() {
        return Err(TpgError::InvalidArgument(format!(
            "bandwidth must be > 0, got {bandwidth}"
        )));
    }
    let p = coords.rows();
    let mut l = Matrix::zeros(p, p)?;
    let denom = 2.0 * bandwidth * bandwidth;
    for i in 0..p {
        for j in (i + 1)..p {
            let k = (-sq_dist(coords, i, j) / denom).exp();
            l.set(i, j, -k);
            l.set(j, i, -k);
        }
    }
    for i in 0..p {
        let off: f64 = (0..p).filter(|&j| j != i).map(|j| l.get(i, j)).sum();
        l.set(i, i, -off);
    }
    Ok(l)
}

/// Median pairwise distance between locations; 1 when fewer than two
/// locations or when every pair coincides.
pub fn default_bandwidth(coords: &Matrix) -> f64 {
    let p = coords.rows();
    let mut d: Vec<f64> = (0..p)
        .flat_map(|i| ((i + 1)..p).map(move |j| (i, j)))
        .map(|(i, j)| sq_dist(coords, i, j).sqrt())
        .collect();
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let mid = d.len() / 2;
    let med = if d.len() % 2 == 1 {
        d[mid]
    } else {
        0.5 * (d[mid - 1] + d[mid])
    };
    if med > 0.0 {
        med
    } else {
        1.0
    }
}

/// VAR(L) model over `s` with Laplacian weight `mu`. `bandwidth = None`
/// uses [`default_bandwidth`].
pub fn build_var_model(
    s: &StationSeries,
    mu: f64,
    bandwidth: Option<f64>,
) -> Result<RegressionModel> {
    let (x, y) = lag_design(&s.values, s.lag)?;
    let h = bandwidth.unwrap_or_else(|| default_bandwidth(&s.coords));
    let l = build_laplacian(&s.coords, h)?;
    RegressionModel::var_laplacian(x, y, l, mu)
}
