use serde::{Deserialize, Serialize};

use crate::error::{mismatch, Result};
use crate::tensor::{nmode_product, DenseTensor, Matrix};

/// Tucker form `core ×_0 U_0 ×_1 U_1 ⋯`, with `factors[n]` of size `D_n x R_n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuckerFactors {
    pub core: DenseTensor,
    pub factors: Vec<Matrix>,
}

impl TuckerFactors {
    pub fn new(core: DenseTensor, factors: Vec<Matrix>) -> Result<Self> {
        if core.order() != factors.len() {
            return Err(mismatch(format!(
                "core of order {} with {} factors",
                core.order(),
                factors.len()
            )));
        }
        for (n, (u, &r)) in factors.iter().zip(core.shape()).enumerate() {
            if u.cols() != r {
                return Err(mismatch(format!(
                    "factor {n} has {} columns, core mode size is {r}",
                    u.cols()
                )));
            }
        }
        Ok(Self { core, factors })
    }

    pub fn ranks(&self) -> Vec<usize> {
        self.factors.iter().map(Matrix::cols).collect()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.factors.iter().map(Matrix::rows).collect()
    }

    pub fn reconstruct(&self) -> Result<DenseTensor> {
        tucker_reconstruct(self)
    }
}

pub fn tucker_reconstruct(f: &TuckerFactors) -> Result<DenseTensor> {
    if f.core.order() != f.factors.len() {
        return Err(mismatch(format!(
            "core of order {} with {} factors",
            f.core.order(),
            f.factors.len()
        )));
    }
    let mut out = f.core.clone();
    for (n, u) in f.factors.iter().enumerate() {
        out = nmode_product(&out, u, n)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_factors_return_core() {
        let core =
            DenseTensor::from_fn(&[2, 3, 2], |i| (i[0] + 2 * i[1] + 7 * i[2]) as f64).unwrap();
        let factors = core
            .shape()
            .iter()
            .map(|&d| Matrix::identity(d).unwrap())
            .collect();
        let f = TuckerFactors::new(core.clone(), factors).unwrap();
        assert_eq!(f.reconstruct().unwrap(), core);
    }

    #[test]
    fn rank_one_core_gives_outer_product() {
        let u = vec![1.0, -2.0, 0.5];
        let v = vec![3.0, 1.0];
        let w = vec![0.25, -1.0, 2.0, 4.0];
        let alpha = 1.7;
        let f = TuckerFactors::new(
            DenseTensor::new(vec![1, 1, 1], vec![alpha]).unwrap(),
            vec![
                Matrix::new(3, 1, u.clone()).unwrap(),
                Matrix::new(2, 1, v.clone()).unwrap(),
                Matrix::new(4, 1, w.clone()).unwrap(),
            ],
        )
        .unwrap();
        let t = f.reconstruct().unwrap();
        for (i, ui) in u.iter().enumerate() {
            for (j, vj) in v.iter().enumerate() {
                for (k, wk) in w.iter().enumerate() {
                    let expected = alpha * ui * vj * wk;
                    assert!((t.get(&[i, j, k]) - expected).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn mismatched_factor_is_rejected() {
        let core = DenseTensor::zeros(&[2, 2]).unwrap();
        let bad = vec![Matrix::zeros(3, 2).unwrap(), Matrix::zeros(3, 1).unwrap()];
        assert!(TuckerFactors::new(core, bad).is_err());
    }
}
