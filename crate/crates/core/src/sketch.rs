//! Randomized sketches applied along mode 0 (the sample mode).
//!
//! The count sketch is the fast path: a `K x N` matrix with a single ±1 per
//! column, stored implicitly as `(row_of, sign_of)` and applied in one pass
//! over the tensor entries. Gaussian and sparse random projections are
//! materialized and only exist for side-by-side comparisons.
//!
//! Randomness: a count sketch for `(K, N, seed)` draws, for `j = 0..N` in
//! order, `row_of[j]` uniformly from `[0, K)` and then a fair sign, from
//! `ChaCha8Rng::seed_from_u64(seed)` (see [`crate::rng`]).

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{mismatch, Result, TpgError};
use crate::linalg;
use crate::rng;
use crate::tensor::{nmode_product, DenseTensor, Matrix};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountSketch {
    target_rows: usize,
    source_cols: usize,
    row_of: Vec<usize>,
    sign_of: Vec<i8>,
    seed: u64,
}

pub fn build_count_sketch(k: usize, n: usize, seed: u64) -> Result<CountSketch> {
    CountSketch::new(k, n, seed)
}

impl CountSketch {
    pub fn new(k: usize, n: usize, seed: u64) -> Result<Self> {
        if k == 0 || n == 0 {
            return Err(TpgError::InvalidArgument(format!(
                "count sketch needs K >= 1 and N >= 1, got K={k}, N={n}"
            )));
        }
        let mut rng = rng::seeded(seed);
        let mut row_of = Vec::with_capacity(n);
        let mut sign_of = Vec::with_capacity(n);
        for _ in 0..n {
            row_of.push(rng.random_range(0..k));
            sign_of.push(if rng.random::<bool>() { 1 } else { -1 });
        }
        Ok(Self {
            target_rows: k,
            source_cols: n,
            row_of,
            sign_of,
            seed,
        })
    }

    /// Sketch with explicit buckets and signs; `seed` is recorded as 0.
    pub fn from_parts(k: usize, row_of: Vec<usize>, sign_of: Vec<i8>) -> Result<Self> {
        if k == 0 || row_of.is_empty() || row_of.len() != sign_of.len() {
            return Err(TpgError::InvalidArgument(
                "need K >= 1 and matching non-empty row/sign arrays".into(),
            ));
        }
        if row_of.iter().any(|&r| r >= k) || sign_of.iter().any(|&s| s != 1 && s != -1) {
            return Err(TpgError::InvalidArgument(
                "rows must lie in [0, K) and signs in {-1, 1}".into(),
            ));
        }
        Ok(Self {
            target_rows: k,
            source_cols: row_of.len(),
            row_of,
            sign_of,
            seed: 0,
        })
    }

    pub fn target_rows(&self) -> usize {
        self.target_rows
    }

    pub fn source_cols(&self) -> usize {
        self.source_cols
    }

    pub fn row_of(&self) -> &[usize] {
        &self.row_of
    }

    pub fn sign_of(&self) -> &[i8] {
        &self.sign_of
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Dense `K x N` form. Test oracle only.
    pub fn materialize(&self) -> Matrix {
        let mut m = Matrix::zeros(self.target_rows, self.source_cols).expect("K, N >= 1");
        for (j, (&r, &s)) in self.row_of.iter().zip(&self.sign_of).enumerate() {
            m.set(r, j, s as f64);
        }
        m
    }

    /// `t ×_0 S`, one pass over the entries of `t`.
    pub fn apply(&self, t: &DenseTensor) -> Result<DenseTensor> {
        sketch_apply(self, t)
    }
}

pub fn sketch_apply(s: &CountSketch, t: &DenseTensor) -> Result<DenseTensor> {
    let n = t.shape()[0];
    if n != s.source_cols {
        return Err(mismatch(format!(
            "sketch expects {} rows along mode 0, tensor has {n}",
            s.source_cols
        )));
    }
    let k = s.target_rows;
    let mut shape = t.shape().to_vec();
    shape[0] = k;
    let fibers = t.len() / n;
    let mut out = vec![0.0; k * fibers];
    out.par_chunks_mut(k)
        .zip(t.data().par_chunks(n))
        .for_each(|(dst, src)| {
            for ((&v, &r), &sign) in src.iter().zip(&s.row_of).zip(&s.sign_of) {
                dst[r] += sign as f64 * v;
            }
        });
    DenseTensor::new(shape, out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SketchKind {
    Count,
    Gaussian,
    Sparse,
}

impl SketchKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SketchKind::Count => "count",
            SketchKind::Gaussian => "gaussian",
            SketchKind::Sparse => "sparse",
        }
    }
}

impl std::str::FromStr for SketchKind {
    type Err = TpgError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "count" => Ok(SketchKind::Count),
            "gaussian" => Ok(SketchKind::Gaussian),
            "sparse" => Ok(SketchKind::Sparse),
            other => Err(TpgError::InvalidArgument(format!(
                "unknown sketch kind {other:?}"
            ))),
        }
    }
}

/// Serializable sketch description: `{"K": .., "N": .., "seed": .., "kind": ..}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SketchSpec {
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub seed: u64,
    #[serde(default = "default_kind")]
    pub kind: SketchKind,
}

fn default_kind() -> SketchKind {
    SketchKind::Count
}

impl SketchSpec {
    pub fn build(&self) -> Result<Sketch> {
        if self.k == 0 || self.n == 0 {
            return Err(TpgError::InvalidArgument(format!(
                "sketch needs K >= 1 and N >= 1, got K={}, N={}",
                self.k, self.n
            )));
        }
        Ok(match self.kind {
            SketchKind::Count => Sketch::Count(CountSketch::new(self.k, self.n, self.seed)?),
            SketchKind::Gaussian => Sketch::Dense {
                kind: SketchKind::Gaussian,
                matrix: gaussian_projection(self.k, self.n, self.seed),
            },
            SketchKind::Sparse => Sketch::Dense {
                kind: SketchKind::Sparse,
                matrix: sparse_projection(self.k, self.n, self.seed),
            },
        })
    }
}

/// Any sketch behind the common mode-0 apply interface.
#[derive(Debug, Clone)]
pub enum Sketch {
    Count(CountSketch),
    Dense { kind: SketchKind, matrix: Matrix },
}

impl Sketch {
    pub fn kind(&self) -> SketchKind {
        match self {
            Sketch::Count(_) => SketchKind::Count,
            Sketch::Dense { kind, .. } => *kind,
        }
    }

    pub fn target_rows(&self) -> usize {
        match self {
            Sketch::Count(s) => s.target_rows,
            Sketch::Dense { matrix, .. } => matrix.rows(),
        }
    }

    pub fn apply(&self, t: &DenseTensor) -> Result<DenseTensor> {
        match self {
            Sketch::Count(s) => sketch_apply(s, t),
            Sketch::Dense { matrix, .. } => nmode_product(t, matrix, 0),
        }
    }
}

/// i.i.d. `N(0, 1/K)` entries.
fn gaussian_projection(k: usize, n: usize, seed: u64) -> Matrix {
    let mut rng = rng::seeded(seed);
    let scale = 1.0 / (k as f64).sqrt();
    let data = (0..k * n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            scale * z
        })
        .collect();
    Matrix::new(k, n, data).expect("K, N >= 1")
}

/// Achlioptas projection: `sqrt(3/K) · {+1, 0, -1}` with probabilities
/// `{1/6, 2/3, 1/6}`.
fn sparse_projection(k: usize, n: usize, seed: u64) -> Matrix {
    let mut rng = rng::seeded(seed);
    let scale = (3.0 / k as f64).sqrt();
    let data = (0..k * n)
        .map(|_| match rng.random_range(0..6u8) {
            0 => scale,
            1 => -scale,
            _ => 0.0,
        })
        .collect();
    Matrix::new(k, n, data).expect("K, N >= 1")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistortionStats {
    /// `max |‖SAx‖² / ‖Ax‖² − 1|` over the trials used.
    pub max: f64,
    pub mean: f64,
    pub trials_used: usize,
}

/// Empirical subspace-embedding distortion of `s` on the column space of `a`,
/// over `trials` random unit vectors drawn from `seed`. Trials with `Ax = 0`
/// are skipped.
pub fn embedding_distortion(
    s: &Sketch,
    a: &Matrix,
    trials: usize,
    seed: u64,
) -> Result<DistortionStats> {
    if trials == 0 {
        return Err(TpgError::InvalidArgument("trials must be >= 1".into()));
    }
    let sa = Matrix::try_from(s.apply(&DenseTensor::from(a.clone()))?)?;
    let mut rng = rng::seeded(seed);
    let mut max: f64 = 0.0;
    let mut sum = 0.0;
    let mut used = 0;
    for _ in 0..trials {
        let mut x = linalg::gaussian_vec(a.cols(), &mut rng);
        let nx = linalg::norm(&x);
        if nx == 0.0 {
            continue;
        }
        x.iter_mut().for_each(|v| *v /= nx);
        let ax = linalg::norm(&a.matvec(&x)?).powi(2);
        if ax == 0.0 {
            continue;
        }
        let sax = linalg::norm(&sa.matvec(&x)?).powi(2);
        let d = (sax / ax - 1.0).abs();
        max = max.max(d);
        sum += d;
        used += 1;
    }
    Ok(DistortionStats {
        max,
        mean: if used > 0 { sum / used as f64 } else { 0.0 },
        trials_used: used,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_tensor(shape: &[usize], seed: u64) -> DenseTensor {
        let mut rng = rng::seeded(seed);
        DenseTensor::from_fn(shape, |_| StandardNormal.sample(&mut rng)).unwrap()
    }

    fn identity_sketch(n: usize) -> CountSketch {
        CountSketch::from_parts(n, (0..n).collect(), vec![1; n]).unwrap()
    }

    #[test]
    fn single_bucket() {
        let s = build_count_sketch(1, 50, 9).unwrap();
        assert!(s.row_of().iter().all(|&r| r == 0));
    }

    #[test]
    fn materialized_structure() {
        let s = build_count_sketch(4, 16, 42).unwrap();
        let m = s.materialize();
        let nonzeros: Vec<f64> = m.data().iter().copied().filter(|&v| v != 0.0).collect();
        assert_eq!(nonzeros.len(), 16);
        assert!(nonzeros.iter().all(|&v| v == 1.0 || v == -1.0));
        for j in 0..16 {
            assert_eq!(m.column(j).iter().filter(|&&v| v != 0.0).count(), 1);
        }
    }

    #[test]
    fn bucket_and_sign_frequencies() {
        let s = build_count_sketch(2, 10_000, 2024).unwrap();
        let frac0 = s.row_of().iter().filter(|&&r| r == 0).count() as f64 / 10_000.0;
        let mean_sign = s.sign_of().iter().map(|&v| v as f64).sum::<f64>() / 10_000.0;
        assert!((frac0 - 0.5).abs() <= 0.02, "fraction in row 0 = {frac0}");
        assert!(mean_sign.abs() <= 0.03, "mean sign = {mean_sign}");
    }

    #[test]
    fn zero_sizes_rejected() {
        assert!(build_count_sketch(0, 4, 1).is_err());
        assert!(build_count_sketch(4, 0, 1).is_err());
    }

    #[test]
    fn deterministic_for_same_seed() {
        assert_eq!(
            build_count_sketch(5, 100, 3).unwrap(),
            build_count_sketch(5, 100, 3).unwrap()
        );
        assert_ne!(
            build_count_sketch(5, 100, 3).unwrap(),
            build_count_sketch(5, 100, 4).unwrap()
        );
    }

    #[test]
    fn identity_sketch_is_exact() {
        let t = random_tensor(&[6, 3, 2], 1);
        assert_eq!(identity_sketch(6).apply(&t).unwrap(), t);
    }

    #[test]
    fn apply_matches_materialized_product() {
        let t = random_tensor(&[8, 3, 2], 5);
        let s = build_count_sketch(4, 8, 77).unwrap();
        let fast = sketch_apply(&s, &t).unwrap();
        let slow = nmode_product(&t, &s.materialize(), 0).unwrap();
        assert_eq!(fast.shape(), &[4, 3, 2]);
        for (a, b) in fast.data().iter().zip(slow.data()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn zero_tensor_maps_to_zero() {
        let s = build_count_sketch(4, 8, 1).unwrap();
        let out = s.apply(&DenseTensor::zeros(&[8, 3, 2]).unwrap()).unwrap();
        assert_eq!(out, DenseTensor::zeros(&[4, 3, 2]).unwrap());
    }

    #[test]
    fn apply_rejects_wrong_sample_count() {
        let s = build_count_sketch(4, 8, 1).unwrap();
        assert!(s.apply(&DenseTensor::zeros(&[7, 2]).unwrap()).is_err());
    }

    #[test]
    fn identity_distortion_is_zero() {
        let a = Matrix::try_from(random_tensor(&[10, 3], 8)).unwrap();
        let d = embedding_distortion(&Sketch::Count(identity_sketch(10)), &a, 20, 1).unwrap();
        assert!(d.max < 1e-14);
        assert_eq!(d.trials_used, 20);
    }

    #[test]
    fn degenerate_single_bucket_distortion_is_finite() {
        let a = Matrix::identity(2).unwrap();
        let s = Sketch::Count(build_count_sketch(1, 2, 4).unwrap());
        let d = embedding_distortion(&s, &a, 50, 2).unwrap();
        assert!(d.max.is_finite() && d.max >= 0.0);
    }

    #[test]
    fn dense_sketches_share_interface() {
        let t = random_tensor(&[20, 2], 3);
        for kind in [SketchKind::Gaussian, SketchKind::Sparse] {
            let s = SketchSpec {
                k: 5,
                n: 20,
                seed: 1,
                kind,
            }
            .build()
            .unwrap();
            assert_eq!(s.kind(), kind);
            assert_eq!(s.apply(&t).unwrap().shape(), &[5, 2]);
        }
    }

    #[test]
    fn spec_json_shape() {
        let spec: SketchSpec =
            serde_json::from_str(r#"{"K": 4, "N": 10, "seed": 7, "kind": "sparse"}"#).unwrap();
        assert_eq!(spec.kind, SketchKind::Sparse);
        let json = serde_json::to_string(&SketchSpec {
            kind: SketchKind::Count,
            ..spec
        })
        .unwrap();
        assert_eq!(json, r#"{"K":4,"N":10,"seed":7,"kind":"count"}"#);
    }
}
