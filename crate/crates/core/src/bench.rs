//! Synthetic experiments comparing TPG against least squares baselines.
//!
//! Every output is a pure function of the [`ExperimentSpec`]: each run
//! derives its own seed, data are generated once per run, and within a run
//! all methods at a given sketch size and kind see the same sketch. Wall
//! times are only recorded when `timing` is set, so CSV output stays
//! byte-for-byte reproducible by default.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{mismatch, Result, TpgError};
use crate::linalg;
use crate::model::RegressionModel;
use crate::projection::RankSpec;
use crate::rng;
use crate::sketch::{SketchKind, SketchSpec};
use crate::solver::{ols_fit, thosvd_fit, tpg_fit, SolverConfig};
use crate::tensor::{slicewise_matmul, DenseTensor};
use crate::tucker::TuckerFactors;

/// Header of the experiment CSV.
pub const CSV_HEADER: &str =
    "run,method,sketch_kind,sketch_k,param_rmse,final_loss,iterations,wall_ms,status";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub model_shape: Vec<usize>,
    pub tucker_rank: RankSpec,
    pub sample_count: usize,
    pub noise_sigma: f64,
    #[serde(default = "one")]
    pub runs: usize,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> usize {
    1
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<Vec<usize>> {
        if self.model_shape.len() != 3 {
            return Err(TpgError::InvalidArgument(format!(
                "model_shape must have three modes, got {:?}",
                self.model_shape
            )));
        }
        if self.model_shape.contains(&0) {
            return Err(TpgError::InvalidArgument(
                "model_shape entries must be >= 1".into(),
            ));
        }
        let ranks = self.tucker_rank.resolve(&self.model_shape)?;
        if self.sample_count == 0 {
            return Err(TpgError::InvalidArgument(
                "sample_count must be >= 1".into(),
            ));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(TpgError::InvalidArgument("noise_sigma must be >= 0".into()));
        }
        if self.runs == 0 {
            return Err(TpgError::InvalidArgument("runs must be >= 1".into()));
        }
        Ok(ranks)
    }

    /// Seed of run `run`.
    pub fn run_seed(&self, run: usize) -> u64 {
        rng::derive_seed(self.seed, run as u64)
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    /// Predictors `(T, D1, D3)`.
    pub x: DenseTensor,
    /// Responses `(T, D2, D3)`.
    pub y: DenseTensor,
    pub w_true: DenseTensor,
    pub noise: DenseTensor,
}

impl SyntheticData {
    pub fn model(&self) -> Result<RegressionModel> {
        RegressionModel::slicewise(self.x.clone(), self.y.clone())
    }
}

const FACTOR_STREAM: u64 = 1;
const CORE_STREAM: u64 = 2;
const DESIGN_STREAM: u64 = 3;
const NOISE_STREAM: u64 = 4;

/// Data for `spec.seed`. Factors, core, design and noise come from separate
/// streams, and the noise is `σ` times a standard normal draw, so changing
/// `σ` leaves everything else, including the noise direction, unchanged.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    gen_with_seed(spec, spec.seed)
}

/// Data for run `run` of `spec`.
pub fn gen_synthetic_run(spec: &SyntheticSpec, run: usize) -> Result<SyntheticData> {
    gen_with_seed(spec, spec.run_seed(run))
}

fn gen_with_seed(spec: &SyntheticSpec, seed: u64) -> Result<SyntheticData> {
    let ranks = spec.validate()?;
    let shape = &spec.model_shape;
    let mut frng = rng::stream(seed, FACTOR_STREAM);
    let factors = shape
        .iter()
        .zip(&ranks)
        .map(|(&d, &r)| linalg::random_orthonormal(d, r, &mut frng))
        .collect::<Result<Vec<_>>>()?;
    let core_len = ranks.iter().product();
    let core = DenseTensor::new(
        ranks.clone(),
        linalg::gaussian_vec(core_len, &mut rng::stream(seed, CORE_STREAM)),
    )?;
    let w_true = TuckerFactors::new(core, factors)?.reconstruct()?;

    let t = spec.sample_count;
    let (d1, d2, d3) = (shape[0], shape[1], shape[2]);
    let x = DenseTensor::new(
        vec![t, d1, d3],
        linalg::gaussian_vec(t * d1 * d3, &mut rng::stream(seed, DESIGN_STREAM)),
    )?;
    let z = DenseTensor::new(
        vec![t, d2, d3],
        linalg::gaussian_vec(t * d2 * d3, &mut rng::stream(seed, NOISE_STREAM)),
    )?;
    let noise = z.scaled(spec.noise_sigma);
    let y = slicewise_matmul(&x, &w_true)?.add_scaled(&noise, 1.0)?;
    Ok(SyntheticData {
        x,
        y,
        w_true,
        noise,
    })
}

/// `‖W − W*‖_F / sqrt(#entries)`.
pub fn param_rmse(w: &DenseTensor, w_true: &DenseTensor) -> Result<f64> {
    if w.shape() != w_true.shape() {
        return Err(mismatch(format!(
            "estimate {:?} and truth {:?} differ in shape",
            w.shape(),
            w_true.shape()
        )));
    }
    Ok(w.sub(w_true)?.frobenius_norm() / (w.len() as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Tpg,
    Thosvd,
    Ols,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Tpg => "tpg",
            Method::Thosvd => "thosvd",
            Method::Ols => "ols",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = TpgError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tpg" => Ok(Method::Tpg),
            "thosvd" => Ok(Method::Thosvd),
            "ols" => Ok(Method::Ols),
            other => Err(TpgError::InvalidArgument(format!(
                "unknown method {other:?}; expected tpg, thosvd or ols"
            ))),
        }
    }
}

/// One point of the sketch grid: no sketch, or `K` rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SketchSize {
    None,
    Rows(usize),
}

impl fmt::Display for SketchSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SketchSize::None => f.write_str("none"),
            SketchSize::Rows(k) => write!(f, "{k}"),
        }
    }
}

impl FromStr for SketchSize {
    type Err = TpgError;

    fn from_str(s: &str) -> Result<Self> {
        if s == "none" {
            return Ok(SketchSize::None);
        }
        match s.parse::<usize>() {
            Ok(k) if k > 0 => Ok(SketchSize::Rows(k)),
            _ => Err(TpgError::InvalidArgument(format!(
                "sketch size must be a positive integer or \"none\", got {s:?}"
            ))),
        }
    }
}

impl Serialize for SketchSize {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            SketchSize::None => s.serialize_str("none"),
            SketchSize::Rows(k) => s.serialize_u64(*k as u64),
        }
    }
}

impl<'de> Deserialize<'de> for SketchSize {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Rows(usize),
            Text(String),
        }
        let parsed = match Raw::deserialize(d)? {
            Raw::Rows(k) => SketchSize::from_str(&k.to_string()),
            Raw::Text(s) => SketchSize::from_str(&s),
        };
        parsed.map_err(serde::de::Error::custom)
    }
}

/// Full description of an experiment grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    #[serde(flatten)]
    pub synthetic: SyntheticSpec,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "default_grid")]
    pub sketch_grid: Vec<SketchSize>,
    #[serde(default = "default_kinds")]
    pub sketch_kinds: Vec<SketchKind>,
    /// Solver settings for TPG; its rank is replaced by `tucker_rank` and
    /// its seed by the run seed.
    #[serde(default)]
    pub solver: SolverConfig,
    /// Record wall-clock times (otherwise `wall_ms` is 0).
    #[serde(default)]
    pub timing: bool,
}

fn default_methods() -> Vec<Method> {
    vec![Method::Tpg, Method::Thosvd, Method::Ols]
}

fn default_grid() -> Vec<SketchSize> {
    vec![SketchSize::None]
}

fn default_kinds() -> Vec<SketchKind> {
    vec![SketchKind::Count]
}

impl ExperimentSpec {
    pub fn new(synthetic: SyntheticSpec) -> Self {
        Self {
            synthetic,
            methods: default_methods(),
            sketch_grid: default_grid(),
            sketch_kinds: default_kinds(),
            solver: SolverConfig::default(),
            timing: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.synthetic.validate()?;
        if self.methods.is_empty() {
            return Err(TpgError::InvalidArgument("no methods given".into()));
        }
        if self.sketch_grid.is_empty() {
            return Err(TpgError::InvalidArgument("empty sketch grid".into()));
        }
        if self.sketch_kinds.is_empty() {
            return Err(TpgError::InvalidArgument("no sketch kinds given".into()));
        }
        self.solver.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub run: usize,
    pub method: Method,
    /// `"none"` when the cell is unsketched.
    pub sketch_kind: String,
    pub sketch_k: SketchSize,
    pub param_rmse: f64,
    /// Loss on the full, unsketched data.
    pub final_loss: f64,
    pub iterations: usize,
    pub wall_ms: f64,
    pub status: CellStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub method: Method,
    pub sketch_kind: String,
    pub sketch_k: SketchSize,
    pub median_param_rmse: f64,
    pub ok_runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub spec: ExperimentSpec,
    pub records: Vec<ExperimentRecord>,
    pub summary: Vec<CellSummary>,
}

impl ExperimentReport {
    /// Median parameter RMSE of a grid cell over its successful runs.
    pub fn median_rmse(&self, method: Method, kind: &str, k: SketchSize) -> Option<f64> {
        self.summary
            .iter()
            .find(|s| s.method == method && s.sketch_kind == kind && s.sketch_k == k)
            .map(|s| s.median_param_rmse)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            let status = match r.status {
                CellStatus::Ok => "ok",
                CellStatus::Failed => "failed",
            };
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.run,
                r.method,
                r.sketch_kind,
                r.sketch_k,
                r.param_rmse,
                r.final_loss,
                r.iterations,
                r.wall_ms,
                status
            ));
        }
        out
    }

    /// Writes the CSV to `path` and the JSON report next to it.
    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, self.to_csv())?;
        std::fs::write(
            path.with_extension("json"),
            serde_json::to_string_pretty(self)?,
        )?;
        Ok(())
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    }
}

#[derive(Debug, Clone, Copy)]
struct Cell {
    run: usize,
    size: SketchSize,
    kind: Option<SketchKind>,
    method: Method,
}

fn sketch_seed(run_seed: u64, k: usize, kind: SketchKind) -> u64 {
    let tag = match kind {
        SketchKind::Count => 1,
        SketchKind::Gaussian => 2,
        SketchKind::Sparse => 3,
    };
    rng::derive_seed(rng::derive_seed(run_seed, k as u64), tag)
}

fn run_cell(
    spec: &ExperimentSpec,
    data: &SyntheticData,
    full: &RegressionModel,
    cell: Cell,
) -> Result<(DenseTensor, usize)> {
    let run_seed = spec.synthetic.run_seed(cell.run);
    let fitted = match (cell.size, cell.kind) {
        (SketchSize::Rows(k), Some(kind)) => full.sketched(&SketchSpec {
            k,
            n: data.x.shape()[0],
            seed: sketch_seed(run_seed, k, kind),
            kind,
        })?,
        _ => full.clone(),
    };
    match cell.method {
        Method::Ols => Ok((ols_fit(&fitted)?, 0)),
        Method::Thosvd => Ok((thosvd_fit(&fitted, &spec.synthetic.tucker_rank)?, 0)),
        Method::Tpg => {
            let cfg = SolverConfig {
                rank: spec.synthetic.tucker_rank.clone(),
                sketch: None,
                seed: run_seed,
                ..spec.solver.clone()
            };
            let (w, report) = tpg_fit(&fitted, &cfg)?;
            Ok((w, report.iterations))
        }
    }
}

/// Runs every (run, sketch size, sketch kind, method) cell. Failed cells are
/// recorded with status `failed` instead of aborting the grid. When
/// `out_path` is given the CSV is written there and the JSON report next to
/// it with a `.json` extension.
pub fn run_experiment(spec: &ExperimentSpec, out_path: Option<&Path>) -> Result<ExperimentReport> {
    spec.validate()?;
    let mut sizes = spec.sketch_grid.clone();
    sizes.sort();
    sizes.dedup();
    let mut methods = spec.methods.clone();
    methods.sort();
    methods.dedup();
    let mut kinds = spec.sketch_kinds.clone();
    kinds.sort_by_key(|k| k.as_str());
    kinds.dedup();

    let mut records = Vec::new();
    for run in 0..spec.synthetic.runs {
        let data = gen_synthetic_run(&spec.synthetic, run)?;
        let full = data.model()?;
        let mut cells = Vec::new();
        for &size in &sizes {
            let cell_kinds: Vec<Option<SketchKind>> = match size {
                SketchSize::None => vec![None],
                SketchSize::Rows(_) => kinds.iter().copied().map(Some).collect(),
            };
            for kind in cell_kinds {
                for &method in &methods {
                    cells.push(Cell {
                        run,
                        size,
                        kind,
                        method,
                    });
                }
            }
        }
        let mut run_records: Vec<ExperimentRecord> = cells
            .par_iter()
            .map(|&cell| {
                let started = Instant::now();
                let outcome = run_cell(spec, &data, &full, cell).and_then(|(w, iters)| {
                    Ok((param_rmse(&w, &data.w_true)?, full.loss(&w)?, iters))
                });
                let wall_ms = if spec.timing {
                    started.elapsed().as_secs_f64() * 1e3
                } else {
                    0.0
                };
                let sketch_kind = cell.kind.map_or("none", |k| k.as_str()).to_string();
                match outcome {
                    Ok((rmse, loss, iterations)) => ExperimentRecord {
                        run: cell.run,
                        method: cell.method,
                        sketch_kind,
                        sketch_k: cell.size,
                        param_rmse: rmse,
                        final_loss: loss,
                        iterations,
                        wall_ms,
                        status: CellStatus::Ok,
                        error: None,
                    },
                    Err(e) => ExperimentRecord {
                        run: cell.run,
                        method: cell.method,
                        sketch_kind,
                        sketch_k: cell.size,
                        param_rmse: f64::NAN,
                        final_loss: f64::NAN,
                        iterations: 0,
                        wall_ms,
                        status: CellStatus::Failed,
                        error: Some(e.to_string()),
                    },
                }
            })
            .collect();
        records.append(&mut run_records);
    }
    records.sort_by(|a, b| {
        (a.run, a.method, &a.sketch_kind, a.sketch_k).cmp(&(
            b.run,
            b.method,
            &b.sketch_kind,
            b.sketch_k,
        ))
    });

    let mut summary: Vec<CellSummary> = Vec::new();
    for r in &records {
        if summary.iter().any(|s| {
            s.method == r.method && s.sketch_kind == r.sketch_kind && s.sketch_k == r.sketch_k
        }) {
            continue;
        }
        let ok: Vec<f64> = records
            .iter()
            .filter(|o| {
                o.method == r.method
                    && o.sketch_kind == r.sketch_kind
                    && o.sketch_k == r.sketch_k
                    && o.status == CellStatus::Ok
            })
            .map(|o| o.param_rmse)
            .collect();
        summary.push(CellSummary {
            method: r.method,
            sketch_kind: r.sketch_kind.clone(),
            sketch_k: r.sketch_k,
            ok_runs: ok.len(),
            median_param_rmse: median(ok),
        });
    }
    summary.sort_by(|a, b| {
        (a.method, &a.sketch_kind, a.sketch_k).cmp(&(b.method, &b.sketch_kind, b.sketch_k))
    });

    let report = ExperimentReport {
        spec: spec.clone(),
        records,
        summary,
    };
    if let Some(path) = out_path {
        report.write(path)?;
    }
    Ok(report)
}

/// Validation error of one candidate rank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankScore {
    pub rank: RankSpec,
    /// Root mean squared prediction error on each held-out fold.
    pub fold_rmse: Vec<f64>,
    pub mean_rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRankReport {
    pub folds: usize,
    pub scores: Vec<RankScore>,
    pub best: RankSpec,
}

/// Fold of sample `i` out of `n`: contiguous blocks along the sample mode.
/// Multi-task models have per-task row counts, so their rows are dealt
/// round-robin instead.
fn fold_of(model: &RegressionModel, folds: usize, i: usize) -> usize {
    match model.sample_count() {
        Some(n) => i * folds / n,
        None => i % folds,
    }
}

/// K-fold selection of the Tucker rank for TPG. Ties keep the earlier
/// candidate.
pub fn grid_rank(
    model: &RegressionModel,
    candidates: &[RankSpec],
    folds: usize,
    cfg: &SolverConfig,
) -> Result<GridRankReport> {
    if candidates.is_empty() {
        return Err(TpgError::InvalidArgument("no candidate ranks".into()));
    }
    if folds < 2 || folds > model.max_rows() {
        return Err(TpgError::InvalidArgument(format!(
            "cannot split {} rows into {folds} folds",
            model.max_rows()
        )));
    }
    let mut scores = Vec::with_capacity(candidates.len());
    for rank in candidates {
        rank.resolve(&model.model_shape())?;
        let fold_rmse = (0..folds)
            .into_par_iter()
            .map(|f| {
                let train = model.subset_samples(&|i| fold_of(model, folds, i) != f)?;
                let held = model.subset_samples(&|i| fold_of(model, folds, i) == f)?;
                let cfg = SolverConfig {
                    rank: rank.clone(),
                    ..cfg.clone()
                };
                let (w, _) = tpg_fit(&train, &cfg)?;
                let (sse, count) = held.prediction_error(&w)?;
                Ok((sse / count as f64).sqrt())
            })
            .collect::<Result<Vec<f64>>>()?;
        let mean_rmse = fold_rmse.iter().sum::<f64>() / folds as f64;
        scores.push(RankScore {
            rank: rank.clone(),
            fold_rmse,
            mean_rmse,
        });
    }
    let best = scores
        .iter()
        .fold(None::<&RankScore>, |best, s| match best {
            Some(b) if b.mean_rmse <= s.mean_rmse => Some(b),
            _ => Some(s),
        })
        .map(|s| s.rank.clone())
        .expect("at least one candidate");
    Ok(GridRankReport {
        folds,
        scores,
        best,
    })
}
