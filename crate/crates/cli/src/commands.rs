use std::fs::{self, File};
use std::io::{BufReader, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;
use tpg_core::applications::{
    build_mlmtl_model, build_var_model, ingest_csv, IngestSchema, Ingested,
};
use tpg_core::bench::{
    gen_synthetic_run, grid_rank as run_grid_rank, param_rmse, run_experiment, ExperimentSpec,
    SyntheticSpec,
};
use tpg_core::io::{tensor_read, tensor_write};
use tpg_core::projection::RankSpec;
use tpg_core::sketch::SketchSpec;
use tpg_core::solver::{ols_fit, thosvd_fit, tpg_fit, SolverConfig, SolverReport};
use tpg_core::{Result, TpgError};

use crate::manifest::{save_model, Manifest};
use crate::FitMethod;

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

fn write_json<T: Serialize>(value: &T, path: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match path {
        Some(p) => fs::write(p, text + "\n")?,
        None => println!("{text}"),
    }
    Ok(())
}

fn solver_config(path: Option<&Path>, seed: Option<u64>) -> Result<SolverConfig> {
    let mut cfg: SolverConfig = path.map(read_json).transpose()?.unwrap_or_default();
    if let Some(seed) = seed {
        cfg.seed = seed;
        if let Some(s) = cfg.sketch.as_mut() {
            s.seed = seed;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn gen(config: &Path, out: &Path, seed: Option<u64>, run: usize) -> Result<()> {
    let mut spec: SyntheticSpec = read_json(config)?;
    if let Some(seed) = seed {
        spec.seed = seed;
    }
    if run >= spec.runs {
        return Err(TpgError::InvalidArgument(format!(
            "run {run} out of range for {} runs",
            spec.runs
        )));
    }
    let data = gen_synthetic_run(&spec, run)?;
    fs::create_dir_all(out)?;
    let mut manifest = save_model(&data.model()?, out)?;
    tensor_write(&data.w_true, out.join("w_true.dtnsr"))?;
    tensor_write(&data.noise, out.join("noise.dtnsr"))?;
    manifest.w_true = Some("w_true.dtnsr".into());
    manifest.write(&out.join("model.json"))?;
    write_json(&spec, Some(&out.join("spec.json")))
}

#[derive(Serialize)]
struct FitReport {
    method: &'static str,
    model_shape: Vec<usize>,
    /// Loss on the full, unsketched data.
    final_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    param_rmse: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    solver: Option<SolverReport>,
    config: SolverConfig,
}

pub fn fit(
    manifest_path: &Path,
    config: Option<&Path>,
    out: &Path,
    method: FitMethod,
    rank: Option<&str>,
    seed: Option<u64>,
) -> Result<()> {
    let (manifest, dir) = Manifest::read(manifest_path)?;
    let mut cfg = solver_config(config, seed)?;
    if let Some(r) = rank {
        cfg.rank = r.parse()?;
    }
    let model = manifest.load_model(&dir)?;
    let truth = manifest.load_truth(&dir)?;

    let fit_model = || match &cfg.sketch {
        Some(s) => model.sketched(s),
        None => Ok(model.clone()),
    };
    let (w, solver, name) = match method {
        FitMethod::Tpg => {
            let (w, report) = tpg_fit(&model, &cfg)?;
            (w, Some(report), "tpg")
        }
        FitMethod::Ols => (ols_fit(&fit_model()?)?, None, "ols"),
        FitMethod::Thosvd => (thosvd_fit(&fit_model()?, &cfg.rank)?, None, "thosvd"),
    };
    let report = FitReport {
        method: name,
        model_shape: w.shape().to_vec(),
        final_loss: model.loss(&w)?,
        param_rmse: truth.map(|t| param_rmse(&w, &t)).transpose()?,
        solver,
        config: cfg,
    };
    fs::create_dir_all(out)?;
    tensor_write(&w, out.join("w.dtnsr"))?;
    write_json(&report, Some(&out.join("report.json")))
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                b.insert(k, v);
            }
        }
        (b, o) => *b = o,
    }
}

pub fn bench(
    config: &Path,
    grid: Option<&Path>,
    out: Option<&Path>,
    seed: Option<u64>,
) -> Result<()> {
    let mut value: Value = read_json(config)?;
    if let Some(g) = grid {
        merge(&mut value, read_json(g)?);
    }
    let mut spec: ExperimentSpec = serde_json::from_value(value)?;
    if let Some(seed) = seed {
        spec.synthetic.seed = seed;
    }
    let report = run_experiment(&spec, out)?;
    if out.is_none() {
        std::io::stdout().write_all(report.to_csv().as_bytes())?;
    }
    let failed = report.records.iter().filter(|r| r.error.is_some()).count();
    if failed > 0 {
        eprintln!("{failed} of {} cells failed", report.records.len());
    }
    Ok(())
}

pub fn sketch(input: &Path, config: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let t = tensor_read(input)?;
    let mut spec: SketchSpec = read_json(config)?;
    if spec.n == 0 {
        spec.n = t.shape()[0];
    }
    if let Some(seed) = seed {
        spec.seed = seed;
    }
    tensor_write(&spec.build()?.apply(&t)?, out)
}

pub fn ingest(
    input: &Path,
    config: &Path,
    out: &Path,
    mu: f64,
    bandwidth: Option<f64>,
    shape: Option<Vec<usize>>,
) -> Result<()> {
    let mut schema: IngestSchema = read_json(config)?;
    if let IngestSchema::Series(s) = &mut schema {
        if let Some(c) = s.coords.as_mut().filter(|c| c.is_relative()) {
            *c = config.parent().unwrap_or(Path::new("")).join(&*c);
        }
    }
    let ingested = ingest_csv(input, &schema)?;
    fs::create_dir_all(out)?;
    let (model, report) = match ingested {
        Ingested::Series(series, report) => {
            tensor_write(series.values(), out.join("values.dtnsr"))?;
            tpg_core::applications::export_coords_csv(
                File::create(out.join("coords.csv"))?,
                series.coords(),
            )?;
            (
                build_var_model(&series, mu, bandwidth)?,
                serde_json::to_value(report)?,
            )
        }
        Ingested::Tasks(tasks, report) => {
            let shape = shape.unwrap_or_else(|| report.model_shape.clone());
            (
                build_mlmtl_model(&tasks, &shape)?,
                serde_json::to_value(report)?,
            )
        }
    };
    save_model(&model, out)?.write(&out.join("model.json"))?;
    write_json(&report, Some(&out.join("report.json")))
}

pub fn grid_rank(
    manifest_path: &Path,
    ranks: &[String],
    folds: usize,
    config: Option<&Path>,
    out: Option<&Path>,
    seed: Option<u64>,
) -> Result<()> {
    let (manifest, dir) = Manifest::read(manifest_path)?;
    let cfg = solver_config(config, seed)?;
    let candidates = ranks
        .iter()
        .map(|r| r.parse())
        .collect::<Result<Vec<RankSpec>>>()?;
    let model = manifest.load_model(&dir)?;
    let report = run_grid_rank(&model, &candidates, folds, &cfg)?;
    write_json(&report, out)
}
