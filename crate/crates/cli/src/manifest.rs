//! Model manifests: a JSON file naming the tensors of a regression problem.
//! Relative paths resolve against the manifest's directory.

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tpg_core::io::{tensor_read, tensor_write};
use tpg_core::model::{MlmtlTask, RegressionModel};
use tpg_core::{DenseTensor, Matrix, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum ModelFiles {
    Slicewise {
        x: PathBuf,
        y: PathBuf,
    },
    VarLaplacian {
        x: PathBuf,
        y: PathBuf,
        laplacian: PathBuf,
        mu: f64,
    },
    /// `tasks` is a JSON array of `{x, y, column}` objects.
    Mlmtl {
        shape: Vec<usize>,
        tasks: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(flatten)]
    pub model: ModelFiles,
    /// Ground truth, when known; `fit` then reports the parameter RMSE.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w_true: Option<PathBuf>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<(Self, PathBuf)> {
        let m = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((m, dir))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        serde_json::to_writer_pretty(File::create(path)?, self)?;
        Ok(())
    }

    pub fn load_model(&self, dir: &Path) -> Result<RegressionModel> {
        let read = |p: &PathBuf| tensor_read(dir.join(p));
        match &self.model {
            ModelFiles::Slicewise { x, y } => RegressionModel::slicewise(read(x)?, read(y)?),
            ModelFiles::VarLaplacian {
                x,
                y,
                laplacian,
                mu,
            } => RegressionModel::var_laplacian(
                read(x)?,
                read(y)?,
                Matrix::try_from(read(laplacian)?)?,
                *mu,
            ),
            ModelFiles::Mlmtl { shape, tasks } => {
                let file = File::open(dir.join(tasks))?;
                let tasks: Vec<MlmtlTask> = serde_json::from_reader(BufReader::new(file))?;
                RegressionModel::mlmtl(shape.clone(), tasks)
            }
        }
    }

    pub fn load_truth(&self, dir: &Path) -> Result<Option<DenseTensor>> {
        self.w_true
            .as_ref()
            .map(|p| tensor_read(dir.join(p)))
            .transpose()
    }
}

/// Writes the tensors of `model` into `dir` and returns the manifest that
/// names them.
pub fn save_model(model: &RegressionModel, dir: &Path) -> Result<Manifest> {
    let model = match model {
        RegressionModel::Slicewise(m) => {
            tensor_write(m.x(), dir.join("x.dtnsr"))?;
            tensor_write(m.y(), dir.join("y.dtnsr"))?;
            ModelFiles::Slicewise {
                x: "x.dtnsr".into(),
                y: "y.dtnsr".into(),
            }
        }
        RegressionModel::VarLaplacian(m) => {
            tensor_write(m.x(), dir.join("x.dtnsr"))?;
            tensor_write(m.y(), dir.join("y.dtnsr"))?;
            tensor_write(
                &DenseTensor::from(m.laplacian().clone()),
                dir.join("laplacian.dtnsr"),
            )?;
            ModelFiles::VarLaplacian {
                x: "x.dtnsr".into(),
                y: "y.dtnsr".into(),
                laplacian: "laplacian.dtnsr".into(),
                mu: m.mu(),
            }
        }
        RegressionModel::Mlmtl(m) => {
            serde_json::to_writer(File::create(dir.join("tasks.json"))?, m.tasks())?;
            ModelFiles::Mlmtl {
                shape: model.model_shape(),
                tasks: "tasks.json".into(),
            }
        }
    };
    Ok(Manifest {
        model,
        w_true: None,
    })
}
