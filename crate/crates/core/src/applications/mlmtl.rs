use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{mismatch, Result, TpgError};
use crate::model::{MlmtlTask, RegressionModel};
use crate::tensor::Matrix;

/// Samples of one task: `x` is `m_t x d`, `y` has `m_t` entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub id: String,
    pub x: Matrix,
    pub y: Vec<f64>,
}

/// Tasks plus the position of each along the non-feature modes of `W`.
/// A task at index `(i2, i3)` owns column `i2 + D2·i3` of the mode-0
/// unfolding.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TaskDataset {
    pub tasks: Vec<Task>,
    pub task_index: BTreeMap<String, Vec<usize>>,
}

impl TaskDataset {
    pub fn feature_dim(&self) -> Option<usize> {
        self.tasks.first().map(|t| t.x.cols())
    }

    pub fn instance_count(&self) -> usize {
        self.tasks.iter().map(|t| t.y.len()).sum()
    }
}

/// Column of the mode-0 unfolding for a multi-index over modes `1..`.
pub fn task_column(index: &[usize], model_shape: &[usize]) -> Result<usize> {
    if index.len() + 1 != model_shape.len() {
        return Err(mismatch(format!(
            "task index {index:?} does not address the task modes of {model_shape:?}"
        )));
    }
    let mut col = 0;
    let mut stride = 1;
    for (&i, &d) in index.iter().zip(&model_shape[1..]) {
        if i >= d {
            return Err(mismatch(format!(
                "task index {index:?} lies outside model shape {model_shape:?}"
            )));
        }
        col += i * stride;
        stride *= d;
    }
    Ok(col)
}

pub fn build_mlmtl_model(d: &TaskDataset, model_shape: &[usize]) -> Result<RegressionModel> {
    if model_shape.len() < 2 {
        return Err(mismatch(
            "a multi-task model needs a feature mode and task modes",
        ));
    }
    let slots: usize = model_shape[1..].iter().product();
    if d.tasks.len() != slots {
        return Err(TpgError::InvalidArgument(format!(
            "{} tasks for {slots} task slots in model shape {model_shape:?}",
            d.tasks.len()
        )));
    }
    let mut seen = BTreeSet::new();
    let mut tasks = Vec::with_capacity(d.tasks.len());
    for t in &d.tasks {
        if t.x.cols() != model_shape[0] {
            return Err(mismatch(format!(
                "task {} has {} features, expected {}",
                t.id,
                t.x.cols(),
                model_shape[0]
            )));
        }
        let index = d
            .task_index
            .get(&t.id)
            .ok_or_else(|| TpgError::InvalidArgument(format!("task {} has no index", t.id)))?;
        let column = task_column(index, model_shape)?;
        if !seen.insert(column) {
            return Err(TpgError::InvalidArgument(format!(
                "task {} shares index {index:?} with another task",
                t.id
            )));
        }
        tasks.push(MlmtlTask {
            x: t.x.clone(),
            y: t.y.clone(),
            column,
        });
    }
    RegressionModel::mlmtl(model_shape.to_vec(), tasks)
}
