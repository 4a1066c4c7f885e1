//! Builders that turn application data into [`RegressionModel`]s.
//!
//! [`build_mlmtl_model`] stacks per-task coefficient vectors into the
//! columns of a tensor's mode-0 unfolding; [`build_var_model`] lays out a
//! lagged autoregressive design over stations and variables together with a
//! Gaussian-kernel graph Laplacian over station coordinates. [`ingest`]
//! reads both kinds of data from CSV.
//!
//! [`RegressionModel`]: crate::model::RegressionModel

pub mod ingest;
mod mlmtl;
mod var;

pub use ingest::{
    export_coords_csv, export_series_csv, ingest_csv, ingest_series, ingest_tasks, IngestSchema,
    Ingested, SeriesImputation, SeriesReport, SeriesSchema, TaskReport, TaskSchema,
};
pub use mlmtl::{build_mlmtl_model, task_column, Task, TaskDataset};
pub use var::{build_laplacian, build_var_model, default_bandwidth, lag_design, StationSeries};
