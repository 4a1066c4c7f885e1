//! CSV ingestion.
//!
//! Series come in long format, one measurement per row with columns
//! `time, station, variable, value`; station coordinates come from a
//! separate `station, lat, lon` file. Tasks come one instance per row with
//! one or more task-id columns, feature columns and a target column.
//!
//! Labels are ordered numerically when every label parses as a number and
//! lexicographically otherwise. Empty cells and `NA`/`NaN`/`null` count as
//! missing. Missing series values are forward-filled, and leading gaps take
//! the mean of the observed values of their series.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::mlmtl::{Task, TaskDataset};
use super::var::StationSeries;
use crate::error::{Result, TpgError};
use crate::tensor::{DenseTensor, Matrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "format", rename_all = "kebab-case")]
pub enum IngestSchema {
    Series(SeriesSchema),
    Tasks(TaskSchema),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SeriesSchema {
    pub time: String,
    pub station: String,
    pub variable: String,
    pub value: String,
    /// Center and scale every (station, variable) series.
    pub standardize: bool,
    pub lag: usize,
    /// Coordinates CSV. Without one every station sits at the origin.
    pub coords: Option<PathBuf>,
}

impl Default for SeriesSchema {
    fn default() -> Self {
        Self {
            time: "time".into(),
            station: "station".into(),
            variable: "variable".into(),
            value: "value".into(),
            standardize: false,
            lag: 1,
            coords: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaskSchema {
    /// One column per task mode; their sorted distinct values index the mode.
    pub task_columns: Vec<String>,
    /// Feature columns; all remaining columns when absent.
    pub features: Option<Vec<String>>,
    pub target: String,
}

impl Default for TaskSchema {
    fn default() -> Self {
        Self {
            task_columns: vec!["task_id".into()],
            features: None,
            target: "target".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesImputation {
    pub station: String,
    pub variable: String,
    pub imputed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesReport {
    pub rows: usize,
    pub times: Vec<String>,
    pub stations: Vec<String>,
    pub variables: Vec<String>,
    pub imputed: Vec<SeriesImputation>,
    pub total_imputed: usize,
    pub standardized: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub rows: usize,
    pub features: Vec<String>,
    /// Sorted labels of each task mode.
    pub task_labels: Vec<Vec<String>>,
    pub model_shape: Vec<usize>,
    /// Task slots of the model shape with no data.
    pub empty_slots: usize,
}

#[derive(Debug, Clone)]
pub enum Ingested {
    Series(StationSeries, SeriesReport),
    Tasks(TaskDataset, TaskReport),
}

fn is_missing(s: &str) -> bool {
    s.is_empty()
        || ["na", "nan", "null"]
            .iter()
            .any(|m| s.eq_ignore_ascii_case(m))
}

fn sort_labels(set: BTreeSet<String>) -> Vec<String> {
    let mut labels: Vec<String> = set.into_iter().collect();
    let nums: Option<Vec<f64>> = labels.iter().map(|l| l.parse::<f64>().ok()).collect();
    if let Some(nums) = nums {
        let mut pairs: Vec<(f64, String)> = nums.into_iter().zip(labels).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
        labels = pairs.into_iter().map(|(_, l)| l).collect();
    }
    labels
}

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| TpgError::MissingColumn(name.to_string()))
}

fn reader(r: impl Read) -> csv::Reader<impl Read> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(r)
}

fn line_of(rec: &csv::StringRecord, fallback: usize) -> usize {
    rec.position().map_or(fallback, |p| p.line() as usize)
}

fn parse_number(cell: &str, row: usize, name: &str) -> Result<f64> {
    cell.parse::<f64>().map_err(|_| TpgError::UnparseableRow {
        row,
        reason: format!("column {name}: cannot parse {cell:?} as a number"),
    })
}

fn index_of(labels: &[String]) -> HashMap<&str, usize> {
    labels
        .iter()
        .enumerate()
        .map(|(i, l)| (l.as_str(), i))
        .collect()
}

fn read_coords(r: impl Read, stations: &[String]) -> Result<Matrix> {
    let mut rdr = reader(r);
    let headers = rdr.headers()?.clone();
    let (cs, clat, clon) = (
        column(&headers, "station")?,
        column(&headers, "lat")?,
        column(&headers, "lon")?,
    );
    let mut found: HashMap<String, (f64, f64)> = HashMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = line_of(&rec, i + 2);
        let lat = parse_number(&rec[clat], row, "lat")?;
        let lon = parse_number(&rec[clon], row, "lon")?;
        if !lat.is_finite() || !lon.is_finite() {
            return Err(TpgError::NonFinite(format!("coordinates on row {row}")));
        }
        found.insert(rec[cs].to_string(), (lat, lon));
    }
    let mut coords = Matrix::zeros(stations.len(), 2)?;
    for (p, s) in stations.iter().enumerate() {
        let &(lat, lon) = found
            .get(s)
            .ok_or_else(|| TpgError::MissingColumn(format!("coordinates for station {s}")))?;
        coords.set(p, 0, lat);
        coords.set(p, 1, lon);
    }
    Ok(coords)
}

/// Forward fill, then fill leading gaps with the mean of observed values.
/// Returns the number of filled entries.
fn impute(series: &mut [f64]) -> Option<usize> {
    let observed: Vec<f64> = series.iter().copied().filter(|v| !v.is_nan()).collect();
    if observed.is_empty() {
        return None;
    }
    let mean = observed.iter().sum::<f64>() / observed.len() as f64;
    let mut last = None;
    let mut filled = 0;
    for v in series.iter_mut() {
        if v.is_nan() {
            *v = last.unwrap_or(mean);
            filled += 1;
        } else {
            last = Some(*v);
        }
    }
    Some(filled)
}

/// Subtracts the mean and divides by the population standard deviation;
/// constant series are only centered.
fn standardize(series: &mut [f64]) {
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    let var = series.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    for v in series.iter_mut() {
        *v -= mean;
        if sd > 0.0 {
            *v /= sd;
        }
    }
}

pub fn ingest_series(
    data: impl Read,
    coords: Option<&mut dyn Read>,
    schema: &SeriesSchema,
) -> Result<(StationSeries, SeriesReport)> {
    let mut rdr = reader(data);
    let headers = rdr.headers()?.clone();
    let ct = column(&headers, &schema.time)?;
    let cs = column(&headers, &schema.station)?;
    let cv = column(&headers, &schema.variable)?;
    let cx = column(&headers, &schema.value)?;

    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = line_of(&rec, i + 2);
        let cell = &rec[cx];
        let value = if is_missing(cell) {
            f64::NAN
        } else {
            parse_number(cell, row, &schema.value)?
        };
        rows.push((
            row,
            rec[ct].to_string(),
            rec[cs].to_string(),
            rec[cv].to_string(),
            value,
        ));
    }
    if rows.is_empty() {
        return Err(TpgError::InvalidShape(
            "series file has no data rows".into(),
        ));
    }
    let times = sort_labels(rows.iter().map(|r| r.1.clone()).collect());
    let stations = sort_labels(rows.iter().map(|r| r.2.clone()).collect());
    let variables = sort_labels(rows.iter().map(|r| r.3.clone()).collect());
    let (ti, si, vi) = (index_of(&times), index_of(&stations), index_of(&variables));
    let (t, p, m) = (times.len(), stations.len(), variables.len());

    let mut values = DenseTensor::new(vec![t, p, m], vec![f64::NAN; t * p * m])?;
    let mut seen = vec![false; t * p * m];
    for (row, time, station, variable, value) in &rows {
        let idx = [
            ti[time.as_str()],
            si[station.as_str()],
            vi[variable.as_str()],
        ];
        let lin = values.linear_index(&idx);
        if seen[lin] {
            return Err(TpgError::UnparseableRow {
                row: *row,
                reason: format!(
                    "duplicate entry for time {time}, station {station}, variable {variable}"
                ),
            });
        }
        seen[lin] = true;
        values.data_mut()[lin] = *value;
    }

    let mut imputed = Vec::with_capacity(p * m);
    let mut total_imputed = 0;
    // Each (station, variable) series is a contiguous mode-0 fiber.
    for (fiber, chunk) in values.data_mut().chunks_mut(t).enumerate() {
        let (pi, mi) = (fiber % p, fiber / p);
        let filled = impute(chunk).ok_or_else(|| {
            TpgError::NonFinite(format!(
                "station {} variable {} has no observations",
                stations[pi], variables[mi]
            ))
        })?;
        if chunk.iter().any(|v| !v.is_finite()) {
            return Err(TpgError::NonFinite(format!(
                "station {} variable {}",
                stations[pi], variables[mi]
            )));
        }
        if schema.standardize {
            standardize(chunk);
        }
        total_imputed += filled;
        imputed.push(SeriesImputation {
            station: stations[pi].clone(),
            variable: variables[mi].clone(),
            imputed: filled,
        });
    }

    let coords = match coords {
        Some(r) => read_coords(r, &stations)?,
        None => Matrix::zeros(p, 2)?,
    };
    let series = StationSeries::new(values, coords, schema.lag)?;
    let report = SeriesReport {
        rows: rows.len(),
        times,
        stations,
        variables,
        imputed,
        total_imputed,
        standardized: schema.standardize,
    };
    Ok((series, report))
}

pub fn ingest_tasks(data: impl Read, schema: &TaskSchema) -> Result<(TaskDataset, TaskReport)> {
    if schema.task_columns.is_empty() {
        return Err(TpgError::InvalidArgument(
            "at least one task column is required".into(),
        ));
    }
    let mut rdr = reader(data);
    let headers = rdr.headers()?.clone();
    let id_cols = schema
        .task_columns
        .iter()
        .map(|c| column(&headers, c))
        .collect::<Result<Vec<_>>>()?;
    let target = column(&headers, &schema.target)?;
    let feature_names: Vec<String> = match &schema.features {
        Some(f) => f.clone(),
        None => headers
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != target && !id_cols.contains(i))
            .map(|(_, h)| h.to_string())
            .collect(),
    };
    if feature_names.is_empty() {
        return Err(TpgError::InvalidArgument("no feature columns".into()));
    }
    let feature_cols = feature_names
        .iter()
        .map(|c| column(&headers, c))
        .collect::<Result<Vec<_>>>()?;

    let number = |rec: &csv::StringRecord, c: usize, row: usize| -> Result<f64> {
        let cell = &rec[c];
        if is_missing(cell) {
            return Err(TpgError::NonFinite(format!(
                "missing value in column {} on row {row}",
                &headers[c]
            )));
        }
        let v = parse_number(cell, row, &headers[c])?;
        if !v.is_finite() {
            return Err(TpgError::NonFinite(format!(
                "column {} on row {row}",
                &headers[c]
            )));
        }
        Ok(v)
    };

    let mut groups: BTreeMap<Vec<String>, (Vec<Vec<f64>>, Vec<f64>)> = BTreeMap::new();
    let mut rows = 0;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = line_of(&rec, i + 2);
        let key: Vec<String> = id_cols.iter().map(|&c| rec[c].to_string()).collect();
        let features = feature_cols
            .iter()
            .map(|&c| number(&rec, c, row))
            .collect::<Result<Vec<_>>>()?;
        let y = number(&rec, target, row)?;
        let entry = groups.entry(key).or_default();
        entry.0.push(features);
        entry.1.push(y);
        rows += 1;
    }
    if rows == 0 {
        return Err(TpgError::InvalidShape("task file has no data rows".into()));
    }

    let task_labels: Vec<Vec<String>> = (0..id_cols.len())
        .map(|k| sort_labels(groups.keys().map(|key| key[k].clone()).collect()))
        .collect();
    let lookups: Vec<HashMap<&str, usize>> = task_labels.iter().map(|l| index_of(l)).collect();
    let mut model_shape = vec![feature_names.len()];
    model_shape.extend(task_labels.iter().map(Vec::len));

    let mut keyed = Vec::with_capacity(groups.len());
    for (key, (xs, ys)) in groups {
        let index: Vec<usize> = key
            .iter()
            .zip(&lookups)
            .map(|(k, l)| l[k.as_str()])
            .collect();
        let id = key.join("/");
        keyed.push((
            index,
            Task {
                id,
                x: Matrix::from_rows(&xs)?,
                y: ys,
            },
        ));
    }
    // Order tasks by their column in the mode-0 unfolding.
    keyed.sort_by(|a, b| a.0.iter().rev().cmp(b.0.iter().rev()));

    let slots: usize = model_shape[1..].iter().product();
    let mut dataset = TaskDataset::default();
    for (index, task) in keyed {
        dataset.task_index.insert(task.id.clone(), index);
        dataset.tasks.push(task);
    }
    let report = TaskReport {
        rows,
        features: feature_names,
        task_labels,
        empty_slots: slots - dataset.tasks.len(),
        model_shape,
    };
    Ok((dataset, report))
}

pub fn ingest_csv(path: &Path, schema: &IngestSchema) -> Result<Ingested> {
    let data = File::open(path)?;
    match schema {
        IngestSchema::Series(s) => {
            let mut coords = s.coords.as_ref().map(File::open).transpose()?;
            let (series, report) =
                ingest_series(data, coords.as_mut().map(|f| f as &mut dyn Read), s)?;
            Ok(Ingested::Series(series, report))
        }
        IngestSchema::Tasks(s) => {
            let (dataset, report) = ingest_tasks(data, s)?;
            Ok(Ingested::Tasks(dataset, report))
        }
    }
}

/// Long-format CSV with integer labels for time, station and variable.
pub fn export_series_csv(w: impl Write, series: &StationSeries) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["time", "station", "variable", "value"])?;
    let v = series.values();
    let (t, p, m) = (v.shape()[0], v.shape()[1], v.shape()[2]);
    for ti in 0..t {
        for pi in 0..p {
            for mi in 0..m {
                wtr.write_record([
                    ti.to_string(),
                    pi.to_string(),
                    mi.to_string(),
                    v.get(&[ti, pi, mi]).to_string(),
                ])?;
            }
        }
    }
    wtr.flush()?;
    Ok(())
}

pub fn export_coords_csv(w: impl Write, coords: &Matrix) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["station", "lat", "lon"])?;
    for p in 0..coords.rows() {
        wtr.write_record([
            p.to_string(),
            coords.get(p, 0).to_string(),
            coords.get(p, 1).to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}
