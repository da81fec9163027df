//! CSV ingestion of survival data.

use std::path::Path;

use log::info;
use nalgebra::DMatrix;

use crate::error::{LpsmcError, Result};
use crate::model::SurvivalDataset;

/// Column names used to build a dataset from a CSV header.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ColumnMapping {
    pub time: String,
    pub status: String,
    pub incidence: Vec<String>,
    pub latency: Vec<String>,
    /// Covariates to center at their sample mean.
    pub center: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedData {
    pub dataset: SurvivalDataset,
    /// Rows dropped because a required cell was empty or `NA`.
    pub rejected: usize,
    pub incidence_names: Vec<String>,
    pub latency_names: Vec<String>,
    /// `(column, mean)` for centered covariates.
    pub centers: Vec<(String, f64)>,
}

fn is_missing(cell: &str) -> bool {
    let cell = cell.trim();
    cell.is_empty() || cell.eq_ignore_ascii_case("na") || cell.eq_ignore_ascii_case("nan")
}

/// Read a header-first CSV. Row numbers in errors count data rows from 1.
pub fn load_csv(path: &Path, mapping: &ColumnMapping) -> Result<LoadedData> {
    let file = std::fs::File::open(path)?;
    read_csv(file, mapping)
}

pub fn read_csv<R: std::io::Read>(input: R, mapping: &ColumnMapping) -> Result<LoadedData> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = reader.headers()?.clone();
    let position = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| LpsmcError::Config(format!("column '{name}' not found in the CSV header")))
    };
    let time_col = position(&mapping.time)?;
    let status_col = position(&mapping.status)?;
    let inc_cols = mapping.incidence.iter().map(|c| position(c)).collect::<Result<Vec<_>>>()?;
    let lat_cols = mapping.latency.iter().map(|c| position(c)).collect::<Result<Vec<_>>>()?;
    for name in &mapping.center {
        if !mapping.incidence.contains(name) && !mapping.latency.contains(name) {
            return Err(LpsmcError::Config(format!(
                "centered column '{name}' is not an incidence or latency covariate"
            )));
        }
    }

    let mut needed: Vec<usize> = vec![time_col, status_col];
    needed.extend(&inc_cols);
    needed.extend(&lat_cols);

    let mut times = Vec::new();
    let mut events = Vec::new();
    let mut inc_rows: Vec<Vec<f64>> = Vec::new();
    let mut lat_rows: Vec<Vec<f64>> = Vec::new();
    let mut rejected = 0;

    for (idx, record) in reader.records().enumerate() {
        let row = idx + 1;
        let record = record?;
        if needed.iter().any(|&c| record.get(c).is_none_or(is_missing)) {
            rejected += 1;
            continue;
        }
        let number = |col: usize| -> Result<f64> {
            let cell = record.get(col).unwrap_or("");
            cell.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| LpsmcError::Csv {
                    row,
                    column: headers[col].to_string(),
                    message: format!("'{cell}' is not a finite number"),
                })
        };
        let t = number(time_col)?;
        if t < 0.0 {
            return Err(LpsmcError::Csv {
                row,
                column: mapping.time.clone(),
                message: format!("negative follow-up time {t}"),
            });
        }
        let status = number(status_col)?;
        if status != 0.0 && status != 1.0 {
            return Err(LpsmcError::Csv {
                row,
                column: mapping.status.clone(),
                message: format!("status must be 0 or 1, found {status}"),
            });
        }
        times.push(t);
        events.push(status == 1.0);
        inc_rows.push(inc_cols.iter().map(|&c| number(c)).collect::<Result<_>>()?);
        lat_rows.push(lat_cols.iter().map(|&c| number(c)).collect::<Result<_>>()?);
    }
    if rejected > 0 {
        info!("rejected {rejected} rows with missing values");
    }
    let n = times.len();
    if n == 0 {
        return Err(LpsmcError::Dataset("no complete rows in the CSV".into()));
    }

    let mut centers = Vec::new();
    for name in &mapping.center {
        let values: Vec<f64> = if let Some(j) = mapping.incidence.iter().position(|c| c == name) {
            inc_rows.iter().map(|r| r[j]).collect()
        } else {
            let j = mapping.latency.iter().position(|c| c == name).expect("checked above");
            lat_rows.iter().map(|r| r[j]).collect()
        };
        let mean = values.iter().sum::<f64>() / n as f64;
        if let Some(j) = mapping.incidence.iter().position(|c| c == name) {
            inc_rows.iter_mut().for_each(|r| r[j] -= mean);
        }
        if let Some(j) = mapping.latency.iter().position(|c| c == name) {
            lat_rows.iter_mut().for_each(|r| r[j] -= mean);
        }
        centers.push((name.clone(), mean));
    }

    let p1 = inc_cols.len() + 1;
    let x = DMatrix::from_fn(n, p1, |i, j| if j == 0 { 1.0 } else { inc_rows[i][j - 1] });
    let z = DMatrix::from_fn(n, lat_cols.len(), |i, j| lat_rows[i][j]);
    let dataset = SurvivalDataset::new(times, events, x, z)?;
    Ok(LoadedData {
        dataset,
        rejected,
        incidence_names: mapping.incidence.clone(),
        latency_names: mapping.latency.clone(),
        centers,
    })
}

/// Write a dataset back as CSV with columns `time, status, x1.., z1..`.
pub fn write_dataset_csv<W: std::io::Write>(
    out: W,
    data: &SurvivalDataset,
    incidence_names: &[String],
    latency_names: &[String],
) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    let mut header = vec!["time".to_string(), "status".to_string()];
    header.extend(incidence_names.iter().cloned());
    header.extend(latency_names.iter().map(|n| {
        if incidence_names.contains(n) {
            format!("{n}_latency")
        } else {
            n.clone()
        }
    }));
    writer.write_record(&header)?;
    for i in 0..data.n() {
        let mut record = vec![
            data.times()[i].to_string(),
            if data.events()[i] { "1" } else { "0" }.to_string(),
        ];
        record.extend((1..data.x().ncols()).map(|j| data.x()[(i, j)].to_string()));
        record.extend((0..data.z().ncols()).map(|j| data.z()[(i, j)].to_string()));
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}
