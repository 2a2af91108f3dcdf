//! CSV ingestion: header row of column names, numeric body, optional
//! designated response column.

use nalgebra::DMatrix;
use std::path::Path;

use crate::CliError;
use fabreg::ols::RegressionData;

pub struct CsvDataset {
    pub headers: Vec<String>,
    /// Row-major numeric body.
    pub rows: Vec<Vec<f64>>,
}

impl CsvDataset {
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| CliError::input(format!("cannot read {}: {e}", path.display())))?;
        let headers: Vec<String> = reader
            .headers()
            .map_err(|e| CliError::input(format!("bad header in {}: {e}", path.display())))?
            .iter()
            .map(str::to_string)
            .collect();
        if headers.is_empty() {
            return Err(CliError::input(format!("{} has no columns", path.display())));
        }
        let mut rows = Vec::new();
        for (line, record) in reader.records().enumerate() {
            let record = record
                .map_err(|e| CliError::input(format!("{} row {}: {e}", path.display(), line + 2)))?;
            if record.len() != headers.len() {
                return Err(CliError::input(format!(
                    "{} row {}: {} cells for {} columns",
                    path.display(),
                    line + 2,
                    record.len(),
                    headers.len()
                )));
            }
            let mut row = Vec::with_capacity(headers.len());
            for (col, cell) in record.iter().enumerate() {
                let value: f64 = cell.parse().map_err(|_| {
                    CliError::input(format!(
                        "{} row {} column `{}`: `{cell}` is not a number",
                        path.display(),
                        line + 2,
                        headers[col]
                    ))
                })?;
                if !value.is_finite() {
                    return Err(CliError::input(format!(
                        "{} row {} column `{}`: non-finite value",
                        path.display(),
                        line + 2,
                        headers[col]
                    )));
                }
                row.push(value);
            }
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(CliError::input(format!("{} has no data rows", path.display())));
        }
        Ok(CsvDataset { headers, rows })
    }

    /// Split into response and design by column name.
    pub fn to_regression(&self, response: &str) -> Result<RegressionData, CliError> {
        let ridx = self
            .headers
            .iter()
            .position(|h| h == response)
            .ok_or_else(|| {
                CliError::input(format!("--response column `{response}` not found"))
            })?;
        let n = self.rows.len();
        let p = self.headers.len() - 1;
        if p == 0 {
            return Err(CliError::input(
                "the dataset needs at least one predictor column".into(),
            ));
        }
        let y: Vec<f64> = self.rows.iter().map(|r| r[ridx]).collect();
        let mut names = Vec::with_capacity(p);
        let mut cols = Vec::with_capacity(p);
        for (j, h) in self.headers.iter().enumerate() {
            if j != ridx {
                names.push(h.clone());
                cols.push(j);
            }
        }
        let x = DMatrix::from_fn(n, p, |i, k| self.rows[i][cols[k]]);
        RegressionData::new(y, x, names).map_err(CliError::from)
    }

    /// Every column as a design matrix (used by `simulate --data`).
    pub fn to_design(&self) -> (DMatrix<f64>, Vec<String>) {
        let n = self.rows.len();
        let p = self.headers.len();
        let x = DMatrix::from_fn(n, p, |i, j| self.rows[i][j]);
        (x, self.headers.clone())
    }
}

/// A coefficient vector: the literal `zero`, or a path to a file with one
/// numeric value per line.
pub fn read_beta0(spec: &str, p: usize) -> Result<Vec<f64>, CliError> {
    if spec == "zero" {
        return Ok(vec![0.0; p]);
    }
    let text = std::fs::read_to_string(spec)
        .map_err(|e| CliError::input(format!("cannot read --beta0 file {spec}: {e}")))?;
    let mut values = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let v: f64 = line
            .parse()
            .map_err(|_| CliError::input(format!("{spec} line {}: not a number", i + 1)))?;
        values.push(v);
    }
    if values.len() != p {
        return Err(CliError::input(format!(
            "--beta0 file has {} values for {p} coefficients",
            values.len()
        )));
    }
    Ok(values)
}
