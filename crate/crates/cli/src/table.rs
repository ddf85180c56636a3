//! Headered CSV input.

use std::path::Path;

use ctm_core::{Column, Dataset, Frame};

use crate::error::CliError;

/// A CSV file held as strings, with the header and source line of every row.
pub struct Table {
    headers: Vec<String>,
    rows: Vec<csv::StringRecord>,
}

fn is_missing(s: &str) -> bool {
    let t = s.trim();
    t.is_empty() || t == "NA"
}

impl Table {
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
        let headers = reader
            .headers()
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?
            .iter()
            .map(str::to_string)
            .collect();
        let mut rows = Vec::new();
        for r in reader.records() {
            rows.push(r.map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?);
        }
        if rows.is_empty() {
            return Err(CliError::Data(format!("{}: no data rows", path.display())));
        }
        Ok(Table { headers, rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    fn index(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }

    /// Rows (1-based) with a missing entry in any of `columns`.
    fn missing_rows(&self, columns: &[usize]) -> Vec<usize> {
        self.rows
            .iter()
            .enumerate()
            .filter(|(_, r)| columns.iter().any(|&c| is_missing(r.get(c).unwrap_or(""))))
            .map(|(i, _)| i + 1)
            .collect()
    }

    fn reals(&self, name: &str, c: usize) -> Result<Vec<f64>, CliError> {
        self.rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let s = r.get(c).unwrap_or("");
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| CliError::Data(format!("row {} column '{name}': '{s}' is not a finite number", i + 1)))
            })
            .collect()
    }

    fn levels(&self, c: usize) -> Vec<String> {
        self.rows.iter().map(|r| r.get(c).unwrap_or("").to_string()).collect()
    }

    /// Columns by name; `categorical` marks those read as levels. A column absent
    /// from the header is reported through `absent`.
    pub fn columns(
        &self,
        wanted: &[(String, bool)],
        absent: impl Fn(&str) -> CliError,
    ) -> Result<Vec<Column>, CliError> {
        let idx = wanted
            .iter()
            .map(|(n, _)| self.index(n).ok_or_else(|| absent(n)))
            .collect::<Result<Vec<_>, _>>()?;
        let missing = self.missing_rows(&idx);
        if !missing.is_empty() {
            let shown: Vec<String> = missing.iter().take(20).map(|r| r.to_string()).collect();
            return Err(CliError::Data(format!(
                "missing values in {} row(s): {}{}",
                missing.len(),
                shown.join(", "),
                if missing.len() > 20 { ", ..." } else { "" }
            )));
        }
        wanted
            .iter()
            .zip(idx)
            .map(|((name, cat), c)| {
                Ok(if *cat {
                    Column::levels(name.clone(), self.levels(c))
                } else {
                    Column::real(name.clone(), self.reals(name, c)?)
                })
            })
            .collect()
    }

    pub fn frame(&self, wanted: &[(String, bool)]) -> Result<Frame, CliError> {
        let cols = self.columns(wanted, |n| CliError::Data(format!("data has no column '{n}'")))?;
        Frame::new(self.len(), cols).map_err(CliError::from_core)
    }

    /// Response, covariates and optional weights. Absent covariates are config errors.
    pub fn dataset(&self, response: &str, weights: Option<&str>, wanted: &[(String, bool)]) -> Result<Dataset, CliError> {
        let mut all: Vec<(String, bool)> = vec![(response.to_string(), false)];
        if let Some(w) = weights {
            all.push((w.to_string(), false));
        }
        all.extend(wanted.iter().cloned());
        let mut cols = self.columns(&all, |n| CliError::Config(format!("data has no column '{n}'")))?;
        let covariates = cols.split_off(if weights.is_some() { 2 } else { 1 });
        let mut head = cols.into_iter();
        let y = real_values(head.next().expect("response column"));
        let w = head.next().map(real_values);
        Dataset::new(y, covariates, w).map_err(CliError::from_core)
    }
}

fn real_values(c: Column) -> Vec<f64> {
    match c.data {
        ctm_core::ColumnData::Real(v) => v,
        ctm_core::ColumnData::Levels(_) => unreachable!("read as real"),
    }
}
