//! In-memory observations: response, explanatory columns and weights.

use std::collections::BTreeMap;

use crate::basis::{Point, Points};
use crate::error::{CtmError, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum ColumnData {
    Real(Vec<f64>),
    Levels(Vec<String>),
}

impl ColumnData {
    pub fn len(&self) -> usize {
        match self {
            ColumnData::Real(v) => v.len(),
            ColumnData::Levels(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn points(&self) -> Points<'_> {
        match self {
            ColumnData::Real(v) => Points::Real(v),
            ColumnData::Levels(v) => Points::Levels(v),
        }
    }

    fn value(&self, i: usize) -> Value {
        match self {
            ColumnData::Real(v) => Value::Real(v[i]),
            ColumnData::Levels(v) => Value::Level(v[i].clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    pub data: ColumnData,
}

impl Column {
    pub fn real(name: impl Into<String>, values: Vec<f64>) -> Self {
        Column {
            name: name.into(),
            data: ColumnData::Real(values),
        }
    }

    pub fn levels(name: impl Into<String>, values: Vec<String>) -> Self {
        Column {
            name: name.into(),
            data: ColumnData::Levels(values),
        }
    }
}

/// A single covariate value.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Real(f64),
    Level(String),
}

impl Value {
    pub fn as_point(&self) -> Point<'_> {
        match self {
            Value::Real(x) => Point::Real(*x),
            Value::Level(l) => Point::Level(l),
        }
    }
}

/// Covariate values of one configuration `x`, keyed by column name.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Covariates(BTreeMap<String, Value>);

impl Covariates {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, name: impl Into<String>, value: Value) -> Self {
        self.0.insert(name.into(), value);
        self
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Value) {
        self.0.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Value> {
        self.0.get(name)
    }
}

/// Named explanatory columns of equal length.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    nrows: usize,
    columns: Vec<Column>,
}

impl Frame {
    pub fn new(nrows: usize, columns: Vec<Column>) -> Result<Self> {
        for (i, c) in columns.iter().enumerate() {
            if c.data.len() != nrows {
                return Err(CtmError::Dimension(format!(
                    "column '{}' has {} rows, expected {nrows}",
                    c.name,
                    c.data.len()
                )));
            }
            if columns[..i].iter().any(|o| o.name == c.name) {
                return Err(CtmError::Input(format!("duplicate column '{}'", c.name)));
            }
            if let ColumnData::Real(v) = &c.data {
                if let Some(r) = v.iter().position(|x| !x.is_finite()) {
                    return Err(CtmError::Input(format!(
                        "column '{}' has a non-finite value in row {r}",
                        c.name
                    )));
                }
            }
        }
        Ok(Frame { nrows, columns })
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn column(&self, name: &str) -> Result<&Column> {
        self.columns
            .iter()
            .find(|c| c.name == name)
            .ok_or_else(|| CtmError::Input(format!("no column named '{name}'")))
    }

    /// Covariate values of row `i`.
    pub fn row(&self, i: usize) -> Covariates {
        let mut cov = Covariates::new();
        for c in &self.columns {
            cov.insert(c.name.clone(), c.data.value(i));
        }
        cov
    }
}

/// Observed responses with explanatory columns and non-negative weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    frame: Frame,
    response: Vec<f64>,
    weights: Vec<f64>,
}

impl Dataset {
    /// Builds a dataset; weights default to `1 / N` each.
    pub fn new(response: Vec<f64>, columns: Vec<Column>, weights: Option<Vec<f64>>) -> Result<Self> {
        let n = response.len();
        if n == 0 {
            return Err(CtmError::Input("dataset has no observations".into()));
        }
        if let Some(r) = response.iter().position(|y| !y.is_finite()) {
            return Err(CtmError::Input(format!("response in row {r} is not finite")));
        }
        let frame = Frame::new(n, columns)?;
        let weights = match weights {
            Some(w) => {
                if w.len() != n {
                    return Err(CtmError::Dimension(format!(
                        "{} weights for {n} observations",
                        w.len()
                    )));
                }
                if let Some(r) = w.iter().position(|x| !(x.is_finite() && *x >= 0.0)) {
                    return Err(CtmError::Input(format!(
                        "weight in row {r} must be finite and non-negative"
                    )));
                }
                w
            }
            None => vec![1.0 / n as f64; n],
        };
        let first = response[0];
        if response.iter().all(|y| *y == first) {
            return Err(CtmError::Degenerate(
                "at least two distinct responses are required".into(),
            ));
        }
        Ok(Dataset {
            frame,
            response,
            weights,
        })
    }

    pub fn len(&self) -> usize {
        self.response.len()
    }

    pub fn is_empty(&self) -> bool {
        self.response.is_empty()
    }

    pub fn response(&self) -> &[f64] {
        &self.response
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn frame(&self) -> &Frame {
        &self.frame
    }

    /// Same covariates and weights with a new response vector.
    pub fn with_response(&self, response: Vec<f64>) -> Result<Self> {
        Dataset::new(
            response,
            self.frame.columns.clone(),
            Some(self.weights.clone()),
        )
    }
}
