//! The model configuration file (TOML).
//!
//! ```toml
//! version = 1
//!
//! [data]
//! response = "y"
//! weights = "w"            # optional
//! categorical = ["region"] # columns read as levels
//!
//! [fit]
//! link = "probit"          # probit | logit | identity
//! loss = "bin"             # bin | sqe | abe
//! max_iterations = 500
//! step_size = 0.1
//! df = 4.0
//! seed = 1
//! grid = { kind = "equidistant", points = 100, margin = 0.05 }
//! resampling = { kind = "bootstrap", replications = 25 }
//!
//! [response_basis]
//! basis = { kind = "bspline", interior_knots = 20 }
//! penalty = { kind = "difference", order = 2 }
//!
//! [[learner]]
//! covariate = "x1"
//! basis = { kind = "bspline", interior_knots = 10 }
//! penalty = { kind = "difference", order = 2 }
//! ```
//!
//! Basis domains may be omitted; they default to the observed range of the
//! column (or of the response grid for response bases). Dummy levels default to
//! the sorted observed levels.

use std::collections::BTreeSet;

use ctm_core::{
    BasisSpec, BoostConfig, ColumnData, Dataset, GridSpec, Link, LossKind, LossLink, Marginal, PenaltySpec,
    Resampling, TensorLearner,
};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const CONFIG_VERSION: u32 = 1;
pub const INTERCEPT: &str = "intercept";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfigFile {
    pub version: u32,
    pub data: DataSection,
    #[serde(default)]
    pub fit: FitSection,
    pub response_basis: MarginalConfig,
    #[serde(rename = "learner")]
    pub learners: Vec<LearnerConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub response: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<String>,
    #[serde(default)]
    pub categorical: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitSection {
    pub link: Link,
    pub loss: LossKind,
    pub max_iterations: usize,
    pub step_size: f64,
    pub df: f64,
    pub seed: u64,
    pub grid: GridSpec,
    pub resampling: Resampling,
}

impl Default for FitSection {
    fn default() -> Self {
        let d = BoostConfig::default();
        FitSection {
            link: d.loss.link,
            loss: d.loss.kind,
            max_iterations: d.max_iterations,
            step_size: d.step_size,
            df: d.df_target,
            seed: d.seed,
            grid: d.grid,
            resampling: d.resampling,
        }
    }
}

/// A basis whose domain or levels may be left to the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BasisConfig {
    Intercept,
    Linear {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lo: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        hi: Option<f64>,
    },
    Bspline {
        #[serde(default = "cubic")]
        degree: usize,
        interior_knots: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lo: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        hi: Option<f64>,
    },
    CyclicBspline {
        #[serde(default = "cubic")]
        degree: usize,
        interior_knots: usize,
        lo: f64,
        hi: f64,
    },
    Dummy {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        levels: Option<Vec<String>>,
    },
}

fn cubic() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarginalConfig {
    pub basis: BasisConfig,
    #[serde(default)]
    pub penalty: PenaltySpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerConfig {
    /// Column name, or `"intercept"` for a learner that does not depend on `x`.
    pub covariate: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub basis: Option<BasisConfig>,
    #[serde(default)]
    pub penalty: PenaltySpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub df: Option<f64>,
    /// Overrides the shared response basis.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response_basis: Option<MarginalConfig>,
}

impl ModelConfigFile {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        #[derive(Deserialize)]
        struct Version {
            version: Option<u32>,
        }
        let v: Version = toml::from_str(text).map_err(|e| CliError::Config(format!("invalid config: {e}")))?;
        match v.version {
            Some(CONFIG_VERSION) => {}
            Some(other) => {
                return Err(CliError::Config(format!(
                    "unsupported config version {other} (expected {CONFIG_VERSION})"
                )))
            }
            None => return Err(CliError::Config("config is missing 'version'".into())),
        }
        let cfg: ModelConfigFile =
            toml::from_str(text).map_err(|e| CliError::Config(format!("invalid config: {e}")))?;
        if cfg.learners.is_empty() {
            return Err(CliError::Config("config declares no [[learner]]".into()));
        }
        Ok(cfg)
    }

    #[cfg(test)]
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// Columns the data file must provide, with whether each is categorical.
    pub fn required_columns(&self) -> Vec<(String, bool)> {
        let mut names = BTreeSet::new();
        for l in &self.learners {
            if l.covariate != INTERCEPT {
                names.insert(l.covariate.clone());
            }
        }
        names
            .into_iter()
            .map(|n| {
                let cat = self.data.categorical.contains(&n);
                (n, cat)
            })
            .collect()
    }

    pub fn boost_config(&self) -> BoostConfig {
        BoostConfig {
            max_iterations: self.fit.max_iterations,
            step_size: self.fit.step_size,
            loss: LossLink::new(self.fit.loss, self.fit.link),
            grid: self.fit.grid.clone(),
            df_target: self.fit.df,
            resampling: self.fit.resampling,
            seed: self.fit.seed,
        }
    }

    /// Learners with every domain and level list resolved against `data`.
    pub fn learners(&self, data: &Dataset) -> Result<Vec<TensorLearner>, CliError> {
        let grid = self.fit.grid.build(data.response()).map_err(CliError::from_core)?;
        let response_range = (grid.lo(), grid.hi());
        let shared_y = resolve_marginal(&self.response_basis, Some(response_range), None, "response")?;
        let mut out = Vec::with_capacity(self.learners.len());
        for (j, l) in self.learners.iter().enumerate() {
            let y = match &l.response_basis {
                Some(m) => resolve_marginal(m, Some(response_range), None, "response")?,
                None => shared_y.clone(),
            };
            if y.basis.is_categorical() {
                return Err(CliError::Config("a response basis cannot be 'dummy'".into()));
            }
            let label = l.label.clone().unwrap_or_else(|| l.covariate.clone());
            let learner = if l.covariate == INTERCEPT {
                if !matches!(l.basis, None | Some(BasisConfig::Intercept)) {
                    return Err(CliError::Config(format!(
                        "learner {} uses '{INTERCEPT}' and must not set a covariate basis",
                        j + 1
                    )));
                }
                TensorLearner::new(label, None, Marginal::intercept(), y)
            } else {
                let column = data.frame().column(&l.covariate).map_err(|_| {
                    CliError::Config(format!("learner {} references unknown column '{}'", j + 1, l.covariate))
                })?;
                let basis = l.basis.as_ref().ok_or_else(|| {
                    CliError::Config(format!("learner {} ('{}') needs a basis", j + 1, l.covariate))
                })?;
                let categorical = matches!(column.data, ColumnData::Levels(_));
                if categorical != matches!(basis, BasisConfig::Dummy { .. }) {
                    return Err(CliError::Config(format!(
                        "column '{}' is {} but learner {} uses a {} basis",
                        l.covariate,
                        if categorical { "categorical" } else { "numeric" },
                        j + 1,
                        if categorical { "numeric" } else { "dummy" },
                    )));
                }
                let x = resolve_marginal(
                    &MarginalConfig {
                        basis: basis.clone(),
                        penalty: l.penalty.clone(),
                    },
                    None,
                    Some(&column.data),
                    &l.covariate,
                )?;
                check_domain(&x.basis, &column.data, &l.covariate)?;
                TensorLearner::new(label, Some(&l.covariate), x, y)
            };
            let learner = match l.df {
                Some(df) => learner.with_df(df),
                None => learner,
            };
            learner.validate().map_err(|e| CliError::Config(format!("learner {}: {e}", j + 1)))?;
            out.push(learner);
        }
        Ok(out)
    }
}

fn observed_range(data: &ColumnData) -> Option<(f64, f64)> {
    match data {
        ColumnData::Real(v) => Some((
            v.iter().copied().fold(f64::INFINITY, f64::min),
            v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        )),
        ColumnData::Levels(_) => None,
    }
}

fn resolve_marginal(
    m: &MarginalConfig,
    default_range: Option<(f64, f64)>,
    column: Option<&ColumnData>,
    what: &str,
) -> Result<Marginal, CliError> {
    let range = || -> Result<(f64, f64), CliError> {
        default_range
            .or_else(|| column.and_then(observed_range))
            .ok_or_else(|| CliError::Config(format!("basis for '{what}' needs an explicit domain")))
    };
    let pick = |lo: Option<f64>, hi: Option<f64>| -> Result<(f64, f64), CliError> {
        match (lo, hi) {
            (Some(a), Some(b)) => Ok((a, b)),
            (a, b) => {
                let (dlo, dhi) = range()?;
                Ok((a.unwrap_or(dlo), b.unwrap_or(dhi)))
            }
        }
    };
    let basis = match &m.basis {
        BasisConfig::Intercept => BasisSpec::Intercept,
        BasisConfig::Linear { lo, hi } => {
            let (lo, hi) = pick(*lo, *hi)?;
            BasisSpec::Linear { lo, hi }
        }
        BasisConfig::Bspline {
            degree,
            interior_knots,
            lo,
            hi,
        } => {
            let (lo, hi) = pick(*lo, *hi)?;
            BasisSpec::Bspline {
                degree: *degree,
                interior_knots: *interior_knots,
                lo,
                hi,
            }
        }
        BasisConfig::CyclicBspline {
            degree,
            interior_knots,
            lo,
            hi,
        } => BasisSpec::CyclicBspline {
            degree: *degree,
            interior_knots: *interior_knots,
            lo: *lo,
            hi: *hi,
        },
        BasisConfig::Dummy { levels } => {
            let levels = match (levels, column) {
                (Some(l), _) => l.clone(),
                (None, Some(ColumnData::Levels(v))) => {
                    let set: BTreeSet<&String> = v.iter().collect();
                    set.into_iter().cloned().collect()
                }
                _ => return Err(CliError::Config(format!("dummy basis for '{what}' needs levels"))),
            };
            BasisSpec::Dummy { levels }
        }
    };
    basis
        .validate()
        .map_err(|e| CliError::Config(format!("basis for '{what}': {e}")))?;
    Ok(Marginal::new(basis, m.penalty.clone()))
}

/// Every observed value must lie in the basis domain.
fn check_domain(basis: &BasisSpec, data: &ColumnData, name: &str) -> Result<(), CliError> {
    match data {
        ColumnData::Real(v) => {
            if let Some((lo, hi)) = basis.domain() {
                if let Some((row, x)) = v.iter().enumerate().find(|(_, x)| **x < lo || **x > hi) {
                    return Err(CliError::Data(format!(
                        "column '{name}' row {}: value {x} lies outside the basis domain [{lo}, {hi}]",
                        row + 1
                    )));
                }
            }
        }
        ColumnData::Levels(v) => {
            if let BasisSpec::Dummy { levels } = basis {
                if let Some((row, l)) = v.iter().enumerate().find(|(_, l)| !levels.contains(l)) {
                    return Err(CliError::Data(format!(
                        "column '{name}' row {}: level '{l}' is not among the declared levels",
                        row + 1
                    )));
                }
            }
        }
    }
    Ok(())
}
