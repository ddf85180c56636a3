//! Boosted conditional transformation models.
//!
//! A conditional distribution function is modelled as
//! `P(Y <= v | x) = F(sum_j h_j(v | x))` where each `h_j` is a tensor product of a
//! covariate basis and a response basis, and the coefficients are fitted by
//! component-wise gradient boosting of an integrated scoring rule.
//!
//! ```
//! use ctm_core::{sim, BoostConfig, fit};
//!
//! let data = sim::simulate_hvc(100, 0, 1).unwrap();
//! let study = sim::SimStudyConfig::default();
//! let learners = study.learners(&data, 0).unwrap();
//! let config = BoostConfig { max_iterations: 20, ..BoostConfig::default() };
//! let out = fit(&data, &learners, &config).unwrap();
//! let x = sim::hvc_covariates(0.5, 0.0, 0);
//! let p = out.model.cdf(&x, 0.0).unwrap();
//! assert!((0.0..=1.0).contains(&p));
//! ```

pub mod basis;
pub mod boost;
pub mod data;
pub mod error;
pub mod learner;
pub mod loss;
pub mod model;
pub mod sim;

pub use basis::{BasisSpec, PenaltySpec, Point};
pub use boost::{
    fit, make_grid, observed_support_grid, oob_risk_curve, select_mstop, BoostConfig, FitOutput, FitTrace, Grid,
    GridKind, GridSpec, IterationRecord, Resampling,
};
pub use data::{Column, ColumnData, Covariates, Dataset, Frame, Value};
pub use error::{CtmError, Result};
pub use learner::{Marginal, TensorLearner};
pub use loss::{Link, LossKind, LossLink};
pub use model::{ConditionalTransform, CtmModel, DiagnosticsReport, FitMeta, TailPolicy, Violation};
