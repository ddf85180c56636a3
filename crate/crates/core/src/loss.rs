//! Link distributions, binary-event losses and the integrated empirical risk.
//!
//! A loss measures how well the probability `F(h)` predicts the binary event
//! `Y <= v`. Integrating it over the response grid and averaging over the
//! weighted sample gives the empirical risk the boosting algorithm minimises.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::erf::erfc;

use crate::error::{CtmError, Result};

/// Probabilities are kept inside `[PROB_FLOOR, 1 - PROB_FLOOR]` before taking
/// logarithms or dividing.
pub const PROB_FLOOR: f64 = 1e-10;

/// Link distribution function `F` with density `f` and quantile `Q = F^-1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    Probit,
    Logit,
    Identity,
}

impl Link {
    /// `F(h)`, clamped to `[0, 1]`.
    pub fn cdf(self, h: f64) -> f64 {
        match self {
            Link::Identity => h.clamp(0.0, 1.0),
            _ => self.prob(h),
        }
    }

    /// `F(h)` as it enters the losses. The identity link is not clamped here so
    /// that `F(h) = h` and `f = 1` stay consistent.
    fn prob(self, h: f64) -> f64 {
        match self {
            Link::Probit => 0.5 * erfc(-h * FRAC_1_SQRT_2),
            Link::Logit => {
                if h >= 0.0 {
                    1.0 / (1.0 + (-h).exp())
                } else {
                    let e = h.exp();
                    e / (1.0 + e)
                }
            }
            Link::Identity => h,
        }
    }

    /// Density `f(h)`; the identity link uses `f = 1` everywhere.
    pub fn density(self, h: f64) -> f64 {
        match self {
            Link::Probit => (-0.5 * h * h).exp() / (2.0 * PI).sqrt(),
            Link::Logit => {
                let e = (-h.abs()).exp();
                e / ((1.0 + e) * (1.0 + e))
            }
            Link::Identity => 1.0,
        }
    }

    /// Quantile function `Q(u)` for `u` in `(0, 1)`.
    pub fn quantile(self, u: f64) -> f64 {
        match self {
            Link::Probit => {
                // one Halley step on top of the library approximation
                let x = standard_normal().inverse_cdf(u);
                if !x.is_finite() {
                    return x;
                }
                let e = normal_cdf(x) - u;
                let r = e * (2.0 * PI).sqrt() * (0.5 * x * x).exp();
                x - r / (1.0 + 0.5 * x * r)
            }
            Link::Logit => (u / (1.0 - u)).ln(),
            Link::Identity => u,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Link::Probit => "probit",
            Link::Logit => "logit",
            Link::Identity => "identity",
        }
    }
}

fn standard_normal() -> Normal {
    Normal::standard()
}

/// Standard normal distribution function.
pub fn normal_cdf(x: f64) -> f64 {
    Link::Probit.prob(x)
}

/// Standard normal quantile function.
pub fn normal_quantile(u: f64) -> f64 {
    Link::Probit.quantile(u)
}

/// Binary-event loss `rho`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Negative binomial log-likelihood.
    Bin,
    /// Half squared error (Brier score).
    Sqe,
    /// Absolute error. Its population minimiser is `h = +-inf`.
    Abe,
}

impl LossKind {
    /// Whether the population minimiser is `Q(P(Y <= v | x))`.
    pub fn is_degenerate(self) -> bool {
        matches!(self, LossKind::Abe)
    }

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Bin => "bin",
            LossKind::Sqe => "sqe",
            LossKind::Abe => "abe",
        }
    }
}

/// A loss paired with its link distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossLink {
    pub kind: LossKind,
    pub link: Link,
}

impl LossLink {
    pub fn new(kind: LossKind, link: Link) -> Self {
        LossLink { kind, link }
    }

    /// `rho(indicator, h)`.
    pub fn loss(&self, indicator: bool, h: f64) -> f64 {
        let i = if indicator { 1.0 } else { 0.0 };
        let p = self.link.prob(h);
        match self.kind {
            LossKind::Bin => {
                let p = p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
                if indicator {
                    -p.ln()
                } else {
                    -(1.0 - p).ln()
                }
            }
            LossKind::Sqe => 0.5 * (i - p) * (i - p),
            LossKind::Abe => (i - p).abs(),
        }
    }

    /// `-d rho / d h` at `h`.
    pub fn negative_gradient(&self, indicator: bool, h: f64) -> f64 {
        self.loss_and_gradient(indicator, h).1
    }

    /// Loss value and negative gradient sharing one evaluation of `F` and `f`.
    #[inline]
    pub fn loss_and_gradient(&self, indicator: bool, h: f64) -> (f64, f64) {
        let i = if indicator { 1.0 } else { 0.0 };
        let p = self.link.prob(h);
        let f = self.link.density(h);
        match self.kind {
            LossKind::Bin => {
                let p = p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
                if indicator {
                    (-p.ln(), f / p)
                } else {
                    (-(1.0 - p).ln(), -f / (1.0 - p))
                }
            }
            LossKind::Sqe => (0.5 * (i - p) * (i - p), (i - p) * f),
            LossKind::Abe => ((i - p).abs(), (2.0 * i - 1.0) * f),
        }
    }
}

/// Weighted integrated empirical risk
/// `n^-1 sum_i sum_k w_i rho(Y_i <= v_k, h[k, i])`.
///
/// `predictions` is `grid.len() x responses.len()`: one column per observation.
pub fn empirical_risk(
    predictions: &DMatrix<f64>,
    responses: &[f64],
    weights: &[f64],
    grid: &[f64],
    loss: LossLink,
) -> Result<f64> {
    let (n, nobs) = predictions.shape();
    if n != grid.len() || nobs != responses.len() || nobs != weights.len() {
        return Err(CtmError::Dimension(format!(
            "prediction lattice is {n}x{nobs}, grid has {} points, data has {} responses and {} weights",
            grid.len(),
            responses.len(),
            weights.len()
        )));
    }
    let mut total = 0.0;
    for (i, (&y, &w)) in responses.iter().zip(weights).enumerate() {
        if w == 0.0 {
            continue;
        }
        let col = predictions.column(i);
        let s: f64 = grid
            .iter()
            .zip(col.iter())
            .map(|(&v, &h)| loss.loss(y <= v, h))
            .sum();
        total += w * s;
    }
    Ok(total / n as f64)
}
