//! A fitted conditional transformation model and everything evaluated from it:
//! conditional distribution functions, quantiles, monotonicity checks,
//! residual diagnostics, model-based bootstrap and the JSON model document.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::basis::{BasisSpec, Point};
use crate::boost::{BoostConfig, Grid};
use crate::data::{Covariates, Dataset};
use crate::error::{CtmError, Result};
use crate::learner::TensorLearner;
use crate::loss::LossLink;

pub const DOCUMENT_FORMAT: &str = "ctm-model";
pub const DOCUMENT_VERSION: u32 = 1;
/// Points of the refined grid searched by [`ConditionalTransform::quantile`].
pub const QUANTILE_REFINEMENT: usize = 512;
pub const MONOTONE_SLACK: f64 = 1e-10;
const BISECTION_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitMeta {
    pub observations: usize,
    /// Boosting iterations the coefficients correspond to.
    pub iterations: usize,
    pub initial_risk: f64,
    pub final_risk: f64,
}

/// A fitted model: `P(Y <= v | x) = F(sum_j h_j(v | x))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CtmModel {
    loss: LossLink,
    grid: Grid,
    learners: Vec<TensorLearner>,
    config: BoostConfig,
    meta: FitMeta,
    /// Name of the response column in the training data, when known.
    #[serde(default)]
    response: Option<String>,
}

/// A pair of adjacent grid points where the transformation decreases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    /// Index of the covariate configuration in the checked sample.
    pub sample: usize,
    pub lower: f64,
    pub upper: f64,
    pub h_lower: f64,
    pub h_upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    /// `h(Y_i | X_i)`, which should be distributed as `F` under a good fit.
    pub residuals: Vec<f64>,
    /// Two-sided Kolmogorov-Smirnov distance between the residuals and `F`.
    pub ks_statistic: f64,
    /// Spearman correlation of residuals and responses; `None` when either is constant.
    pub rank_correlation: Option<f64>,
    pub violations: Vec<Violation>,
}

/// What model-based bootstrap does with a uniform draw outside the attained cdf range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailPolicy {
    #[default]
    Error,
    /// Use the nearest grid end point.
    Clamp,
}

#[derive(Serialize)]
struct DocumentOut<'a> {
    format: &'a str,
    version: u32,
    model: &'a CtmModel,
}

#[derive(Deserialize)]
struct DocumentHeader {
    format: String,
    version: u32,
}

#[derive(Deserialize)]
struct DocumentIn {
    model: CtmModel,
}

impl CtmModel {
    pub fn new(
        loss: LossLink,
        grid: Grid,
        learners: Vec<TensorLearner>,
        config: BoostConfig,
        meta: FitMeta,
    ) -> Result<Self> {
        if learners.is_empty() {
            return Err(CtmError::Input("a model needs at least one learner".into()));
        }
        for l in &learners {
            l.validate()?;
        }
        Ok(CtmModel {
            loss,
            grid,
            learners,
            config,
            meta,
            response: None,
        })
    }

    pub fn with_response_name(mut self, name: impl Into<String>) -> Self {
        self.response = Some(name.into());
        self
    }

    pub fn response_name(&self) -> Option<&str> {
        self.response.as_deref()
    }

    pub fn loss(&self) -> LossLink {
        self.loss
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn learners(&self) -> &[TensorLearner] {
        &self.learners
    }

    pub fn config(&self) -> &BoostConfig {
        &self.config
    }

    pub fn meta(&self) -> &FitMeta {
        &self.meta
    }

    /// Covariate names any learner depends on.
    pub fn covariates(&self) -> Vec<&str> {
        let mut names: Vec<&str> = self.learners.iter().filter_map(|l| l.covariate.as_deref()).collect();
        names.sort_unstable();
        names.dedup();
        names
    }

    /// The transformation `v -> h(v | x)` with `x` fixed.
    pub fn at(&self, x: &Covariates) -> Result<ConditionalTransform> {
        let mut parts: Vec<(BasisSpec, Vec<f64>)> = Vec::new();
        for l in &self.learners {
            let bx = match &l.covariate {
                None => l.covariate_row(Point::Real(0.0))?,
                Some(name) => {
                    let value = x
                        .get(name)
                        .ok_or_else(|| CtmError::Input(format!("missing covariate '{name}'")))?;
                    l.covariate_row(value.as_point())?
                }
            };
            let k0 = l.k0();
            let mut c = vec![0.0; k0];
            for (k1, a) in bx.iter().enumerate() {
                if *a == 0.0 {
                    continue;
                }
                for (ck, g) in c.iter_mut().zip(&l.gamma[k1 * k0..(k1 + 1) * k0]) {
                    *ck += a * g;
                }
            }
            // learners sharing a response basis collapse into one coefficient vector
            match parts.iter_mut().find(|(b, _)| *b == l.y.basis) {
                Some((_, acc)) => acc.iter_mut().zip(&c).for_each(|(a, b)| *a += b),
                None => parts.push((l.y.basis.clone(), c)),
            }
        }
        Ok(ConditionalTransform {
            parts,
            loss: self.loss,
            lo: self.grid.lo(),
            hi: self.grid.hi(),
        })
    }

    /// `h(v | x)`.
    pub fn transform(&self, x: &Covariates, v: f64) -> Result<f64> {
        self.at(x)?.transform(v)
    }

    /// `P(Y <= v | x)`.
    pub fn cdf(&self, x: &Covariates, v: f64) -> Result<f64> {
        self.at(x)?.cdf(v)
    }

    pub fn quantile(&self, x: &Covariates, tau: f64) -> Result<f64> {
        self.at(x)?.quantile(tau)
    }

    /// Adjacent grid pairs with `h(v_{k+1} | x) < h(v_k | x) - 1e-10`, for every `x` in `sample`.
    pub fn monotonicity_check(&self, sample: &[Covariates], grid: &[f64]) -> Result<Vec<Violation>> {
        let mut out = Vec::new();
        for (s, x) in sample.iter().enumerate() {
            let t = self.at(x)?;
            let h = grid.iter().map(|v| t.transform(*v)).collect::<Result<Vec<_>>>()?;
            for k in 1..grid.len() {
                if h[k] < h[k - 1] - MONOTONE_SLACK {
                    out.push(Violation {
                        sample: s,
                        lower: grid[k - 1],
                        upper: grid[k],
                        h_lower: h[k - 1],
                        h_upper: h[k],
                    });
                }
            }
        }
        Ok(out)
    }

    /// Residuals, KS distance to `F`, residual/response rank correlation and
    /// the monotonicity violations on the training grid at every row of `data`.
    pub fn diagnostics(&self, data: &Dataset) -> Result<DiagnosticsReport> {
        let rows: Vec<Covariates> = (0..data.len()).map(|i| data.frame().row(i)).collect();
        let residuals = rows
            .iter()
            .zip(data.response())
            .map(|(x, y)| self.transform(x, *y))
            .collect::<Result<Vec<_>>>()?;
        let link = self.loss.link;
        let ks_statistic = ks_statistic(&residuals, |r| link.cdf(r));
        let rank_correlation = spearman(&residuals, data.response());
        let violations = self.monotonicity_check(&rows, self.grid.points())?;
        Ok(DiagnosticsReport {
            residuals,
            ks_statistic,
            rank_correlation,
            violations,
        })
    }

    /// Draws `Y_i = Q_model(U_i | x_i)` with `U_i` uniform, one per row of `covariates`.
    pub fn model_bootstrap(&self, covariates: &[Covariates], seed: u64, tails: TailPolicy) -> Result<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        covariates
            .iter()
            .map(|x| {
                let mut u: f64 = rng.random();
                while u == 0.0 {
                    u = rng.random();
                }
                let t = self.at(x)?;
                match (t.quantile(u), tails) {
                    (Err(CtmError::Tail { lo, .. }), TailPolicy::Clamp) => {
                        Ok(if u < lo { self.grid.lo() } else { self.grid.hi() })
                    }
                    (r, _) => r,
                }
            })
            .collect()
    }

    /// Versioned JSON document; every coefficient round-trips exactly.
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(&DocumentOut {
            format: DOCUMENT_FORMAT,
            version: DOCUMENT_VERSION,
            model: self,
        })
        .map_err(|e| CtmError::Parse(e.to_string()))
    }

    pub fn from_json(doc: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(doc).map_err(|e| CtmError::Parse(e.to_string()))?;
        let header: DocumentHeader =
            serde_json::from_value(value.clone()).map_err(|e| CtmError::Parse(e.to_string()))?;
        if header.format != DOCUMENT_FORMAT {
            return Err(CtmError::Parse(format!("not a model document (format '{}')", header.format)));
        }
        if header.version != DOCUMENT_VERSION {
            return Err(CtmError::Version {
                found: header.version,
                expected: DOCUMENT_VERSION,
            });
        }
        let body: DocumentIn = serde_json::from_value(value).map_err(|e| CtmError::Parse(e.to_string()))?;
        let m = body.model;
        let response = m.response;
        let mut model = CtmModel::new(m.loss, m.grid, m.learners, m.config, m.meta)?;
        model.response = response;
        Ok(model)
    }
}

/// `h(. | x)` for one fixed covariate configuration.
#[derive(Debug, Clone)]
pub struct ConditionalTransform {
    parts: Vec<(BasisSpec, Vec<f64>)>,
    loss: LossLink,
    lo: f64,
    hi: f64,
}

impl ConditionalTransform {
    pub fn transform(&self, v: f64) -> Result<f64> {
        let mut s = 0.0;
        for (basis, c) in &self.parts {
            let b = basis.eval(Point::Real(v))?;
            s += b.iter().zip(c).map(|(a, g)| a * g).sum::<f64>();
        }
        Ok(s)
    }

    pub fn cdf(&self, v: f64) -> Result<f64> {
        Ok(self.loss.link.cdf(self.transform(v)?))
    }

    /// Smallest `v` with `cdf(v) >= tau`, searched on a 512-point refinement of the
    /// training grid range and polished by bisection.
    pub fn quantile(&self, tau: f64) -> Result<f64> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(CtmError::Input(format!("probability {tau} must lie in (0, 1)")));
        }
        let n = QUANTILE_REFINEMENT;
        let step = (self.hi - self.lo) / (n - 1) as f64;
        let vs: Vec<f64> = (0..n)
            .map(|k| if k == n - 1 { self.hi } else { self.lo + step * k as f64 })
            .collect();
        let h = vs.iter().map(|v| self.transform(*v)).collect::<Result<Vec<_>>>()?;
        for k in 1..n {
            if h[k] < h[k - 1] - MONOTONE_SLACK {
                return Err(CtmError::Monotonicity {
                    lower: vs[k - 1],
                    upper: vs[k],
                });
            }
        }
        let link = self.loss.link;
        let (clo, chi) = (link.cdf(h[0]), link.cdf(h[n - 1]));
        if tau < clo || tau > chi {
            return Err(CtmError::Tail { tau, lo: clo, hi: chi });
        }
        let k = (0..n).find(|&k| link.cdf(h[k]) >= tau).unwrap_or(n - 1);
        if k == 0 {
            return Ok(vs[0]);
        }
        let (mut a, mut b) = (vs[k - 1], vs[k]);
        let tol = BISECTION_TOL * (self.hi - self.lo);
        while b - a > tol {
            let mid = 0.5 * (a + b);
            if self.cdf(mid)? >= tau {
                b = mid;
            } else {
                a = mid;
            }
        }
        Ok(b)
    }
}

/// Two-sided one-sample Kolmogorov-Smirnov statistic of `sample` against `cdf`.
pub fn ks_statistic(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    if sample.is_empty() {
        return 0.0;
    }
    let mut s = sample.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter().enumerate().fold(0.0, |d, (i, x)| {
        let f = cdf(*x);
        d.max((i + 1) as f64 / n - f).max(f - i as f64 / n)
    })
}

/// Ranks starting at 1, ties sharing their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|a, b| x[*a].total_cmp(&x[*b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation; `None` when either input has no rank variation.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}
