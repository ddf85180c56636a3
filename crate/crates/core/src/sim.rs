//! Heteroscedastic varying-coefficient simulation: data generator, the true
//! conditional distribution, MAD surfaces and seeded replication studies.
//!
//! `X1 ~ U[0, 1]`, `X2 ~ U[-2, 2]`, `Y = (X2 + Z) / (X1 + 0.5)` with `Z`
//! standard normal, so `P(Y <= v | x) = Phi(v (x1 + 0.5) - x2)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{BasisSpec, PenaltySpec};
use crate::boost::{derive_seed, fit, BoostConfig, GridSpec, Resampling};
use crate::data::{Column, Covariates, Dataset, Value};
use crate::error::{CtmError, Result};
use crate::learner::{Marginal, TensorLearner};
use crate::loss::{normal_cdf, normal_quantile, Link, LossKind, LossLink};
use crate::model::CtmModel;

/// Value of every noise covariate when evaluating a fitted model.
pub const NOISE_EVAL_VALUE: f64 = 0.5;
pub const QUANTILE_TAUS: [f64; 3] = [0.5, 0.75, 0.9];

fn uniform_open(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

pub fn noise_name(k: usize) -> String {
    format!("z{k}")
}

/// `n` draws with columns `x1`, `x2` and `p` independent `U[0, 1]` noise columns `z1..zp`.
pub fn simulate_hvc(n: usize, p: usize, seed: u64) -> Result<Dataset> {
    if n < 2 {
        return Err(CtmError::Input(format!("need at least 2 observations, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x1 = Vec::with_capacity(n);
    let mut x2 = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let a: f64 = rng.random();
        let b = -2.0 + 4.0 * rng.random::<f64>();
        let z = normal_quantile(uniform_open(&mut rng));
        x1.push(a);
        x2.push(b);
        y.push((b + z) / (a + 0.5));
    }
    let mut columns = vec![Column::real("x1", x1), Column::real("x2", x2)];
    // noise comes from its own stream so that, for a fixed seed, samples with
    // different p share x1, x2 and y
    for k in 1..=p {
        let mut noise_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, k as u64));
        columns.push(Column::real(noise_name(k), (0..n).map(|_| noise_rng.random()).collect()));
    }
    Dataset::new(y, columns, None)
}

/// `n` responses drawn at the fixed configuration `(x1, x2)`.
pub fn simulate_hvc_at(x1: f64, x2: f64, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| (x2 + normal_quantile(uniform_open(&mut rng))) / (x1 + 0.5))
        .collect()
}

pub fn true_cdf_hvc(x1: f64, x2: f64, v: f64) -> f64 {
    normal_cdf(v * (x1 + 0.5) - x2)
}

pub fn true_quantile_hvc(x1: f64, x2: f64, tau: f64) -> f64 {
    (x2 + normal_quantile(tau)) / (x1 + 0.5)
}

/// `n` equidistant points over `[lo, hi]`, inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n)
            .map(|k| if k == n - 1 { hi } else { lo + (hi - lo) * k as f64 / (n - 1) as f64 })
            .collect(),
    }
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    if s.len() % 2 == 1 {
        s[m]
    } else {
        0.5 * (s[m - 1] + s[m])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MadCell {
    pub x1: f64,
    pub x2: f64,
    pub mad: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MadSurface {
    pub cells: Vec<MadCell>,
    pub min: f64,
    pub median: f64,
    pub max: f64,
}

/// Mean absolute deviation between estimated and true probabilities over `vs`,
/// at every `(x1, x2)` of the cartesian grid. `estimate(x1, x2, vs)` returns the
/// estimated cdf at each point of `vs`.
pub fn mad_surface(
    estimate: impl Fn(f64, f64, &[f64]) -> Result<Vec<f64>>,
    oracle: impl Fn(f64, f64, f64) -> f64,
    x1s: &[f64],
    x2s: &[f64],
    vs: &[f64],
) -> Result<MadSurface> {
    if x1s.is_empty() || x2s.is_empty() || vs.is_empty() {
        return Err(CtmError::Size("MAD grids must be non-empty".into()));
    }
    let mut cells = Vec::with_capacity(x1s.len() * x2s.len());
    for &x1 in x1s {
        for &x2 in x2s {
            let est = estimate(x1, x2, vs)?;
            if est.len() != vs.len() {
                return Err(CtmError::Dimension(format!("{} estimates for {} grid points", est.len(), vs.len())));
            }
            let mad = vs.iter().zip(&est).map(|(v, e)| (oracle(x1, x2, *v) - e).abs()).sum::<f64>() / vs.len() as f64;
            cells.push(MadCell { x1, x2, mad });
        }
    }
    let mads: Vec<f64> = cells.iter().map(|c| c.mad).collect();
    Ok(MadSurface {
        min: mads.iter().copied().fold(f64::INFINITY, f64::min),
        median: median(&mads),
        max: mads.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        cells,
    })
}

/// Covariates at `(x1, x2)` with all `p` noise columns at [`NOISE_EVAL_VALUE`].
pub fn hvc_covariates(x1: f64, x2: f64, p: usize) -> Covariates {
    let mut c = Covariates::new().with("x1", Value::Real(x1)).with("x2", Value::Real(x2));
    for k in 1..=p {
        c.insert(noise_name(k), Value::Real(NOISE_EVAL_VALUE));
    }
    c
}

/// The fitted model's cdf as a [`mad_surface`] estimator.
pub fn model_estimate(model: &CtmModel, p: usize) -> impl Fn(f64, f64, &[f64]) -> Result<Vec<f64>> + '_ {
    move |x1, x2, vs| {
        let t = model.at(&hvc_covariates(x1, x2, p))?;
        vs.iter().map(|v| t.cdf(*v)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimStudyConfig {
    pub observations: usize,
    pub replications: usize,
    pub noise_vars: Vec<usize>,
    pub seed: u64,
    /// Points per axis of the `(x1, x2)` evaluation grid.
    pub eval_points: usize,
    /// Interior knots of every covariate and response B-spline basis.
    pub x_knots: usize,
    pub y_knots: usize,
    pub df_target: f64,
    pub max_iterations: usize,
    pub step_size: f64,
    pub bootstrap_replications: usize,
    /// Random covariate points checked for monotonicity per replication.
    pub monotonicity_points: usize,
}

impl Default for SimStudyConfig {
    fn default() -> Self {
        SimStudyConfig {
            observations: 200,
            replications: 10,
            noise_vars: vec![0],
            seed: 2024,
            eval_points: 10,
            x_knots: 8,
            y_knots: 10,
            df_target: 4.0,
            max_iterations: 2000,
            step_size: 0.1,
            bootstrap_replications: 5,
            monotonicity_points: 50,
        }
    }
}

impl SimStudyConfig {
    /// The full-scale study: 100 replications.
    pub fn full() -> Self {
        SimStudyConfig {
            replications: 100,
            ..Self::default()
        }
    }

    pub fn boost_config(&self, seed: u64) -> BoostConfig {
        BoostConfig {
            max_iterations: self.max_iterations,
            step_size: self.step_size,
            loss: LossLink::new(LossKind::Bin, Link::Probit),
            grid: GridSpec::default(),
            df_target: self.df_target,
            resampling: Resampling::Bootstrap {
                replications: self.bootstrap_replications,
            },
            seed,
        }
    }

    /// One bspline (x) bspline learner per covariate, sharing a response basis
    /// over the range of the default response grid.
    pub fn learners(&self, data: &Dataset, p: usize) -> Result<Vec<TensorLearner>> {
        let grid = GridSpec::default().build(data.response())?;
        let y = Marginal::new(
            BasisSpec::cubic_bspline(self.y_knots, grid.lo(), grid.hi()),
            PenaltySpec::Difference { order: 2 },
        );
        let xm = |lo, hi| {
            Marginal::new(BasisSpec::cubic_bspline(self.x_knots, lo, hi), PenaltySpec::Difference { order: 2 })
        };
        let mut out = vec![
            TensorLearner::new("x1", Some("x1"), xm(0.0, 1.0), y.clone()),
            TensorLearner::new("x2", Some("x2"), xm(-2.0, 2.0), y.clone()),
        ];
        for k in 1..=p {
            let name = noise_name(k);
            out.push(TensorLearner::new(name.clone(), Some(&name), xm(0.0, 1.0), y.clone()));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MadRow {
    pub replication: usize,
    pub p: usize,
    pub min: f64,
    pub median: f64,
    pub max: f64,
    pub mstop: usize,
    pub violations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileRow {
    pub replication: usize,
    pub p: usize,
    pub x1: f64,
    pub x2: f64,
    pub tau: f64,
    pub truth: f64,
    /// `None` when the fitted transformation could not be inverted at this point.
    pub estimate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationFailure {
    pub replication: usize,
    pub p: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StudyOutput {
    pub mad: Vec<MadRow>,
    pub quantiles: Vec<QuantileRow>,
    pub failures: Vec<ReplicationFailure>,
}

impl StudyOutput {
    /// Median over replications of the per-replication median MAD.
    pub fn median_of_medians(&self, p: usize) -> Option<f64> {
        let m: Vec<f64> = self.mad.iter().filter(|r| r.p == p).map(|r| r.median).collect();
        (!m.is_empty()).then(|| median(&m))
    }

    pub fn mad_csv(&self) -> String {
        let mut s = String::from("replication,p,min_mad,median_mad,max_mad,mstop,violations\n");
        for r in &self.mad {
            s.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.replication, r.p, r.min, r.median, r.max, r.mstop, r.violations
            ));
        }
        s
    }

    pub fn quantile_csv(&self) -> String {
        let mut s = String::from("replication,p,x1,x2,tau,true_quantile,ctm_quantile\n");
        for r in &self.quantiles {
            let est = r.estimate.map(|e| e.to_string()).unwrap_or_default();
            s.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.replication, r.p, r.x1, r.x2, r.tau, r.truth, est
            ));
        }
        s
    }
}

/// Seed of replication `r`. It does not depend on the noise level, so every
/// noise level of one replication sees the same `x1`, `x2` and `y`.
pub fn replication_seed(master: u64, r: usize) -> u64 {
    derive_seed(master, r as u64)
}

struct ReplicationResult {
    mad: MadRow,
    quantiles: Vec<QuantileRow>,
}

/// Fits and evaluates one replication.
pub fn run_replication(config: &SimStudyConfig, p: usize, r: usize) -> Result<(CtmModel, MadRow, Vec<QuantileRow>)> {
    let seed = replication_seed(config.seed, r);
    let data = simulate_hvc(config.observations, p, seed)?;
    let learners = config.learners(&data, p)?;
    let out = fit(&data, &learners, &config.boost_config(derive_seed(seed, u64::MAX)))?;
    let model = out.model;

    let x1s = linspace(0.0, 1.0, config.eval_points);
    let x2s = linspace(-2.0, 2.0, config.eval_points);
    let surface = mad_surface(model_estimate(&model, p), true_cdf_hvc, &x1s, &x2s, model.grid().points())?;

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, u64::MAX - 1));
    let sample: Vec<Covariates> = (0..config.monotonicity_points)
        .map(|_| {
            let mut c = Covariates::new()
                .with("x1", Value::Real(rng.random()))
                .with("x2", Value::Real(-2.0 + 4.0 * rng.random::<f64>()));
            for k in 1..=p {
                c.insert(noise_name(k), Value::Real(rng.random()));
            }
            c
        })
        .collect();
    let violations = model.monotonicity_check(&sample, model.grid().points())?;
    let mut violated: Vec<usize> = violations.iter().map(|v| v.sample).collect();
    violated.dedup();

    let mut quantiles = Vec::new();
    for &x1 in &x1s {
        for &x2 in &x2s {
            let t = model.at(&hvc_covariates(x1, x2, p))?;
            for tau in QUANTILE_TAUS {
                quantiles.push(QuantileRow {
                    replication: r,
                    p,
                    x1,
                    x2,
                    tau,
                    truth: true_quantile_hvc(x1, x2, tau),
                    estimate: t.quantile(tau).ok(),
                });
            }
        }
    }
    let row = MadRow {
        replication: r,
        p,
        min: surface.min,
        median: surface.median,
        max: surface.max,
        mstop: out.trace.mstop.unwrap_or(config.max_iterations),
        violations: violated.len(),
    };
    Ok((model, row, quantiles))
}

/// Runs every replication at every noise level. Failed replications are recorded
/// and the study continues.
pub fn replicate_study(config: &SimStudyConfig) -> StudyOutput {
    let jobs: Vec<(usize, usize)> = config
        .noise_vars
        .iter()
        .flat_map(|&p| (0..config.replications).map(move |r| (p, r)))
        .collect();
    let results: Vec<Result<ReplicationResult>> = jobs
        .par_iter()
        .map(|&(p, r)| {
            run_replication(config, p, r).map(|(_, mad, quantiles)| ReplicationResult { mad, quantiles })
        })
        .collect();
    let mut out = StudyOutput::default();
    for ((p, r), res) in jobs.into_iter().zip(results) {
        match res {
            Ok(rr) => {
                out.mad.push(rr.mad);
                out.quantiles.extend(rr.quantiles);
            }
            Err(e) => {
                log::warn!("replication {r} at p = {p} failed: {e}");
                out.failures.push(ReplicationFailure {
                    replication: r,
                    p,
                    message: e.to_string(),
                });
            }
        }
    }
    out
}
