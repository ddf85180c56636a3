//! Component-wise boosting of conditional transformation models.
//!
//! Each iteration computes the negative gradient of the integrated loss on the
//! lattice of grid points x observations, fits every candidate learner to it,
//! and moves the coefficients of the best-fitting learner a step `nu` towards
//! its fit. The number of iterations is chosen by resampling: bootstrap
//! (multinomial weights, out-of-bootstrap risk) or k-fold cross-validation.

use std::sync::Arc;

use log::warn;
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{CtmError, Result};
use crate::learner::{calibrate_lambda, LearnerDesign, LearnerWork, TensorLearner, DEFAULT_DF};
use crate::loss::{Link, LossKind, LossLink};
use crate::model::{CtmModel, FitMeta};

pub const DEFAULT_MARGIN: f64 = 0.05;
pub const DEFAULT_MAX_GRID: usize = 100;
pub const DEFAULT_STEP_SIZE: f64 = 0.1;
pub const DEFAULT_MAX_ITERATIONS: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridKind {
    Equidistant,
    ObservedSupport,
}

/// Strictly increasing response grid `v_1 < ... < v_n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    points: Vec<f64>,
    kind: GridKind,
}

impl Grid {
    pub fn new(points: Vec<f64>, kind: GridKind) -> Result<Self> {
        if points.len() < 2 {
            return Err(CtmError::Size(format!(
                "a grid needs at least 2 points, got {}",
                points.len()
            )));
        }
        if points.iter().any(|v| !v.is_finite()) || points.windows(2).any(|w| w[0] >= w[1]) {
            return Err(CtmError::Input("grid points must be finite and strictly increasing".into()));
        }
        Ok(Grid { points, kind })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn kind(&self) -> GridKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn lo(&self) -> f64 {
        self.points[0]
    }

    pub fn hi(&self) -> f64 {
        self.points[self.points.len() - 1]
    }
}

fn range_of(y: &[f64]) -> Result<(f64, f64)> {
    let lo = y.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(lo.is_finite() && hi.is_finite()) || hi <= lo {
        return Err(CtmError::Degenerate(
            "responses must take at least two distinct finite values".into(),
        ));
    }
    Ok((lo, hi))
}

/// Equidistant grid from `min(y) - margin * range(y)` to `max(y)`.
pub fn make_grid(y: &[f64], n: usize, margin: f64) -> Result<Grid> {
    if n < 2 {
        return Err(CtmError::Size(format!("a grid needs at least 2 points, got {n}")));
    }
    let (lo, hi) = range_of(y)?;
    if !(margin.is_finite() && margin > 0.0) {
        return Err(CtmError::Margin(margin));
    }
    let start = lo - margin * (hi - lo);
    let step = (hi - start) / (n - 1) as f64;
    let mut points: Vec<f64> = (0..n).map(|k| start + step * k as f64).collect();
    points[n - 1] = hi;
    Grid::new(points, GridKind::Equidistant)
}

/// Sorted distinct observed responses (counting measure on the support).
pub fn observed_support_grid(y: &[f64]) -> Result<Grid> {
    range_of(y)?;
    let mut points = y.to_vec();
    points.sort_by(f64::total_cmp);
    points.dedup();
    Grid::new(points, GridKind::ObservedSupport)
}

/// How the response grid is built from the training responses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GridSpec {
    Equidistant {
        /// Defaults to `min(N, 100)`.
        #[serde(default)]
        points: Option<usize>,
        #[serde(default = "default_margin")]
        margin: f64,
    },
    ObservedSupport,
}

fn default_margin() -> f64 {
    DEFAULT_MARGIN
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec::Equidistant {
            points: None,
            margin: DEFAULT_MARGIN,
        }
    }
}

impl GridSpec {
    pub fn build(&self, y: &[f64]) -> Result<Grid> {
        match self {
            GridSpec::Equidistant { points, margin } => {
                let n = points.unwrap_or_else(|| y.len().min(DEFAULT_MAX_GRID));
                make_grid(y, n, *margin)
            }
            GridSpec::ObservedSupport => observed_support_grid(y),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Resampling {
    #[default]
    None,
    Bootstrap {
        replications: usize,
    },
    Kfold {
        folds: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostConfig {
    /// Number of boosting iterations `M`, or the largest candidate when resampling.
    pub max_iterations: usize,
    pub step_size: f64,
    pub loss: LossLink,
    pub grid: GridSpec,
    /// Degrees of freedom of learners that do not set their own.
    pub df_target: f64,
    pub resampling: Resampling,
    pub seed: u64,
}

impl Default for BoostConfig {
    fn default() -> Self {
        BoostConfig {
            max_iterations: DEFAULT_MAX_ITERATIONS,
            step_size: DEFAULT_STEP_SIZE,
            loss: LossLink::new(LossKind::Bin, Link::Probit),
            grid: GridSpec::default(),
            df_target: DEFAULT_DF,
            resampling: Resampling::None,
            seed: 1,
        }
    }
}

impl BoostConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size < 1.0) {
            return Err(CtmError::Input(format!(
                "step size must lie in (0, 1), got {}",
                self.step_size
            )));
        }
        if !(self.df_target.is_finite() && self.df_target > 0.0) {
            return Err(CtmError::Input(format!("df target must be positive, got {}", self.df_target)));
        }
        match self.resampling {
            Resampling::Bootstrap { replications } if replications < 2 => Err(CtmError::Input(
                "bootstrap resampling needs at least 2 replications".into(),
            )),
            Resampling::Kfold { folds } if folds < 2 => {
                Err(CtmError::Input("k-fold resampling needs at least 2 folds".into()))
            }
            _ => Ok(()),
        }
    }
}

/// One row of the fit trace: the state after `iteration` updates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Learner updated to reach this iteration; `None` at iteration 0.
    pub selected: Option<usize>,
    /// In-sample empirical risk.
    pub risk: f64,
    /// Replication-mean out-of-sample risk, when resampling was used.
    pub oob_risk: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitTrace {
    pub records: Vec<IterationRecord>,
    /// Iteration selected by resampling.
    pub mstop: Option<usize>,
    /// Per-replication out-of-sample risk curves.
    pub oob_curves: Vec<Vec<f64>>,
}

impl FitTrace {
    /// CSV with header `iteration,selected,risk,oob_risk`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("iteration,selected,risk,oob_risk\n");
        for r in &self.records {
            let sel = r.selected.map(|j| j.to_string()).unwrap_or_default();
            let oob = r.oob_risk.map(|v| v.to_string()).unwrap_or_default();
            s.push_str(&format!("{},{},{},{}\n", r.iteration, sel, r.risk, oob));
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct FitOutput {
    pub model: CtmModel,
    pub trace: FitTrace,
}

/// Mixes `stream` into `master` (SplitMix64 finaliser) for independent seeded streams.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut z = master ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Learner designs evaluated once per dataset and grid, shared by every weighting.
pub(crate) fn build_designs(
    data: &Dataset,
    learners: &[TensorLearner],
    grid: &Grid,
) -> Result<Vec<Arc<LearnerDesign>>> {
    if learners.is_empty() {
        return Err(CtmError::Input("at least one learner is required".into()));
    }
    learners
        .iter()
        .map(|l| LearnerDesign::new(l, data.frame(), grid.points()).map(Arc::new))
        .collect()
}

fn calibrated_works(
    designs: &[Arc<LearnerDesign>],
    learners: &[TensorLearner],
    weights: &[f64],
    df_default: f64,
) -> Result<Vec<LearnerWork>> {
    designs
        .iter()
        .zip(learners)
        .map(|(d, l)| {
            let mut work = LearnerWork::new(Arc::clone(d), weights)?;
            let lambda = calibrate_lambda(&work, l.df_target.unwrap_or(df_default))?;
            work.set_lambda(lambda)?;
            Ok(work)
        })
        .collect()
}

struct RunOutput {
    risks: Vec<f64>,
    eval_risks: Vec<f64>,
    selected: Vec<Option<usize>>,
    snapshot: Option<Vec<Vec<f64>>>,
}

/// Mutable state of one boosting run.
pub(crate) struct Booster<'a> {
    works: Vec<LearnerWork>,
    loss: LossLink,
    step: f64,
    grid: &'a [f64],
    response: &'a [f64],
    weights: &'a [f64],
    h: DMatrix<f64>,
    u: DMatrix<f64>,
    gammas: Vec<Vec<f64>>,
}

impl<'a> Booster<'a> {
    pub(crate) fn new(
        works: Vec<LearnerWork>,
        loss: LossLink,
        step: f64,
        grid: &'a [f64],
        response: &'a [f64],
        weights: &'a [f64],
    ) -> Self {
        let (n, nobs) = (grid.len(), response.len());
        let gammas = works
            .iter()
            .map(|w| vec![0.0; w.design().kx() * w.design().k0()])
            .collect();
        Booster {
            works,
            loss,
            step,
            grid,
            response,
            weights,
            h: DMatrix::zeros(n, nobs),
            u: DMatrix::zeros(n, nobs),
            gammas,
        }
    }

    /// Risk under the fitting weights and under `eval_weights` at the current
    /// lattice, refreshing the negative gradient on the way.
    fn evaluate(&mut self, eval_weights: Option<&[f64]>, iteration: usize) -> Result<(f64, f64)> {
        let n = self.grid.len() as f64;
        let (mut fit_risk, mut eval_risk) = (0.0, 0.0);
        for i in 0..self.response.len() {
            let w = self.weights[i];
            let we = eval_weights.map_or(0.0, |e| e[i]);
            let mut ucol = self.u.column_mut(i);
            if w == 0.0 && we == 0.0 {
                ucol.fill(0.0);
                continue;
            }
            let y = self.response[i];
            let hcol = self.h.column(i);
            let mut s = 0.0;
            for (k, &v) in self.grid.iter().enumerate() {
                let (l, g) = self.loss.loss_and_gradient(y <= v, hcol[k]);
                if !g.is_finite() {
                    return Err(CtmError::NonFinite { iteration });
                }
                s += l;
                ucol[k] = if w == 0.0 { 0.0 } else { g };
            }
            fit_risk += w * s;
            eval_risk += we * s;
        }
        Ok((fit_risk / n, eval_risk / n))
    }

    /// Fits every learner to the current gradient and updates the best one.
    fn step(&mut self) -> Result<usize> {
        let weighted_ss: f64 = self
            .weights
            .iter()
            .enumerate()
            .filter(|(_, w)| **w != 0.0)
            .map(|(i, w)| w * self.u.column(i).norm_squared())
            .sum();
        let u = &self.u;
        let fits: Vec<_> = self
            .works
            .par_iter()
            .map(|w| {
                w.ridge_fit(u)
                    .map(|fit| (w.rss_from_fit(weighted_ss, &fit), fit))
            })
            .collect::<Result<_>>()?;
        let mut best = 0;
        for (j, (rss, _)) in fits.iter().enumerate() {
            if *rss < fits[best].0 {
                best = j;
            }
        }
        let beta = &fits[best].1.beta;
        for (g, b) in self.gammas[best].iter_mut().zip(beta.iter()) {
            *g += self.step * b;
        }
        self.works[best]
            .design()
            .add_to_lattice(&mut self.h, beta.as_slice(), self.step);
        Ok(best)
    }

    fn run(&mut self, iterations: usize, eval_weights: Option<&[f64]>, snapshot_at: Option<usize>) -> Result<RunOutput> {
        let mut out = RunOutput {
            risks: Vec::with_capacity(iterations + 1),
            eval_risks: Vec::with_capacity(iterations + 1),
            selected: Vec::with_capacity(iterations + 1),
            snapshot: None,
        };
        out.selected.push(None);
        for m in 0..=iterations {
            let (r, e) = self.evaluate(eval_weights, m + 1)?;
            out.risks.push(r);
            out.eval_risks.push(e);
            if snapshot_at == Some(m) {
                out.snapshot = Some(self.gammas.clone());
            }
            if m == iterations {
                break;
            }
            out.selected.push(Some(self.step()?));
        }
        Ok(out)
    }

    /// The lattice recomputed from scratch from the accumulated coefficients.
    #[cfg(test)]
    fn recomputed_lattice(&self) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(self.h.nrows(), self.h.ncols());
        for (w, g) in self.works.iter().zip(&self.gammas) {
            w.design().add_to_lattice(&mut h, g, 1.0);
        }
        h
    }
}

/// Fits the model.
///
/// Without resampling this runs exactly `max_iterations` iterations. With
/// resampling the stopping iteration is selected from the out-of-sample risk
/// curves; the full-data fit is still traced up to `max_iterations` but the
/// returned coefficients are those at the selected iteration.
pub fn fit(data: &Dataset, learners: &[TensorLearner], config: &BoostConfig) -> Result<FitOutput> {
    config.validate()?;
    if config.loss.kind.is_degenerate() {
        warn!(
            "the absolute-error loss has a degenerate population minimiser (h = +-inf); estimates rely entirely on early stopping"
        );
    }
    let grid = config.grid.build(data.response())?;
    let designs = build_designs(data, learners, &grid)?;

    let (curves, mstop) = if config.resampling == Resampling::None {
        (Vec::new(), None)
    } else {
        let curves = risk_curves(data, learners, config, &grid, &designs)?;
        let mstop = select_mstop(&curves)?;
        (curves, Some(mstop))
    };

    let works = calibrated_works(&designs, learners, data.weights(), config.df_target)?;
    let lambdas: Vec<f64> = works.iter().map(|w| w.lambda()).collect();
    let mut booster = Booster::new(
        works,
        config.loss,
        config.step_size,
        grid.points(),
        data.response(),
        data.weights(),
    );
    let run = booster.run(config.max_iterations, None, mstop)?;
    let final_gammas = run.snapshot.unwrap_or_else(|| booster.gammas.clone());
    let used = mstop.unwrap_or(config.max_iterations);

    let fitted: Vec<TensorLearner> = learners
        .iter()
        .zip(final_gammas)
        .zip(lambdas)
        .map(|((l, gamma), lambda)| {
            let mut l = l.clone();
            l.df_target = Some(l.df_target.unwrap_or(config.df_target));
            l.lambda = lambda;
            l.gamma = gamma;
            l
        })
        .collect();

    let oob_mean: Option<Vec<f64>> = if curves.is_empty() {
        None
    } else {
        Some(mean_curve(&curves))
    };
    let records = (0..=config.max_iterations)
        .map(|m| IterationRecord {
            iteration: m,
            selected: run.selected[m],
            risk: run.risks[m],
            oob_risk: oob_mean.as_ref().map(|c| c[m]),
        })
        .collect();
    let meta = FitMeta {
        observations: data.len(),
        iterations: used,
        initial_risk: run.risks[0],
        final_risk: run.risks[used],
    };
    let model = CtmModel::new(config.loss, grid, fitted, config.clone(), meta)?;
    Ok(FitOutput {
        model,
        trace: FitTrace {
            records,
            mstop,
            oob_curves: curves,
        },
    })
}

/// Out-of-sample risk at iterations `0..=M` for every resampling replication
/// (one row per replication). Replications without held-out observations are
/// skipped.
pub fn oob_risk_curve(data: &Dataset, learners: &[TensorLearner], config: &BoostConfig) -> Result<Vec<Vec<f64>>> {
    config.validate()?;
    if config.resampling == Resampling::None {
        return Err(CtmError::Input("risk curves need a resampling plan".into()));
    }
    let grid = config.grid.build(data.response())?;
    let designs = build_designs(data, learners, &grid)?;
    risk_curves(data, learners, config, &grid, &designs)
}

/// Pairs of (fitting weights, evaluation weights), one per replication.
fn resampling_weights(base: &[f64], plan: Resampling, seed: u64) -> Vec<(Vec<f64>, Vec<f64>)> {
    let n = base.len();
    match plan {
        Resampling::None => Vec::new(),
        Resampling::Bootstrap { replications } => (0..replications)
            .map(|b| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, b as u64));
                let mut counts = vec![0u32; n];
                for _ in 0..n {
                    counts[rng.random_range(0..n)] += 1;
                }
                let fit = base.iter().zip(&counts).map(|(w, c)| w * *c as f64).collect();
                let eval = base
                    .iter()
                    .zip(&counts)
                    .map(|(w, c)| if *c == 0 { *w } else { 0.0 })
                    .collect();
                (fit, eval)
            })
            .collect(),
        Resampling::Kfold { folds } => {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, u64::MAX));
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            let mut fold_of = vec![0usize; n];
            for (pos, &i) in order.iter().enumerate() {
                fold_of[i] = pos % folds;
            }
            (0..folds)
                .map(|f| {
                    let fit = base
                        .iter()
                        .zip(&fold_of)
                        .map(|(w, k)| if *k == f { 0.0 } else { *w })
                        .collect();
                    let eval = base
                        .iter()
                        .zip(&fold_of)
                        .map(|(w, k)| if *k == f { *w } else { 0.0 })
                        .collect();
                    (fit, eval)
                })
                .collect()
        }
    }
}

fn risk_curves(
    data: &Dataset,
    learners: &[TensorLearner],
    config: &BoostConfig,
    grid: &Grid,
    designs: &[Arc<LearnerDesign>],
) -> Result<Vec<Vec<f64>>> {
    let plans = resampling_weights(data.weights(), config.resampling, config.seed);
    let results: Vec<Result<Option<Vec<f64>>>> = plans
        .par_iter()
        .enumerate()
        .map(|(b, (fit_w, eval_w))| {
            if eval_w.iter().all(|w| *w == 0.0) {
                warn!("resampling replication {b} has no held-out observations; skipped");
                return Ok(None);
            }
            let works = calibrated_works(designs, learners, fit_w, config.df_target)?;
            let mut booster = Booster::new(
                works,
                config.loss,
                config.step_size,
                grid.points(),
                data.response(),
                fit_w,
            );
            let run = booster.run(config.max_iterations, Some(eval_w), None)?;
            Ok(Some(run.eval_risks))
        })
        .collect();
    let mut curves = Vec::new();
    for r in results {
        if let Some(c) = r? {
            curves.push(c);
        }
    }
    if curves.is_empty() {
        return Err(CtmError::Input("no resampling replication had held-out observations".into()));
    }
    Ok(curves)
}

fn mean_curve(curves: &[Vec<f64>]) -> Vec<f64> {
    let len = curves.iter().map(Vec::len).min().unwrap_or(0);
    (0..len)
        .map(|m| curves.iter().map(|c| c[m]).sum::<f64>() / curves.len() as f64)
        .collect()
}

/// Iteration minimising the replication-mean risk; ties go to the smallest iteration.
pub fn select_mstop(curves: &[Vec<f64>]) -> Result<usize> {
    if curves.is_empty() || curves.iter().any(Vec::is_empty) {
        return Err(CtmError::Input("at least one complete risk curve is required".into()));
    }
    let mean = mean_curve(curves);
    let mut best = 0;
    for (m, r) in mean.iter().enumerate() {
        if *r < mean[best] {
            best = m;
        }
    }
    Ok(best)
}
