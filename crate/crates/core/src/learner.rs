//! Tensor-product base-learners.
//!
//! A learner is the penalised least-squares fit of the gradient lattice
//! `U` (grid points x observations) onto the tensor product of a covariate
//! basis `b_x` and a response basis `b_0`. The `nN x K_x K_0` expanded design is
//! never formed: the normal equations are assembled from the marginal designs
//!
//! ```text
//! (A_x (x) A_0 + lambda (P_x (x) I + I (x) P_0)) beta = vec(B_0^T U diag(w) B_x)
//! ```
//!
//! with `A_x = B_x^T diag(w) B_x` and `A_0 = B_0^T B_0`. Coefficients are stored
//! covariate-index major: entry `(k_x, k_0)` sits at `k_x * K_0 + k_0`, which is
//! the column-major layout of the `K_0 x K_x` coefficient matrix.

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::basis::{evaluate_basis, penalty_matrix, BasisSpec, EvaluatedBasis, PenaltySpec, Point, Points};
use crate::data::Frame;
use crate::error::{CtmError, Result};

/// Default degrees of freedom of every base-learner.
pub const DEFAULT_DF: f64 = 4.0;

/// Bracket of `log10(lambda)` searched during calibration.
const LOG10_LAMBDA_RANGE: (f64, f64) = (-20.0, 20.0);

/// Eigenvalues of the reduced design closer than this to one belong to the
/// penalty null space.
const NULL_SPACE_TOL: f64 = 1e-9;

/// Eigenvalues below this are treated as exact zeros (design rank deficiency).
const RANK_TOL: f64 = 1e-12;

/// Calibration accepts targets within this distance of the attainable range.
pub const DF_TOLERANCE: f64 = 1e-6;

/// One marginal: a basis with its roughness penalty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Marginal {
    pub basis: BasisSpec,
    #[serde(default)]
    pub penalty: PenaltySpec,
}

impl Marginal {
    pub fn new(basis: BasisSpec, penalty: PenaltySpec) -> Self {
        Marginal { basis, penalty }
    }

    pub fn intercept() -> Self {
        Marginal::new(BasisSpec::Intercept, PenaltySpec::None)
    }
}

/// One partial transformation function `h_j(v | x) = (b_x(x) (x) b_0(v))^T gamma`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorLearner {
    pub label: String,
    /// Column the covariate basis is evaluated on; `None` for a learner that
    /// does not depend on `x` (its covariate basis must be `intercept`).
    pub covariate: Option<String>,
    pub x: Marginal,
    pub y: Marginal,
    /// Overrides the fit-wide degrees of freedom when set.
    #[serde(default)]
    pub df_target: Option<f64>,
    #[serde(default)]
    pub lambda: f64,
    #[serde(default)]
    pub gamma: Vec<f64>,
}

impl TensorLearner {
    pub fn new(label: impl Into<String>, covariate: Option<&str>, x: Marginal, y: Marginal) -> Self {
        let k = x.basis.num_functions() * y.basis.num_functions();
        TensorLearner {
            label: label.into(),
            covariate: covariate.map(str::to_string),
            x,
            y,
            df_target: None,
            lambda: 0.0,
            gamma: vec![0.0; k],
        }
    }

    pub fn with_df(mut self, df: f64) -> Self {
        self.df_target = Some(df);
        self
    }

    pub fn kx(&self) -> usize {
        self.x.basis.num_functions()
    }

    pub fn k0(&self) -> usize {
        self.y.basis.num_functions()
    }

    pub fn num_coefficients(&self) -> usize {
        self.kx() * self.k0()
    }

    pub fn validate(&self) -> Result<()> {
        self.x.basis.validate()?;
        self.y.basis.validate()?;
        if self.covariate.is_none() && self.x.basis != BasisSpec::Intercept {
            return Err(CtmError::Input(format!(
                "learner '{}' has no covariate but a non-constant covariate basis",
                self.label
            )));
        }
        if self.y.basis.is_categorical() {
            return Err(CtmError::Input(format!(
                "learner '{}': the response basis must be numeric",
                self.label
            )));
        }
        if self.gamma.len() != self.num_coefficients() {
            return Err(CtmError::Dimension(format!(
                "learner '{}' has {} coefficients, expected {}",
                self.label,
                self.gamma.len(),
                self.num_coefficients()
            )));
        }
        Ok(())
    }

    /// Covariate basis values at `x`.
    pub fn covariate_row(&self, x: Point<'_>) -> Result<Vec<f64>> {
        match self.covariate {
            None => Ok(vec![1.0]),
            Some(_) => self.x.basis.eval(x),
        }
    }
}

/// `(b_x(x) (x) b_0(v))^T beta` for a learner and arbitrary coefficients.
pub fn predict_increment(learner: &TensorLearner, beta: &[f64], x: Point<'_>, v: f64) -> Result<f64> {
    let bx = learner.covariate_row(x)?;
    let b0 = learner.y.basis.eval(Point::Real(v))?;
    let k0 = b0.len();
    if beta.len() != bx.len() * k0 {
        return Err(CtmError::Dimension(format!(
            "{} coefficients for a {}x{} tensor basis",
            beta.len(),
            bx.len(),
            k0
        )));
    }
    let mut s = 0.0;
    for (k1, a) in bx.iter().enumerate() {
        if *a == 0.0 {
            continue;
        }
        let col = &beta[k1 * k0..(k1 + 1) * k0];
        s += a * b0.iter().zip(col).map(|(b, g)| b * g).sum::<f64>();
    }
    Ok(s)
}

/// Dense Kronecker product.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = DMatrix::zeros(ar * br, ac * bc);
    for j in 0..ac {
        for i in 0..ar {
            let aij = a[(i, j)];
            if aij == 0.0 {
                continue;
            }
            out.view_mut((i * br, j * bc), (br, bc))
                .zip_apply(b, |o, v| *o = aij * v);
        }
    }
    out
}

/// Weight-independent part of a learner's normal equations.
#[derive(Debug, Clone)]
pub struct LearnerDesign {
    bx: EvaluatedBasis,
    b0: EvaluatedBasis,
    a0: DMatrix<f64>,
    /// `P_x (x) I + I (x) P_0`, before scaling by lambda.
    penalty: DMatrix<f64>,
}

impl LearnerDesign {
    /// Evaluates both marginal designs on the observations and the grid.
    pub fn new(learner: &TensorLearner, frame: &Frame, grid: &[f64]) -> Result<Self> {
        learner.validate()?;
        let bx = match &learner.covariate {
            None => {
                let ones = vec![1.0; frame.nrows()];
                evaluate_basis(&BasisSpec::Intercept, Points::Real(&ones))?
            }
            Some(name) => evaluate_basis(&learner.x.basis, frame.column(name)?.data.points())?,
        };
        let b0 = evaluate_basis(&learner.y.basis, Points::Real(grid))?;
        let a0 = b0.matrix().transpose() * b0.matrix();
        let px = penalty_matrix(&learner.x.penalty, &learner.x.basis)?;
        let p0 = penalty_matrix(&learner.y.penalty, &learner.y.basis)?;
        let penalty = kron(&px, &DMatrix::identity(p0.nrows(), p0.nrows()))
            + kron(&DMatrix::identity(px.nrows(), px.nrows()), &p0);
        Ok(LearnerDesign { bx, b0, a0, penalty })
    }

    pub fn bx(&self) -> &EvaluatedBasis {
        &self.bx
    }

    pub fn b0(&self) -> &EvaluatedBasis {
        &self.b0
    }

    pub fn a0(&self) -> &DMatrix<f64> {
        &self.a0
    }

    pub fn penalty(&self) -> &DMatrix<f64> {
        &self.penalty
    }

    pub fn kx(&self) -> usize {
        self.bx.num_functions()
    }

    pub fn k0(&self) -> usize {
        self.b0.num_functions()
    }

    pub fn num_obs(&self) -> usize {
        self.bx.num_points()
    }

    pub fn num_grid(&self) -> usize {
        self.b0.num_points()
    }

    /// Number of stored design entries: `N K_x + n K_0`.
    pub fn stored_design_len(&self) -> usize {
        self.bx.matrix().len() + self.b0.matrix().len()
    }

    /// `vec(B_0^T U diag(w) B_x)`, exploiting sparse basis rows.
    pub fn rhs(&self, u: &DMatrix<f64>, weights: &[f64]) -> DVector<f64> {
        let (n, kx, k0) = (self.num_grid(), self.kx(), self.k0());
        let mut t = DMatrix::zeros(n, kx);
        let rows = self.bx.sparse_rows();
        for (i, &w) in weights.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let ui = u.column(i);
            for (k, b) in rows.row(i) {
                t.column_mut(k).axpy(w * b, &ui, 1.0);
            }
        }
        let mut r = DMatrix::zeros(k0, kx);
        let grid_rows = self.b0.sparse_rows();
        for iota in 0..n {
            for (k, b) in grid_rows.row(iota) {
                for k1 in 0..kx {
                    r[(k, k1)] += b * t[(iota, k1)];
                }
            }
        }
        DVector::from_vec(r.as_slice().to_vec())
    }

    /// Adds `scale * B_0 mat(beta) B_x^T` to the lattice `h` (grid x observations).
    pub fn add_to_lattice(&self, h: &mut DMatrix<f64>, beta: &[f64], scale: f64) {
        let (n, kx, k0) = (self.num_grid(), self.kx(), self.k0());
        let gamma = DMatrix::from_column_slice(k0, kx, beta);
        let mut g = DMatrix::zeros(n, kx);
        let grid_rows = self.b0.sparse_rows();
        for iota in 0..n {
            for (k, b) in grid_rows.row(iota) {
                for k1 in 0..kx {
                    g[(iota, k1)] += b * gamma[(k, k1)];
                }
            }
        }
        let rows = self.bx.sparse_rows();
        for i in 0..h.ncols() {
            let mut col = h.column_mut(i);
            for (k, b) in rows.row(i) {
                col.axpy(scale * b, &g.column(k), 1.0);
            }
        }
    }

    /// `B_0 mat(beta) B_x^T`.
    pub fn lattice(&self, beta: &[f64]) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(self.num_grid(), self.num_obs());
        self.add_to_lattice(&mut h, beta, 1.0);
        h
    }
}

/// Eigen-decomposition of the design relative to design plus penalty. Gives the
/// degrees of freedom as a cheap function of lambda.
#[derive(Debug, Clone)]
pub struct DfProfile {
    /// Generalised eigenvalues in `[0, 1)` outside the penalty null space.
    shrinkable: Vec<f64>,
    null_dim: usize,
}

impl DfProfile {
    /// `trace[(G + lambda P)^-1 G]`.
    pub fn df(&self, lambda: f64) -> f64 {
        self.null_dim as f64
            + self
                .shrinkable
                .iter()
                .map(|&s| s / (s + lambda * (1.0 - s)))
                .sum::<f64>()
    }

    /// Dimension of the penalty null space visible to the design.
    pub fn null_dim(&self) -> usize {
        self.null_dim
    }

    fn new(gram: &DMatrix<f64>, penalty: &DMatrix<f64>) -> Result<Self> {
        let total = gram + penalty;
        let chol = Cholesky::new(total).ok_or_else(|| {
            CtmError::Solve(
                "design and penalty are jointly singular; some coefficients are not identified".into(),
            )
        })?;
        let l = chol.l();
        // M = L^-1 G L^-T; its eigenvalues lie in [0, 1].
        let x = l
            .solve_lower_triangular(gram)
            .ok_or_else(|| CtmError::Solve("triangular solve failed".into()))?;
        let m = l
            .solve_lower_triangular(&x.transpose())
            .ok_or_else(|| CtmError::Solve("triangular solve failed".into()))?;
        let m = (&m + m.transpose()) * 0.5;
        let eig = m.symmetric_eigenvalues();
        let mut null_dim = 0;
        let mut shrinkable = Vec::with_capacity(eig.len());
        for &s in eig.iter() {
            if s >= 1.0 - NULL_SPACE_TOL {
                null_dim += 1;
            } else if s > RANK_TOL {
                shrinkable.push(s);
            }
        }
        Ok(DfProfile { shrinkable, null_dim })
    }
}

/// A learner's design combined with one weight vector, a calibrated smoothing
/// parameter and the factorised normal equations.
#[derive(Debug, Clone)]
pub struct LearnerWork {
    design: Arc<LearnerDesign>,
    weights: Vec<f64>,
    ax: DMatrix<f64>,
    lambda: f64,
    factor: Option<Cholesky<f64, Dyn>>,
}

/// Penalised fit of one learner to a gradient lattice.
#[derive(Debug, Clone)]
pub struct RidgeFit {
    pub beta: DVector<f64>,
    pub rhs: DVector<f64>,
}

impl LearnerWork {
    pub fn new(design: Arc<LearnerDesign>, weights: &[f64]) -> Result<Self> {
        if weights.len() != design.num_obs() {
            return Err(CtmError::Dimension(format!(
                "{} weights for {} observations",
                weights.len(),
                design.num_obs()
            )));
        }
        let bx = design.bx.matrix();
        let mut ax = DMatrix::zeros(bx.ncols(), bx.ncols());
        let rows = design.bx.sparse_rows();
        for (i, &w) in weights.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let nz: Vec<(usize, f64)> = rows.row(i).collect();
            for &(a, va) in &nz {
                for &(b, vb) in &nz {
                    ax[(a, b)] += w * va * vb;
                }
            }
        }
        Ok(LearnerWork {
            design,
            weights: weights.to_vec(),
            ax,
            lambda: 0.0,
            factor: None,
        })
    }

    pub fn design(&self) -> &LearnerDesign {
        &self.design
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn ax(&self) -> &DMatrix<f64> {
        &self.ax
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// `A_x (x) A_0`.
    pub fn gram(&self) -> DMatrix<f64> {
        kron(&self.ax, &self.design.a0)
    }

    pub fn df_profile(&self) -> Result<DfProfile> {
        DfProfile::new(&self.gram(), &self.design.penalty)
    }

    /// Fixes lambda and factorises `A_x (x) A_0 + lambda P`.
    pub fn set_lambda(&mut self, lambda: f64) -> Result<()> {
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(CtmError::Input(format!("smoothing parameter {lambda} must be >= 0")));
        }
        let system = self.gram() + &self.design.penalty * lambda;
        let factor = Cholesky::new(system).ok_or_else(|| {
            CtmError::Solve(if lambda == 0.0 {
                "normal equations are singular at lambda = 0; use a positive smoothing parameter".into()
            } else {
                format!("penalised normal equations are singular at lambda = {lambda}")
            })
        })?;
        self.lambda = lambda;
        self.factor = Some(factor);
        Ok(())
    }

    /// Solves the penalised normal equations for the lattice `u`.
    pub fn ridge_fit(&self, u: &DMatrix<f64>) -> Result<RidgeFit> {
        let factor = self
            .factor
            .as_ref()
            .ok_or_else(|| CtmError::Solve("learner has not been factorised".into()))?;
        if u.shape() != (self.design.num_grid(), self.design.num_obs()) {
            return Err(CtmError::Dimension(format!(
                "gradient lattice is {:?}, expected ({}, {})",
                u.shape(),
                self.design.num_grid(),
                self.design.num_obs()
            )));
        }
        let rhs = self.design.rhs(u, &self.weights);
        let beta = factor.solve(&rhs);
        Ok(RidgeFit { beta, rhs })
    }

    /// `(A_x (x) A_0) beta`, computed as `vec(A_0 mat(beta) A_x)`.
    pub fn gram_times(&self, beta: &[f64]) -> DVector<f64> {
        let g = DMatrix::from_column_slice(self.design.k0(), self.design.kx(), beta);
        let prod = &self.design.a0 * g * &self.ax;
        DVector::from_vec(prod.as_slice().to_vec())
    }

    /// Weighted residual sum of squares from the normal-equation quantities:
    /// `sum w U^2 - 2 beta^T rhs + beta^T G beta`.
    pub fn rss_from_fit(&self, weighted_ss: f64, fit: &RidgeFit) -> f64 {
        let gb = self.gram_times(fit.beta.as_slice());
        weighted_ss - 2.0 * fit.beta.dot(&fit.rhs) + fit.beta.dot(&gb)
    }

    /// `sum_i sum_k w_i (U[k, i] - fit[k, i])^2` with the fit evaluated on the lattice.
    pub fn learner_rss(&self, beta: &[f64], u: &DMatrix<f64>) -> Result<f64> {
        if u.shape() != (self.design.num_grid(), self.design.num_obs()) {
            return Err(CtmError::Dimension(format!(
                "gradient lattice is {:?}, expected ({}, {})",
                u.shape(),
                self.design.num_grid(),
                self.design.num_obs()
            )));
        }
        if beta.len() != self.design.kx() * self.design.k0() {
            return Err(CtmError::Dimension(format!(
                "{} coefficients, expected {}",
                beta.len(),
                self.design.kx() * self.design.k0()
            )));
        }
        let fit = self.design.lattice(beta);
        Ok(self
            .weights
            .iter()
            .enumerate()
            .map(|(i, w)| {
                w * u
                    .column(i)
                    .iter()
                    .zip(fit.column(i).iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
            })
            .sum())
    }
}

/// Builds the work object for `learner` on `frame` with `weights`.
pub fn precompute(learner: &TensorLearner, frame: &Frame, grid: &[f64], weights: &[f64]) -> Result<LearnerWork> {
    let design = LearnerDesign::new(learner, frame, grid)?;
    LearnerWork::new(Arc::new(design), weights)
}

/// Smoothing parameter giving the learner `df_target` degrees of freedom.
///
/// Bisection on `log10(lambda)` over `[-20, 20]`.
pub fn calibrate_lambda(work: &LearnerWork, df_target: f64) -> Result<f64> {
    let profile = work.df_profile()?;
    calibrate_with_profile(&profile, df_target)
}

pub fn calibrate_with_profile(profile: &DfProfile, df_target: f64) -> Result<f64> {
    let (lo, hi) = LOG10_LAMBDA_RANGE;
    let df_max = profile.df(10f64.powf(lo));
    let df_min = profile.df(10f64.powf(hi));
    if !df_target.is_finite() || df_target > df_max + DF_TOLERANCE || df_target < df_min - DF_TOLERANCE {
        return Err(CtmError::Calibration {
            target: df_target,
            min: df_min,
            max: df_max,
        });
    }
    if df_target >= df_max {
        return Ok(10f64.powf(lo));
    }
    // At the penalty null space dimension the exact solution is lambda = inf.
    // Aim just inside the tolerance instead so the normal equations stay well
    // conditioned.
    let df_target = df_target.max(profile.null_dim as f64 + 0.5 * DF_TOLERANCE);
    if df_target <= df_min {
        return Ok(10f64.powf(hi));
    }
    let (mut a, mut b) = (lo, hi);
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        let df = profile.df(10f64.powf(mid));
        if (df - df_target).abs() <= 1e-12 * df_target.max(1.0) {
            return Ok(10f64.powf(mid));
        }
        if df > df_target {
            a = mid;
        } else {
            b = mid;
        }
    }
    Ok(10f64.powf(0.5 * (a + b)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::PenaltySpec;
    use crate::data::Column;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn frame(x: Vec<f64>) -> Frame {
        Frame::new(x.len(), vec![Column::real("x", x)]).unwrap()
    }

    #[test]
    fn kron_matches_definition() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let b = DMatrix::from_row_slice(1, 2, &[5.0, 6.0]);
        let k = kron(&a, &b);
        assert_eq!(
            k,
            DMatrix::from_row_slice(2, 4, &[5.0, 6.0, 10.0, 12.0, 15.0, 18.0, 20.0, 24.0])
        );
    }

    #[test]
    fn intercept_designs() {
        let l = TensorLearner::new("c", None, Marginal::intercept(), Marginal::intercept());
        let f = frame(vec![0.1, 0.2, 0.3]);
        let w = [0.2, 0.3, 0.4];
        let work = precompute(&l, &f, &[1.5], &w).unwrap();
        assert_abs_diff_eq!(work.ax()[(0, 0)], 0.9, epsilon = 1e-15);
        assert_eq!(work.design().a0()[(0, 0)], 1.0);
    }

    #[test]
    fn stores_only_marginal_designs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..100).map(|_| rng.random::<f64>()).collect();
        let grid: Vec<f64> = (0..50).map(|i| i as f64 / 49.0).collect();
        let l = TensorLearner::new(
            "x",
            Some("x"),
            Marginal::new(BasisSpec::cubic_bspline(20, 0.0, 1.0), PenaltySpec::Difference { order: 2 }),
            Marginal::new(BasisSpec::cubic_bspline(20, 0.0, 1.0), PenaltySpec::Difference { order: 2 }),
        );
        let design = LearnerDesign::new(&l, &frame(x), &grid).unwrap();
        assert_eq!(design.stored_design_len(), 100 * 24 + 50 * 24);
    }

    #[test]
    fn increment_of_linear_tensor() {
        let l = TensorLearner::new(
            "x",
            Some("x"),
            Marginal::new(BasisSpec::Linear { lo: -5.0, hi: 5.0 }, PenaltySpec::None),
            Marginal::new(BasisSpec::Linear { lo: -5.0, hi: 5.0 }, PenaltySpec::None),
        );
        let g = [0.3, -1.1, 2.0, 0.7];
        for (x, v) in [(0.5, 1.5), (-2.0, 3.0), (4.0, -4.5)] {
            let got = predict_increment(&l, &g, Point::Real(x), v).unwrap();
            let want = g[0] + g[1] * v + g[2] * x + g[3] * x * v;
            assert_abs_diff_eq!(got, want, epsilon = 1e-14);
        }
        let c = TensorLearner::new("c", None, Marginal::intercept(), Marginal::intercept());
        assert_eq!(predict_increment(&c, &[2.5], Point::Real(9.0), 123.0).unwrap(), 2.5);
    }

    #[test]
    fn zero_gradient_gives_zero_beta() {
        let l = TensorLearner::new(
            "x",
            Some("x"),
            Marginal::new(BasisSpec::cubic_bspline(3, 0.0, 1.0), PenaltySpec::Difference { order: 2 }),
            Marginal::new(BasisSpec::cubic_bspline(3, 0.0, 1.0), PenaltySpec::Difference { order: 2 }),
        );
        let x: Vec<f64> = (0..30).map(|i| i as f64 / 29.0).collect();
        let grid: Vec<f64> = (0..12).map(|i| i as f64 / 11.0).collect();
        let mut work = precompute(&l, &frame(x), &grid, &[1.0 / 30.0; 30]).unwrap();
        work.set_lambda(1.0).unwrap();
        let fit = work.ridge_fit(&DMatrix::zeros(12, 30)).unwrap();
        assert_eq!(fit.beta.amax(), 0.0);
        assert_eq!(work.learner_rss(fit.beta.as_slice(), &DMatrix::zeros(12, 30)).unwrap(), 0.0);
    }

    #[test]
    fn singular_unpenalised_system_is_reported() {
        // Two observations cannot identify four covariate coefficients.
        let l = TensorLearner::new(
            "x",
            Some("x"),
            Marginal::new(BasisSpec::cubic_bspline(1, 0.0, 1.0), PenaltySpec::Difference { order: 2 }),
            Marginal::intercept(),
        );
        let mut work = precompute(&l, &frame(vec![0.1, 0.2]), &[0.0], &[0.5, 0.5]).unwrap();
        match work.set_lambda(0.0) {
            Err(CtmError::Solve(msg)) => assert!(msg.contains("positive smoothing parameter")),
            other => panic!("expected solve error, got {other:?}"),
        }
    }

    #[test]
    fn lattice_agrees_with_pointwise_increment() {
        let l = TensorLearner::new(
            "x",
            Some("x"),
            Marginal::new(BasisSpec::cubic_bspline(4, 0.0, 1.0), PenaltySpec::Difference { order: 2 }),
            Marginal::new(BasisSpec::cubic_bspline(5, -1.0, 2.0), PenaltySpec::Difference { order: 2 }),
        );
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x: Vec<f64> = (0..9).map(|_| rng.random::<f64>()).collect();
        let grid: Vec<f64> = (0..7).map(|i| -1.0 + 0.5 * i as f64).collect();
        let beta: Vec<f64> = (0..l.num_coefficients()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let design = LearnerDesign::new(&l, &frame(x.clone()), &grid).unwrap();
        let lat = design.lattice(&beta);
        for (i, xi) in x.iter().enumerate() {
            for (k, v) in grid.iter().enumerate() {
                let p = predict_increment(&l, &beta, Point::Real(*xi), *v).unwrap();
                assert_abs_diff_eq!(lat[(k, i)], p, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn unpenalised_fit_is_least_squares() {
        let l = TensorLearner::new(
            "x",
            Some("x"),
            Marginal::new(BasisSpec::Linear { lo: 0.0, hi: 1.0 }, PenaltySpec::None),
            Marginal::new(BasisSpec::Linear { lo: 0.0, hi: 1.0 }, PenaltySpec::None),
        );
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Vec<f64> = (0..8).map(|_| rng.random::<f64>()).collect();
        let grid = [0.0, 0.3, 0.6, 1.0];
        let w = [0.125; 8];
        let mut work = precompute(&l, &frame(x), &grid, &w).unwrap();
        work.set_lambda(0.0).unwrap();
        let u = DMatrix::from_fn(4, 8, |_, _| rng.random_range(-1.0..1.0));
        let fit = work.ridge_fit(&u).unwrap();
        let best = work.learner_rss(fit.beta.as_slice(), &u).unwrap();
        for _ in 0..50 {
            let other: Vec<f64> = fit.beta.iter().map(|b| b + rng.random_range(-0.1..0.1)).collect();
            assert!(work.learner_rss(&other, &u).unwrap() >= best - 1e-14);
        }
        let ss: f64 = (0..8).map(|i| w[i] * u.column(i).norm_squared()).sum();
        assert_abs_diff_eq!(work.rss_from_fit(ss, &fit), best, epsilon = 1e-12);
    }

    #[test]
    fn df_is_full_rank_at_zero_lambda_and_decreasing() {
        let l = TensorLearner::new(
            "x",
            Some("x"),
            Marginal::new(BasisSpec::cubic_bspline(2, 0.0, 1.0), PenaltySpec::Difference { order: 2 }),
            Marginal::new(BasisSpec::cubic_bspline(2, 0.0, 1.0), PenaltySpec::Difference { order: 2 }),
        );
        let x: Vec<f64> = (0..40).map(|i| i as f64 / 39.0).collect();
        let grid: Vec<f64> = (0..20).map(|i| i as f64 / 19.0).collect();
        let work = precompute(&l, &frame(x), &grid, &[0.025; 40]).unwrap();
        let p = work.df_profile().unwrap();
        assert_abs_diff_eq!(p.df(0.0), 36.0, epsilon = 1e-9);
        assert_eq!(p.null_dim(), 4);
        let mut prev = f64::INFINITY;
        for e in -6..8 {
            let d = p.df(10f64.powi(e));
            assert!(d <= prev);
            prev = d;
        }
    }

    #[test]
    fn unattainable_df_reports_range() {
        let l = TensorLearner::new(
            "x",
            Some("x"),
            Marginal::new(BasisSpec::cubic_bspline(2, 0.0, 1.0), PenaltySpec::Difference { order: 2 }),
            Marginal::new(BasisSpec::cubic_bspline(2, 0.0, 1.0), PenaltySpec::Difference { order: 2 }),
        );
        let x: Vec<f64> = (0..40).map(|i| i as f64 / 39.0).collect();
        let grid: Vec<f64> = (0..20).map(|i| i as f64 / 19.0).collect();
        let work = precompute(&l, &frame(x), &grid, &[0.025; 40]).unwrap();
        match calibrate_lambda(&work, 40.0) {
            Err(CtmError::Calibration { min, max, .. }) => {
                assert_abs_diff_eq!(min, 4.0, epsilon = 1e-6);
                assert_abs_diff_eq!(max, 36.0, epsilon = 1e-6);
            }
            other => panic!("expected calibration error, got {other:?}"),
        }
        assert!(calibrate_lambda(&work, 3.0).is_err());
        let lambda = calibrate_lambda(&work, 7.5).unwrap();
        assert_abs_diff_eq!(work.df_profile().unwrap().df(lambda), 7.5, epsilon = 1e-6);
    }

    #[test]
    fn df_at_null_space_dimension_keeps_a_finite_factorisable_lambda() {
        let l = TensorLearner::new(
            "x",
            Some("x"),
            Marginal::new(BasisSpec::cubic_bspline(6, 0.0, 1.0), PenaltySpec::Difference { order: 2 }),
            Marginal::new(BasisSpec::cubic_bspline(8, 0.0, 1.0), PenaltySpec::Difference { order: 2 }),
        );
        let x: Vec<f64> = (0..200).map(|i| ((i * 71) % 200) as f64 / 199.0).collect();
        let grid: Vec<f64> = (0..100).map(|i| i as f64 / 99.0).collect();
        let mut work = precompute(&l, &frame(x), &grid, &[0.005; 200]).unwrap();
        let lambda = calibrate_lambda(&work, 4.0).unwrap();
        assert!(lambda < 1e15);
        assert_abs_diff_eq!(work.df_profile().unwrap().df(lambda), 4.0, epsilon = 1e-6);
        work.set_lambda(lambda).unwrap();
    }
}
