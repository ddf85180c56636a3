//! Marginal bases and roughness penalties.
//!
//! Every partial transformation function is a tensor product of two marginal
//! bases: one over the explanatory variable and one over the response grid.
//! This module builds those marginals and the penalty matrices attached to
//! them.
//!
//! Knots of the (cyclic) B-spline bases are equidistant over the declared
//! domain. The open B-spline basis uses a clamped knot vector, with each
//! boundary knot repeated `degree + 1` times. The cyclic basis is obtained from
//! an equidistant extended knot vector by folding the trailing `degree` columns
//! onto the leading ones, which identifies the two ends of the domain.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{CtmError, Result};

/// Relative slack for evaluation points sitting on a domain boundary up to
/// rounding error. Such points are clamped onto the boundary.
const DOMAIN_SLACK: f64 = 1e-10;

/// Declarative description of one marginal basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BasisSpec {
    /// The constant function 1.
    Intercept,
    /// `(1, x)` over `[lo, hi]`.
    Linear { lo: f64, hi: f64 },
    /// Open B-spline basis with `interior_knots + degree + 1` functions.
    Bspline {
        degree: usize,
        interior_knots: usize,
        lo: f64,
        hi: f64,
    },
    /// Periodic B-spline basis with `interior_knots` functions; `lo` and `hi`
    /// are identified.
    CyclicBspline {
        degree: usize,
        interior_knots: usize,
        lo: f64,
        hi: f64,
    },
    /// Indicator coding of an ordered list of levels.
    Dummy { levels: Vec<String> },
}

/// A single evaluation point: numeric value or categorical level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Point<'a> {
    Real(f64),
    Level(&'a str),
}

/// A batch of evaluation points.
#[derive(Debug, Clone, Copy)]
pub enum Points<'a> {
    Real(&'a [f64]),
    Levels(&'a [String]),
}

impl Points<'_> {
    pub fn len(&self) -> usize {
        match self {
            Points::Real(v) => v.len(),
            Points::Levels(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn get(&self, i: usize) -> Point<'_> {
        match self {
            Points::Real(v) => Point::Real(v[i]),
            Points::Levels(v) => Point::Level(&v[i]),
        }
    }
}

/// Owned copy of the points a basis was evaluated at.
#[derive(Debug, Clone, PartialEq)]
pub enum PointSet {
    Real(Vec<f64>),
    Levels(Vec<String>),
}

impl BasisSpec {
    /// Cubic B-spline basis with `interior_knots` equidistant knots over `[lo, hi]`.
    pub fn cubic_bspline(interior_knots: usize, lo: f64, hi: f64) -> Self {
        BasisSpec::Bspline {
            degree: 3,
            interior_knots,
            lo,
            hi,
        }
    }

    /// Number of basis functions `K`.
    pub fn num_functions(&self) -> usize {
        match self {
            BasisSpec::Intercept => 1,
            BasisSpec::Linear { .. } => 2,
            BasisSpec::Bspline {
                degree,
                interior_knots,
                ..
            } => interior_knots + degree + 1,
            BasisSpec::CyclicBspline { interior_knots, .. } => *interior_knots,
            BasisSpec::Dummy { levels } => levels.len(),
        }
    }

    /// Numeric domain `[lo, hi]`, if the basis has one.
    pub fn domain(&self) -> Option<(f64, f64)> {
        match self {
            BasisSpec::Linear { lo, hi }
            | BasisSpec::Bspline { lo, hi, .. }
            | BasisSpec::CyclicBspline { lo, hi, .. } => Some((*lo, *hi)),
            _ => None,
        }
    }

    pub fn is_cyclic(&self) -> bool {
        matches!(self, BasisSpec::CyclicBspline { .. })
    }

    pub fn is_categorical(&self) -> bool {
        matches!(self, BasisSpec::Dummy { .. })
    }

    /// Checks the structural parameters of the basis.
    pub fn validate(&self) -> Result<()> {
        match self {
            BasisSpec::Intercept => Ok(()),
            BasisSpec::Linear { lo, hi } => check_interval(*lo, *hi),
            BasisSpec::Bspline {
                interior_knots,
                lo,
                hi,
                ..
            } => {
                check_interval(*lo, *hi)?;
                if *interior_knots < 1 {
                    return Err(CtmError::Size(
                        "a B-spline basis needs at least one interior knot".into(),
                    ));
                }
                Ok(())
            }
            BasisSpec::CyclicBspline {
                degree,
                interior_knots,
                lo,
                hi,
            } => {
                check_interval(*lo, *hi)?;
                if *interior_knots <= *degree {
                    return Err(CtmError::Size(format!(
                        "a cyclic B-spline basis of degree {degree} needs more than {degree} knots, got {interior_knots}"
                    )));
                }
                Ok(())
            }
            BasisSpec::Dummy { levels } => {
                if levels.is_empty() {
                    return Err(CtmError::Size("a dummy basis needs at least one level".into()));
                }
                for (i, l) in levels.iter().enumerate() {
                    if levels[..i].contains(l) {
                        return Err(CtmError::Input(format!("duplicate level '{l}'")));
                    }
                }
                Ok(())
            }
        }
    }

    /// Evaluates the basis at one point, writing the `K` values into `out`.
    pub fn eval_into(&self, point: Point<'_>, out: &mut [f64]) -> Result<()> {
        debug_assert_eq!(out.len(), self.num_functions());
        out.iter_mut().for_each(|v| *v = 0.0);
        match self {
            BasisSpec::Intercept => {
                out[0] = 1.0;
            }
            BasisSpec::Linear { lo, hi } => {
                let x = check_point(real(point)?, *lo, *hi)?;
                out[0] = 1.0;
                out[1] = x;
            }
            BasisSpec::Bspline {
                degree,
                interior_knots,
                lo,
                hi,
            } => {
                let x = check_point(real(point)?, *lo, *hi)?;
                let knots = clamped_knots(*degree, *interior_knots, *lo, *hi);
                let k = self.num_functions();
                let span = find_span(&knots, *degree, k, x);
                let vals = basis_funs(&knots, *degree, span, x);
                for (r, v) in vals.into_iter().enumerate() {
                    out[span - degree + r] = v;
                }
            }
            BasisSpec::CyclicBspline {
                degree,
                interior_knots,
                lo,
                hi,
            } => {
                let x = check_point(real(point)?, *lo, *hi)?;
                let k = *interior_knots;
                let knots = extended_knots(*degree, k, *lo, *hi);
                let span = find_span(&knots, *degree, k + degree, x);
                let vals = basis_funs(&knots, *degree, span, x);
                for (r, v) in vals.into_iter().enumerate() {
                    out[(span - degree + r) % k] += v;
                }
            }
            BasisSpec::Dummy { levels } => {
                let level = match point {
                    Point::Level(l) => l,
                    Point::Real(v) => {
                        return Err(CtmError::Input(format!(
                            "dummy basis expects a categorical level, got numeric value {v}"
                        )))
                    }
                };
                let idx = levels
                    .iter()
                    .position(|l| l == level)
                    .ok_or_else(|| CtmError::UnknownLevel(level.to_string()))?;
                out[idx] = 1.0;
            }
        }
        Ok(())
    }

    /// Evaluates the basis at one point.
    pub fn eval(&self, point: Point<'_>) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.num_functions()];
        self.eval_into(point, &mut out)?;
        Ok(out)
    }
}

fn check_interval(lo: f64, hi: f64) -> Result<()> {
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(CtmError::Input(format!(
            "basis domain [{lo}, {hi}] must be a finite interval with lo < hi"
        )));
    }
    Ok(())
}

fn real(point: Point<'_>) -> Result<f64> {
    match point {
        Point::Real(x) => Ok(x),
        Point::Level(l) => Err(CtmError::Input(format!(
            "numeric basis cannot be evaluated at level '{l}'"
        ))),
    }
}

fn check_point(x: f64, lo: f64, hi: f64) -> Result<f64> {
    let slack = DOMAIN_SLACK * (hi - lo);
    if !x.is_finite() || x < lo - slack || x > hi + slack {
        return Err(CtmError::Domain { value: x, lo, hi });
    }
    Ok(x.clamp(lo, hi))
}

fn clamped_knots(degree: usize, interior: usize, lo: f64, hi: f64) -> Vec<f64> {
    let step = (hi - lo) / (interior + 1) as f64;
    let mut knots = Vec::with_capacity(interior + 2 * degree + 2);
    knots.extend(std::iter::repeat_n(lo, degree + 1));
    knots.extend((1..=interior).map(|i| lo + step * i as f64));
    knots.extend(std::iter::repeat_n(hi, degree + 1));
    knots
}

fn extended_knots(degree: usize, intervals: usize, lo: f64, hi: f64) -> Vec<f64> {
    let step = (hi - lo) / intervals as f64;
    (0..intervals + 2 * degree + 1)
        .map(|i| lo + step * (i as f64 - degree as f64))
        .collect()
}

/// Knot span index `s` with `knots[s] <= x < knots[s + 1]`, restricted to the
/// spans carrying the `num_functions` basis functions; `x` at the upper end
/// falls into the last span.
fn find_span(knots: &[f64], degree: usize, num_functions: usize, x: f64) -> usize {
    let last = num_functions - 1;
    if x >= knots[last + 1] {
        return last;
    }
    let (mut low, mut high) = (degree, last + 1);
    while high - low > 1 {
        let mid = (low + high) / 2;
        if x < knots[mid] {
            high = mid;
        } else {
            low = mid;
        }
    }
    low
}

/// The `degree + 1` non-vanishing basis functions on knot span `span`
/// (Cox-de Boor triangular scheme).
fn basis_funs(knots: &[f64], degree: usize, span: usize, x: f64) -> Vec<f64> {
    let mut n = vec![0.0; degree + 1];
    let mut left = vec![0.0; degree + 1];
    let mut right = vec![0.0; degree + 1];
    n[0] = 1.0;
    for j in 1..=degree {
        left[j] = x - knots[span + 1 - j];
        right[j] = knots[span + j] - x;
        let mut saved = 0.0;
        for r in 0..j {
            let temp = n[r] / (right[r + 1] + left[j - r]);
            n[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        n[j] = saved;
    }
    n
}

/// Compressed row storage of an evaluated basis, skipping exact zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRows {
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseRows {
    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let mut indptr = Vec::with_capacity(m.nrows() + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                let v = m[(i, j)];
                if v != 0.0 {
                    indices.push(j);
                    values.push(v);
                }
            }
            indptr.push(indices.len());
        }
        SparseRows {
            indptr,
            indices,
            values,
        }
    }

    pub fn nrows(&self) -> usize {
        self.indptr.len() - 1
    }

    /// Non-zero `(column, value)` pairs of row `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.indptr[i]..self.indptr[i + 1];
        self.indices[r.clone()]
            .iter()
            .copied()
            .zip(self.values[r].iter().copied())
    }
}

/// A basis evaluated at a set of points: `num_points x K`.
#[derive(Debug, Clone)]
pub struct EvaluatedBasis {
    matrix: DMatrix<f64>,
    rows: SparseRows,
    points: PointSet,
}

impl EvaluatedBasis {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn sparse_rows(&self) -> &SparseRows {
        &self.rows
    }

    pub fn points(&self) -> &PointSet {
        &self.points
    }

    pub fn num_points(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn num_functions(&self) -> usize {
        self.matrix.ncols()
    }
}

/// Evaluates `spec` at every point, one row per point.
pub fn evaluate_basis(spec: &BasisSpec, points: Points<'_>) -> Result<EvaluatedBasis> {
    spec.validate()?;
    let k = spec.num_functions();
    let n = points.len();
    let mut matrix = DMatrix::zeros(n, k);
    let mut row = vec![0.0; k];
    for i in 0..n {
        spec.eval_into(points.get(i), &mut row)?;
        for (j, v) in row.iter().enumerate() {
            matrix[(i, j)] = *v;
        }
    }
    let rows = SparseRows::from_dense(&matrix);
    let points = match points {
        Points::Real(v) => PointSet::Real(v.to_vec()),
        Points::Levels(v) => PointSet::Levels(v.to_vec()),
    };
    Ok(EvaluatedBasis {
        matrix,
        rows,
        points,
    })
}

/// Declarative description of a roughness penalty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PenaltySpec {
    #[default]
    None,
    /// `D^T D` with `D` the `order`-th difference matrix.
    Difference { order: usize },
    /// Graph Laplacian over levels; `neighbors[i]` lists the levels adjacent to level `i`.
    Adjacency { neighbors: Vec<Vec<usize>> },
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn difference_coefficients(order: usize) -> Vec<f64> {
    (0..=order)
        .map(|j| {
            let sign = if (order - j) % 2 == 0 { 1.0 } else { -1.0 };
            sign * binomial(order, j)
        })
        .collect()
}

/// The `(k - order) x k` matrix of `order`-th finite differences.
pub fn difference_matrix(k: usize, order: usize) -> Result<DMatrix<f64>> {
    if order < 1 || k <= order {
        return Err(CtmError::Size(format!(
            "difference order {order} needs more than {order} coefficients, got {k}"
        )));
    }
    let coef = difference_coefficients(order);
    let mut d = DMatrix::zeros(k - order, k);
    for r in 0..k - order {
        for (j, c) in coef.iter().enumerate() {
            d[(r, r + j)] = *c;
        }
    }
    Ok(d)
}

/// The `k x k` difference matrix whose row indices wrap around modulo `k`.
pub fn cyclic_difference_matrix(k: usize, order: usize) -> Result<DMatrix<f64>> {
    if order < 1 || k <= order {
        return Err(CtmError::Size(format!(
            "difference order {order} needs more than {order} coefficients, got {k}"
        )));
    }
    let coef = difference_coefficients(order);
    let mut d = DMatrix::zeros(k, k);
    for r in 0..k {
        for (j, c) in coef.iter().enumerate() {
            d[(r, (r + j) % k)] += *c;
        }
    }
    Ok(d)
}

/// Penalty matrix for `penalty` attached to `basis`.
pub fn penalty_matrix(penalty: &PenaltySpec, basis: &BasisSpec) -> Result<DMatrix<f64>> {
    let k = basis.num_functions();
    match penalty {
        PenaltySpec::None => Ok(DMatrix::zeros(k, k)),
        PenaltySpec::Difference { order } => {
            if !(1..=2).contains(order) {
                return Err(CtmError::Structure(format!(
                    "difference order must be 1 or 2, got {order}"
                )));
            }
            if basis.is_categorical() {
                return Err(CtmError::Structure(
                    "difference penalties are undefined across unordered levels".into(),
                ));
            }
            let d = if basis.is_cyclic() {
                cyclic_difference_matrix(k, *order)?
            } else {
                difference_matrix(k, *order)?
            };
            Ok(d.transpose() * d)
        }
        PenaltySpec::Adjacency { neighbors } => {
            if !basis.is_categorical() {
                return Err(CtmError::Structure(
                    "adjacency penalties apply to dummy bases only".into(),
                ));
            }
            adjacency_penalty(neighbors, k)
        }
    }
}

fn adjacency_penalty(neighbors: &[Vec<usize>], k: usize) -> Result<DMatrix<f64>> {
    if neighbors.len() != k {
        return Err(CtmError::Structure(format!(
            "neighbor list covers {} levels, basis has {k}",
            neighbors.len()
        )));
    }
    let mut p = DMatrix::zeros(k, k);
    for (i, adj) in neighbors.iter().enumerate() {
        for &j in adj {
            if j >= k {
                return Err(CtmError::Structure(format!("neighbor index {j} out of range")));
            }
            if j == i {
                return Err(CtmError::Structure(format!("level {i} lists itself as a neighbor")));
            }
            if !neighbors[j].contains(&i) {
                return Err(CtmError::Structure(format!(
                    "neighbor list is not symmetric: {i} lists {j} but not vice versa"
                )));
            }
            if p[(i, j)] == 0.0 {
                p[(i, j)] = -1.0;
                p[(i, i)] += 1.0;
            }
        }
    }
    Ok(p)
}
