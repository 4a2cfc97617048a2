//! Core market types: coefficient processes, parameters, portfolios,
//! constraint sets and the time grid.

pub mod linalg;
mod spec;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use linalg::{psd_factor, PSD_TOL};
pub use spec::{MatrixSpec, ProcessSpec, ScalarSpec, SpecValue, StateRule, TimeTable, VectorSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("initial capitalization of company {index} is {value}, must be > 0")]
    NonPositiveInitialCap { index: usize, value: f64 },
    #[error("covariance is not symmetric (max |c_ij - c_ji| = {0:e})")]
    AsymmetricCovariance(f64),
    #[error("covariance has negative eigenvalue {0:e}")]
    NegativeEigenvalue(f64),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: String, found: String },
    #[error("matrix is not positive semidefinite (reconstruction residual {residual:e})")]
    IndefiniteMatrix { residual: f64 },
    #[error("non-finite values in {0}")]
    NonFinite(String),
    #[error("invalid time table: {0}")]
    InvalidTable(String),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid portfolio: {0}")]
    InvalidPortfolio(String),
    #[error("invalid constraint set: {0}")]
    InvalidConstraint(String),
}

/// Market coefficients: rate of return `a`, local covariation `c`, interest
/// rate `r` (all per unit time) and initial capitalizations.
#[derive(Clone, Debug)]
pub struct MarketParams {
    pub d: usize,
    pub a: VectorSpec,
    pub c: MatrixSpec,
    pub r: ScalarSpec,
    pub s0: DVector<f64>,
}

impl MarketParams {
    pub fn new(a: VectorSpec, c: MatrixSpec, r: ScalarSpec, s0: DVector<f64>) -> Self {
        Self {
            d: s0.len(),
            a,
            c,
            r,
            s0,
        }
    }

    /// `s0 / <s0, 1>`.
    pub fn initial_kappa(&self) -> Portfolio {
        let total: f64 = self.s0.iter().sum();
        Portfolio(self.s0.map(|s| s / total))
    }

    /// True when all three coefficients are constant processes.
    pub fn is_constant(&self) -> bool {
        self.a.is_constant() && self.c.is_constant() && self.r.is_constant()
    }
}

/// Checks the parameter invariants and hands the parameters back unchanged.
///
/// The covariance is sampled at `t = 0` with `kappa` uniform.
pub fn validate_params(params: MarketParams) -> Result<MarketParams, ModelError> {
    let d = params.d;
    if d == 0 {
        return Err(ModelError::DimensionMismatch(
            "market needs at least one company".into(),
        ));
    }
    if params.s0.len() != d {
        return Err(ModelError::DimensionMismatch(format!(
            "s0 has length {}, expected {d}",
            params.s0.len()
        )));
    }
    for (index, &value) in params.s0.iter().enumerate() {
        if !(value > 0.0) || !value.is_finite() {
            return Err(ModelError::NonPositiveInitialCap { index, value });
        }
    }
    let uniform = vec![1.0 / d as f64; d];
    let a = params.a.eval(0.0, &uniform).map_err(as_dimension)?;
    if a.iter().any(|x| !x.is_finite()) {
        return Err(ModelError::NonFinite("rate of return".into()));
    }
    let r = params.r.eval(0.0, &uniform)?;
    if !r.is_finite() {
        return Err(ModelError::NonFinite("interest rate".into()));
    }
    let c = params.c.eval(0.0, &uniform).map_err(as_dimension)?;
    check_covariance(&c)?;
    Ok(params)
}

fn as_dimension(e: ModelError) -> ModelError {
    match e {
        ModelError::ShapeMismatch { expected, found } => {
            ModelError::DimensionMismatch(format!("expected {expected}, found {found}"))
        }
        other => other,
    }
}

/// Symmetry, finiteness and eigenvalue checks for a sampled covariance.
pub fn check_covariance(c: &DMatrix<f64>) -> Result<(), ModelError> {
    if c.iter().any(|x| !x.is_finite()) {
        return Err(ModelError::NonFinite("covariance".into()));
    }
    let scale = linalg::max_abs(c).max(1.0);
    let asym = linalg::asymmetry(c);
    if asym > PSD_TOL * scale {
        return Err(ModelError::AsymmetricCovariance(asym));
    }
    let lmin = linalg::min_eigenvalue(c);
    if lmin < -PSD_TOL * scale {
        return Err(ModelError::NegativeEigenvalue(lmin));
    }
    Ok(())
}

/// Proportions of wealth held in each company; the remainder `1 - <pi, 1>`
/// sits in the bank.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Portfolio(pub DVector<f64>);

impl Portfolio {
    pub fn new(weights: Vec<f64>) -> Self {
        Portfolio(DVector::from_vec(weights))
    }

    pub fn uniform(d: usize) -> Self {
        Portfolio(DVector::from_element(d, 1.0 / d as f64))
    }

    /// The unit vector `e_i`: everything in company `i`.
    pub fn unit(d: usize, i: usize) -> Self {
        let mut w = DVector::zeros(d);
        w[i] = 1.0;
        Portfolio(w)
    }

    pub fn bank(d: usize) -> Self {
        Portfolio(DVector::zeros(d))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        self.0.as_slice()
    }

    /// Membership of the closed simplex.
    pub fn is_in_simplex(&self, tol: f64) -> bool {
        let sum: f64 = self.0.iter().sum();
        self.0.iter().all(|&w| w >= -tol && w <= 1.0 + tol) && (sum - 1.0).abs() <= tol
    }

    /// Checks closed-simplex membership within `1e-12`.
    pub fn into_simplex(self) -> Result<Self, ModelError> {
        if self.is_in_simplex(1e-12) {
            Ok(self)
        } else {
            Err(ModelError::InvalidPortfolio(format!(
                "{:?} is not in the closed simplex",
                self.0.as_slice()
            )))
        }
    }
}

/// Admissible portfolio region. Each one contains the closed simplex.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConstraintSet {
    ClosedSimplex,
    BudgetHyperplane,
    BoxHyperplane { lo: Vec<f64>, hi: Vec<f64> },
}

impl ConstraintSet {
    /// Box-constrained budget set; the box must contain `[0, 1]^d`.
    pub fn boxed(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self, ModelError> {
        if lo.len() != hi.len() {
            return Err(ModelError::InvalidConstraint(
                "bound vectors differ in length".into(),
            ));
        }
        for (i, (&l, &h)) in lo.iter().zip(&hi).enumerate() {
            if !(l.is_finite() && h.is_finite()) {
                return Err(ModelError::InvalidConstraint(format!(
                    "bound {i} is not finite"
                )));
            }
            if l > 0.0 || h < 1.0 {
                return Err(ModelError::InvalidConstraint(format!(
                    "box [{l}, {h}] on coordinate {i} does not contain [0, 1]"
                )));
            }
        }
        Ok(ConstraintSet::BoxHyperplane { lo, hi })
    }

    pub fn contains(&self, pi: &Portfolio, tol: f64) -> bool {
        let w = pi.weights();
        let budget = (w.iter().sum::<f64>() - 1.0).abs() <= tol;
        match self {
            ConstraintSet::ClosedSimplex => pi.is_in_simplex(tol),
            ConstraintSet::BudgetHyperplane => budget,
            ConstraintSet::BoxHyperplane { lo, hi } => {
                budget
                    && w.iter()
                        .zip(lo.iter().zip(hi))
                        .all(|(&x, (&l, &h))| x >= l - tol && x <= h + tol)
            }
        }
    }
}

/// Uniform time grid `t0 + k dt`, `k = 0..=n_steps`, with `t0 = 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathGrid {
    pub t0: f64,
    pub dt: f64,
    pub n_steps: usize,
}

impl PathGrid {
    pub fn new(dt: f64, n_steps: usize) -> Result<Self, ModelError> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(ModelError::InvalidGrid(format!(
                "dt must be positive, got {dt}"
            )));
        }
        if n_steps == 0 {
            return Err(ModelError::InvalidGrid("n_steps must be positive".into()));
        }
        Ok(Self {
            t0: 0.0,
            dt,
            n_steps,
        })
    }

    /// Grid reaching `horizon` with steps of (at most) `dt`.
    pub fn with_horizon(horizon: f64, dt: f64) -> Result<Self, ModelError> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(ModelError::InvalidGrid(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        if !(dt > 0.0) {
            return Err(ModelError::InvalidGrid(format!(
                "dt must be positive, got {dt}"
            )));
        }
        let n = (horizon / dt - 1e-9).ceil().max(1.0) as usize;
        Self::new(horizon / n as f64, n)
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    pub fn horizon(&self) -> f64 {
        self.time(self.n_steps)
    }

    /// Step index closest to time `t`, clamped to the grid.
    pub fn step_at(&self, t: f64) -> usize {
        let k = ((t - self.t0) / self.dt).round();
        (k.max(0.0) as usize).min(self.n_steps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params(s0: Vec<f64>, c: DMatrix<f64>) -> MarketParams {
        let d = s0.len();
        MarketParams::new(
            DVector::zeros(d).into(),
            c.into(),
            0.0.into(),
            DVector::from_vec(s0),
        )
    }

    #[test]
    fn accepts_plain_market() {
        assert!(validate_params(params(vec![1.0, 1.0], DMatrix::identity(2, 2))).is_ok());
    }

    #[test]
    fn rejects_negative_initial_cap() {
        let err = validate_params(params(vec![1.0, -1.0], DMatrix::identity(2, 2))).unwrap_err();
        assert_eq!(
            err,
            ModelError::NonPositiveInitialCap {
                index: 1,
                value: -1.0
            }
        );
    }

    #[test]
    fn rejects_indefinite_covariance() {
        // eigenvalues 3 and -1
        let c = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        match validate_params(params(vec![1.0, 1.0], c)) {
            Err(ModelError::NegativeEigenvalue(l)) => assert!((l + 1.0).abs() < 1e-12),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_asymmetric_covariance() {
        let c = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(
            validate_params(params(vec![1.0, 1.0], c)),
            Err(ModelError::AsymmetricCovariance(_))
        ));
    }

    #[test]
    fn rejects_wrong_dimension() {
        assert!(matches!(
            validate_params(params(vec![1.0, 1.0], DMatrix::identity(3, 3))),
            Err(ModelError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn grid_times() {
        let g = PathGrid::with_horizon(1.0, 1e-3).unwrap();
        assert_eq!(g.n_steps, 1000);
        assert!((g.horizon() - 1.0).abs() < 1e-12);
        assert_eq!(g.step_at(0.5), 500);
        assert!(PathGrid::new(0.0, 10).is_err());
    }

    #[test]
    fn box_must_contain_simplex() {
        assert!(ConstraintSet::boxed(vec![-1.0, -1.0], vec![2.0, 2.0]).is_ok());
        assert!(ConstraintSet::boxed(vec![0.1, 0.0], vec![1.0, 1.0]).is_err());
        assert!(ConstraintSet::boxed(vec![0.0, 0.0], vec![0.9, 1.0]).is_err());
    }

    #[test]
    fn portfolio_helpers() {
        assert!(Portfolio::uniform(4).is_in_simplex(1e-12));
        assert!(Portfolio::unit(3, 2).is_in_simplex(0.0));
        assert!(!Portfolio::bank(3).is_in_simplex(1e-12));
        assert!(Portfolio::new(vec![0.5, 0.6]).into_simplex().is_err());
    }

    proptest! {
        #[test]
        fn validation_matches_invariants(
            s0 in proptest::collection::vec(-1.0f64..2.0, 3),
            a_entries in proptest::collection::vec(-2.0f64..2.0, 9),
            shift in -2.0f64..2.0,
            skew in prop_oneof![Just(0.0), -1.0f64..1.0],
        ) {
            let a = DMatrix::from_row_slice(3, 3, &a_entries);
            let mut c = a.transpose() * &a + DMatrix::identity(3, 3) * shift;
            c[(0, 1)] += skew;
            let expected_ok = s0.iter().all(|&s| s > 0.0)
                && linalg::asymmetry(&c) <= PSD_TOL * linalg::max_abs(&c).max(1.0)
                && linalg::min_eigenvalue(&c) >= -PSD_TOL * linalg::max_abs(&c).max(1.0);
            let got = validate_params(params(s0, c));
            prop_assert_eq!(got.is_ok(), expected_ok);
        }
    }
}
