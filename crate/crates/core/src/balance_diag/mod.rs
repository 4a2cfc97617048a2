//! Pathwise diagnostics: loss of balance, wealth processes, company
//! distances, limiting capital distribution and law-of-large-numbers checks.

mod limiting;
mod lln;
mod loss;
mod segregation;
mod tracker;
mod wealth;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::growth_opt::GrowthError;
use crate::market_model::{
    linalg, psd_factor, MarketParams, MatrixSpec, ModelError, ScalarSpec, VectorSpec,
};
use crate::sde_engine::{PathSet, SimError};

pub use limiting::{
    classify_limit, limiting_distribution, tail_summaries, LimitClass, LimitingReport, TailSummary,
    TailTracker,
};
pub use lln::{
    bank_criterion_statistic, brownian_lln_ratios, exponential_martingale_terminals,
    lln_diagnostic, LlnResult,
};
pub(crate) use loss::clip_rate;
pub use loss::{
    balance_report, classify_outcome, loss_increment_rate, loss_of_balance, BalanceReport,
    BalanceThresholds, Classification,
};
pub use segregation::{
    distance_matrix, equivalence_classes, pairwise_distance, pairwise_rate, DistanceMatrix,
    Partition,
};
pub use tracker::{DiagnosticsConfig, PathDiagnostics, PathDiagnosticsOutput};
pub use wealth::{
    log_relative_wealth_decomposition, relative_growth_excess, wealth_path, PortfolioRule,
    WealthDecomposition, WealthRatioTracker, WealthScheme,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiagError {
    #[error("loss-of-balance increment {value:e} at step {step} is negative beyond rounding")]
    NegativeIncrement { step: usize, value: f64 },
    #[error("horizon too short: {fraction:.3} of paths are indeterminate")]
    HorizonTooShort { fraction: f64 },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Growth(#[from] GrowthError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Where the rate of return comes from.
#[derive(Clone, Debug)]
pub enum DriftSource {
    Spec(VectorSpec),
    /// `a = c kappa + r 1`: the perfectly balanced choice.
    Balanced,
}

impl DriftSource {
    pub fn eval(
        &self,
        t: f64,
        kappa: &[f64],
        c: &DMatrix<f64>,
        r: f64,
    ) -> Result<DVector<f64>, ModelError> {
        match self {
            DriftSource::Spec(spec) => spec.eval(t, kappa),
            DriftSource::Balanced => {
                let mut a = DVector::zeros(kappa.len());
                linalg::mat_vec_into(c, kappa, a.as_mut_slice());
                a.add_scalar_mut(r);
                Ok(a)
            }
        }
    }
}

/// Rate of return and interest rate of a market, evaluated along a path.
#[derive(Clone, Debug)]
pub struct Coefficients {
    pub a: DriftSource,
    pub r: ScalarSpec,
}

impl Coefficients {
    pub fn of(params: &MarketParams) -> Self {
        Self {
            a: DriftSource::Spec(params.a.clone()),
            r: params.r.clone(),
        }
    }

    pub fn balanced(r: ScalarSpec) -> Self {
        Self {
            a: DriftSource::Balanced,
            r,
        }
    }
}

/// Market data of one step `t -> t + dt`, evaluated at the left point.
#[derive(Clone, Debug)]
pub struct StepCoeffs {
    pub t: f64,
    pub dt: f64,
    pub kappa: DVector<f64>,
    pub a: DVector<f64>,
    pub c: DMatrix<f64>,
    pub r: f64,
    /// Martingale increment `sigma dW` over the step.
    pub dm: DVector<f64>,
    pub caps: Option<DVector<f64>>,
    pub caps_next: Option<DVector<f64>>,
}

impl StepCoeffs {
    pub fn d(&self) -> usize {
        self.kappa.len()
    }
}

/// Rebuilds the per-step coefficients of a densely recorded path from the
/// stored Brownian increments.
pub fn path_coefficients(
    paths: &PathSet,
    path: usize,
    c_spec: &MatrixSpec,
    coeffs: &Coefficients,
) -> Result<Vec<StepCoeffs>, DiagError> {
    if !paths.is_dense() || paths.increments.is_none() {
        return Err(DiagError::InvalidInput(
            "path diagnostics need every step and its Brownian increments".into(),
        ));
    }
    let grid = paths.grid;
    let d = paths.d;
    let mut out = Vec::with_capacity(grid.n_steps);
    for step in 0..grid.n_steps {
        let t = grid.time(step);
        let kappa = paths.kappa_at(path, step);
        let c = c_spec.eval(t, kappa)?;
        let sigma = psd_factor(&c)?;
        let dw = paths.increment(path, step).expect("checked above");
        let mut dm = DVector::zeros(d);
        linalg::mat_vec_into(&sigma, dw, dm.as_mut_slice());
        let r = coeffs.r.eval(t, kappa)?;
        let a = coeffs.a.eval(t, kappa, &c, r)?;
        out.push(StepCoeffs {
            t,
            dt: grid.dt,
            kappa: DVector::from_column_slice(kappa),
            a,
            c,
            r,
            dm,
            caps: paths.caps_at(path, step).map(DVector::from_column_slice),
            caps_next: paths
                .caps_at(path, step + 1)
                .map(DVector::from_column_slice),
        });
    }
    Ok(out)
}

/// Drift of `kappa` in the general capitalization model:
/// `kappa^i <e_i - kappa, a - c kappa>` per unit time.
pub fn relcap_drift(kappa: &DVector<f64>, a: &DVector<f64>, c: &DMatrix<f64>) -> DVector<f64> {
    let v = a - c * kappa;
    let mean = kappa.dot(&v);
    DVector::from_iterator(
        kappa.len(),
        (0..kappa.len()).map(|i| kappa[i] * (v[i] - mean)),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_drift_vanishes() {
        let c = DMatrix::from_row_slice(3, 3, &[1.0, 0.2, 0.0, 0.2, 0.5, 0.1, 0.0, 0.1, 2.0]);
        let k = DVector::from_vec(vec![0.2, 0.5, 0.3]);
        let a = DriftSource::Balanced
            .eval(0.0, k.as_slice(), &c, 0.04)
            .unwrap();
        assert!(relcap_drift(&k, &a, &c).amax() < 1e-15);
    }

    #[test]
    fn unbalanced_drift_moves_capital() {
        // c = 0, a = (0, 1): capital flows to company 1 at rate kappa^0 kappa^1.
        let k = DVector::from_vec(vec![0.5, 0.5]);
        let drift = relcap_drift(
            &k,
            &DVector::from_vec(vec![0.0, 1.0]),
            &DMatrix::zeros(2, 2),
        );
        assert!((drift[1] - 0.25).abs() < 1e-15 && (drift[0] + 0.25).abs() < 1e-15);
    }
}
