//! Law-of-large-numbers and stochastic-exponential diagnostics, plus the
//! bank-introduction statistic.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{DiagError, StepCoeffs};
use crate::growth_opt::GrowthError;
use crate::market_model::ScalarSpec;
use crate::sde_engine::{rng, run_ensemble};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LlnResult {
    /// `X_T / B_T`.
    pub ratio: f64,
    pub b_terminal: f64,
    /// `|X_T / B_T| < 0.05` with `B_T > 100`.
    pub converged: bool,
}

/// Tail ratio of a process `X` against a nondecreasing clock `B`.
pub fn lln_diagnostic(x: &[f64], b: &[f64]) -> Result<LlnResult, DiagError> {
    if x.len() != b.len() || x.is_empty() {
        return Err(DiagError::ShapeMismatch(format!(
            "X has {} points, B has {}",
            x.len(),
            b.len()
        )));
    }
    if b.windows(2).any(|w| w[1] < w[0]) {
        return Err(DiagError::InvalidInput("B must be nondecreasing".into()));
    }
    let b_terminal = b[b.len() - 1];
    let x_terminal = x[x.len() - 1];
    let ratio = if b_terminal == 0.0 && x_terminal == 0.0 {
        0.0
    } else {
        x_terminal / b_terminal
    };
    Ok(LlnResult {
        ratio,
        b_terminal,
        converged: b_terminal > 100.0 && ratio.abs() < 0.05,
    })
}

fn brownian_terminals(horizon: f64, dt: f64, n_paths: usize, seed: u64) -> Vec<f64> {
    let n = (horizon / dt).round().max(1.0) as usize;
    let h = horizon / n as f64;
    let sq = h.sqrt();
    run_ensemble(n_paths, |p| {
        let mut g = rng::path_rng(seed, p);
        let mut z = [0.0];
        let mut w = 0.0;
        for _ in 0..n {
            rng::fill_normals(&mut g, &mut z);
            w += sq * z[0];
        }
        Ok(w)
    })
    .expect("Brownian sampling cannot fail")
}

/// `W_T / T` for independent Brownian paths sampled on a grid of step `dt`.
pub fn brownian_lln_ratios(horizon: f64, dt: f64, n_paths: usize, seed: u64) -> Vec<LlnResult> {
    brownian_terminals(horizon, dt, n_paths, seed)
        .into_iter()
        .map(|w| lln_diagnostic(&[0.0, w], &[0.0, horizon]).expect("clock is increasing"))
        .collect()
}

/// `E(W)_T = exp(W_T - T/2)` for independent Brownian paths.
pub fn exponential_martingale_terminals(
    horizon: f64,
    dt: f64,
    n_paths: usize,
    seed: u64,
) -> Vec<f64> {
    brownian_terminals(horizon, dt, n_paths, seed)
        .into_iter()
        .map(|w| (w - 0.5 * horizon).exp())
        .collect()
}

/// `int <1, c^-1 1> |r_tilde - r|^2 dt` along a path: finite exactly when
/// offering the rate `r_tilde` keeps the market balanced.
pub fn bank_criterion_statistic(
    steps: &[StepCoeffs],
    r_tilde: &ScalarSpec,
) -> Result<f64, DiagError> {
    let mut acc = 0.0;
    for s in steps {
        let d = s.d();
        let ones = DVector::from_element(d, 1.0);
        let weight =
            s.c.clone()
                .cholesky()
                .map(|ch| ch.solve(&ones).sum())
                .ok_or(GrowthError::SingularCovariance {
                    condition: f64::INFINITY,
                })?;
        let rt = r_tilde.eval(s.t, s.kappa.as_slice())?;
        acc += weight * (rt - s.r).powi(2) * s.dt;
    }
    Ok(acc)
}
