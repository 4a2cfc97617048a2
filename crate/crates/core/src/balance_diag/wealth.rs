//! Wealth processes of portfolios and the decomposition of the market's
//! wealth relative to the growth-optimal portfolio.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::loss::loss_of_balance;
use super::{Coefficients, DiagError, StepCoeffs};
use crate::growth_opt::{growth_rate_unchecked, SimplexOptimizer};
use crate::market_model::{linalg, VectorSpec};
use crate::sde_engine::{PathObserver, SimError, Transition};

/// Discretization of `dV/V = (r + <pi, a - r 1>) dt + <pi, dM>`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WealthScheme {
    /// Discrete self-financing rebalancing against the simulated prices:
    /// holding `kappa` reproduces `<S,1>/<S_0,1>` and `e_i` reproduces
    /// `S^i/S^i_0` exactly. Needs capitalizations.
    Rebalanced,
    /// `log V += g^pi dt + <pi, dM>`; `V^pi / V^rho` is then an exact
    /// supermartingale step by step.
    LogEuler,
}

/// How the portfolio is chosen at each step.
#[derive(Clone, Debug)]
pub enum PortfolioRule {
    Spec(VectorSpec),
    Market,
    GrowthOptimal,
}

impl PortfolioRule {
    pub fn fixed(weights: Vec<f64>) -> Self {
        PortfolioRule::Spec(DVector::from_vec(weights).into())
    }

    fn weights(
        &self,
        s: &StepCoeffs,
        opt: &mut SimplexOptimizer,
    ) -> Result<DVector<f64>, DiagError> {
        Ok(match self {
            PortfolioRule::Spec(spec) => spec.eval(s.t, s.kappa.as_slice())?,
            PortfolioRule::Market => s.kappa.clone(),
            PortfolioRule::GrowthOptimal => opt.argmax(&s.a, &s.c)?,
        })
    }
}

/// `V^pi` at every grid point with `V_0 = 1`.
pub fn wealth_path(
    rule: &PortfolioRule,
    steps: &[StepCoeffs],
    scheme: WealthScheme,
) -> Result<Vec<f64>, DiagError> {
    let mut opt = SimplexOptimizer::new();
    let mut out = Vec::with_capacity(steps.len() + 1);
    out.push(1.0);
    let mut log_v = 0.0;
    for (k, s) in steps.iter().enumerate() {
        let pi = rule.weights(s, &mut opt)?;
        if pi.len() != s.d() {
            return Err(DiagError::ShapeMismatch(format!(
                "portfolio of length {} for d = {}",
                pi.len(),
                s.d()
            )));
        }
        match scheme {
            WealthScheme::LogEuler => {
                let g = growth_rate_unchecked(pi.as_slice(), s.a.as_slice(), &s.c, s.r);
                log_v += g * s.dt + pi.dot(&s.dm);
            }
            WealthScheme::Rebalanced => {
                let (Some(s0), Some(s1)) = (&s.caps, &s.caps_next) else {
                    return Err(DiagError::InvalidInput(format!(
                        "rebalanced wealth needs capitalizations (missing at step {k})"
                    )));
                };
                let stock: f64 = (0..s.d()).map(|i| pi[i] * (s1[i] / s0[i] - 1.0)).sum();
                let bank = (1.0 - pi.sum()) * (s.r * s.dt).exp_m1();
                log_v += (stock + bank).ln_1p();
            }
        }
        out.push(log_v.exp());
    }
    Ok(out)
}

/// `log(V^kappa / V^rho) = -L + int <kappa - rho, dM>` along one path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WealthDecomposition {
    pub times: Vec<f64>,
    /// `-L_t`.
    pub drift: Vec<f64>,
    pub martingale: Vec<f64>,
    /// `log(V^kappa / V^rho)` from the two wealth processes.
    pub log_ratio: Vec<f64>,
    /// `max_t |drift + martingale - log_ratio|`.
    pub max_defect: f64,
}

pub fn log_relative_wealth_decomposition(
    steps: &[StepCoeffs],
) -> Result<WealthDecomposition, DiagError> {
    let l = loss_of_balance(steps)?;
    let v_market = wealth_path(&PortfolioRule::Market, steps, WealthScheme::LogEuler)?;
    let v_opt = wealth_path(&PortfolioRule::GrowthOptimal, steps, WealthScheme::LogEuler)?;
    let mut opt = SimplexOptimizer::new();
    let mut times = Vec::with_capacity(steps.len() + 1);
    let mut martingale = Vec::with_capacity(steps.len() + 1);
    times.push(steps.first().map_or(0.0, |s| s.t));
    martingale.push(0.0);
    let mut acc = 0.0;
    for s in steps {
        let rho = opt.argmax(&s.a, &s.c)?;
        acc += (&s.kappa - rho).dot(&s.dm);
        martingale.push(acc);
        times.push(s.t + s.dt);
    }
    let drift: Vec<f64> = l.iter().map(|x| -x).collect();
    let log_ratio: Vec<f64> = v_market
        .iter()
        .zip(&v_opt)
        .map(|(a, b)| a.ln() - b.ln())
        .collect();
    let max_defect = (0..log_ratio.len())
        .map(|k| (drift[k] + martingale[k] - log_ratio[k]).abs())
        .fold(0.0, f64::max);
    Ok(WealthDecomposition {
        times,
        drift,
        martingale,
        log_ratio,
        max_defect,
    })
}

/// Streams `V^pi / V^rho` (log-Euler scheme, `rho` growth-optimal over the
/// simplex at each step) for a family of fixed portfolios and records it at
/// chosen steps.
#[derive(Clone, Debug)]
pub struct WealthRatioTracker {
    coeffs: Coefficients,
    portfolios: Vec<DVector<f64>>,
    checkpoints: Vec<usize>,
    opt: SimplexOptimizer,
    log_ratio: Vec<f64>,
    /// `values[k][j]`: ratio for portfolio `j` at checkpoint `k`.
    pub values: Vec<Vec<f64>>,
}

impl WealthRatioTracker {
    pub fn new(
        coeffs: Coefficients,
        portfolios: Vec<DVector<f64>>,
        checkpoints: Vec<usize>,
    ) -> Self {
        let n = portfolios.len();
        let mut values = Vec::new();
        if checkpoints.contains(&0) {
            values.push(vec![1.0; n]);
        }
        Self {
            coeffs,
            portfolios,
            checkpoints,
            opt: SimplexOptimizer::new(),
            log_ratio: vec![0.0; n],
            values,
        }
    }
}

impl PathObserver for WealthRatioTracker {
    fn transition(&mut self, tr: &Transition<'_>) -> Result<(), SimError> {
        let r = self.coeffs.r.eval(tr.t, tr.kappa)?;
        let a = self.coeffs.a.eval(tr.t, tr.kappa, tr.c, r)?;
        let rho = self
            .opt
            .argmax(&a, tr.c)
            .map_err(|e| SimError::Observer(e.to_string()))?;
        let g_rho = growth_rate_unchecked(rho.as_slice(), a.as_slice(), tr.c, r);
        let rho_dm = linalg::dot(rho.as_slice(), tr.dm);
        for (pi, lr) in self.portfolios.iter().zip(self.log_ratio.iter_mut()) {
            let g_pi = growth_rate_unchecked(pi.as_slice(), a.as_slice(), tr.c, r);
            *lr += (g_pi - g_rho) * tr.dt + linalg::dot(pi.as_slice(), tr.dm) - rho_dm;
        }
        if self.checkpoints.contains(&(tr.step + 1)) {
            self.values
                .push(self.log_ratio.iter().map(|x| x.exp()).collect());
        }
        Ok(())
    }
}

/// `2 (g^rho - g^kappa) - <rho - kappa, c (rho - kappa)>`, nonnegative when
/// `rho` is growth-optimal over a convex set containing `kappa`.
pub fn relative_growth_excess(
    rho: &DVector<f64>,
    kappa: &DVector<f64>,
    a: &DVector<f64>,
    c: &DMatrix<f64>,
    r: f64,
) -> f64 {
    let g = growth_rate_unchecked(rho.as_slice(), a.as_slice(), c, r)
        - growth_rate_unchecked(kappa.as_slice(), a.as_slice(), c, r);
    let diff = rho - kappa;
    2.0 * g - linalg::quad_form(c, diff.as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn steps_no_noise(a: &[f64], r: f64, n: usize, dt: f64) -> Vec<StepCoeffs> {
        let d = a.len();
        (0..n)
            .map(|k| StepCoeffs {
                t: k as f64 * dt,
                dt,
                kappa: DVector::from_element(d, 1.0 / d as f64),
                a: DVector::from_column_slice(a),
                c: DMatrix::zeros(d, d),
                r,
                dm: DVector::zeros(d),
                caps: Some(DVector::from_element(d, 1.0)),
                caps_next: Some(DVector::from_element(d, 1.0)),
            })
            .collect()
    }

    #[test]
    fn bank_account_grows_at_rate() {
        let steps = steps_no_noise(&[0.0, 0.0], 0.05, 100, 0.01);
        for scheme in [WealthScheme::LogEuler, WealthScheme::Rebalanced] {
            let v = wealth_path(&PortfolioRule::fixed(vec![0.0, 0.0]), &steps, scheme).unwrap();
            assert!((v[100] - 0.05f64.exp()).abs() < 1e-12);
        }
    }

    #[test]
    fn no_noise_decomposition_is_pure_drift() {
        let steps = steps_no_noise(&[0.0, 1.0], 0.0, 50, 0.02);
        let dec = log_relative_wealth_decomposition(&steps).unwrap();
        assert!(dec.martingale.iter().all(|&m| m == 0.0));
        assert!(dec.max_defect < 1e-13);
        // kappa uniform against rho = e_1: L grows at 1/2 per year
        assert!((dec.drift[50] + 0.5).abs() < 1e-12);
    }

    #[test]
    fn relative_growth_bound_holds_at_optimum() {
        let c = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.5]);
        let a = DVector::from_vec(vec![0.2, -0.1]);
        let rho = SimplexOptimizer::new().argmax(&a, &c).unwrap();
        for x in [0.0, 0.3, 0.9] {
            let k = DVector::from_vec(vec![x, 1.0 - x]);
            assert!(relative_growth_excess(&rho, &k, &a, &c, 0.0) >= -1e-12);
        }
    }
}
