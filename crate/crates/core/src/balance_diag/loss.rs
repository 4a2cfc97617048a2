//! Loss of balance `L = int (g* - g^kappa) dt` and the finite-horizon
//! balanced/unbalanced classifier.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{DiagError, StepCoeffs};
use crate::growth_opt::{growth_rate_unchecked, SimplexOptimizer};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BalanceThresholds {
    /// Tail slope below which `L` counts as settled (per year).
    pub eps_slope: f64,
    /// Largest terminal `L` compatible with a balanced outcome.
    pub l_cap: f64,
}

impl Default for BalanceThresholds {
    fn default() -> Self {
        Self {
            eps_slope: 1e-3,
            l_cap: 50.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    Balanced,
    Unbalanced,
    Indeterminate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BalanceReport {
    pub times: Vec<f64>,
    pub l_path: Vec<f64>,
    pub classification: Classification,
    pub l_terminal: f64,
    /// Average `dL/dt` over the final quarter of the horizon.
    pub slope_tail: f64,
}

/// `g* - g^kappa` over the closed simplex together with the maximizer.
pub fn loss_increment_rate(
    opt: &mut SimplexOptimizer,
    kappa: &DVector<f64>,
    a: &DVector<f64>,
    c: &DMatrix<f64>,
    r: f64,
) -> Result<(f64, f64, DVector<f64>), DiagError> {
    let rho = opt.argmax(a, c)?;
    let g_star = growth_rate_unchecked(rho.as_slice(), a.as_slice(), c, r);
    let g_kappa = growth_rate_unchecked(kappa.as_slice(), a.as_slice(), c, r);
    Ok((g_star - g_kappa, g_star, rho))
}

/// Clips rounding-level negative rates to zero.
pub(crate) fn clip_rate(step: usize, rate: f64, g_star: f64) -> Result<f64, DiagError> {
    if rate >= 0.0 {
        Ok(rate)
    } else if rate >= -1e-12 * g_star.abs().max(1.0) {
        Ok(0.0)
    } else {
        Err(DiagError::NegativeIncrement { step, value: rate })
    }
}

/// `L` at every grid point of the path (`L_0 = 0`).
pub fn loss_of_balance(steps: &[StepCoeffs]) -> Result<Vec<f64>, DiagError> {
    let mut opt = SimplexOptimizer::new();
    let mut l = Vec::with_capacity(steps.len() + 1);
    l.push(0.0);
    let mut acc = 0.0;
    for (k, s) in steps.iter().enumerate() {
        let (rate, g_star, _) = loss_increment_rate(&mut opt, &s.kappa, &s.a, &s.c, s.r)?;
        acc += clip_rate(k, rate, g_star)? * s.dt;
        l.push(acc);
    }
    Ok(l)
}

fn interpolate(times: &[f64], values: &[f64], t: f64) -> f64 {
    let hi = times.partition_point(|&x| x < t);
    if hi == 0 {
        return values[0];
    }
    if hi >= times.len() {
        return values[values.len() - 1];
    }
    let (t0, t1) = (times[hi - 1], times[hi]);
    let w = (t - t0) / (t1 - t0);
    values[hi - 1] * (1.0 - w) + values[hi] * w
}

/// Classifies a sampled `L` path on `[0, T]`, `T = times.last()`. Returns the
/// class and the tail slope `(L_T - L_{3T/4}) / (T/4)`.
pub fn classify_outcome(
    times: &[f64],
    l: &[f64],
    thresholds: BalanceThresholds,
) -> (Classification, f64) {
    let n = times.len();
    if n < 2 {
        return (Classification::Indeterminate, f64::NAN);
    }
    let horizon = times[n - 1];
    let start = times[0] + 0.75 * (horizon - times[0]);
    let l_end = l[n - 1];
    let slope = (l_end - interpolate(times, l, start)) / (horizon - start);
    let class = if slope < thresholds.eps_slope && l_end < thresholds.l_cap {
        Classification::Balanced
    } else if slope > 10.0 * thresholds.eps_slope {
        Classification::Unbalanced
    } else {
        Classification::Indeterminate
    };
    (class, slope)
}

pub fn balance_report(
    times: Vec<f64>,
    l_path: Vec<f64>,
    thresholds: BalanceThresholds,
) -> BalanceReport {
    let (classification, slope_tail) = classify_outcome(&times, &l_path, thresholds);
    let l_terminal = l_path.last().copied().unwrap_or(0.0);
    BalanceReport {
        times,
        l_path,
        classification,
        l_terminal,
        slope_tail,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(f: impl Fn(f64) -> f64, horizon: f64, n: usize) -> (Vec<f64>, Vec<f64>) {
        let times: Vec<f64> = (0..=n).map(|k| horizon * k as f64 / n as f64).collect();
        let l = times.iter().map(|&t| f(t)).collect();
        (times, l)
    }

    #[test]
    fn zero_loss_is_balanced() {
        let (t, l) = sample(|_| 0.0, 10.0, 100);
        assert_eq!(
            classify_outcome(&t, &l, BalanceThresholds::default()).0,
            Classification::Balanced
        );
    }

    #[test]
    fn linear_loss_is_unbalanced() {
        for horizon in [10.0, 100.0] {
            let (t, l) = sample(|t| 0.25 * t, horizon, 1000);
            let (class, slope) = classify_outcome(&t, &l, BalanceThresholds::default());
            assert_eq!(class, Classification::Unbalanced);
            assert!((slope - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn saturating_loss_is_balanced() {
        let (t, l) = sample(|t| 1.0 - (-t).exp(), 10.0, 1000);
        assert_eq!(
            classify_outcome(&t, &l, BalanceThresholds::default()).0,
            Classification::Balanced
        );
    }

    #[test]
    fn middle_band_is_indeterminate() {
        let (t, l) = sample(|t| 5e-3 * t, 10.0, 100);
        assert_eq!(
            classify_outcome(&t, &l, BalanceThresholds::default()).0,
            Classification::Indeterminate
        );
    }

    #[test]
    fn clipping_rules() {
        assert_eq!(clip_rate(0, -1e-14, 0.5).unwrap(), 0.0);
        assert!(clip_rate(3, -1e-6, 0.5).is_err());
    }
}
