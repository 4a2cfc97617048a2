//! Growth rates, growth-optimal portfolios and the implied interest rate.

pub mod qp;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::market_model::{linalg, ConstraintSet, ModelError, Portfolio};
use qp::{BoxQp, QpFailure};

/// Largest condition number accepted when `c` must be inverted.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GrowthError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("covariance is singular or ill-conditioned (condition number {condition:e})")]
    SingularCovariance { condition: f64 },
    #[error("no growth-optimal portfolio: {0}")]
    NoSolution(String),
    #[error("infeasible constraint set: {0}")]
    InfeasibleConstraint(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Clone, Debug)]
pub struct GrowthProblem {
    pub a: DVector<f64>,
    pub c: DMatrix<f64>,
    pub r: f64,
    pub constraint: ConstraintSet,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthSolution {
    pub rho: Portfolio,
    pub g_star: f64,
    /// Rate making `c rho = a - r 1` (budget-hyperplane problems only).
    pub implied_rate: Option<f64>,
}

fn check_shapes(n: usize, a: &DVector<f64>, c: &DMatrix<f64>) -> Result<(), GrowthError> {
    if a.len() != n || c.nrows() != n || c.ncols() != n {
        return Err(GrowthError::ShapeMismatch(format!(
            "portfolio of length {n}, a of length {}, c of shape {}x{}",
            a.len(),
            c.nrows(),
            c.ncols()
        )));
    }
    Ok(())
}

/// `r + <pi, a - r 1> - 1/2 <pi, c pi>`.
pub fn growth_rate(
    pi: &Portfolio,
    a: &DVector<f64>,
    c: &DMatrix<f64>,
    r: f64,
) -> Result<f64, GrowthError> {
    check_shapes(pi.len(), a, c)?;
    Ok(growth_rate_unchecked(pi.weights(), a.as_slice(), c, r))
}

pub(crate) fn growth_rate_unchecked(pi: &[f64], a: &[f64], c: &DMatrix<f64>, r: f64) -> f64 {
    let excess: f64 = pi.iter().zip(a).map(|(p, ai)| p * (ai - r)).sum();
    r + excess - 0.5 * linalg::quad_form(c, pi)
}

fn condition_number(c: &DMatrix<f64>) -> f64 {
    let sv = c.singular_values();
    let max = sv.max();
    let min = sv.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// `(<a, c^-1 1> - 1) / <1, c^-1 1>`.
pub fn implied_interest_rate(a: &DVector<f64>, c: &DMatrix<f64>) -> Result<f64, GrowthError> {
    let d = a.len();
    check_shapes(d, a, c)?;
    let condition = condition_number(c);
    if !(condition < MAX_CONDITION) {
        return Err(GrowthError::SingularCovariance { condition });
    }
    let lu = c.clone().lu();
    let ones = DVector::from_element(d, 1.0);
    let c_inv_one = lu
        .solve(&ones)
        .ok_or(GrowthError::SingularCovariance { condition })?;
    let denom = c_inv_one.sum();
    Ok((a.dot(&c_inv_one) - 1.0) / denom)
}

/// Maximizes growth over `{<x, 1> = 1}` via the bordered system
/// `[[c, 1], [1', 0]] [rho; r] = [a; 1]`.
///
/// The rate is unique whenever the system is consistent; for singular `c`
/// the minimum-norm `rho` is returned.
pub fn growth_optimal_hyperplane(
    a: &DVector<f64>,
    c: &DMatrix<f64>,
) -> Result<GrowthSolution, GrowthError> {
    let d = a.len();
    check_shapes(d, a, c)?;
    let mut k = DMatrix::zeros(d + 1, d + 1);
    k.view_mut((0, 0), (d, d)).copy_from(c);
    for i in 0..d {
        k[(i, d)] = 1.0;
        k[(d, i)] = 1.0;
    }
    let mut rhs = DVector::zeros(d + 1);
    rhs.rows_mut(0, d).copy_from(a);
    rhs[d] = 1.0;
    let scale = 1.0 + k.amax() + rhs.amax();

    let direct = k.clone().full_piv_lu().solve(&rhs).filter(|s| {
        let res = (&k * s - &rhs).amax();
        res <= 1e-12 * scale && condition_number(&k) < MAX_CONDITION
    });
    let sol = match direct {
        Some(s) => s,
        None => {
            let (s, res) = linalg::min_norm_solve(&k, &rhs, 1e-12);
            if res > 1e-9 * scale {
                return Err(GrowthError::NoSolution(format!(
                    "bordered system is inconsistent (residual {res:e})"
                )));
            }
            s
        }
    };
    let rho = Portfolio(sol.rows(0, d).into_owned());
    let rate = sol[d];
    let g_star = growth_rate_unchecked(rho.weights(), a.as_slice(), c, rate);
    Ok(GrowthSolution {
        rho,
        g_star,
        implied_rate: Some(rate),
    })
}

fn bounds_of(constraint: &ConstraintSet, d: usize) -> Result<(Vec<f64>, Vec<f64>), GrowthError> {
    match constraint {
        // The budget row already caps every coordinate at one.
        ConstraintSet::ClosedSimplex => Ok((vec![0.0; d], vec![f64::INFINITY; d])),
        ConstraintSet::BoxHyperplane { lo, hi } => {
            if lo.len() != d || hi.len() != d {
                return Err(GrowthError::ShapeMismatch(format!(
                    "box bounds of length {}/{} for d = {d}",
                    lo.len(),
                    hi.len()
                )));
            }
            let lo_sum: f64 = lo.iter().sum();
            let hi_sum: f64 = hi.iter().sum();
            if lo.iter().zip(hi).any(|(l, h)| l > h) || lo_sum > 1.0 || hi_sum < 1.0 {
                return Err(GrowthError::InfeasibleConstraint(
                    "box does not meet the budget hyperplane".into(),
                ));
            }
            if lo.iter().chain(hi).any(|b| !b.is_finite()) {
                return Err(GrowthError::NoSolution("box must be bounded".into()));
            }
            Ok((lo.clone(), hi.clone()))
        }
        ConstraintSet::BudgetHyperplane => unreachable!("dispatched to the bordered system"),
    }
}

/// Feasible starting point inside the box: uniform when it fits (always the
/// case for sets containing the simplex), otherwise a greedy fill.
fn feasible_start(lo: &[f64], hi: &[f64]) -> DVector<f64> {
    let d = lo.len();
    let u = 1.0 / d as f64;
    if lo.iter().zip(hi).all(|(&l, &h)| l <= u && u <= h) {
        return DVector::from_element(d, u);
    }
    let mut x: Vec<f64> = lo.to_vec();
    let mut left = 1.0 - x.iter().sum::<f64>();
    for i in 0..d {
        let room = (hi[i] - x[i]).min(left);
        x[i] += room;
        left -= room;
    }
    DVector::from_vec(x)
}

/// Maximizes growth over the closed simplex or a box-budget set.
///
/// When `c` is singular and the maximizer is not unique, the minimum-norm
/// maximizer is returned.
pub fn growth_optimal_constrained(problem: &GrowthProblem) -> Result<GrowthSolution, GrowthError> {
    let d = problem.a.len();
    check_shapes(d, &problem.a, &problem.c)?;
    if let ConstraintSet::BudgetHyperplane = problem.constraint {
        return growth_optimal_hyperplane(&problem.a, &problem.c);
    }
    let (lo, hi) = bounds_of(&problem.constraint, d)?;
    let rho = maximize_concave_quadratic(&problem.c, &problem.a, &lo, &hi)?;
    let g_star = growth_rate_unchecked(rho.as_slice(), problem.a.as_slice(), &problem.c, problem.r);
    Ok(GrowthSolution {
        rho: Portfolio(rho),
        g_star,
        implied_rate: None,
    })
}

/// `argmax <x, a> - 1/2 <x, c x>` over `{<x,1> = 1, lo <= x <= hi}`, with
/// minimum-norm tie-breaking.
pub(crate) fn maximize_concave_quadratic(
    c: &DMatrix<f64>,
    a: &DVector<f64>,
    lo: &[f64],
    hi: &[f64],
) -> Result<DVector<f64>, GrowthError> {
    let d = a.len();
    let a_eq = DMatrix::from_element(1, d, 1.0);
    let b_eq = DVector::from_element(1, 1.0);
    let h = -a;
    let qp = BoxQp {
        g: c,
        h: &h,
        a_eq: &a_eq,
        b_eq: &b_eq,
        lo,
        hi,
    };
    let x = qp.solve(feasible_start(lo, hi)).map_err(qp_error)?;

    let scale = 1.0 + c.amax();
    if linalg::min_eigenvalue(c) > 1e-9 * scale {
        return Ok(x);
    }
    // Every maximizer shares c x and <a, x>; among them pick the shortest.
    let cx = c * &x;
    let mut rows = DMatrix::zeros(d + 2, d);
    let mut rhs = DVector::zeros(d + 2);
    for j in 0..d {
        rows[(0, j)] = 1.0;
        rows[(d + 1, j)] = a[j];
    }
    rows.view_mut((1, 0), (d, d)).copy_from(c);
    rhs[0] = 1.0;
    rhs.rows_mut(1, d).copy_from(&cx);
    rhs[d + 1] = a.dot(&x);
    let eye = DMatrix::identity(d, d);
    let zero = DVector::zeros(d);
    let tie = BoxQp {
        g: &eye,
        h: &zero,
        a_eq: &rows,
        b_eq: &rhs,
        lo,
        hi,
    };
    match tie.solve(x.clone()) {
        Ok(y) if qp.objective(&y) <= qp.objective(&x) + 1e-13 * (1.0 + qp.objective(&x).abs()) => {
            Ok(y)
        }
        _ => Ok(x),
    }
}

/// Simplex maximizer for repeated per-step use. Caches the bordered
/// factorization while `c` stays the same, so interior optima cost one
/// back-substitution; boundary optima fall back to the active-set solver.
#[derive(Clone, Debug, Default)]
pub struct SimplexOptimizer {
    key: Option<DMatrix<f64>>,
    lu: Option<nalgebra::linalg::FullPivLU<f64, nalgebra::Dyn, nalgebra::Dyn>>,
}

impl SimplexOptimizer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn argmax(
        &mut self,
        a: &DVector<f64>,
        c: &DMatrix<f64>,
    ) -> Result<DVector<f64>, GrowthError> {
        let d = a.len();
        check_shapes(d, a, c)?;
        match d {
            1 => return Ok(DVector::from_element(1, 1.0)),
            2 => return Ok(two_asset_argmax(a, c)),
            _ => {}
        }
        if self.key.as_ref() != Some(c) {
            let scale = 1.0 + c.amax();
            self.lu = (linalg::min_eigenvalue(c) > 1e-9 * scale).then(|| {
                let mut k = DMatrix::zeros(d + 1, d + 1);
                k.view_mut((0, 0), (d, d)).copy_from(c);
                for i in 0..d {
                    k[(i, d)] = 1.0;
                    k[(d, i)] = 1.0;
                }
                k.full_piv_lu()
            });
            self.key = Some(c.clone());
        }
        if let Some(lu) = &self.lu {
            let mut rhs = DVector::zeros(d + 1);
            rhs.rows_mut(0, d).copy_from(a);
            rhs[d] = 1.0;
            if let Some(sol) = lu.solve(&rhs) {
                let rho = sol.rows(0, d).into_owned();
                if rho.iter().all(|&x| x >= 0.0) {
                    return Ok(rho);
                }
            }
        }
        maximize_concave_quadratic(c, a, &vec![0.0; d], &vec![f64::INFINITY; d])
    }
}

/// Closed-form simplex maximizer for two assets, `pi = (x, 1 - x)`.
fn two_asset_argmax(a: &DVector<f64>, c: &DMatrix<f64>) -> DVector<f64> {
    let curvature = c[(0, 0)] - 2.0 * c[(0, 1)] + c[(1, 1)];
    let slope = (a[0] - a[1]) - (c[(0, 1)] - c[(1, 1)]);
    let tol = 1e-15 * (1.0 + c.amax() + a.amax());
    let x = if curvature > tol {
        (slope / curvature).clamp(0.0, 1.0)
    } else if slope > tol {
        1.0
    } else if slope < -tol {
        0.0
    } else {
        0.5
    };
    DVector::from_vec(vec![x, 1.0 - x])
}

fn qp_error(f: QpFailure) -> GrowthError {
    match f {
        QpFailure::Unbounded => {
            GrowthError::NoSolution("growth is unbounded on the constraint set".into())
        }
        QpFailure::NoConvergence => {
            GrowthError::NoSolution("active-set iteration did not converge".into())
        }
    }
}

/// `<pi - rho, a - r 1 - c rho>`; nonpositive for every feasible `pi` exactly
/// when `rho` is growth-optimal.
pub fn numeraire_condition(
    pi: &Portfolio,
    rho: &Portfolio,
    a: &DVector<f64>,
    c: &DMatrix<f64>,
    r: f64,
) -> Result<f64, GrowthError> {
    check_shapes(pi.len(), a, c)?;
    check_shapes(rho.len(), a, c)?;
    let crho = c * &rho.0;
    Ok((0..a.len())
        .map(|i| (pi.0[i] - rho.0[i]) * (a[i] - r - crho[i]))
        .sum())
}

/// Largest numeraire defect over the constraint set, i.e. the linearized
/// improvement `max_pi <pi - rho, a - r 1 - c rho>`. Zero at the optimum.
pub fn optimality_gap(problem: &GrowthProblem, rho: &Portfolio) -> Result<f64, GrowthError> {
    let d = problem.a.len();
    check_shapes(rho.len(), &problem.a, &problem.c)?;
    let grad: Vec<f64> = {
        let crho = &problem.c * &rho.0;
        (0..d).map(|i| problem.a[i] - problem.r - crho[i]).collect()
    };
    let base: f64 = grad.iter().zip(rho.weights()).map(|(g, x)| g * x).sum();
    let best = match &problem.constraint {
        ConstraintSet::BudgetHyperplane => {
            let mean = grad.iter().sum::<f64>() / d as f64;
            let spread = grad.iter().fold(0.0_f64, |m, g| m.max((g - mean).abs()));
            return Ok(spread);
        }
        ConstraintSet::ClosedSimplex => grad.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        ConstraintSet::BoxHyperplane { lo, hi } => {
            // Greedy linear maximization: fill the budget in gradient order.
            let mut order: Vec<usize> = (0..d).collect();
            order.sort_by(|&i, &j| grad[j].total_cmp(&grad[i]));
            let mut x = lo.clone();
            let mut left = 1.0 - lo.iter().sum::<f64>();
            for &i in &order {
                let add = (hi[i] - lo[i]).min(left);
                x[i] += add;
                left -= add;
            }
            x.iter().zip(&grad).map(|(x, g)| x * g).sum()
        }
    };
    Ok((best - base).max(0.0))
}

/// Least-squares fit of `a - c kappa = r_hat 1`: returns `r_hat` and the
/// Euclidean residual. A zero residual means the coefficients are perfectly
/// balanced at this state.
pub fn perfect_balance_residual(
    kappa: &Portfolio,
    a: &DVector<f64>,
    c: &DMatrix<f64>,
) -> (f64, f64) {
    let v = a - c * &kappa.0;
    let r_hat = v.mean();
    let residual = v.iter().map(|x| (x - r_hat).powi(2)).sum::<f64>().sqrt();
    (r_hat, residual)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn growth_rate_examples() {
        let a = v(&[0.0, 0.5]);
        let c = DMatrix::from_diagonal(&v(&[0.0, 1.0]));
        assert_eq!(
            growth_rate(&Portfolio::bank(2), &a, &c, 0.07).unwrap(),
            0.07
        );
        assert!((growth_rate(&Portfolio::uniform(2), &a, &c, 0.0).unwrap() - 0.125).abs() < 1e-15);
        assert_eq!(
            growth_rate(&Portfolio::unit(2, 1), &a, &c, 0.0).unwrap(),
            0.0
        );
        assert_eq!(
            growth_rate(&Portfolio::unit(2, 0), &a, &c, 0.0).unwrap(),
            0.0
        );
        assert!(growth_rate(&Portfolio::uniform(3), &a, &c, 0.0).is_err());
    }

    #[test]
    fn implied_rate_examples() {
        let a = v(&[0.1, 0.3]);
        let r = implied_interest_rate(&a, &DMatrix::identity(2, 2)).unwrap();
        assert!((r + 0.3).abs() < 1e-15);
        let r = implied_interest_rate(&a, &(DMatrix::identity(2, 2) * 2.0)).unwrap();
        assert!((r + 0.8).abs() < 1e-15);
        let r = implied_interest_rate(&v(&[0.5, 0.5]), &DMatrix::identity(2, 2)).unwrap();
        assert!(r.abs() < 1e-15);
        let singular = DMatrix::from_diagonal(&v(&[0.0, 1.0]));
        assert!(matches!(
            implied_interest_rate(&a, &singular),
            Err(GrowthError::SingularCovariance { .. })
        ));
    }

    #[test]
    fn hyperplane_examples() {
        let s = growth_optimal_hyperplane(&v(&[0.1, 0.3]), &DMatrix::identity(2, 2)).unwrap();
        assert!((s.rho.0[0] - 0.4).abs() < 1e-15 && (s.rho.0[1] - 0.6).abs() < 1e-15);
        assert!((s.implied_rate.unwrap() + 0.3).abs() < 1e-15);

        let sig2 = 1.7_f64;
        let abar = 0.4;
        let c = DMatrix::from_diagonal(&v(&[0.0, sig2]));
        let s = growth_optimal_hyperplane(&v(&[0.0, abar]), &c).unwrap();
        assert!((s.rho.0[0] - (1.0 - abar / sig2)).abs() < 1e-15);
        assert!((s.rho.0[1] - abar / sig2).abs() < 1e-15);

        let s = growth_optimal_hyperplane(&v(&[3.0, 3.0]), &DMatrix::identity(2, 2)).unwrap();
        assert!((s.rho.0[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn hyperplane_inconsistent_system() {
        // c = 0 with a not proportional to 1: growth is unbounded on the plane.
        let r = growth_optimal_hyperplane(&v(&[0.0, 1.0]), &DMatrix::zeros(2, 2));
        assert!(matches!(r, Err(GrowthError::NoSolution(_))));
    }

    #[test]
    fn hyperplane_degenerate_is_min_norm() {
        // c = 0 and a = 1: every budget portfolio is optimal.
        let s = growth_optimal_hyperplane(&v(&[1.0, 1.0, 1.0]), &DMatrix::zeros(3, 3)).unwrap();
        assert!(s.rho.0.iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-12));
    }

    fn simplex(a: &[f64], c: DMatrix<f64>, r: f64) -> GrowthSolution {
        growth_optimal_constrained(&GrowthProblem {
            a: v(a),
            c,
            r,
            constraint: ConstraintSet::ClosedSimplex,
        })
        .unwrap()
    }

    #[test]
    fn simplex_examples() {
        let s = simplex(&[0.1, 0.3], DMatrix::identity(2, 2), 0.0);
        assert!((s.rho.0[0] - 0.4).abs() < 1e-14);
        let s = simplex(&[0.0, 10.0], DMatrix::identity(2, 2), 0.0);
        assert_eq!(s.rho.0.as_slice(), &[0.0, 1.0]);
        let s = simplex(&[0.02; 4], DMatrix::identity(4, 4), 0.02);
        assert!(s.rho.0.iter().all(|x| (x - 0.25).abs() < 1e-14));
    }

    #[test]
    fn simplex_degenerate_tie_break() {
        // c = 0, a = (1, 1, 0): the edge between e_1 and e_2 is optimal.
        let s = simplex(&[1.0, 1.0, 0.0], DMatrix::zeros(3, 3), 0.0);
        assert!((s.rho.0[0] - 0.5).abs() < 1e-12 && (s.rho.0[1] - 0.5).abs() < 1e-12);
        assert!(s.rho.0[2].abs() < 1e-12);
    }

    #[test]
    fn numeraire_examples() {
        let a = v(&[0.0, 10.0]);
        let c = DMatrix::identity(2, 2);
        let rho = Portfolio::unit(2, 1);
        assert_eq!(numeraire_condition(&rho, &rho, &a, &c, 0.0).unwrap(), 0.0);
        // <(1/2, -1/2), (0, 9)> = -4.5
        let val = numeraire_condition(&Portfolio::uniform(2), &rho, &a, &c, 0.0).unwrap();
        assert!((val + 4.5).abs() < 1e-15);

        let a = v(&[0.1, 0.3]);
        let s = growth_optimal_hyperplane(&a, &c).unwrap();
        let pi = Portfolio::new(vec![3.0, -2.0]);
        let val = numeraire_condition(&pi, &s.rho, &a, &c, s.implied_rate.unwrap()).unwrap();
        assert!(val.abs() < 1e-15);
    }

    #[test]
    fn balance_residual_examples() {
        let c = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 2.0]);
        let k = Portfolio::new(vec![0.3, 0.7]);
        let a = &c * &k.0 + DVector::from_element(2, 0.03);
        let (r, res) = perfect_balance_residual(&k, &a, &c);
        assert!((r - 0.03).abs() < 1e-15 && res < 1e-15);

        let (r, res) = perfect_balance_residual(
            &Portfolio::uniform(2),
            &v(&[0.0, 0.0]),
            &DMatrix::identity(2, 2),
        );
        assert_eq!((r, res), (-0.5, 0.0));

        let (r, res) = perfect_balance_residual(
            &Portfolio::uniform(2),
            &v(&[0.0, 1.0]),
            &DMatrix::zeros(2, 2),
        );
        assert_eq!(r, 0.5);
        assert!((res - 0.5_f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn fast_optimizer_matches_active_set() {
        let mut fast = SimplexOptimizer::new();
        let cases: Vec<(Vec<f64>, DMatrix<f64>)> = vec![
            (vec![0.0, 0.0], DMatrix::from_diagonal(&v(&[0.0, 1.0]))),
            (vec![0.0, 0.5], DMatrix::from_diagonal(&v(&[0.0, 1.0]))),
            (vec![0.3, 0.3], DMatrix::zeros(2, 2)),
            (vec![0.1, 0.2, 0.3], DMatrix::identity(3, 3)),
            (vec![0.0, 5.0, 0.1], DMatrix::identity(3, 3)),
            (vec![1.0, 1.0, 0.0], DMatrix::zeros(3, 3)),
        ];
        for (a, c) in cases {
            let a = v(&a);
            let slow = growth_optimal_constrained(&GrowthProblem {
                a: a.clone(),
                c: c.clone(),
                r: 0.0,
                constraint: ConstraintSet::ClosedSimplex,
            })
            .unwrap();
            let quick = fast.argmax(&a, &c).unwrap();
            assert!((quick - &slow.rho.0).amax() < 1e-12, "a = {a:?}");
        }
    }

    #[test]
    fn box_problem_and_gap() {
        let p = GrowthProblem {
            a: v(&[0.0, 10.0]),
            c: DMatrix::identity(2, 2),
            r: 0.0,
            constraint: ConstraintSet::boxed(vec![-1.0, -1.0], vec![2.0, 2.0]).unwrap(),
        };
        let s = growth_optimal_constrained(&p).unwrap();
        assert!((s.rho.0[1] - 2.0).abs() < 1e-14);
        assert!(optimality_gap(&p, &s.rho).unwrap() < 1e-12);
        assert!(optimality_gap(&p, &Portfolio::uniform(2)).unwrap() > 1.0);
    }
}
