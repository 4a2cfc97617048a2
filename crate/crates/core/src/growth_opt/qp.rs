//! Primal active-set solver for small dense convex QPs
//!
//! ```text
//! minimize  1/2 x'Gx + h'x   subject to  A x = b,  lo <= x <= hi
//! ```
//!
//! with `G` positive semidefinite (singular allowed). Bounds may be infinite
//! on either side. The caller supplies a feasible starting point.

use nalgebra::{DMatrix, DVector};

use crate::market_model::linalg::{min_norm_solve, null_space};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Bound {
    Free,
    Lower,
    Upper,
}

#[derive(Clone, Debug, PartialEq)]
pub enum QpFailure {
    /// Objective decreases without limit along a feasible ray.
    Unbounded,
    /// Iteration budget exhausted (cycling under degeneracy).
    NoConvergence,
}

#[derive(Clone, Debug)]
pub struct BoxQp<'a> {
    pub g: &'a DMatrix<f64>,
    pub h: &'a DVector<f64>,
    pub a_eq: &'a DMatrix<f64>,
    pub b_eq: &'a DVector<f64>,
    pub lo: &'a [f64],
    pub hi: &'a [f64],
}

impl BoxQp<'_> {
    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(self.g * x)) + self.h.dot(x)
    }

    /// Runs the active-set iteration from the feasible point `x0`.
    pub fn solve(&self, x0: DVector<f64>) -> Result<DVector<f64>, QpFailure> {
        let n = x0.len();
        let mut x = x0;
        let mut state: Vec<Bound> = (0..n)
            .map(|i| {
                if x[i] <= self.lo[i] {
                    Bound::Lower
                } else if x[i] >= self.hi[i] {
                    Bound::Upper
                } else {
                    Bound::Free
                }
            })
            .collect();
        for (i, s) in state.iter().enumerate() {
            match s {
                Bound::Lower => x[i] = self.lo[i],
                Bound::Upper => x[i] = self.hi[i],
                Bound::Free => {}
            }
        }
        let g_scale = 1.0 + self.g.amax() + self.h.amax();
        let max_iter = 100 + 50 * n;
        for _ in 0..max_iter {
            let grad = self.g * &x + self.h;
            let free: Vec<usize> = (0..n).filter(|&i| state[i] == Bound::Free).collect();
            let (p, unbounded) = self.direction(&free, &grad);
            let step_small = p.amax() <= 1e-14 * (1.0 + x.amax());
            if step_small {
                match self.drop_candidate(&free, &state, &grad, g_scale) {
                    None => return Ok(x),
                    Some(i) => {
                        state[i] = Bound::Free;
                        continue;
                    }
                }
            }
            // Ratio test against the bounds of the free coordinates.
            let mut alpha = if unbounded { f64::INFINITY } else { 1.0 };
            let mut blocking = None;
            for &i in &free {
                let pi = p[i];
                let limit = if pi < 0.0 {
                    (self.lo[i] - x[i]) / pi
                } else if pi > 0.0 {
                    (self.hi[i] - x[i]) / pi
                } else {
                    f64::INFINITY
                };
                if limit < alpha {
                    alpha = limit.max(0.0);
                    blocking = Some((i, if pi < 0.0 { Bound::Lower } else { Bound::Upper }));
                }
            }
            if !alpha.is_finite() {
                return Err(QpFailure::Unbounded);
            }
            x += &p * alpha;
            if let Some((i, side)) = blocking {
                state[i] = side;
                x[i] = if side == Bound::Lower {
                    self.lo[i]
                } else {
                    self.hi[i]
                };
            }
        }
        Err(QpFailure::NoConvergence)
    }

    /// Minimizing direction over the free coordinates inside the null space
    /// of the equality rows. The flag is set for a zero-curvature descent
    /// direction, along which only a bound can stop the step.
    fn direction(&self, free: &[usize], grad: &DVector<f64>) -> (DVector<f64>, bool) {
        let n = grad.len();
        let mut p = DVector::zeros(n);
        if free.is_empty() {
            return (p, false);
        }
        let a_f = self.a_eq.select_columns(free);
        let z = if a_f.nrows() == 0 {
            DMatrix::identity(free.len(), free.len())
        } else {
            null_space(&a_f, 1e-11)
        };
        if z.ncols() == 0 {
            return (p, false);
        }
        let g_ff = self.g.select_rows(free).select_columns(free);
        let grad_f = DVector::from_iterator(free.len(), free.iter().map(|&i| grad[i]));
        let hess = z.transpose() * &g_ff * &z;
        let hess = (&hess + hess.transpose()) * 0.5;
        let rg = z.transpose() * &grad_f;
        let eig = hess.symmetric_eigen();
        let lam_tol = 1e-12 * (1.0 + eig.eigenvalues.amax());
        let g_tol = 1e-14 * (1.0 + grad.amax());
        let coords = eig.eigenvectors.transpose() * &rg;
        let mut flat = DVector::zeros(coords.len());
        let mut newton = DVector::zeros(coords.len());
        let mut has_flat = false;
        for k in 0..coords.len() {
            if eig.eigenvalues[k] <= lam_tol {
                if coords[k].abs() > g_tol {
                    flat[k] = -coords[k];
                    has_flat = true;
                }
            } else {
                newton[k] = -coords[k] / eig.eigenvalues[k];
            }
        }
        let (reduced, unbounded) = if has_flat {
            (flat, true)
        } else {
            (newton, false)
        };
        let p_f = &z * (&eig.eigenvectors * reduced);
        for (k, &i) in free.iter().enumerate() {
            p[i] = p_f[k];
        }
        (p, unbounded)
    }

    /// Bound with the most negative multiplier, if any is negative.
    fn drop_candidate(
        &self,
        free: &[usize],
        state: &[Bound],
        grad: &DVector<f64>,
        g_scale: f64,
    ) -> Option<usize> {
        let fixed: Vec<usize> = (0..state.len())
            .filter(|&i| state[i] != Bound::Free)
            .collect();
        if fixed.is_empty() {
            return None;
        }
        let nu = self.equality_multipliers(free, &fixed, state, grad);
        let at = self.a_eq.transpose() * &nu;
        let tol = 1e-12 * g_scale;
        let mut worst: Option<(usize, f64)> = None;
        for &i in &fixed {
            let s = grad[i] + at[i];
            let mu = if state[i] == Bound::Lower { s } else { -s };
            if mu < -tol && worst.is_none_or(|(_, w)| mu < w) {
                worst = Some((i, mu));
            }
        }
        worst.map(|(i, _)| i)
    }

    fn equality_multipliers(
        &self,
        free: &[usize],
        fixed: &[usize],
        state: &[Bound],
        grad: &DVector<f64>,
    ) -> DVector<f64> {
        let m = self.a_eq.nrows();
        if m == 0 {
            return DVector::zeros(0);
        }
        if !free.is_empty() {
            // Stationarity on the free block: A_F' nu = -grad_F.
            let a_ft = self.a_eq.select_columns(free).transpose();
            let rhs = DVector::from_iterator(free.len(), free.iter().map(|&i| -grad[i]));
            return min_norm_solve(&a_ft, &rhs, 1e-12).0;
        }
        // Every coordinate sits at a bound. With the single budget row the
        // admissible multipliers form an interval; take its midpoint.
        if m == 1 {
            let mut lo_nu = f64::NEG_INFINITY;
            let mut hi_nu = f64::INFINITY;
            for &i in fixed {
                let ai = self.a_eq[(0, i)];
                if ai == 0.0 {
                    continue;
                }
                // Lower: grad + a nu >= 0; upper: grad + a nu <= 0.
                let root = -grad[i] / ai;
                let wants_ge = (state[i] == Bound::Lower) == (ai > 0.0);
                if wants_ge {
                    lo_nu = lo_nu.max(root);
                } else {
                    hi_nu = hi_nu.min(root);
                }
            }
            let nu = match (lo_nu.is_finite(), hi_nu.is_finite()) {
                (true, true) => 0.5 * (lo_nu + hi_nu),
                (true, false) => lo_nu,
                (false, true) => hi_nu,
                (false, false) => 0.0,
            };
            return DVector::from_element(1, nu);
        }
        let a_t = self.a_eq.select_columns(fixed).transpose();
        let rhs = DVector::from_iterator(fixed.len(), fixed.iter().map(|&i| -grad[i]));
        min_norm_solve(&a_t, &rhs, 1e-12).0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn budget(n: usize) -> (DMatrix<f64>, DVector<f64>) {
        (
            DMatrix::from_element(1, n, 1.0),
            DVector::from_element(1, 1.0),
        )
    }

    #[test]
    fn interior_simplex_optimum() {
        // maximize <x, a> - |x|^2 / 2 with a = (0.1, 0.3)
        let g = DMatrix::identity(2, 2);
        let h = DVector::from_vec(vec![-0.1, -0.3]);
        let (a, b) = budget(2);
        let qp = BoxQp {
            g: &g,
            h: &h,
            a_eq: &a,
            b_eq: &b,
            lo: &[0.0; 2],
            hi: &[f64::INFINITY; 2],
        };
        let x = qp.solve(DVector::from_element(2, 0.5)).unwrap();
        assert!((x[0] - 0.4).abs() < 1e-14 && (x[1] - 0.6).abs() < 1e-14);
    }

    #[test]
    fn corner_optimum() {
        let g = DMatrix::identity(2, 2);
        let h = DVector::from_vec(vec![0.0, -10.0]);
        let (a, b) = budget(2);
        let qp = BoxQp {
            g: &g,
            h: &h,
            a_eq: &a,
            b_eq: &b,
            lo: &[0.0; 2],
            hi: &[f64::INFINITY; 2],
        };
        let x = qp.solve(DVector::from_element(2, 0.5)).unwrap();
        assert_eq!(x.as_slice(), &[0.0, 1.0]);
    }

    #[test]
    fn linear_objective_moves_to_vertex() {
        let g = DMatrix::zeros(3, 3);
        let h = DVector::from_vec(vec![0.0, -1.0, -0.5]);
        let (a, b) = budget(3);
        let qp = BoxQp {
            g: &g,
            h: &h,
            a_eq: &a,
            b_eq: &b,
            lo: &[0.0; 3],
            hi: &[f64::INFINITY; 3],
        };
        let x = qp.solve(DVector::from_element(3, 1.0 / 3.0)).unwrap();
        assert!((x[1] - 1.0).abs() < 1e-15 && x[0].abs() < 1e-15 && x[2].abs() < 1e-15);
    }

    #[test]
    fn box_bounds_bind() {
        let g = DMatrix::identity(2, 2);
        let h = DVector::from_vec(vec![0.0, -10.0]);
        let (a, b) = budget(2);
        let qp = BoxQp {
            g: &g,
            h: &h,
            a_eq: &a,
            b_eq: &b,
            lo: &[-1.0; 2],
            hi: &[2.0; 2],
        };
        let x = qp.solve(DVector::from_element(2, 0.5)).unwrap();
        assert!((x[0] + 1.0).abs() < 1e-14 && (x[1] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn unbounded_ray_is_reported() {
        let g = DMatrix::zeros(2, 2);
        let h = DVector::from_vec(vec![0.0, -1.0]);
        let (a, b) = budget(2);
        let inf = [f64::NEG_INFINITY; 2];
        let qp = BoxQp {
            g: &g,
            h: &h,
            a_eq: &a,
            b_eq: &b,
            lo: &inf,
            hi: &[f64::INFINITY; 2],
        };
        assert_eq!(
            qp.solve(DVector::from_element(2, 0.5)),
            Err(QpFailure::Unbounded)
        );
    }
}
