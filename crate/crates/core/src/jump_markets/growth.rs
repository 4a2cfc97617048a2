//! Growth-optimal portfolio of a jump market over the simplex.

use nalgebra::{DMatrix, DVector};

use super::spec::{is_small, JumpAtom};
use super::JumpError;
use crate::growth_opt::maximize_concave_quadratic;
use crate::market_model::linalg;

const PG_ITERATIONS: usize = 200;
const NEWTON_ITERATIONS: usize = 50;

/// Jump-adjusted growth functional
/// `<pi, b - r 1> - 1/2 <pi, c pi> + int [log(1 + <pi, x>) - <pi, x> 1{|x| <= 1}] nu(dx)`
/// (the interest rate itself is dropped).
#[derive(Clone, Copy, Debug)]
pub struct JumpGrowth<'a> {
    pub excess: &'a DVector<f64>,
    pub c: &'a DMatrix<f64>,
    pub atoms: &'a [JumpAtom],
}

impl JumpGrowth<'_> {
    /// `-inf` outside `{1 + <pi, x> > 0}`.
    pub fn value(&self, pi: &DVector<f64>) -> f64 {
        let mut v = pi.dot(self.excess) - 0.5 * linalg::quad_form(self.c, pi.as_slice());
        for atom in self.atoms {
            let px = pi.dot(&atom.x);
            if !(1.0 + px > 0.0) {
                return f64::NEG_INFINITY;
            }
            let small = if is_small(&atom.x) { px } else { 0.0 };
            v += atom.weight * (px.ln_1p() - small);
        }
        v
    }

    pub fn gradient(&self, pi: &DVector<f64>) -> DVector<f64> {
        let mut g = self.excess - self.c * pi;
        for atom in self.atoms {
            let denom = 1.0 + pi.dot(&atom.x);
            let small = if is_small(&atom.x) { 1.0 } else { 0.0 };
            g.axpy(atom.weight * (1.0 / denom - small), &atom.x, 1.0);
        }
        g
    }

    /// Negated Hessian `c + int x x^T / (1 + <pi, x>)^2 nu(dx)`.
    pub fn curvature(&self, pi: &DVector<f64>) -> DMatrix<f64> {
        let mut h = self.c.clone();
        for atom in self.atoms {
            let denom = 1.0 + pi.dot(&atom.x);
            h.ger(atom.weight / (denom * denom), &atom.x, &atom.x, 1.0);
        }
        h
    }
}

/// `max_{i alive} g_i - <pi, g>`: zero exactly at the simplex maximizer.
pub fn simplex_gap(g: &DVector<f64>, pi: &DVector<f64>, alive: &[bool]) -> f64 {
    let best = (0..g.len())
        .filter(|&i| alive[i])
        .map(|i| g[i])
        .fold(f64::NEG_INFINITY, f64::max);
    (best - pi.dot(g)).max(0.0)
}

/// Euclidean projection onto the simplex restricted to `alive` coordinates.
pub fn project_simplex(v: &DVector<f64>, alive: &[bool]) -> DVector<f64> {
    let mut u: Vec<f64> = (0..v.len()).filter(|&i| alive[i]).map(|i| v[i]).collect();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut acc = 0.0;
    let mut theta = 0.0;
    for (k, &x) in u.iter().enumerate() {
        acc += x;
        let cand = (acc - 1.0) / (k + 1) as f64;
        if x - cand > 0.0 {
            theta = cand;
        }
    }
    DVector::from_fn(v.len(), |i, _| {
        if alive[i] {
            (v[i] - theta).max(0.0)
        } else {
            0.0
        }
    })
}

/// Maximizes [`JumpGrowth`] over the simplex of alive companies, starting
/// from `start` (which must lie in the domain): projected-gradient ascent,
/// then projected Newton steps solved as simplex QPs.
pub fn jump_growth_optimal(
    f: &JumpGrowth<'_>,
    start: &DVector<f64>,
    alive: &[bool],
) -> Result<DVector<f64>, JumpError> {
    let d = start.len();
    if alive.len() != d || !alive.iter().any(|&a| a) {
        return Err(JumpError::InvalidInput(
            "no alive company to invest in".into(),
        ));
    }
    let mut x = project_simplex(start, alive);
    let mut fx = f.value(&x);
    if !fx.is_finite() {
        return Err(JumpError::InvalidInput(
            "starting portfolio lies outside the growth domain".into(),
        ));
    }
    let scale = 1.0 + f.excess.amax() + f.c.amax() + f.atoms.iter().map(|a| a.weight).sum::<f64>();
    let tol = 1e-13 * scale;

    let mut lipschitz = f.curvature(&x).norm().max(1e-12);
    for _ in 0..PG_ITERATIONS {
        let g = f.gradient(&x);
        if simplex_gap(&g, &x, alive) <= tol {
            break;
        }
        let mut eta = 1.0 / lipschitz;
        let mut improved = false;
        for _ in 0..60 {
            let y = project_simplex(&(&x + &g * eta), alive);
            let fy = f.value(&y);
            let step = &y - &x;
            // sufficient increase for a 1/eta-smooth concave function
            if fy.is_finite() && fy >= fx + g.dot(&step) - 0.5 / eta * step.norm_squared() {
                improved = fy > fx;
                x = y;
                fx = fy;
                break;
            }
            eta *= 0.5;
            lipschitz = 1.0 / eta;
        }
        if !improved {
            break;
        }
    }

    let lo = vec![0.0; d];
    let hi: Vec<f64> = alive
        .iter()
        .map(|&a| if a { f64::INFINITY } else { 0.0 })
        .collect();
    for _ in 0..NEWTON_ITERATIONS {
        let g = f.gradient(&x);
        if simplex_gap(&g, &x, alive) <= tol {
            break;
        }
        let h = f.curvature(&x);
        let target = maximize_concave_quadratic(&h, &(&g + &h * &x), &lo, &hi)?;
        let dir = &target - &x;
        let mut s = 1.0;
        let mut moved = false;
        while s > 1e-12 {
            let y = &x + &dir * s;
            let fy = f.value(&y);
            if fy.is_finite() && fy >= fx {
                moved = fy > fx || s == 1.0;
                x = y;
                fx = fy;
                break;
            }
            s *= 0.5;
        }
        if !moved {
            break;
        }
    }
    // clean rounding off the simplex
    let x = project_simplex(&x, alive);
    Ok(x)
}
