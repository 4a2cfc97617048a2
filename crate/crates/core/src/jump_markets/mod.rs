//! Markets with jumps: capitalizations driven by a continuous martingale and
//! a quasi-left-continuous jump measure, with calendar time as the clock.
//! Companies may die, continuously or by a jump to zero.

mod diag;
mod engine;
mod example;
mod growth;
mod spec;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::balance_diag::DiagError;
use crate::growth_opt::GrowthError;
use crate::market_model::{MatrixSpec, ModelError, ScalarSpec, VectorSpec};
use crate::sde_engine::SimError;

pub use diag::{
    jump_count_ratio, loss_increment_rates_jump, loss_of_balance_jump, pairwise_distance_jump,
    pairwise_rate_jump, JumpLoss,
};
pub use engine::{
    apply_jump, compensator_drift, lifetime_cells, lifetime_header, DeathMode, JumpEngine,
    JumpPathSet, LifetimeRecord, DEATH_THRESHOLD,
};
pub use example::{
    death_example_analytic_kappa, death_example_jump_size, death_example_market,
    example_death_of_company, DeathExampleReport, DEATH_EXAMPLE_TIME,
};
pub use growth::{jump_growth_optimal, project_simplex, simplex_gap, JumpGrowth};
pub use spec::{
    check_jump, gauss_hermite, gross_return, is_small, JumpAtom, JumpSampler, JumpSpec, MomentRule,
    SizeLaw,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum JumpError {
    #[error("the jump law has no compensator moments")]
    CompensatorUnavailable,
    #[error("jump intensity {value} at t = {t} exceeds the thinning bound {bound}")]
    IntensityExceedsBound { t: f64, value: f64, bound: f64 },
    #[error("invalid jump: {0}")]
    InvalidJump(String),
    #[error("invalid jump specification: {0}")]
    InvalidSpec(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("compensator drift too stiff to integrate at step {step}")]
    StiffCompensator { step: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Growth(#[from] GrowthError),
    #[error(transparent)]
    Diag(#[from] DiagError),
}

/// `b = c kappa + r 1 - int [x / (1 + <kappa, x>) - x 1{|x| <= 1}] nu(dx)`:
/// the drift that keeps every relative capitalization a martingale.
pub fn drift_from_balance_jump(
    kappa_minus: &[f64],
    c: &DMatrix<f64>,
    atoms: &[JumpAtom],
    r: f64,
) -> DVector<f64> {
    let k = DVector::from_column_slice(kappa_minus);
    let mut b = c * &k;
    b.add_scalar_mut(r);
    for atom in atoms {
        let denom = 1.0 + k.dot(&atom.x);
        let small = if is_small(&atom.x) { 1.0 } else { 0.0 };
        b.axpy(-atom.weight * (1.0 / denom - small), &atom.x, 1.0);
    }
    b
}

/// `<pi - rho, b - r 1> - <pi - rho, c rho>
///  + int [<pi - rho, x> / (1 + <rho, x>) - <pi - rho, x> 1{|x| <= 1}] nu(dx)`.
pub fn rel_rate_of_return(
    pi: &DVector<f64>,
    rho: &DVector<f64>,
    b: &DVector<f64>,
    c: &DMatrix<f64>,
    atoms: &[JumpAtom],
    r: f64,
) -> f64 {
    let excess = b.add_scalar(-r);
    let f = JumpGrowth {
        excess: &excess,
        c,
        atoms,
    };
    (pi - rho).dot(&f.gradient(rho))
}

/// Drift of `kappa` between jumps in a market with drift `b`:
/// `kappa^i <e_i - kappa, b - c kappa - int x 1{|x| <= 1} nu(dx)>`.
pub fn between_jump_drift(
    kappa: &[f64],
    b: &DVector<f64>,
    c: &DMatrix<f64>,
    atoms: &[JumpAtom],
) -> DVector<f64> {
    let k = DVector::from_column_slice(kappa);
    let mut v = b - c * &k;
    for atom in atoms.iter().filter(|a| is_small(&a.x)) {
        v.axpy(-atom.weight, &atom.x, 1.0);
    }
    let mean = k.dot(&v);
    DVector::from_fn(kappa.len(), |i, _| kappa[i] * (v[i] - mean))
}

/// Where the drift `b` of a jump market comes from.
#[derive(Clone, Debug)]
pub enum JumpDrift {
    /// The perfectly balanced drift of [`drift_from_balance_jump`].
    Balanced,
    Spec(VectorSpec),
}

/// Coefficients of a jump market: covariance, jump measure, interest rate
/// and drift.
#[derive(Clone, Debug)]
pub struct JumpMarket {
    pub c: MatrixSpec,
    pub jumps: JumpSpec,
    pub r: ScalarSpec,
    pub drift: JumpDrift,
}

/// Coefficients evaluated at one time and state.
#[derive(Clone, Debug)]
pub struct JumpStepData {
    pub c: DMatrix<f64>,
    pub atoms: Vec<JumpAtom>,
    pub r: f64,
    pub b: DVector<f64>,
}

impl JumpMarket {
    pub fn balanced(c: MatrixSpec, jumps: JumpSpec, r: ScalarSpec) -> Self {
        Self {
            c,
            jumps,
            r,
            drift: JumpDrift::Balanced,
        }
    }

    /// Coefficients at `(t, kappa)` after `jumps` jumps.
    pub fn at(&self, t: f64, kappa: &[f64], jumps: usize) -> Result<JumpStepData, JumpError> {
        let c = self.c.eval(t, kappa)?;
        let atoms = self.jumps.compensator(t, kappa, jumps)?;
        let r = self.r.eval(t, kappa)?;
        let b = match &self.drift {
            JumpDrift::Balanced => drift_from_balance_jump(kappa, &c, &atoms, r),
            JumpDrift::Spec(spec) => spec.eval(t, kappa)?,
        };
        Ok(JumpStepData { c, atoms, r, b })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example_atoms(l: f64) -> Vec<JumpAtom> {
        vec![JumpAtom {
            weight: 1.0,
            x: DVector::from_vec(vec![0.0, l]),
        }]
    }

    #[test]
    fn no_jumps_gives_continuous_balance() {
        let c = DMatrix::from_row_slice(2, 2, &[0.3, 0.1, 0.1, 0.2]);
        let b = drift_from_balance_jump(&[0.4, 0.6], &c, &[], 0.05);
        let expect = &c * DVector::from_vec(vec![0.4, 0.6]) + DVector::from_element(2, 0.05);
        assert!((b - expect).amax() < 1e-15);
    }

    #[test]
    fn balanced_drift_reproduces_example_ode() {
        let c = DMatrix::zeros(2, 2);
        for &t in &[0.0, 0.4, 0.9, 1.3] {
            let l = death_example_jump_size(t);
            let k1 = 0.37;
            let kappa = [1.0 - k1, k1];
            let atoms = example_atoms(l);
            let b = drift_from_balance_jump(&kappa, &c, &atoms, 0.02);
            let drift = between_jump_drift(&kappa, &b, &c, &atoms);
            let ode = -k1 * (1.0 - k1) * l / (1.0 + k1 * l);
            assert!((drift[1] - ode).abs() < 1e-14, "t = {t}");
            assert!((drift[0] + ode).abs() < 1e-14);
            // the engine's compensator form gives the same drift
            let mut out = [0.0; 2];
            compensator_drift(&kappa, &atoms, &mut out);
            assert!((out[1] - ode).abs() < 1e-14);
        }
    }

    #[test]
    fn small_jump_correction_is_second_order() {
        let c = DMatrix::zeros(3, 3);
        let kappa = [0.2, 0.3, 0.5];
        let base = [
            (0.6, DVector::from_vec(vec![0.4, -0.3, 0.2])),
            (0.4, DVector::from_vec(vec![-0.5, 0.1, 0.3])),
        ];
        let correction = |h: f64| {
            let atoms: Vec<JumpAtom> = base
                .iter()
                .map(|(w, x)| JumpAtom {
                    weight: *w,
                    x: x * h,
                })
                .collect();
            let b = drift_from_balance_jump(&kappa, &c, &atoms, 0.0);
            b.amax()
        };
        let (c1, c2, c4) = (correction(1.0), correction(0.5), correction(0.25));
        assert!((c1 / c2 - 4.0).abs() < 0.6, "{c1} {c2}");
        assert!((c2 / c4 - 4.0).abs() < 0.3, "{c2} {c4}");
    }

    #[test]
    fn relative_rate_vanishes_in_balanced_market() {
        let c = DMatrix::from_row_slice(2, 2, &[0.1, 0.0, 0.0, 0.2]);
        let kappa = [0.6, 0.4];
        let atoms = example_atoms(death_example_jump_size(0.5));
        let b = drift_from_balance_jump(&kappa, &c, &atoms, 0.03);
        let rho = DVector::from_column_slice(&kappa);
        for i in 0..2 {
            let e = DVector::from_fn(2, |j, _| if j == i { 1.0 } else { 0.0 });
            assert!(rel_rate_of_return(&e, &rho, &b, &c, &atoms, 0.03).abs() < 1e-14);
        }
        assert_eq!(rel_rate_of_return(&rho, &rho, &b, &c, &atoms, 0.03), 0.0);
    }
}
