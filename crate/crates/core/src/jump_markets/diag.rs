//! Loss of balance and company distances for jump markets.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::engine::{JumpPathSet, LifetimeRecord};
use super::growth::{jump_growth_optimal, JumpGrowth};
use super::{JumpError, JumpMarket, JumpStepData};
use crate::balance_diag::clip_rate;

/// Two versions of the loss of balance along a jump path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JumpLoss {
    pub times: Vec<f64>,
    /// `int (-rel(kappa | rho) + 1/2 c^{kappa|rho}) dt
    ///  + int int [1 ^ |log((1 + <kappa, x>) / (1 + <rho, x>))|^2] nu(dx) dt`.
    pub l_rel: Vec<f64>,
    /// `int (G(rho) - G(kappa)) dt` with `G` the jump-adjusted growth rate.
    pub l_growth: Vec<f64>,
}

fn alive_mask(kappa: &[f64]) -> Vec<bool> {
    kappa.iter().map(|&k| k > 0.0).collect()
}

fn optimum(data: &JumpStepData, kappa: &[f64]) -> Result<(DVector<f64>, DVector<f64>), JumpError> {
    let excess = data.b.add_scalar(-data.r);
    let f = JumpGrowth {
        excess: &excess,
        c: &data.c,
        atoms: &data.atoms,
    };
    let start = DVector::from_column_slice(kappa);
    let rho = jump_growth_optimal(&f, &start, &alive_mask(kappa))?;
    Ok((rho, excess))
}

/// Rates `(dL_rel/dt, dL_growth/dt)` at one state, plus the optimum.
pub fn loss_increment_rates_jump(
    data: &JumpStepData,
    kappa: &[f64],
) -> Result<(f64, f64, DVector<f64>), JumpError> {
    let (rho, excess) = optimum(data, kappa)?;
    let f = JumpGrowth {
        excess: &excess,
        c: &data.c,
        atoms: &data.atoms,
    };
    let k = DVector::from_column_slice(kappa);
    let diff = &k - &rho;
    let rel = diff.dot(&f.gradient(&rho));
    let dc = &data.c * &diff;
    let mut rate = -rel + 0.5 * diff.dot(&dc);
    for atom in &data.atoms {
        let ratio = ((1.0 + k.dot(&atom.x)) / (1.0 + rho.dot(&atom.x))).ln();
        rate += atom.weight * (ratio * ratio).min(1.0);
    }
    let g_rho = f.value(&rho);
    let gap = g_rho - f.value(&k);
    Ok((rate, gap, rho))
}

fn dense_check(set: &JumpPathSet) -> Result<(), JumpError> {
    if !set.paths.is_dense() {
        return Err(JumpError::InvalidInput(
            "jump diagnostics need every grid step recorded".into(),
        ));
    }
    Ok(())
}

pub fn loss_of_balance_jump(
    market: &JumpMarket,
    set: &JumpPathSet,
    path: usize,
) -> Result<JumpLoss, JumpError> {
    dense_check(set)?;
    let grid = set.paths.grid;
    let rec = &set.lifetimes[path];
    let mut out = JumpLoss {
        times: vec![grid.t0],
        l_rel: vec![0.0],
        l_growth: vec![0.0],
    };
    let (mut l_rel, mut l_growth) = (0.0, 0.0);
    for step in 0..grid.n_steps {
        let t = grid.time(step);
        let kappa = set.paths.kappa_at(path, step);
        let data = market.at(t, kappa, rec.jumps_by(t))?;
        let (rate, gap, _) = loss_increment_rates_jump(&data, kappa)?;
        let scale =
            data.b.amax() + data.c.amax() + data.atoms.iter().map(|a| a.weight).sum::<f64>();
        l_rel += clip_rate(step, rate, scale)? * grid.dt;
        l_growth += clip_rate(step, gap, scale)? * grid.dt;
        out.times.push(grid.time(step + 1));
        out.l_rel.push(l_rel);
        out.l_growth.push(l_growth);
    }
    Ok(out)
}

/// `|rel(e_i | rho) - rel(e_j | rho)| + 1/2 c^{i|j}
///  + int [1 ^ |log((1 + x^i) / (1 + x^j))|^2] nu(dx)`.
pub fn pairwise_rate_jump(data: &JumpStepData, rho: &DVector<f64>, i: usize, j: usize) -> f64 {
    let excess = data.b.add_scalar(-data.r);
    let f = JumpGrowth {
        excess: &excess,
        c: &data.c,
        atoms: &data.atoms,
    };
    let g = f.gradient(rho);
    let c = &data.c;
    let mut rate = (g[i] - g[j]).abs() + 0.5 * (c[(i, i)] - 2.0 * c[(i, j)] + c[(j, j)]);
    for atom in &data.atoms {
        let (xi, xj) = (atom.x[i], atom.x[j]);
        let term = if xi == xj {
            0.0
        } else if xi <= -1.0 || xj <= -1.0 {
            1.0
        } else {
            ((1.0 + xi) / (1.0 + xj)).ln().powi(2).min(1.0)
        };
        rate += atom.weight * term;
    }
    rate
}

/// Distance between companies `i` and `j` over the steps starting before
/// `horizon`.
pub fn pairwise_distance_jump(
    market: &JumpMarket,
    set: &JumpPathSet,
    path: usize,
    i: usize,
    j: usize,
    horizon: f64,
) -> Result<f64, JumpError> {
    dense_check(set)?;
    let grid = set.paths.grid;
    let rec = &set.lifetimes[path];
    let mut acc = 0.0;
    for step in 0..grid.n_steps {
        let t = grid.time(step);
        if t >= horizon - 1e-12 * horizon.abs().max(1.0) {
            break;
        }
        if !(rec.zeta[i] > t && rec.zeta[j] > t) {
            return Err(JumpError::InvalidInput(format!(
                "company {i} or {j} is dead at t = {t}"
            )));
        }
        let kappa = set.paths.kappa_at(path, step);
        let data = market.at(t, kappa, rec.jumps_by(t))?;
        let (rho, _) = optimum(&data, kappa)?;
        acc += pairwise_rate_jump(&data, &rho, i, j) * grid.dt;
    }
    Ok(acc)
}

/// Realized jump count over its compensator `int lambda dt`.
pub fn jump_count_ratio(rec: &LifetimeRecord) -> f64 {
    rec.jump_times.len() as f64 / rec.intensity_integral
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::balance_diag::{loss_of_balance, path_coefficients, Coefficients};
    use crate::jump_markets::{JumpAtom, JumpDrift, JumpEngine, JumpSpec, SizeLaw};
    use crate::market_model::{MatrixSpec, PathGrid, Portfolio, VectorSpec};
    use crate::sde_engine::{BalancedEngine, RecordOptions};
    use nalgebra::DMatrix;

    #[test]
    fn without_jumps_agrees_with_continuous_loss() {
        // company 0 riskless, a = (0, 1/2)
        let c = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]);
        let c_spec = MatrixSpec::from(c);
        let a = VectorSpec::from(DVector::from_vec(vec![0.0, 0.5]));
        let grid = PathGrid::new(0.01, 300).unwrap();
        let k0 = Portfolio::uniform(2);
        let cont = BalancedEngine::new(&c_spec, &k0, grid)
            .unwrap()
            .simulate(3, 4, RecordOptions::default())
            .unwrap();
        let engine = JumpEngine::new(&c_spec, JumpSpec::none(), &k0, grid).unwrap();
        let set = engine.simulate(3, 4, RecordOptions::default()).unwrap();
        let market = JumpMarket {
            c: c_spec.clone(),
            jumps: JumpSpec::none(),
            r: 0.0.into(),
            drift: JumpDrift::Spec(a.clone()),
        };
        let coeffs = Coefficients {
            a: crate::balance_diag::DriftSource::Spec(a),
            r: 0.0.into(),
        };
        for p in 0..3 {
            let steps = path_coefficients(&cont, p, &c_spec, &coeffs).unwrap();
            let l = loss_of_balance(&steps).unwrap();
            let lj = loss_of_balance_jump(&market, &set, p).unwrap();
            for k in 0..l.len() {
                assert!((l[k] - lj.l_rel[k]).abs() < 1e-9, "path {p} step {k}");
                assert!((l[k] - lj.l_growth[k]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn balanced_jump_market_has_no_loss() {
        let law = SizeLaw::Atoms(vec![
            (
                0.5,
                VectorSpec::from(DVector::from_vec(vec![0.3, -0.2, 0.0])),
            ),
            (
                0.5,
                VectorSpec::from(DVector::from_vec(vec![-0.4, 1.5, 0.2])),
            ),
        ]);
        let jumps = JumpSpec::new(2.0.into(), 2.0, law).unwrap();
        let c = MatrixSpec::from(DMatrix::from_row_slice(
            3,
            3,
            &[0.2, 0.05, 0.0, 0.05, 0.1, 0.0, 0.0, 0.0, 0.3],
        ));
        let grid = PathGrid::new(0.01, 100).unwrap();
        let engine = JumpEngine::new(
            &c,
            jumps.clone(),
            &Portfolio::new(vec![0.3, 0.3, 0.4]),
            grid,
        )
        .unwrap();
        let set = engine.simulate(2, 8, RecordOptions::default()).unwrap();
        let market = JumpMarket::balanced(c, jumps, 0.01.into());
        for p in 0..2 {
            let l = loss_of_balance_jump(&market, &set, p).unwrap();
            assert!(*l.l_rel.last().unwrap() <= 1e-9);
            assert!(*l.l_growth.last().unwrap() <= 1e-9);
        }
    }

    #[test]
    fn identical_companies_have_zero_distance() {
        let data = JumpStepData {
            c: DMatrix::from_element(2, 2, 0.3),
            atoms: vec![JumpAtom {
                weight: 1.0,
                x: DVector::from_vec(vec![0.5, 0.5]),
            }],
            r: 0.0,
            b: DVector::from_vec(vec![0.1, 0.1]),
        };
        let rho = DVector::from_vec(vec![0.5, 0.5]);
        assert_eq!(pairwise_rate_jump(&data, &rho, 0, 1), 0.0);
    }
}
