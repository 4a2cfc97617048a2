//! Two companies, no diffusion, and a single possible jump of company 1 at
//! a unit-rate exponential time. The jump size blows up at `2 log 2`, which
//! drags company 1 to zero on every path that has not jumped by then.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::engine::{DeathMode, JumpEngine, JumpPathSet, LifetimeRecord};
use super::spec::{JumpSpec, SizeLaw};
use super::JumpError;
use crate::market_model::{MatrixSpec, PathGrid, Portfolio, VectorSpec};
use crate::sde_engine::{PathObserver, PathSet, RecordOptions, Recorder, SimError, Transition};

/// `2 log 2`: the death time of company 1 when no jump arrives first.
pub const DEATH_EXAMPLE_TIME: f64 = 2.0 * std::f64::consts::LN_2;

/// Jump size `l(t) = (1 - e^{t/2}/2)^{-1}` on `[0, 2 log 2)`, zero after.
pub fn death_example_jump_size(t: f64) -> f64 {
    if (0.0..DEATH_EXAMPLE_TIME).contains(&t) {
        1.0 / (1.0 - 0.5 * (0.5 * t).exp())
    } else {
        0.0
    }
}

/// Closed-form pre-jump share of company 1, `1 - e^{t/2}/2`, absorbed at zero.
pub fn death_example_analytic_kappa(t: f64) -> f64 {
    (1.0 - 0.5 * (0.5 * t).exp()).max(0.0)
}

/// Covariance, jump measure and initial shares of the example.
pub fn death_example_market() -> (MatrixSpec, JumpSpec, Portfolio) {
    let size = VectorSpec::state(|t, _| DVector::from_vec(vec![0.0, death_example_jump_size(t)]));
    let jumps = JumpSpec::new(1.0.into(), 1.0, SizeLaw::Atoms(vec![(1.0, size)]))
        .expect("valid jump law")
        .with_max_jumps(1);
    (
        MatrixSpec::from(DMatrix::zeros(2, 2)),
        jumps,
        Portfolio::uniform(2),
    )
}

/// Simulation against the closed form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeathExampleReport {
    pub n_paths: usize,
    pub dt: f64,
    /// `max |kappa^1_t - (1 - e^{t/2}/2)|` over grid times before the jump.
    pub sup_error: f64,
    pub dying_paths: usize,
    pub dying_fraction: f64,
    /// Standard error of `dying_fraction`.
    pub dying_se: f64,
    /// `max |zeta^1 - 2 log 2|` over dying paths.
    pub death_time_error: f64,
    /// Dying paths whose death is not a continuous vanishing.
    pub wrong_death_modes: usize,
    /// Paths that died although a jump arrived before `2 log 2`, or
    /// survived without one.
    pub inconsistent_paths: usize,
}

/// Tracks the pre-jump error against the closed form.
#[derive(Clone, Debug, Default)]
struct PreJumpError {
    jumped: bool,
    sup_error: f64,
}

impl PathObserver for PreJumpError {
    fn transition(&mut self, tr: &Transition<'_>) -> Result<(), SimError> {
        self.jumped |= tr.jumped;
        if !self.jumped {
            let t = tr.t + tr.dt;
            let err = (tr.kappa_next[1] - death_example_analytic_kappa(t)).abs();
            self.sup_error = self.sup_error.max(err);
        }
        Ok(())
    }
}

pub fn example_death_of_company(
    grid: PathGrid,
    n_paths: usize,
    seed: u64,
    opts: RecordOptions,
) -> Result<(JumpPathSet, DeathExampleReport), JumpError> {
    if grid.dt > 1e-3 {
        return Err(JumpError::InvalidInput(format!(
            "the example needs dt <= 1e-3, got {}",
            grid.dt
        )));
    }
    if grid.t0 != 0.0 || grid.horizon() <= DEATH_EXAMPLE_TIME + 5.0 * grid.dt {
        return Err(JumpError::InvalidInput(
            "the grid must start at 0 and run past 2 log 2".into(),
        ));
    }
    let (c, jumps, k0) = death_example_market();
    let engine = JumpEngine::new(&c, jumps, &k0, grid)?;
    let runs = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let mut obs = (Recorder::new(opts, &grid), PreJumpError::default());
            let (stats, life) = engine.run_seeded(seed, p, &mut obs)?;
            Ok(((obs.0, stats), (life, obs.1.sup_error)))
        })
        .collect::<Result<Vec<_>, JumpError>>()?;
    let (runs, rest): (Vec<_>, Vec<_>) = runs.into_iter().unzip();
    let (lifetimes, errors): (Vec<LifetimeRecord>, Vec<f64>) = rest.into_iter().unzip();
    let opts = RecordOptions {
        store_caps: false,
        ..opts
    };
    let paths = PathSet::from_recorders(grid, seed, 2, opts, runs);

    let mut report = DeathExampleReport {
        n_paths,
        dt: grid.dt,
        sup_error: errors.iter().copied().fold(0.0, f64::max),
        dying_paths: 0,
        dying_fraction: 0.0,
        dying_se: 0.0,
        death_time_error: 0.0,
        wrong_death_modes: 0,
        inconsistent_paths: 0,
    };
    for life in &lifetimes {
        let jumped_early = life
            .jump_times
            .first()
            .is_some_and(|&tau| tau < DEATH_EXAMPLE_TIME);
        let died = life.zeta[1].is_finite();
        if died {
            report.dying_paths += 1;
            report.death_time_error = report
                .death_time_error
                .max((life.zeta[1] - DEATH_EXAMPLE_TIME).abs());
            if life.death_mode[1] != DeathMode::ContinuousVanish {
                report.wrong_death_modes += 1;
            }
        }
        if died == jumped_early || life.zeta[0].is_finite() {
            report.inconsistent_paths += 1;
        }
    }
    let n = n_paths.max(1) as f64;
    report.dying_fraction = report.dying_paths as f64 / n;
    report.dying_se = (report.dying_fraction * (1.0 - report.dying_fraction) / n).sqrt();
    Ok((JumpPathSet { paths, lifetimes }, report))
}
