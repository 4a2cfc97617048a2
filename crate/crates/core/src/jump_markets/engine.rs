//! Simulation of perfectly balanced jump markets.
//!
//! Each grid step runs the continuous balanced log-Euler step, then walks the
//! step interval: the compensator drift
//! `d kappa^i = -kappa^i int <e_i - kappa, x> / (1 + <kappa, x>) nu(dx) dt`
//! is integrated with RK4 up to each candidate jump time of a thinned Poisson
//! clock, and accepted jumps apply
//! `kappa^i <- kappa^i (1 + x^i) / (1 + <kappa, x>)`.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::spec::{check_jump, gross_return, JumpAtom, JumpSpec};
use super::JumpError;
use crate::market_model::{MatrixSpec, PathGrid, Portfolio};
use crate::sde_engine::io::fmt_f64;
use crate::sde_engine::{
    balanced_step, draw_increments, renormalize, rng, Covariance, PathObserver, PathSet, PathStats,
    RecordOptions, Recorder, SimError, Transition,
};

/// Coordinates falling below this during a compensator or jump stage are
/// declared dead.
pub const DEATH_THRESHOLD: f64 = 1e-12;
/// RK4 substep times the local stiffness estimate.
const STIFFNESS_STEP: f64 = 0.5;
const MAX_SUBSTEPS: usize = 1_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeathMode {
    /// The capitalization drifted to zero.
    ContinuousVanish,
    /// A jump of size `-1`.
    JumpToZero,
    Alive,
}

impl DeathMode {
    pub fn label(&self) -> &'static str {
        match self {
            DeathMode::ContinuousVanish => "continuous_vanish",
            DeathMode::JumpToZero => "jump_to_zero",
            DeathMode::Alive => "alive",
        }
    }
}

/// Lifetimes and jump history of one path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LifetimeRecord {
    /// Death time per company, infinite while alive.
    pub zeta: Vec<f64>,
    pub death_mode: Vec<DeathMode>,
    pub jump_times: Vec<f64>,
    /// `int lambda dt` along the path.
    pub intensity_integral: f64,
}

impl LifetimeRecord {
    /// Fresh record; zero initial shares count as dead at time zero.
    pub fn new(kappa0: &[f64]) -> Self {
        let d = kappa0.len();
        let mut rec = Self {
            zeta: vec![f64::INFINITY; d],
            death_mode: vec![DeathMode::Alive; d],
            jump_times: Vec::new(),
            intensity_integral: 0.0,
        };
        for (i, &k) in kappa0.iter().enumerate() {
            if k == 0.0 {
                rec.zeta[i] = 0.0;
                rec.death_mode[i] = DeathMode::ContinuousVanish;
            }
        }
        rec
    }

    pub fn is_alive(&self, i: usize) -> bool {
        self.death_mode[i] == DeathMode::Alive
    }

    /// Jumps at or before `t`.
    pub fn jumps_by(&self, t: f64) -> usize {
        self.jump_times.partition_point(|&s| s <= t)
    }

    /// `zeta_i` cell for CSV output, `inf` while alive.
    pub fn zeta_cell(&self, i: usize) -> String {
        if self.zeta[i].is_finite() {
            fmt_f64(self.zeta[i])
        } else {
            "inf".into()
        }
    }

    fn kill(&mut self, i: usize, t: f64, mode: DeathMode) {
        if self.is_alive(i) {
            self.zeta[i] = t;
            self.death_mode[i] = mode;
        }
    }
}

/// Headers `zeta_1..zeta_d,death_mode_1..death_mode_d`.
pub fn lifetime_header(d: usize) -> Vec<String> {
    (1..=d)
        .map(|i| format!("zeta_{i}"))
        .chain((1..=d).map(|i| format!("death_mode_{i}")))
        .collect()
}

pub fn lifetime_cells(rec: &LifetimeRecord) -> Vec<String> {
    let d = rec.zeta.len();
    (0..d)
        .map(|i| rec.zeta_cell(i))
        .chain(rec.death_mode.iter().map(|m| m.label().to_string()))
        .collect()
}

/// Recorded jump-market ensemble.
#[derive(Clone, Debug)]
pub struct JumpPathSet {
    pub paths: PathSet,
    pub lifetimes: Vec<LifetimeRecord>,
}

/// Balanced jump-market simulator.
#[derive(Clone, Debug)]
pub struct JumpEngine {
    cov: Covariance,
    jumps: JumpSpec,
    kappa0: Vec<f64>,
    grid: PathGrid,
}

struct Scratch {
    atoms: Vec<JumpAtom>,
    stage: [Vec<f64>; 4],
    probe: Vec<f64>,
}

impl JumpEngine {
    pub fn new(
        c_spec: &MatrixSpec,
        jumps: JumpSpec,
        kappa0: &Portfolio,
        grid: PathGrid,
    ) -> Result<Self, JumpError> {
        if !kappa0.is_in_simplex(1e-9) {
            return Err(JumpError::InvalidInput(format!(
                "kappa0 {:?} is not in the closed simplex",
                kappa0.weights()
            )));
        }
        jumps.check_compensator()?;
        let d = kappa0.len();
        let sum: f64 = kappa0.weights().iter().sum();
        let kappa0 = kappa0.weights().iter().map(|&k| k.max(0.0) / sum).collect();
        Ok(Self {
            cov: Covariance::new(c_spec, d)?,
            jumps,
            kappa0,
            grid,
        })
    }

    pub fn d(&self) -> usize {
        self.kappa0.len()
    }

    pub fn grid(&self) -> &PathGrid {
        &self.grid
    }

    pub fn jumps(&self) -> &JumpSpec {
        &self.jumps
    }

    /// Simulates one path. `noise` fills standard normals for the diffusion,
    /// `jump_rng` drives the jump clock and sizes.
    pub fn run_path<N, R, O>(
        &self,
        noise: &mut N,
        jump_rng: &mut R,
        obs: &mut O,
    ) -> Result<(PathStats, LifetimeRecord), JumpError>
    where
        N: FnMut(&mut [f64]),
        R: Rng,
        O: PathObserver + ?Sized,
    {
        let d = self.d();
        let n = self.grid.n_steps;
        let dt = self.grid.dt;
        let silent = self.cov.is_silent();
        let mut stats = PathStats::new();
        let mut rec = LifetimeRecord::new(&self.kappa0);
        let mut kappa = self.kappa0.clone();
        let mut next = vec![0.0; d];
        let mut ck = vec![0.0; d];
        let mut dw = vec![0.0; d];
        let mut dm = vec![0.0; d];
        let (mut c, mut sigma) = self.cov.scratch();
        let mut scratch = Scratch {
            atoms: Vec::new(),
            stage: std::array::from_fn(|_| vec![0.0; d]),
            probe: vec![0.0; d],
        };
        let quiet = self.jumps.is_silent();
        let mut candidate = if quiet {
            f64::INFINITY
        } else {
            self.next_candidate(self.grid.t0, jump_rng)
        };

        stats.record_entries(&kappa);
        obs.start(&kappa, None);
        for step in 0..n {
            let t = self.grid.time(step);
            self.cov.eval(t, &kappa, &mut c, &mut sigma)?;
            draw_increments(silent, noise, dt, &sigma, &mut dw, &mut dm);
            let defect = balanced_step(&kappa, &c, &dm, dt, &mut ck, &mut next, &mut stats);
            stats.record_defect(defect, n);
            let jumps_before = rec.jump_times.len();
            if !quiet {
                self.jump_stage(
                    step,
                    t,
                    dt,
                    &mut next,
                    &mut rec,
                    &mut candidate,
                    jump_rng,
                    &mut scratch,
                )?;
            }
            stats.record_entries(&next);
            obs.transition(&Transition {
                step,
                t,
                dt,
                kappa: &kappa,
                kappa_next: &next,
                caps: None,
                caps_next: None,
                c: &c,
                sigma: &sigma,
                dw: &dw,
                dm: &dm,
                jumped: rec.jump_times.len() > jumps_before,
            })?;
            std::mem::swap(&mut kappa, &mut next);
        }
        Ok((stats, rec))
    }

    fn next_candidate<R: Rng>(&self, from: f64, rng: &mut R) -> f64 {
        if self.jumps.lambda_max == 0.0 {
            return f64::INFINITY;
        }
        let e: f64 = Exp1.sample(rng);
        from + e / self.jumps.lambda_max
    }

    #[allow(clippy::too_many_arguments)]
    fn jump_stage<R: Rng>(
        &self,
        step: usize,
        t: f64,
        dt: f64,
        kappa: &mut [f64],
        rec: &mut LifetimeRecord,
        candidate: &mut f64,
        rng: &mut R,
        scratch: &mut Scratch,
    ) -> Result<(), JumpError> {
        let end = t + dt;
        let mut s = t;
        loop {
            let target = candidate.min(end);
            self.compensate(step, s, target, kappa, rec, scratch)?;
            s = target;
            if *candidate > end {
                return Ok(());
            }
            let lam = self.jumps.intensity_at(s, kappa, rec.jump_times.len())?;
            let u: f64 = rng.random();
            if u * self.jumps.lambda_max < lam {
                let x = self.jumps.sample(s, kappa, rng)?;
                apply_jump(s, kappa, &x, rec, step)?;
            }
            *candidate = self.next_candidate(*candidate, rng);
        }
    }

    /// Integrates the compensator drift over `[from, to]`.
    fn compensate(
        &self,
        step: usize,
        from: f64,
        to: f64,
        kappa: &mut [f64],
        rec: &mut LifetimeRecord,
        scratch: &mut Scratch,
    ) -> Result<(), JumpError> {
        let mut s = from;
        let mut count = 0;
        while s < to {
            let jumps = rec.jump_times.len();
            if self.jumps.max_jumps.is_some_and(|m| jumps >= m) {
                return Ok(());
            }
            let lam = self
                .jumps
                .compensator_into(s, kappa, jumps, &mut scratch.atoms)?;
            let stiffness = stiffness(&scratch.atoms, kappa);
            let mut h = if stiffness > 0.0 {
                (STIFFNESS_STEP / stiffness).min(to - s)
            } else {
                to - s
            };
            if s + h == s {
                h = to - s;
            }
            rec.intensity_integral += lam * h;
            self.rk4(s, h, kappa, jumps, scratch)?;
            s = if h == to - s { to } else { s + h };
            self.bury(step, s, kappa, rec)?;
            count += 1;
            if count > MAX_SUBSTEPS {
                return Err(JumpError::StiffCompensator { step });
            }
        }
        Ok(())
    }

    /// One RK4 step; expects `scratch.atoms` evaluated at `(s, kappa)`.
    fn rk4(
        &self,
        s: f64,
        h: f64,
        kappa: &mut [f64],
        jumps: usize,
        scratch: &mut Scratch,
    ) -> Result<(), JumpError> {
        let d = kappa.len();
        let Scratch {
            atoms,
            stage,
            probe,
        } = scratch;
        let nodes = [(0.0, 0.0), (0.5, 0.5), (0.5, 0.5), (1.0, 1.0)];
        for (k, &(tf, kf)) in nodes.iter().enumerate() {
            if k == 0 {
                // atoms already hold the compensator at (s, kappa)
                compensator_drift(kappa, atoms, &mut stage[0]);
                continue;
            }
            for i in 0..d {
                probe[i] = kappa[i] + kf * h * stage[k - 1][i];
            }
            self.jumps
                .compensator_into(s + tf * h, probe, jumps, atoms)?;
            compensator_drift(probe, atoms, &mut stage[k]);
        }
        for i in 0..d {
            if kappa[i] > 0.0 {
                kappa[i] +=
                    h / 6.0 * (stage[0][i] + 2.0 * stage[1][i] + 2.0 * stage[2][i] + stage[3][i]);
            }
        }
        if kappa.iter().any(|k| !k.is_finite()) {
            return Err(JumpError::InvalidJump(format!(
                "compensator leaves the domain 1 + <kappa, x> > 0 near t = {s}"
            )));
        }
        Ok(())
    }

    /// Declares coordinates below the threshold dead and renormalizes.
    fn bury(
        &self,
        step: usize,
        t: f64,
        kappa: &mut [f64],
        rec: &mut LifetimeRecord,
    ) -> Result<(), JumpError> {
        let mut sum = 0.0;
        for (i, k) in kappa.iter_mut().enumerate() {
            if *k < DEATH_THRESHOLD {
                if rec.is_alive(i) {
                    rec.kill(i, t, DeathMode::ContinuousVanish);
                }
                *k = 0.0;
            }
            sum += *k;
        }
        if !(sum > 0.0) {
            return Err(SimError::ZeroTotalCapital { step }.into());
        }
        let mut stats = PathStats::new();
        renormalize(kappa, sum, &mut stats);
        Ok(())
    }

    pub fn run_seeded<O: PathObserver + ?Sized>(
        &self,
        seed: u64,
        path: usize,
        obs: &mut O,
    ) -> Result<(PathStats, LifetimeRecord), JumpError> {
        let mut g = rng::path_rng(seed, path);
        let mut j = rng::jump_rng(seed, path);
        self.run_path(
            &mut |z: &mut [f64]| rng::fill_normals(&mut g, z),
            &mut j,
            obs,
        )
    }

    pub fn simulate(
        &self,
        n_paths: usize,
        seed: u64,
        opts: RecordOptions,
    ) -> Result<JumpPathSet, JumpError> {
        let runs = (0..n_paths)
            .into_par_iter()
            .map(|p| {
                let mut recorder = Recorder::new(opts, &self.grid);
                let (st, life) = self.run_seeded(seed, p, &mut recorder)?;
                Ok(((recorder, st), life))
            })
            .collect::<Result<Vec<_>, JumpError>>()?;
        let (runs, lifetimes): (Vec<_>, Vec<_>) = runs.into_iter().unzip();
        let opts = RecordOptions {
            store_caps: false,
            ..opts
        };
        Ok(JumpPathSet {
            paths: PathSet::from_recorders(self.grid, seed, self.d(), opts, runs),
            lifetimes,
        })
    }
}

/// `-kappa^i sum_k w_k (x_k^i - <kappa, x_k>) / (1 + <kappa, x_k>)`.
pub fn compensator_drift(kappa: &[f64], atoms: &[JumpAtom], out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for atom in atoms {
        let gross = gross_return(kappa, &atom.x);
        let scale = atom.weight / gross;
        for i in 0..kappa.len() {
            out[i] -= kappa[i] * (1.0 + atom.x[i] - gross) * scale;
        }
    }
}

/// Lipschitz-type bound `sum_k w_k max_{i alive} |x_k^i| / (1 + <kappa, x_k>)`
/// of the compensator drift.
fn stiffness(atoms: &[JumpAtom], kappa: &[f64]) -> f64 {
    atoms
        .iter()
        .map(|a| {
            let size = kappa
                .iter()
                .zip(a.x.iter())
                .filter(|(k, _)| **k > 0.0)
                .map(|(_, x)| x.abs())
                .fold(0.0, f64::max);
            a.weight * size / gross_return(kappa, &a.x).max(f64::MIN_POSITIVE)
        })
        .sum()
}

/// Applies one jump of size `x` at time `t`.
pub fn apply_jump(
    t: f64,
    kappa: &mut [f64],
    x: &DVector<f64>,
    rec: &mut LifetimeRecord,
    step: usize,
) -> Result<(), JumpError> {
    if x.iter().all(|&v| v == 0.0) {
        return Ok(());
    }
    check_jump(kappa, x)?;
    let denom = gross_return(kappa, x);
    let mut sum = 0.0;
    for i in 0..kappa.len() {
        kappa[i] *= (1.0 + x[i]) / denom;
        if kappa[i] < DEATH_THRESHOLD {
            if rec.is_alive(i) {
                let mode = if x[i] <= -1.0 {
                    DeathMode::JumpToZero
                } else {
                    DeathMode::ContinuousVanish
                };
                rec.kill(i, t, mode);
            }
            kappa[i] = 0.0;
        }
        sum += kappa[i];
    }
    if !(sum > 0.0) {
        return Err(SimError::ZeroTotalCapital { step }.into());
    }
    let mut stats = PathStats::new();
    renormalize(kappa, sum, &mut stats);
    rec.jump_times.push(t);
    Ok(())
}
