//! Log-Euler simulation of capitalizations and of balanced relative
//! capitalizations on the simplex.

pub mod io;
mod observer;
pub mod rng;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use thiserror::Error;

use crate::market_model::{
    linalg, psd_factor, MarketParams, MatrixSpec, ModelError, PathGrid, Portfolio, ScalarSpec,
    VectorSpec,
};

pub use observer::{PathObserver, PathStats, RecordOptions, Recorder, Transition};

/// Floor applied to coordinates that underflow during a step.
pub const KAPPA_FLOOR: f64 = 1e-300;
/// Largest admissible `|log S|`.
pub const LOG_CAP_LIMIT: f64 = 700.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("|log S| exceeded {LOG_CAP_LIMIT} on path {path} at step {step}")]
    NumericalOverflow { path: usize, step: usize },
    #[error("inconsistent initial state: {0}")]
    InconsistentInitialState(String),
    #[error("total capital is zero at step {step}")]
    ZeroTotalCapital { step: usize },
    #[error("invalid simulation input: {0}")]
    InvalidInput(String),
    #[error("path observer failed: {0}")]
    Observer(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Simulated ensemble on a uniform grid.
///
/// Per-path buffers are flat: `kappa[p]` holds `steps.len() * d` values in
/// step order, `increments[p]` holds `n_steps * d` Brownian increments.
#[derive(Clone, Debug)]
pub struct PathSet {
    pub grid: PathGrid,
    pub n_paths: usize,
    pub seed: u64,
    pub d: usize,
    /// Grid indices of the recorded states.
    pub steps: Vec<usize>,
    pub kappa: Vec<Vec<f64>>,
    pub caps: Option<Vec<Vec<f64>>>,
    pub increments: Option<Vec<Vec<f64>>>,
    pub stats: Vec<PathStats>,
}

impl PathSet {
    pub fn n_records(&self) -> usize {
        self.steps.len()
    }

    /// True when every grid step is recorded.
    pub fn is_dense(&self) -> bool {
        self.steps.len() == self.grid.n_steps + 1
    }

    pub fn kappa_at(&self, path: usize, record: usize) -> &[f64] {
        &self.kappa[path][record * self.d..(record + 1) * self.d]
    }

    pub fn caps_at(&self, path: usize, record: usize) -> Option<&[f64]> {
        self.caps
            .as_ref()
            .map(|c| &c[path][record * self.d..(record + 1) * self.d])
    }

    pub fn increment(&self, path: usize, step: usize) -> Option<&[f64]> {
        self.increments
            .as_ref()
            .map(|w| &w[path][step * self.d..(step + 1) * self.d])
    }

    pub fn terminal_kappa(&self, path: usize) -> &[f64] {
        self.kappa_at(path, self.n_records() - 1)
    }

    pub fn record_time(&self, record: usize) -> f64 {
        self.grid.time(self.steps[record])
    }

    /// Recorded index closest to time `t`.
    pub fn record_at(&self, t: f64) -> usize {
        let target = self.grid.step_at(t);
        match self.steps.binary_search(&target) {
            Ok(i) => i,
            Err(i) if i == 0 => 0,
            Err(i) if i >= self.steps.len() => self.steps.len() - 1,
            Err(i) => {
                if target - self.steps[i - 1] <= self.steps[i] - target {
                    i - 1
                } else {
                    i
                }
            }
        }
    }

    /// Assembles an ensemble from per-path recorders in path order.
    pub fn from_recorders(
        grid: PathGrid,
        seed: u64,
        d: usize,
        opts: RecordOptions,
        runs: Vec<(Recorder, PathStats)>,
    ) -> Self {
        let n_paths = runs.len();
        let mut kappa = Vec::with_capacity(n_paths);
        let mut caps = Vec::with_capacity(n_paths);
        let mut incs = Vec::with_capacity(n_paths);
        let mut stats = Vec::with_capacity(n_paths);
        for (rec, st) in runs {
            kappa.push(rec.kappa);
            caps.push(rec.caps);
            incs.push(rec.increments);
            stats.push(st);
        }
        let has_caps = opts.store_caps && caps.iter().all(|c| !c.is_empty());
        Self {
            grid,
            n_paths,
            seed,
            d,
            steps: opts.recorded_steps(&grid),
            kappa,
            caps: has_caps.then_some(caps),
            increments: opts.store_increments.then_some(incs),
            stats,
        }
    }
}

/// Runs `f` for every path index in parallel and returns results in path
/// order. The first error by path index wins.
pub fn run_ensemble<T, F>(n_paths: usize, f: F) -> Result<Vec<T>, SimError>
where
    T: Send,
    F: Fn(usize) -> Result<T, SimError> + Sync + Send,
{
    (0..n_paths).into_par_iter().map(f).collect()
}

/// Covariance and its square root, cached when `c` is constant.
#[derive(Clone, Debug)]
pub(crate) struct Covariance {
    spec: MatrixSpec,
    fixed: Option<(DMatrix<f64>, DMatrix<f64>)>,
    d: usize,
}

impl Covariance {
    pub(crate) fn new(spec: &MatrixSpec, d: usize) -> Result<Self, SimError> {
        let fixed = match spec.as_constant() {
            Some(_) => {
                let probe = vec![1.0 / d as f64; d];
                let c = spec.eval(0.0, &probe)?;
                let sigma = psd_factor(&c)?;
                Some((c, sigma))
            }
            None => None,
        };
        Ok(Self {
            spec: spec.clone(),
            fixed,
            d,
        })
    }

    /// No noise at all: the covariance is constant and identically zero.
    pub(crate) fn is_silent(&self) -> bool {
        matches!(&self.fixed, Some((c, _)) if c.iter().all(|&x| x == 0.0))
    }

    pub(crate) fn eval(
        &self,
        t: f64,
        kappa: &[f64],
        c: &mut DMatrix<f64>,
        sigma: &mut DMatrix<f64>,
    ) -> Result<(), SimError> {
        match &self.fixed {
            Some((c0, s0)) => {
                if c.shape() != c0.shape() {
                    c.clone_from(c0);
                    sigma.clone_from(s0);
                }
            }
            None => {
                *c = self.spec.eval(t, kappa)?;
                *sigma = psd_factor(c)?;
            }
        }
        Ok(())
    }

    pub(crate) fn scratch(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        (DMatrix::zeros(0, 0), DMatrix::zeros(self.d, self.d))
    }
}

/// Draws `dw ~ N(0, dt I)` and sets `dm = sigma dw`; leaves both zero when
/// the covariance is silent.
pub(crate) fn draw_increments<N: FnMut(&mut [f64])>(
    silent: bool,
    noise: &mut N,
    dt: f64,
    sigma: &DMatrix<f64>,
    dw: &mut [f64],
    dm: &mut [f64],
) {
    if silent {
        return;
    }
    noise(dw);
    let sq = dt.sqrt();
    for z in dw.iter_mut() {
        *z *= sq;
    }
    linalg::mat_vec_into(sigma, dw, dm);
}

/// One log-Euler step of the balanced system followed by renormalization.
///
/// Each positive coordinate moves by
/// `-1/2 <e_i - kappa, c (e_i - kappa)> dt + <e_i - kappa, dM>`. Zero
/// coordinates stay at zero. Returns the pre-renormalization sum defect.
pub(crate) fn balanced_step(
    kappa: &[f64],
    c: &DMatrix<f64>,
    dm: &[f64],
    dt: f64,
    ck: &mut [f64],
    next: &mut [f64],
    stats: &mut PathStats,
) -> f64 {
    linalg::mat_vec_into(c, kappa, ck);
    let q = linalg::dot(kappa, ck);
    let km = linalg::dot(kappa, dm);
    let mut sum = 0.0;
    for i in 0..kappa.len() {
        let k = kappa[i];
        if k > 0.0 {
            let drift = -0.5 * (c[(i, i)] - 2.0 * ck[i] + q);
            let v = k * (drift * dt + dm[i] - km).exp();
            next[i] = v;
            sum += v;
        } else {
            next[i] = 0.0;
        }
    }
    renormalize(next, sum, stats);
    (sum - 1.0).abs()
}

pub(crate) fn renormalize(next: &mut [f64], sum: f64, stats: &mut PathStats) {
    for v in next.iter_mut() {
        if *v > 0.0 {
            *v /= sum;
            if !(*v >= KAPPA_FLOOR) {
                *v = KAPPA_FLOOR;
                stats.clamp_events += 1;
            }
        }
    }
}

/// Online reconstruction of capitalizations from a balanced path:
/// `d log <S,1> = (r + 1/2 <kappa, c kappa>) dt + <kappa, dM>`, `S = kappa <S,1>`.
#[derive(Clone, Debug)]
pub struct CapitalLift {
    r: ScalarSpec,
    log_total: f64,
}

impl CapitalLift {
    pub fn new(r_spec: &ScalarSpec, s0: &DVector<f64>, kappa0: &[f64]) -> Result<Self, SimError> {
        if s0.len() != kappa0.len() {
            return Err(SimError::InconsistentInitialState(format!(
                "s0 has length {}, kappa0 has length {}",
                s0.len(),
                kappa0.len()
            )));
        }
        let total: f64 = s0.iter().sum();
        if !(total > 0.0) {
            return Err(SimError::InconsistentInitialState(
                "s0 must have positive total".into(),
            ));
        }
        for (i, (&s, &k)) in s0.iter().zip(kappa0).enumerate() {
            if (s / total - k).abs() > 1e-9 {
                return Err(SimError::InconsistentInitialState(format!(
                    "s0[{i}]/<s0,1> = {} but kappa0[{i}] = {k}",
                    s / total
                )));
            }
        }
        Ok(Self {
            r: r_spec.clone(),
            log_total: total.ln(),
        })
    }

    pub fn total(&self) -> f64 {
        self.log_total.exp()
    }

    pub fn fill_caps(&self, kappa: &[f64], out: &mut [f64]) {
        let total = self.total();
        for (o, &k) in out.iter_mut().zip(kappa) {
            *o = k * total;
        }
    }

    /// Advances the total over one step. `ck = c kappa` at the left point.
    pub fn advance(
        &mut self,
        t: f64,
        dt: f64,
        kappa: &[f64],
        ck: &[f64],
        dm: &[f64],
    ) -> Result<(), SimError> {
        let r = self.r.eval(t, kappa)?;
        self.log_total += (r + 0.5 * linalg::dot(kappa, ck)) * dt + linalg::dot(kappa, dm);
        Ok(())
    }

    fn check(&self, kappa: &[f64], path: usize, step: usize) -> Result<(), SimError> {
        let bad = kappa
            .iter()
            .any(|&k| k > 0.0 && (k.ln() + self.log_total).abs() > LOG_CAP_LIMIT);
        if bad || !self.log_total.is_finite() {
            return Err(SimError::NumericalOverflow { path, step });
        }
        Ok(())
    }
}

/// Balanced relative-capitalization model, optionally lifted to
/// capitalizations.
#[derive(Clone, Debug)]
pub struct BalancedEngine {
    cov: Covariance,
    kappa0: Vec<f64>,
    grid: PathGrid,
    lift: Option<(ScalarSpec, DVector<f64>)>,
}

impl BalancedEngine {
    pub fn new(c_spec: &MatrixSpec, kappa0: &Portfolio, grid: PathGrid) -> Result<Self, SimError> {
        if !kappa0.is_in_simplex(1e-9) {
            return Err(SimError::InvalidInput(format!(
                "kappa0 {:?} is not in the closed simplex",
                kappa0.weights()
            )));
        }
        let d = kappa0.len();
        // Exact renormalization so every recorded state sums to one.
        let sum: f64 = kappa0.weights().iter().sum();
        let kappa0 = kappa0.weights().iter().map(|&k| k.max(0.0) / sum).collect();
        Ok(Self {
            cov: Covariance::new(c_spec, d)?,
            kappa0,
            grid,
            lift: None,
        })
    }

    /// Also reconstructs capitalizations with `a = c kappa + r 1`.
    pub fn lifted(mut self, r_spec: &ScalarSpec, s0: &DVector<f64>) -> Result<Self, SimError> {
        CapitalLift::new(r_spec, s0, &self.kappa0)?;
        self.lift = Some((r_spec.clone(), s0.clone()));
        Ok(self)
    }

    pub fn d(&self) -> usize {
        self.kappa0.len()
    }

    pub fn grid(&self) -> &PathGrid {
        &self.grid
    }

    pub fn kappa0(&self) -> &[f64] {
        &self.kappa0
    }

    pub fn is_silent(&self) -> bool {
        self.cov.is_silent()
    }

    /// Simulates one path. `noise` fills its argument with standard normals;
    /// `path` only labels errors.
    pub fn run_path<N, O>(
        &self,
        path: usize,
        noise: &mut N,
        obs: &mut O,
    ) -> Result<PathStats, SimError>
    where
        N: FnMut(&mut [f64]),
        O: PathObserver + ?Sized,
    {
        let d = self.d();
        let n = self.grid.n_steps;
        let dt = self.grid.dt;
        let silent = self.cov.is_silent();
        let mut stats = PathStats::new();
        let mut kappa = self.kappa0.clone();
        let mut next = vec![0.0; d];
        let mut ck = vec![0.0; d];
        let mut dw = vec![0.0; d];
        let mut dm = vec![0.0; d];
        let (mut c, mut sigma) = self.cov.scratch();
        let mut lift = match &self.lift {
            Some((r, s0)) => Some(CapitalLift::new(r, s0, &self.kappa0)?),
            None => None,
        };
        let mut caps = vec![0.0; d];
        let mut caps_next = vec![0.0; d];
        if let Some(l) = &lift {
            l.fill_caps(&kappa, &mut caps);
        }
        stats.record_entries(&kappa);
        obs.start(&kappa, lift.as_ref().map(|_| caps.as_slice()));
        for step in 0..n {
            let t = self.grid.time(step);
            self.cov.eval(t, &kappa, &mut c, &mut sigma)?;
            draw_increments(silent, noise, dt, &sigma, &mut dw, &mut dm);
            let defect = balanced_step(&kappa, &c, &dm, dt, &mut ck, &mut next, &mut stats);
            stats.record_defect(defect, n);
            stats.record_entries(&next);
            if let Some(l) = lift.as_mut() {
                l.advance(t, dt, &kappa, &ck, &dm)?;
                l.check(&next, path, step)?;
                l.fill_caps(&next, &mut caps_next);
            }
            let has_caps = lift.is_some();
            obs.transition(&Transition {
                step,
                t,
                dt,
                kappa: &kappa,
                kappa_next: &next,
                caps: has_caps.then_some(caps.as_slice()),
                caps_next: has_caps.then_some(caps_next.as_slice()),
                c: &c,
                sigma: &sigma,
                dw: &dw,
                dm: &dm,
                jumped: false,
            })?;
            std::mem::swap(&mut kappa, &mut next);
            std::mem::swap(&mut caps, &mut caps_next);
        }
        Ok(stats)
    }

    /// Simulates one path with its own seeded Brownian stream.
    pub fn run_seeded<O: PathObserver + ?Sized>(
        &self,
        seed: u64,
        path: usize,
        obs: &mut O,
    ) -> Result<PathStats, SimError> {
        let mut rng = rng::path_rng(seed, path);
        self.run_path(
            path,
            &mut |z: &mut [f64]| rng::fill_normals(&mut rng, z),
            obs,
        )
    }

    pub fn simulate(
        &self,
        n_paths: usize,
        seed: u64,
        opts: RecordOptions,
    ) -> Result<PathSet, SimError> {
        let runs = run_ensemble(n_paths, |p| {
            let mut rec = Recorder::new(opts, &self.grid);
            let st = self.run_seeded(seed, p, &mut rec)?;
            Ok((rec, st))
        })?;
        let opts = RecordOptions {
            store_caps: opts.store_caps && self.lift.is_some(),
            ..opts
        };
        Ok(PathSet::from_recorders(
            self.grid,
            seed,
            self.d(),
            opts,
            runs,
        ))
    }
}

/// General capitalization model `dS^i = S^i a^i dt + S^i dM^i`.
#[derive(Clone, Debug)]
pub struct CapitalizationEngine {
    params: MarketParams,
    cov: Covariance,
    grid: PathGrid,
}

impl CapitalizationEngine {
    pub fn new(params: &MarketParams, grid: PathGrid) -> Result<Self, SimError> {
        let params = crate::market_model::validate_params(params.clone())?;
        let cov = Covariance::new(&params.c, params.d)?;
        Ok(Self { params, cov, grid })
    }

    pub fn params(&self) -> &MarketParams {
        &self.params
    }

    pub fn grid(&self) -> &PathGrid {
        &self.grid
    }

    pub fn run_path<N, O>(
        &self,
        path: usize,
        noise: &mut N,
        obs: &mut O,
    ) -> Result<PathStats, SimError>
    where
        N: FnMut(&mut [f64]),
        O: PathObserver + ?Sized,
    {
        let d = self.params.d;
        let n = self.grid.n_steps;
        let dt = self.grid.dt;
        let silent = self.cov.is_silent();
        let mut stats = PathStats::new();
        let mut log_s: Vec<f64> = self.params.s0.iter().map(|s| s.ln()).collect();
        let mut caps: Vec<f64> = self.params.s0.iter().copied().collect();
        let mut caps_next = vec![0.0; d];
        let mut kappa = vec![0.0; d];
        let mut next = vec![0.0; d];
        let mut dw = vec![0.0; d];
        let mut dm = vec![0.0; d];
        let (mut c, mut sigma) = self.cov.scratch();
        kappa_from_logs(&log_s, &mut kappa);
        stats.record_entries(&kappa);
        obs.start(&kappa, Some(&caps));
        for step in 0..n {
            let t = self.grid.time(step);
            self.cov.eval(t, &kappa, &mut c, &mut sigma)?;
            let a = self.params.a.eval(t, &kappa)?;
            draw_increments(silent, noise, dt, &sigma, &mut dw, &mut dm);
            for i in 0..d {
                log_s[i] += (a[i] - 0.5 * c[(i, i)]) * dt + dm[i];
                if !(log_s[i].abs() <= LOG_CAP_LIMIT) {
                    return Err(SimError::NumericalOverflow { path, step });
                }
                caps_next[i] = log_s[i].exp();
            }
            kappa_from_logs(&log_s, &mut next);
            stats.record_entries(&next);
            obs.transition(&Transition {
                step,
                t,
                dt,
                kappa: &kappa,
                kappa_next: &next,
                caps: Some(&caps),
                caps_next: Some(&caps_next),
                c: &c,
                sigma: &sigma,
                dw: &dw,
                dm: &dm,
                jumped: false,
            })?;
            std::mem::swap(&mut kappa, &mut next);
            std::mem::swap(&mut caps, &mut caps_next);
        }
        Ok(stats)
    }

    pub fn run_seeded<O: PathObserver + ?Sized>(
        &self,
        seed: u64,
        path: usize,
        obs: &mut O,
    ) -> Result<PathStats, SimError> {
        let mut rng = rng::path_rng(seed, path);
        self.run_path(
            path,
            &mut |z: &mut [f64]| rng::fill_normals(&mut rng, z),
            obs,
        )
    }

    pub fn simulate(
        &self,
        n_paths: usize,
        seed: u64,
        opts: RecordOptions,
    ) -> Result<PathSet, SimError> {
        let runs = run_ensemble(n_paths, |p| {
            let mut rec = Recorder::new(opts, &self.grid);
            let st = self.run_seeded(seed, p, &mut rec)?;
            Ok((rec, st))
        })?;
        Ok(PathSet::from_recorders(
            self.grid,
            seed,
            self.params.d,
            opts,
            runs,
        ))
    }
}

fn kappa_from_logs(log_s: &[f64], out: &mut [f64]) {
    let m = log_s.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let mut sum = 0.0;
    for (o, &l) in out.iter_mut().zip(log_s) {
        *o = (l - m).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Simulates the capitalization SDE with full recording.
pub fn simulate_capitalizations(
    params: &MarketParams,
    grid: PathGrid,
    n_paths: usize,
    seed: u64,
) -> Result<PathSet, SimError> {
    CapitalizationEngine::new(params, grid)?.simulate(n_paths, seed, RecordOptions::default())
}

/// Simulates the balanced relative-capitalization system with full recording.
pub fn simulate_relative_caps_balanced(
    c_spec: &MatrixSpec,
    kappa0: &Portfolio,
    grid: PathGrid,
    n_paths: usize,
    seed: u64,
) -> Result<PathSet, SimError> {
    BalancedEngine::new(c_spec, kappa0, grid)?.simulate(n_paths, seed, RecordOptions::default())
}

/// Fills in capitalizations for a densely recorded balanced ensemble.
///
/// The covariance spec is needed because the total-capital drift involves
/// `<kappa, c kappa>`; the factor is recomputed exactly as the engine did.
pub fn lift_to_capitalizations(
    paths: &PathSet,
    c_spec: &MatrixSpec,
    r_spec: &ScalarSpec,
    s0: &DVector<f64>,
) -> Result<PathSet, SimError> {
    let incs = paths
        .increments
        .as_ref()
        .filter(|_| paths.is_dense())
        .ok_or_else(|| SimError::InvalidInput("lift needs every step and its increments".into()))?;
    let d = paths.d;
    let cov = Covariance::new(c_spec, d)?;
    let grid = paths.grid;
    let caps = run_ensemble(paths.n_paths, |p| {
        let mut lift = CapitalLift::new(r_spec, s0, paths.kappa_at(p, 0))?;
        let (mut c, mut sigma) = cov.scratch();
        let mut ck = vec![0.0; d];
        let mut dm = vec![0.0; d];
        let mut out = vec![0.0; paths.n_records() * d];
        lift.fill_caps(paths.kappa_at(p, 0), &mut out[..d]);
        for step in 0..grid.n_steps {
            let t = grid.time(step);
            let kappa = paths.kappa_at(p, step);
            cov.eval(t, kappa, &mut c, &mut sigma)?;
            linalg::mat_vec_into(&c, kappa, &mut ck);
            linalg::mat_vec_into(&sigma, &incs[p][step * d..(step + 1) * d], &mut dm);
            lift.advance(t, grid.dt, kappa, &ck, &dm)?;
            let next = paths.kappa_at(p, step + 1);
            lift.check(next, p, step)?;
            lift.fill_caps(next, &mut out[(step + 1) * d..(step + 2) * d]);
        }
        Ok(out)
    })?;
    let mut lifted = paths.clone();
    lifted.caps = Some(caps);
    Ok(lifted)
}

/// `kappa^i = S^i / sum_j S^j` per step. Zero entries (dead companies) are
/// allowed as long as the total stays positive.
pub fn relative_caps_from_caps(caps: &[DVector<f64>]) -> Result<Vec<DVector<f64>>, SimError> {
    caps.iter()
        .enumerate()
        .map(|(step, s)| {
            if s.iter().any(|&x| x < 0.0 || !x.is_finite()) {
                return Err(SimError::InvalidInput(format!(
                    "negative capitalization at step {step}"
                )));
            }
            let total: f64 = s.iter().sum();
            if !(total > 0.0) {
                return Err(SimError::ZeroTotalCapital { step });
            }
            Ok(s / total)
        })
        .collect()
}

/// Market parameters of a perfectly balanced market: `a = c kappa + r 1`.
pub fn balanced_params(c_spec: &MatrixSpec, r_spec: &ScalarSpec, s0: DVector<f64>) -> MarketParams {
    let c = c_spec.clone();
    let r = r_spec.clone();
    let a = VectorSpec::state(move |t, k| {
        let cm = c
            .eval(t, k)
            .expect("covariance shape checked at validation");
        let rr = r.eval(t, k).expect("scalar spec");
        let kv = DVector::from_column_slice(k);
        cm * kv + DVector::from_element(k.len(), rr)
    });
    MarketParams::new(a, c_spec.clone(), r_spec.clone(), s0)
}
