//! Simulation and diagnostics of one scenario, reduced in path order.

use std::collections::BTreeMap;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use balmarket_core::balance_diag::{
    balance_report, brownian_lln_ratios, classify_outcome, equivalence_classes,
    exponential_martingale_terminals, limiting_distribution, tail_summaries, BalanceReport,
    Classification, Coefficients, DiagnosticsConfig, DistanceMatrix, LimitingReport, Partition,
    PathDiagnostics, PathDiagnosticsOutput, TailSummary, TailTracker,
};
use balmarket_core::jump_markets::{
    death_example_market, example_death_of_company, loss_of_balance_jump, pairwise_distance_jump,
    DeathExampleReport, JumpEngine, JumpMarket, JumpPathSet, LifetimeRecord,
};
use balmarket_core::market_model::{PathGrid, Portfolio};
use balmarket_core::sde_engine::io::{kappa_checkpoints, CheckpointStats};
use balmarket_core::sde_engine::{
    run_ensemble, BalancedEngine, CapitalizationEngine, PathObserver, PathSet, PathStats,
    RecordOptions, Recorder, SimError,
};

use crate::config::{MarketConfig, ScenarioConfig, Thresholds};
use crate::CliError;

/// Loss-of-balance outcome of one path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathBalance {
    pub path: usize,
    pub classification: Classification,
    pub l_terminal: f64,
    pub slope_tail: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BalanceDetail {
    pub path: usize,
    #[serde(flatten)]
    pub report: BalanceReport,
    /// Jump markets: `L` built from the jump-adjusted growth gap.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l_growth: Option<Vec<f64>>,
}

/// Contents of `balance.json`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BalanceOutput {
    pub eps_slope: f64,
    pub l_cap: f64,
    pub paths: Vec<PathBalance>,
    pub reports: Vec<BalanceDetail>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathDistances {
    pub path: usize,
    /// `None` where a company of the pair is dead from the start.
    pub matrix: Vec<Vec<Option<f64>>>,
    pub partition: Partition,
}

/// Contents of `distances.json`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DistanceOutput {
    pub threshold: f64,
    /// Average over every path with a distance matrix.
    pub mean: Vec<Vec<f64>>,
    pub paths: Vec<PathDistances>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BalanceCounts {
    pub classified: usize,
    pub balanced: usize,
    pub unbalanced: usize,
    pub indeterminate: usize,
    pub balanced_fraction: f64,
    pub unbalanced_fraction: f64,
    pub mean_l_terminal: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LimitingSummary {
    pub atoms: Vec<usize>,
    pub interior: usize,
    pub oscillating: usize,
    pub indeterminate: usize,
    pub atom_fractions: Vec<f64>,
    pub oscillating_fraction: f64,
    /// Oscillating paths among the unbalanced ones.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oscillating_among_unbalanced: Option<f64>,
    /// Path counts by balance class, then limit class.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub by_balance: BTreeMap<String, BTreeMap<String, usize>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegregationSummary {
    pub threshold: f64,
    pub paths: usize,
    /// Paths whose companies split into more than one class.
    pub segregated_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LifetimeSummary {
    pub deaths: Vec<usize>,
    pub mean_jumps: f64,
    /// Pooled realized jumps over the pooled integrated intensity.
    pub jump_count_ratio: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
}

impl MeanSe {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        Self {
            mean,
            se: (var / n).sqrt(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LlnSummary {
    pub horizon: f64,
    /// `W_T / T`.
    pub w_over_t: MeanSe,
    pub exp_threshold: f64,
    /// Fraction of paths with `exp(W_T - T/2) > exp_threshold`.
    pub exp_tail: MeanSe,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Numerics {
    pub max_sum_defect: f64,
    pub clamp_events: usize,
}

/// Contents of `summary.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub engine_version: String,
    pub config: ScenarioConfig,
    pub seed: u64,
    pub n_paths: usize,
    pub d: usize,
    pub checkpoints: Vec<CheckpointStats>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub balance: Option<BalanceCounts>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limiting: Option<LimitingSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segregation: Option<SegregationSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lifetimes: Option<LifetimeSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub death_example: Option<DeathExampleReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lln: Option<LlnSummary>,
    pub numerics: Numerics,
    /// SHA-256 of each CSV output.
    #[serde(default)]
    pub digests: BTreeMap<String, String>,
}

/// Everything a run produces, before it is written.
#[derive(Clone, Debug)]
pub struct ScenarioResults {
    pub paths: PathSet,
    pub lifetimes: Option<Vec<LifetimeRecord>>,
    pub tails: Vec<TailSummary>,
    /// `L_T` per path where known.
    pub l_terminal: Vec<Option<f64>>,
    pub balance: BalanceOutput,
    pub distances: DistanceOutput,
    pub limiting: Option<LimitingReport>,
    pub summary: Summary,
}

enum Continuous {
    Balanced(BalancedEngine),
    General(CapitalizationEngine),
}

impl Continuous {
    fn run<O: PathObserver + ?Sized>(
        &self,
        seed: u64,
        path: usize,
        obs: &mut O,
    ) -> Result<PathStats, SimError> {
        match self {
            Continuous::Balanced(e) => e.run_seeded(seed, path, obs),
            Continuous::General(e) => e.run_seeded(seed, path, obs),
        }
    }
}

struct ContinuousPath {
    recorder: Recorder,
    stats: PathStats,
    diag: Option<PathDiagnosticsOutput>,
    tail: TailSummary,
}

fn record_options(cfg: &ScenarioConfig, grid: &PathGrid, store_caps: bool) -> RecordOptions {
    RecordOptions {
        record_every: cfg.record_every(grid),
        store_caps,
        store_increments: false,
    }
}

fn classify_all(
    times: &[f64],
    l: &[Vec<f64>],
    first_path: usize,
    thresholds: &Thresholds,
) -> Vec<PathBalance> {
    l.iter()
        .enumerate()
        .map(|(k, l)| {
            let (classification, slope_tail) = classify_outcome(times, l, thresholds.balance());
            PathBalance {
                path: first_path + k,
                classification,
                l_terminal: l.last().copied().unwrap_or(0.0),
                slope_tail,
            }
        })
        .collect()
}

fn continuous(cfg: &ScenarioConfig, grid: PathGrid) -> Result<ScenarioResults, CliError> {
    let k0 = cfg.market.kappa0()?;
    let c = cfg.market.covariance()?;
    let (engine, coeffs, store_caps) = match &cfg.market {
        MarketConfig::Balanced { r, s0, .. } => {
            let mut e = BalancedEngine::new(&c.into(), &k0, grid)?;
            if let Some(s0) = s0 {
                e = e.lifted(&(*r).into(), &DVector::from_column_slice(s0))?;
            }
            (
                Continuous::Balanced(e),
                Coefficients::balanced((*r).into()),
                s0.is_some(),
            )
        }
        MarketConfig::General { .. } => {
            let params = cfg.market.params()?.expect("general market");
            let coeffs = Coefficients::of(&params);
            (
                Continuous::General(CapitalizationEngine::new(&params, grid)?),
                coeffs,
                true,
            )
        }
        _ => unreachable!("jump markets take the jump route"),
    };
    let d = k0.len();
    let opts = record_options(cfg, &grid, store_caps);
    let steps = opts.recorded_steps(&grid);
    let toggles = cfg.diagnostics;
    let tail_start = grid.t0 + cfg.thresholds.tail_start * grid.horizon();
    let with_diag = toggles.balance || toggles.segregation;

    let runs = run_ensemble(cfg.n_paths, |p| {
        let diag = with_diag.then(|| {
            PathDiagnostics::new(
                coeffs.clone(),
                d,
                DiagnosticsConfig {
                    distances: toggles.segregation,
                    tail_start,
                    record_steps: steps.clone(),
                },
            )
        });
        let tracker = (!with_diag).then(|| TailTracker::new(d, tail_start));
        let mut obs = (Recorder::new(opts, &grid), diag, tracker);
        let stats = engine.run(cfg.seed, p, &mut obs)?;
        let (recorder, diag, tracker) = obs;
        let diag = diag.map(PathDiagnostics::finish);
        let tail = match (&diag, tracker) {
            (Some(out), _) => out.tail.clone(),
            (None, Some(t)) => t.summary,
            (None, None) => unreachable!("one tail source is always present"),
        };
        Ok(ContinuousPath {
            recorder,
            stats,
            diag,
            tail,
        })
    })?;

    let times: Vec<f64> = steps.iter().map(|&s| grid.time(s)).collect();
    let mut balance = BalanceOutput {
        eps_slope: cfg.thresholds.eps_slope,
        l_cap: cfg.thresholds.l_cap,
        ..Default::default()
    };
    let mut distances = DistanceOutput {
        threshold: cfg.thresholds.segregation,
        ..Default::default()
    };
    let mut tails = Vec::with_capacity(runs.len());
    let mut l_terminal = Vec::with_capacity(runs.len());
    let mut recorders = Vec::with_capacity(runs.len());
    let mut l_paths = Vec::new();
    let mut matrices = Vec::new();
    for (p, run) in runs.into_iter().enumerate() {
        tails.push(run.tail);
        l_terminal.push(run.diag.as_ref().map(|o| o.l_terminal));
        if let Some(out) = run.diag {
            if toggles.balance {
                if p < cfg.output.report_paths {
                    balance.reports.push(BalanceDetail {
                        path: p,
                        report: balance_report(
                            times.clone(),
                            out.l_record.clone(),
                            cfg.thresholds.balance(),
                        ),
                        l_growth: None,
                    });
                }
                l_paths.push(out.l_record);
            }
            if let Some(m) = out.distances {
                matrices.push(m);
            }
        }
        recorders.push((run.recorder, run.stats));
    }
    if toggles.balance {
        balance.paths = classify_all(&times, &l_paths, 0, &cfg.thresholds);
    }
    if toggles.segregation {
        fill_distances(&mut distances, &matrices, cfg.output.report_paths, d);
    }
    if !toggles.balance {
        l_terminal.iter_mut().for_each(|l| *l = None);
    }
    let paths = PathSet::from_recorders(grid, cfg.seed, d, opts, recorders);
    finish(
        cfg, paths, None, tails, l_terminal, balance, distances, None,
    )
}

fn fill_distances(out: &mut DistanceOutput, matrices: &[DistanceMatrix], report: usize, d: usize) {
    let mut mean = vec![vec![0.0; d]; d];
    for m in matrices {
        for i in 0..d {
            for j in 0..d {
                mean[i][j] += m.get(i, j) / matrices.len() as f64;
            }
        }
    }
    out.mean = mean;
    out.paths = matrices
        .iter()
        .take(report)
        .enumerate()
        .map(|(p, m)| PathDistances {
            path: p,
            matrix: m
                .values
                .iter()
                .map(|row| row.iter().map(|&x| Some(x)).collect())
                .collect(),
            partition: equivalence_classes(m, out.threshold),
        })
        .collect();
}

fn jump(cfg: &ScenarioConfig, grid: PathGrid) -> Result<ScenarioResults, CliError> {
    let opts = record_options(cfg, &grid, false);
    let (market, k0, set, death) = match &cfg.market {
        MarketConfig::DeathExample => {
            let (set, report) = example_death_of_company(grid, cfg.n_paths, cfg.seed, opts)?;
            let (c, jumps, k0) = death_example_market();
            (
                JumpMarket::balanced(c, jumps, 0.0.into()),
                k0,
                set,
                Some(report),
            )
        }
        MarketConfig::Jump { r, .. } => {
            let jumps = cfg.market.jumps()?.expect("jump market");
            let c = cfg.market.covariance()?.into();
            let k0 = cfg.market.kappa0()?;
            let engine = JumpEngine::new(&c, jumps.clone(), &k0, grid)?;
            let set = engine.simulate(cfg.n_paths, cfg.seed, opts)?;
            (JumpMarket::balanced(c, jumps, (*r).into()), k0, set, None)
        }
        _ => unreachable!("continuous markets take the continuous route"),
    };
    let d = k0.len();
    let toggles = cfg.diagnostics;
    let tail_start = grid.t0 + cfg.thresholds.tail_start * grid.horizon();
    let tails = tail_summaries(&set.paths, tail_start);

    let mut balance = BalanceOutput {
        eps_slope: cfg.thresholds.eps_slope,
        l_cap: cfg.thresholds.l_cap,
        ..Default::default()
    };
    let mut distances = DistanceOutput {
        threshold: cfg.thresholds.segregation,
        ..Default::default()
    };
    let mut l_terminal = vec![None; cfg.n_paths];
    let n_dense = cfg.output.report_paths.min(cfg.n_paths);
    if (toggles.balance || toggles.segregation) && n_dense > 0 {
        // paths are seeded individually, so a dense rerun of the first few
        // reproduces them exactly
        let dense = dense_rerun(&market, &k0, grid, n_dense, cfg.seed)?;
        let losses = (0..n_dense)
            .map(|p| loss_of_balance_jump(&market, &dense, p))
            .collect::<Result<Vec<_>, _>>()?;
        if toggles.balance {
            let times = losses[0].times.clone();
            let l_rel: Vec<Vec<f64>> = losses.iter().map(|l| l.l_rel.clone()).collect();
            balance.paths = classify_all(&times, &l_rel, 0, &cfg.thresholds);
            for (p, loss) in losses.into_iter().enumerate() {
                l_terminal[p] = loss.l_rel.last().copied();
                balance.reports.push(BalanceDetail {
                    path: p,
                    report: balance_report(loss.times, loss.l_rel, cfg.thresholds.balance()),
                    l_growth: Some(loss.l_growth),
                });
            }
        }
        if toggles.segregation {
            jump_distances(&mut distances, &market, &dense, d, grid.horizon())?;
        }
    }
    finish(
        cfg,
        set.paths,
        Some(set.lifetimes),
        tails,
        l_terminal,
        balance,
        distances,
        death,
    )
}

fn dense_rerun(
    market: &JumpMarket,
    k0: &Portfolio,
    grid: PathGrid,
    n: usize,
    seed: u64,
) -> Result<JumpPathSet, CliError> {
    let engine = JumpEngine::new(&market.c, market.jumps.clone(), k0, grid)?;
    let opts = RecordOptions {
        record_every: 1,
        store_caps: false,
        store_increments: false,
    };
    Ok(engine.simulate(n, seed, opts)?)
}

/// Distances up to the first death of either company of each pair.
fn jump_distances(
    out: &mut DistanceOutput,
    market: &JumpMarket,
    dense: &JumpPathSet,
    d: usize,
    horizon: f64,
) -> Result<(), CliError> {
    let mut sum = vec![vec![0.0; d]; d];
    let mut count = vec![vec![0usize; d]; d];
    for (p, life) in dense.lifetimes.iter().enumerate() {
        let mut matrix = vec![vec![Some(0.0); d]; d];
        let mut full = DistanceMatrix::zeros(d);
        for i in 0..d {
            for j in (i + 1)..d {
                let until = life.zeta[i].min(life.zeta[j]).min(horizon);
                let value = if until > dense.paths.grid.t0 {
                    let v = pairwise_distance_jump(market, dense, p, i, j, until)?;
                    sum[i][j] += v;
                    sum[j][i] += v;
                    count[i][j] += 1;
                    count[j][i] += 1;
                    Some(v)
                } else {
                    None
                };
                matrix[i][j] = value;
                matrix[j][i] = value;
                // a company dead from the start is never equivalent
                let v = value.unwrap_or(f64::INFINITY);
                full.values[i][j] = v;
                full.values[j][i] = v;
            }
        }
        out.paths.push(PathDistances {
            path: p,
            matrix,
            partition: equivalence_classes(&full, out.threshold),
        });
    }
    out.mean = (0..d)
        .map(|i| {
            (0..d)
                .map(|j| sum[i][j] / count[i][j].max(1) as f64)
                .collect()
        })
        .collect();
    Ok(())
}

fn class_name(c: Classification) -> &'static str {
    match c {
        Classification::Balanced => "balanced",
        Classification::Unbalanced => "unbalanced",
        Classification::Indeterminate => "indeterminate",
    }
}

fn balance_counts(paths: &[PathBalance]) -> BalanceCounts {
    let count = |c| paths.iter().filter(|p| p.classification == c).count();
    let n = paths.len();
    let frac = |k: usize| k as f64 / n.max(1) as f64;
    let (balanced, unbalanced) = (
        count(Classification::Balanced),
        count(Classification::Unbalanced),
    );
    BalanceCounts {
        classified: n,
        balanced,
        unbalanced,
        indeterminate: n - balanced - unbalanced,
        balanced_fraction: frac(balanced),
        unbalanced_fraction: frac(unbalanced),
        mean_l_terminal: paths.iter().map(|p| p.l_terminal).sum::<f64>() / n.max(1) as f64,
    }
}

fn limiting_summary(report: &LimitingReport, balance: &[PathBalance]) -> LimitingSummary {
    let mut by_balance: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
    let (mut unbalanced, mut osc_unbalanced) = (0usize, 0usize);
    for b in balance {
        let class = report.classes[b.path];
        *by_balance
            .entry(class_name(b.classification).into())
            .or_default()
            .entry(class.label())
            .or_default() += 1;
        if b.classification == Classification::Unbalanced {
            unbalanced += 1;
            if class == balmarket_core::balance_diag::LimitClass::Oscillating {
                osc_unbalanced += 1;
            }
        }
    }
    LimitingSummary {
        atoms: report.atoms.clone(),
        interior: report.interior,
        oscillating: report.oscillating,
        indeterminate: report.indeterminate,
        atom_fractions: report.atoms.iter().map(|&k| report.fraction(k)).collect(),
        oscillating_fraction: report.fraction(report.oscillating),
        oscillating_among_unbalanced: (unbalanced > 0)
            .then(|| osc_unbalanced as f64 / unbalanced as f64),
        by_balance,
    }
}

fn lln_summary(cfg: &ScenarioConfig) -> LlnSummary {
    const EXP_THRESHOLD: f64 = 0.01;
    let (t, dt) = (cfg.grid.horizon, cfg.grid.dt);
    let ratios: Vec<f64> = brownian_lln_ratios(t, dt, cfg.n_paths, cfg.seed)
        .iter()
        .map(|r| r.ratio)
        .collect();
    let above: Vec<f64> = exponential_martingale_terminals(t, dt, cfg.n_paths, cfg.seed)
        .iter()
        .map(|&e| if e > EXP_THRESHOLD { 1.0 } else { 0.0 })
        .collect();
    LlnSummary {
        horizon: t,
        w_over_t: MeanSe::of(&ratios),
        exp_threshold: EXP_THRESHOLD,
        exp_tail: MeanSe::of(&above),
    }
}

#[allow(clippy::too_many_arguments)]
fn finish(
    cfg: &ScenarioConfig,
    paths: PathSet,
    lifetimes: Option<Vec<LifetimeRecord>>,
    tails: Vec<TailSummary>,
    l_terminal: Vec<Option<f64>>,
    balance: BalanceOutput,
    distances: DistanceOutput,
    death_example: Option<DeathExampleReport>,
) -> Result<ScenarioResults, CliError> {
    let toggles = cfg.diagnostics;
    let limiting = if toggles.limiting_distribution {
        Some(limiting_distribution(&tails, cfg.thresholds.atom_eps)?)
    } else {
        None
    };
    let horizon = paths.grid.horizon();
    let checkpoints = kappa_checkpoints(
        &paths,
        &[0.25, 0.5, 0.75, 1.0].map(|f| paths.grid.t0 + f * horizon),
    );
    let lifetime_summary = lifetimes.as_ref().map(|lives| {
        let d = paths.d;
        let deaths = (0..d)
            .map(|i| lives.iter().filter(|l| l.zeta[i].is_finite()).count())
            .collect();
        let jumps: usize = lives.iter().map(|l| l.jump_times.len()).sum();
        let integral: f64 = lives.iter().map(|l| l.intensity_integral).sum();
        LifetimeSummary {
            deaths,
            mean_jumps: jumps as f64 / lives.len().max(1) as f64,
            jump_count_ratio: (integral > 0.0).then(|| jumps as f64 / integral),
        }
    });
    let segregation = toggles.segregation.then(|| SegregationSummary {
        threshold: distances.threshold,
        paths: distances.paths.len(),
        segregated_fraction: distances
            .paths
            .iter()
            .filter(|p| p.partition.classes.len() > 1)
            .count() as f64
            / distances.paths.len().max(1) as f64,
    });
    let summary = Summary {
        engine_version: balmarket_core::VERSION.into(),
        config: cfg.clone(),
        seed: cfg.seed,
        n_paths: cfg.n_paths,
        d: paths.d,
        checkpoints,
        balance: toggles.balance.then(|| balance_counts(&balance.paths)),
        limiting: limiting
            .as_ref()
            .map(|r| limiting_summary(r, &balance.paths)),
        segregation,
        lifetimes: lifetime_summary,
        death_example,
        lln: toggles.lln.then(|| lln_summary(cfg)),
        numerics: Numerics {
            max_sum_defect: paths
                .stats
                .iter()
                .map(|s| s.max_sum_defect)
                .fold(0.0, f64::max),
            clamp_events: paths.stats.iter().map(|s| s.clamp_events).sum(),
        },
        digests: BTreeMap::new(),
    };
    Ok(ScenarioResults {
        paths,
        lifetimes,
        tails,
        l_terminal,
        balance,
        distances,
        limiting,
        summary,
    })
}

/// Simulates a validated scenario and computes every enabled diagnostic.
pub fn simulate_scenario(cfg: &ScenarioConfig) -> Result<ScenarioResults, CliError> {
    cfg.validate()?;
    let grid = cfg.path_grid()?;
    match cfg.market {
        MarketConfig::Balanced { .. } | MarketConfig::General { .. } => continuous(cfg, grid),
        MarketConfig::Jump { .. } | MarketConfig::DeathExample => jump(cfg, grid),
    }
}
