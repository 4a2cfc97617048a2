//! All per-path diagnostics in a single streaming pass, so large ensembles
//! never need their increments stored.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::limiting::{TailSummary, TailTracker};
use super::loss::clip_rate;
use super::segregation::DistanceMatrix;
use super::wealth::relative_growth_excess;
use super::Coefficients;
use crate::growth_opt::{growth_rate_unchecked, SimplexOptimizer};
use crate::market_model::linalg;
use crate::sde_engine::{PathObserver, SimError, Transition};

#[derive(Clone, Debug)]
pub struct DiagnosticsConfig {
    pub distances: bool,
    /// Start of the tail window used for the limiting distribution.
    pub tail_start: f64,
    /// Grid steps at which `L` is recorded, increasing.
    pub record_steps: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct PathDiagnostics {
    coeffs: Coefficients,
    record_steps: Vec<usize>,
    next_record: usize,
    opt: SimplexOptimizer,
    loss: f64,
    martingale: f64,
    log_v_market: f64,
    log_v_opt: f64,
    out: PathDiagnosticsOutput,
    tail: TailTracker,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathDiagnosticsOutput {
    /// `L` at the configured record steps.
    pub l_record: Vec<f64>,
    pub l_terminal: f64,
    pub distances: Option<DistanceMatrix>,
    pub tail: TailSummary,
    /// `max_t |(-L + int <kappa - rho, dM>) - log(V^kappa / V^rho)|`.
    pub decomposition_defect: f64,
    /// Smallest `2 g^{rho|kappa} - c^{rho|kappa}` seen.
    pub min_growth_excess: f64,
}

impl PathDiagnostics {
    pub fn new(coeffs: Coefficients, d: usize, cfg: DiagnosticsConfig) -> Self {
        Self {
            coeffs,
            next_record: 0,
            opt: SimplexOptimizer::new(),
            loss: 0.0,
            martingale: 0.0,
            log_v_market: 0.0,
            log_v_opt: 0.0,
            out: PathDiagnosticsOutput {
                l_record: Vec::with_capacity(cfg.record_steps.len()),
                l_terminal: 0.0,
                distances: cfg.distances.then(|| DistanceMatrix::zeros(d)),
                tail: TailSummary {
                    terminal: vec![],
                    tail_min: vec![],
                    tail_max: vec![],
                },
                decomposition_defect: 0.0,
                min_growth_excess: f64::INFINITY,
            },
            tail: TailTracker::new(d, cfg.tail_start),
            record_steps: cfg.record_steps,
        }
    }

    fn record_through(&mut self, step: usize) {
        while self.next_record < self.record_steps.len()
            && self.record_steps[self.next_record] <= step
        {
            self.out.l_record.push(self.loss);
            self.next_record += 1;
        }
    }

    pub fn finish(mut self) -> PathDiagnosticsOutput {
        self.out.l_terminal = self.loss;
        self.out.tail = self.tail.summary;
        self.out
    }
}

impl PathObserver for PathDiagnostics {
    fn start(&mut self, kappa0: &[f64], caps0: Option<&[f64]>) {
        self.tail.start(kappa0, caps0);
        self.record_through(0);
    }

    fn transition(&mut self, tr: &Transition<'_>) -> Result<(), SimError> {
        let r = self.coeffs.r.eval(tr.t, tr.kappa)?;
        let a = self.coeffs.a.eval(tr.t, tr.kappa, tr.c, r)?;
        let rho = self
            .opt
            .argmax(&a, tr.c)
            .map_err(|e| SimError::Observer(e.to_string()))?;
        let g_star = growth_rate_unchecked(rho.as_slice(), a.as_slice(), tr.c, r);
        let g_kappa = growth_rate_unchecked(tr.kappa, a.as_slice(), tr.c, r);
        let rate = clip_rate(tr.step, g_star - g_kappa, g_star)
            .map_err(|e| SimError::Observer(e.to_string()))?;
        self.loss += rate * tr.dt;

        let kappa_dm = linalg::dot(tr.kappa, tr.dm);
        let rho_dm = linalg::dot(rho.as_slice(), tr.dm);
        self.martingale += kappa_dm - rho_dm;
        self.log_v_market += g_kappa * tr.dt + kappa_dm;
        self.log_v_opt += g_star * tr.dt + rho_dm;
        let defect = ((self.martingale - self.loss) - (self.log_v_market - self.log_v_opt)).abs();
        self.out.decomposition_defect = self.out.decomposition_defect.max(defect);

        let kappa = DVector::from_column_slice(tr.kappa);
        let excess = relative_growth_excess(&rho, &kappa, &a, tr.c, r);
        self.out.min_growth_excess = self.out.min_growth_excess.min(excess);

        if let Some(dist) = self.out.distances.as_mut() {
            dist.accumulate(&a, tr.c, tr.dt);
        }
        self.tail.transition(tr)?;
        self.record_through(tr.step + 1);
        Ok(())
    }
}
