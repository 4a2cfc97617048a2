//! Per-path estimate of the limiting capital distribution.

use serde::{Deserialize, Serialize};

use super::DiagError;
use crate::sde_engine::{PathObserver, PathSet, SimError, Transition};

/// Range of tail variation above which a path counts as oscillating.
pub const OSCILLATION_RANGE: f64 = 0.5;

/// Terminal state and per-coordinate range over the tail window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailSummary {
    pub terminal: Vec<f64>,
    pub tail_min: Vec<f64>,
    pub tail_max: Vec<f64>,
}

impl TailSummary {
    fn new(d: usize) -> Self {
        Self {
            terminal: vec![0.0; d],
            tail_min: vec![f64::INFINITY; d],
            tail_max: vec![f64::NEG_INFINITY; d],
        }
    }

    fn include(&mut self, kappa: &[f64]) {
        for (i, &k) in kappa.iter().enumerate() {
            self.tail_min[i] = self.tail_min[i].min(k);
            self.tail_max[i] = self.tail_max[i].max(k);
        }
        self.terminal.copy_from_slice(kappa);
    }

    /// Largest per-coordinate range over the tail window.
    pub fn variation(&self) -> f64 {
        self.tail_min
            .iter()
            .zip(&self.tail_max)
            .map(|(lo, hi)| hi - lo)
            .fold(0.0, f64::max)
    }
}

/// Streams the tail window `[tail_start, T]` of a path.
#[derive(Clone, Debug)]
pub struct TailTracker {
    tail_start: f64,
    pub summary: TailSummary,
}

impl TailTracker {
    pub fn new(d: usize, tail_start: f64) -> Self {
        Self {
            tail_start,
            summary: TailSummary::new(d),
        }
    }
}

impl PathObserver for TailTracker {
    fn start(&mut self, kappa0: &[f64], _caps0: Option<&[f64]>) {
        self.summary.terminal.copy_from_slice(kappa0);
        if self.tail_start <= 0.0 {
            self.summary.include(kappa0);
        }
    }

    fn transition(&mut self, tr: &Transition<'_>) -> Result<(), SimError> {
        let t_next = tr.t + tr.dt;
        if t_next >= self.tail_start - 1e-9 * tr.dt {
            self.summary.include(tr.kappa_next);
        } else {
            self.summary.terminal.copy_from_slice(tr.kappa_next);
        }
        Ok(())
    }
}

/// Tail summaries of a recorded ensemble over the records at or after
/// `tail_start`.
pub fn tail_summaries(paths: &PathSet, tail_start: f64) -> Vec<TailSummary> {
    let start = tail_start;
    (0..paths.n_paths)
        .map(|p| {
            let mut s = TailSummary::new(paths.d);
            for rec in 0..paths.n_records() {
                if paths.record_time(rec) >= start - 1e-9 * paths.grid.dt {
                    s.include(paths.kappa_at(p, rec));
                }
            }
            s
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "company")]
pub enum LimitClass {
    /// All capital in one company.
    Atom(usize),
    /// Settled away from the vertices.
    Interior,
    /// Some coordinate sweeps more than half the unit interval in the tail.
    Oscillating,
    Indeterminate,
}

impl LimitClass {
    pub fn label(&self) -> String {
        match self {
            LimitClass::Atom(i) => format!("atom_{i}"),
            LimitClass::Interior => "interior".into(),
            LimitClass::Oscillating => "oscillating".into(),
            LimitClass::Indeterminate => "indeterminate".into(),
        }
    }
}

pub fn classify_limit(tail: &TailSummary, atom_eps: f64) -> LimitClass {
    let variation = tail.variation();
    if variation < atom_eps {
        if let Some(i) = tail.terminal.iter().position(|&k| k > 1.0 - atom_eps) {
            return LimitClass::Atom(i);
        }
        return LimitClass::Interior;
    }
    if variation > OSCILLATION_RANGE {
        LimitClass::Oscillating
    } else {
        LimitClass::Indeterminate
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LimitingReport {
    pub classes: Vec<LimitClass>,
    /// Paths ending as an atom at each company.
    pub atoms: Vec<usize>,
    pub interior: usize,
    pub oscillating: usize,
    pub indeterminate: usize,
}

impl LimitingReport {
    pub fn from_tails(tails: &[TailSummary], atom_eps: f64) -> Self {
        let d = tails.first().map_or(0, |t| t.terminal.len());
        let mut report = Self {
            classes: Vec::with_capacity(tails.len()),
            atoms: vec![0; d],
            interior: 0,
            oscillating: 0,
            indeterminate: 0,
        };
        for tail in tails {
            let class = classify_limit(tail, atom_eps);
            match class {
                LimitClass::Atom(i) => report.atoms[i] += 1,
                LimitClass::Interior => report.interior += 1,
                LimitClass::Oscillating => report.oscillating += 1,
                LimitClass::Indeterminate => report.indeterminate += 1,
            }
            report.classes.push(class);
        }
        report
    }

    pub fn fraction(&self, count: usize) -> f64 {
        count as f64 / self.classes.len().max(1) as f64
    }
}

/// Classifies every path and fails when more than half are indeterminate.
pub fn limiting_distribution(
    tails: &[TailSummary],
    atom_eps: f64,
) -> Result<LimitingReport, DiagError> {
    let report = LimitingReport::from_tails(tails, atom_eps);
    let fraction = report.fraction(report.indeterminate);
    if fraction > 0.5 {
        return Err(DiagError::HorizonTooShort { fraction });
    }
    Ok(report)
}
