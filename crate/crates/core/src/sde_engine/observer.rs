//! Streaming access to simulated paths.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::SimError;
use crate::market_model::PathGrid;

/// One step `t -> t + dt` of a single path. Coefficients are evaluated at the
/// left point `(t, kappa)`.
#[derive(Debug)]
pub struct Transition<'a> {
    pub step: usize,
    pub t: f64,
    pub dt: f64,
    pub kappa: &'a [f64],
    pub kappa_next: &'a [f64],
    pub caps: Option<&'a [f64]>,
    pub caps_next: Option<&'a [f64]>,
    pub c: &'a DMatrix<f64>,
    pub sigma: &'a DMatrix<f64>,
    /// Brownian increments `dW`.
    pub dw: &'a [f64],
    /// Martingale increments `sigma dW`.
    pub dm: &'a [f64],
    /// At least one jump happened during the step.
    pub jumped: bool,
}

/// Receives a path step by step while it is simulated.
pub trait PathObserver {
    fn start(&mut self, _kappa0: &[f64], _caps0: Option<&[f64]>) {}

    fn transition(&mut self, tr: &Transition<'_>) -> Result<(), SimError>;
}

impl PathObserver for () {
    fn transition(&mut self, _tr: &Transition<'_>) -> Result<(), SimError> {
        Ok(())
    }
}

impl<O: PathObserver + ?Sized> PathObserver for &mut O {
    fn start(&mut self, kappa0: &[f64], caps0: Option<&[f64]>) {
        (**self).start(kappa0, caps0)
    }

    fn transition(&mut self, tr: &Transition<'_>) -> Result<(), SimError> {
        (**self).transition(tr)
    }
}

impl<O: PathObserver> PathObserver for Option<O> {
    fn start(&mut self, kappa0: &[f64], caps0: Option<&[f64]>) {
        if let Some(o) = self {
            o.start(kappa0, caps0);
        }
    }

    fn transition(&mut self, tr: &Transition<'_>) -> Result<(), SimError> {
        match self {
            Some(o) => o.transition(tr),
            None => Ok(()),
        }
    }
}

macro_rules! tuple_observer {
    ($($name:ident . $idx:tt),+) => {
        impl<$($name: PathObserver),+> PathObserver for ($($name,)+) {
            fn start(&mut self, kappa0: &[f64], caps0: Option<&[f64]>) {
                $(self.$idx.start(kappa0, caps0);)+
            }

            fn transition(&mut self, tr: &Transition<'_>) -> Result<(), SimError> {
                $(self.$idx.transition(tr)?;)+
                Ok(())
            }
        }
    };
}

tuple_observer!(A.0, B.1);
tuple_observer!(A.0, B.1, C.2);
tuple_observer!(A.0, B.1, C.2, D.3);

/// Per-path numerical health of the simplex projection.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PathStats {
    /// Largest `|sum kappa - 1|` before renormalization.
    pub max_sum_defect: f64,
    pub mean_sum_defect: f64,
    /// Smallest positive coordinate seen.
    pub min_entry: f64,
    /// Coordinates lifted to the clamp floor.
    pub clamp_events: usize,
}

impl PathStats {
    pub(crate) fn new() -> Self {
        Self {
            min_entry: f64::INFINITY,
            ..Default::default()
        }
    }

    pub(crate) fn record_defect(&mut self, defect: f64, steps: usize) {
        self.max_sum_defect = self.max_sum_defect.max(defect);
        self.mean_sum_defect += defect / steps as f64;
    }

    pub(crate) fn record_entries(&mut self, kappa: &[f64]) {
        for &k in kappa {
            if k > 0.0 && k < self.min_entry {
                self.min_entry = k;
            }
        }
    }
}

/// Which parts of a path a [`Recorder`] keeps.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RecordOptions {
    /// Keep every `record_every`-th step (the last step is always kept).
    pub record_every: usize,
    pub store_caps: bool,
    pub store_increments: bool,
}

impl Default for RecordOptions {
    fn default() -> Self {
        Self {
            record_every: 1,
            store_caps: true,
            store_increments: true,
        }
    }
}

impl RecordOptions {
    /// Recorded step indices for a grid.
    pub fn recorded_steps(&self, grid: &PathGrid) -> Vec<usize> {
        let every = self.record_every.max(1);
        let mut steps: Vec<usize> = (0..=grid.n_steps).step_by(every).collect();
        if steps.last() != Some(&grid.n_steps) {
            steps.push(grid.n_steps);
        }
        steps
    }
}

/// Stores a path into flat buffers.
#[derive(Clone, Debug, Default)]
pub struct Recorder {
    every: usize,
    last_step: usize,
    store_caps: bool,
    store_increments: bool,
    pub kappa: Vec<f64>,
    pub caps: Vec<f64>,
    pub increments: Vec<f64>,
}

impl Recorder {
    pub fn new(opts: RecordOptions, grid: &PathGrid) -> Self {
        Self {
            every: opts.record_every.max(1),
            last_step: grid.n_steps,
            store_caps: opts.store_caps,
            store_increments: opts.store_increments,
            ..Default::default()
        }
    }
}

impl PathObserver for Recorder {
    fn start(&mut self, kappa0: &[f64], caps0: Option<&[f64]>) {
        self.kappa.extend_from_slice(kappa0);
        if let (true, Some(s)) = (self.store_caps, caps0) {
            self.caps.extend_from_slice(s);
        }
    }

    fn transition(&mut self, tr: &Transition<'_>) -> Result<(), SimError> {
        if self.store_increments {
            self.increments.extend_from_slice(tr.dw);
        }
        let next = tr.step + 1;
        if next % self.every == 0 || next == self.last_step {
            self.kappa.extend_from_slice(tr.kappa_next);
            if let (true, Some(s)) = (self.store_caps, tr.caps_next) {
                self.caps.extend_from_slice(s);
            }
        }
        Ok(())
    }
}
