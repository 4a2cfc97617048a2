//! Coefficient processes evaluated on `(t, kappa)`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::ModelError;

/// Pure evaluation rule for state-dependent coefficients.
pub type StateRule<V> = Arc<dyn Fn(f64, &[f64]) -> V + Send + Sync>;

/// Values a [`ProcessSpec`] can produce.
pub trait SpecValue: Clone + Send + Sync + 'static {
    /// `(1 - w) * lo + w * hi`.
    fn lerp(lo: &Self, hi: &Self, w: f64) -> Self;

    /// Checks the value against a market of dimension `d`.
    fn check_shape(&self, d: usize) -> Result<(), ModelError>;
}

impl SpecValue for f64 {
    fn lerp(lo: &Self, hi: &Self, w: f64) -> Self {
        (1.0 - w) * lo + w * hi
    }

    fn check_shape(&self, _d: usize) -> Result<(), ModelError> {
        Ok(())
    }
}

impl SpecValue for DVector<f64> {
    fn lerp(lo: &Self, hi: &Self, w: f64) -> Self {
        lo * (1.0 - w) + hi * w
    }

    fn check_shape(&self, d: usize) -> Result<(), ModelError> {
        if self.len() == d {
            Ok(())
        } else {
            Err(ModelError::ShapeMismatch {
                expected: format!("vector of length {d}"),
                found: format!("vector of length {}", self.len()),
            })
        }
    }
}

impl SpecValue for DMatrix<f64> {
    fn lerp(lo: &Self, hi: &Self, w: f64) -> Self {
        lo * (1.0 - w) + hi * w
    }

    fn check_shape(&self, d: usize) -> Result<(), ModelError> {
        if self.nrows() == d && self.ncols() == d {
            Ok(())
        } else {
            Err(ModelError::ShapeMismatch {
                expected: format!("{d}x{d} matrix"),
                found: format!("{}x{} matrix", self.nrows(), self.ncols()),
            })
        }
    }
}

/// Tabulated time curve: piecewise-linear between knots, constant outside.
#[derive(Clone, Debug)]
pub struct TimeTable<V> {
    times: Vec<f64>,
    values: Vec<V>,
}

impl<V: SpecValue> TimeTable<V> {
    pub fn new(knots: Vec<(f64, V)>) -> Result<Self, ModelError> {
        if knots.is_empty() {
            return Err(ModelError::InvalidTable(
                "time table needs at least one knot".into(),
            ));
        }
        let (times, values): (Vec<f64>, Vec<V>) = knots.into_iter().unzip();
        if times.iter().any(|t| !t.is_finite()) {
            return Err(ModelError::InvalidTable("non-finite knot time".into()));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(ModelError::InvalidTable(
                "knot times must be strictly increasing".into(),
            ));
        }
        Ok(Self { times, values })
    }

    pub fn knots(&self) -> impl Iterator<Item = (f64, &V)> {
        self.times.iter().copied().zip(self.values.iter())
    }

    pub fn eval(&self, t: f64) -> V {
        let n = self.times.len();
        if t <= self.times[0] {
            return self.values[0].clone();
        }
        if t >= self.times[n - 1] {
            return self.values[n - 1].clone();
        }
        // first knot strictly greater than t
        let hi = self.times.partition_point(|&x| x <= t);
        let lo = hi - 1;
        let w = (t - self.times[lo]) / (self.times[hi] - self.times[lo]);
        V::lerp(&self.values[lo], &self.values[hi], w)
    }
}

/// A predictable coefficient: constant, a function of time, or a function of
/// `(t, kappa)`.
#[derive(Clone)]
pub enum ProcessSpec<V> {
    Constant(V),
    TimeFunction(TimeTable<V>),
    StateFunction(StateRule<V>),
}

pub type ScalarSpec = ProcessSpec<f64>;
pub type VectorSpec = ProcessSpec<DVector<f64>>;
pub type MatrixSpec = ProcessSpec<DMatrix<f64>>;

impl<V: SpecValue> ProcessSpec<V> {
    pub fn state<F>(rule: F) -> Self
    where
        F: Fn(f64, &[f64]) -> V + Send + Sync + 'static,
    {
        ProcessSpec::StateFunction(Arc::new(rule))
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, ProcessSpec::Constant(_))
    }

    pub fn as_constant(&self) -> Option<&V> {
        match self {
            ProcessSpec::Constant(v) => Some(v),
            _ => None,
        }
    }

    /// Evaluates the coefficient at `(t, kappa)`; the result must match the
    /// market dimension `kappa.len()`.
    pub fn eval(&self, t: f64, kappa: &[f64]) -> Result<V, ModelError> {
        let v = match self {
            ProcessSpec::Constant(v) => v.clone(),
            ProcessSpec::TimeFunction(table) => table.eval(t),
            ProcessSpec::StateFunction(rule) => rule(t, kappa),
        };
        v.check_shape(kappa.len())?;
        Ok(v)
    }
}

impl<V: fmt::Debug> fmt::Debug for ProcessSpec<V> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProcessSpec::Constant(v) => f.debug_tuple("Constant").field(v).finish(),
            ProcessSpec::TimeFunction(t) => f.debug_tuple("TimeFunction").field(t).finish(),
            ProcessSpec::StateFunction(_) => f.write_str("StateFunction(..)"),
        }
    }
}

impl From<f64> for ScalarSpec {
    fn from(v: f64) -> Self {
        ProcessSpec::Constant(v)
    }
}

impl From<DVector<f64>> for VectorSpec {
    fn from(v: DVector<f64>) -> Self {
        ProcessSpec::Constant(v)
    }
}

impl From<DMatrix<f64>> for MatrixSpec {
    fn from(v: DMatrix<f64>) -> Self {
        ProcessSpec::Constant(v)
    }
}
