//! Scenario files. A file either spells out a market or names a builtin;
//! fields given next to a builtin override the builtin's defaults.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use balmarket_core::balance_diag::BalanceThresholds;
use balmarket_core::jump_markets::{JumpSpec, SizeLaw};
use balmarket_core::market_model::{
    check_covariance, validate_params, MarketParams, PathGrid, Portfolio, VectorSpec,
};

use crate::builtins;
use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Continuous,
    Jump,
}

/// A fully resolved scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub model: ModelKind,
    /// Builtin the scenario was derived from, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub builtin: Option<String>,
    pub market: MarketConfig,
    pub grid: GridConfig,
    pub n_paths: usize,
    pub seed: u64,
    #[serde(default)]
    pub diagnostics: DiagnosticsToggles,
    #[serde(default)]
    pub thresholds: Thresholds,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub horizon: f64,
    pub dt: f64,
}

/// Market coefficients; all constant in time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MarketConfig {
    /// Perfectly balanced market `a = c kappa + r 1`, simulated on the
    /// simplex. With `s0` the capitalizations are lifted as well.
    Balanced {
        c: Vec<Vec<f64>>,
        #[serde(default)]
        r: f64,
        kappa0: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        s0: Option<Vec<f64>>,
    },
    /// `dS^i = S^i (a^i dt + dM^i)` with `d[M, M] = c dt`.
    General {
        a: Vec<f64>,
        c: Vec<Vec<f64>>,
        #[serde(default)]
        r: f64,
        s0: Vec<f64>,
    },
    /// Balanced market with compound-Poisson jumps.
    Jump {
        c: Vec<Vec<f64>>,
        #[serde(default)]
        r: f64,
        kappa0: Vec<f64>,
        intensity: f64,
        /// Thinning bound; defaults to `intensity`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lambda_max: Option<f64>,
        sizes: SizesConfig,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max_jumps: Option<usize>,
    },
    /// Two companies, one jump whose size blows up at `2 log 2`.
    DeathExample,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "law", rename_all = "snake_case", deny_unknown_fields)]
pub enum SizesConfig {
    Atoms {
        atoms: Vec<AtomConfig>,
    },
    /// `x^i = exp(mean_i + loading_i Z) - 1`.
    OneFactorLogNormal {
        mean: Vec<f64>,
        loading: Vec<f64>,
        #[serde(default = "default_nodes")]
        nodes: usize,
    },
}

fn default_nodes() -> usize {
    20
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct AtomConfig {
    pub prob: f64,
    pub x: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsToggles {
    /// Loss of balance and the balanced/unbalanced classifier.
    pub balance: bool,
    /// Pairwise company distances and equivalence classes.
    pub segregation: bool,
    /// Tail classification of the capital distribution.
    pub limiting_distribution: bool,
    /// Brownian law-of-large-numbers and exponential-martingale checks.
    pub lln: bool,
}

impl Default for DiagnosticsToggles {
    fn default() -> Self {
        Self {
            balance: true,
            segregation: true,
            limiting_distribution: true,
            lln: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    /// Tail slope of `L` below which a path counts as balanced.
    pub eps_slope: f64,
    /// Largest terminal `L` of a balanced path.
    pub l_cap: f64,
    /// Tail range below which a path has settled; also the distance of an
    /// atom from its vertex.
    pub atom_eps: f64,
    /// Distance above which two companies are not equivalent.
    pub segregation: f64,
    /// Start of the tail window as a fraction of the horizon.
    pub tail_start: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        let b = BalanceThresholds::default();
        Self {
            eps_slope: b.eps_slope,
            l_cap: b.l_cap,
            atom_eps: 0.01,
            segregation: 25.0,
            tail_start: 0.75,
        }
    }
}

impl Thresholds {
    pub fn balance(&self) -> BalanceThresholds {
        BalanceThresholds {
            eps_slope: self.eps_slope,
            l_cap: self.l_cap,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// Output directory; `--out` takes precedence.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<String>,
    /// Record every this many grid steps; 0 picks about 1000 records.
    pub record_every: usize,
    /// Paths written to `paths.csv`.
    pub csv_paths: usize,
    /// Paths with full loss-of-balance reports and distance matrices.
    pub report_paths: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: None,
            record_every: 0,
            csv_paths: 100,
            report_paths: 20,
        }
    }
}

fn matrix(rows: &[Vec<f64>], d: usize, what: &str) -> Result<DMatrix<f64>, CliError> {
    if rows.len() != d || rows.iter().any(|r| r.len() != d) {
        return Err(CliError::Invalid(format!("{what} must be {d}x{d}")));
    }
    Ok(DMatrix::from_fn(d, d, |i, j| rows[i][j]))
}

fn covariance(rows: &[Vec<f64>], d: usize) -> Result<DMatrix<f64>, CliError> {
    let c = matrix(rows, d, "c")?;
    check_covariance(&c).map_err(|e| CliError::Invalid(e.to_string()))?;
    Ok(c)
}

fn simplex_point(kappa0: &[f64]) -> Result<Portfolio, CliError> {
    let k = Portfolio::new(kappa0.to_vec());
    if kappa0.is_empty() || !k.is_in_simplex(1e-12) {
        return Err(CliError::Invalid(
            "kappa0 must be a point of the simplex".into(),
        ));
    }
    Ok(k)
}

impl MarketConfig {
    pub fn dimension(&self) -> usize {
        match self {
            MarketConfig::Balanced { kappa0, .. } | MarketConfig::Jump { kappa0, .. } => {
                kappa0.len()
            }
            MarketConfig::General { s0, .. } => s0.len(),
            MarketConfig::DeathExample => 2,
        }
    }

    fn kind(&self) -> ModelKind {
        match self {
            MarketConfig::Balanced { .. } | MarketConfig::General { .. } => ModelKind::Continuous,
            MarketConfig::Jump { .. } | MarketConfig::DeathExample => ModelKind::Jump,
        }
    }

    pub fn covariance(&self) -> Result<DMatrix<f64>, CliError> {
        let d = self.dimension();
        match self {
            MarketConfig::Balanced { c, .. }
            | MarketConfig::General { c, .. }
            | MarketConfig::Jump { c, .. } => covariance(c, d),
            MarketConfig::DeathExample => Ok(DMatrix::zeros(2, 2)),
        }
    }

    pub fn kappa0(&self) -> Result<Portfolio, CliError> {
        match self {
            MarketConfig::Balanced { kappa0, .. } | MarketConfig::Jump { kappa0, .. } => {
                simplex_point(kappa0)
            }
            MarketConfig::General { s0, .. } => {
                let total: f64 = s0.iter().sum();
                Ok(Portfolio::new(s0.iter().map(|s| s / total).collect()))
            }
            MarketConfig::DeathExample => Ok(Portfolio::uniform(2)),
        }
    }

    /// Parameters of a `General` market.
    pub fn params(&self) -> Result<Option<MarketParams>, CliError> {
        let MarketConfig::General { a, c, r, s0 } = self else {
            return Ok(None);
        };
        let d = s0.len();
        if a.len() != d {
            return Err(CliError::Invalid(format!("a must have length {d}")));
        }
        let params = MarketParams::new(
            VectorSpec::from(DVector::from_column_slice(a)),
            covariance(c, d)?.into(),
            (*r).into(),
            DVector::from_column_slice(s0),
        );
        validate_params(params)
            .map(Some)
            .map_err(|e| CliError::Invalid(e.to_string()))
    }

    /// Jump measure of a `Jump` market.
    pub fn jumps(&self) -> Result<Option<JumpSpec>, CliError> {
        let MarketConfig::Jump {
            kappa0,
            intensity,
            lambda_max,
            sizes,
            max_jumps,
            ..
        } = self
        else {
            return Ok(None);
        };
        let d = kappa0.len();
        let law = match sizes {
            SizesConfig::Atoms { atoms } => {
                if atoms.iter().any(|a| a.x.len() != d) {
                    return Err(CliError::Invalid(format!(
                        "jump sizes must have length {d}"
                    )));
                }
                SizeLaw::Atoms(
                    atoms
                        .iter()
                        .map(|a| (a.prob, DVector::from_column_slice(&a.x).into()))
                        .collect(),
                )
            }
            SizesConfig::OneFactorLogNormal {
                mean,
                loading,
                nodes,
            } => {
                if mean.len() != d || loading.len() != d {
                    return Err(CliError::Invalid(format!(
                        "log-normal mean and loading must have length {d}"
                    )));
                }
                SizeLaw::OneFactorLogNormal {
                    mean: DVector::from_column_slice(mean),
                    loading: DVector::from_column_slice(loading),
                    nodes: *nodes,
                }
            }
        };
        if !(*intensity >= 0.0 && intensity.is_finite()) {
            return Err(CliError::Invalid(
                "intensity must be finite and >= 0".into(),
            ));
        }
        let bound = lambda_max.unwrap_or(*intensity);
        if bound < *intensity {
            return Err(CliError::Invalid(
                "lambda_max must be at least the intensity".into(),
            ));
        }
        let mut spec = JumpSpec::new((*intensity).into(), bound, law)
            .map_err(|e| CliError::Invalid(e.to_string()))?;
        if let Some(m) = max_jumps {
            spec = spec.with_max_jumps(*m);
        }
        Ok(Some(spec))
    }
}

impl ScenarioConfig {
    pub fn path_grid(&self) -> Result<PathGrid, CliError> {
        PathGrid::with_horizon(self.grid.horizon, self.grid.dt)
            .map_err(|e| CliError::Invalid(e.to_string()))
    }

    /// Record spacing in grid steps.
    pub fn record_every(&self, grid: &PathGrid) -> usize {
        match self.output.record_every {
            0 => (grid.n_steps / 1000).max(1),
            k => k,
        }
    }

    /// Checks every invariant that does not need a simulation.
    pub fn validate(&self) -> Result<(), CliError> {
        if !(self.grid.horizon > 0.0 && self.grid.horizon.is_finite()) {
            return Err(CliError::Invalid("grid.horizon must be > 0".into()));
        }
        if !(self.grid.dt > 0.0 && self.grid.dt.is_finite()) {
            return Err(CliError::Invalid("grid.dt must be > 0".into()));
        }
        if self.n_paths == 0 {
            return Err(CliError::Invalid("n_paths must be >= 1".into()));
        }
        if self.model != self.market.kind() {
            return Err(CliError::Invalid(format!(
                "model {:?} does not match the market kind",
                self.model
            )));
        }
        let t = &self.thresholds;
        if !(t.eps_slope > 0.0 && t.l_cap > 0.0 && t.atom_eps > 0.0 && t.segregation > 0.0) {
            return Err(CliError::Invalid("thresholds must be positive".into()));
        }
        if !(0.0..1.0).contains(&t.tail_start) {
            return Err(CliError::Invalid(
                "thresholds.tail_start must lie in [0, 1)".into(),
            ));
        }
        self.path_grid()?;
        self.market.covariance()?;
        self.market.kappa0()?;
        self.market.params()?;
        self.market.jumps()?;
        if let MarketConfig::Balanced { s0: Some(s0), .. } = &self.market {
            if s0.len() != self.market.dimension() || s0.iter().any(|&s| !(s > 0.0)) {
                return Err(CliError::Invalid(
                    "s0 must be positive with one entry per company".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Overlays `patch` on `base`, recursing into objects.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, patch) => *slot = patch,
    }
}

/// Parses a scenario document, resolving a `builtin` tag.
pub fn parse_config(text: &str) -> Result<ScenarioConfig, CliError> {
    let raw: Value =
        serde_json::from_str(text).map_err(|e| CliError::ConfigParse(e.to_string()))?;
    let doc = match raw.get("builtin") {
        Some(Value::String(name)) => {
            let base = builtins::builtin(name)
                .ok_or_else(|| CliError::ConfigParse(format!("unknown builtin {name:?}")))?;
            let mut merged = serde_json::to_value(base).expect("config serializes");
            // a market given next to a builtin replaces it whole
            if let (Some(Value::Object(m)), Some(slot)) =
                (raw.get("market"), merged.get_mut("market"))
            {
                *slot = Value::Object(m.clone());
            }
            merge(&mut merged, raw);
            merged
        }
        Some(_) => return Err(CliError::ConfigParse("builtin must be a string".into())),
        None => raw,
    };
    let cfg: ScenarioConfig =
        serde_json::from_value(doc).map_err(|e| CliError::ConfigParse(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ScenarioConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::ConfigParse(format!("{}: {e}", path.display())))?;
    parse_config(&text)
}

/// JSON schema of scenario files.
pub fn schema() -> String {
    let schema = schemars::schema_for!(ScenarioConfig);
    serde_json::to_string_pretty(&schema).expect("schema serializes") + "\n"
}
