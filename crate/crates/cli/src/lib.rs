//! Scenario runner: JSON configs in, path tables and diagnostics out.

pub mod builtins;
pub mod config;
pub mod output;
pub mod runner;

use std::path::{Path, PathBuf};

use thiserror::Error;

use balmarket_core::balance_diag::DiagError;
use balmarket_core::jump_markets::JumpError;
use balmarket_core::sde_engine::SimError;

pub use config::{load_config, parse_config, ScenarioConfig};
pub use runner::{simulate_scenario, ScenarioResults, Summary};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config parse error: {0}")]
    ConfigParse(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("summary was written by engine {found}, this is {expected}")]
    VersionMismatch { found: String, expected: String },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Diag(#[from] DiagError),
    #[error(transparent)]
    Jump(#[from] JumpError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::ConfigParse(_) | CliError::Invalid(_) => 2,
            CliError::VersionMismatch { .. } => 3,
            _ => 1,
        }
    }
}

/// Runs a scenario and writes its five output files into `dir`.
pub fn run_scenario(cfg: &ScenarioConfig, dir: &Path) -> Result<ScenarioResults, CliError> {
    let mut res = simulate_scenario(cfg)?;
    let files = output::render(&mut res);
    output::write_all(dir, &files)?;
    Ok(res)
}

/// One CSV compared against the digest recorded in the summary.
#[derive(Clone, Debug, PartialEq)]
pub struct DigestCheck {
    pub file: String,
    pub expected: String,
    pub actual: String,
}

impl DigestCheck {
    pub fn matches(&self) -> bool {
        self.expected == self.actual
    }
}

/// Reruns the scenario stored in a `summary.json` into `dir`, optionally
/// with another seed, and compares CSV digests.
pub fn replay(
    summary_path: &Path,
    dir: &Path,
    seed: Option<u64>,
) -> Result<Vec<DigestCheck>, CliError> {
    let text = std::fs::read_to_string(summary_path).map_err(|e| CliError::io(summary_path, e))?;
    let summary: Summary =
        serde_json::from_str(&text).map_err(|e| CliError::ConfigParse(e.to_string()))?;
    if summary.engine_version != balmarket_core::VERSION {
        return Err(CliError::VersionMismatch {
            found: summary.engine_version,
            expected: balmarket_core::VERSION.into(),
        });
    }
    let mut cfg = summary.config;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let res = run_scenario(&cfg, dir)?;
    Ok(summary
        .digests
        .iter()
        .map(|(file, expected)| DigestCheck {
            file: file.clone(),
            expected: expected.clone(),
            actual: res.summary.digests.get(file).cloned().unwrap_or_default(),
        })
        .collect())
}
