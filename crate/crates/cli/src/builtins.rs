//! Worked examples shipped with the binary.

use crate::config::{
    DiagnosticsToggles, GridConfig, MarketConfig, ModelKind, OutputConfig, ScenarioConfig,
    Thresholds,
};

pub const NAMES: [&str; 5] = [
    "sec6_case_a0",
    "sec6_case_band",
    "sec6_case_critical",
    "example_7_2",
    "perfect_balance_demo",
];

pub fn describe(name: &str) -> Option<&'static str> {
    Some(match name {
        "sec6_case_a0" => "riskless company 0 against dS = S dW: balanced, company 0 takes all",
        "sec6_case_band" => {
            "riskless company 0 against dS = S (dt/4 + dW): unbalanced, company 1 vanishes"
        }
        "sec6_case_critical" => {
            "riskless company 0 against dS = S (dt/2 + dW): unbalanced, shares oscillate"
        }
        "example_7_2" => {
            "jump market where company 1 dies at 2 log 2 unless its single jump comes first"
        }
        "perfect_balance_demo" => {
            "three companies with drift c kappa + r, lifted to capitalizations"
        }
        _ => return None,
    })
}

/// Riskless company 0 with `S^0 = 1` and `dS^1 = S^1 (a dt + dW)`, `S^1_0 = 1`.
fn two_company(name: &str, a: f64, horizon: f64) -> ScenarioConfig {
    ScenarioConfig {
        name: name.into(),
        model: ModelKind::Continuous,
        builtin: Some(name.into()),
        market: MarketConfig::General {
            a: vec![0.0, a],
            c: vec![vec![0.0, 0.0], vec![0.0, 1.0]],
            r: 0.0,
            s0: vec![1.0, 1.0],
        },
        grid: GridConfig { horizon, dt: 1e-2 },
        n_paths: 1000,
        seed: 20_240_601,
        diagnostics: DiagnosticsToggles::default(),
        thresholds: Thresholds::default(),
        output: OutputConfig::default(),
    }
}

pub fn builtin(name: &str) -> Option<ScenarioConfig> {
    let cfg = match name {
        "sec6_case_a0" => two_company(name, 0.0, 100.0),
        "sec6_case_band" => two_company(name, 0.25, 100.0),
        "sec6_case_critical" => two_company(name, 0.5, 1000.0),
        "example_7_2" => ScenarioConfig {
            name: name.into(),
            model: ModelKind::Jump,
            builtin: Some(name.into()),
            market: MarketConfig::DeathExample,
            grid: GridConfig {
                horizon: 1.5,
                dt: 1e-4,
            },
            n_paths: 10_000,
            seed: 72,
            diagnostics: DiagnosticsToggles {
                limiting_distribution: false,
                ..DiagnosticsToggles::default()
            },
            thresholds: Thresholds::default(),
            output: OutputConfig::default(),
        },
        "perfect_balance_demo" => ScenarioConfig {
            name: name.into(),
            model: ModelKind::Continuous,
            builtin: Some(name.into()),
            market: MarketConfig::Balanced {
                c: vec![
                    vec![0.5, 0.1, 0.0],
                    vec![0.1, 0.3, 0.05],
                    vec![0.0, 0.05, 0.9],
                ],
                r: 0.03,
                kappa0: vec![0.2, 0.3, 0.5],
                s0: Some(vec![2.0, 3.0, 5.0]),
            },
            grid: GridConfig {
                horizon: 1.0,
                dt: 1e-3,
            },
            n_paths: 10_000,
            seed: 33,
            // one year is far too short for a limiting distribution
            diagnostics: DiagnosticsToggles {
                limiting_distribution: false,
                ..DiagnosticsToggles::default()
            },
            thresholds: Thresholds::default(),
            output: OutputConfig::default(),
        },
        _ => return None,
    };
    Some(cfg)
}
