//! Serializes a finished run. Every file is rendered in memory first so the
//! summary can carry the digests of the CSV outputs.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use balmarket_core::jump_markets::{lifetime_cells, lifetime_header};
use balmarket_core::sde_engine::io::{fmt_f64, write_paths_csv};

use crate::runner::ScenarioResults;
use crate::CliError;

pub const PATHS_CSV: &str = "paths.csv";
pub const LIMITING_CSV: &str = "limiting.csv";
pub const BALANCE_JSON: &str = "balance.json";
pub const DISTANCES_JSON: &str = "distances.json";
pub const SUMMARY_JSON: &str = "summary.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

pub fn paths_csv(res: &ScenarioResults, max_paths: usize) -> Vec<u8> {
    let mut out = Vec::new();
    let (header, cells): (Vec<String>, Box<dyn Fn(usize) -> Vec<String>>) = match &res.lifetimes {
        Some(lives) => (
            lifetime_header(res.paths.d),
            Box::new(move |p| lifetime_cells(&lives[p])),
        ),
        None => (vec![], Box::new(|_| vec![])),
    };
    write_paths_csv(&mut out, &res.paths, max_paths, &header, &*cells)
        .expect("writing to memory cannot fail");
    out
}

/// `path,class,terminal_kappa_1..d,L_terminal`; empty without the limiting
/// diagnostic.
pub fn limiting_csv(res: &ScenarioResults) -> Vec<u8> {
    let d = res.paths.d;
    let mut s = String::from("path,class");
    for i in 1..=d {
        let _ = write!(s, ",terminal_kappa_{i}");
    }
    s.push_str(",L_terminal\n");
    if let Some(report) = &res.limiting {
        for (p, class) in report.classes.iter().enumerate() {
            let _ = write!(s, "{p},{}", class.label());
            for &k in res.paths.terminal_kappa(p) {
                let _ = write!(s, ",{}", fmt_f64(k));
            }
            let l = res.l_terminal[p].map(fmt_f64).unwrap_or_default();
            let _ = writeln!(s, ",{l}");
        }
    }
    s.into_bytes()
}

/// Renders every output file; digests of the CSVs land in the summary.
pub fn render(res: &mut ScenarioResults) -> Vec<(&'static str, Vec<u8>)> {
    let csv_paths = res.summary.config.output.csv_paths;
    let paths = paths_csv(res, csv_paths);
    let limiting = limiting_csv(res);
    res.summary.digests.clear();
    res.summary
        .digests
        .insert(PATHS_CSV.into(), sha256_hex(&paths));
    res.summary
        .digests
        .insert(LIMITING_CSV.into(), sha256_hex(&limiting));
    let json = |v: &dyn erased::Json| v.render();
    vec![
        (PATHS_CSV, paths),
        (LIMITING_CSV, limiting),
        (BALANCE_JSON, json(&res.balance)),
        (DISTANCES_JSON, json(&res.distances)),
        (SUMMARY_JSON, json(&res.summary)),
    ]
}

mod erased {
    use serde::Serialize;

    pub trait Json {
        fn render(&self) -> Vec<u8>;
    }

    impl<T: Serialize> Json for T {
        fn render(&self) -> Vec<u8> {
            let mut v = serde_json::to_vec_pretty(self).expect("outputs serialize");
            v.push(b'\n');
            v
        }
    }
}

pub fn write_all(dir: &Path, files: &[(&'static str, Vec<u8>)]) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    for (name, bytes) in files {
        let path = dir.join(name);
        fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
    }
    Ok(())
}
