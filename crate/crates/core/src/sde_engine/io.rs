//! CSV export and checkpoint summaries of path ensembles.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use super::PathSet;

/// Full double precision: 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Header `path,step,t,kappa_1..kappa_d[,S_1..S_d]` plus `extra` columns.
pub fn paths_header(d: usize, with_caps: bool, extra: &[String]) -> String {
    let mut cols = vec!["path".to_string(), "step".into(), "t".into()];
    cols.extend((1..=d).map(|i| format!("kappa_{i}")));
    if with_caps {
        cols.extend((1..=d).map(|i| format!("S_{i}")));
    }
    cols.extend(extra.iter().cloned());
    cols.join(",")
}

/// Writes the first `max_paths` paths of `paths` as CSV. `extra(path)` gives
/// per-path trailing cells (for example lifetime columns), repeated on every
/// row of that path.
pub fn write_paths_csv<W: Write>(
    out: &mut W,
    paths: &PathSet,
    max_paths: usize,
    extra_header: &[String],
    extra: &dyn Fn(usize) -> Vec<String>,
) -> io::Result<()> {
    let with_caps = paths.caps.is_some();
    writeln!(out, "{}", paths_header(paths.d, with_caps, extra_header))?;
    for p in 0..paths.n_paths.min(max_paths) {
        let tail = extra(p);
        for rec in 0..paths.n_records() {
            let step = paths.steps[rec];
            let mut row = format!("{p},{step},{}", fmt_f64(paths.grid.time(step)));
            for &k in paths.kappa_at(p, rec) {
                row.push(',');
                row.push_str(&fmt_f64(k));
            }
            if let Some(s) = paths.caps_at(p, rec) {
                for &x in s {
                    row.push(',');
                    row.push_str(&fmt_f64(x));
                }
            }
            for cell in &tail {
                row.push(',');
                row.push_str(cell);
            }
            writeln!(out, "{row}")?;
        }
    }
    Ok(())
}

/// Ensemble moments of a vector quantity at one time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointStats {
    pub t: f64,
    pub mean: Vec<f64>,
    /// Standard error of the mean.
    pub se: Vec<f64>,
    /// Sample covariance (denominator `n - 1`).
    pub cov: Vec<Vec<f64>>,
}

impl CheckpointStats {
    /// Moments of the samples `xs` (each of length `d`).
    pub fn from_samples<'a, I>(t: f64, d: usize, xs: I) -> Self
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let samples: Vec<&[f64]> = xs.into_iter().collect();
        let n = samples.len();
        let mut mean = vec![0.0; d];
        for x in &samples {
            for i in 0..d {
                mean[i] += x[i];
            }
        }
        for m in mean.iter_mut() {
            *m /= n.max(1) as f64;
        }
        let mut cov = vec![vec![0.0; d]; d];
        for x in &samples {
            for i in 0..d {
                for j in 0..d {
                    cov[i][j] += (x[i] - mean[i]) * (x[j] - mean[j]);
                }
            }
        }
        let denom = n.saturating_sub(1).max(1) as f64;
        for row in cov.iter_mut() {
            for v in row.iter_mut() {
                *v /= denom;
            }
        }
        let se = (0..d)
            .map(|i| (cov[i][i] / n.max(1) as f64).sqrt())
            .collect();
        Self { t, mean, se, cov }
    }
}

/// Moments of `kappa` at the recorded steps closest to `times`.
pub fn kappa_checkpoints(paths: &PathSet, times: &[f64]) -> Vec<CheckpointStats> {
    times
        .iter()
        .map(|&t| {
            let rec = paths.record_at(t);
            CheckpointStats::from_samples(
                paths.record_time(rec),
                paths.d,
                (0..paths.n_paths).map(|p| paths.kappa_at(p, rec)),
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market_model::{PathGrid, Portfolio};
    use crate::sde_engine::simulate_relative_caps_balanced;
    use nalgebra::DMatrix;

    #[test]
    fn header_layout() {
        assert_eq!(
            paths_header(2, true, &[]),
            "path,step,t,kappa_1,kappa_2,S_1,S_2"
        );
        assert_eq!(
            paths_header(1, false, &["zeta_1".into()]),
            "path,step,t,kappa_1,zeta_1"
        );
    }

    #[test]
    fn numbers_round_trip() {
        let x = 0.1 + 0.2;
        assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
    }

    #[test]
    fn csv_rows_per_record() {
        let ps = simulate_relative_caps_balanced(
            &DMatrix::identity(2, 2).into(),
            &Portfolio::uniform(2),
            PathGrid::new(0.1, 4).unwrap(),
            3,
            1,
        )
        .unwrap();
        let mut buf = Vec::new();
        write_paths_csv(&mut buf, &ps, 2, &[], &|_| vec![]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 2 * 5);
        assert!(text
            .lines()
            .nth(1)
            .unwrap()
            .starts_with("0,0,0.0000000000000000e0,"));
    }

    #[test]
    fn moments_of_two_points() {
        let a = [0.0, 1.0];
        let b = [2.0, 3.0];
        let s = CheckpointStats::from_samples(1.0, 2, [&a[..], &b[..]]);
        assert_eq!(s.mean, vec![1.0, 2.0]);
        assert_eq!(s.cov[0][1], 2.0);
        assert_eq!(s.se[0], 1.0);
    }
}
