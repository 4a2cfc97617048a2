use balmarket_core::balance_diag::{
    balance_report, brownian_lln_ratios, classify_outcome, exponential_martingale_terminals,
    log_relative_wealth_decomposition, loss_increment_rate, loss_of_balance, pairwise_distance,
    pairwise_rate, path_coefficients, relative_growth_excess, wealth_path, BalanceThresholds,
    Classification, Coefficients, PortfolioRule, StepCoeffs, WealthRatioTracker, WealthScheme,
};
use balmarket_core::growth_opt::SimplexOptimizer;
use balmarket_core::market_model::{
    MarketParams, MatrixSpec, PathGrid, Portfolio, ScalarSpec, VectorSpec,
};
use balmarket_core::sde_engine::{BalancedEngine, CapitalizationEngine, RecordOptions};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};

/// Riskless company 0 and `dS^1 = S^1 (a dt + dW)`.
fn two_company(a1: f64) -> MarketParams {
    MarketParams::new(
        VectorSpec::from(DVector::from_vec(vec![0.0, a1])),
        DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]).into(),
        ScalarSpec::from(0.0),
        DVector::from_vec(vec![1.0, 1.0]),
    )
}

fn steps_of(params: &MarketParams, grid: PathGrid, n: usize, seed: u64) -> Vec<Vec<StepCoeffs>> {
    let set = CapitalizationEngine::new(params, grid)
        .unwrap()
        .simulate(n, seed, RecordOptions::default())
        .unwrap();
    let coeffs = Coefficients::of(params);
    (0..n)
        .map(|p| path_coefficients(&set, p, &params.c, &coeffs).unwrap())
        .collect()
}

#[test]
fn two_company_loss_increments_match_closed_forms() {
    let grid = PathGrid::new(0.01, 500).unwrap();
    // a = 0: rho = e_0, increment (kappa^1)^2 / 2
    // a = 1/2: rho = (1/2, 1/2), increment (kappa^1 - 1/2)^2 / 2
    for (a1, centre) in [(0.0, 0.0), (0.5, 0.5)] {
        for steps in steps_of(&two_company(a1), grid, 5, 7) {
            let l = loss_of_balance(&steps).unwrap();
            for (k, s) in steps.iter().enumerate() {
                let expect = 0.5 * (s.kappa[1] - centre).powi(2) * s.dt;
                assert!(
                    (l[k + 1] - l[k] - expect).abs() <= 1e-10,
                    "a = {a1}, step {k}"
                );
            }
        }
    }
}

#[test]
fn balanced_construction_has_no_loss() {
    let c: MatrixSpec =
        DMatrix::from_row_slice(3, 3, &[0.5, 0.1, 0.0, 0.1, 0.3, 0.05, 0.0, 0.05, 0.9]).into();
    let set = BalancedEngine::new(
        &c,
        &Portfolio::new(vec![0.2, 0.3, 0.5]),
        PathGrid::new(0.01, 300).unwrap(),
    )
    .unwrap()
    .simulate(10, 4, RecordOptions::default())
    .unwrap();
    let coeffs = Coefficients::balanced(ScalarSpec::from(0.02));
    for p in 0..set.n_paths {
        let steps = path_coefficients(&set, p, &c, &coeffs).unwrap();
        let l = loss_of_balance(&steps).unwrap();
        assert!(*l.last().unwrap() <= 1e-9);
        assert!(l.windows(2).all(|w| w[1] >= w[0]));
        let decomposition = log_relative_wealth_decomposition(&steps).unwrap();
        assert!(decomposition.drift.iter().all(|&x| x.abs() <= 1e-9));
    }
}

#[test]
fn log_wealth_decomposition_reconstructs_ratio() {
    for steps in steps_of(&two_company(0.0), PathGrid::new(0.01, 200).unwrap(), 100, 3) {
        let dec = log_relative_wealth_decomposition(&steps).unwrap();
        assert!(dec.max_defect < 1e-6, "{}", dec.max_defect);
        assert_eq!(dec.drift[0], 0.0);
    }
}

#[test]
fn rebalanced_wealth_tracks_prices() {
    let params = MarketParams::new(
        VectorSpec::from(DVector::from_vec(vec![0.05, 0.1, -0.02])),
        DMatrix::from_row_slice(3, 3, &[0.2, 0.05, 0.0, 0.05, 0.1, 0.01, 0.0, 0.01, 0.3]).into(),
        ScalarSpec::from(0.01),
        DVector::from_vec(vec![1.0, 2.0, 3.0]),
    );
    for steps in steps_of(&params, PathGrid::new(0.01, 200).unwrap(), 5, 9) {
        let market = wealth_path(&PortfolioRule::Market, &steps, WealthScheme::Rebalanced).unwrap();
        let single = wealth_path(
            &PortfolioRule::fixed(vec![0.0, 1.0, 0.0]),
            &steps,
            WealthScheme::Rebalanced,
        )
        .unwrap();
        let bank = wealth_path(
            &PortfolioRule::fixed(vec![0.0; 3]),
            &steps,
            WealthScheme::Rebalanced,
        )
        .unwrap();
        for (k, s) in steps.iter().enumerate() {
            let caps = s.caps_next.as_ref().unwrap();
            assert!((market[k + 1] / (caps.sum() / 6.0) - 1.0).abs() <= 1e-6);
            assert!((single[k + 1] / (caps[1] / 2.0) - 1.0).abs() <= 1e-6);
            assert!((bank[k + 1] - (0.01 * (s.t + s.dt)).exp()).abs() <= 1e-9);
        }
    }
}

#[test]
fn fixed_portfolios_lose_against_growth_optimum() {
    let params = MarketParams::new(
        VectorSpec::from(DVector::from_vec(vec![0.3, 0.1, 0.2])),
        DMatrix::from_row_slice(3, 3, &[0.4, 0.1, 0.0, 0.1, 0.3, 0.05, 0.0, 0.05, 0.5]).into(),
        ScalarSpec::from(0.0),
        DVector::from_vec(vec![1.0, 1.0, 1.0]),
    );
    let grid = PathGrid::new(0.01, 200).unwrap();
    let engine = CapitalizationEngine::new(&params, grid).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let portfolios: Vec<DVector<f64>> = (0..6)
        .map(|_| {
            let w = DVector::from_fn(3, |_, _| rng.random_range(0.0..1.0));
            let s = w.sum();
            w / s
        })
        .collect();
    let checkpoints = vec![50, 100, 150, 200];
    let n = 2000;
    let mut values = vec![vec![vec![0.0; n]; portfolios.len()]; checkpoints.len()];
    for p in 0..n {
        let mut tracker = WealthRatioTracker::new(
            Coefficients::of(&params),
            portfolios.clone(),
            checkpoints.clone(),
        );
        engine.run_seeded(13, p, &mut tracker).unwrap();
        for (k, row) in tracker.values.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                values[k][j][p] = *v;
            }
        }
    }
    for j in 0..portfolios.len() {
        let mut prev = vec![1.0; n];
        for k in 0..checkpoints.len() {
            let diff: Vec<f64> = (0..n).map(|p| values[k][j][p] - prev[p]).collect();
            let mean = diff.iter().sum::<f64>() / n as f64;
            let var = diff.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            assert!(
                mean <= 3.0 * (var / n as f64).sqrt(),
                "portfolio {j} checkpoint {k}: {mean}"
            );
            prev = values[k][j].clone();
        }
    }
}

#[test]
fn growth_excess_bounds_relative_variance() {
    let params = MarketParams::new(
        VectorSpec::from(DVector::from_vec(vec![0.3, -0.1, 0.2])),
        DMatrix::from_row_slice(3, 3, &[0.4, 0.1, 0.0, 0.1, 0.3, 0.05, 0.0, 0.05, 0.5]).into(),
        ScalarSpec::from(0.01),
        DVector::from_vec(vec![1.0, 2.0, 1.0]),
    );
    let mut opt = SimplexOptimizer::new();
    for steps in steps_of(&params, PathGrid::new(0.01, 300).unwrap(), 5, 2) {
        for s in &steps {
            let (_, _, rho) = loss_increment_rate(&mut opt, &s.kappa, &s.a, &s.c, s.r).unwrap();
            assert!(relative_growth_excess(&rho, &s.kappa, &s.a, &s.c, s.r) >= -1e-12);
        }
    }
}

#[test]
fn two_company_distance_grows_linearly() {
    let grid = PathGrid::new(0.01, 400).unwrap();
    for steps in steps_of(&two_company(0.0), grid, 3, 1) {
        for horizon in [1.0, 2.0, 4.0] {
            assert!((pairwise_distance(&steps, 0, 1, horizon) - horizon).abs() <= 1e-9);
        }
    }
}

#[test]
fn vanishing_covariance_keeps_pairs_close() {
    // c_t = e^{-t} I in a balanced market: kappa settles in the interior
    let c = MatrixSpec::state(|t, _| DMatrix::identity(2, 2) * (-t).exp());
    let grid = PathGrid::new(0.02, 2000).unwrap();
    let set = BalancedEngine::new(&c, &Portfolio::uniform(2), grid)
        .unwrap()
        .simulate(20, 6, RecordOptions::default())
        .unwrap();
    let coeffs = Coefficients::balanced(ScalarSpec::from(0.0));
    let thresholds = BalanceThresholds::default();
    let mut checked = 0;
    for p in 0..set.n_paths {
        let steps = path_coefficients(&set, p, &c, &coeffs).unwrap();
        let l = loss_of_balance(&steps).unwrap();
        let times: Vec<f64> = (0..=grid.n_steps).map(|k| grid.time(k)).collect();
        let report = balance_report(times.clone(), l, thresholds);
        let last = set.terminal_kappa(p);
        if report.classification != Classification::Balanced || last.iter().any(|&x| x <= 0.1) {
            continue;
        }
        checked += 1;
        let dist: Vec<f64> = times
            .iter()
            .map(|&t| pairwise_distance(&steps, 0, 1, t))
            .collect();
        let (_, slope) = classify_outcome(&times, &dist, thresholds);
        assert!(slope < thresholds.eps_slope, "path {p}: slope {slope}");
    }
    assert!(checked > 10);
}

#[test]
fn brownian_ratio_vanishes() {
    let n = 4000;
    let horizon = 1e4;
    let ratios: Vec<f64> = brownian_lln_ratios(horizon, 1.0, n, 3)
        .iter()
        .map(|r| r.ratio)
        .collect();
    let mean = ratios.iter().sum::<f64>() / n as f64;
    let se = 1.0 / (horizon * n as f64).sqrt();
    assert!(mean.abs() <= 3.0 * se, "{mean} vs se {se}");
}

#[test]
fn exponential_martingale_tail_matches_normal_oracle() {
    let n = 20_000;
    let horizon: f64 = 100.0;
    let terminals = exponential_martingale_terminals(horizon, 0.1, n, 8);
    let frac = terminals.iter().filter(|&&v| v > 0.01).count() as f64 / n as f64;
    // E(W)_T > 0.01  iff  W_T > log(0.01) + T/2
    let z = (0.01f64.ln() + horizon / 2.0) / horizon.sqrt();
    let p = 1.0 - Normal::standard().cdf(z);
    let se = (p * (1.0 - p) / n as f64).sqrt();
    assert!((frac - p).abs() <= 3.0 * se, "{frac} vs {p}");
    assert!(p <= 0.01);
}

fn psd_strategy(d: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-1.0..1.0f64, d * d).prop_map(move |v| {
        let a = DMatrix::from_vec(d, d, v);
        let c = a.transpose() * a;
        (&c + c.transpose()) * 0.5
    })
}

proptest! {
    #[test]
    fn pair_rates_are_symmetric_and_subadditive(
        c in psd_strategy(4),
        a in prop::collection::vec(-1.0..1.0f64, 4),
    ) {
        let a = DVector::from_vec(a);
        let g = |i: usize| a[i] - 0.5 * c[(i, i)];
        for i in 0..4 {
            prop_assert_eq!(pairwise_rate(&a, &c, i, i), 0.0);
            for j in 0..4 {
                prop_assert!((pairwise_rate(&a, &c, i, j) - pairwise_rate(&a, &c, j, i)).abs() <= 1e-12);
                for k in 0..4 {
                    prop_assert!((g(i) - g(k)).abs() <= (g(i) - g(j)).abs() + (g(j) - g(k)).abs() + 1e-12);
                }
            }
        }
    }
}
