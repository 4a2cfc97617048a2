use balmarket_core::growth_opt::{
    growth_optimal_constrained, growth_optimal_hyperplane, growth_rate, optimality_gap,
    GrowthProblem,
};
use balmarket_core::market_model::{ConstraintSet, Portfolio};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn psd(d: usize, entries: &[f64]) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |i, j| entries[i * d + j]);
    a.transpose() * a
}

/// Exhaustive search over the simplex grid with spacing `1/n`.
fn grid_search(a: &DVector<f64>, c: &DMatrix<f64>, r: f64, n: usize) -> (Vec<f64>, f64) {
    let d = a.len();
    let mut best = (vec![], f64::NEG_INFINITY);
    let mut counts = vec![0usize; d];
    fn rec(k: usize, left: usize, counts: &mut Vec<usize>, eval: &mut dyn FnMut(&[usize])) {
        let d = counts.len();
        if k == d - 1 {
            counts[k] = left;
            eval(counts);
            return;
        }
        for m in 0..=left {
            counts[k] = m;
            rec(k + 1, left - m, counts, eval);
        }
    }
    let mut eval = |cs: &[usize]| {
        let pi: Vec<f64> = cs.iter().map(|&m| m as f64 / n as f64).collect();
        let g = growth_rate(&Portfolio::new(pi.clone()), a, c, r).unwrap();
        if g > best.1 {
            best = (pi, g);
        }
    };
    rec(0, n, &mut counts, &mut eval);
    best
}

#[test]
fn simplex_matches_grid_for_identity_covariance() {
    let c = DMatrix::identity(2, 2);
    for (a, expect) in [([0.1, 0.3], [0.4, 0.6]), ([0.0, 10.0], [0.0, 1.0])] {
        let a = DVector::from_column_slice(&a);
        let (grid_pi, grid_g) = grid_search(&a, &c, 0.0, 10_000);
        let sol = growth_optimal_constrained(&GrowthProblem {
            a: a.clone(),
            c: c.clone(),
            r: 0.0,
            constraint: ConstraintSet::ClosedSimplex,
        })
        .unwrap();
        for i in 0..2 {
            assert!((sol.rho.0[i] - expect[i]).abs() < 1e-12);
            assert!((sol.rho.0[i] - grid_pi[i]).abs() <= 1e-4);
        }
        assert!(sol.g_star >= grid_g - 1e-15);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(60))]

    #[test]
    fn constrained_optimum_matches_grid(
        d in 2usize..4,
        entries in proptest::collection::vec(-1.0f64..1.0, 9),
        a in proptest::collection::vec(-1.0f64..1.0, 3),
        r in -0.1f64..0.1,
    ) {
        let c = psd(d, &entries);
        let a = DVector::from_column_slice(&a[..d]);
        let (grid_pi, grid_g) = grid_search(&a, &c, r, 1000);
        let problem = GrowthProblem { a: a.clone(), c: c.clone(), r, constraint: ConstraintSet::ClosedSimplex };
        let sol = growth_optimal_constrained(&problem).unwrap();
        prop_assert!(sol.rho.is_in_simplex(1e-9));
        prop_assert!(sol.g_star >= grid_g - 1e-12);
        prop_assert!(sol.g_star - grid_g <= 1e-5);
        prop_assert!(optimality_gap(&problem, &sol.rho).unwrap() <= 1e-8);
        let arg_gap = sol.rho.0.iter().zip(&grid_pi).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()));
        prop_assert!(arg_gap <= 2e-3, "arg gap {arg_gap}");
    }

    #[test]
    fn optimum_beats_random_feasible_portfolios(
        d in 1usize..6,
        entries in proptest::collection::vec(-1.0f64..1.0, 25),
        a in proptest::collection::vec(-1.0f64..1.0, 5),
        raw in proptest::collection::vec(proptest::collection::vec(0.0f64..1.0, 5), 50),
    ) {
        let c = psd(d, &entries);
        let a = DVector::from_column_slice(&a[..d]);
        let sol = growth_optimal_constrained(&GrowthProblem {
            a: a.clone(), c: c.clone(), r: 0.0, constraint: ConstraintSet::ClosedSimplex,
        }).unwrap();
        for w in &raw {
            let s: f64 = w[..d].iter().sum::<f64>().max(1e-12);
            let pi = Portfolio::new(w[..d].iter().map(|x| x / s).collect());
            prop_assert!(sol.g_star >= growth_rate(&pi, &a, &c, 0.0).unwrap() - 1e-12);
        }
    }

    #[test]
    fn shifting_rates_shifts_growth(
        entries in proptest::collection::vec(-1.0f64..1.0, 9),
        a in proptest::collection::vec(-1.0f64..1.0, 3),
        h in -1.0f64..1.0,
        w in proptest::collection::vec(0.0f64..1.0, 3),
    ) {
        let c = psd(3, &entries);
        let a = DVector::from_column_slice(&a);
        let shifted = &a + DVector::from_element(3, h);
        let pi = Portfolio::new(w.clone());
        let g0 = growth_rate(&pi, &a, &c, 0.02).unwrap();
        let g1 = growth_rate(&pi, &shifted, &c, 0.02 + h).unwrap();
        prop_assert!((g1 - g0 - h).abs() < 1e-12);
        for constraint in [ConstraintSet::ClosedSimplex, ConstraintSet::boxed(vec![-0.5; 3], vec![1.5; 3]).unwrap()] {
            let s0 = growth_optimal_constrained(&GrowthProblem { a: a.clone(), c: c.clone(), r: 0.02, constraint: constraint.clone() }).unwrap();
            let s1 = growth_optimal_constrained(&GrowthProblem { a: shifted.clone(), c: c.clone(), r: 0.02 + h, constraint }).unwrap();
            prop_assert!((&s0.rho.0 - &s1.rho.0).amax() < 1e-7);
            prop_assert!((s1.g_star - s0.g_star - h).abs() < 1e-9);
        }
    }

    #[test]
    fn hyperplane_gap_identity(
        entries in proptest::collection::vec(-1.0f64..1.0, 9),
        a in proptest::collection::vec(-1.0f64..1.0, 3),
        w in proptest::collection::vec(0.01f64..1.0, 3),
    ) {
        let c = psd(3, &entries) + DMatrix::identity(3, 3) * 0.1;
        let a = DVector::from_column_slice(&a);
        let sol = growth_optimal_hyperplane(&a, &c).unwrap();
        let r = sol.implied_rate.unwrap();
        let s: f64 = w.iter().sum();
        let kappa = DVector::from_iterator(3, w.iter().map(|x| x / s));
        let gk = growth_rate(&Portfolio(kappa.clone()), &a, &c, r).unwrap();
        let diff = &kappa - &sol.rho.0;
        let quad = 0.5 * diff.dot(&(&c * &diff));
        // 1/2 |c^{-1/2}(c kappa - a + r 1)|^2 via a linear solve
        let v = &c * &kappa - &a + DVector::from_element(3, r);
        let cinv_v = c.clone().cholesky().unwrap().solve(&v);
        let via_inverse = 0.5 * v.dot(&cinv_v);
        prop_assert!((sol.g_star - gk - quad).abs() < 1e-10);
        prop_assert!((quad - via_inverse).abs() < 1e-10);
    }
}
