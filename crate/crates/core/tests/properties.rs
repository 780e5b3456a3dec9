use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use stopvest::boundary::{map_to_g, map_to_h};
use stopvest::dual::{legendre_transform, phi, Obstacle};
use stopvest::model::{classify, UtilityParams};
use stopvest::montecarlo::pairwise_sum;
use stopvest::solver::solve_tridiagonal;
use stopvest::Regime;

fn rank(r: Regime) -> u8 {
    match r {
        Regime::StopImmediately => 0,
        Regime::FreeBoundary => 1,
        Regime::NeverStop => 2,
    }
}

proptest! {
    #[test]
    fn boundary_maps_invert_each_other(gamma in 0.05f64..0.95, k in 0.1f64..5.0, frac in 0.01f64..1.0) {
        let u = UtilityParams::new(gamma, k).unwrap();
        let y0 = u.dual_upper();
        let h = vec![frac * y0];
        let g = map_to_g(&h, &u).unwrap();
        prop_assert!(g[0] >= 0.0);
        let back = map_to_h(&g, &u);
        prop_assert!((back[0] - h[0]).abs() <= 1e-10 * h[0]);
    }

    #[test]
    fn boundary_map_rejects_points_outside_the_domain(gamma in 0.05f64..0.95, k in 0.1f64..5.0) {
        let u = UtilityParams::new(gamma, k).unwrap();
        prop_assert!(map_to_g(&[u.dual_upper() * 1.01], &u).is_err());
        prop_assert!(map_to_g(&[0.0], &u).is_err());
    }

    #[test]
    fn regime_is_monotone_in_the_sharpe_ratio(a2 in 0.0f64..2.0, bump in 0.0f64..1.0, gamma in 0.05f64..0.95, r in 0.001f64..0.2) {
        let lo = classify(a2, gamma, r);
        let hi = classify(a2 + bump, gamma, r);
        prop_assert!(rank(lo) <= rank(hi));
    }

    #[test]
    fn regime_thresholds(gamma in 0.05f64..0.95, r in 0.001f64..0.2) {
        // stop at once up to a2 = 2 r (1 - gamma)^2 / gamma, never stop from 2 r (1 - gamma) / gamma
        let never = 2.0 * r * (1.0 - gamma) / gamma;
        let stop = never * (1.0 - gamma);
        prop_assert_eq!(classify(never * 1.0001, gamma, r), Regime::NeverStop);
        prop_assert_eq!(classify(stop * 0.9999, gamma, r), Regime::StopImmediately);
        prop_assert_eq!(classify(0.5 * (stop + never), gamma, r), Regime::FreeBoundary);
    }

    #[test]
    fn obstacle_is_the_transform_of_the_stopping_reward(gamma in 0.2f64..0.8, k in 0.5f64..2.0, frac in 0.3f64..0.95) {
        let u = UtilityParams::new(gamma, k).unwrap();
        let y = frac * u.dual_upper();
        let top = 3.0 * Obstacle::new(&u).wealth_shift(y);
        let table: Vec<(f64, f64)> = (0..=4000)
            .map(|i| {
                let x = top * i as f64 / 4000.0;
                (x, u.stop_reward(x))
            })
            .collect();
        let brute = legendre_transform(&table, y).unwrap();
        let exact = phi(y, &u).unwrap();
        prop_assert!((brute - exact).abs() <= 1e-6 * exact.abs().max(1.0), "{} vs {}", brute, exact);
    }

    #[test]
    fn obstacle_slope_is_minus_the_stopping_wealth(gamma in 0.05f64..0.95, k in 0.1f64..5.0, frac in 0.01f64..1.0) {
        let u = UtilityParams::new(gamma, k).unwrap();
        let ob = Obstacle::new(&u);
        let y = frac * u.dual_upper();
        let x = y.powf(1.0 / (gamma - 1.0)) - k;
        prop_assert!((ob.slope(y) + x).abs() <= 1e-10 * x.abs().max(1.0));
        let eps = 1e-6 * y;
        let fd = (ob.value(y + eps) - ob.value(y - eps)) / (2.0 * eps);
        prop_assert!((fd - ob.slope(y)).abs() <= 1e-5 * ob.slope(y).abs().max(1.0));
        prop_assert!(ob.curvature(y) > 0.0);
    }

    #[test]
    fn pairwise_sum_is_accurate(v in prop::collection::vec(-1e3f64..1e3, 0..3000)) {
        let naive: f64 = v.iter().sum();
        let bound = 1e-13 * v.iter().map(|x| x.abs()).sum::<f64>().max(1.0);
        prop_assert!((pairwise_sum(&v) - naive).abs() <= bound);
    }

    #[test]
    fn tridiagonal_solve_matches_dense_lu(
        rows in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0, -5.0f64..5.0), 2..60)
    ) {
        let n = rows.len();
        let sub: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let sup: Vec<f64> = rows.iter().map(|r| r.1).collect();
        // strict diagonal dominance, as produced by the implicit steps
        let diag: Vec<f64> = rows.iter().map(|r| 2.5 + r.0.abs() + r.1.abs()).collect();
        let rhs: Vec<f64> = rows.iter().map(|r| r.2).collect();
        let fast = solve_tridiagonal(&sub, &diag, &sup, &rhs).unwrap();

        let mut a = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            a[(i, i)] = diag[i];
            if i > 0 {
                a[(i, i - 1)] = sub[i];
            }
            if i + 1 < n {
                a[(i, i + 1)] = sup[i];
            }
        }
        let dense = a.lu().solve(&DVector::from_vec(rhs)).unwrap();
        for i in 0..n {
            prop_assert!((fast[i] - dense[i]).abs() <= 1e-12 * dense[i].abs().max(1.0));
        }
    }
}
