use std::f64::consts::PI;

use maxprin_core::auxiliary::{
    estimate_r_m_profile, gamma_lower_bound, rescale_boundary, strip_width,
};
use maxprin_core::maxprin::{
    check_assumptions, problem_scale, verify_comparison, verify_sign, CoefficientFields,
    PointCoefficients, TensorGrid,
};
use maxprin_core::paths::{delta_minus, m_minus, oscillation, simulate_wiener_stream};
use maxprin_core::spde_fd::solve_spde;
use maxprin_core::weighted_norms::{tau_n, weighted_norm, NormOrder, NormParams};
use maxprin_core::{McParams, SamplePath, SpaceGrid, SpdeProblem, TimeGrid};
use proptest::prelude::*;

fn path(seed: u64) -> SamplePath {
    simulate_wiener_stream(TimeGrid::new(1.0, 4096).unwrap(), seed, 0)
}

fn small_solve(prob: &SpdeProblem, seed: u64) -> maxprin_core::FieldSolution {
    let space = SpaceGrid::new(0.0, 1.0, 16).unwrap();
    let time = TimeGrid::new(0.05, 256).unwrap();
    solve_spde(prob, &space, &time, &simulate_wiener_stream(time, seed, 0)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn level_count_monotone_and_bounded(seed in 0u64..1000, n in 0i64..10, c in 0.05f64..4.0, j in 1usize..4096) {
        let p = path(seed);
        let t = p.grid().time(j);
        let here = m_minus(&p, n, c, t).unwrap();
        prop_assert!(here <= n as u32 + 1);
        prop_assert!(m_minus(&p, n + 1, c, t).unwrap() >= here);
        prop_assert!(m_minus(&p, n, c * 1.5, t).unwrap() >= here);
    }

    #[test]
    fn oscillation_shift_invariant_and_subadditive(seed in 0u64..1000, shift in -5.0f64..5.0,
                                                   a in 0usize..1000, b in 1000usize..3000, c in 3000usize..4097) {
        let p = path(seed);
        let g = *p.grid();
        let shifted = SamplePath::new(g, p.values().iter().map(|v| v + shift).collect(), 0).unwrap();
        let (ta, tb, tc) = (g.time(a), g.time(b), g.time(c));
        let whole = oscillation(&p, ta, tc).unwrap();
        prop_assert!((oscillation(&shifted, ta, tc).unwrap() - whole).abs() <= 1e-12 * (1.0 + whole));
        let parts = oscillation(&p, ta, tb).unwrap() + oscillation(&p, tb, tc).unwrap();
        prop_assert!(whole <= parts + 1e-12);
    }

    #[test]
    fn dyadic_statistic_scale_covariant(seed in 0u64..1000, half_m in 1u32..3, n in 0i64..4, j in 1024usize..4097) {
        let m = 2 * half_m;
        let p = path(seed);
        let t = p.grid().time(j);
        let y = rescale_boundary(&p, m).unwrap();
        let lhs = delta_minus(&y, n, (m as f64).exp2() * t).unwrap();
        let rhs = delta_minus(&p, n + m as i64, t).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs));
    }

    #[test]
    fn gamma_bound_in_range(c in 0.0f64..50.0, d in 0.01f64..10.0) {
        let lb = gamma_lower_bound(c, d).unwrap();
        prop_assert!((std::f64::consts::FRAC_1_SQRT_2 - 1e-15..=1.0).contains(&lb));
        prop_assert!(gamma_lower_bound(c + 1.0, d).unwrap() >= lb);
    }

    #[test]
    fn tau_nondecreasing_in_n(vals in prop::collection::vec(0.0f64..5.0, 65)) {
        let grid = TimeGrid::new(2.0, 64).unwrap();
        let taus: Vec<f64> = (1..=6).map(|n| tau_n(&vals, &grid, n).unwrap()).collect();
        prop_assert!(taus.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(taus.iter().all(|t| *t <= 2.0));
    }

    #[test]
    fn coefficient_check_ignores_noise_labels(s1 in -0.9f64..0.9, s2 in -0.9f64..0.9, n1 in -1.0f64..1.0, n2 in -1.0f64..1.0) {
        let grid = TensorGrid::new(vec![4], vec![0.25], vec![0.0]).unwrap();
        let make = |sig: [f64; 2], nu: [f64; 2]| {
            CoefficientFields::from_fn(grid.clone(), 2, vec![0.0], |_| 2.0, |_| 4.0, move |_, _| {
                let mut pc = PointCoefficients::identity(1, 2);
                pc.sigma = sig.to_vec();
                pc.nu = nu.to_vec();
                pc
            })
            .unwrap()
        };
        let lambdas = vec![vec![1.0], vec![-0.5]];
        let a = check_assumptions(&make([s1, s2], [n1, n2]), &lambdas).unwrap();
        let b = check_assumptions(&make([s2, s1], [n2, n1]), &lambdas).unwrap();
        prop_assert_eq!(a.verdict, b.verdict);
        prop_assert!((a.max_violation - b.max_violation).abs() <= 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn solver_is_linear(seed in 0u64..1000, alpha in -2.0f64..2.0, beta in -2.0f64..2.0, sigma in 0.0f64..0.7) {
        let base = |amp: f64, k: f64| {
            SpdeProblem::new(0.0, 1.0)
                .with_coefficients(1.0, sigma)
                .with_ic(move |x| amp * (k * PI * x).sin())
        };
        let u1 = small_solve(&base(1.0, 1.0), seed);
        let u2 = small_solve(&base(1.0, 3.0), seed);
        let mixed = SpdeProblem::new(0.0, 1.0)
            .with_coefficients(1.0, sigma)
            .with_ic(move |x| alpha * (PI * x).sin() + beta * (3.0 * PI * x).sin());
        let u = small_solve(&mixed, seed);
        let expect = u1.combine(alpha, &u2, beta).unwrap();
        let scale = 1.0 + alpha.abs() + beta.abs();
        let gap = u.values.iter().zip(expect.values.iter()).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        prop_assert!(gap <= 1e-12 * scale);
    }

    #[test]
    fn solver_replays_bit_identically(seed in 0u64..1000, sigma in 0.0f64..0.7) {
        let prob = SpdeProblem::new(0.0, 1.0)
            .with_coefficients(1.0, sigma)
            .with_ic(|x| x * (1.0 - x));
        prop_assert_eq!(small_solve(&prob, seed), small_solve(&prob, seed));
    }

    #[test]
    fn comparison_matches_sign_of_difference(seed in 0u64..1000, rho in 1.0f64..3.0, low in 0.0f64..1.0) {
        let upper = SpdeProblem::new(0.0, 1.0).with_coefficients(1.0, 0.5).with_ic(|x| (PI * x).sin());
        let lower = upper.scaled(low);
        let ub = small_solve(&upper, seed);
        let u = small_solve(&lower, seed);
        let rhos = vec![rho; u.time.len()];
        let cmp = verify_comparison(&u, &lower, &ub, &upper, &rhos, 1.0).unwrap();
        let diff_prob = lower.difference(&upper, rho);
        let diff = u.combine(1.0, &ub, -rho).unwrap();
        let sign = verify_sign(&diff, &diff_prob, 1.0).unwrap();
        let raw_cmp = cmp.max_violation
            * (problem_scale(&lower, &u.space, &u.time) + rho * problem_scale(&upper, &u.space, &u.time));
        let raw_sign = sign.max_violation * problem_scale(&diff_prob, &u.space, &u.time);
        prop_assert!((raw_cmp - raw_sign).abs() <= 1e-13 * (1.0 + raw_sign));
    }

    #[test]
    fn norms_homogeneous_and_ordered(seed in 0u64..1000, lambda in -3.0f64..3.0, theta in 0.5f64..3.5) {
        let prob = SpdeProblem::new(0.0, 1.0).with_coefficients(1.0, 0.5).with_ic(|x| (PI * x).sin());
        let u = small_solve(&prob, seed);
        let mut scaled = u.clone();
        scaled.values *= lambda;
        let norm = |field: &maxprin_core::FieldSolution, order| {
            weighted_norm(std::slice::from_ref(field), &NormParams::new(4.0, theta, order).unwrap()).unwrap()
        };
        let l = norm(&u, NormOrder::L);
        prop_assert!((norm(&scaled, NormOrder::L) - lambda.abs() * l).abs() <= 1e-10 * (1.0 + l));
        let h1 = norm(&u, NormOrder::H1);
        let h2 = norm(&u, NormOrder::H2);
        prop_assert!(l <= h1 && h1 <= h2);
    }

    #[test]
    fn exit_probability_monotone_in_offset(seed in 0u64..1000, m in 0u32..3) {
        let boundary = simulate_wiener_stream(TimeGrid::with_step(0.5, 2f64.powi(-13)).unwrap(), seed, 0);
        let w = strip_width(m);
        let xs: Vec<f64> = (1..10).map(|k| k as f64 * w / 10.0).collect();
        let est = estimate_r_m_profile(&boundary, m, 0.5, &xs, 1.0, McParams::new(200, seed)).unwrap();
        prop_assert!(est.windows(2).all(|p| p[0].value <= p[1].value));
    }
}
