use std::f64::consts::PI;

use maxprin_core::auxiliary::{strip_width, v_m_profile, write_gamma_csv, GammaRow};
use maxprin_core::maxprin::{envelope_problem, verify_sign};
use maxprin_core::paths::{path_stat_rows, simulate_wiener_stream, write_path_stats_csv};
use maxprin_core::spde_fd::{
    read_field_binary, solve_spde, stability_check, write_field_binary, write_field_csv,
    Coefficient,
};
use maxprin_core::{Error, McParams, SpaceGrid, SpdeProblem, TimeGrid};

/// The finite-difference `v_m` and its hitting-probability representation
/// are computed along unrelated routes; they must agree in distribution
/// pathwise up to Monte Carlo and grid error.
#[test]
fn auxiliary_solution_two_routes_agree() {
    for (sigma, m) in [(0.0, 0), (0.5, 0), (0.5, 2)] {
        let width = strip_width(m);
        let space = SpaceGrid::new(0.0, width, 64).unwrap();
        let t_end = 0.25 * width * width;
        let time = TimeGrid::new(t_end, 8192).unwrap();
        let drv = simulate_wiener_stream(time, 77, 3);
        let prob = envelope_problem(&SpdeProblem::new(0.0, 1.0).with_coefficients(1.0, sigma), m);
        let fd = solve_spde(&prob, &space, &time, &drv).unwrap();
        let nodes = [16usize, 32, 48];
        let xs: Vec<f64> = nodes.iter().map(|&i| space.x(i)).collect();
        let mc = McParams::new(4000, 5);
        let rep = v_m_profile(
            &Coefficient::Constant(1.0),
            &Coefficient::Constant(sigma),
            &drv,
            m,
            t_end,
            &xs,
            mc,
        )
        .unwrap();
        for (&i, e) in nodes.iter().zip(&rep) {
            let v = fd.at(time.steps(), i);
            let tol = 3.0 * e.std_error + 0.02;
            assert!(
                (v - e.value).abs() <= tol,
                "sigma={sigma} m={m} x={}: fd {v} vs representation {} (tol {tol})",
                space.x(i),
                e.value
            );
        }
    }
}

#[test]
fn stability_guard_examples() {
    let prob = SpdeProblem::new(0.0, 1.0);
    let space = SpaceGrid::new(0.0, 1.0, 256).unwrap();
    let fine = TimeGrid::with_step(1.0, 2f64.powi(-18)).unwrap();
    assert!(stability_check(&prob, &space, &fine).passed());
    let coarse = TimeGrid::with_step(1.0, 2f64.powi(-10)).unwrap();
    let r = stability_check(&prob, &space, &coarse);
    assert!(!r.passed());
    let drv = simulate_wiener_stream(coarse, 1, 0);
    assert!(matches!(
        solve_spde(&prob, &space, &coarse, &drv),
        Err(Error::Unstable(_))
    ));

    let degenerate = SpdeProblem::new(0.0, 1.0).with_coefficients(1.0, 1.0);
    assert!(!stability_check(&degenerate, &space, &fine).passed());
}

#[test]
fn positive_data_rejected_by_sign_check() {
    let prob = SpdeProblem::new(0.0, 1.0)
        .with_coefficients(1.0, 0.5)
        .with_ic(|x| (PI * x).sin());
    let space = SpaceGrid::new(0.0, 1.0, 16).unwrap();
    let time = TimeGrid::new(0.05, 256).unwrap();
    let u = solve_spde(&prob, &space, &time, &simulate_wiener_stream(time, 2, 0)).unwrap();
    assert!(matches!(
        verify_sign(&u, &prob, 1e-3),
        Err(Error::Hypothesis(_))
    ));
}

#[test]
fn field_exports_round_trip_and_replay() {
    let prob = SpdeProblem::new(0.0, 1.0)
        .with_coefficients(1.0, 0.5)
        .with_ic(|x| x * (1.0 - x));
    let space = SpaceGrid::new(0.0, 1.0, 16).unwrap();
    let time = TimeGrid::new(0.05, 256).unwrap();
    let run = || solve_spde(&prob, &space, &time, &simulate_wiener_stream(time, 9, 4)).unwrap();
    let (a, b) = (run(), run());

    let (mut csv_a, mut csv_b) = (Vec::new(), Vec::new());
    write_field_csv(&mut csv_a, &a).unwrap();
    write_field_csv(&mut csv_b, &b).unwrap();
    assert_eq!(csv_a, csv_b);
    let text = String::from_utf8(csv_a).unwrap();
    assert_eq!(text.lines().next(), Some("t,x,u"));
    assert_eq!(text.lines().count(), 1 + time.len() * space.len());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("field.bin");
    write_field_binary(std::fs::File::create(&path).unwrap(), &a).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(&bytes[..4], b"SPDF");
    let (n, m, values) = read_field_binary(std::fs::File::open(&path).unwrap()).unwrap();
    assert_eq!((n, m), (time.steps(), space.cells()));
    assert_eq!(values, a.values);
}

#[test]
fn csv_headers_match_documented_columns() {
    let grid = TimeGrid::new(1.0, 64).unwrap();
    let path = simulate_wiener_stream(grid, 3, 0);
    let mut out = Vec::new();
    write_path_stats_csv(&mut out, &path_stat_rows(0, &path, 3, 1.0)).unwrap();
    let text = String::from_utf8(out).unwrap();
    assert_eq!(
        text.lines().next(),
        Some("path_index,n,t,delta_minus,m_minus")
    );

    let mut out = Vec::new();
    let row = GammaRow {
        c: 1.0,
        d: 1.0,
        delta: 1.0,
        gamma_hat: 0.9,
        gamma_lb: 0.85,
    };
    write_gamma_csv(&mut out, &[row]).unwrap();
    assert_eq!(
        String::from_utf8(out).unwrap(),
        "c,d,delta,gamma_hat,gamma_lb\n1,1,1,0.9,0.85\n"
    );
}
