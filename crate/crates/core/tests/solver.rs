mod common;

use common::oracle;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;
use sdeepc::rng::stream;
use sdeepc::solver::{
    l1_certificate_violation, CompositeLasso, LinearBox, SolveStatus, SolverSettings,
};

/// Support threshold for the certificate; polished points report a zero
/// primal residual.
const SUPPORT_TOL: f64 = 1e-9;

fn random_instance(rows: usize, cols: usize, seed: u64) -> (DMatrix<f64>, DVector<f64>) {
    let mut rng = stream(seed, 40);
    let a = DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0));
    let b = DVector::from_fn(rows, |_, _| rng.random_range(-1.0..1.0));
    (a, b)
}

fn solve(a: &DMatrix<f64>, b: &DVector<f64>, lambda: f64) -> sdeepc::solver::LassoSolution {
    CompositeLasso::new(a.clone(), None)
        .unwrap()
        .solve(b, lambda, None, &SolverSettings::default(), None)
        .unwrap()
}

#[test]
fn zero_weight_square_system_is_least_squares() {
    let (mut a, b) = random_instance(8, 8, 3);
    for i in 0..8 {
        a[(i, i)] += 3.0;
    }
    let sol = solve(&a, &b, 0.0);
    assert_eq!(sol.status, SolveStatus::Converged);
    let exact = a.clone().lu().solve(&b).unwrap();
    assert!((&sol.g - exact).amax() <= 1e-8);
    assert!((&a * &sol.g - &b).amax() <= 1e-8);
}

#[test]
fn weight_above_null_threshold_gives_zero() {
    let (a, b) = random_instance(12, 20, 4);
    let threshold = (a.transpose() * &b).amax();
    for lambda in [threshold, 1.5 * threshold, 10.0 * threshold] {
        let sol = solve(&a, &b, lambda);
        assert_eq!(sol.status, SolveStatus::Converged);
        assert_eq!(sol.g.amax(), 0.0, "λ = {lambda}");
    }
}

#[test]
fn random_instance_matches_prox_gradient() {
    let (a, b) = random_instance(20, 30, 5);
    let sol = solve(&a, &b, 0.1);
    let reference = oracle::fista(&a, &b, 0.1, 1e-10, 200_000);
    let expect = oracle::objective(&a, &b, 0.1, &reference);
    assert_eq!(sol.status, SolveStatus::Converged);
    assert!(
        (sol.objective - expect).abs() <= 1e-6,
        "{} vs {}",
        sol.objective,
        expect
    );
    let viol = l1_certificate_violation(
        &a,
        &b,
        0.1,
        None,
        &sol.g,
        sol.primal_residual.max(SUPPORT_TOL),
    );
    assert!(viol <= 1e-6, "certificate violation {viol}");
}

#[test]
fn l1_norm_non_increasing_in_weight() {
    let (a, b) = random_instance(15, 25, 6);
    let top = (a.transpose() * &b).amax();
    let mut solver = CompositeLasso::new(a.clone(), None).unwrap();
    let mut prev = f64::INFINITY;
    for i in 0..10 {
        let lambda = top * i as f64 / 9.0;
        let sol = solver
            .solve(&b, lambda, None, &SolverSettings::default(), None)
            .unwrap();
        let norm = sol.g.lp_norm(1);
        assert!(norm <= prev + 1e-9, "λ = {lambda}: {norm} > {prev}");
        prev = norm;
    }
}

#[test]
fn boxed_instance_matches_primal_dual_oracle() {
    let (a, b) = random_instance(18, 24, 7);
    let mut rng = stream(7, 41);
    let c = DMatrix::from_fn(4, 24, |_, _| rng.random_range(-1.0..1.0));
    let lo = DVector::from_element(4, -0.15);
    let hi = DVector::from_element(4, 0.1);
    let bx = LinearBox::new(lo.clone(), hi.clone()).unwrap();
    let mut solver = CompositeLasso::new(a.clone(), Some(c.clone())).unwrap();
    let sol = solver
        .solve(&b, 0.05, Some(&bx), &SolverSettings::default(), None)
        .unwrap();
    assert_eq!(sol.status, SolveStatus::Converged);
    assert!(bx.violation(&(&c * &sol.g)) <= 1e-6);
    let reference = oracle::primal_dual(&a, &b, 0.05, &c, &lo, &hi, 1e-11, 400_000);
    let expect = oracle::objective(&a, &b, 0.05, &reference);
    assert!(
        (sol.objective - expect).abs() <= 1e-6,
        "{} vs {}",
        sol.objective,
        expect
    );
    let viol = l1_certificate_violation(
        &a,
        &b,
        0.05,
        Some((&c, &bx, &sol.box_dual)),
        &sol.g,
        sol.primal_residual.max(SUPPORT_TOL),
    );
    assert!(viol <= 1e-6, "certificate violation {viol}");
}

#[test]
fn inconsistent_box_is_infeasible() {
    let (a, b) = random_instance(6, 9, 8);
    let c = DMatrix::identity(2, 9);
    let bx = LinearBox::new(
        DVector::from_element(2, 1.0),
        DVector::from_element(2, -1.0),
    )
    .unwrap();
    let sol = CompositeLasso::new(a, Some(c))
        .unwrap()
        .solve(&b, 0.1, Some(&bx), &SolverSettings::default(), None)
        .unwrap();
    assert_eq!(sol.status, SolveStatus::Infeasible);
}

#[test]
fn max_iter_reports_best_iterate() {
    let (a, b) = random_instance(20, 30, 9);
    let settings = SolverSettings {
        max_iter: 3,
        ..SolverSettings::default()
    };
    let sol = CompositeLasso::new(a.clone(), None)
        .unwrap()
        .solve(&b, 0.01, None, &settings, None)
        .unwrap();
    assert!(sol.iterations <= 3);
    assert!(sol.objective.is_finite());
}

#[test]
fn identical_solves_are_bitwise_identical() {
    let (a, b) = random_instance(16, 40, 10);
    let mut solver = CompositeLasso::new(a, None).unwrap();
    let s = SolverSettings::default();
    let first = solver.solve(&b, 0.02, None, &s, None).unwrap();
    let second = solver.solve(&b, 0.02, None, &s, None).unwrap();
    assert_eq!(first.g, second.g);
    let warm = solver.solve(&b, 0.02, None, &s, Some(&first.warm)).unwrap();
    let again = solver.solve(&b, 0.02, None, &s, Some(&first.warm)).unwrap();
    assert_eq!(warm.g, again.g);
}

#[test]
fn rejects_bad_arguments() {
    let (a, b) = random_instance(4, 6, 11);
    let mut solver = CompositeLasso::new(a, None).unwrap();
    let s = SolverSettings::default();
    assert!(solver.solve(&b, -1.0, None, &s, None).is_err());
    assert!(solver.solve(&b, f64::NAN, None, &s, None).is_err());
    assert!(solver
        .solve(&DVector::zeros(3), 0.1, None, &s, None)
        .is_err());
    let bad = SolverSettings {
        relaxation: 2.0,
        ..s
    };
    assert!(solver.solve(&b, 0.1, None, &bad, None).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn scaling_preserves_argmin(seed in 0u64..1000, c in 0.2f64..5.0) {
        let (a, b) = random_instance(10, 16, seed);
        let lambda = 0.05;
        let base = solve(&a, &b, lambda);
        let scaled = solve(&(&a * c), &(&b * c), lambda * c * c);
        prop_assert!((scaled.objective - c * c * base.objective).abs() <= 1e-8 * (1.0 + c * c));
        prop_assert!((&scaled.g - &base.g).amax() <= 1e-6);
    }

    #[test]
    fn converged_solutions_pass_certificate(seed in 0u64..1000, lambda in 0.0f64..0.5) {
        let (a, b) = random_instance(12, 20, seed);
        let sol = solve(&a, &b, lambda);
        prop_assume!(sol.status == SolveStatus::Converged);
        let viol = l1_certificate_violation(&a, &b, lambda, None, &sol.g, sol.primal_residual.max(SUPPORT_TOL));
        prop_assert!(viol <= 10.0 * 1e-4 * lambda.max(1.0), "violation {}", viol);
    }
}
