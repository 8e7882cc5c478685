//! Library results against independent reference computations.

mod common;

use common::jacobi_top_singular;

#[test]
fn spectral_norm_matches_jacobi_svd() {
    println!("{}", common::spectral_vs_jacobi().unwrap());
}

#[test]
fn jacobi_oracle_on_known_matrices() {
    assert!((jacobi_top_singular(3, 3, &[3.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.5]) - 3.0).abs() < 1e-15);
    // [[1, 1], [0, 1]] has σ_max = (1 + √5)/2.
    let golden = (1.0 + 5f64.sqrt()) / 2.0;
    assert!((jacobi_top_singular(2, 2, &[1.0, 1.0, 0.0, 1.0]) - golden).abs() < 1e-14);
}

#[test]
fn jacobians_match_finite_differences() {
    println!("{}", common::jacobians_vs_finite_differences().unwrap());
}

#[test]
fn perturbation_deviations_within_analytic_tolerances() {
    println!("{}", common::perturbations_within_tolerances().unwrap());
}

#[test]
fn exp_closed_form_matches_random_feature_monte_carlo() {
    println!("{}", common::exp_closed_form_vs_monte_carlo().unwrap());
}
