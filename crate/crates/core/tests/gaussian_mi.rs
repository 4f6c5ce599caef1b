use codial_core::gaussian_mi::*;

fn run(rho: f64, seed: u64, steps: usize) -> GaussianMiReport {
    run_gaussian_mi(&GaussianMiConfig { rho, seed, steps, ..Default::default() }).unwrap()
}

#[test]
fn analytic_mi_values() {
    assert_eq!(gaussian_mi(0.0, 1), 0.0);
    assert!((gaussian_mi(0.5, 1) - 0.143841).abs() < 1e-6);
    assert!((gaussian_mi(0.9, 1) - 0.830366).abs() < 1e-6);
    assert!((gaussian_mi(0.9, 3) - 3.0 * 0.830366).abs() < 1e-5);
}

#[test]
fn independent_gaussians_estimate_near_zero() {
    let r = run(0.0, 11, 2000);
    assert!(r.estimate.abs() <= 0.05, "{r:?}");
}

#[test]
fn strongly_correlated_gaussians() {
    let r = run(0.9, 12, 2000);
    assert!(r.estimate >= 0.5 && r.estimate <= 0.9304, "{r:?}");
    // the JS objective sits above its zero-critic floor once trained
    assert!(r.js_objective > -2.0 * 2f64.ln());
}

#[test]
fn estimate_never_exceeds_truth_plus_slack() {
    for seed in 0..20 {
        for rho in [0.0, 0.5, 0.9] {
            let r = run(rho, 100 + seed, 150);
            assert!(r.estimate <= r.true_mi + 0.1, "{r:?}");
        }
    }
}

#[test]
fn invalid_rho_rejected() {
    assert!(run_gaussian_mi(&GaussianMiConfig { rho: 1.0, ..Default::default() }).is_err());
}
