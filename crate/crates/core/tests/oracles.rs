//! Independent oracles for the synthesized ellipsoid, decay rate and timing.

mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rejuv::ellipsoid::{lyapunov_fallback_ellipsoid, synthesize_max_ellipsoid, PolyhedralConstraints, SolverOptions};
use rejuv::pipeline::run_pipeline;
use rejuv::sim::monte_carlo_validate;
use rejuv::timing::decay_rate;

#[test]
fn det_max_matches_brute_force() {
    for (i, (a, xis)) in det_max_instances().into_iter().enumerate() {
        let c = PolyhedralConstraints::new(xis.clone()).unwrap();
        let e = synthesize_max_ellipsoid(&a, &c, &SolverOptions::default()).unwrap();
        let oracle = brute_force_log_det(&a, &xis);
        assert!((e.log_volume - oracle).abs() < 1e-2, "instance {i}: solver {} oracle {oracle}", e.log_volume);
    }
}

#[test]
fn det_max_beats_lyapunov_fallback() {
    for (a, xis) in det_max_instances() {
        let c = PolyhedralConstraints::new(xis).unwrap();
        let e = synthesize_max_ellipsoid(&a, &c, &SolverOptions::default()).unwrap();
        let f = lyapunov_fallback_ellipsoid(&a, &c, &DMatrix::identity(2, 2)).unwrap();
        assert!(e.log_volume >= f.log_volume - 1e-6);
    }
}

/// `γ` is the infimum of `−V̇/V = xᵀWx / xᵀPx`; sample directions and take
/// the smallest ratio.
fn sampled_decay(a: &DMatrix<f64>, p: &DMatrix<f64>, samples: usize, rng: &mut ChaCha8Rng) -> f64 {
    let n = a.nrows();
    let w = -(p * a + a.transpose() * p);
    (0..samples)
        .map(|_| {
            let x = DVector::from_fn(n, |_, _| rng.random::<f64>() * 2.0 - 1.0);
            quad(&w, &x) / quad(p, &x)
        })
        .fold(f64::INFINITY, f64::min)
}

#[test]
fn decay_rate_matches_sampled_infimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (a, xis) in det_max_instances() {
        let c = PolyhedralConstraints::new(xis).unwrap();
        let opts = SolverOptions { decay_margin: 0.05, ..Default::default() };
        let e = synthesize_max_ellipsoid(&a, &c, &opts).unwrap();
        let gamma = decay_rate(&a, &e.p).unwrap();
        let sampled = sampled_decay(&a, &e.p, 200_000, &mut rng);
        assert!(gamma <= sampled + 1e-9, "gamma {gamma} exceeds sampled {sampled}");
        assert!(sampled - gamma < 1e-3 * sampled.abs().max(1.0), "gamma {gamma} sampled {sampled}");
        assert!(gamma >= 2.0 * opts.decay_margin - 1e-6);
    }
}

#[test]
fn quadrotor_decay_rate_is_tight() {
    let cert = run_pipeline(&scenario("quadrotor.json"), None).unwrap();
    let a = rejuv::pipeline::rows_to_matrix(&cert.a_sc);
    let p = cert.p_matrix();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let sampled = sampled_decay(&a, &p, 20_000, &mut rng);
    assert!(cert.gamma <= sampled + 1e-9);
    assert!((cert.t_sc_bound - (-cert.epsilon.ln() / cert.gamma)).abs() < 1e-12);
}

#[test]
fn integrator_validation_stays_below_analytic_peak() {
    let scn = scenario("integrator.json");
    let cert = run_pipeline(&scn, None).unwrap();
    let report = monte_carlo_validate(&scn, &cert, 1000, 99).unwrap();
    assert_eq!(report.violations, 0);
    // |x| grows at most at unit rate for T_UC from sqrt(eps).
    let peak = (cert.epsilon.sqrt() + cert.t_uc).powi(2);
    assert!(report.max_v.unwrap() <= peak + 1e-9, "{:?} > {peak}", report.max_v);
    assert_eq!(report.reach_contained, report.reach_checks);
    assert!(report.sc_within_bound);
}

#[test]
fn quadrotor_validation_is_safe() {
    let scn = scenario("quadrotor.json");
    let cert = run_pipeline(&scn, None).unwrap();
    let report = monte_carlo_validate(&scn, &cert, 200, 1).unwrap();
    assert_eq!(report.violations, 0);
    assert!(report.max_v.unwrap() <= 1.0);
    assert!(report.sc_within_bound);
    assert_eq!(report.reach_contained, report.reach_checks);
}
