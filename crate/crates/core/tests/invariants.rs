//! Property tests for the structural guarantees of each stage.

mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rejuv::ellipsoid::{
    lyapunov_fallback_ellipsoid, synthesize_max_ellipsoid, InvariantEllipsoid, PolyhedralConstraints, SolverOptions,
};
use rejuv::expm::matrix_exponential;
use rejuv::fsm::{Mode, RejuvenationConfig, SrInput};
use rejuv::linalg::max_real_eigenvalue;
use rejuv::pipeline::{build_system, run_pipeline, run_pipeline_on};
use rejuv::reach::{bounding_polytope, box_normals, ControlPolytope, NormalChoice, ReachPropagator};
use rejuv::scenario::{AttackKind, AttackSpec};
use rejuv::sim::{simulate_with, SimOptions};
use rejuv::timing::{decay_rate, safety_time_bound};

/// Hurwitz by construction: negative definite symmetric part plus a skew part.
fn stable_matrix(n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    (prop::collection::vec(-1.0..1.0f64, n * n), prop::collection::vec(-2.0..2.0f64, n * n), 0.05..1.0f64).prop_map(
        move |(m, s, shift)| {
            let m = DMatrix::from_vec(n, n, m);
            let s = DMatrix::from_vec(n, n, s);
            -(&m * m.transpose()) - DMatrix::identity(n, n) * shift + (&s - s.transpose()) * 0.5
        },
    )
}

fn region(n: usize) -> impl Strategy<Value = Vec<DVector<f64>>> {
    (prop::collection::vec(0.3..3.0f64, n), prop::collection::vec(-1.0..1.0f64, n)).prop_map(move |(w, extra)| {
        let mut xis: Vec<DVector<f64>> = (0..n)
            .flat_map(|k| {
                let e = DVector::from_fn(n, |i, _| if i == k { 1.0 / w[k] } else { 0.0 });
                [e.clone(), -e]
            })
            .collect();
        let extra = DVector::from_vec(extra);
        if extra.norm() > 0.1 {
            xis.push(extra);
        }
        xis
    })
}

fn instance() -> impl Strategy<Value = (DMatrix<f64>, Vec<DVector<f64>>)> {
    (2usize..=3).prop_flat_map(|n| (stable_matrix(n), region(n)))
}

fn boundary_points(p: &DMatrix<f64>, count: usize, seed: u64) -> Vec<DVector<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = p.nrows();
    (0..count)
        .map(|_| {
            let d = DVector::from_fn(n, |_, _| rng.random::<f64>() * 2.0 - 1.0);
            &d / quad(p, &d).sqrt()
        })
        .collect()
}

fn check_ellipsoid(a: &DMatrix<f64>, xis: &[DVector<f64>], e: &InvariantEllipsoid<f64>) -> Result<(), TestCaseError> {
    let flow = a.transpose() * &e.p + &e.p * a;
    for x in boundary_points(&e.p, 1000, 3) {
        prop_assert!(quad(&flow, &x) <= 1e-8, "outward flow {}", quad(&flow, &x));
        for xi in xis {
            prop_assert!(xi.dot(&x) <= 1.0 + 1e-8);
        }
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn synthesized_ellipsoid_is_invariant_and_safe((a, xis) in instance()) {
        let c = PolyhedralConstraints::new(xis.clone()).unwrap();
        let e = synthesize_max_ellipsoid(&a, &c, &SolverOptions::default()).unwrap();
        check_ellipsoid(&a, &xis, &e)?;
        let f = lyapunov_fallback_ellipsoid(&a, &c, &DMatrix::identity(a.nrows(), a.nrows())).unwrap();
        check_ellipsoid(&a, &xis, &f)?;
        prop_assert!(e.log_volume >= f.log_volume - 1e-6);
    }

    #[test]
    fn trajectories_stay_in_safe_set((a, xis) in instance(), seed in any::<u64>()) {
        let c = PolyhedralConstraints::new(xis).unwrap();
        let e = synthesize_max_ellipsoid(&a, &c, &SolverOptions::default()).unwrap();
        let horizon = 10.0 / max_real_eigenvalue(&a).abs();
        let steps = 200;
        let phi = matrix_exponential(&a, horizon / steps as f64).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for x0 in boundary_points(&e.p, 100, seed) {
            let mut x = x0 * rng.random::<f64>();
            let mut v = quad(&e.p, &x);
            for _ in 0..steps {
                x = &phi * x;
                let next = quad(&e.p, &x);
                prop_assert!(next <= v + 1e-7 && next <= 1.0 + 1e-7);
                v = next;
            }
        }
    }

    #[test]
    fn lyapunov_decay_bound_holds((a, xis) in instance(), seed in any::<u64>()) {
        let c = PolyhedralConstraints::new(xis).unwrap();
        let e = lyapunov_fallback_ellipsoid(&a, &c, &DMatrix::identity(a.nrows(), a.nrows())).unwrap();
        let gamma = decay_rate(&a, &e.p).unwrap();
        let scaled = decay_rate(&a, &(&e.p * 37.5)).unwrap();
        prop_assert!((gamma - scaled).abs() <= 1e-9 * gamma.abs());

        let eps = 0.01;
        let t_sc = safety_time_bound(gamma, eps).unwrap();
        let dt = 1e-3;
        let steps = ((t_sc / dt).floor() as usize).min(50_000);
        let phi = matrix_exponential(&a, dt).unwrap();
        for x0 in boundary_points(&e.p, 10, seed) {
            let v0 = quad(&e.p, &x0);
            let mut x = x0.clone();
            for k in 1..=steps {
                x = &phi * x;
                let bound = (-gamma * k as f64 * dt).exp() * v0 * (1.0 + 1e-6);
                prop_assert!(quad(&e.p, &x) <= bound);
            }
            let end = matrix_exponential(&a, t_sc).unwrap() * &x0;
            prop_assert!(quad(&e.p, &end) <= eps * (1.0 + 1e-6));
        }
    }

    #[test]
    fn reach_offsets_grow_from_identity((a, _xis) in instance(), eps in 0.01..0.5f64, umax in 0.1..2.0f64) {
        let n = a.nrows();
        let b = DMatrix::from_fn(n, 1, |i, _| if i == n - 1 { 1.0 } else { 0.0 });
        let p = DMatrix::identity(n, n);
        let init = bounding_polytope(&p, eps, &box_normals(&p, &a, &b, NormalChoice::Axis).unwrap()).unwrap();
        let u = ControlPolytope::symmetric(&[umax]).unwrap();
        let mut prop = ReachPropagator::new(&a, &b, &u, &init, 0.001).unwrap();
        let first = prop.snapshot().unwrap();
        prop_assert_eq!(&first.box_offsets, &init.offsets);
        let mut prev = first.box_offsets;
        for k in 1..=20 {
            prop.advance_to(k as f64 * 0.01).unwrap();
            let now = prop.snapshot().unwrap().box_offsets;
            prop_assert!(now.iter().zip(&prev).all(|(n, p)| n >= p));
            prev = now;
        }
    }
}

fn integrator_with(eps: f64, t_sr: f64) -> rejuv::scenario::Scenario {
    let mut scn = scenario("integrator.json");
    scn.rejuvenation.epsilon = eps;
    scn.rejuvenation.t_sr = t_sr;
    scn
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn certificate_timing_is_consistent(eps in 0.005..0.2f64, t_sr in 0.05..0.4f64) {
        let t_sr = (t_sr * 100.0).round() / 100.0;
        let scn = integrator_with(eps, t_sr);
        let cert = run_pipeline(&scn, None).unwrap();
        prop_assert!((cert.t_r + cert.t_sr - cert.t_uc).abs() < 1e-12);
        prop_assert_eq!(cert.feasible, cert.t_uc > cert.t_sr);
        prop_assert!((cert.t_uc - (1.0 - eps.sqrt())).abs() <= 0.01 + 1e-9);
    }

    #[test]
    fn simulated_modes_keep_their_durations(
        seed in any::<u64>(),
        kind in prop::sample::select(vec![AttackKind::TurnOff, AttackKind::TakeOver, AttackKind::RandomBox]),
        start in 0.0..2.0f64,
        hold in 1u64..30,
        x0 in -0.1..0.1f64,
    ) {
        let scn = integrator_with(0.01, 0.1);
        let sys = build_system(&scn).unwrap();
        let cert = run_pipeline_on(&scn, &sys, None).unwrap();
        let dt = scn.simulation.dt;
        let target = (kind == AttackKind::TakeOver).then(|| vec![0.9]);
        let opts = SimOptions {
            attacks: vec![AttackSpec { kind, start, end: None, target, hold_steps: hold }],
            x0: DVector::from_vec(vec![x0]),
            seed,
            duration: 4.0,
            record: true,
        };
        let mut modes = Vec::new();
        let out = simulate_with(&scn, &sys, &cert, &opts, &mut |s| modes.push(s.mode)).unwrap();
        prop_assert!(!out.summary.violated());
        prop_assert!(out.summary.max_v <= 1.0);

        let intervals = &out.summary.mode_intervals;
        for iv in &intervals[..intervals.len() - 1] {
            let len = iv.end - iv.start;
            match iv.mode {
                Mode::SR => prop_assert!((len - cert.t_sr).abs() < 1e-9, "SR lasted {len}"),
                Mode::MC => prop_assert!((len - cert.t_r).abs() < 1e-9, "MC lasted {len}"),
                Mode::SC => prop_assert!(len <= cert.t_sc_bound + dt + 1e-9, "SC lasted {len}"),
            }
        }
        for w in out.rows.windows(2) {
            prop_assert!(w[1].t > w[0].t);
            prop_assert!((w[1].t - w[0].t - dt).abs() < 1e-9);
        }
        // Only MC and SR run under the protected limits.
        for (row, mode) in out.rows.iter().zip(&modes) {
            prop_assert_eq!(row.mode, *mode);
            if *mode != Mode::SC {
                prop_assert!(row.u[0].abs() <= 1.0 + 1e-12);
            }
        }
        let again = simulate_with(&scn, &sys, &cert, &opts, &mut |_| {}).unwrap();
        prop_assert_eq!(&again.rows, &out.rows);
    }

    #[test]
    fn protected_limits_must_nest(lo in -2.0..0.0f64, hi in 0.0..2.0f64, sc in 0.5..1.5f64) {
        let cfg = RejuvenationConfig {
            t_sr: 0.1,
            t_r: 0.2,
            epsilon: 0.1,
            mc_limits: ControlPolytope::new(DVector::from_vec(vec![lo]), DVector::from_vec(vec![hi])).unwrap(),
            sc_limits: ControlPolytope::symmetric(&[sc]).unwrap(),
            sr_input: SrInput::Hold,
        };
        prop_assert_eq!(cfg.validate(0.01).is_ok(), lo >= -sc && hi <= sc);
    }
}
