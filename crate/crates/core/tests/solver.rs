use approx::assert_abs_diff_eq;
use fbcap::kalman;
use fbcap::model::make_delayed;
use fbcap::sdp::{AffineExpr, MaxDetProblem, SolveStatus};
use fbcap::{matops, ChannelModel, Mat};
use proptest::prelude::*;

fn spd(seed: &[f64], n: usize) -> Mat {
    let b = Mat::from_fn(n, n, |i, j| seed[(i * n + j) % seed.len()]);
    &b * b.transpose() + Mat::identity(n, n)
}

// max log det X  s.t.  X <= A  has optimum X = A.
#[test]
fn upper_bounded_logdet() {
    let a = spd(&[0.3, -1.2, 0.7, 0.1, 2.0, -0.4, 0.9, 0.5, -0.8], 3);
    let mut prob = MaxDetProblem::new();
    let (x_id, x) = prob.add_var("X", 3, 3, true);
    prob.set_objective(x.clone(), 0.0);
    prob.add_lmi(AffineExpr::constant(a.clone()) - x);
    let sol = prob.solve_maxdet(None, 1e-9).unwrap();
    assert_eq!(sol.status, SolveStatus::Optimal);
    assert_abs_diff_eq!(sol.objective_value, 0.5 * matops::logdet_pd(&a).unwrap(), epsilon = 1e-7);
    assert!((sol.assignment.get(x_id) - &a).norm() < 1e-5);
}

// max log det X  s.t.  tr X <= n  has optimum X = I.
#[test]
fn trace_bounded_logdet() {
    let mut prob = MaxDetProblem::new();
    let (x_id, x) = prob.add_var("X", 4, 4, true);
    prob.set_objective(x.clone(), 0.0);
    prob.add_ineq(x.trace().plus(-4.0));
    let sol = prob.solve_maxdet(None, 1e-10).unwrap();
    assert!((sol.assignment.get(x_id) - Mat::identity(4, 4)).norm() < 1e-4);
    assert!(sol.kkt_residual <= 1e-6);
}

#[test]
fn empty_interior_is_reported() {
    let mut prob = MaxDetProblem::new();
    let (_, x) = prob.add_var("x", 1, 1, true);
    prob.set_objective(x.clone(), 0.0);
    // x <= -1 and x > 0 cannot both hold
    prob.add_lmi(AffineExpr::constant(Mat::from_element(1, 1, -1.0)) - x);
    assert!(!prob.check_feasibility().unwrap().feasible);
    assert!(prob.solve_maxdet(None, 1e-8).is_err());
}

fn scalar_model(f: f64, h: f64, w: f64, l: f64, v: f64) -> ChannelModel {
    let s = |x: f64| Mat::from_element(1, 1, x);
    ChannelModel::build(s(f), s(0.0), s(h), s(1.0), s(w), s(l), s(v), None).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // scalar DARE with L = 0: v-weighted quadratic s^2 h^2 + s (v - f^2 v - w h^2) - w v = 0
    #[test]
    fn scalar_riccati_root(f in -1.8f64..1.8, h in 0.2f64..2.0, w in 0.1f64..3.0, v in 0.1f64..3.0) {
        let ric = kalman::solve_dare(&scalar_model(f, h, w, 0.0, v), None, kalman::DEFAULT_TOL, kalman::DEFAULT_MAX_ITER).unwrap();
        let b = v - f * f * v - w * h * h;
        let root = (-b + (b * b + 4.0 * h * h * w * v).sqrt()) / (2.0 * h * h);
        prop_assert!((ric.sigma[(0, 0)] - root).abs() <= 1e-8 * root.max(1.0));
        prop_assert!(ric.closed_loop_radius < 1.0);
    }

    #[test]
    fn delayed_riccati_is_stationary(beta in -1.5f64..1.5, d in 1usize..5) {
        let base = scalar_model(beta, beta, 1.0, 1.0, 1.0);
        let model = make_delayed(&base, d).unwrap();
        let ric = kalman::solve_dare(&model, None, kalman::DEFAULT_TOL, kalman::DEFAULT_MAX_ITER).unwrap();
        prop_assert!(kalman::stationarity_residual(&model, &ric.sigma).unwrap() <= 1e-9);
        prop_assert!(matops::min_eig_sym(&ric.sigma) >= -1e-9);
    }
}
