mod common;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use sqc_smoother::discretize::{self, ContinuousSystem, IqcWeights, WeightFn};
use sqc_smoother::model::{
    evaluate_s1, evaluate_s2, evaluate_sqc, NonlinearMap, SqcParams, TimeSeries, Trajectory,
};

fn v1(x: f64) -> DVector<f64> {
    DVector::from_element(1, x)
}

fn m1(x: f64) -> DMatrix<f64> {
    DMatrix::from_element(1, 1, x)
}

fn scalar_trajectory(x: &[f64], w: &[f64], v: &[f64]) -> Trajectory {
    Trajectory {
        states: x.iter().map(|x| v1(*x)).collect(),
        process_noise: w.iter().map(|x| v1(*x)).collect(),
        meas_noise: v.iter().map(|x| v1(*x)).collect(),
        measurements: v.iter().map(|_| v1(0.0)).collect(),
    }
}

fn stage_inputs() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, usize)> {
    (1usize..12).prop_flat_map(|t| {
        (
            prop::collection::vec(-3.0..3.0f64, t + 1),
            prop::collection::vec(-3.0..3.0f64, t),
            prop::collection::vec(-3.0..3.0f64, t),
            prop::collection::vec(-1.0..1.0f64, t),
            0..=t,
        )
    })
}

proptest! {
    #[test]
    fn split_costs_add_up((x, w, v, z, k) in stage_inputs(), n in 0.1..4.0f64, q in 0.1..4.0f64, r in 0.1..4.0f64) {
        let t = w.len();
        let sqc = SqcParams::constant(m1(n), m1(q), m1(r), 1.0, v1(0.2)).unwrap();
        let traj = scalar_trajectory(&x, &w, &v);
        let zs: Vec<_> = z.iter().map(|z| v1(*z)).collect();
        let full = evaluate_sqc(&sqc, &traj, &zs, t).unwrap();
        let s1 = evaluate_s1(&sqc, &traj, &zs, k).unwrap();
        let s2 = evaluate_s2(&sqc, &traj, &zs, k, t).unwrap();
        prop_assert!((s1 + s2 - full).abs() <= 1e-12 * (1.0 + full.abs()));

        // Independent summation of the terms owned by the forward part.
        let mut manual = n * (x[0] - 0.2).powi(2);
        for s in 0..k {
            manual += q * w[s] * w[s] + r * v[s] * v[s] - z[s] * z[s];
        }
        prop_assert!((s1 - manual).abs() <= 1e-12 * (1.0 + manual.abs()));
    }

    #[test]
    fn costs_nonnegative_without_uncertainty_output((x, w, v, _z, k) in stage_inputs()) {
        let t = w.len();
        let sqc = SqcParams::constant(m1(1.5), m1(0.7), m1(2.0), 1.0, v1(-0.4)).unwrap();
        let traj = scalar_trajectory(&x, &w, &v);
        let zs = vec![v1(0.0); t];
        prop_assert!(evaluate_sqc(&sqc, &traj, &zs, t).unwrap() >= 0.0);
        prop_assert!(evaluate_s1(&sqc, &traj, &zs, k).unwrap() >= 0.0);
        prop_assert!(evaluate_s2(&sqc, &traj, &zs, k, t).unwrap() >= 0.0);
    }

    #[test]
    fn s2_ignores_the_initial_state((x, w, v, z, k) in stage_inputs(), shift in -5.0..5.0f64) {
        let t = w.len();
        let sqc = SqcParams::constant(m1(1.0), m1(1.0), m1(1.0), 1.0, v1(0.0)).unwrap();
        let zs: Vec<_> = z.iter().map(|z| v1(*z)).collect();
        let a = scalar_trajectory(&x, &w, &v);
        let mut x2 = x.clone();
        x2[0] += shift;
        let b = scalar_trajectory(&x2, &w, &v);
        prop_assert_eq!(
            evaluate_s2(&sqc, &a, &zs, k, t).unwrap(),
            evaluate_s2(&sqc, &b, &zs, k, t).unwrap()
        );
    }

    #[test]
    fn analytic_and_difference_jacobians_agree(x0 in -3.0..3.0f64, x1 in -3.0..3.0f64) {
        let map = NonlinearMap::new(
            2,
            2,
            |x| DVector::from_vec(vec![x[0].sin() * x[1], x[0] * x[0] - x[1].cos()]),
            |x| DMatrix::from_row_slice(2, 2, &[
                x[0].cos() * x[1], x[0].sin(),
                2.0 * x[0], x[1].sin(),
            ]),
        );
        let x = DVector::from_vec(vec![x0, x1]);
        let ja = map.jacobian(&x).unwrap();
        let jf = map.central_difference(&x).unwrap();
        prop_assert!((&ja - &jf).norm() <= 1e-5 * ja.norm().max(1.0));
    }
}

/// Solution of `ẋ = a x + sin τ` from `x0`.
fn exact_state(a: f64, x0: f64, tau: f64) -> f64 {
    let k = 1.0 + a * a;
    (x0 + 1.0 / k) * (a * tau).exp() - (a * tau.sin() + tau.cos()) / k
}

/// Composite Simpson rule on `[0, horizon]`.
fn simpson(f: impl Fn(f64) -> f64, horizon: f64, intervals: usize) -> f64 {
    let h = horizon / intervals as f64;
    let mut acc = f(0.0) + f(horizon);
    for i in 1..intervals {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(i as f64 * h);
    }
    acc * h / 3.0
}

#[test]
fn discrete_constraint_converges_to_the_integral_at_first_order() {
    let (a, x0, g, q, horizon) = (-0.7, 0.4, 0.5, 2.0, 2.0);
    let integral = simpson(
        |tau| q * tau.sin().powi(2) - g * g * exact_state(a, x0, tau).powi(2),
        horizon,
        20_000,
    );
    let mut errors = Vec::new();
    for delta in [0.1, 0.05, 0.025] {
        let t = (horizon / delta).round() as usize;
        let cont = ContinuousSystem::new(
            NonlinearMap::linear(m1(a)),
            NonlinearMap::linear(m1(g)),
            NonlinearMap::identity(1),
            m1(1.0),
            IqcWeights {
                n: m1(1.0),
                q: WeightFn::Constant(m1(q)),
                r: WeightFn::Constant(m1(1.0)),
                d: 1.0,
                x_bar_0: v1(x0),
            },
        )
        .unwrap();
        let fsys = discretize::euler_forward(&cont, delta).unwrap();
        let sqc = discretize::discretize_weights(&cont.weights, delta, t).unwrap();
        let traj = Trajectory {
            states: (0..=t).map(|s| v1(exact_state(a, x0, s as f64 * delta))).collect(),
            process_noise: (0..t).map(|s| v1((s as f64 * delta).sin())).collect(),
            meas_noise: vec![v1(0.0); t],
            measurements: vec![v1(0.0); t],
        };
        let z = fsys.uncertainty_outputs(&traj).unwrap();
        let value = evaluate_sqc(&sqc, &traj, &z, t).unwrap();
        errors.push((value - integral).abs());
    }
    for pair in errors.windows(2) {
        let order = (pair[0] / pair[1]).log2();
        assert!((0.8..1.25).contains(&order), "errors {errors:?}, order {order}");
    }
}

#[test]
fn per_step_series_hold_their_last_value() {
    let s = TimeSeries::PerStep(vec![m1(1.0), m1(2.0)]);
    assert_eq!(s.at(5), &m1(2.0));
    assert_eq!(s.shifted(-1).at(0), &m1(1.0));
    assert_eq!(s.shifted(-1).at(1), &m1(1.0));
    assert_eq!(s.shifted(-1).at(2), &m1(2.0));
}
