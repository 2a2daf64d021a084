mod common;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use common::affine_instance;
use sqc_smoother::forward_filter::{self, forward_step, ForwardFilterState};
use sqc_smoother::model::{
    ForwardDiscreteSystem, NonlinearMap, ReverseDiscreteSystem, SqcParams, TimeSeries,
};
use sqc_smoother::oracle::{self, ProbePoints};
use sqc_smoother::reverse_filter::{self, reverse_step, ReverseFilterConfig, ReverseFilterState};

fn m1(x: f64) -> DMatrix<f64> {
    DMatrix::from_element(1, 1, x)
}

fn v1(x: f64) -> DVector<f64> {
    DVector::from_element(1, x)
}

#[test]
fn scalar_forward_fixture_matches_the_fitted_oracle() {
    let sys = ReverseDiscreteSystem::new(
        NonlinearMap::linear(m1(0.9)),
        NonlinearMap::zero(1, 1),
        NonlinearMap::identity(1),
        TimeSeries::Constant(m1(1.0)),
    )
    .unwrap();
    let sqc = SqcParams::constant(m1(1.0), m1(1.0), m1(1.0), 1.0, v1(0.0)).unwrap();
    let s1 = forward_step(&ForwardFilterState::initial(&sqc), &v1(1.0), &sys, &m1(1.0), &m1(1.0))
        .unwrap();
    let fit = &oracle::dp_value_forward(&sys, &sqc, &[v1(1.0)], 1, &ProbePoints::Stencil)
        .unwrap()[1];
    assert!((s1.pi[(0, 0)] - fit.weight[(0, 0)]).abs() < 1e-6);
    assert!((s1.x_hat[0] - fit.center[0]).abs() < 1e-6);
    assert!((s1.phi - fit.offset).abs() < 1e-6);
}

#[test]
fn scalar_reverse_fixture_matches_the_fitted_oracle() {
    let sys = ForwardDiscreteSystem::new(
        NonlinearMap::identity(1),
        NonlinearMap::zero(1, 1),
        NonlinearMap::identity(1),
        TimeSeries::Constant(m1(1.0)),
    )
    .unwrap();
    let sqc = SqcParams::constant(m1(1.0), m1(1.0), m1(1.0), 1.0, v1(0.0)).unwrap();
    let cfg = ReverseFilterConfig::default();
    let ys = vec![Some(v1(-0.5)), Some(v1(2.0))];
    let states = reverse_filter::run_reverse(&sys, &sqc, &ys, 3, 5, &v1(0.0), &cfg).unwrap();
    let fits =
        oracle::dp_value_reverse(&sys, &sqc, &ys, 3, 5, &v1(0.0), &ProbePoints::Stencil).unwrap();
    for (s, f) in states.iter().zip(&fits).skip(1) {
        assert!((s.pi_bar[(0, 0)] - f.weight[(0, 0)]).abs() < 1e-6);
        assert!((s.x_tilde[0] - f.center[0]).abs() < 1e-6);
        assert!((s.psi - f.offset).abs() < 1e-6);
    }
}

#[test]
fn forward_value_identity_on_fixed_probes() {
    let inst = affine_instance(31, 2, 1, 8, 0.1);
    let probes: Vec<_> = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [-1.0, 0.5], [0.5, -1.5], [2.0, 2.0], [-2.0, 1.0]]
        .iter()
        .map(|p| DVector::from_row_slice(p))
        .collect();
    let states = forward_filter::run_forward(&inst.rsys, &inst.sqc, &inst.ys, 8).unwrap();
    let fits = oracle::dp_value_forward(
        &inst.rsys,
        &inst.sqc,
        &inst.ys,
        8,
        &ProbePoints::Fixed(probes.clone()),
    )
    .unwrap();
    for (s, f) in states.iter().zip(&fits) {
        for x in &probes {
            let exact = f.value(x);
            assert!((s.value(x) - exact).abs() <= 1e-8 * exact.abs().max(1.0));
        }
    }
}

#[test]
fn singular_reverse_weight_still_matches_oracle_values() {
    // One measurement of a 2-D state leaves the first reverse weight rank one.
    let inst = affine_instance(41, 2, 1, 12, 0.0);
    let slots: Vec<_> = inst.ys[4..].iter().cloned().map(Some).collect();
    let cfg = ReverseFilterConfig::default();
    let states =
        reverse_filter::run_reverse(&inst.fsys, &inst.sqc, &slots, 4, 12, &inst.x_bar_t, &cfg)
            .unwrap();
    assert!(states[1].diagnostics.center_pseudo_inverse);
    let fits = oracle::dp_value_reverse(
        &inst.fsys,
        &inst.sqc,
        &slots,
        4,
        12,
        &inst.x_bar_t,
        &ProbePoints::Stencil,
    )
    .unwrap();
    for (s, f) in states.iter().zip(&fits) {
        for x in oracle::probe_stencil(&f.center, &f.weight).unwrap() {
            assert!((s.value(&x) - f.value(&x)).abs() < 1e-8);
        }
    }
}

#[test]
fn measurement_only_reverse_center_is_stationary() {
    // With a zero next weight the new center minimises the linearised
    // |y - xi(x)|²_R - |kappa(x)|² about x̃_{k+1}.
    let sys = ForwardDiscreteSystem::new(
        NonlinearMap::new(
            1,
            1,
            |x| DVector::from_element(1, x[0] + 0.1 * x[0].sin()),
            |x| DMatrix::from_element(1, 1, 1.0 + 0.1 * x[0].cos()),
        ),
        NonlinearMap::new(
            1,
            1,
            |x| DVector::from_element(1, 0.2 * x[0] * x[0]),
            |x| DMatrix::from_element(1, 1, 0.4 * x[0]),
        ),
        NonlinearMap::new(
            1,
            1,
            |x| DVector::from_element(1, x[0] + 0.3 * x[0].powi(3)),
            |x| DMatrix::from_element(1, 1, 1.0 + 0.9 * x[0] * x[0]),
        ),
        TimeSeries::Constant(m1(1.0)),
    )
    .unwrap();
    let p = 0.6;
    let next = ReverseFilterState::terminal(v1(p), 7);
    let (y, r) = (1.3, 2.0);
    let s = reverse_step(&next, Some(&v1(y)), &sys, &m1(1.0), &m1(r), &Default::default()).unwrap();
    let (h, hj) = (p + 0.3 * p.powi(3), 1.0 + 0.9 * p * p);
    let (g, gj) = (0.2 * p * p, 0.4 * p);
    let x = s.x_tilde[0];
    let grad = -2.0 * r * hj * (y - h - hj * (x - p)) - 2.0 * gj * (g + gj * (x - p));
    assert!(grad.abs() < 1e-12, "gradient {grad}");
}

proptest! {
    #[test]
    fn reverse_weights_stay_symmetric(seed in 0u64..500) {
        let inst = affine_instance(seed, 2, 2, 10, 0.3);
        let slots: Vec<_> = inst.ys.iter().cloned().map(Some).collect();
        let states = reverse_filter::run_reverse(
            &inst.fsys, &inst.sqc, &slots, 0, 10, &inst.x_bar_t, &ReverseFilterConfig::default(),
        ).unwrap();
        for s in &states {
            prop_assert!(sqc_smoother::linalg::asymmetry(&s.pi_bar) <= 1e-12);
        }
    }

    #[test]
    fn forward_weights_stay_symmetric(seed in 0u64..500) {
        let inst = affine_instance(seed, 2, 1, 10, 0.3);
        let states = forward_filter::run_forward(&inst.rsys, &inst.sqc, &inst.ys, 10).unwrap();
        for s in &states {
            prop_assert!(sqc_smoother::linalg::asymmetry(&s.pi) <= 1e-12);
        }
    }
}
