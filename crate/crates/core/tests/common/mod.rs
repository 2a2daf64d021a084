#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sqc_smoother::model::{
    ForwardDiscreteSystem, NonlinearMap, ReverseDiscreteSystem, SqcParams, TimeSeries,
};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, lo: f64, hi: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(lo..hi))
}

pub fn uniform_vector(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(lo..hi))
}

pub fn spd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let b = uniform_matrix(rng, n, n, -1.0, 1.0);
    &b * b.transpose() + DMatrix::identity(n, n) * 0.5
}

/// Transition near the identity with spectral radius close to one.
pub fn transition(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    DMatrix::identity(n, n) + uniform_matrix(rng, n, n, -0.2, 0.2)
}

fn z_gain(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DMatrix<f64> {
    if scale == 0.0 {
        DMatrix::zeros(1, n)
    } else {
        uniform_matrix(rng, 1, n, -scale, scale)
    }
}

/// A random affine problem: both system forms, constant weights and
/// random measurements over `t` stages.
pub struct AffineInstance {
    pub rsys: ReverseDiscreteSystem,
    pub fsys: ForwardDiscreteSystem,
    pub sqc: SqcParams,
    pub ys: Vec<DVector<f64>>,
    pub x_bar_t: DVector<f64>,
}

pub fn affine_instance(seed: u64, n: usize, l: usize, t: usize, z_scale: f64) -> AffineInstance {
    let mut r = rng(seed);
    let p = n;
    let rsys = ReverseDiscreteSystem::new(
        NonlinearMap::affine(transition(&mut r, n), uniform_vector(&mut r, n, -0.2, 0.2)),
        NonlinearMap::linear(z_gain(&mut r, n, z_scale)),
        NonlinearMap::affine(
            uniform_matrix(&mut r, l, n, -0.5, 0.5) + DMatrix::identity(l, n),
            uniform_vector(&mut r, l, -0.2, 0.2),
        ),
        TimeSeries::Constant(uniform_matrix(&mut r, n, p, -1.0, 1.0)),
    )
    .unwrap();
    let fsys = ForwardDiscreteSystem::new(
        NonlinearMap::affine(transition(&mut r, n), uniform_vector(&mut r, n, -0.2, 0.2)),
        NonlinearMap::linear(z_gain(&mut r, n, z_scale)),
        NonlinearMap::affine(
            uniform_matrix(&mut r, l, n, -0.5, 0.5) + DMatrix::identity(l, n),
            uniform_vector(&mut r, l, -0.2, 0.2),
        ),
        TimeSeries::Constant(uniform_matrix(&mut r, n, p, -1.0, 1.0)),
    )
    .unwrap();
    let sqc = SqcParams::constant(
        spd(&mut r, n),
        spd(&mut r, p),
        spd(&mut r, l),
        1.0,
        uniform_vector(&mut r, n, -1.0, 1.0),
    )
    .unwrap();
    let ys = (0..t).map(|_| uniform_vector(&mut r, l, -1.0, 1.0)).collect();
    let x_bar_t = uniform_vector(&mut r, n, -1.0, 1.0);
    AffineInstance {
        rsys,
        fsys,
        sqc,
        ys,
        x_bar_t,
    }
}

pub fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-12)
}

pub fn rel_err_vec(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-12)
}
