//! Brute-force references for the test suite.
//!
//! The dynamic-programming oracles evaluate the value recursion pointwise,
//! minimising over the disturbance numerically, and fit a general quadratic
//! to the results. None of the filter algebra is reused here.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::model::{
    evaluate_sqc, ForwardDiscreteSystem, ReverseDiscreteSystem, SqcParams, Trajectory,
};

/// `V(x) = |x - center|²_weight + offset`; `residual` is the largest
/// deviation between the fit and the sampled values.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticFit {
    pub center: DVector<f64>,
    pub weight: DMatrix<f64>,
    pub offset: f64,
    pub residual: f64,
}

impl QuadraticFit {
    pub fn value(&self, x: &DVector<f64>) -> f64 {
        let e = x - &self.center;
        (e.transpose() * &self.weight * &e)[(0, 0)] + self.offset
    }
}

/// Where each step samples the exact value function.
#[derive(Debug, Clone, PartialEq)]
pub enum ProbePoints {
    /// A stencil around the previous fit's center, see [`probe_stencil`].
    Stencil,
    Fixed(Vec<DVector<f64>>),
}

/// Five points `c + h{-2,-1,0,1,2}` in one dimension, a 3×3 grid
/// `c + h{-1,0,1}²` in two, with `h = trace(W)^{-1/2}` (1 if the trace is
/// not positive).
pub fn probe_stencil(center: &DVector<f64>, weight: &DMatrix<f64>) -> Result<Vec<DVector<f64>>> {
    let tr = weight.trace();
    let h = if tr > 1e-12 {
        (1.0 / tr.sqrt()).clamp(1e-3, 1e3)
    } else {
        1.0
    };
    match center.len() {
        1 => Ok((-2..=2)
            .map(|i| center.add_scalar(h * f64::from(i)))
            .collect()),
        2 => {
            let mut pts = Vec::with_capacity(9);
            for i in -1..=1 {
                for j in -1..=1 {
                    let off = DVector::from_vec(vec![h * f64::from(i), h * f64::from(j)]);
                    pts.push(center + off);
                }
            }
            Ok(pts)
        }
        n => Err(Error::Unsupported(format!(
            "probe stencils exist for 1- and 2-dimensional states, not {n}"
        ))),
    }
}

/// Least-squares fit of `c0 + b^T x + x^T M x` to the samples.
pub fn fit_quadratic(points: &[DVector<f64>], values: &[f64]) -> Result<QuadraticFit> {
    let n = points
        .first()
        .map(|p| p.len())
        .ok_or_else(|| Error::invalid("no probe points"))?;
    let n_coef = 1 + n + n * (n + 1) / 2;
    if points.len() != values.len() || points.len() < n_coef {
        return Err(Error::invalid(format!(
            "a quadratic in {n} variables needs at least {n_coef} samples, got {}",
            points.len().min(values.len())
        )));
    }
    let mut design = DMatrix::zeros(points.len(), n_coef);
    for (row, p) in points.iter().enumerate() {
        design[(row, 0)] = 1.0;
        for i in 0..n {
            design[(row, 1 + i)] = p[i];
        }
        let mut col = 1 + n;
        for i in 0..n {
            for j in i..n {
                design[(row, col)] = p[i] * p[j];
                col += 1;
            }
        }
    }
    let rhs = DVector::from_column_slice(values);
    let coef = design
        .clone()
        .svd(true, true)
        .solve(&rhs, 1e-13)
        .map_err(|e| Error::Numerical(format!("quadratic fit failed: {e}")))?;

    let c0 = coef[0];
    let b = coef.rows(1, n).into_owned();
    let mut m = DMatrix::zeros(n, n);
    let mut col = 1 + n;
    for i in 0..n {
        for j in i..n {
            if i == j {
                m[(i, i)] = coef[col];
            } else {
                m[(i, j)] = coef[col] / 2.0;
                m[(j, i)] = coef[col] / 2.0;
            }
            col += 1;
        }
    }
    // Minimum-norm stationary point of the fitted form.
    let m_pinv = m
        .clone()
        .pseudo_inverse(1e-12 * m.amax().max(1e-300))
        .map_err(|e| Error::Numerical(e.to_string()))?;
    let center = -0.5 * &m_pinv * &b;
    let offset = c0 + b.dot(&center) + (center.transpose() * &m * &center)[(0, 0)];
    let mut fit = QuadraticFit {
        center,
        weight: m,
        offset,
        residual: 0.0,
    };
    fit.residual = points
        .iter()
        .zip(values)
        .map(|(p, v)| (fit.value(p) - v).abs())
        .fold(0.0, f64::max);
    Ok(fit)
}

/// Minimum over `w` of a function known to be a convex quadratic in `w`.
///
/// Gradient and Hessian come from unit-step central differences, which are
/// exact for quadratics. A scalar disturbance with non-positive curvature
/// falls back to a grid scan of `[-10, 10]` with step `1e-3`.
fn minimize_quadratic<F>(p: usize, f: F) -> Result<f64>
where
    F: Fn(&DVector<f64>) -> Result<f64>,
{
    if p == 0 {
        return f(&DVector::zeros(0));
    }
    let e = |i: usize, s: f64| {
        let mut v = DVector::zeros(p);
        v[i] = s;
        v
    };
    let f0 = f(&DVector::zeros(p))?;
    let mut g = DVector::zeros(p);
    let mut h = DMatrix::zeros(p, p);
    for i in 0..p {
        let fp = f(&e(i, 1.0))?;
        let fm = f(&e(i, -1.0))?;
        g[i] = (fp - fm) / 2.0;
        h[(i, i)] = fp - 2.0 * f0 + fm;
        for j in 0..i {
            let pp = f(&(e(i, 1.0) + e(j, 1.0)))?;
            let pm = f(&(e(i, 1.0) - e(j, 1.0)))?;
            let mp = f(&(e(j, 1.0) - e(i, 1.0)))?;
            let mm = f(&(-e(i, 1.0) - e(j, 1.0)))?;
            h[(i, j)] = (pp - pm - mp + mm) / 4.0;
            h[(j, i)] = h[(i, j)];
        }
    }
    match h.clone().cholesky() {
        Some(chol) => f(&-chol.solve(&g)),
        None if p == 1 => {
            let mut best = f64::INFINITY;
            for i in -10_000..=10_000 {
                best = best.min(f(&DVector::from_element(1, f64::from(i) * 1e-3))?);
            }
            Ok(best)
        }
        None => Err(Error::Numerical(
            "disturbance objective is not convex".into(),
        )),
    }
}

fn stage_probes(probes: &ProbePoints, prev: &QuadraticFit) -> Result<Vec<DVector<f64>>> {
    match probes {
        ProbePoints::Stencil => probe_stencil(&prev.center, &prev.weight),
        ProbePoints::Fixed(pts) => Ok(pts.clone()),
    }
}

fn quad(v: &DVector<f64>, w: &DMatrix<f64>) -> f64 {
    (v.transpose() * w * v)[(0, 0)]
}

/// Fits of `V_0..V_k` for `V_{s+1}(x) = min_w V_s(a(x) - D_s w) + |w|²_{Q_s}
/// + |y_s - c(x)|²_{R_s} - |g(x)|²`, starting from `V_0 = |x - x̄_0|²_N`.
pub fn dp_value_forward(
    sys: &ReverseDiscreteSystem,
    sqc: &SqcParams,
    measurements: &[DVector<f64>],
    k: usize,
    probes: &ProbePoints,
) -> Result<Vec<QuadraticFit>> {
    if !sys.is_affine() {
        return Err(Error::Unsupported(
            "the dynamic-programming oracle only handles affine systems".into(),
        ));
    }
    if measurements.len() < k {
        return Err(Error::invalid("fewer measurements than steps"));
    }
    let mut fits = vec![QuadraticFit {
        center: sqc.x_bar_0.clone(),
        weight: sqc.n.clone(),
        offset: 0.0,
        residual: 0.0,
    }];
    for s in 0..k {
        let prev = &fits[s];
        let pts = stage_probes(probes, prev)?;
        let d = sys.d.at(s);
        let q = sqc.q.at(s);
        let r = sqc.r.at(s);
        let y = &measurements[s];
        let mut values = Vec::with_capacity(pts.len());
        for x in &pts {
            let ax = sys.a.eval(x)?;
            let stage = quad(&(y - sys.c.eval(x)?), r) - sys.g.eval(x)?.norm_squared();
            let best = minimize_quadratic(d.ncols(), |w| {
                Ok(prev.value(&(&ax - d * w)) + quad(w, q))
            })?;
            values.push(best + stage);
        }
        let fit = fit_quadratic(&pts, &values)?;
        fits.push(fit);
    }
    Ok(fits)
}

/// Fits of `Ṽ_t..Ṽ_k` for `Ṽ_j(x) = min_w Ṽ_{j+1}(alpha(x) + Dbar_j w)
/// + |w|²_{Q_j} + |y - xi(x)|²_{R_j} - |kappa(x)|²`, the output terms
/// present only where a measurement is supplied. `measurements[i]` belongs
/// to index `k + i`, and `Ṽ_t = 0` with center `x_bar_t`.
pub fn dp_value_reverse(
    sys: &ForwardDiscreteSystem,
    sqc: &SqcParams,
    measurements: &[Option<DVector<f64>>],
    k: usize,
    t: usize,
    x_bar_t: &DVector<f64>,
    probes: &ProbePoints,
) -> Result<Vec<QuadraticFit>> {
    if !sys.is_affine() {
        return Err(Error::Unsupported(
            "the dynamic-programming oracle only handles affine systems".into(),
        ));
    }
    if k > t || measurements.len() != t - k {
        return Err(Error::invalid("measurement slots must cover [k, t)"));
    }
    let n = x_bar_t.len();
    let mut fits = vec![QuadraticFit {
        center: x_bar_t.clone(),
        weight: DMatrix::zeros(n, n),
        offset: 0.0,
        residual: 0.0,
    }];
    for j in (k..t).rev() {
        let prev = fits.last().expect("non-empty");
        let pts = stage_probes(probes, prev)?;
        let d = sys.d_bar.at(j);
        let q = sqc.q.at(j);
        let r = sqc.r.at(j);
        let mut values = Vec::with_capacity(pts.len());
        for x in &pts {
            let ax = sys.alpha.eval(x)?;
            let stage = match &measurements[j - k] {
                Some(y) => quad(&(y - sys.xi.eval(x)?), r) - sys.kappa.eval(x)?.norm_squared(),
                None => 0.0,
            };
            let best = minimize_quadratic(d.ncols(), |w| {
                Ok(prev.value(&(&ax + d * w)) + quad(w, q))
            })?;
            values.push(best + stage);
        }
        let fit = fit_quadratic(&pts, &values)?;
        fits.push(fit);
    }
    Ok(fits)
}

/// Information-form recursion for `x_s = A x_{s+1}`, `y_s = C x_{s+1} + v_s`
/// with weight `R` and prior `(x̄_0, N)`: `Y_{s+1} = A^T Y_s A + C^T R C`,
/// `i_{s+1} = A^T i_s + C^T R y_s`. Returns `(Y_s, i_s)` for `s = 0..=len`.
pub fn information_filter_reference(
    a: &DMatrix<f64>,
    c: &DMatrix<f64>,
    r: &DMatrix<f64>,
    n: &DMatrix<f64>,
    x_bar_0: &DVector<f64>,
    measurements: &[DVector<f64>],
) -> Vec<(DMatrix<f64>, DVector<f64>)> {
    let ctr = c.transpose() * r;
    let ctrc = &ctr * c;
    let mut out = Vec::with_capacity(measurements.len() + 1);
    let mut y_mat = n.clone();
    let mut info = n * x_bar_0;
    out.push((y_mat.clone(), info.clone()));
    for y in measurements {
        y_mat = a.transpose() * &y_mat * a + &ctrc;
        info = a.transpose() * &info + &ctr * y;
        out.push((y_mat.clone(), info.clone()));
    }
    out
}

/// A noise realisation scaled so the constraint value equals `ρ d`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmissibleNoise {
    pub x0: DVector<f64>,
    pub process_noise: Vec<DVector<f64>>,
    pub meas_noise: Vec<DVector<f64>>,
    pub trajectory: Trajectory,
    pub sqc_value: f64,
    pub scale: f64,
    pub attempts: usize,
}

const MAX_ATTEMPTS: usize = 20;
const MAX_BISECTIONS: usize = 200;

/// Draws standard normal `(x_0 - x̄_0, w, v)` from a ChaCha8 stream seeded
/// with `seed` and rescales them jointly by bisection on the scale.
pub fn admissible_noise(
    sqc: &SqcParams,
    sys: &ForwardDiscreteSystem,
    horizon: usize,
    target_fraction: f64,
    seed: u64,
) -> Result<AdmissibleNoise> {
    if !(target_fraction > 0.0 && target_fraction < 1.0) {
        return Err(Error::invalid("target fraction must lie in (0, 1)"));
    }
    let n = sys.state_dim();
    if sqc.state_dim() != n {
        return Err(Error::invalid("constraint weights and system differ in state dimension"));
    }
    let p = sys.noise_dim();
    let l = sys.measurement_dim();
    let target = target_fraction * sqc.d;
    let tol = 1e-9 * sqc.d;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |len: usize| -> DVector<f64> {
        DVector::from_iterator(len, (0..len).map(|_| StandardNormal.sample(&mut rng)))
    };

    for attempt in 1..=MAX_ATTEMPTS {
        let e0 = draw(n);
        let w: Vec<_> = (0..horizon).map(|_| draw(p)).collect();
        let v: Vec<_> = (0..horizon).map(|_| draw(l)).collect();

        let realise = |lambda: f64| -> Result<(f64, AdmissibleNoise)> {
            let x0 = &sqc.x_bar_0 + lambda * &e0;
            let ws: Vec<_> = w.iter().map(|x| lambda * x).collect();
            let vs: Vec<_> = v.iter().map(|x| lambda * x).collect();
            let traj = sys.simulate(&x0, &ws, &vs)?;
            let z = sys.uncertainty_outputs(&traj)?;
            let value = evaluate_sqc(sqc, &traj, &z, horizon)?;
            Ok((
                value,
                AdmissibleNoise {
                    x0,
                    process_noise: ws,
                    meas_noise: vs,
                    trajectory: traj,
                    sqc_value: value,
                    scale: lambda,
                    attempts: attempt,
                },
            ))
        };

        let (v_lo, at_zero) = realise(0.0)?;
        if (v_lo - target).abs() <= tol {
            return Ok(at_zero);
        }
        if v_lo > target {
            continue;
        }
        let mut lo = 0.0;
        let mut hi = 1.0;
        let mut bracketed = false;
        for _ in 0..64 {
            let (val, found) = realise(hi)?;
            if !val.is_finite() {
                break;
            }
            if (val - target).abs() <= tol {
                return Ok(found);
            }
            if val > target {
                bracketed = true;
                break;
            }
            lo = hi;
            hi *= 2.0;
        }
        if !bracketed {
            continue;
        }
        for _ in 0..MAX_BISECTIONS {
            let mid = 0.5 * (lo + hi);
            let (val, found) = realise(mid)?;
            if (val - target).abs() <= tol {
                return Ok(found);
            }
            if val < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
    }
    Err(Error::Numerical(format!(
        "no admissible noise found in {MAX_ATTEMPTS} draws"
    )))
}
