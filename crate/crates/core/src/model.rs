//! System models, quadratic-constraint weights and the cost evaluators.
//!
//! Stage convention used throughout the crate: stage `s` (for `s` in
//! `0..t`) carries the process disturbance `w_s` that moves the state from
//! `x_s` to `x_{s+1}`, the measurement `y_s` of `x_{s+1}` with noise `v_s`,
//! and the uncertainty output `z_s` evaluated at `x_{s+1}`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;

type EvalFn = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
type JacobianFn = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;

/// Matrix and offset of an affine map `x -> M x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineParts {
    pub matrix: DMatrix<f64>,
    pub offset: DVector<f64>,
}

#[derive(Clone)]
enum JacobianKind {
    Analytic(JacobianFn),
    FiniteDifference,
}

/// A smooth vector map together with its Jacobian.
///
/// The Jacobian is either supplied analytically or computed by central
/// differences of `eval`. Affine maps additionally remember their matrix
/// and offset so that brute-force references can recognise them.
#[derive(Clone)]
pub struct NonlinearMap {
    dim_in: usize,
    dim_out: usize,
    eval: EvalFn,
    jacobian: JacobianKind,
    affine: Option<AffineParts>,
}

impl fmt::Debug for NonlinearMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NonlinearMap")
            .field("dim_in", &self.dim_in)
            .field("dim_out", &self.dim_out)
            .field(
                "jacobian",
                &match self.jacobian {
                    JacobianKind::Analytic(_) => "analytic",
                    JacobianKind::FiniteDifference => "finite-difference",
                },
            )
            .field("affine", &self.affine.is_some())
            .finish()
    }
}

/// Central-difference step for coordinate value `xi`.
pub fn fd_step(xi: f64) -> f64 {
    f64::max(1e-6, 1e-6 * xi.abs())
}

impl NonlinearMap {
    /// Map with an analytic Jacobian.
    pub fn new<F, J>(dim_in: usize, dim_out: usize, eval: F, jacobian: J) -> Self
    where
        F: Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        J: Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    {
        NonlinearMap {
            dim_in,
            dim_out,
            eval: Arc::new(eval),
            jacobian: JacobianKind::Analytic(Arc::new(jacobian)),
            affine: None,
        }
    }

    /// Map whose Jacobian is computed by central differences.
    pub fn finite_difference<F>(dim_in: usize, dim_out: usize, eval: F) -> Self
    where
        F: Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    {
        NonlinearMap {
            dim_in,
            dim_out,
            eval: Arc::new(eval),
            jacobian: JacobianKind::FiniteDifference,
            affine: None,
        }
    }

    /// `x -> matrix * x + offset`.
    pub fn affine(matrix: DMatrix<f64>, offset: DVector<f64>) -> Self {
        assert_eq!(matrix.nrows(), offset.len(), "affine offset length");
        let (dim_out, dim_in) = matrix.shape();
        let (m1, b1, m2) = (matrix.clone(), offset.clone(), matrix.clone());
        NonlinearMap {
            dim_in,
            dim_out,
            eval: Arc::new(move |x| &m1 * x + &b1),
            jacobian: JacobianKind::Analytic(Arc::new(move |_| m2.clone())),
            affine: Some(AffineParts { matrix, offset }),
        }
    }

    pub fn linear(matrix: DMatrix<f64>) -> Self {
        let rows = matrix.nrows();
        Self::affine(matrix, DVector::zeros(rows))
    }

    pub fn identity(n: usize) -> Self {
        Self::linear(DMatrix::identity(n, n))
    }

    pub fn zero(dim_in: usize, dim_out: usize) -> Self {
        Self::linear(DMatrix::zeros(dim_out, dim_in))
    }

    pub fn dim_in(&self) -> usize {
        self.dim_in
    }

    pub fn dim_out(&self) -> usize {
        self.dim_out
    }

    pub fn affine_parts(&self) -> Option<&AffineParts> {
        self.affine.as_ref()
    }

    pub fn is_affine(&self) -> bool {
        self.affine.is_some()
    }

    pub fn has_analytic_jacobian(&self) -> bool {
        matches!(self.jacobian, JacobianKind::Analytic(_))
    }

    fn check_input(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.dim_in {
            return Err(Error::invalid(format!(
                "map expects input of length {}, got {}",
                self.dim_in,
                x.len()
            )));
        }
        Ok(())
    }

    pub fn eval(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_input(x)?;
        let y = (self.eval)(x);
        if y.len() != self.dim_out {
            return Err(Error::invalid(format!(
                "map declared output length {} but produced {}",
                self.dim_out,
                y.len()
            )));
        }
        Ok(y)
    }

    pub fn jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_input(x)?;
        let jac = match &self.jacobian {
            JacobianKind::Analytic(j) => j(x),
            JacobianKind::FiniteDifference => self.central_difference(x)?,
        };
        if jac.shape() != (self.dim_out, self.dim_in) {
            return Err(Error::invalid(format!(
                "jacobian has shape {:?}, expected ({}, {})",
                jac.shape(),
                self.dim_out,
                self.dim_in
            )));
        }
        Ok(jac)
    }

    /// Central-difference Jacobian of `eval`, regardless of the backend.
    pub fn central_difference(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_input(x)?;
        let mut jac = DMatrix::zeros(self.dim_out, self.dim_in);
        for i in 0..self.dim_in {
            let h = fd_step(x[i]);
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            let diff = (self.eval(&xp)? - self.eval(&xm)?) / (xp[i] - xm[i]);
            jac.set_column(i, &diff);
        }
        Ok(jac)
    }

    /// Returns `(a(p), da/dx(p))`.
    pub fn linearize(&self, point: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        Ok((self.eval(point)?, self.jacobian(point)?))
    }

    /// `x -> s * f(x)`; affine structure is preserved.
    pub fn scaled(&self, s: f64) -> Self {
        if let Some(aff) = &self.affine {
            return Self::affine(&aff.matrix * s, &aff.offset * s);
        }
        let eval = self.eval.clone();
        let jacobian = match &self.jacobian {
            JacobianKind::Analytic(j) => {
                let j = j.clone();
                JacobianKind::Analytic(Arc::new(move |x| j(x) * s))
            }
            JacobianKind::FiniteDifference => JacobianKind::FiniteDifference,
        };
        NonlinearMap {
            dim_in: self.dim_in,
            dim_out: self.dim_out,
            eval: Arc::new(move |x| eval(x) * s),
            jacobian,
            affine: None,
        }
    }

    /// `x -> x + s * f(x)` for a square map; Jacobian `I + s * df`.
    pub fn euler_increment(&self, s: f64) -> Result<Self> {
        if self.dim_in != self.dim_out {
            return Err(Error::invalid("euler increment needs a square vector field"));
        }
        let n = self.dim_in;
        if let Some(aff) = &self.affine {
            return Ok(Self::affine(
                DMatrix::identity(n, n) + &aff.matrix * s,
                &aff.offset * s,
            ));
        }
        let eval = self.eval.clone();
        let jacobian = match &self.jacobian {
            JacobianKind::Analytic(j) => {
                let j = j.clone();
                JacobianKind::Analytic(Arc::new(move |x| DMatrix::identity(n, n) + j(x) * s))
            }
            JacobianKind::FiniteDifference => JacobianKind::FiniteDifference,
        };
        Ok(NonlinearMap {
            dim_in: n,
            dim_out: n,
            eval: Arc::new(move |x| x + eval(x) * s),
            jacobian,
            affine: None,
        })
    }
}

/// Free function form of [`NonlinearMap::linearize`].
pub fn linearize(map: &NonlinearMap, point: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    map.linearize(point)
}

/// A quantity that is either constant or given per stage.
///
/// Per-step sequences hold their final value for indices past their end.
#[derive(Debug, Clone, PartialEq)]
pub enum TimeSeries<T> {
    Constant(T),
    PerStep(Vec<T>),
}

impl<T> TimeSeries<T> {
    pub fn at(&self, s: usize) -> &T {
        match self {
            TimeSeries::Constant(v) => v,
            TimeSeries::PerStep(vs) => &vs[s.min(vs.len() - 1)],
        }
    }

    pub fn values(&self) -> Box<dyn Iterator<Item = &T> + '_> {
        match self {
            TimeSeries::Constant(v) => Box::new(std::iter::once(v)),
            TimeSeries::PerStep(vs) => Box::new(vs.iter()),
        }
    }

    fn is_empty(&self) -> bool {
        matches!(self, TimeSeries::PerStep(vs) if vs.is_empty())
    }
}

impl TimeSeries<DMatrix<f64>> {
    /// Series whose element `s` is this series' element `s + offset`.
    pub fn shifted(&self, offset: isize) -> Self {
        match self {
            TimeSeries::Constant(v) => TimeSeries::Constant(v.clone()),
            TimeSeries::PerStep(vs) => {
                let n = vs.len() as isize;
                TimeSeries::PerStep(
                    (0..(n - offset).max(1))
                        .map(|s| vs[(s + offset).clamp(0, n - 1) as usize].clone())
                        .collect(),
                )
            }
        }
    }
}

fn check_rows(series: &TimeSeries<DMatrix<f64>>, rows: usize, name: &str) -> Result<usize> {
    if series.is_empty() {
        return Err(Error::invalid(format!("{name} sequence is empty")));
    }
    let mut cols = None;
    for m in series.values() {
        if m.nrows() != rows {
            return Err(Error::invalid(format!(
                "{name} must have {rows} rows, found {}",
                m.nrows()
            )));
        }
        match cols {
            None => cols = Some(m.ncols()),
            Some(c) if c != m.ncols() => {
                return Err(Error::invalid(format!("{name} changes column count over time")))
            }
            _ => {}
        }
    }
    Ok(cols.unwrap_or(0))
}

fn check_map(map: &NonlinearMap, n: usize, name: &str) -> Result<()> {
    if map.dim_in() != n {
        return Err(Error::invalid(format!(
            "{name} takes {} inputs, state dimension is {n}",
            map.dim_in()
        )));
    }
    Ok(())
}

/// Reverse-time discrete system `x_s = a(x_{s+1}) - D_s w_s`,
/// `z_s = g(x_{s+1})`, `y_s = c(x_{s+1}) + v_s`. Drives the forward filter.
#[derive(Debug, Clone)]
pub struct ReverseDiscreteSystem {
    pub a: NonlinearMap,
    pub g: NonlinearMap,
    pub c: NonlinearMap,
    pub d: TimeSeries<DMatrix<f64>>,
}

impl ReverseDiscreteSystem {
    pub fn new(
        a: NonlinearMap,
        g: NonlinearMap,
        c: NonlinearMap,
        d: TimeSeries<DMatrix<f64>>,
    ) -> Result<Self> {
        let n = a.dim_in();
        if a.dim_out() != n {
            return Err(Error::invalid("a must map the state space to itself"));
        }
        check_map(&g, n, "g")?;
        check_map(&c, n, "c")?;
        check_rows(&d, n, "D")?;
        Ok(ReverseDiscreteSystem { a, g, c, d })
    }

    pub fn state_dim(&self) -> usize {
        self.a.dim_in()
    }

    pub fn noise_dim(&self) -> usize {
        self.d.at(0).ncols()
    }

    pub fn measurement_dim(&self) -> usize {
        self.c.dim_out()
    }

    pub fn uncertainty_dim(&self) -> usize {
        self.g.dim_out()
    }

    pub fn is_affine(&self) -> bool {
        self.a.is_affine() && self.g.is_affine() && self.c.is_affine()
    }
}

/// Forward-time discrete system `x_{s+1} = alpha(x_s) + Dbar_s w_s`,
/// `z_s = kappa(x_{s+1})`, `y_s = xi(x_{s+1}) + v_s`. Drives the reverse
/// filter and the truth simulation.
#[derive(Debug, Clone)]
pub struct ForwardDiscreteSystem {
    pub alpha: NonlinearMap,
    pub kappa: NonlinearMap,
    pub xi: NonlinearMap,
    pub d_bar: TimeSeries<DMatrix<f64>>,
}

impl ForwardDiscreteSystem {
    pub fn new(
        alpha: NonlinearMap,
        kappa: NonlinearMap,
        xi: NonlinearMap,
        d_bar: TimeSeries<DMatrix<f64>>,
    ) -> Result<Self> {
        let n = alpha.dim_in();
        if alpha.dim_out() != n {
            return Err(Error::invalid("alpha must map the state space to itself"));
        }
        check_map(&kappa, n, "kappa")?;
        check_map(&xi, n, "xi")?;
        check_rows(&d_bar, n, "Dbar")?;
        Ok(ForwardDiscreteSystem {
            alpha,
            kappa,
            xi,
            d_bar,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.alpha.dim_in()
    }

    pub fn noise_dim(&self) -> usize {
        self.d_bar.at(0).ncols()
    }

    pub fn measurement_dim(&self) -> usize {
        self.xi.dim_out()
    }

    pub fn uncertainty_dim(&self) -> usize {
        self.kappa.dim_out()
    }

    pub fn is_affine(&self) -> bool {
        self.alpha.is_affine() && self.kappa.is_affine() && self.xi.is_affine()
    }

    /// Uncertainty outputs `z_s = kappa(x_{s+1})` along a trajectory.
    pub fn uncertainty_outputs(&self, traj: &Trajectory) -> Result<Vec<DVector<f64>>> {
        traj.states[1..].iter().map(|x| self.kappa.eval(x)).collect()
    }

    /// Propagates `x_{s+1} = alpha(x_s) + Dbar_s w_s` and forms
    /// `y_s = xi(x_{s+1}) + v_s`.
    pub fn simulate(
        &self,
        x0: &DVector<f64>,
        process_noise: &[DVector<f64>],
        meas_noise: &[DVector<f64>],
    ) -> Result<Trajectory> {
        if process_noise.len() != meas_noise.len() {
            return Err(Error::invalid("noise sequences differ in length"));
        }
        if x0.len() != self.state_dim() {
            return Err(Error::invalid("initial state does not match the state dimension"));
        }
        let mut states = Vec::with_capacity(process_noise.len() + 1);
        let mut measurements = Vec::with_capacity(process_noise.len());
        states.push(x0.clone());
        for (s, (w, v)) in process_noise.iter().zip(meas_noise).enumerate() {
            let d = self.d_bar.at(s);
            if w.len() != d.ncols() || v.len() != self.measurement_dim() {
                return Err(Error::invalid(format!("stage {s}: noise has the wrong dimension")));
            }
            let next = self.alpha.eval(&states[s])? + d * w;
            measurements.push(self.xi.eval(&next)? + v);
            states.push(next);
        }
        Ok(Trajectory {
            states,
            process_noise: process_noise.to_vec(),
            meas_noise: meas_noise.to_vec(),
            measurements,
        })
    }
}

fn check_spd(m: &DMatrix<f64>, name: &str) -> Result<()> {
    if !m.is_square() {
        return Err(Error::validation(name, "must be square"));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::validation(name, "must be finite"));
    }
    if !linalg::is_symmetric(m, 1e-12) {
        return Err(Error::validation(name, "must be symmetric"));
    }
    if linalg::min_eigenvalue(m) <= 0.0 {
        return Err(Error::validation(name, "must be positive definite"));
    }
    Ok(())
}

/// Weights of the sum quadratic constraint
/// `|x_0 - x̄_0|²_N + Σ_s (|w_s|²_{Q_s} + |v_s|²_{R_s} - |z_s|²) < d`.
#[derive(Debug, Clone, PartialEq)]
pub struct SqcParams {
    pub n: DMatrix<f64>,
    pub q: TimeSeries<DMatrix<f64>>,
    pub r: TimeSeries<DMatrix<f64>>,
    pub d: f64,
    pub x_bar_0: DVector<f64>,
}

impl SqcParams {
    pub fn new(
        n: DMatrix<f64>,
        q: TimeSeries<DMatrix<f64>>,
        r: TimeSeries<DMatrix<f64>>,
        d: f64,
        x_bar_0: DVector<f64>,
    ) -> Result<Self> {
        let p = SqcParams {
            n,
            q,
            r,
            d,
            x_bar_0,
        };
        p.validate()?;
        Ok(p)
    }

    /// Constant-weight constructor.
    pub fn constant(
        n: DMatrix<f64>,
        q: DMatrix<f64>,
        r: DMatrix<f64>,
        d: f64,
        x_bar_0: DVector<f64>,
    ) -> Result<Self> {
        Self::new(n, TimeSeries::Constant(q), TimeSeries::Constant(r), d, x_bar_0)
    }

    pub fn validate(&self) -> Result<()> {
        check_spd(&self.n, "N")?;
        if self.x_bar_0.len() != self.n.nrows() {
            return Err(Error::validation("x_bar_0", "length must match N"));
        }
        if self.q.is_empty() {
            return Err(Error::validation("Q", "sequence is empty"));
        }
        if self.r.is_empty() {
            return Err(Error::validation("R", "sequence is empty"));
        }
        for q in self.q.values() {
            check_spd(q, "Q")?;
        }
        for r in self.r.values() {
            check_spd(r, "R")?;
        }
        if !(self.d > 0.0 && self.d.is_finite()) {
            return Err(Error::validation("d", "must be a positive finite number"));
        }
        Ok(())
    }

    pub fn state_dim(&self) -> usize {
        self.n.nrows()
    }
}

/// States `x_0..x_t` and stage quantities `w_s, v_s, y_s` for `s < t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<DVector<f64>>,
    pub process_noise: Vec<DVector<f64>>,
    pub meas_noise: Vec<DVector<f64>>,
    pub measurements: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.process_noise.len()
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.horizon();
        if self.states.len() != t + 1 {
            return Err(Error::invalid(format!(
                "trajectory of horizon {t} needs {} states, has {}",
                t + 1,
                self.states.len()
            )));
        }
        if self.meas_noise.len() != t || self.measurements.len() != t {
            return Err(Error::invalid(
                "measurement and measurement-noise sequences must have one entry per stage",
            ));
        }
        Ok(())
    }
}

fn stage_cost(
    params: &SqcParams,
    traj: &Trajectory,
    z_seq: &[DVector<f64>],
    s: usize,
) -> Result<f64> {
    let w = &traj.process_noise[s];
    let v = &traj.meas_noise[s];
    let q = params.q.at(s);
    let r = params.r.at(s);
    if w.len() != q.nrows() || v.len() != r.nrows() {
        return Err(Error::invalid(format!(
            "stage {s}: noise dimensions do not match the weights"
        )));
    }
    Ok(linalg::quad_form(w, q) + linalg::quad_form(v, r) - z_seq[s].norm_squared())
}

fn initial_cost(params: &SqcParams, traj: &Trajectory) -> Result<f64> {
    let x0 = traj
        .states
        .first()
        .ok_or_else(|| Error::invalid("trajectory has no states"))?;
    if x0.len() != params.x_bar_0.len() {
        return Err(Error::invalid("initial state dimension does not match x_bar_0"));
    }
    Ok(linalg::quad_form(&(x0 - &params.x_bar_0), &params.n))
}

fn stage_sum(
    params: &SqcParams,
    traj: &Trajectory,
    z_seq: &[DVector<f64>],
    from: usize,
    to: usize,
) -> Result<f64> {
    if from > to {
        return Err(Error::invalid(format!(
            "stage range start {from} exceeds end {to}"
        )));
    }
    if traj.process_noise.len() < to || traj.meas_noise.len() < to || z_seq.len() < to {
        return Err(Error::invalid(format!(
            "sequences must cover stages up to {}",
            to as isize - 1
        )));
    }
    (from..to).map(|s| stage_cost(params, traj, z_seq, s)).sum()
}

/// Full constraint value over stages `0..t`.
pub fn evaluate_sqc(
    params: &SqcParams,
    traj: &Trajectory,
    z_seq: &[DVector<f64>],
    horizon: usize,
) -> Result<f64> {
    Ok(initial_cost(params, traj)? + stage_sum(params, traj, z_seq, 0, horizon)?)
}

/// Initial term plus stages `0..k`, i.e. the part owned by the forward filter.
pub fn evaluate_s1(
    params: &SqcParams,
    traj: &Trajectory,
    z_seq: &[DVector<f64>],
    k: usize,
) -> Result<f64> {
    Ok(initial_cost(params, traj)? + stage_sum(params, traj, z_seq, 0, k)?)
}

/// Stages `k..t` with no initial-state term, the part owned by the reverse
/// filter.
pub fn evaluate_s2(
    params: &SqcParams,
    traj: &Trajectory,
    z_seq: &[DVector<f64>],
    k: usize,
    t: usize,
) -> Result<f64> {
    if k > t {
        return Err(Error::invalid(format!("split index {k} exceeds horizon {t}")));
    }
    stage_sum(params, traj, z_seq, k, t)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v1(x: f64) -> DVector<f64> {
        DVector::from_element(1, x)
    }

    fn m1(x: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, x)
    }

    fn scalar_params(n: f64, q: f64, r: f64) -> SqcParams {
        SqcParams::constant(m1(n), m1(q), m1(r), 10.0, v1(0.0)).unwrap()
    }

    fn scalar_traj(x0: f64, w: &[f64], v: &[f64]) -> Trajectory {
        let t = w.len();
        Trajectory {
            states: (0..=t).map(|i| v1(if i == 0 { x0 } else { 0.0 })).collect(),
            process_noise: w.iter().map(|&x| v1(x)).collect(),
            meas_noise: v.iter().map(|&x| v1(x)).collect(),
            measurements: vec![v1(0.0); t],
        }
    }

    #[test]
    fn linearize_identity() {
        let (val, jac) = linearize(&NonlinearMap::identity(1), &v1(3.0)).unwrap();
        assert_eq!(val[0], 3.0);
        assert_eq!(jac[(0, 0)], 1.0);
    }

    #[test]
    fn linearize_square_by_finite_differences() {
        let map = NonlinearMap::finite_difference(1, 1, |x| x.map(|v| v * v));
        let (val, jac) = map.linearize(&v1(3.0)).unwrap();
        assert_eq!(val[0], 9.0);
        assert!((jac[(0, 0)] - 6.0).abs() < 1e-6);
    }

    #[test]
    fn linearize_sine_at_zero() {
        let map = NonlinearMap::new(1, 1, |x| x.map(f64::sin), |x| m1(x[0].cos()));
        let (val, jac) = map.linearize(&v1(0.0)).unwrap();
        assert_eq!(val[0], 0.0);
        assert_eq!(jac[(0, 0)], 1.0);
    }

    #[test]
    fn linearize_affine_is_exact_elsewhere() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, -0.5, 0.3]);
        let b = DVector::from_vec(vec![0.1, -1.0]);
        let map = NonlinearMap::affine(m, b);
        let p = DVector::from_vec(vec![0.4, 0.9]);
        let x = DVector::from_vec(vec![-3.0, 2.5]);
        let (val, jac) = map.linearize(&p).unwrap();
        let approx = val + jac * (&x - &p);
        assert!((approx - map.eval(&x).unwrap()).amax() < 1e-14);
    }

    #[test]
    fn linearize_rejects_wrong_dimension() {
        let err = NonlinearMap::identity(2).linearize(&v1(1.0)).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
    }

    #[test]
    fn sqc_zero_case() {
        let p = scalar_params(1.0, 1.0, 1.0);
        let traj = scalar_traj(0.0, &[0.0; 4], &[0.0; 4]);
        assert_eq!(evaluate_sqc(&p, &traj, &vec![v1(0.0); 4], 4).unwrap(), 0.0);
    }

    #[test]
    fn sqc_single_stage() {
        let p = scalar_params(1.0, 2.0, 1.0);
        let traj = scalar_traj(0.0, &[1.0], &[0.0]);
        let val = evaluate_sqc(&p, &traj, &[v1(0.0)], 1).unwrap();
        assert_eq!(val, 2.0);
    }

    #[test]
    fn sqc_initial_term_only() {
        let p = scalar_params(2.0, 1.0, 1.0);
        let traj = scalar_traj(3.0, &[], &[]);
        assert_eq!(evaluate_sqc(&p, &traj, &[], 0).unwrap(), 18.0);
    }

    #[test]
    fn sqc_rejects_short_sequences() {
        let p = scalar_params(1.0, 1.0, 1.0);
        let traj = scalar_traj(0.0, &[1.0], &[1.0]);
        assert!(evaluate_sqc(&p, &traj, &[v1(0.0)], 2).is_err());
    }

    #[test]
    fn s1_at_zero_is_initial_term() {
        let p = scalar_params(2.0, 1.0, 1.0);
        let traj = scalar_traj(1.0, &[5.0, 5.0], &[5.0, 5.0]);
        let z = vec![v1(0.0); 2];
        assert_eq!(evaluate_s1(&p, &traj, &z, 0).unwrap(), 2.0);
    }

    #[test]
    fn s2_degenerate_interval_and_errors() {
        let p = scalar_params(1.0, 1.0, 1.0);
        let traj = scalar_traj(7.0, &[1.0, 2.0], &[0.0, 0.0]);
        let z = vec![v1(0.0); 2];
        assert_eq!(evaluate_s2(&p, &traj, &z, 2, 2).unwrap(), 0.0);
        assert_eq!(evaluate_s2(&p, &traj, &z, 1, 2).unwrap(), 4.0);
        // no initial term even though x_0 is far from the nominal value
        assert_eq!(evaluate_s2(&p, &traj, &z, 0, 2).unwrap(), 5.0);
        assert!(evaluate_s2(&p, &traj, &z, 2, 1).is_err());
    }

    #[test]
    fn time_series_holds_last_value() {
        let ts = TimeSeries::PerStep(vec![m1(1.0), m1(2.0)]);
        assert_eq!(ts.at(0)[(0, 0)], 1.0);
        assert_eq!(ts.at(5)[(0, 0)], 2.0);
        assert_eq!(ts.shifted(-1).at(1)[(0, 0)], 1.0);
    }

    #[test]
    fn sqc_params_validation() {
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        let err = SqcParams::constant(bad, m1(1.0), m1(1.0), 1.0, DVector::zeros(2)).unwrap_err();
        assert!(err.to_string().contains("`N`"));
        let err = SqcParams::constant(m1(1.0), m1(-1.0), m1(1.0), 1.0, v1(0.0)).unwrap_err();
        assert!(err.to_string().contains("`Q`"));
        let err = SqcParams::constant(m1(1.0), m1(1.0), m1(1.0), 0.0, v1(0.0)).unwrap_err();
        assert!(err.to_string().contains("`d`"));
    }

    #[test]
    fn system_dimension_checks() {
        let err = ReverseDiscreteSystem::new(
            NonlinearMap::identity(2),
            NonlinearMap::zero(2, 1),
            NonlinearMap::zero(1, 1),
            TimeSeries::Constant(DMatrix::zeros(2, 1)),
        )
        .unwrap_err();
        assert!(err.to_string().contains("c takes"));
        let err = ForwardDiscreteSystem::new(
            NonlinearMap::identity(2),
            NonlinearMap::zero(2, 1),
            NonlinearMap::zero(2, 1),
            TimeSeries::Constant(DMatrix::zeros(3, 1)),
        )
        .unwrap_err();
        assert!(err.to_string().contains("Dbar"));
    }
}
