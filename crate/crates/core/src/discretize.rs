//! Euler discretization of continuous-time uncertain models.
//!
//! The integral constraint is converted to a Riemann sum with every term
//! weighted by the step: `Q_s = Δ Q(sΔ)`, `R_s = Δ R(sΔ)` and the discrete
//! uncertainty output is `√Δ g_c` so that `|z_s|² = Δ |g_c|²`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{
    ForwardDiscreteSystem, NonlinearMap, ReverseDiscreteSystem, SqcParams, TimeSeries,
};

/// A weight matrix that is constant or a function of continuous time.
#[derive(Clone)]
pub enum WeightFn {
    Constant(DMatrix<f64>),
    TimeVarying(Arc<dyn Fn(f64) -> DMatrix<f64> + Send + Sync>),
}

impl fmt::Debug for WeightFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WeightFn::Constant(m) => f.debug_tuple("Constant").field(m).finish(),
            WeightFn::TimeVarying(_) => f.write_str("TimeVarying(..)"),
        }
    }
}

impl WeightFn {
    pub fn time_varying<F>(f: F) -> Self
    where
        F: Fn(f64) -> DMatrix<f64> + Send + Sync + 'static,
    {
        WeightFn::TimeVarying(Arc::new(f))
    }

    pub fn at(&self, time: f64) -> DMatrix<f64> {
        match self {
            WeightFn::Constant(m) => m.clone(),
            WeightFn::TimeVarying(f) => f(time),
        }
    }

    fn sample(&self, step: f64, horizon: usize) -> TimeSeries<DMatrix<f64>> {
        match self {
            WeightFn::Constant(m) => TimeSeries::Constant(m * step),
            WeightFn::TimeVarying(f) => {
                TimeSeries::PerStep((0..horizon).map(|s| f(s as f64 * step) * step).collect())
            }
        }
    }
}

/// Weights of the continuous-time integral quadratic constraint.
#[derive(Debug, Clone)]
pub struct IqcWeights {
    pub n: DMatrix<f64>,
    pub q: WeightFn,
    pub r: WeightFn,
    pub d: f64,
    pub x_bar_0: DVector<f64>,
}

/// `ẋ = a_c(x) + D_c w`, `z = g_c(x)`, `y = c_c(x) + v`.
///
/// Vector fields are autonomous; time dependence of the constraint enters
/// only through the weights.
#[derive(Debug, Clone)]
pub struct ContinuousSystem {
    pub a_c: NonlinearMap,
    pub g_c: NonlinearMap,
    pub c_c: NonlinearMap,
    pub d_c: DMatrix<f64>,
    pub weights: IqcWeights,
}

impl ContinuousSystem {
    pub fn new(
        a_c: NonlinearMap,
        g_c: NonlinearMap,
        c_c: NonlinearMap,
        d_c: DMatrix<f64>,
        weights: IqcWeights,
    ) -> Result<Self> {
        let n = a_c.dim_in();
        if a_c.dim_out() != n {
            return Err(Error::invalid("a_c must be a vector field on the state space"));
        }
        if g_c.dim_in() != n || c_c.dim_in() != n {
            return Err(Error::invalid("g_c and c_c must take the state as input"));
        }
        if d_c.nrows() != n {
            return Err(Error::invalid(format!("D_c must have {n} rows")));
        }
        if weights.n.nrows() != n || weights.x_bar_0.len() != n {
            return Err(Error::invalid("N and x_bar_0 must match the state dimension"));
        }
        Ok(ContinuousSystem {
            a_c,
            g_c,
            c_c,
            d_c,
            weights,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.a_c.dim_in()
    }
}

fn check_step(step: f64) -> Result<()> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::invalid(format!(
            "discretization step must be positive, got {step}"
        )));
    }
    Ok(())
}

/// `x_{s+1} = x_s + Δ a_c(x_s) + Δ D_c w_s`.
pub fn euler_forward(sys: &ContinuousSystem, step: f64) -> Result<ForwardDiscreteSystem> {
    check_step(step)?;
    ForwardDiscreteSystem::new(
        sys.a_c.euler_increment(step)?,
        sys.g_c.scaled(step.sqrt()),
        sys.c_c.clone(),
        TimeSeries::Constant(&sys.d_c * step),
    )
}

/// `x_s = x_{s+1} - Δ a_c(x_{s+1}) - Δ D_c w_s` (explicit Euler run backwards).
pub fn euler_reverse(sys: &ContinuousSystem, step: f64) -> Result<ReverseDiscreteSystem> {
    check_step(step)?;
    ReverseDiscreteSystem::new(
        sys.a_c.euler_increment(-step)?,
        sys.g_c.scaled(step.sqrt()),
        sys.c_c.clone(),
        TimeSeries::Constant(&sys.d_c * step),
    )
}

/// Exact reverse-time counterpart of an affine forward system:
/// `x_s = F⁻¹(x_{s+1} - b) - F⁻¹ D̄_s w_s`, sharing output maps.
pub fn exact_reverse(sys: &ForwardDiscreteSystem) -> Result<ReverseDiscreteSystem> {
    let aff = sys
        .alpha
        .affine_parts()
        .ok_or_else(|| Error::Unsupported("exact reversal needs an affine transition".into()))?;
    let f_inv = aff
        .matrix
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Numerical("affine transition matrix is singular".into()))?;
    let offset = -(&f_inv * &aff.offset);
    let d = match &sys.d_bar {
        TimeSeries::Constant(m) => TimeSeries::Constant(&f_inv * m),
        TimeSeries::PerStep(ms) => TimeSeries::PerStep(ms.iter().map(|m| &f_inv * m).collect()),
    };
    ReverseDiscreteSystem::new(
        NonlinearMap::affine(f_inv, offset),
        sys.kappa.clone(),
        sys.xi.clone(),
        d,
    )
}

/// Riemann-sum weights for a horizon of `horizon` stages.
pub fn discretize_weights(weights: &IqcWeights, step: f64, horizon: usize) -> Result<SqcParams> {
    check_step(step)?;
    if horizon == 0 {
        return Err(Error::invalid("horizon must be at least one stage"));
    }
    SqcParams::new(
        weights.n.clone(),
        weights.q.sample(step, horizon),
        weights.r.sample(step, horizon),
        weights.d,
        weights.x_bar_0.clone(),
    )
}
