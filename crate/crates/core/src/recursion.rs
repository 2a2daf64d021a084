//! Quadratic value-function update shared by both filters.
//!
//! Both recursions minimise, over the stage disturbance, a right-hand side
//! of the form
//!
//! ```text
//! |f(x) - target|²_W + |y - h(x)|²_R - |g(x)|² + offset
//! ```
//!
//! where `W` is the disturbance-eliminated weight (Σ forward, Ω reverse).
//! After linearising `f`, `h`, `g` about a point `p` the right-hand side is
//! an exact quadratic in `x`, and its weight, minimiser and minimum value
//! give the next value-function parameters.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{self, Inverse};
use crate::model::NonlinearMap;

/// Measurement and uncertainty-output terms of one stage, linearised.
#[derive(Debug, Clone)]
pub(crate) struct OutputTerms {
    pub y: DVector<f64>,
    pub r: DMatrix<f64>,
    pub h_val: DVector<f64>,
    pub h_jac: DMatrix<f64>,
    pub g_val: DVector<f64>,
    pub g_jac: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct StageTerms {
    pub point: DVector<f64>,
    pub f_val: DVector<f64>,
    pub f_jac: DMatrix<f64>,
    pub outputs: Option<OutputTerms>,
}

impl StageTerms {
    pub fn linearize(
        point: &DVector<f64>,
        dynamics: &NonlinearMap,
        outputs: Option<(&DVector<f64>, &DMatrix<f64>, &NonlinearMap, &NonlinearMap)>,
    ) -> Result<Self> {
        let (f_val, f_jac) = dynamics.linearize(point)?;
        let outputs = match outputs {
            None => None,
            Some((y, r, h, g)) => {
                if y.len() != h.dim_out() || r.shape() != (y.len(), y.len()) {
                    return Err(Error::invalid(format!(
                        "measurement of length {} does not match output map ({}) and weight {:?}",
                        y.len(),
                        h.dim_out(),
                        r.shape()
                    )));
                }
                let (h_val, h_jac) = h.linearize(point)?;
                let (g_val, g_jac) = g.linearize(point)?;
                Some(OutputTerms {
                    y: y.clone(),
                    r: r.clone(),
                    h_val,
                    h_jac,
                    g_val,
                    g_jac,
                })
            }
        };
        Ok(StageTerms {
            point: point.clone(),
            f_val,
            f_jac,
            outputs,
        })
    }

    /// `H^T R H - G^T G`, or zero when the stage has no outputs.
    pub fn output_curvature(&self) -> DMatrix<f64> {
        let n = self.point.len();
        match &self.outputs {
            None => DMatrix::zeros(n, n),
            Some(o) => o.h_jac.transpose() * &o.r * &o.h_jac - o.g_jac.transpose() * &o.g_jac,
        }
    }

    /// `F^T W F + H^T R H - G^T G`, symmetrised.
    pub fn curvature(&self, weight: &DMatrix<f64>) -> DMatrix<f64> {
        linalg::symmetrize(
            &(self.f_jac.transpose() * weight * &self.f_jac + self.output_curvature()),
        )
    }

    /// Negative half-gradient of the right-hand side at the linearisation
    /// point: `F^T W (target - f̂) + H^T R (y - ĥ) + G^T ĝ`.
    pub fn descent(&self, weight: &DMatrix<f64>, target: &DVector<f64>) -> DVector<f64> {
        let mut out = self.f_jac.transpose() * weight * (target - &self.f_val);
        if let Some(o) = &self.outputs {
            out += o.h_jac.transpose() * &o.r * (&o.y - &o.h_val);
            out += o.g_jac.transpose() * &o.g_val;
        }
        out
    }

    /// The linearised right-hand side evaluated at `x`.
    pub fn rhs(
        &self,
        weight: &DMatrix<f64>,
        target: &DVector<f64>,
        offset: f64,
        x: &DVector<f64>,
    ) -> f64 {
        let e = x - &self.point;
        let resid = &self.f_val + &self.f_jac * &e - target;
        let mut val = linalg::quad_form(&resid, weight) + offset;
        if let Some(o) = &self.outputs {
            let innov = &o.y - &o.h_val - &o.h_jac * &e;
            let z = &o.g_val + &o.g_jac * &e;
            val += linalg::quad_form(&innov, &o.r) - z.norm_squared();
        }
        val
    }
}

/// Outcome of one value-function update.
#[derive(Debug, Clone)]
pub(crate) struct Update {
    pub weight: DMatrix<f64>,
    pub center: DVector<f64>,
    pub offset: f64,
    pub center_truncated: bool,
}

fn check_shapes(p: &DMatrix<f64>, d: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<()> {
    let n = p.nrows();
    if !p.is_square() || d.nrows() != n || q.shape() != (d.ncols(), d.ncols()) {
        return Err(Error::invalid(format!(
            "shape mismatch: weight {:?}, D {:?}, Q {:?}",
            p.shape(),
            d.shape(),
            q.shape()
        )));
    }
    Ok(())
}

/// Weight `P - P D (D^T P D + Q)^# D^T P`; the flag reports a
/// pseudo-inverse fallback.
pub(crate) fn eliminate_disturbance(
    p: &DMatrix<f64>,
    d: &DMatrix<f64>,
    q: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, bool)> {
    check_shapes(p, d, q)?;
    let pd = p * d;
    let inner = d.transpose() * &pd + q;
    let Inverse { matrix, truncated } = linalg::spd_inverse_or_pinv(&inner);
    let w = p - &pd * matrix * pd.transpose();
    Ok((linalg::symmetrize(&w), truncated))
}

/// Minimiser `(D^T P D + Q)^{-1} D^T P r` of `|r - D w|²_P + |w|²_Q`.
pub(crate) fn best_disturbance(
    p: &DMatrix<f64>,
    d: &DMatrix<f64>,
    q: &DMatrix<f64>,
    residual: &DVector<f64>,
) -> Result<DVector<f64>> {
    if residual.len() != p.nrows() {
        return Err(Error::invalid("residual length does not match the weight"));
    }
    check_shapes(p, d, q)?;
    let pd = p * d;
    let inner = d.transpose() * &pd + q;
    let inv = linalg::spd_inverse_or_pinv(&inner);
    Ok(inv.matrix * pd.transpose() * residual)
}

/// Completes the square of the linearised right-hand side.
///
/// `weight_override` replaces the curvature (used by the printed-literal
/// variant) and `center_inverse` replaces the matrix inverted to locate the
/// new center.
pub(crate) fn complete_square(
    terms: &StageTerms,
    weight: &DMatrix<f64>,
    target: &DVector<f64>,
    offset: f64,
    weight_override: Option<DMatrix<f64>>,
    center_inverse: Option<&DMatrix<f64>>,
) -> Update {
    let curvature = weight_override.unwrap_or_else(|| terms.curvature(weight));
    let descent = terms.descent(weight, target);
    let inv = linalg::pinv(center_inverse.unwrap_or(&curvature));
    let center = &terms.point + &inv.matrix * descent;
    let value = terms.rhs(weight, target, offset, &center);
    Update {
        weight: curvature,
        center,
        offset: value,
        center_truncated: inv.truncated,
    }
}
