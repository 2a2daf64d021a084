//! Forward-time filter over `[0, k]`.
//!
//! Propagates the quadratic approximation `V_k(x) ≈ |x - x̂_k|²_{Π_k} + φ_k`
//! of the dynamic-programming value function for the reverse-time system.
//! Each step eliminates the stage disturbance in closed form (the Σ weight),
//! linearises the maps about `x̂_k` and completes the square.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{ReverseDiscreteSystem, SqcParams};
use crate::recursion::{self, StageTerms};

/// Numerical flags recorded by each filter step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepDiagnostics {
    /// `D^T Π D + Q` was not positive definite; a pseudo-inverse was used.
    pub disturbance_pseudo_inverse: bool,
    /// The new information matrix was singular when locating the center.
    pub center_pseudo_inverse: bool,
    /// Smallest eigenvalue of the new information matrix.
    pub min_eigenvalue: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardFilterState {
    pub x_hat: DVector<f64>,
    pub pi: DMatrix<f64>,
    pub phi: f64,
    pub step_index: usize,
    pub diagnostics: StepDiagnostics,
}

impl ForwardFilterState {
    /// Boundary condition `(x̄_0, N, 0)`.
    pub fn initial(sqc: &SqcParams) -> Self {
        ForwardFilterState {
            x_hat: sqc.x_bar_0.clone(),
            pi: sqc.n.clone(),
            phi: 0.0,
            step_index: 0,
            diagnostics: StepDiagnostics {
                min_eigenvalue: linalg::min_eigenvalue(&sqc.n),
                ..StepDiagnostics::default()
            },
        }
    }

    /// `|x - x̂|²_Π + φ`.
    pub fn value(&self, x: &DVector<f64>) -> f64 {
        linalg::quad_form(&(x - &self.x_hat), &self.pi) + self.phi
    }
}

/// `Σ = Π - Π D (D^T Π D + Q)^# D^T Π`.
pub fn sigma(pi: &DMatrix<f64>, d: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(recursion::eliminate_disturbance(pi, d, q)?.0)
}

/// Disturbance minimising `|a(x) - D w - x̂|²_Π + |w|²_Q`.
pub fn optimal_disturbance(
    pi: &DMatrix<f64>,
    d: &DMatrix<f64>,
    q: &DMatrix<f64>,
    a_val: &DVector<f64>,
    x_hat: &DVector<f64>,
) -> Result<DVector<f64>> {
    if a_val.len() != x_hat.len() {
        return Err(Error::invalid("a(x) and x̂ differ in length"));
    }
    recursion::best_disturbance(pi, d, q, &(a_val - x_hat))
}

/// One step of the forward recursion, consuming stage measurement `y`.
pub fn forward_step(
    state: &ForwardFilterState,
    y: &DVector<f64>,
    sys: &ReverseDiscreteSystem,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<ForwardFilterState> {
    let n = sys.state_dim();
    if state.x_hat.len() != n || state.pi.shape() != (n, n) {
        return Err(Error::invalid("filter state does not match the system dimension"));
    }
    let d = sys.d.at(state.step_index);
    let (weight, dist_pinv) = recursion::eliminate_disturbance(&state.pi, d, q)?;
    let terms = StageTerms::linearize(&state.x_hat, &sys.a, Some((y, r, &sys.c, &sys.g)))?;

    let update = if cfg!(feature = "literal-update") {
        let o = terms.outputs.as_ref().expect("forward stages always carry outputs");
        if o.h_jac.nrows() != n {
            return Err(Error::invalid(
                "the literal update needs as many measurements as states",
            ));
        }
        let literal = linalg::symmetrize(
            &(terms.f_jac.transpose() * &weight * &terms.f_jac
                + o.h_jac.transpose() * &weight * &o.h_jac
                - o.g_jac.transpose() * &o.g_jac),
        );
        recursion::complete_square(
            &terms,
            &weight,
            &state.x_hat,
            state.phi,
            Some(literal),
            Some(&state.pi),
        )
    } else {
        recursion::complete_square(&terms, &weight, &state.x_hat, state.phi, None, None)
    };

    Ok(ForwardFilterState {
        diagnostics: StepDiagnostics {
            disturbance_pseudo_inverse: dist_pinv,
            center_pseudo_inverse: update.center_truncated,
            min_eigenvalue: linalg::min_eigenvalue(&update.weight),
        },
        x_hat: update.center,
        pi: update.weight,
        phi: update.offset,
        step_index: state.step_index + 1,
    })
}

/// Runs `k` steps from the initial condition; returns states `0..=k`.
pub fn run_forward(
    sys: &ReverseDiscreteSystem,
    sqc: &SqcParams,
    measurements: &[DVector<f64>],
    k: usize,
) -> Result<Vec<ForwardFilterState>> {
    if measurements.len() != k {
        return Err(Error::invalid(format!(
            "forward pass over {k} stages needs {k} measurements, got {}",
            measurements.len()
        )));
    }
    if sqc.state_dim() != sys.state_dim() {
        return Err(Error::invalid("constraint weights and system differ in state dimension"));
    }
    let mut states = Vec::with_capacity(k + 1);
    states.push(ForwardFilterState::initial(sqc));
    for (s, y) in measurements.iter().enumerate() {
        let next = forward_step(&states[s], y, sys, sqc.q.at(s), sqc.r.at(s))?;
        states.push(next);
    }
    Ok(states)
}
