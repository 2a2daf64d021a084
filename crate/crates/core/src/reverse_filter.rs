//! Reverse-time filter over `[k, t]`.
//!
//! Propagates `Ṽ_k(x) ≈ |x - x̃_k|²_{Π̄_k} + ψ_k` backwards from the
//! terminal condition `(x̄_t, 0, 0)` for the forward-time system. A step
//! from index `k+1` to `k` eliminates `w_k` through the Ω weight and adds
//! the stage measurement evaluated at `x_k` when one is supplied.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::forward_filter::StepDiagnostics;
use crate::linalg;
use crate::model::{ForwardDiscreteSystem, SqcParams};
use crate::recursion::{self, StageTerms};

#[derive(Debug, Clone, PartialEq)]
pub struct ReverseFilterState {
    pub x_tilde: DVector<f64>,
    pub pi_bar: DMatrix<f64>,
    pub psi: f64,
    pub step_index: usize,
    pub diagnostics: StepDiagnostics,
}

impl ReverseFilterState {
    /// Terminal condition `(x̄_t, 0, 0)` at index `t`.
    pub fn terminal(x_bar_t: DVector<f64>, t: usize) -> Self {
        let n = x_bar_t.len();
        ReverseFilterState {
            x_tilde: x_bar_t,
            pi_bar: DMatrix::zeros(n, n),
            psi: 0.0,
            step_index: t,
            diagnostics: StepDiagnostics::default(),
        }
    }

    pub fn value(&self, x: &DVector<f64>) -> f64 {
        linalg::quad_form(&(x - &self.x_tilde), &self.pi_bar) + self.psi
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ReverseFilterConfig {
    /// Extra passes that relinearise the maps about the freshly computed
    /// center. Zero linearises once about `x̃_{k+1}`.
    pub relinearize_iterations: usize,
}

/// `Ω = Π̄ - Π̄ D̄ (D̄^T Π̄ D̄ + Q)^# D̄^T Π̄` for `Π̄ = Π̄_{k+1}`.
pub fn omega(
    pi_bar_next: &DMatrix<f64>,
    d_bar: &DMatrix<f64>,
    q: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    Ok(recursion::eliminate_disturbance(pi_bar_next, d_bar, q)?.0)
}

/// Disturbance minimising `|α(x) + D̄ w - x̃_{k+1}|²_{Π̄} + |w|²_Q`.
pub fn reverse_optimal_disturbance(
    pi_bar_next: &DMatrix<f64>,
    d_bar: &DMatrix<f64>,
    q: &DMatrix<f64>,
    alpha_val: &DVector<f64>,
    x_tilde_next: &DVector<f64>,
) -> Result<DVector<f64>> {
    if alpha_val.len() != x_tilde_next.len() {
        return Err(Error::invalid("α(x) and x̃ differ in length"));
    }
    recursion::best_disturbance(pi_bar_next, d_bar, q, &(x_tilde_next - alpha_val))
}

/// One backward step from `state_next` (index `k+1`) to index `k`.
///
/// `y` is the measurement paired with `x_k`; `None` makes the step a pure
/// disturbance elimination without output terms.
pub fn reverse_step(
    state_next: &ReverseFilterState,
    y: Option<&DVector<f64>>,
    sys: &ForwardDiscreteSystem,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    config: &ReverseFilterConfig,
) -> Result<ReverseFilterState> {
    let n = sys.state_dim();
    if state_next.x_tilde.len() != n || state_next.pi_bar.shape() != (n, n) {
        return Err(Error::invalid("filter state does not match the system dimension"));
    }
    let k = state_next
        .step_index
        .checked_sub(1)
        .ok_or_else(|| Error::invalid("cannot step backwards from index 0"))?;
    let d_bar = sys.d_bar.at(k);
    let (weight, dist_pinv) = recursion::eliminate_disturbance(&state_next.pi_bar, d_bar, q)?;
    let outputs = y.map(|y| (y, r, &sys.xi, &sys.kappa));

    let mut point = state_next.x_tilde.clone();
    let mut update = None;
    for _ in 0..=config.relinearize_iterations {
        let terms = StageTerms::linearize(&point, &sys.alpha, outputs)?;
        let u = recursion::complete_square(
            &terms,
            &weight,
            &state_next.x_tilde,
            state_next.psi,
            None,
            None,
        );
        point = u.center.clone();
        update = Some(u);
    }
    let update = update.expect("at least one linearisation pass");

    Ok(ReverseFilterState {
        diagnostics: StepDiagnostics {
            disturbance_pseudo_inverse: dist_pinv,
            center_pseudo_inverse: update.center_truncated,
            min_eigenvalue: linalg::min_eigenvalue(&update.weight),
        },
        x_tilde: update.center,
        pi_bar: update.weight,
        psi: update.offset,
        step_index: k,
    })
}

/// Runs from the terminal condition at `t` down to `k`.
///
/// `measurements[i]` is paired with index `k + i`; the step producing index
/// `j` uses `Q_j` and `R_j`. Returns states ordered `t, t-1, ..., k`.
pub fn run_reverse(
    sys: &ForwardDiscreteSystem,
    sqc: &SqcParams,
    measurements: &[Option<DVector<f64>>],
    k: usize,
    t: usize,
    x_bar_t: &DVector<f64>,
    config: &ReverseFilterConfig,
) -> Result<Vec<ReverseFilterState>> {
    if k > t {
        return Err(Error::invalid(format!(
            "reverse pass needs k <= t, got k = {k}, t = {t}"
        )));
    }
    if measurements.len() != t - k {
        return Err(Error::invalid(format!(
            "reverse pass over [{k}, {t}] needs {} measurement slots, got {}",
            t - k,
            measurements.len()
        )));
    }
    if x_bar_t.len() != sys.state_dim() {
        return Err(Error::invalid("terminal anchor does not match the state dimension"));
    }
    let mut states = Vec::with_capacity(t - k + 1);
    states.push(ReverseFilterState::terminal(x_bar_t.clone(), t));
    for j in (k..t).rev() {
        let prev = states.last().expect("non-empty trace");
        let y = measurements[j - k].as_ref();
        let next = reverse_step(prev, y, sys, sqc.q.at(j), sqc.r.at(j), config)?;
        states.push(next);
    }
    Ok(states)
}
