//! Fixed-point smoother: combines the two filters at the smoothing index
//! into the sublevel set
//! `{x : |x - x̂_k|²_Π + |x - x̃_k|²_Π̄ ≤ d - φ_k - ψ_k}`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward_filter::{self, ForwardFilterState};
use crate::linalg;
use crate::model::{ForwardDiscreteSystem, ReverseDiscreteSystem, SqcParams};
use crate::reverse_filter::{self, ReverseFilterConfig, ReverseFilterState};

/// Absolute slack used by membership and emptiness decisions.
pub const MEMBERSHIP_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedSet {
    pub x_hat: DVector<f64>,
    pub pi: DMatrix<f64>,
    pub x_tilde: DVector<f64>,
    pub pi_bar: DMatrix<f64>,
    pub level: f64,
}

impl SmoothedSet {
    pub fn dim(&self) -> usize {
        self.x_hat.len()
    }

    /// `|x - x̂|²_Π + |x - x̃|²_Π̄`.
    pub fn form(&self, x: &DVector<f64>) -> f64 {
        linalg::quad_form(&(x - &self.x_hat), &self.pi)
            + linalg::quad_form(&(x - &self.x_tilde), &self.pi_bar)
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        contains(self, x)
    }

    pub fn point_estimate(&self) -> DVector<f64> {
        point_estimate(self)
    }

    /// Empty iff the form is bounded below and its minimum exceeds the level.
    /// An indefinite or unbounded form always reaches the level somewhere.
    pub fn is_empty(&self) -> bool {
        let m = &self.pi + &self.pi_bar;
        let scale = m.amax().max(1.0);
        if linalg::min_eigenvalue(&linalg::symmetrize(&m)) < -1e-12 * scale {
            return false;
        }
        let b = &self.pi * &self.x_hat + &self.pi_bar * &self.x_tilde;
        let x = point_estimate(self);
        // b outside the range of M means the form decreases without bound.
        let resid = (&m * &x - &b).amax();
        if resid > 1e-9 * scale * (1.0 + b.amax()) {
            return false;
        }
        self.form(&x) > self.level + MEMBERSHIP_SLACK
    }
}

/// Forms the smoothed set; both states must sit at the same index.
pub fn combine(
    fwd: &ForwardFilterState,
    rev: &ReverseFilterState,
    d: f64,
) -> Result<SmoothedSet> {
    if fwd.step_index != rev.step_index {
        return Err(Error::invalid(format!(
            "forward state at index {} cannot be combined with reverse state at index {}",
            fwd.step_index, rev.step_index
        )));
    }
    if fwd.x_hat.len() != rev.x_tilde.len() {
        return Err(Error::invalid("forward and reverse states differ in dimension"));
    }
    Ok(SmoothedSet {
        x_hat: fwd.x_hat.clone(),
        pi: fwd.pi.clone(),
        x_tilde: rev.x_tilde.clone(),
        pi_bar: rev.pi_bar.clone(),
        level: d - fwd.phi - rev.psi,
    })
}

pub fn contains(set: &SmoothedSet, x: &DVector<f64>) -> bool {
    x.len() == set.dim() && set.form(x) <= set.level + MEMBERSHIP_SLACK
}

/// `(Π + Π̄)^# (Π x̂ + Π̄ x̃)`.
pub fn point_estimate(set: &SmoothedSet) -> DVector<f64> {
    let m = linalg::symmetrize(&(&set.pi + &set.pi_bar));
    let b = &set.pi * &set.x_hat + &set.pi_bar * &set.x_tilde;
    linalg::pinv(&m).matrix * b
}

/// How the stage measurements are divided between the two filters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasurementSplit {
    /// The forward pass consumes the measurements of `x_1..x_k`, the reverse
    /// pass those of `x_{k+1}..x_t`. Every measurement is used once.
    #[default]
    Disjoint,
    /// Each reverse index `j` in `[k, t)` consumes the measurement of `x_j`,
    /// so the one at `x_k` is counted by both passes and the one at `x_t`
    /// by neither.
    Overlap,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SmootherOptions {
    /// Anchor `x̄_t` of the reverse pass; defaults to `x̂_t` from a forward
    /// pass over the whole horizon.
    pub terminal_anchor: Option<DVector<f64>>,
    pub split: MeasurementSplit,
    pub reverse: ReverseFilterConfig,
}

#[derive(Debug, Clone)]
pub struct SmootherReport {
    pub set: SmoothedSet,
    pub point_estimate: DVector<f64>,
    pub is_empty: bool,
    /// States `0..=k`.
    pub forward_trace: Vec<ForwardFilterState>,
    /// States from the terminal index down to `k`.
    pub reverse_trace: Vec<ReverseFilterState>,
}

impl SmootherReport {
    pub fn forward_at_k(&self) -> &ForwardFilterState {
        self.forward_trace.last().expect("forward trace is never empty")
    }

    pub fn reverse_at_k(&self) -> &ReverseFilterState {
        self.reverse_trace.last().expect("reverse trace is never empty")
    }
}

/// Stage measurements `y_0..y_{t-1}`; `y_s` observes `x_{s+1}`.
pub fn run_smoother(
    fsys: &ReverseDiscreteSystem,
    rsys: &ForwardDiscreteSystem,
    sqc: &SqcParams,
    measurements: &[DVector<f64>],
    k: usize,
    t: usize,
    options: &SmootherOptions,
) -> Result<SmootherReport> {
    if k > t {
        return Err(Error::invalid(format!(
            "smoothing index {k} lies beyond the horizon {t}"
        )));
    }
    if measurements.len() != t {
        return Err(Error::invalid(format!(
            "horizon {t} needs {t} measurements, got {}",
            measurements.len()
        )));
    }
    if fsys.state_dim() != rsys.state_dim() {
        return Err(Error::invalid("forward and reverse models differ in state dimension"));
    }

    let forward_len = if options.terminal_anchor.is_some() { k } else { t };
    let mut forward_trace =
        forward_filter::run_forward(fsys, sqc, &measurements[..forward_len], forward_len)?;
    let anchor = match &options.terminal_anchor {
        Some(a) => a.clone(),
        None => forward_trace[t].x_hat.clone(),
    };
    forward_trace.truncate(k + 1);

    let plan = reverse_plan(sqc, measurements, k, t, options.split)?;
    let reverse_trace = reverse_filter::run_reverse(
        rsys,
        &plan.sqc,
        &plan.slots,
        k,
        plan.end,
        &anchor,
        &options.reverse,
    )?;

    let fwd = forward_trace.last().expect("forward trace is never empty");
    let rev = reverse_trace.last().expect("reverse trace is never empty");
    let set = combine(fwd, rev, sqc.d)?;
    let point_estimate = set.point_estimate();
    let is_empty = set.is_empty();
    Ok(SmootherReport {
        set,
        point_estimate,
        is_empty,
        forward_trace,
        reverse_trace,
    })
}

/// Inputs of the reverse pass implied by a measurement split.
#[derive(Debug, Clone)]
pub struct ReversePlan {
    /// Measurement slots for indices `k..end`.
    pub slots: Vec<Option<DVector<f64>>>,
    /// Index at which the reverse pass starts from its terminal condition.
    pub end: usize,
    /// Constraint weights with `R` re-indexed so that index `j` reads the
    /// weight of the measurement it consumes.
    pub sqc: SqcParams,
}

pub fn reverse_plan(
    sqc: &SqcParams,
    measurements: &[DVector<f64>],
    k: usize,
    t: usize,
    split: MeasurementSplit,
) -> Result<ReversePlan> {
    if k > t || measurements.len() != t {
        return Err(Error::invalid("reverse plan needs k <= t and t measurements"));
    }
    let sqc = SqcParams {
        r: sqc.r.shifted(-1),
        ..sqc.clone()
    };
    let (slots, end) = match split {
        MeasurementSplit::Disjoint if k == t => (Vec::new(), t),
        MeasurementSplit::Disjoint => {
            // One virtual index past the horizon carries a zero value, so
            // index j can take the measurement of x_j.
            let mut slots = vec![None];
            slots.extend(measurements[k..].iter().cloned().map(Some));
            (slots, t + 1)
        }
        MeasurementSplit::Overlap => {
            let slots = (k..t)
                .map(|j| j.checked_sub(1).map(|s| measurements[s].clone()))
                .collect();
            (slots, t)
        }
    };
    Ok(ReversePlan { slots, end, sqc })
}
