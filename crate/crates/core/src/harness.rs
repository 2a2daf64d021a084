//! Scenario files, built-in models, Monte Carlo runs and result export.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::discretize::{self, ContinuousSystem, IqcWeights, WeightFn};
use crate::error::{Error, Result};
use crate::forward_filter;
use crate::linalg;
use crate::model::{
    evaluate_sqc, ForwardDiscreteSystem, NonlinearMap, ReverseDiscreteSystem, SqcParams,
    Trajectory,
};
use crate::oracle::{self, ProbePoints};
use crate::reverse_filter::ReverseFilterConfig;
use crate::smoother::{self, MeasurementSplit, SmoothedSet, SmootherOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelId {
    LinearScalar,
    #[serde(rename = "linear_2d")]
    Linear2d,
    Logistic,
    Pendulum,
    CustomPolynomial,
}

impl ModelId {
    pub const ALL: [ModelId; 5] = [
        ModelId::LinearScalar,
        ModelId::Linear2d,
        ModelId::Logistic,
        ModelId::Pendulum,
        ModelId::CustomPolynomial,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelId::LinearScalar => "linear_scalar",
            ModelId::Linear2d => "linear_2d",
            ModelId::Logistic => "logistic",
            ModelId::Pendulum => "pendulum",
            ModelId::CustomPolynomial => "custom_polynomial",
        }
    }

    pub fn state_dim(self) -> usize {
        match self {
            ModelId::Linear2d | ModelId::Pendulum => 2,
            _ => 1,
        }
    }

    fn default_params(self) -> Vec<(&'static str, f64)> {
        let mut p = match self {
            ModelId::LinearScalar => vec![("a", -0.5), ("c", 1.0)],
            ModelId::Linear2d => vec![("zeta", 0.2), ("omega", 1.0), ("c", 1.0)],
            ModelId::Logistic => vec![("r", 1.0), ("c", 1.0)],
            ModelId::Pendulum => vec![("gravity_over_length", 1.0), ("damping", 0.1)],
            ModelId::CustomPolynomial => {
                let mut p: Vec<_> = POLY_KEYS.iter().map(|k| (*k, 0.0)).collect();
                p.push(("c", 1.0));
                p
            }
        };
        p.push(("d_c", 1.0));
        p.push(("z_gain", 0.0));
        p
    }
}

const POLY_KEYS: [&str; 10] = ["a0", "a1", "a2", "a3", "a4", "a5", "a6", "a7", "a8", "a9"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Csv,
    Json,
    #[default]
    Both,
}

/// Continuous-time constraint weights; omitted entries default to identity
/// matrices, `d = 1` and a zero prior mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SqcSpec {
    #[serde(rename = "N", default, skip_serializing_if = "Option::is_none")]
    pub n: Option<Vec<Vec<f64>>>,
    #[serde(rename = "Q", default, skip_serializing_if = "Option::is_none")]
    pub q: Option<Vec<Vec<f64>>>,
    #[serde(rename = "R", default, skip_serializing_if = "Option::is_none")]
    pub r: Option<Vec<Vec<f64>>>,
    #[serde(default = "default_d")]
    pub d: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_bar_0: Option<Vec<f64>>,
}

impl Default for SqcSpec {
    fn default() -> Self {
        SqcSpec {
            n: None,
            q: None,
            r: None,
            d: default_d(),
            x_bar_0: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    #[serde(default = "default_fraction")]
    pub target_fraction: f64,
    #[serde(default)]
    pub seed: u64,
    /// Noise-free truth started at the prior mean.
    #[serde(default)]
    pub zero_noise: bool,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            target_fraction: default_fraction(),
            seed: 0,
            zero_noise: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub model_id: ModelId,
    #[serde(default)]
    pub model_params: BTreeMap<String, f64>,
    pub horizon_t: usize,
    pub smooth_at_k: usize,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub sqc: SqcSpec,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default)]
    pub output: OutputFormat,
    #[serde(default)]
    pub measurement_split: MeasurementSplit,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terminal_anchor: Option<Vec<f64>>,
    #[serde(default)]
    pub relinearize_iterations: usize,
}

fn default_d() -> f64 {
    1.0
}
fn default_fraction() -> f64 {
    0.8
}
fn default_delta() -> f64 {
    0.1
}
fn default_runs() -> usize {
    1
}

fn matrix_field(
    rows: &Option<Vec<Vec<f64>>>,
    field: &str,
    dim: usize,
) -> Result<DMatrix<f64>> {
    let Some(rows) = rows else {
        return Ok(DMatrix::identity(dim, dim));
    };
    if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
        return Err(Error::validation(field, format!("must be a {dim}×{dim} matrix")));
    }
    Ok(DMatrix::from_fn(dim, dim, |i, j| rows[i][j]))
}

fn check_weight(m: &DMatrix<f64>, field: &str) -> Result<()> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::validation(field, "entries must be finite"));
    }
    if !linalg::is_symmetric(m, 1e-12) {
        return Err(Error::validation(field, "must be symmetric"));
    }
    if linalg::min_eigenvalue(m) <= 0.0 {
        return Err(Error::validation(field, "must be positive definite"));
    }
    Ok(())
}

fn vector_field(v: &Option<Vec<f64>>, field: &str, dim: usize) -> Result<DVector<f64>> {
    match v {
        None => Ok(DVector::zeros(dim)),
        Some(v) if v.len() != dim => {
            Err(Error::validation(field, format!("must have {dim} entries")))
        }
        Some(v) if v.iter().any(|x| !x.is_finite()) => {
            Err(Error::validation(field, "entries must be finite"))
        }
        Some(v) => Ok(DVector::from_column_slice(v)),
    }
}

/// Reads and validates a scenario file.
pub fn parse_scenario(path: &Path) -> Result<Scenario> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Scenario::from_json(&text)
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Scenario> {
        let scn: Scenario = serde_json::from_str(text)
            .map_err(|e| Error::validation("scenario", e.to_string()))?;
        scn.validate()?;
        Ok(scn)
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon_t == 0 {
            return Err(Error::validation("horizon_t", "must be at least 1"));
        }
        if self.smooth_at_k > self.horizon_t {
            return Err(Error::validation(
                "smooth_at_k",
                "smooth_at_k must satisfy 0 ≤ k ≤ horizon_t",
            ));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::validation("delta", "must be a positive finite number"));
        }
        if self.runs == 0 {
            return Err(Error::validation("runs", "must be at least 1"));
        }
        let rho = self.noise.target_fraction;
        if !(rho > 0.0 && rho < 1.0) {
            return Err(Error::validation(
                "noise.target_fraction",
                "must lie strictly between 0 and 1",
            ));
        }
        if !(self.sqc.d > 0.0 && self.sqc.d.is_finite()) {
            return Err(Error::validation("sqc.d", "must be a positive finite number"));
        }
        let known: Vec<&str> = self.model_id.default_params().iter().map(|(k, _)| *k).collect();
        for (key, value) in &self.model_params {
            if !known.contains(&key.as_str()) {
                return Err(Error::validation(
                    format!("model_params.{key}"),
                    format!(
                        "unknown parameter for {}; expected one of {}",
                        self.model_id.name(),
                        known.join(", ")
                    ),
                ));
            }
            if !value.is_finite() {
                return Err(Error::validation(format!("model_params.{key}"), "must be finite"));
            }
        }
        let n = self.model_id.state_dim();
        check_weight(&matrix_field(&self.sqc.n, "sqc.N", n)?, "sqc.N")?;
        check_weight(&matrix_field(&self.sqc.q, "sqc.Q", n)?, "sqc.Q")?;
        check_weight(&matrix_field(&self.sqc.r, "sqc.R", 1)?, "sqc.R")?;
        vector_field(&self.sqc.x_bar_0, "sqc.x_bar_0", n)?;
        vector_field(&self.terminal_anchor, "terminal_anchor", n)?;
        Ok(())
    }

    pub fn param(&self, key: &str) -> f64 {
        self.model_params.get(key).copied().unwrap_or_else(|| {
            self.model_id
                .default_params()
                .into_iter()
                .find(|(k, _)| *k == key)
                .map(|(_, v)| v)
                .unwrap_or(0.0)
        })
    }

    /// Continuous-time weights with defaults filled in.
    pub fn iqc_weights(&self) -> Result<IqcWeights> {
        let n = self.model_id.state_dim();
        Ok(IqcWeights {
            n: matrix_field(&self.sqc.n, "sqc.N", n)?,
            q: WeightFn::Constant(matrix_field(&self.sqc.q, "sqc.Q", n)?),
            r: WeightFn::Constant(matrix_field(&self.sqc.r, "sqc.R", 1)?),
            d: self.sqc.d,
            x_bar_0: vector_field(&self.sqc.x_bar_0, "sqc.x_bar_0", n)?,
        })
    }

    pub fn prepare(&self) -> Result<PreparedScenario> {
        self.validate()?;
        let cont = builtin_model(self)?;
        let forward = discretize::euler_forward(&cont, self.delta)?;
        let reverse = if forward.is_affine() {
            discretize::exact_reverse(&forward)?
        } else {
            discretize::euler_reverse(&cont, self.delta)?
        };
        let sqc = discretize::discretize_weights(&cont.weights, self.delta, self.horizon_t)?;
        Ok(PreparedScenario {
            scenario: self.clone(),
            forward,
            reverse,
            sqc,
        })
    }
}

/// Continuous-time model named by the scenario, with analytic Jacobians.
pub fn builtin_model(scn: &Scenario) -> Result<ContinuousSystem> {
    let p = |k: &str| scn.param(k);
    let z_gain = p("z_gain");
    let d_gain = p("d_c");
    let weights = scn.iqc_weights()?;
    let sys = match scn.model_id {
        ModelId::LinearScalar => ContinuousSystem::new(
            NonlinearMap::linear(DMatrix::from_element(1, 1, p("a"))),
            NonlinearMap::linear(DMatrix::from_element(1, 1, z_gain)),
            NonlinearMap::linear(DMatrix::from_element(1, 1, p("c"))),
            DMatrix::from_element(1, 1, d_gain),
            weights,
        )?,
        ModelId::Linear2d => {
            let (zeta, omega) = (p("zeta"), p("omega"));
            ContinuousSystem::new(
                NonlinearMap::linear(DMatrix::from_row_slice(2, 2, &[-zeta, omega, -omega, -zeta])),
                NonlinearMap::linear(DMatrix::from_row_slice(1, 2, &[z_gain, 0.0])),
                NonlinearMap::linear(DMatrix::from_row_slice(1, 2, &[p("c"), 0.0])),
                DMatrix::identity(2, 2) * d_gain,
                weights,
            )?
        }
        ModelId::Logistic => {
            let r = p("r");
            ContinuousSystem::new(
                NonlinearMap::new(
                    1,
                    1,
                    move |x| DVector::from_element(1, r * x[0] * (1.0 - x[0])),
                    move |x| DMatrix::from_element(1, 1, r * (1.0 - 2.0 * x[0])),
                ),
                NonlinearMap::linear(DMatrix::from_element(1, 1, z_gain)),
                NonlinearMap::linear(DMatrix::from_element(1, 1, p("c"))),
                DMatrix::from_element(1, 1, d_gain),
                weights,
            )?
        }
        ModelId::Pendulum => {
            let (gl, b) = (p("gravity_over_length"), p("damping"));
            ContinuousSystem::new(
                NonlinearMap::new(
                    2,
                    2,
                    move |x| DVector::from_vec(vec![x[1], -gl * x[0].sin() - b * x[1]]),
                    move |x| DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -gl * x[0].cos(), -b]),
                ),
                NonlinearMap::linear(DMatrix::from_row_slice(1, 2, &[z_gain, 0.0])),
                NonlinearMap::linear(DMatrix::from_row_slice(1, 2, &[1.0, 0.0])),
                DMatrix::identity(2, 2) * d_gain,
                weights,
            )?
        }
        ModelId::CustomPolynomial => {
            let coef: Vec<f64> = POLY_KEYS.iter().map(|k| p(k)).collect();
            let a_c = if coef[2..].iter().all(|c| *c == 0.0) {
                NonlinearMap::affine(
                    DMatrix::from_element(1, 1, coef[1]),
                    DVector::from_element(1, coef[0]),
                )
            } else {
                let dcoef = coef.clone();
                NonlinearMap::new(
                    1,
                    1,
                    move |x| DVector::from_element(1, horner(&coef, x[0])),
                    move |x| {
                        let deriv: Vec<f64> = dcoef
                            .iter()
                            .enumerate()
                            .skip(1)
                            .map(|(i, c)| i as f64 * c)
                            .collect();
                        DMatrix::from_element(1, 1, horner(&deriv, x[0]))
                    },
                )
            };
            ContinuousSystem::new(
                a_c,
                NonlinearMap::linear(DMatrix::from_element(1, 1, z_gain)),
                NonlinearMap::linear(DMatrix::from_element(1, 1, p("c"))),
                DMatrix::from_element(1, 1, d_gain),
                weights,
            )?
        }
    };
    Ok(sys)
}

fn horner(coef: &[f64], x: f64) -> f64 {
    coef.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

/// A validated scenario with its discrete-time models and weights.
#[derive(Debug, Clone)]
pub struct PreparedScenario {
    pub scenario: Scenario,
    /// Forward-time system, used for simulation and the reverse pass.
    pub forward: ForwardDiscreteSystem,
    /// Reverse-time system, used by the forward pass.
    pub reverse: ReverseDiscreteSystem,
    pub sqc: SqcParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedRun {
    pub trajectory: Trajectory,
    pub sqc_value: f64,
}

pub fn run_seed(seed: u64, run_index: usize) -> u64 {
    seed ^ run_index as u64
}

/// Truth and measurements for one run.
pub fn simulate(prep: &PreparedScenario, run_index: usize) -> Result<SimulatedRun> {
    let scn = &prep.scenario;
    let t = scn.horizon_t;
    if scn.noise.zero_noise {
        let p = prep.forward.noise_dim();
        let l = prep.forward.measurement_dim();
        let traj = prep.forward.simulate(
            &prep.sqc.x_bar_0,
            &vec![DVector::zeros(p); t],
            &vec![DVector::zeros(l); t],
        )?;
        let z = prep.forward.uncertainty_outputs(&traj)?;
        let sqc_value = evaluate_sqc(&prep.sqc, &traj, &z, t)?;
        return Ok(SimulatedRun {
            trajectory: traj,
            sqc_value,
        });
    }
    let noise = oracle::admissible_noise(
        &prep.sqc,
        &prep.forward,
        t,
        scn.noise.target_fraction,
        run_seed(scn.noise.seed, run_index),
    )?;
    Ok(SimulatedRun {
        trajectory: noise.trajectory,
        sqc_value: noise.sqc_value,
    })
}

impl PreparedScenario {
    pub fn smoother_options(&self) -> SmootherOptions {
        SmootherOptions {
            terminal_anchor: self
                .scenario
                .terminal_anchor
                .as_ref()
                .map(|v| DVector::from_column_slice(v)),
            split: self.scenario.measurement_split,
            reverse: ReverseFilterConfig {
                relinearize_iterations: self.scenario.relinearize_iterations,
            },
        }
    }

    pub fn smooth(&self, measurements: &[DVector<f64>]) -> Result<smoother::SmootherReport> {
        smoother::run_smoother(
            &self.reverse,
            &self.forward,
            &self.sqc,
            measurements,
            self.scenario.smooth_at_k,
            self.scenario.horizon_t,
            &self.smoother_options(),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub run_index: usize,
    pub true_state_at_k: Vec<f64>,
    pub point_estimate: Vec<f64>,
    pub forward_estimate_at_k: Vec<f64>,
    /// `None` marks a failed run.
    pub membership: Option<bool>,
    pub level: f64,
    pub phi_k: f64,
    pub psi_k: f64,
    pub err_smoother: f64,
    pub err_forward: f64,
}

impl RunRecord {
    fn failed(run_index: usize, n: usize) -> Self {
        let nan = vec![f64::NAN; n];
        RunRecord {
            run_index,
            true_state_at_k: nan.clone(),
            point_estimate: nan.clone(),
            forward_estimate_at_k: nan,
            membership: None,
            level: f64::NAN,
            phi_k: f64::NAN,
            psi_k: f64::NAN,
            err_smoother: f64::NAN,
            err_forward: f64::NAN,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub run_index: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub model_id: String,
    pub runs: usize,
    pub completed: usize,
    pub failed: usize,
    /// Runs whose true state lies in the set, over all runs.
    pub membership_rate: Option<f64>,
    pub mean_err_smoother: Option<f64>,
    pub median_err_smoother: Option<f64>,
    pub mean_err_forward: Option<f64>,
    pub median_err_forward: Option<f64>,
    pub empty_count: usize,
    pub failures: Vec<RunFailure>,
    pub notes: Vec<String>,
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

fn median(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len().is_multiple_of(2) {
        0.5 * (v[m - 1] + v[m])
    } else {
        v[m]
    })
}

impl Summary {
    pub fn from_records(
        model_id: &str,
        records: &[RunRecord],
        empty_count: usize,
        failures: Vec<RunFailure>,
    ) -> Summary {
        let done: Vec<&RunRecord> = records.iter().filter(|r| r.membership.is_some()).collect();
        let es: Vec<f64> = done.iter().map(|r| r.err_smoother).collect();
        let ef: Vec<f64> = done.iter().map(|r| r.err_forward).collect();
        let inside = done.iter().filter(|r| r.membership == Some(true)).count();
        Summary {
            model_id: model_id.to_string(),
            runs: records.len(),
            completed: done.len(),
            failed: records.len() - done.len(),
            membership_rate: (!records.is_empty()).then(|| inside as f64 / records.len() as f64),
            mean_err_smoother: mean(&es),
            median_err_smoother: median(&es),
            mean_err_forward: mean(&ef),
            median_err_forward: median(&ef),
            empty_count,
            failures,
            notes: Vec::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScenarioResult {
    pub records: Vec<RunRecord>,
    pub summary: Summary,
    /// Set of the first completed run, for plotting samples.
    pub sample_set: Option<SmoothedSet>,
}

struct RunOutcome {
    record: RunRecord,
    set: Option<SmoothedSet>,
    is_empty: bool,
    failure: Option<String>,
}

fn run_one(prep: &PreparedScenario, run_index: usize) -> RunOutcome {
    let n = prep.forward.state_dim();
    let k = prep.scenario.smooth_at_k;
    let attempt = || -> Result<(RunRecord, SmoothedSet, bool)> {
        let sim = simulate(prep, run_index)?;
        let report = prep.smooth(&sim.trajectory.measurements)?;
        let truth = &sim.trajectory.states[k];
        let fwd = report.forward_at_k();
        let rev = report.reverse_at_k();
        let record = RunRecord {
            run_index,
            true_state_at_k: truth.iter().copied().collect(),
            point_estimate: report.point_estimate.iter().copied().collect(),
            forward_estimate_at_k: fwd.x_hat.iter().copied().collect(),
            membership: Some(report.set.contains(truth)),
            level: report.set.level,
            phi_k: fwd.phi,
            psi_k: rev.psi,
            err_smoother: (&report.point_estimate - truth).norm(),
            err_forward: (&fwd.x_hat - truth).norm(),
        };
        Ok((record, report.set, report.is_empty))
    };
    match attempt() {
        Ok((record, set, is_empty)) => RunOutcome {
            record,
            set: Some(set),
            is_empty,
            failure: None,
        },
        Err(e) => RunOutcome {
            record: RunRecord::failed(run_index, n),
            set: None,
            is_empty: false,
            failure: Some(e.to_string()),
        },
    }
}

/// Simulates and smooths every run; runs execute in parallel and come back
/// ordered by run index.
pub fn run_scenario(scn: &Scenario) -> Result<ScenarioResult> {
    let prep = scn.prepare()?;
    let outcomes: Vec<RunOutcome> = (0..scn.runs)
        .into_par_iter()
        .map(|i| run_one(&prep, i))
        .collect();
    let empty_count = outcomes.iter().filter(|o| o.is_empty).count();
    let failures = outcomes
        .iter()
        .filter_map(|o| {
            o.failure.as_ref().map(|m| RunFailure {
                run_index: o.record.run_index,
                message: m.clone(),
            })
        })
        .collect();
    let sample_set = outcomes.iter().find_map(|o| o.set.clone());
    let records: Vec<RunRecord> = outcomes.into_iter().map(|o| o.record).collect();
    let summary = Summary::from_records(scn.model_id.name(), &records, empty_count, failures);
    Ok(ScenarioResult {
        records,
        summary,
        sample_set,
    })
}

fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn csv_header(n: usize) -> Vec<String> {
    let mut h = vec!["run_index".to_string()];
    for prefix in ["true_k", "estimate", "forward"] {
        h.extend((0..n).map(|i| format!("{prefix}_{i}")));
    }
    for c in ["membership", "level", "phi", "psi", "err_smoother", "err_forward"] {
        h.push(c.to_string());
    }
    h
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::io(path, std::io::Error::other(format!("{other:?}"))),
    }
}

pub fn write_records_csv(path: &Path, records: &[RunRecord], n: usize) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(csv_header(n)).map_err(|e| csv_err(path, e))?;
    for r in records {
        let mut row = vec![r.run_index.to_string()];
        for v in [&r.true_state_at_k, &r.point_estimate, &r.forward_estimate_at_k] {
            row.extend(v.iter().map(|x| fmt_float(*x)));
        }
        row.push(
            match r.membership {
                Some(true) => "true",
                Some(false) => "false",
                None => "error",
            }
            .to_string(),
        );
        for x in [r.level, r.phi_k, r.psi_k, r.err_smoother, r.err_forward] {
            row.push(fmt_float(x));
        }
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Parses a file written by [`write_records_csv`].
pub fn read_records_csv(path: &Path) -> Result<Vec<RunRecord>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    let n = header.iter().filter(|h| h.starts_with("true_k_")).count();
    if header.len() != csv_header(n).len() {
        return Err(Error::validation("records.csv", "unexpected header"));
    }
    let bad = |msg: String| Error::validation("records.csv", msg);
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| csv_err(path, e))?;
        let f = |i: usize| -> Result<f64> {
            row[i].parse::<f64>().map_err(|e| bad(format!("column {i}: {e}")))
        };
        let vec_at = |start: usize| -> Result<Vec<f64>> { (start..start + n).map(f).collect() };
        let base = 1 + 3 * n;
        out.push(RunRecord {
            run_index: row[0].parse().map_err(|e| bad(format!("run_index: {e}")))?,
            true_state_at_k: vec_at(1)?,
            point_estimate: vec_at(1 + n)?,
            forward_estimate_at_k: vec_at(1 + 2 * n)?,
            membership: match &row[base] {
                "true" => Some(true),
                "false" => Some(false),
                "error" => None,
                other => return Err(bad(format!("membership value `{other}`"))),
            },
            level: f(base + 1)?,
            phi_k: f(base + 2)?,
            psi_k: f(base + 3)?,
            err_smoother: f(base + 4)?,
            err_forward: f(base + 5)?,
        });
    }
    Ok(out)
}

#[derive(Serialize)]
struct JsonRecord<'a> {
    run_index: usize,
    true_k: &'a [f64],
    estimate: &'a [f64],
    forward: &'a [f64],
    membership: Option<bool>,
    level: Option<f64>,
    phi: Option<f64>,
    psi: Option<f64>,
    err_smoother: Option<f64>,
    err_forward: Option<f64>,
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

const SAMPLES_PER_AXIS_1D: usize = 401;
const SAMPLES_PER_AXIS_2D: usize = 101;

/// Grid half-widths covering the set, or unit widths when it is unbounded.
fn sample_box(set: &SmoothedSet) -> (DVector<f64>, DVector<f64>) {
    let c = set.point_estimate();
    let n = set.dim();
    let m = linalg::symmetrize(&(&set.pi + &set.pi_bar));
    let slack = set.level - set.form(&c);
    let eig = m.clone().symmetric_eigen();
    let half = if eig.eigenvalues.min() > 1e-12 && slack > 0.0 {
        let inv = m.try_inverse().unwrap_or_else(|| DMatrix::identity(n, n));
        DVector::from_fn(n, |i, _| 1.25 * (slack * inv[(i, i)]).sqrt())
    } else {
        DVector::from_element(n, 1.0)
    };
    (c, half)
}

pub fn write_set_samples(path: &Path, set: &SmoothedSet) -> Result<()> {
    let n = set.dim();
    let (c, half) = sample_box(set);
    let per_axis = if n == 1 {
        SAMPLES_PER_AXIS_1D
    } else {
        SAMPLES_PER_AXIS_2D
    };
    let coord = |i: usize, j: usize| {
        c[i] - half[i] + 2.0 * half[i] * j as f64 / (per_axis - 1) as f64
    };
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut header: Vec<String> = (0..n).map(|i| format!("x_{i}")).collect();
    header.push("inside".into());
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    let total = per_axis.pow(n as u32);
    for idx in 0..total {
        let mut rem = idx;
        let x = DVector::from_fn(n, |i, _| {
            let j = rem % per_axis;
            rem /= per_axis;
            coord(i, j)
        });
        let mut row: Vec<String> = x.iter().map(|v| fmt_float(*v)).collect();
        row.push(set.contains(&x).to_string());
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes `records.csv` and/or `records.json`, `summary.json`, and for
/// states of dimension at most two `set_samples.csv`. Returns the written
/// paths.
pub fn export(
    records: &[RunRecord],
    summary: &Summary,
    sample_set: Option<&SmoothedSet>,
    state_dim: usize,
    format: OutputFormat,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    if matches!(format, OutputFormat::Csv | OutputFormat::Both) {
        let p = out_dir.join("records.csv");
        write_records_csv(&p, records, state_dim)?;
        written.push(p);
    }
    if matches!(format, OutputFormat::Json | OutputFormat::Both) {
        let p = out_dir.join("records.json");
        let rows: Vec<JsonRecord> = records
            .iter()
            .map(|r| JsonRecord {
                run_index: r.run_index,
                true_k: &r.true_state_at_k,
                estimate: &r.point_estimate,
                forward: &r.forward_estimate_at_k,
                membership: r.membership,
                level: finite(r.level),
                phi: finite(r.phi_k),
                psi: finite(r.psi_k),
                err_smoother: finite(r.err_smoother),
                err_forward: finite(r.err_forward),
            })
            .collect();
        write_json(&p, &rows)?;
        written.push(p);
    }
    let mut summary = summary.clone();
    if state_dim > 2 {
        summary.notes.push(format!(
            "set_samples.csv omitted: state dimension {state_dim} exceeds 2"
        ));
    } else if let Some(set) = sample_set {
        let p = out_dir.join("set_samples.csv");
        write_set_samples(&p, set)?;
        written.push(p);
    }
    let p = out_dir.join("summary.json");
    write_json(&p, &summary)?;
    written.push(p);
    Ok(written)
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Largest disagreement between the filters and the dynamic-programming
/// oracle on one simulated run of an affine scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OracleReport {
    pub max_fit_residual: f64,
    pub max_forward_gap: f64,
    pub max_reverse_gap: f64,
}

pub fn oracle_check(prep: &PreparedScenario, run_index: usize) -> Result<OracleReport> {
    let scn = &prep.scenario;
    let (k, t) = (scn.smooth_at_k, scn.horizon_t);
    let sim = simulate(prep, run_index)?;
    let ys = &sim.trajectory.measurements;

    let fwd = forward_filter::run_forward(&prep.reverse, &prep.sqc, &ys[..k], k)?;
    let fits = oracle::dp_value_forward(&prep.reverse, &prep.sqc, ys, k, &ProbePoints::Stencil)?;
    let mut report = OracleReport {
        max_fit_residual: 0.0,
        max_forward_gap: 0.0,
        max_reverse_gap: 0.0,
    };
    for (state, fit) in fwd.iter().zip(&fits) {
        report.max_fit_residual = report.max_fit_residual.max(fit.residual);
        for x in oracle::probe_stencil(&fit.center, &fit.weight)? {
            report.max_forward_gap = report.max_forward_gap.max((state.value(&x) - fit.value(&x)).abs());
        }
    }

    let smoothed = prep.smooth(ys)?;
    let plan = smoother::reverse_plan(&prep.sqc, ys, k, t, scn.measurement_split)?;
    let anchor = &smoothed.reverse_trace[0].x_tilde;
    let rfits = oracle::dp_value_reverse(
        &prep.forward,
        &plan.sqc,
        &plan.slots,
        k,
        plan.end,
        anchor,
        &ProbePoints::Stencil,
    )?;
    for (state, fit) in smoothed.reverse_trace.iter().zip(&rfits) {
        report.max_fit_residual = report.max_fit_residual.max(fit.residual);
        for x in oracle::probe_stencil(&fit.center, &fit.weight)? {
            report.max_reverse_gap = report.max_reverse_gap.max((state.value(&x) - fit.value(&x)).abs());
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> &'static str {
        r#"{"model_id": "linear_scalar", "horizon_t": 20, "smooth_at_k": 10}"#
    }

    #[test]
    fn defaults_are_applied() {
        let s = Scenario::from_json(minimal()).unwrap();
        assert_eq!(s.noise.target_fraction, 0.8);
        assert_eq!(s.runs, 1);
        assert_eq!(s.delta, 0.1);
        assert_eq!(s.measurement_split, MeasurementSplit::Disjoint);
        assert_eq!(s.param("a"), -0.5);
    }

    #[test]
    fn k_beyond_horizon_is_rejected() {
        let e = Scenario::from_json(
            r#"{"model_id": "linear_scalar", "horizon_t": 5, "smooth_at_k": 6}"#,
        )
        .unwrap_err();
        assert!(e.to_string().contains("smooth_at_k must satisfy 0 ≤ k ≤ horizon_t"));
    }

    #[test]
    fn asymmetric_n_names_the_field() {
        let e = Scenario::from_json(
            r#"{"model_id": "linear_2d", "horizon_t": 5, "smooth_at_k": 2,
                "sqc": {"N": [[1, 0.5], [0, 1]]}}"#,
        )
        .unwrap_err();
        assert!(matches!(&e, Error::Validation { field, .. } if field == "sqc.N"), "{e}");
    }

    #[test]
    fn zero_noise_follows_the_nominal_model() {
        let mut s = Scenario::from_json(minimal()).unwrap();
        s.noise.zero_noise = true;
        s.sqc.x_bar_0 = Some(vec![1.0]);
        let prep = s.prepare().unwrap();
        let sim = simulate(&prep, 0).unwrap();
        for (i, x) in sim.trajectory.states.iter().enumerate() {
            assert!((x[0] - 0.95f64.powi(i as i32)).abs() < 1e-14);
        }
        assert_eq!(sim.sqc_value, 0.0);
    }

    #[test]
    fn polynomial_horner() {
        assert_eq!(horner(&[1.0, 2.0, 3.0], 2.0), 17.0);
    }
}
