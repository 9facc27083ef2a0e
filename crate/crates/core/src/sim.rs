//! Fixed-step closed-loop simulation of plant, observer and critic.
//!
//! The plant, the observer, the critic weights, the least-squares gain and
//! the accumulated cost form one ODE integrated by classical RK4. Within
//! every stage the control is `u = policy(x̂, Ŵc)` and the measurement is
//! `y = Cx`; the plant, observer and critic share that single `u`.

use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::critic::{
    bellman_error, control_penalty, critic_derivatives, pe_metric, policy, BeSample, Basis, BasisSpec, CostSpec,
    CriticState, ExtrapolationSet, LearnerGains, LearnerGainsDef,
};
use crate::error::{Error, Result};
use crate::linalg::{self, first_non_finite, lambda_min, symmetrize};
use crate::model::{ControlAffineModel, ModelDef};
use crate::observer::{error_energy, observer_rhs};
use crate::scalar::{lit, Real};
use crate::synthesis::{self, input_vertices, GainsFile, ObserverGains, SynthesisOptions};

/// Smallest admissible eigenvalue of the least-squares gain.
pub const GAMMA_FLOOR: f64 = 1e-10;

/// Full coupled state.
#[derive(Debug, Clone, PartialEq)]
pub struct SimState<T: Real> {
    pub x: DVector<T>,
    pub xhat: DVector<T>,
    pub critic: CriticState<T>,
    /// Accumulated cost.
    pub j: T,
}

#[derive(Debug, Clone)]
struct Rate<T: Real> {
    x: DVector<T>,
    xhat: DVector<T>,
    wc: DVector<T>,
    gamma: DMatrix<T>,
    j: T,
}

impl<T: Real> SimState<T> {
    fn advanced(&self, rate: &Rate<T>, dt: T) -> Self {
        Self {
            x: &self.x + &rate.x * dt,
            xhat: &self.xhat + &rate.xhat * dt,
            critic: CriticState {
                wc: &self.critic.wc + &rate.wc * dt,
                gamma: &self.critic.gamma + &rate.gamma * dt,
            },
            j: self.j + rate.j * dt,
        }
    }

    /// Name of the first non-finite component, if any.
    pub fn first_non_finite(&self) -> Option<String> {
        let parts: [(&str, &[T]); 4] = [
            ("x", self.x.as_slice()),
            ("xhat", self.xhat.as_slice()),
            ("Wc", self.critic.wc.as_slice()),
            ("Gamma", self.critic.gamma.as_slice()),
        ];
        for (name, values) in parts {
            if let Some(i) = first_non_finite(values) {
                return Some(format!("{name}[{i}]"));
            }
        }
        (!self.j.is_finite()).then(|| "J".to_string())
    }
}

/// Why a run stopped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "camelCase")]
pub enum Termination {
    Completed,
    Diverged { time: f64, component: String },
    GammaFloor { time: f64, lambda_min: f64 },
    DomainEscape { time: f64, what: String },
    StateCorruption { time: f64, what: String },
}

impl Termination {
    pub fn is_completed(&self) -> bool {
        matches!(self, Termination::Completed)
    }
}

/// One logged step.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord<T: Real> {
    pub t: T,
    pub x: DVector<T>,
    pub xhat: DVector<T>,
    pub e: DVector<T>,
    pub u: DVector<T>,
    pub wc: DVector<T>,
    pub ve: T,
    pub pe: T,
    pub j: T,
    pub gamma_min: T,
    pub gamma_max: T,
}

/// Run metadata carried into the summary.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RunMetadata {
    pub config_hash: String,
    pub notes: Vec<String>,
    /// Input bound at which the observer LMI was actually certified.
    pub certified_input_bound: Option<f64>,
    pub lambda_bar: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace<T: Real> {
    pub n: usize,
    pub m: usize,
    pub basis_len: usize,
    pub records: Vec<TraceRecord<T>>,
    pub termination: Termination,
    pub metadata: RunMetadata,
}

/// A fully resolved experiment.
#[derive(Debug)]
pub struct Simulation<T: Real> {
    pub model: ControlAffineModel<T>,
    pub gains: ObserverGains<T>,
    pub cost: CostSpec<T>,
    pub basis: Box<dyn Basis<T>>,
    pub learner: LearnerGains<T>,
    pub extrapolation: ExtrapolationSet<T>,
    pub initial: SimState<T>,
    pub h: T,
    pub steps: usize,
    pub metadata: RunMetadata,
}

/// Evaluation failure inside a step, mapped onto a termination reason.
fn termination_for(err: Error, time: f64) -> std::result::Result<Termination, Error> {
    match err {
        Error::NonFinite { component } => Ok(Termination::Diverged { time, component }),
        Error::Domain { what } => Ok(Termination::DomainEscape { time, what }),
        Error::StateCorruption(what) => Ok(Termination::StateCorruption { time, what }),
        Error::ControlRange { value, bound } => Ok(Termination::StateCorruption {
            time,
            what: format!("control {value} outside ±{bound}"),
        }),
        other => Err(other),
    }
}

impl<T: Real> Simulation<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        model: ControlAffineModel<T>,
        gains: ObserverGains<T>,
        cost: CostSpec<T>,
        basis: Box<dyn Basis<T>>,
        learner: LearnerGains<T>,
        extrapolation: ExtrapolationSet<T>,
        initial: SimState<T>,
        h: T,
        horizon: T,
    ) -> Result<Self> {
        let n = model.n();
        if !(h > T::zero()) {
            return Err(Error::param("h", "step size must be positive"));
        }
        if !(horizon >= h) {
            return Err(Error::param("horizon", "must be at least one step"));
        }
        for (len, what) in [(initial.x.len(), "x0"), (initial.xhat.len(), "xhat0"), (basis.state_dim(), "basis state dimension")] {
            if len != n {
                return Err(Error::Dimension {
                    context: what,
                    expected: n,
                    actual: len,
                });
            }
        }
        if gains.n() != n || gains.q() != model.q() {
            return Err(Error::Dimension {
                context: "gains vs. model",
                expected: n,
                actual: gains.n(),
            });
        }
        if cost.q.nrows() != n || cost.r.len() != model.m() {
            return Err(Error::Dimension {
                context: "cost weights",
                expected: n,
                actual: cost.q.nrows(),
            });
        }
        if initial.critic.wc.len() != basis.len() {
            return Err(Error::Dimension {
                context: "Wc0 vs. basis",
                expected: basis.len(),
                actual: initial.critic.wc.len(),
            });
        }
        if extrapolation.is_empty() || extrapolation.points.iter().any(|p| p.len() != n) {
            return Err(Error::Config("extrapolation points must be non-empty and match the state dimension".into()));
        }
        let steps = (horizon / h).to_f64_lossy().round() as usize;
        Ok(Self {
            model,
            gains,
            cost,
            basis,
            learner,
            extrapolation,
            initial,
            h,
            steps: steps.max(1),
            metadata: RunMetadata::default(),
        })
    }

    fn be_samples(&self, wc: &DVector<T>) -> Result<Vec<BeSample<T>>> {
        self.extrapolation
            .points
            .iter()
            .map(|p| bellman_error(&self.model, self.basis.as_ref(), &self.cost, self.learner.gamma_norm, p, wc))
            .collect()
    }

    /// Control applied at a state.
    pub fn control(&self, s: &SimState<T>) -> Result<DVector<T>> {
        policy(&self.model, self.basis.as_ref(), &self.cost, &s.xhat, &s.critic.wc)
    }

    fn rate(&self, s: &SimState<T>) -> Result<Rate<T>> {
        let u = self.control(s)?;
        let y = self.model.output(&s.x);
        let xdot = self.model.flow(&s.x, &u)?;
        let xhatdot = observer_rhs(&self.model, &self.gains, &s.xhat, &y, &u)?;
        let samples = self.be_samples(&s.critic.wc)?;
        let (wdot, gdot) = critic_derivatives(&s.critic, &self.learner, &samples)?;
        let jdot = self.cost.state_cost(&s.x) + control_penalty(&self.cost, &u)?;
        Ok(Rate {
            x: xdot,
            xhat: xhatdot,
            wc: wdot,
            gamma: gdot,
            j: jdot,
        })
    }

    /// One RK4 step of the coupled system; the cost integrand uses the
    /// same stages.
    pub fn step(&self, s: &SimState<T>, h: T) -> Result<SimState<T>> {
        let half = h * lit::<T>(0.5);
        let k1 = self.rate(s)?;
        let k2 = self.rate(&s.advanced(&k1, half))?;
        let k3 = self.rate(&s.advanced(&k2, half))?;
        let k4 = self.rate(&s.advanced(&k3, h))?;
        let two = lit::<T>(2.0);
        let sixth = h / lit::<T>(6.0);
        let mut next = SimState {
            x: &s.x + (&k1.x + &k2.x * two + &k3.x * two + &k4.x) * sixth,
            xhat: &s.xhat + (&k1.xhat + &k2.xhat * two + &k3.xhat * two + &k4.xhat) * sixth,
            critic: CriticState {
                wc: &s.critic.wc + (&k1.wc + &k2.wc * two + &k3.wc * two + &k4.wc) * sixth,
                gamma: &s.critic.gamma + (&k1.gamma + &k2.gamma * two + &k3.gamma * two + &k4.gamma) * sixth,
            },
            j: s.j + (k1.j + k2.j * two + k3.j * two + k4.j) * sixth,
        };
        next.critic.gamma = symmetrize(&next.critic.gamma);
        if let Some(component) = next.first_non_finite() {
            return Err(Error::NonFinite { component });
        }
        Ok(next)
    }

    fn record(&self, t: T, s: &SimState<T>) -> Result<TraceRecord<T>> {
        let u = self.control(s)?;
        let e = &s.x - &s.xhat;
        let samples = self.be_samples(&s.critic.wc)?;
        let ev = linalg::sym_eigenvalues(&s.critic.gamma);
        Ok(TraceRecord {
            t,
            x: s.x.clone(),
            xhat: s.xhat.clone(),
            ve: error_energy(&self.gains, &e),
            e,
            u,
            wc: s.critic.wc.clone(),
            pe: pe_metric(&samples),
            j: s.j,
            gamma_min: ev.first().copied().unwrap_or_else(T::zero),
            gamma_max: ev.last().copied().unwrap_or_else(T::zero),
        })
    }

    /// Integrates over the horizon, logging a record after every step.
    /// Divergence, Γ-floor breaches and domain escapes end the run early
    /// with the partial trace.
    pub fn run(&self) -> Result<SimTrace<T>> {
        let mut records = Vec::with_capacity(self.steps);
        let mut s = self.initial.clone();
        let mut termination = Termination::Completed;
        for k in 1..=self.steps {
            let t = self.h * lit::<T>(k as f64);
            let tf = t.to_f64_lossy();
            let next = match self.step(&s, self.h) {
                Ok(n) => n,
                Err(e) => {
                    termination = termination_for(e, tf)?;
                    break;
                }
            };
            let lmin = lambda_min(&next.critic.gamma).to_f64_lossy();
            match self.record(t, &next) {
                Ok(r) => records.push(r),
                Err(e) => {
                    termination = termination_for(e, tf)?;
                    break;
                }
            }
            s = next;
            if !(lmin >= GAMMA_FLOOR) {
                termination = Termination::GammaFloor { time: tf, lambda_min: lmin };
                break;
            }
        }
        if !termination.is_completed() {
            log::warn!("simulation stopped early: {termination:?}");
        }
        Ok(SimTrace {
            n: self.model.n(),
            m: self.model.m(),
            basis_len: self.basis.len(),
            records,
            termination,
            metadata: self.metadata.clone(),
        })
    }

    /// Final state after integrating `steps` steps of size `h` (no logging).
    pub fn integrate(&self, h: T, steps: usize) -> Result<SimState<T>> {
        let mut s = self.initial.clone();
        for _ in 0..steps {
            s = self.step(&s, h)?;
        }
        Ok(s)
    }
}

// ---------------------------------------------------------------------------
// Export

/// Header of the trace CSV for the given dimensions.
pub fn trace_header(n: usize, m: usize, basis_len: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend((1..=n).map(|i| format!("x{i}")));
    h.extend((1..=n).map(|i| format!("xhat{i}")));
    h.extend((1..=n).map(|i| format!("e{i}")));
    h.extend((1..=m).map(|i| format!("u{i}")));
    h.extend((1..=basis_len).map(|i| format!("Wc{i}")));
    h.extend(["Ve", "pe", "J"].map(String::from));
    h
}

fn cell(v: f64) -> String {
    // Shortest representation that parses back to the same bits.
    format!("{v}")
}

pub fn write_trace_csv<T: Real>(trace: &SimTrace<T>, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(e, path))?;
    w.write_record(trace_header(trace.n, trace.m, trace.basis_len))?;
    for r in &trace.records {
        let mut row = vec![cell(r.t.to_f64_lossy())];
        for v in [&r.x, &r.xhat, &r.e, &r.u, &r.wc] {
            row.extend(v.iter().map(|x| cell(x.to_f64_lossy())));
        }
        row.extend([r.ve, r.pe, r.j].iter().map(|x| cell(x.to_f64_lossy())));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_io(e: csv::Error, path: &Path) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::Config(format!("{}: {other:?}", path.display())),
        }
    } else {
        Error::Csv(e)
    }
}

/// Parses a trace CSV back into rows of numbers (header returned separately).
pub fn read_trace_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_io(e, path))?;
    let header = r.headers()?.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|c| c.parse::<f64>().map_err(|e| Error::Config(format!("{}: `{c}`: {e}", path.display()))))
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok((header, rows))
}

/// Condensed run statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Summary {
    pub termination: Termination,
    pub steps: usize,
    pub final_time: Option<f64>,
    pub final_x: Vec<f64>,
    pub final_xhat: Vec<f64>,
    pub final_wc: Vec<f64>,
    pub final_error_norm: Option<f64>,
    pub final_cost: Option<f64>,
    pub min_pe_metric: Option<f64>,
    pub max_abs_u: Option<f64>,
    pub max_wc_norm: Option<f64>,
    pub min_gamma_eigenvalue: Option<f64>,
    pub max_gamma_eigenvalue: Option<f64>,
    /// Latest time at which ‖e‖ exceeded 0.05 (none when it never did).
    pub last_time_error_above_005: Option<f64>,
    pub config_hash: String,
    pub notes: Vec<String>,
    pub lambda_bar: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub certified_input_bound: Option<f64>,
    /// Records whose control exceeded the certified input bound.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps_outside_certified_range: Option<usize>,
}

fn fold_opt(values: impl Iterator<Item = f64>, f: fn(f64, f64) -> f64) -> Option<f64> {
    values.fold(None, |acc, v| Some(acc.map_or(v, |a| f(a, v))))
}

pub fn summarize<T: Real>(trace: &SimTrace<T>) -> Summary {
    let rec = &trace.records;
    let f = |v: &DVector<T>| v.iter().map(|x| x.to_f64_lossy()).collect::<Vec<f64>>();
    let last = rec.last();
    let max_u = |r: &TraceRecord<T>| r.u.amax().to_f64_lossy();
    Summary {
        termination: trace.termination.clone(),
        steps: rec.len(),
        final_time: last.map(|r| r.t.to_f64_lossy()),
        final_x: last.map(|r| f(&r.x)).unwrap_or_default(),
        final_xhat: last.map(|r| f(&r.xhat)).unwrap_or_default(),
        final_wc: last.map(|r| f(&r.wc)).unwrap_or_default(),
        final_error_norm: last.map(|r| r.e.norm().to_f64_lossy()),
        final_cost: last.map(|r| r.j.to_f64_lossy()),
        min_pe_metric: fold_opt(rec.iter().map(|r| r.pe.to_f64_lossy()), f64::min),
        max_abs_u: fold_opt(rec.iter().map(max_u), f64::max),
        max_wc_norm: fold_opt(rec.iter().map(|r| r.wc.norm().to_f64_lossy()), f64::max),
        min_gamma_eigenvalue: fold_opt(rec.iter().map(|r| r.gamma_min.to_f64_lossy()), f64::min),
        max_gamma_eigenvalue: fold_opt(rec.iter().map(|r| r.gamma_max.to_f64_lossy()), f64::max),
        last_time_error_above_005: rec
            .iter()
            .rev()
            .find(|r| r.e.norm().to_f64_lossy() > 0.05)
            .map(|r| r.t.to_f64_lossy()),
        config_hash: trace.metadata.config_hash.clone(),
        notes: trace.metadata.notes.clone(),
        lambda_bar: trace.metadata.lambda_bar,
        certified_input_bound: trace.metadata.certified_input_bound,
        steps_outside_certified_range: trace
            .metadata
            .certified_input_bound
            .map(|b| rec.iter().filter(|r| max_u(r) > b).count()),
    }
}

/// Writes `trace.csv` and `summary.json` into `dir`.
pub fn export<T: Real>(trace: &SimTrace<T>, dir: &Path) -> Result<Summary> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_trace_csv(trace, &dir.join("trace.csv"))?;
    let summary = summarize(trace);
    let path = dir.join("summary.json");
    std::fs::write(&path, serde_json::to_string_pretty(&summary)?).map_err(|e| Error::io(&path, e))?;
    Ok(summary)
}

// ---------------------------------------------------------------------------
// Configuration

/// A built-in model name, a path to a model document, or an inline document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelRef {
    Named(String),
    Inline(Box<ModelDef>),
}

impl ModelRef {
    pub fn load(&self) -> Result<ModelDef> {
        match self {
            ModelRef::Named(s) => ModelDef::load(s),
            ModelRef::Inline(d) => Ok((**d).clone()),
        }
    }
}

/// Parameters for synthesizing gains as part of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SynthesizeDef {
    pub alpha: f64,
    /// Half-width of the enforced input box; defaults to the saturation level.
    #[serde(default)]
    pub input_bound: Option<f64>,
    #[serde(default = "default_eps_p")]
    pub eps_p: f64,
    #[serde(default = "default_tol")]
    pub tol: f64,
    /// Certify a smaller input box when the requested one is infeasible.
    #[serde(default = "default_true")]
    pub fallback: bool,
    /// Stop the solver at the first point with this much slack.
    #[serde(default = "default_stop_margin")]
    pub stop_margin: Option<f64>,
    #[serde(default = "default_variable_bound")]
    pub variable_bound: f64,
    /// Condition-number cap on `P` while searching for a fallback bound.
    #[serde(default = "default_fallback_condition")]
    pub fallback_max_condition: f64,
}

fn default_eps_p() -> f64 {
    1e-6
}
fn default_tol() -> f64 {
    1e-7
}
fn default_true() -> bool {
    true
}
fn default_stop_margin() -> Option<f64> {
    Some(1e-3)
}
fn default_variable_bound() -> f64 {
    1e4
}
fn default_fallback_condition() -> f64 {
    1e3
}

impl SynthesizeDef {
    pub fn new(alpha: f64) -> Self {
        Self {
            alpha,
            input_bound: None,
            eps_p: default_eps_p(),
            tol: default_tol(),
            fallback: true,
            stop_margin: default_stop_margin(),
            variable_bound: default_variable_bound(),
            fallback_max_condition: default_fallback_condition(),
        }
    }

    pub fn options(&self) -> SynthesisOptions {
        let mut o = SynthesisOptions {
            eps_p: self.eps_p,
            ..Default::default()
        };
        o.sdp.tol = self.tol;
        o.sdp.stop_margin = self.stop_margin;
        o.sdp.variable_bound = self.variable_bound;
        o
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GainsRef {
    Path(String),
    Synthesize { synthesize: SynthesizeDef },
    Inline(Box<GainsFile>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CostDef {
    pub q: Vec<Vec<f64>>,
    pub r: Vec<f64>,
    pub lambda_bar: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct GridDef {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub per_axis: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct OutputDef {
    #[serde(default)]
    pub dir: Option<String>,
    /// Also write the gains used by the run.
    #[serde(default)]
    pub write_gains: bool,
}

/// Experiment document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct SimConfig {
    pub model: ModelRef,
    pub gains: GainsRef,
    pub cost: CostDef,
    pub basis: String,
    pub learner: LearnerGainsDef,
    pub x0: Vec<f64>,
    pub xhat0: Vec<f64>,
    pub wc0: Vec<f64>,
    pub gamma0: Vec<Vec<f64>>,
    pub extrapolation: GridDef,
    pub h: f64,
    pub horizon: f64,
    #[serde(default)]
    pub output: OutputDef,
}

impl SimConfig {
    /// The two-state benchmark experiment.
    pub fn reproduce_example(alpha: f64, horizon: f64, h: f64) -> Self {
        let mut synth = SynthesizeDef::new(alpha);
        synth.input_bound = Some(3.0);
        Self {
            model: ModelRef::Named("example2state".into()),
            gains: GainsRef::Synthesize { synthesize: synth },
            cost: CostDef {
                q: vec![vec![5.0, 0.0], vec![0.0, 5.0]],
                r: vec![1.0],
                lambda_bar: 3.0,
            },
            basis: "quadratic2d".into(),
            learner: LearnerGainsDef {
                kc: 0.01,
                gamma_norm: 0.7,
                beta: 0.2,
            },
            x0: vec![-1.0, 1.0],
            xhat0: vec![2.0, 1.5],
            wc0: vec![0.4, 0.2, 0.8],
            gamma0: (0..3).map(|i| (0..3).map(|j| if i == j { 50.0 } else { 0.0 }).collect()).collect(),
            extrapolation: GridDef {
                lower: vec![-1.0, -1.0],
                upper: vec![1.0, 1.0],
                per_axis: 10,
            },
            h,
            horizon,
            output: OutputDef::default(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).unwrap_or_default();
        Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Loads model and gains (synthesizing if requested) and builds the run.
    pub fn resolve<T: Real>(&self) -> Result<Simulation<T>> {
        let model: ControlAffineModel<T> = self.model.load()?.build()?;
        let mut notes = vec![
            "normalization gain gamma carries the value listed as nu".to_string(),
            "policy scale uses the saturation level lambdaBar".to_string(),
        ];
        let (gains, certified) = resolve_gains(&model, &self.gains, self.cost.lambda_bar, &mut notes)?;

        let mat = |rows: &Vec<Vec<f64>>, what: &str| {
            linalg::matrix_from_rows(rows)
                .map(|m| linalg::from_f64_matrix::<T>(&m))
                .ok_or_else(|| Error::Config(format!("{what}: ragged or empty matrix")))
        };
        let vec = |v: &Vec<f64>| DVector::from_iterator(v.len(), v.iter().map(|&x| lit::<T>(x)));
        let cost = CostSpec::new(mat(&self.cost.q, "cost.q")?, vec(&self.cost.r), lit(self.cost.lambda_bar))?;
        let basis = BasisSpec::parse(&self.basis)?.build::<T>(model.n())?;
        let learner = LearnerGains::from_def(&self.learner)?;
        let extrapolation =
            ExtrapolationSet::grid(&self.extrapolation.lower, &self.extrapolation.upper, self.extrapolation.per_axis)?;
        let critic = CriticState::new(vec(&self.wc0), mat(&self.gamma0, "gamma0")?)?;
        let initial = SimState {
            x: vec(&self.x0),
            xhat: vec(&self.xhat0),
            critic,
            j: T::zero(),
        };
        let mut sim = Simulation::new(
            model,
            gains,
            cost,
            basis,
            learner,
            extrapolation,
            initial,
            lit(self.h),
            lit(self.horizon),
        )
        .map_err(|e| match e {
            Error::Dimension { .. } | Error::Parameter { .. } => Error::Config(e.to_string()),
            other => other,
        })?;
        sim.metadata = RunMetadata {
            config_hash: self.hash(),
            notes,
            certified_input_bound: certified,
            lambda_bar: self.cost.lambda_bar,
        };
        Ok(sim)
    }
}

fn resolve_gains<T: Real>(
    model: &ControlAffineModel<T>,
    gains: &GainsRef,
    lambda_bar: f64,
    notes: &mut Vec<String>,
) -> Result<(ObserverGains<T>, Option<f64>)> {
    match gains {
        GainsRef::Path(p) => {
            notes.push(format!("gains loaded from {p} without re-running synthesis"));
            Ok((ObserverGains::load(Path::new(p))?, None))
        }
        GainsRef::Inline(file) => {
            notes.push("inline gains used without re-running synthesis".into());
            Ok((ObserverGains::from_file(file)?, None))
        }
        GainsRef::Synthesize { synthesize } => {
            let bound = synthesize.input_bound.unwrap_or(lambda_bar);
            let (g, b) = synthesize_with_fallback(model, synthesize, bound, notes)?;
            Ok((g, Some(b)))
        }
    }
}

/// Synthesizes at `±bound`; when that is infeasible and fallback is
/// enabled, certifies the largest input box whose `P` stays well
/// conditioned. Gains at the bare feasibility edge are huge and make the
/// fixed-step run numerically stiff.
pub fn synthesize_with_fallback<T: Real>(
    model: &ControlAffineModel<T>,
    def: &SynthesizeDef,
    bound: f64,
    notes: &mut Vec<String>,
) -> Result<(ObserverGains<T>, f64)> {
    let options = def.options();
    let alpha = lit::<T>(def.alpha);
    match synthesis::synthesize(model, alpha, &input_vertices(model.m(), lit(bound)), &options) {
        Ok(g) => {
            notes.push(format!("observer LMI certified at the input vertices ±{bound}"));
            Ok((g, bound))
        }
        Err(err @ Error::Infeasible { .. }) if def.fallback => {
            log::warn!("observer LMI infeasible at ±{bound}: {err}; searching for a certifiable input box");
            let mut capped = options;
            capped.max_condition = def.fallback_max_condition;
            let found = synthesis::certifiable_input_bound(model, alpha, lit(bound), 1e-3, 0.0, &capped)?;
            let Some(b) = found.map(|b| b.to_f64_lossy()) else {
                return Err(err);
            };
            let g = synthesis::synthesize(model, alpha, &input_vertices(model.m(), lit(b)), &capped)?;
            notes.push(format!(
                "observer LMI infeasible at ±{bound} for alpha = {}; gains certified for |u| <= {b:.3} instead \
                 (cond(P) <= {:e})",
                def.alpha, def.fallback_max_condition
            ));
            Ok((g, b))
        }
        Err(e) => Err(e),
    }
}

/// Writes gains next to a run.
pub fn write_gains<T: Real>(gains: &ObserverGains<T>, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    gains.save(&dir.join("gains.json"))
}

/// Builds a single-model simulation from a linear plant, for tests and
/// ablations.
pub fn linear_model<T: Real>(a: DMatrix<T>, b: DMatrix<T>, c: DMatrix<T>, half_width: T) -> Result<ControlAffineModel<T>> {
    use crate::model::{BoundsOptions, LinearDynamics, OperatingBox};
    let n = a.nrows();
    ControlAffineModel::with_derived_bounds(
        Arc::new(LinearDynamics::new(a, b)?),
        c,
        OperatingBox::symmetric(n, half_width),
        &BoundsOptions::default(),
    )
}

/// `max_k |u_k|` over the trace.
pub fn max_abs_control<T: Real>(trace: &SimTrace<T>) -> T {
    trace
        .records
        .iter()
        .map(|r| r.u.amax())
        .fold(T::zero(), |a, b| a.max(b))
}

/// Largest eigenvalue of `Γ` over the trace.
pub fn max_gamma<T: Real>(trace: &SimTrace<T>) -> T {
    trace.records.iter().map(|r| r.gamma_max).fold(T::zero(), |a, b| a.max(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::critic::Monomials;

    fn scalar_decay(h: f64, horizon: f64) -> Simulation<f64> {
        let m = linear_model(
            DMatrix::from_element(1, 1, -1.0),
            DMatrix::from_element(1, 1, 0.0),
            DMatrix::from_element(1, 1, 1.0),
            2.0,
        )
        .unwrap();
        let gains = ObserverGains::zero(1, 1, 1.0);
        let cost = CostSpec::new(DMatrix::from_element(1, 1, 1.0), DVector::from_element(1, 1.0), 1.0).unwrap();
        let basis = Box::new(Monomials::new(1, &[2]).unwrap());
        let learner = LearnerGains::new(1.0, 1.0, 0.1).unwrap();
        let ext = ExtrapolationSet::grid(&[-1.0], &[1.0], 5).unwrap();
        let initial = SimState {
            x: DVector::from_element(1, 1.0),
            xhat: DVector::from_element(1, 0.5),
            critic: CriticState::new(DVector::zeros(1), DMatrix::identity(1, 1)).unwrap(),
            j: 0.0,
        };
        Simulation::new(m, gains, cost, basis, learner, ext, initial, h, horizon).unwrap()
    }

    #[test]
    fn exponential_decay_oracle() {
        let sim = scalar_decay(0.1, 1.0);
        assert_eq!(sim.steps, 10);
        let trace = sim.run().unwrap();
        assert_eq!(trace.records.len(), 10);
        let x = trace.records.last().unwrap().x[0];
        assert!((x - (-1.0f64).exp()).abs() <= 1e-6, "{x}");
        assert!((trace.records.last().unwrap().t - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_dynamics_accumulate_state_cost() {
        let m = linear_model(
            DMatrix::zeros(1, 1),
            DMatrix::zeros(1, 1),
            DMatrix::from_element(1, 1, 1.0),
            2.0,
        )
        .unwrap();
        let cost = CostSpec::new(DMatrix::from_element(1, 1, 2.0), DVector::from_element(1, 1.0), 1.0).unwrap();
        let initial = SimState {
            x: DVector::from_element(1, 0.5),
            xhat: DVector::from_element(1, 0.5),
            critic: CriticState::new(DVector::zeros(1), DMatrix::identity(1, 1)).unwrap(),
            j: 0.0,
        };
        let sim = Simulation::new(
            m,
            ObserverGains::zero(1, 1, 1.0),
            cost,
            Box::new(Monomials::new(1, &[2]).unwrap()),
            LearnerGains::new(1.0, 1.0, 0.1).unwrap(),
            ExtrapolationSet::grid(&[-1.0], &[1.0], 3).unwrap(),
            initial,
            0.25,
            1.0,
        )
        .unwrap();
        let trace = sim.run().unwrap();
        for (k, r) in trace.records.iter().enumerate() {
            assert_eq!(r.x[0], 0.5);
            assert!((r.j - 0.5 * 0.25 * (k as f64 + 1.0)).abs() < 1e-15);
        }
    }

    #[test]
    fn single_step_horizon() {
        let sim = SimConfig::reproduce_example(2.0, 1e-3, 1e-3);
        let mut sim = sim;
        sim.gains = GainsRef::Inline(Box::new(ObserverGains::<f64>::benchmark_reference().to_file()));
        let s = sim.resolve::<f64>().unwrap();
        let trace = s.run().unwrap();
        assert_eq!(trace.records.len(), 1);
        let u0 = s.control(&s.initial).unwrap();
        let expected = (s.cost.state_cost(&s.initial.x) + control_penalty(&s.cost, &u0).unwrap()) * 1e-3;
        assert!((trace.records[0].j - expected).abs() < 1e-3 * expected);
    }

    #[test]
    fn empty_trace_exports_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let trace: SimTrace<f64> = SimTrace {
            n: 2,
            m: 1,
            basis_len: 3,
            records: vec![],
            termination: Termination::Completed,
            metadata: RunMetadata::default(),
        };
        export(&trace, dir.path()).unwrap();
        let text = std::fs::read_to_string(dir.path().join("trace.csv")).unwrap();
        assert_eq!(text.trim(), "t,x1,x2,xhat1,xhat2,e1,e2,u1,Wc1,Wc2,Wc3,Ve,pe,J");
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let sim = scalar_decay(0.1, 1.0);
        let trace = sim.run().unwrap();
        let path = dir.path().join("trace.csv");
        write_trace_csv(&trace, &path).unwrap();
        let (header, rows) = read_trace_csv(&path).unwrap();
        assert_eq!(header, trace_header(1, 1, 1));
        for (r, row) in trace.records.iter().zip(rows.iter()) {
            assert_eq!(row[0].to_bits(), r.t.to_bits());
            assert_eq!(row[1].to_bits(), r.x[0].to_bits());
            assert_eq!(row[8].to_bits(), r.j.to_bits());
        }
    }

    #[test]
    fn config_round_trip_and_hash() {
        let cfg = SimConfig::reproduce_example(2.0, 50.0, 1e-3);
        let text = serde_json::to_string(&cfg).unwrap();
        let back: SimConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        assert_eq!(cfg.hash().len(), 64);
        let bad = text.replace("\"horizon\"", "\"horizon_s\"");
        assert!(serde_json::from_str::<SimConfig>(&bad).is_err());
    }

    #[test]
    fn invalid_step_is_rejected() {
        let mut cfg = SimConfig::reproduce_example(2.0, 1.0, 1e-3);
        cfg.gains = GainsRef::Inline(Box::new(ObserverGains::<f64>::benchmark_reference().to_file()));
        cfg.h = 0.0;
        assert!(matches!(cfg.resolve::<f64>(), Err(Error::Config(_))));
    }

    #[test]
    fn zeroed_gains_ablation_stays_visible() {
        // Without correction the estimate is pure open-loop propagation;
        // the error must not converge.
        let mut cfg = SimConfig::reproduce_example(2.0, 5.0, 1e-3);
        cfg.gains = GainsRef::Inline(Box::new(ObserverGains::<f64>::zero(2, 1, 2.0).to_file()));
        let trace = cfg.resolve::<f64>().unwrap().run().unwrap();
        let e_end = trace.records.last().map(|r| r.e.norm()).unwrap_or(f64::INFINITY);
        assert!(!trace.termination.is_completed() || e_end > 0.05, "{e_end}");
    }
}
