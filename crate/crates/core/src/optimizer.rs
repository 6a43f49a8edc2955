//! Projected gradient descent on the box `[0, 1]^{N_t}` with Armijo
//! backtracking.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::adjoint::{reduced_gradient, solve_adjoint};
use crate::error::{Error, Result};
use crate::fem::{Control, HeatModel, Trajectory};
use crate::objective::{self, ObjectiveReport, ObjectiveWeights};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    /// Armijo constant.
    pub sigma: f64,
    /// Step tried first in every line search, or only in the first one
    /// when `warm_start` is set.
    pub initial_step: f64,
    /// Start each later line search from twice the last accepted step.
    pub warm_start: bool,
    pub backtrack_factor: f64,
    pub tol_grad: f64,
    pub tol_control: f64,
    pub tol_descent_rate: f64,
    pub max_iterations: usize,
    /// The line search gives up below this step.
    pub min_step: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            sigma: 1e-4,
            initial_step: 1.0,
            warm_start: true,
            backtrack_factor: 0.5,
            tol_grad: 1e-5,
            tol_control: 1e-8,
            tol_descent_rate: 1e-4,
            max_iterations: 100,
            min_step: 1e-12,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("optimizer: {what}")));
        if !(self.sigma > 0.0 && self.sigma < 1.0) {
            return bad("sigma must lie in (0, 1)");
        }
        if !(self.backtrack_factor > 0.0 && self.backtrack_factor < 1.0) {
            return bad("backtrack_factor must lie in (0, 1)");
        }
        let positive = [
            self.initial_step,
            self.tol_grad,
            self.tol_control,
            self.tol_descent_rate,
            self.min_step,
        ];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return bad("step sizes and tolerances must be positive");
        }
        if self.max_iterations == 0 {
            return bad("max_iterations must be at least 1");
        }
        Ok(())
    }
}

/// Componentwise clamp to `[0, 1]`.
pub fn project_box(u: &[f64]) -> Vec<f64> {
    u.iter().map(|v| v.clamp(0.0, 1.0)).collect()
}

/// Projection of the gradient onto the tangent cone of the box at `u`: a
/// component on a bound is kept only if a step along `−g` stays feasible.
pub fn project_tangent_cone(g: &[f64], u: &[f64]) -> Result<Vec<f64>> {
    if g.len() != u.len() {
        return Err(Error::InvalidInput("gradient and control lengths differ".into()));
    }
    g.iter()
        .zip(u)
        .map(|(&g, &u)| {
            if !(0.0..=1.0).contains(&u) {
                Err(Error::InvalidInput(format!("control value {u} outside [0, 1]")))
            } else if u == 0.0 {
                Ok(g.min(0.0))
            } else if u == 1.0 {
                Ok(g.max(0.0))
            } else {
                Ok(g)
            }
        })
        .collect()
}

/// `‖v‖_τ = (τ Σ vₙ²)^½`.
pub fn tau_norm(v: &[f64], tau: f64) -> f64 {
    (tau * v.iter().map(|x| x * x).sum::<f64>()).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    ProjectedGradient,
    ControlChange,
    DescentRate,
    MaxIterations,
    Stagnation,
}

impl fmt::Display for Termination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::ProjectedGradient => "projected_gradient",
            Self::ControlChange => "control_change",
            Self::DescentRate => "descent_rate",
            Self::MaxIterations => "max_iterations",
            Self::Stagnation => "stagnation",
        })
    }
}

/// State of the iterate after `iteration` accepted steps. Record 0 is the
/// initial guess with `step = 0`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub report: ObjectiveReport,
    /// Accepted step size.
    pub step: f64,
    /// `‖P_A g‖_τ` at this iterate.
    pub projected_grad_norm: f64,
    /// Number of objective evaluations spent in the line search.
    pub trials: usize,
    pub stop: Option<Termination>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct DescentTrace {
    pub records: Vec<IterationRecord>,
}

impl DescentTrace {
    pub const CSV_HEADER: &'static str = "iteration,J_penetration,J_velocity,J_completeness,J_control,J_total,step,projected_grad_norm,trials,reason";

    pub fn termination(&self) -> Option<Termination> {
        self.records.last().and_then(|r| r.stop)
    }

    /// Number of accepted steps.
    pub fn iterations(&self) -> usize {
        self.records.last().map_or(0, |r| r.iteration)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            let j = &r.report;
            out.push_str(&format!(
                "{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{},{}\n",
                r.iteration,
                j.penetration,
                j.velocity,
                j.completeness,
                j.control,
                j.total,
                r.step,
                r.projected_grad_norm,
                r.trials,
                r.stop.map(|s| s.to_string()).unwrap_or_default()
            ));
        }
        out
    }
}

/// A reduced objective `j(u)` on `[0, 1]^N` with gradients in the
/// `τ`-weighted inner product.
pub trait Problem {
    /// Whatever the gradient needs from the evaluation, e.g. the trajectory.
    type State;

    fn tau(&self) -> f64;

    fn evaluate(&self, u: &[f64]) -> Result<(ObjectiveReport, Self::State)>;

    fn gradient(&self, u: &[f64], state: &Self::State) -> Result<Vec<f64>>;
}

/// The welding problem: forward solve, objective and discrete adjoint.
pub struct WeldProblem<'m, 'a> {
    pub model: &'m HeatModel<'a>,
    pub weights: ObjectiveWeights,
}

impl Problem for WeldProblem<'_, '_> {
    type State = Trajectory;

    fn tau(&self) -> f64 {
        self.model.tau()
    }

    fn evaluate(&self, u: &[f64]) -> Result<(ObjectiveReport, Trajectory)> {
        let control = Control::new(u.to_vec(), self.tau())?;
        let traj = self.model.solve_forward(&control)?;
        let report = objective::evaluate(self.model, &control, &traj, &self.weights)?;
        Ok((report, traj))
    }

    fn gradient(&self, u: &[f64], traj: &Trajectory) -> Result<Vec<f64>> {
        let control = Control::new(u.to_vec(), self.tau())?;
        let adjoint = solve_adjoint(self.model, traj, &control, &self.weights)?;
        Ok(reduced_gradient(self.model, &adjoint, &control, &self.weights))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Descent {
    pub control: Vec<f64>,
    pub report: ObjectiveReport,
    pub trace: DescentTrace,
}

/// Projected gradient descent from `initial`.
///
/// A trial `P(u − α g)` is accepted when
/// `j(trial) ≤ j(u) − σ ⟨g, u − trial⟩_τ`, which is `σ α ‖g‖²_τ` whenever
/// no component is clipped. Trials whose forward solve fails count as
/// rejected. When a warm-started search ends in a stopping criterion, the
/// search is repeated once from `initial_step`.
pub fn descend<P: Problem>(problem: &P, initial: &[f64], config: &OptimizerConfig) -> Result<Descent> {
    config.validate()?;
    if initial.iter().any(|u| !(0.0..=1.0).contains(u)) {
        return Err(Error::InvalidInput("initial control outside [0, 1]".into()));
    }
    let tau = problem.tau();
    let mut u = initial.to_vec();
    let (mut report, mut state) = problem.evaluate(&u)?;
    let mut trace = DescentTrace::default();
    let mut step = config.initial_step;
    let mut iteration = 0;
    let mut accepted_step = 0.0;
    let mut trials = 0;

    loop {
        let g = problem.gradient(&u, &state)?;
        let grad_norm = tau_norm(&project_tangent_cone(&g, &u)?, tau);
        let mut record = IterationRecord {
            iteration,
            report,
            step: accepted_step,
            projected_grad_norm: grad_norm,
            trials,
            stop: None,
        };
        if grad_norm < config.tol_grad {
            record.stop = Some(Termination::ProjectedGradient);
        } else if iteration >= config.max_iterations {
            record.stop = Some(Termination::MaxIterations);
        }
        if record.stop.is_some() {
            trace.records.push(record);
            break;
        }
        trace.records.push(record);

        let search_from = |first: f64| {
            let mut step = first;
            let mut trials = 0;
            while step >= config.min_step {
                let trial = project_box(&gradient_step(&u, &g, step));
                let change = diff(&u, &trial);
                let predicted: f64 = tau * g.iter().zip(&change).map(|(a, b)| a * b).sum::<f64>();
                trials += 1;
                if let Ok((r, s)) = problem.evaluate(&trial) {
                    if r.total <= report.total - config.sigma * predicted {
                        let rate = descent_rate(report.total, r.total);
                        let change_norm = tau_norm(&change, tau);
                        let stop = if change_norm < config.tol_control {
                            Some(Termination::ControlChange)
                        } else if rate < config.tol_descent_rate {
                            Some(Termination::DescentRate)
                        } else {
                            None
                        };
                        return (Some(Accepted { control: trial, report: r, state: s, step, stop }), trials);
                    }
                }
                step *= config.backtrack_factor;
            }
            (None, trials)
        };
        let (mut found, mut spent) = search_from(step);
        // A warm-started search stalls at kinks of the objective; before
        // stopping, retry once from the full initial step.
        let stalled = found.as_ref().is_none_or(|a| a.stop.is_some());
        if stalled && config.warm_start && step < config.initial_step {
            let (retry, more) = search_from(config.initial_step);
            spent += more;
            if retry.is_some() {
                found = retry;
            }
        }
        trials = spent;
        let Some(accepted) = found else {
            trace.records.last_mut().expect("record pushed").stop = Some(Termination::Stagnation);
            break;
        };
        u = accepted.control;
        report = accepted.report;
        state = accepted.state;
        iteration += 1;
        accepted_step = accepted.step;
        step = if config.warm_start {
            2.0 * accepted.step
        } else {
            config.initial_step
        };
        let stop = accepted.stop;
        if let Some(stop) = stop {
            let g = problem.gradient(&u, &state)?;
            trace.records.push(IterationRecord {
                iteration,
                report,
                step: accepted_step,
                projected_grad_norm: tau_norm(&project_tangent_cone(&g, &u)?, tau),
                trials,
                stop: Some(stop),
            });
            break;
        }
    }
    Ok(Descent {
        control: u,
        report,
        trace,
    })
}

struct Accepted<S> {
    control: Vec<f64>,
    report: ObjectiveReport,
    state: S,
    step: f64,
    stop: Option<Termination>,
}

/// Relative decrease `(j − j_trial) / |j|`; infinite for a decrease from 0.
fn descent_rate(j: f64, j_trial: f64) -> f64 {
    let decrease = j - j_trial;
    if j != 0.0 {
        decrease / j.abs()
    } else if decrease > 0.0 {
        f64::INFINITY
    } else {
        0.0
    }
}

/// `u − step g`.
fn gradient_step(u: &[f64], g: &[f64], step: f64) -> Vec<f64> {
    u.iter().zip(g).map(|(u, g)| u - step * g).collect()
}

/// `u − trial`.
fn diff(u: &[f64], trial: &[f64]) -> Vec<f64> {
    u.iter().zip(trial).map(|(a, b)| a - b).collect()
}
