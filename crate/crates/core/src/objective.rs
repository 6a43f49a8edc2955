//! Penalty terms of the welding objective and the reported welding depth.
//!
//! The velocity and indicator are element-wise constants: the P1 gradient is
//! constant per triangle and temperatures enter through element averages.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{Control, HeatModel, Trajectory};
use crate::material::MaterialModel;
use crate::mesh::Mesh;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectiveWeights {
    pub penetration: f64,
    pub velocity: f64,
    pub completeness: f64,
    pub control: f64,
    /// Exponent of the discrete time norm at the target point.
    pub p: f64,
    /// Height of the target point above the bottom face (m).
    pub z_target: f64,
    /// Target for the time norm of the temperature at the target point (K).
    pub target_temperature: f64,
    /// Admissible solidification speed (m/s).
    pub v_max: f64,
    /// Regularization of the temperature gradient norm (K/m).
    pub grad_eps: f64,
}

impl Default for ObjectiveWeights {
    fn default() -> Self {
        Self {
            penetration: 1e-2,
            velocity: 8e17,
            completeness: 1e-12,
            control: 1e2,
            p: 20.0,
            z_target: 0.375e-3,
            target_temperature: 1048.0,
            v_max: 0.2,
            grad_eps: 10.0,
        }
    }
}

impl ObjectiveWeights {
    pub fn validate(&self) -> Result<()> {
        let betas = [self.penetration, self.velocity, self.completeness, self.control];
        if betas.iter().any(|b| !(*b >= 0.0)) {
            return Err(Error::Config("objective weights must be nonnegative".into()));
        }
        if !(self.p >= 2.0) {
            return Err(Error::Config(format!("p = {} must be at least 2", self.p)));
        }
        if !(self.v_max > 0.0 && self.grad_eps > 0.0) {
            return Err(Error::Config("v_max and grad_eps must be positive".into()));
        }
        Ok(())
    }

    /// Target making the time norm at least reach `temperature` at its peak.
    pub fn compensated_target(temperature: f64, num_steps: usize, p: f64) -> f64 {
        (num_steps as f64).powf(1.0 / p) * temperature
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveReport {
    pub penetration: f64,
    pub velocity: f64,
    pub completeness: f64,
    pub control: f64,
    pub total: f64,
    /// Depth below the top face reached by the liquidus on the axis (m).
    pub welding_depth: f64,
    /// Peak temperature at the target point (K).
    pub max_target_temperature: f64,
}

impl ObjectiveReport {
    pub const CSV_HEADER: &'static str =
        "label,welding_depth_m,J_penetration,J_velocity,J_completeness,J_control,J_total";

    pub fn csv_row(&self, label: &str) -> String {
        format!(
            "{label},{:.8e},{:.10e},{:.10e},{:.10e},{:.10e},{:.10e}",
            self.welding_depth,
            self.penetration,
            self.velocity,
            self.completeness,
            self.control,
            self.total
        )
    }
}

/// Discrete `l^p` norm `(Σ |xₙ|^p)^{1/p}`, computed as `m (Σ (|xₙ|/m)^p)^{1/p}`.
pub fn lp_norm_in_time(samples: &[f64], p: f64) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(Error::InvalidInput(format!("p = {p} must be at least 1")));
    }
    if samples.is_empty() {
        return Err(Error::InvalidInput("empty sample sequence".into()));
    }
    let peak = samples.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if peak == 0.0 {
        return Ok(0.0);
    }
    let sum: f64 = samples.iter().map(|x| (x.abs() / peak).powf(p)).sum();
    Ok(peak * sum.powf(1.0 / p))
}

/// Checks `max |xₙ| ≤ ‖x‖_p ≤ N^{1/p} max |xₙ|` for the computed norm.
pub fn p_norm_inequality_holds(samples: &[f64], p: f64) -> Result<bool> {
    let lp = lp_norm_in_time(samples, p)?;
    let peak = samples.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    Ok(peak <= lp && lp <= (samples.len() as f64).powf(1.0 / p) * peak)
}

/// Target-node temperatures `θ₁ … θ_{N_t}`.
pub fn target_samples(traj: &Trajectory, mesh: &Mesh) -> Vec<f64> {
    traj.states[1..].iter().map(|s| s[mesh.target_node]).collect()
}

fn check_target(mesh: &Mesh, weights: &ObjectiveWeights) -> Result<()> {
    let [r, z] = mesh.nodes[mesh.target_node];
    if r != 0.0 || (z - weights.z_target).abs() > 1e-9 * mesh.spec.height {
        return Err(Error::Config(format!(
            "mesh target node at (r, z) = ({r:e}, {z:e}) does not match z_target = {:e}",
            weights.z_target
        )));
    }
    Ok(())
}

pub fn j_penetration(traj: &Trajectory, weights: &ObjectiveWeights, mesh: &Mesh) -> Result<f64> {
    check_target(mesh, weights)?;
    let lp = lp_norm_in_time(&target_samples(traj, mesh), weights.p)?;
    Ok(0.5 * weights.penetration * (lp - weights.target_temperature).powi(2))
}

/// `∂J_penetration/∂θₘ(target)` for `m = 0 … N_t` (zero at `m = 0`).
pub fn penetration_sensitivity(traj: &Trajectory, weights: &ObjectiveWeights, mesh: &Mesh) -> Vec<f64> {
    let samples = target_samples(traj, mesh);
    let mut out = vec![0.0; traj.states.len()];
    let lp = match lp_norm_in_time(&samples, weights.p) {
        Ok(v) if v > 0.0 => v,
        _ => return out,
    };
    let outer = weights.penetration * (lp - weights.target_temperature);
    for (m, &x) in samples.iter().enumerate() {
        out[m + 1] = outer * (x.abs() / lp).powf(weights.p - 1.0) * x.signum();
    }
    out
}

/// Element-wise quantities of one time step needed by the velocity term.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ElementStep {
    /// Average of `θₙ₊₁ − θₙ` over the element.
    pub mean_change: f64,
    /// `‖∇θₙ₊ₐ‖` on the element.
    pub grad_norm: f64,
    /// `∇θₙ₊ₐ` on the element.
    pub grad: [f64; 2],
    pub velocity: f64,
    /// Element average of `θₙ` is at least the solidus and that of `θₙ₊₁`
    /// stays below the liquidus.
    pub in_corridor: bool,
}

/// Speed of the isotherm through element `e`, positive while cooling:
/// `−Δθ / (τ (‖∇θₙ₊ₐ‖ + ε))`.
pub fn isotherm_velocity(
    model: &HeatModel<'_>,
    e: usize,
    theta_n: &[f64],
    theta_next: &[f64],
    grad_eps: f64,
) -> f64 {
    element_step(model, e, theta_n, theta_next, grad_eps).velocity
}

pub fn element_step(
    model: &HeatModel<'_>,
    e: usize,
    theta_n: &[f64],
    theta_next: &[f64],
    grad_eps: f64,
) -> ElementStep {
    let nodes = model.mesh.elements[e];
    let a = model.implicitness();
    let shape = model.element_shape_gradients(e);
    let mut grad = [0.0; 2];
    let (mut mean_n, mut mean_next) = (0.0, 0.0);
    for k in 0..3 {
        let (x, y) = (theta_n[nodes[k]], theta_next[nodes[k]]);
        let blend = a * y + (1.0 - a) * x;
        grad[0] += blend * shape[k][0];
        grad[1] += blend * shape[k][1];
        mean_n += x / 3.0;
        mean_next += y / 3.0;
    }
    let grad_norm = grad[0].hypot(grad[1]);
    let mean_change = mean_next - mean_n;
    let phase = model.material.phase;
    ElementStep {
        mean_change,
        grad_norm,
        grad,
        velocity: -mean_change / (model.tau() * (grad_norm + grad_eps)),
        in_corridor: mean_n >= phase.solidus && mean_next < phase.liquidus,
    }
}

/// Velocity penalty of the step `n → n+1`, before the `β/2 · τ` factor.
fn velocity_step_integral(
    model: &HeatModel<'_>,
    theta_n: &[f64],
    theta_next: &[f64],
    weights: &ObjectiveWeights,
) -> f64 {
    let mesh = model.mesh;
    (0..mesh.elements.len())
        .filter_map(|e| {
            let st = element_step(model, e, theta_n, theta_next, weights.grad_eps);
            let excess = st.velocity - weights.v_max;
            (st.in_corridor && excess > 0.0).then(|| excess * excess * mesh.element_r_measure(e))
        })
        .sum()
}

pub fn j_velocity(model: &HeatModel<'_>, traj: &Trajectory, weights: &ObjectiveWeights) -> f64 {
    let sum: f64 = traj
        .states
        .windows(2)
        .map(|w| velocity_step_integral(model, &w[0], &w[1], weights))
        .sum();
    0.5 * weights.velocity * traj.tau * sum + 0.0
}

/// Adds the derivative of the velocity penalty of step `n → n+1` with
/// respect to `θₙ` and `θₙ₊₁`. The corridor indicator is held fixed.
pub fn add_velocity_step_gradient(
    model: &HeatModel<'_>,
    theta_n: &[f64],
    theta_next: &[f64],
    weights: &ObjectiveWeights,
    grad_n: &mut [f64],
    grad_next: &mut [f64],
) {
    let mesh = model.mesh;
    let tau = model.tau();
    let a = model.implicitness();
    for e in 0..mesh.elements.len() {
        let st = element_step(model, e, theta_n, theta_next, weights.grad_eps);
        let excess = st.velocity - weights.v_max;
        if !st.in_corridor || excess <= 0.0 {
            continue;
        }
        // d(β/2 τ excess² |e|_r) = β τ excess |e|_r dv
        let c = weights.velocity * tau * excess * mesh.element_r_measure(e);
        let denom = st.grad_norm + weights.grad_eps;
        let dv_dmean = -1.0 / (tau * denom);
        let dv_dnorm = -st.velocity / denom;
        let shape = model.element_shape_gradients(e);
        let nodes = mesh.elements[e];
        for k in 0..3 {
            let dnorm_dblend = if st.grad_norm > 0.0 {
                (st.grad[0] * shape[k][0] + st.grad[1] * shape[k][1]) / st.grad_norm
            } else {
                0.0
            };
            let via_norm = c * dv_dnorm * dnorm_dblend;
            let via_mean = c * dv_dmean / 3.0;
            grad_next[nodes[k]] += via_mean + a * via_norm;
            grad_n[nodes[k]] += -via_mean + (1.0 - a) * via_norm;
        }
    }
}

fn excess_over_solidus(state: &[f64], solidus: f64) -> Vec<f64> {
    state.iter().map(|t| (t - solidus).max(0.0)).collect()
}

pub fn j_completeness(model: &HeatModel<'_>, traj: &Trajectory, weights: &ObjectiveWeights) -> f64 {
    let q = excess_over_solidus(traj.final_state(), model.material.phase.solidus);
    if q.iter().all(|&v| v == 0.0) {
        return 0.0;
    }
    let mq = model.r_mass_matrix().mul(&q);
    0.5 * weights.completeness * q.iter().zip(&mq).map(|(a, b)| a * b).sum::<f64>()
}

/// `∂J_completeness/∂θ_{N_t}`.
pub fn completeness_gradient(model: &HeatModel<'_>, final_state: &[f64], weights: &ObjectiveWeights) -> Vec<f64> {
    let solidus = model.material.phase.solidus;
    let q = excess_over_solidus(final_state, solidus);
    if q.iter().all(|&v| v == 0.0) {
        return vec![0.0; q.len()];
    }
    let mq = model.r_mass_matrix().mul(&q);
    mq.iter()
        .zip(final_state)
        .map(|(m, &t)| if t > solidus { weights.completeness * m } else { 0.0 })
        .collect()
}

pub fn j_control(control: &Control, weights: &ObjectiveWeights) -> f64 {
    0.5 * weights.control * control.tau() * control.values().iter().map(|u| u * u).sum::<f64>()
}

/// Depth below the top face of the lowest axis node that reached the
/// liquidus at some time step; zero if none did.
pub fn welding_depth(traj: &Trajectory, mesh: &Mesh, material: &MaterialModel) -> f64 {
    let liquidus = material.phase.liquidus;
    mesh.axis_nodes()
        .find(|&node| traj.states.iter().any(|s| s[node] >= liquidus))
        .map(|node| mesh.spec.height - mesh.nodes[node][1])
        .unwrap_or(0.0)
}

pub fn evaluate(
    model: &HeatModel<'_>,
    control: &Control,
    traj: &Trajectory,
    weights: &ObjectiveWeights,
) -> Result<ObjectiveReport> {
    let penetration = j_penetration(traj, weights, model.mesh)?;
    let velocity = j_velocity(model, traj, weights);
    let completeness = j_completeness(model, traj, weights);
    let control_cost = j_control(control, weights);
    let max_target_temperature = traj.states[1..]
        .iter()
        .map(|s| s[model.mesh.target_node])
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(ObjectiveReport {
        penetration,
        velocity,
        completeness,
        control: control_cost,
        total: penetration + velocity + completeness + control_cost,
        welding_depth: welding_depth(traj, model.mesh, model.material),
        max_target_temperature,
    })
}
