//! Discrete adjoint of the time-stepping scheme and the reduced gradient.
//!
//! With `Fₙ(θₙ, θₙ₊₁, uₙ) = 0` the residual of step `n`, the adjoint states
//! `p₀ … p_{N_t−1}` solve, backwards in time,
//!
//! ```text
//! (∂Fₘ₋₁/∂θₘ)ᵀ pₘ₋₁ = −∂J/∂θₘ − (∂Fₘ/∂θₘ)ᵀ pₘ ,   m = N_t … 1
//! ```
//!
//! where the second term is absent for `m = N_t`. `∂Fₘ₋₁/∂θₘ` is the
//! symmetric Newton matrix of the forward step; `∂Fₘ/∂θₘ` carries the
//! derivatives of the lagged coefficients `s(θₘ)` and `κ(θₘ)`.

use crate::error::{Error, Result};
use crate::fem::{Control, HeatModel, Trajectory};
use crate::objective::{
    self, add_velocity_step_gradient, completeness_gradient, penetration_sensitivity,
    ObjectiveWeights,
};

#[derive(Clone, Debug, PartialEq)]
pub struct AdjointTrajectory {
    /// `p₀ … p_{N_t−1}`.
    pub states: Vec<Vec<f64>>,
}

pub fn solve_adjoint(
    model: &HeatModel<'_>,
    traj: &Trajectory,
    control: &Control,
    weights: &ObjectiveWeights,
) -> Result<AdjointTrajectory> {
    let steps = traj.num_steps();
    if control.len() != steps {
        return Err(Error::InvalidInput(format!(
            "control has {} entries but the trajectory {} steps",
            control.len(),
            steps
        )));
    }
    let nodes = model.num_nodes();
    let tau = model.tau();
    let a = model.implicitness();
    let target = model.mesh.target_node;
    let penetration = penetration_sensitivity(traj, weights, model.mesh);
    let states = &traj.states;

    let mut adjoint = vec![Vec::new(); steps];
    // velocity derivative w.r.t. θₘ coming from step m → m+1
    let mut carry = vec![0.0; nodes];
    let mut lagged = None;

    for m in (1..=steps).rev() {
        let mut rhs = vec![0.0; nodes];
        rhs[target] -= penetration[m];
        if m == steps {
            for (r, g) in rhs.iter_mut().zip(completeness_gradient(model, &states[m], weights)) {
                *r -= g;
            }
        }

        let mut grad_prev = vec![0.0; nodes];
        let mut grad_here = std::mem::replace(&mut carry, vec![0.0; nodes]);
        if weights.velocity > 0.0 {
            add_velocity_step_gradient(
                model,
                &states[m - 1],
                &states[m],
                weights,
                &mut grad_prev,
                &mut grad_here,
            );
        }
        carry = grad_prev;
        rhs.iter_mut().zip(&grad_here).for_each(|(r, g)| *r -= g);

        if m < steps {
            let p = &adjoint[m];
            let (mass, stiffness) = lagged.take().expect("lagged operators of step m");
            let diff: Vec<f64> = states[m + 1].iter().zip(&states[m]).map(|(x, y)| x - y).collect();
            let blend = model.blend(&states[m], &states[m + 1]);
            let mut transposed = model.mass_derivative_contraction(&states[m], &diff, p);
            let dk = model.stiffness_derivative_contraction(&states[m], &blend, p);
            transposed.iter_mut().zip(&dk).for_each(|(t, d)| *t += tau * d);
            mass_stiffness_sub(&mass, &stiffness, tau * (1.0 - a), p, &mut transposed);
            if a < 1.0 {
                model.add_boundary_jacobian_product(&blend, p, tau * (1.0 - a), &mut transposed);
            }
            rhs.iter_mut().zip(&transposed).for_each(|(r, t)| *r -= t);
        }

        let (mass, stiffness) = model.assemble_volume(&states[m - 1]);
        let blend = model.blend(&states[m - 1], &states[m]);
        let chol = model.factor_step_jacobian(&mass, &stiffness, &blend)?;
        chol.solve_in_place(&mut rhs);
        adjoint[m - 1] = rhs;
        lagged = Some((mass, stiffness));
    }
    Ok(AdjointTrajectory { states: adjoint })
}

/// `y ← y − M p + c K p`.
fn mass_stiffness_sub(
    mass: &crate::banded::SymBand,
    stiffness: &crate::banded::SymBand,
    c: f64,
    p: &[f64],
    y: &mut [f64],
) {
    mass.mul_add(-1.0, p, y);
    if c != 0.0 {
        stiffness.mul_add(c, p, y);
    }
}

/// Gradient of the reduced objective in the `τ`-weighted inner product:
/// `gₙ = β_control uₙ − ∫_spot η pd pₙ r ds`.
pub fn reduced_gradient(
    model: &HeatModel<'_>,
    adjoint: &AdjointTrajectory,
    control: &Control,
    weights: &ObjectiveWeights,
) -> Vec<f64> {
    let load = model.laser_load();
    control
        .values()
        .iter()
        .zip(&adjoint.states)
        .map(|(u, p)| {
            let flux: f64 = p.iter().zip(load).map(|(a, b)| a * b).sum();
            weights.control * u - flux
        })
        .collect()
}

/// Reduced objective `j(u)`: forward solve followed by evaluation.
pub fn reduced_objective(model: &HeatModel<'_>, control: &Control, weights: &ObjectiveWeights) -> Result<f64> {
    let traj = model.solve_forward(control)?;
    Ok(objective::evaluate(model, control, &traj, weights)?.total)
}

/// Objective value, report and gradient at `control`.
pub fn value_and_gradient(
    model: &HeatModel<'_>,
    control: &Control,
    weights: &ObjectiveWeights,
) -> Result<(objective::ObjectiveReport, Vec<f64>, Trajectory)> {
    let traj = model.solve_forward(control)?;
    let report = objective::evaluate(model, control, &traj, weights)?;
    let adjoint = solve_adjoint(model, &traj, control, weights)?;
    let gradient = reduced_gradient(model, &adjoint, control, weights);
    Ok((report, gradient, traj))
}

/// Finite difference of `j` along `direction`: central where both trial
/// controls stay in `[0, 1]`, one-sided otherwise.
pub fn fd_gradient_oracle(
    model: &HeatModel<'_>,
    weights: &ObjectiveWeights,
    control: &Control,
    direction: &[f64],
    h: f64,
) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::InvalidInput(format!("step {h} must be positive")));
    }
    if direction.len() != control.len() {
        return Err(Error::InvalidInput("direction length differs from control".into()));
    }
    let shifted = |sign: f64| -> Option<Vec<f64>> {
        let v: Vec<f64> = control
            .values()
            .iter()
            .zip(direction)
            .map(|(u, d)| u + sign * h * d)
            .collect();
        v.iter().all(|x| (0.0..=1.0).contains(x)).then_some(v)
    };
    let tau = control.tau();
    let j = |values: Vec<f64>| reduced_objective(model, &Control::new(values, tau)?, weights);
    match (shifted(1.0), shifted(-1.0)) {
        (Some(plus), Some(minus)) => Ok((j(plus)? - j(minus)?) / (2.0 * h)),
        (Some(plus), None) => Ok((j(plus)? - reduced_objective(model, control, weights)?) / h),
        (None, Some(minus)) => Ok((reduced_objective(model, control, weights)? - j(minus)?) / h),
        (None, None) => Err(Error::InvalidInput(
            "direction leaves the box on both sides".into(),
        )),
    }
}

/// Index-wise finite difference `∂j/∂uₙ`.
pub fn fd_partial(
    model: &HeatModel<'_>,
    weights: &ObjectiveWeights,
    control: &Control,
    index: usize,
    h: f64,
) -> Result<f64> {
    let mut direction = vec![0.0; control.len()];
    direction[index] = 1.0;
    fd_gradient_oracle(model, weights, control, &direction, h)
}

/// Pattern of the non-smooth switches of the objective on a trajectory:
/// corridor membership and active velocity excess per step and element,
/// plus nodes above the solidus at the final time. Two trajectories with
/// equal signatures lie in the same smooth piece of `j`.
pub fn kink_signature(model: &HeatModel<'_>, traj: &Trajectory, weights: &ObjectiveWeights) -> Vec<u8> {
    let elements = model.mesh.elements.len();
    let mut sig = Vec::with_capacity(traj.num_steps() * elements + model.num_nodes());
    for w in traj.states.windows(2) {
        for e in 0..elements {
            let st = objective::element_step(model, e, &w[0], &w[1], weights.grad_eps);
            let active = st.in_corridor && st.velocity > weights.v_max;
            sig.push(st.in_corridor as u8 | (active as u8) << 1);
        }
    }
    let solidus = model.material.phase.solidus;
    sig.extend(traj.final_state().iter().map(|&t| (t > solidus) as u8));
    sig
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::SimulationParams;
    use crate::material::MaterialModel;
    use crate::mesh::{DomainSpec, Mesh};

    fn mesh() -> Mesh {
        Mesh::build(
            DomainSpec {
                radius: 2.5e-3,
                height: 0.5e-3,
                beam_radius: 0.3125e-3,
                nr: 8,
                nz: 8,
            },
            0.375e-3,
        )
        .unwrap()
    }

    fn params(steps: usize) -> SimulationParams {
        SimulationParams {
            final_time: 4e-3,
            num_steps: steps,
            ..Default::default()
        }
    }

    #[test]
    fn control_only_objective_has_zero_adjoint() {
        let mesh = mesh();
        let material = MaterialModel::default();
        let model = HeatModel::new(&mesh, &material, params(10)).unwrap();
        let weights = ObjectiveWeights {
            penetration: 0.0,
            velocity: 0.0,
            completeness: 0.0,
            ..Default::default()
        };
        let u: Vec<f64> = (0..10).map(|n| 0.1 * n as f64).collect();
        let control = Control::new(u.clone(), model.tau()).unwrap();
        let traj = model.solve_forward(&control).unwrap();
        let adj = solve_adjoint(&model, &traj, &control, &weights).unwrap();
        assert!(adj.states.iter().flatten().all(|&p| p == 0.0));
        let g = reduced_gradient(&model, &adj, &control, &weights);
        for (gn, un) in g.iter().zip(&u) {
            assert!((gn - 100.0 * un).abs() < 1e-12);
        }
        let zero = Control::zeros(10, model.tau());
        let adj = solve_adjoint(&model, &model.solve_forward(&zero).unwrap(), &zero, &weights).unwrap();
        assert!(reduced_gradient(&model, &adj, &zero, &weights).iter().all(|&g| g == 0.0));
    }

    #[test]
    fn quadratic_objective_matches_differences() {
        let mesh = mesh();
        let material = MaterialModel::default();
        let model = HeatModel::new(&mesh, &material, params(10)).unwrap();
        let weights = ObjectiveWeights {
            penetration: 0.0,
            velocity: 0.0,
            completeness: 0.0,
            ..Default::default()
        };
        let control = Control::new(vec![0.4; 10], model.tau()).unwrap();
        for n in [0, 5, 9] {
            let fd = fd_partial(&model, &weights, &control, n, 1e-6).unwrap();
            assert!((fd - 100.0 * 0.4 * model.tau()).abs() < 1e-9);
        }
        // one-sided at the upper bound
        let full = Control::new(vec![1.0; 10], model.tau()).unwrap();
        let fd = fd_partial(&model, &weights, &full, 3, 1e-6).unwrap();
        assert!((fd - 100.0 * model.tau()).abs() < 1e-6 * 100.0 * model.tau());
        assert!(fd_partial(&model, &weights, &full, 3, 0.0).is_err());
    }

    fn directional_check(weights: ObjectiveWeights, control: Vec<f64>, steps: usize) {
        let mesh = mesh();
        let material = MaterialModel::default();
        let model = HeatModel::new(&mesh, &material, params(steps)).unwrap();
        let control = Control::new(control, model.tau()).unwrap();
        let (_, g, _) = value_and_gradient(&model, &control, &weights).unwrap();
        let direction: Vec<f64> = (0..steps).map(|n| ((n * 7 % 5) as f64 - 2.0) / 2.0).collect();
        let adjoint: f64 = model.tau() * g.iter().zip(&direction).map(|(a, b)| a * b).sum::<f64>();
        let fd = fd_gradient_oracle(&model, &weights, &control, &direction, 1e-6).unwrap();
        assert!(
            (adjoint - fd).abs() <= 1e-4 * fd.abs().max(1e-12),
            "adjoint {adjoint:e} vs fd {fd:e}"
        );
    }

    #[test]
    fn penetration_gradient_matches_differences() {
        let weights = ObjectiveWeights {
            velocity: 0.0,
            completeness: 0.0,
            ..Default::default()
        };
        directional_check(weights, (0..20).map(|n| 0.3 + 0.02 * n as f64).collect(), 20);
    }

    #[test]
    fn completeness_gradient_matches_differences() {
        let weights = ObjectiveWeights {
            penetration: 0.0,
            velocity: 0.0,
            completeness: 1e-6,
            control: 0.0,
            ..Default::default()
        };
        directional_check(weights, vec![0.7; 20], 20);
    }

    #[test]
    fn full_objective_gradient_matches_differences_off_kinks() {
        let mesh = mesh();
        let material = MaterialModel::default();
        let steps = 20;
        let model = HeatModel::new(&mesh, &material, params(steps)).unwrap();
        let weights = ObjectiveWeights {
            completeness: 1e-6,
            velocity: 1e10,
            v_max: 1e-3,
            ..Default::default()
        };
        let u: Vec<f64> = (0..steps).map(|n| if n < 8 { 1.0 } else { 0.2 }).collect();
        let control = Control::new(u, model.tau()).unwrap();
        let (report, g, traj) = value_and_gradient(&model, &control, &weights).unwrap();
        assert!(report.velocity > 0.0, "{report:?}");
        let base = kink_signature(&model, &traj, &weights);
        let h = 1e-7;
        let mut checked = 0;
        for n in [2, 9, 12, 15] {
            let mut d = vec![0.0; steps];
            d[n] = 1.0;
            let same_piece = [-h, h].iter().all(|s| {
                let mut v = control.values().to_vec();
                v[n] += s;
                let c = Control::new(v.iter().map(|x| x.clamp(0.0, 1.0)).collect(), model.tau()).unwrap();
                kink_signature(&model, &model.solve_forward(&c).unwrap(), &weights) == base
            });
            if !same_piece {
                continue;
            }
            let fd = fd_gradient_oracle(&model, &weights, &control, &d, h).unwrap();
            let adj = model.tau() * g[n];
            assert!((adj - fd).abs() <= 1e-4 * fd.abs().max(1e-14), "n={n}: {adj:e} vs {fd:e}");
            checked += 1;
        }
        assert!(checked >= 2);
    }
}
