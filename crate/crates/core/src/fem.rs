//! P1 finite elements for the axisymmetric heat equation with a θ-scheme in time.
//!
//! One time step solves, for all test functions `v`,
//!
//! ```text
//! ∫ s(θₙ)(θₙ₊₁ − θₙ) v r + τ ∫ ∇θₙ₊ₐᵀ κ(θₙ) ∇v r
//!   + τ ∫_cooled Φ(θₙ₊ₐ) v r − τ ∫_spot η pd uₙ v r = 0
//! ```
//!
//! with `θₙ₊ₐ = a θₙ₊₁ + (1 − a) θₙ`. The coefficients are lagged at `θₙ`, so
//! only the radiative part of `Φ` is nonlinear in the unknown.
//!
//! Coefficients enter through their nodal interpolants; all element integrals
//! of the resulting polynomials (with the cylindrical weight `r`) are exact.

use crate::banded::{BandCholesky, SymBand};
use crate::error::{Error, Result};
use crate::material::MaterialModel;
use crate::mesh::{BoundaryTag, Mesh};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimulationParams {
    /// Ambient and initial temperature (K).
    pub ambient: f64,
    /// Convective transfer coefficient `h` (W/(m²·K)).
    pub convection: f64,
    /// Radiative transfer coefficient `k` (W/(m²·K⁴)).
    pub radiation: f64,
    /// Maximal laser power (W).
    pub max_power: f64,
    /// Final time `T` (s).
    pub final_time: f64,
    /// Number of time steps `N_t`.
    pub num_steps: usize,
    /// Degree of implicitness in `[0, 1]`.
    pub implicitness: f64,
    /// Apply convective/radiative cooling on the bottom face as well.
    pub cooling_on_bottom: bool,
    /// Newton tolerance on the diagonally scaled residual (K).
    pub newton_tolerance: f64,
    pub newton_max_iterations: usize,
}

impl Default for SimulationParams {
    fn default() -> Self {
        Self {
            ambient: 295.0,
            convection: 20.0,
            radiation: 2.26e-9,
            max_power: 2000.0,
            final_time: 12e-3,
            num_steps: 120,
            implicitness: 1.0,
            cooling_on_bottom: true,
            newton_tolerance: 1e-9,
            newton_max_iterations: 30,
        }
    }
}

impl SimulationParams {
    pub fn tau(&self) -> f64 {
        self.final_time / self.num_steps as f64
    }

    /// Laser power density `P_max / (π r_beam²)` (W/m²).
    pub fn power_density(&self, beam_radius: f64) -> f64 {
        self.max_power / (std::f64::consts::PI * beam_radius * beam_radius)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_steps == 0 || !(self.final_time > 0.0) {
            return Err(Error::Config("need a positive final time and at least one step".into()));
        }
        if !(0.0..=1.0).contains(&self.implicitness) {
            return Err(Error::Config(format!(
                "implicitness {} outside [0, 1]",
                self.implicitness
            )));
        }
        if !(self.convection >= 0.0 && self.radiation >= 0.0 && self.max_power >= 0.0) {
            return Err(Error::Config(
                "transfer coefficients and laser power must be nonnegative".into(),
            ));
        }
        if !(self.newton_tolerance > 0.0) || self.newton_max_iterations == 0 {
            return Err(Error::Config("invalid Newton settings".into()));
        }
        Ok(())
    }
}

/// Boundary heat loss `Φ(θ) = k(θ⁴ − θ_amb⁴) + h(θ − θ_amb)` (W/m²).
#[inline]
pub fn boundary_flux(theta: f64, params: &SimulationParams) -> f64 {
    let amb = params.ambient;
    params.radiation * (theta.powi(4) - amb.powi(4)) + params.convection * (theta - amb)
}

/// `Φ'(θ) = 4kθ³ + h`.
#[inline]
pub fn boundary_flux_derivative(theta: f64, params: &SimulationParams) -> f64 {
    4.0 * params.radiation * theta.powi(3) + params.convection
}

/// Time-discrete laser power fraction `u₀ … u_{N_t−1}`.
#[derive(Clone, Debug, PartialEq)]
pub struct Control {
    values: Vec<f64>,
    tau: f64,
}

impl Control {
    pub fn new(values: Vec<f64>, tau: f64) -> Result<Self> {
        if !(tau > 0.0) {
            return Err(Error::InvalidInput(format!("time step {tau} must be positive")));
        }
        if let Some((n, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::InvalidInput(format!(
                "control value u[{n}] = {v} outside [0, 1]"
            )));
        }
        Ok(Self { values, tau })
    }

    pub fn zeros(len: usize, tau: f64) -> Self {
        Self {
            values: vec![0.0; len],
            tau,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// Nodal temperatures `θ₀ … θ_{N_t}`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
    pub tau: f64,
}

impl Trajectory {
    pub fn num_steps(&self) -> usize {
        self.states.len() - 1
    }

    pub fn final_state(&self) -> &[f64] {
        &self.states[self.states.len() - 1]
    }

    /// Temperature history `θ₀ … θ_{N_t}` at one node.
    pub fn node_history(&self, node: usize) -> Vec<f64> {
        self.states.iter().map(|s| s[node]).collect()
    }
}

/// Per-element data that does not change between time steps.
#[derive(Clone, Debug)]
struct ElementData {
    nodes: [usize; 3],
    /// `(∂λ/∂r, ∂λ/∂z)` of the barycentric coordinates.
    grads: [[f64; 2]; 3],
    /// `∫ λᵢ λⱼ λₖ r` for the coefficient-weighted mass matrix.
    mass3: [[[f64; 3]; 3]; 3],
    /// `∫ λₖ r` for the coefficient-weighted stiffness.
    weight1: [f64; 3],
}

/// Gauss points on a cooled or irradiated boundary edge.
#[derive(Clone, Debug)]
struct EdgeData {
    nodes: [usize; 2],
    /// `(λ of first node, weight × length × r)`.
    points: [(f64, f64); 4],
}

const GAUSS4: [(f64, f64); 4] = [
    (0.069_431_844_202_973_71, 0.173_927_422_568_726_93),
    (0.330_009_478_207_571_87, 0.326_072_577_431_273_07),
    (0.669_990_521_792_428_1, 0.326_072_577_431_273_07),
    (0.930_568_155_797_026_3, 0.173_927_422_568_726_93),
];

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// `∫_T Π λ` for a list of barycentric indices, divided by `2 |T|`.
fn barycentric_moment(indices: &[usize]) -> f64 {
    let mut counts = [0usize; 3];
    indices.iter().for_each(|&i| counts[i] += 1);
    counts.iter().map(|&c| factorial(c)).product::<f64>() / factorial(indices.len() + 2)
}

/// Discrete heat equation on a fixed mesh, material and parameter set.
#[derive(Clone, Debug)]
pub struct HeatModel<'a> {
    pub mesh: &'a Mesh,
    pub material: &'a MaterialModel,
    pub params: SimulationParams,
    elements: Vec<ElementData>,
    cooled_edges: Vec<EdgeData>,
    /// `∫_spot η pd λᵢ r ds`.
    laser_load: Vec<f64>,
}

impl<'a> HeatModel<'a> {
    pub fn new(mesh: &'a Mesh, material: &'a MaterialModel, params: SimulationParams) -> Result<Self> {
        params.validate()?;
        let elements = mesh
            .elements
            .iter()
            .map(|&nodes| {
                let p = nodes.map(|i| mesh.nodes[i]);
                let det = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1])
                    - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]);
                let area = 0.5 * det;
                let mut grads = [[0.0; 2]; 3];
                for k in 0..3 {
                    let (a, b) = (p[(k + 1) % 3], p[(k + 2) % 3]);
                    grads[k] = [(a[1] - b[1]) / det, (b[0] - a[0]) / det];
                }
                let r = p.map(|q| q[0]);
                let mut mass3 = [[[0.0; 3]; 3]; 3];
                for i in 0..3 {
                    for j in 0..3 {
                        for k in 0..3 {
                            mass3[i][j][k] = (0..3)
                                .map(|m| r[m] * barycentric_moment(&[i, j, k, m]))
                                .sum::<f64>()
                                * 2.0
                                * area;
                        }
                    }
                }
                let weight1 = [0, 1, 2].map(|k| {
                    (0..3).map(|m| r[m] * barycentric_moment(&[k, m])).sum::<f64>() * 2.0 * area
                });
                ElementData {
                    nodes,
                    grads,
                    mass3,
                    weight1,
                }
            })
            .collect();

        let edge_data = |nodes: [usize; 2]| {
            let [a, b] = nodes.map(|i| mesh.nodes[i]);
            let length = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
            let points = GAUSS4.map(|(t, w)| {
                let r = a[0] + t * (b[0] - a[0]);
                (1.0 - t, w * length * r)
            });
            EdgeData { nodes, points }
        };
        let cooled_edges = mesh
            .boundary_edges
            .iter()
            .filter(|e| e.tag.is_cooled(params.cooling_on_bottom))
            .map(|e| edge_data(e.nodes))
            .collect();

        let flux = material.absorptivity * params.power_density(mesh.spec.beam_radius);
        let mut laser_load = vec![0.0; mesh.num_nodes()];
        for edge in mesh.boundary_edges.iter().filter(|e| e.tag == BoundaryTag::Spot) {
            let data = edge_data(edge.nodes);
            for (l0, w) in data.points {
                laser_load[data.nodes[0]] += flux * w * l0;
                laser_load[data.nodes[1]] += flux * w * (1.0 - l0);
            }
        }

        Ok(Self {
            mesh,
            material,
            params,
            elements,
            cooled_edges,
            laser_load,
        })
    }

    pub fn tau(&self) -> f64 {
        self.params.tau()
    }

    pub fn implicitness(&self) -> f64 {
        self.params.implicitness
    }

    pub fn num_nodes(&self) -> usize {
        self.mesh.num_nodes()
    }

    /// Load vector of the laser at full power, `∫_spot η pd λᵢ r ds`.
    pub fn laser_load(&self) -> &[f64] {
        &self.laser_load
    }

    pub fn initial_state(&self) -> Vec<f64> {
        vec![self.params.ambient; self.num_nodes()]
    }

    fn new_band(&self) -> SymBand {
        SymBand::zeros(self.num_nodes(), self.mesh.bandwidth())
    }

    /// Mass `M(θ)` and stiffness `K(θ)` with coefficients lagged at `theta`.
    pub fn assemble_volume(&self, theta: &[f64]) -> (SymBand, SymBand) {
        let mut mass = self.new_band();
        let mut stiffness = self.new_band();
        self.assemble_volume_into(theta, &mut mass, &mut stiffness);
        (mass, stiffness)
    }

    fn assemble_volume_into(&self, theta: &[f64], mass: &mut SymBand, stiffness: &mut SymBand) {
        mass.fill_zero();
        stiffness.fill_zero();
        let coeffs = self.nodal_coefficients(theta);
        for el in &self.elements {
            let s = el.nodes.map(|n| coeffs[n].0);
            let (mut kr, mut kz) = (0.0, 0.0);
            for k in 0..3 {
                let (_, rad, ax) = coeffs[el.nodes[k]];
                kr += rad * el.weight1[k];
                kz += ax * el.weight1[k];
            }
            for i in 0..3 {
                for j in 0..=i {
                    let m: f64 = (0..3).map(|k| s[k] * el.mass3[i][j][k]).sum();
                    let (gi, gj) = (el.grads[i], el.grads[j]);
                    let k = kr * gi[0] * gj[0] + kz * gi[1] * gj[1];
                    mass.add(el.nodes[i], el.nodes[j], m);
                    stiffness.add(el.nodes[i], el.nodes[j], k);
                }
            }
        }
    }

    fn nodal_coefficients(&self, theta: &[f64]) -> Vec<(f64, f64, f64)> {
        let m = self.material;
        theta
            .iter()
            .map(|&t| (m.heat_capacity.value(t), m.kappa_rad.value(t), m.kappa_ax.value(t)))
            .collect()
    }

    /// Exact r-weighted P1 mass matrix `∫ λᵢ λⱼ r`.
    pub fn r_mass_matrix(&self) -> SymBand {
        let mut mass = self.new_band();
        for el in &self.elements {
            for i in 0..3 {
                for j in 0..=i {
                    mass.add(el.nodes[i], el.nodes[j], el.mass3[i][j].iter().sum());
                }
            }
        }
        mass
    }

    /// `y ← y + factor ∫_cooled Φ(θ) λᵢ r ds`.
    fn add_boundary_flux(&self, theta: &[f64], factor: f64, y: &mut [f64]) {
        for edge in &self.cooled_edges {
            let [a, b] = edge.nodes;
            for &(l0, w) in &edge.points {
                let t = l0 * theta[a] + (1.0 - l0) * theta[b];
                let phi = factor * w * boundary_flux(t, &self.params);
                y[a] += phi * l0;
                y[b] += phi * (1.0 - l0);
            }
        }
    }

    /// `band ← band + factor ∫_cooled Φ'(θ) λᵢ λⱼ r ds`.
    pub fn add_boundary_jacobian(&self, theta: &[f64], factor: f64, band: &mut SymBand) {
        for edge in &self.cooled_edges {
            let [a, b] = edge.nodes;
            let (mut aa, mut ab, mut bb) = (0.0, 0.0, 0.0);
            for &(l0, w) in &edge.points {
                let l1 = 1.0 - l0;
                let t = l0 * theta[a] + l1 * theta[b];
                let d = factor * w * boundary_flux_derivative(t, &self.params);
                aa += d * l0 * l0;
                ab += d * l0 * l1;
                bb += d * l1 * l1;
            }
            band.add(a, a, aa);
            band.add(a, b, ab);
            band.add(b, b, bb);
        }
    }

    /// `y ← y + factor ∫_cooled Φ'(θ) p λᵢ r ds`, the action of the boundary
    /// Jacobian on `p`.
    pub fn add_boundary_jacobian_product(&self, theta: &[f64], p: &[f64], factor: f64, y: &mut [f64]) {
        for edge in &self.cooled_edges {
            let [a, b] = edge.nodes;
            for &(l0, w) in &edge.points {
                let l1 = 1.0 - l0;
                let t = l0 * theta[a] + l1 * theta[b];
                let d = factor * w * boundary_flux_derivative(t, &self.params) * (l0 * p[a] + l1 * p[b]);
                y[a] += d * l0;
                y[b] += d * l1;
            }
        }
    }

    /// `θₙ₊ₐ`.
    pub fn blend(&self, theta_n: &[f64], theta_next: &[f64]) -> Vec<f64> {
        let a = self.implicitness();
        theta_n
            .iter()
            .zip(theta_next)
            .map(|(x, y)| a * y + (1.0 - a) * x)
            .collect()
    }

    fn step_residual(
        &self,
        mass: &SymBand,
        stiffness: &SymBand,
        theta_n: &[f64],
        x: &[f64],
        u: f64,
    ) -> Vec<f64> {
        let tau = self.tau();
        let diff: Vec<f64> = x.iter().zip(theta_n).map(|(a, b)| a - b).collect();
        let blended = self.blend(theta_n, x);
        let mut res: Vec<f64> = self.laser_load.iter().map(|f| -tau * u * f).collect();
        mass.mul_add(1.0, &diff, &mut res);
        stiffness.mul_add(tau, &blended, &mut res);
        self.add_boundary_flux(&blended, tau, &mut res);
        res
    }

    /// Newton matrix `M + τaK + τaB'(θₙ₊ₐ)`, factorized.
    pub fn factor_step_jacobian(
        &self,
        mass: &SymBand,
        stiffness: &SymBand,
        theta_blend: &[f64],
    ) -> Result<BandCholesky> {
        let ta = self.tau() * self.implicitness();
        let mut jac = mass.clone();
        jac.add_scaled(ta, stiffness);
        self.add_boundary_jacobian(theta_blend, ta, &mut jac);
        jac.cholesky()
    }

    /// One time step from `theta_n` with power fraction `u`.
    pub fn step(&self, theta_n: &[f64], u: f64) -> Result<Vec<f64>> {
        self.advance(0, theta_n, u)
    }

    fn advance(&self, index: usize, theta_n: &[f64], u: f64) -> Result<Vec<f64>> {
        if !(0.0..=1.0).contains(&u) {
            return Err(Error::InvalidInput(format!("control value {u} outside [0, 1]")));
        }
        let (mass, stiffness) = self.assemble_volume(theta_n);
        let ta = self.tau() * self.implicitness();
        let mut diag = mass.diagonal();
        diag.iter_mut()
            .zip(stiffness.diagonal())
            .for_each(|(d, k)| *d += ta * k);
        let scaled = |r: &[f64]| {
            r.iter()
                .zip(&diag)
                .map(|(r, d)| (r / d).abs())
                .fold(0.0, f64::max)
        };

        let mut x = theta_n.to_vec();
        let mut res = self.step_residual(&mass, &stiffness, theta_n, &x, u);
        let mut norm = scaled(&res);
        let mut factor: Option<BandCholesky> = None;
        let mut iterations = 0;
        while norm >= self.params.newton_tolerance {
            if iterations == self.params.newton_max_iterations || !norm.is_finite() {
                return Err(Error::NewtonDiverged {
                    step: index,
                    residual: norm,
                });
            }
            let chol = match factor.take() {
                Some(f) => f,
                None => self.factor_step_jacobian(&mass, &stiffness, &self.blend(theta_n, &x))?,
            };
            chol.solve_in_place(&mut res);
            x.iter_mut().zip(&res).for_each(|(x, d)| *x -= d);
            res = self.step_residual(&mass, &stiffness, theta_n, &x, u);
            let next = scaled(&res);
            // keep the factorization while the chord iteration contracts fast
            if next < 0.1 * norm {
                factor = Some(chol);
            }
            norm = next;
            iterations += 1;
        }
        Ok(x)
    }

    /// Marches the scheme over the whole control horizon.
    pub fn solve_forward(&self, control: &Control) -> Result<Trajectory> {
        if control.len() != self.params.num_steps {
            return Err(Error::InvalidInput(format!(
                "control has {} entries, expected {}",
                control.len(),
                self.params.num_steps
            )));
        }
        let mut states = Vec::with_capacity(control.len() + 1);
        states.push(self.initial_state());
        for (n, &u) in control.values().iter().enumerate() {
            let next = self.advance(n, &states[n], u)?;
            states.push(next);
        }
        Ok(Trajectory {
            states,
            tau: self.tau(),
        })
    }

    /// `Σᵢ (M(θₙ)(θₙ₊₁ − θₙ))ᵢ`: change of the discrete enthalpy over a step.
    pub fn enthalpy_change(&self, theta_n: &[f64], theta_next: &[f64]) -> f64 {
        let (mass, _) = self.assemble_volume(theta_n);
        let diff: Vec<f64> = theta_next.iter().zip(theta_n).map(|(a, b)| a - b).collect();
        mass.mul(&diff).iter().sum()
    }

    /// `Σᵢ (M(θₙ)|θₙ₊₁ − θₙ|)ᵢ`, a scale for [`Self::enthalpy_change`].
    pub fn enthalpy_scale(&self, theta_n: &[f64], theta_next: &[f64]) -> f64 {
        let (mass, _) = self.assemble_volume(theta_n);
        let diff: Vec<f64> = theta_next
            .iter()
            .zip(theta_n)
            .map(|(a, b)| (a - b).abs())
            .collect();
        mass.mul(&diff).iter().sum()
    }

    /// `gₖ = ∫ s'(θ) λₖ w p r` with `s` interpolated nodally, i.e. the
    /// transpose action of `∂/∂θ [M(θ) w]` on `p`.
    pub fn mass_derivative_contraction(&self, theta: &[f64], w: &[f64], p: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; theta.len()];
        for el in &self.elements {
            let wn = el.nodes.map(|n| w[n]);
            let pn = el.nodes.map(|n| p[n]);
            for k in 0..3 {
                let mut acc = 0.0;
                for i in 0..3 {
                    for j in 0..3 {
                        acc += wn[i] * pn[j] * el.mass3[i][j][k];
                    }
                }
                let node = el.nodes[k];
                g[node] += self.material.heat_capacity.derivative(theta[node]) * acc;
            }
        }
        g
    }

    /// `gₖ = ∫ λₖ (κ_rad'(θ) ∂ᵣa ∂ᵣp + κ_ax'(θ) ∂_z a ∂_z p) r`, the transpose
    /// action of `∂/∂θ [K(θ) a]` on `p`.
    pub fn stiffness_derivative_contraction(&self, theta: &[f64], a: &[f64], p: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; theta.len()];
        for el in &self.elements {
            let (mut ga, mut gp) = ([0.0; 2], [0.0; 2]);
            for k in 0..3 {
                let n = el.nodes[k];
                for d in 0..2 {
                    ga[d] += a[n] * el.grads[k][d];
                    gp[d] += p[n] * el.grads[k][d];
                }
            }
            let (rr, zz) = (ga[0] * gp[0], ga[1] * gp[1]);
            for k in 0..3 {
                let n = el.nodes[k];
                let dr = self.material.kappa_rad.derivative(theta[n]);
                let dz = self.material.kappa_ax.derivative(theta[n]);
                g[n] += el.weight1[k] * (dr * rr + dz * zz);
            }
        }
        g
    }

    /// Element-constant P1 gradient `(∂ᵣθ, ∂_zθ)` on element `e`.
    pub fn element_gradient(&self, e: usize, theta: &[f64]) -> [f64; 2] {
        let el = &self.elements[e];
        let mut g = [0.0; 2];
        for k in 0..3 {
            g[0] += theta[el.nodes[k]] * el.grads[k][0];
            g[1] += theta[el.nodes[k]] * el.grads[k][1];
        }
        g
    }

    /// Barycentric gradients of element `e`.
    pub fn element_shape_gradients(&self, e: usize) -> [[f64; 2]; 3] {
        self.elements[e].grads
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::DomainSpec;

    fn small_mesh(nr: usize, nz: usize) -> Mesh {
        Mesh::build(
            DomainSpec {
                radius: 2.5e-3,
                height: 0.5e-3,
                beam_radius: 0.5e-3,
                nr,
                nz,
            },
            0.375e-3,
        )
        .unwrap()
    }

    #[test]
    fn flux_examples() {
        let mut p = SimulationParams::default();
        assert_eq!(boundary_flux(p.ambient, &p), 0.0);
        p.convection = 5.0;
        p.radiation = 0.0;
        assert!((boundary_flux(p.ambient + 1.0, &p) - 5.0).abs() < 1e-12);
        let p = SimulationParams::default();
        let expected = 2.26e-9 * (1000f64.powi(4) - 295f64.powi(4)) + 20.0 * 705.0;
        assert!((boundary_flux(1000.0, &p) - expected).abs() < 1e-9);
        assert!((expected - 16342.9).abs() < 0.1);
    }

    #[test]
    fn flux_derivative_matches_difference() {
        let p = SimulationParams::default();
        for t in [300.0, 900.0, 2500.0] {
            let h = 1e-3;
            let fd = (boundary_flux(t + h, &p) - boundary_flux(t - h, &p)) / (2.0 * h);
            assert!((fd - boundary_flux_derivative(t, &p)).abs() < 1e-6 * fd.abs());
        }
    }

    #[test]
    fn ambient_is_a_fixed_point() {
        let mesh = small_mesh(10, 4);
        let material = MaterialModel::default();
        let model = HeatModel::new(&mesh, &material, SimulationParams::default()).unwrap();
        let next = model.step(&model.initial_state(), 0.0).unwrap();
        assert!(next.iter().all(|&t| t == 295.0));
    }

    #[test]
    fn laser_heats_the_spot() {
        let mesh = Mesh::build(
            DomainSpec {
                radius: 2.5e-3,
                height: 0.5e-3,
                beam_radius: 0.625e-3,
                nr: 4,
                nz: 4,
            },
            0.375e-3,
        )
        .unwrap();
        let material = MaterialModel::default();
        let model = HeatModel::new(&mesh, &material, SimulationParams::default()).unwrap();
        let next = model.step(&model.initial_state(), 1.0).unwrap();
        for edge in mesh.boundary_edges.iter().filter(|e| e.tag == BoundaryTag::Spot) {
            for n in edge.nodes {
                assert!(next[n] > 295.0, "node {n}: {}", next[n]);
            }
        }
    }

    #[test]
    fn insulated_step_conserves_enthalpy() {
        let mesh = small_mesh(10, 4);
        let material = MaterialModel::default();
        let params = SimulationParams {
            convection: 0.0,
            radiation: 0.0,
            ..Default::default()
        };
        let model = HeatModel::new(&mesh, &material, params).unwrap();
        // hot spot near the axis
        let theta0: Vec<f64> = mesh
            .nodes
            .iter()
            .map(|[r, z]| 295.0 + 900.0 * (-(r * r + (z - 0.5e-3).powi(2)) / 1e-7).exp())
            .collect();
        let theta1 = model.step(&theta0, 0.0).unwrap();
        let change = model.enthalpy_change(&theta0, &theta1);
        let scale = model.enthalpy_scale(&theta0, &theta1);
        assert!(change.abs() < 1e-9 * scale, "{change} vs {scale}");
    }

    #[test]
    fn r_mass_integrates_constants() {
        let mesh = small_mesh(10, 4);
        let material = MaterialModel::default();
        let model = HeatModel::new(&mesh, &material, SimulationParams::default()).unwrap();
        let ones = vec![1.0; mesh.num_nodes()];
        let total: f64 = model.r_mass_matrix().mul(&ones).iter().sum();
        let exact = 2.5e-3f64.powi(2) * 0.5e-3 / 2.0;
        assert!(((total - exact) / exact).abs() < 1e-12);
        // ∫ z r over the domain = R²/2 · H²/2
        let z: Vec<f64> = mesh.nodes.iter().map(|p| p[1]).collect();
        let zr: f64 = model.r_mass_matrix().mul(&z).iter().sum();
        let exact = 2.5e-3f64.powi(2) / 2.0 * 0.5e-3f64.powi(2) / 2.0;
        assert!(((zr - exact) / exact).abs() < 1e-12);
    }

    #[test]
    fn coefficient_mass_is_exact_for_constant_coefficient() {
        // with s interpolating a constant, M(θ) = s · M_r
        let mesh = small_mesh(10, 4);
        let mut material = MaterialModel::default();
        material.heat_capacity = crate::material::CubicSpline::line(0.0, 3.0, 300.0);
        let model = HeatModel::new(&mesh, &material, SimulationParams::default()).unwrap();
        let (mass, _) = model.assemble_volume(&model.initial_state());
        let reference = model.r_mass_matrix();
        for i in 0..mesh.num_nodes() {
            for j in i.saturating_sub(mesh.bandwidth())..=i {
                assert!((mass.get(i, j) - 3.0 * reference.get(i, j)).abs() < 1e-24);
            }
        }
    }

    #[test]
    fn zero_control_keeps_ambient_everywhere() {
        let mesh = small_mesh(10, 4);
        let material = MaterialModel::default();
        let params = SimulationParams {
            num_steps: 20,
            ..Default::default()
        };
        let model = HeatModel::new(&mesh, &material, params).unwrap();
        let traj = model.solve_forward(&Control::zeros(20, params.tau())).unwrap();
        assert_eq!(traj.states.len(), 21);
        assert!(traj.states.iter().flatten().all(|&t| (t - 295.0).abs() < 1e-9));
    }

    #[test]
    fn control_validation() {
        assert!(Control::new(vec![0.0, 1.2], 1e-5).is_err());
        assert!(Control::new(vec![0.0, 1.0], 0.0).is_err());
        assert!(Control::new(vec![0.0, 0.5, 1.0], 1e-5).is_ok());
    }

    #[test]
    fn wrong_control_length_is_rejected() {
        let mesh = small_mesh(10, 4);
        let material = MaterialModel::default();
        let model = HeatModel::new(&mesh, &material, SimulationParams::default()).unwrap();
        assert!(model.solve_forward(&Control::zeros(5, 1e-5)).is_err());
    }

    #[test]
    fn derivative_contractions_match_differences() {
        let mesh = small_mesh(5, 4);
        let material = MaterialModel::default();
        let model = HeatModel::new(&mesh, &material, SimulationParams::default()).unwrap();
        let n = mesh.num_nodes();
        let theta: Vec<f64> = (0..n).map(|i| 700.0 + 37.0 * ((i * 7 % 11) as f64)).collect();
        let w: Vec<f64> = (0..n).map(|i| ((i * 3 % 5) as f64) - 2.0).collect();
        let p: Vec<f64> = (0..n).map(|i| ((i * 5 % 7) as f64) * 0.3 - 1.0).collect();
        let dm = model.mass_derivative_contraction(&theta, &w, &p);
        let dk = model.stiffness_derivative_contraction(&theta, &w, &p);
        let bilinear = |t: &[f64]| {
            let (m, k) = model.assemble_volume(t);
            let mw = m.mul(&w);
            let kw = k.mul(&w);
            (
                mw.iter().zip(&p).map(|(a, b)| a * b).sum::<f64>(),
                kw.iter().zip(&p).map(|(a, b)| a * b).sum::<f64>(),
            )
        };
        let h = 1e-3;
        for node in [0, 7, 13, n - 1] {
            let mut plus = theta.clone();
            plus[node] += h;
            let mut minus = theta.clone();
            minus[node] -= h;
            let (mp, kp) = bilinear(&plus);
            let (mm, km) = bilinear(&minus);
            let fd_m = (mp - mm) / (2.0 * h);
            let fd_k = (kp - km) / (2.0 * h);
            assert!((fd_m - dm[node]).abs() <= 1e-6 * fd_m.abs().max(1e-20), "{fd_m} {}", dm[node]);
            assert!((fd_k - dk[node]).abs() <= 1e-6 * fd_k.abs().max(1e-20), "{fd_k} {}", dk[node]);
        }
    }
}
