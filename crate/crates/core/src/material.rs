//! Temperature dependent material coefficients.
//!
//! The effective volumetric heat capacity `s(θ)` and the anisotropic effective
//! conductivity `κ(θ) = diag(κ_rad, κ_ax)` are C¹ piecewise cubic curves built
//! from linear fits to measured data on either side of the solidus–liquidus
//! corridor. Latent heat is folded into `s` as a smooth bump on the corridor.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Temperature range on which every coefficient must stay positive.
pub const POSITIVITY_RANGE: (f64, f64) = (250.0, 3500.0);

pub const DEFAULT_MATERIAL: &str = include_str!("../config/material.toml");

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseConstants {
    /// Fully solid below this temperature (K).
    pub solidus: f64,
    /// Fully liquid above this temperature (K).
    pub liquidus: f64,
    /// Specific enthalpy of fusion (J/kg).
    pub latent_heat: f64,
    /// Density used to turn the latent heat into a volumetric quantity (kg/m³).
    pub reference_density: f64,
}

impl PhaseConstants {
    pub fn validate(&self) -> Result<()> {
        if !(self.solidus < self.liquidus) {
            return Err(Error::InvalidData(format!(
                "solidus {} must lie below liquidus {}",
                self.solidus, self.liquidus
            )));
        }
        if !(self.latent_heat >= 0.0) || !(self.reference_density > 0.0) {
            return Err(Error::InvalidData(
                "latent heat must be nonnegative and reference density positive".into(),
            ));
        }
        Ok(())
    }

    /// Volumetric latent heat (J/m³).
    pub fn volumetric_latent_heat(&self) -> f64 {
        self.latent_heat * self.reference_density
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.solidus + self.liquidus)
    }
}

/// C¹ piecewise cubic with linear continuation outside the knot range.
#[derive(Clone, Debug, PartialEq)]
pub struct CubicSpline {
    knots: Vec<f64>,
    /// Per interval `[a, b, c, d]` of `a + b t + c t² + d t³`, `t = θ - knot`.
    coeffs: Vec<[f64; 4]>,
    first_value: f64,
    first_slope: f64,
    last_value: f64,
    last_slope: f64,
}

impl CubicSpline {
    /// Cubic Hermite spline through `(knot, value, slope)` triples.
    pub fn hermite(knots: &[f64], values: &[f64], slopes: &[f64]) -> Result<Self> {
        if knots.is_empty() || knots.len() != values.len() || knots.len() != slopes.len() {
            return Err(Error::InvalidData(
                "Hermite spline needs matching, nonempty knot/value/slope arrays".into(),
            ));
        }
        if knots.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidData("spline knots must be strictly increasing".into()));
        }
        let coeffs = knots
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let h = w[1] - w[0];
                let (y0, y1) = (values[i], values[i + 1]);
                let (m0, m1) = (slopes[i], slopes[i + 1]);
                let delta = (y1 - y0) / h;
                [
                    y0,
                    m0,
                    (3.0 * delta - 2.0 * m0 - m1) / h,
                    (m0 + m1 - 2.0 * delta) / (h * h),
                ]
            })
            .collect();
        let n = knots.len() - 1;
        Ok(Self {
            knots: knots.to_vec(),
            coeffs,
            first_value: values[0],
            first_slope: slopes[0],
            last_value: values[n],
            last_slope: slopes[n],
        })
    }

    /// A single straight line `slope * θ + intercept`, anchored at `anchor`.
    pub fn line(slope: f64, intercept: f64, anchor: f64) -> Self {
        Self::hermite(&[anchor], &[slope * anchor + intercept], &[slope])
            .expect("single knot spline is always valid")
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Value and first derivative at `theta`. NaN propagates.
    #[inline]
    pub fn value_and_derivative(&self, theta: f64) -> (f64, f64) {
        let first = self.knots[0];
        if theta <= first {
            return (self.first_value + self.first_slope * (theta - first), self.first_slope);
        }
        let last = self.knots[self.knots.len() - 1];
        if theta >= last {
            return (self.last_value + self.last_slope * (theta - last), self.last_slope);
        }
        let i = match self.knots.binary_search_by(|k| k.total_cmp(&theta)) {
            Ok(i) => i.min(self.coeffs.len() - 1),
            Err(i) => i - 1,
        };
        let [a, b, c, d] = self.coeffs[i];
        let t = theta - self.knots[i];
        (
            a + t * (b + t * (c + t * d)),
            b + t * (2.0 * c + t * 3.0 * d),
        )
    }

    #[inline]
    pub fn value(&self, theta: f64) -> f64 {
        self.value_and_derivative(theta).0
    }

    #[inline]
    pub fn derivative(&self, theta: f64) -> f64 {
        self.value_and_derivative(theta).1
    }

    pub fn eval(&self, theta: f64) -> Result<f64> {
        check_finite(theta)?;
        Ok(self.value(theta))
    }

    pub fn eval_derivative(&self, theta: f64) -> Result<f64> {
        check_finite(theta)?;
        Ok(self.derivative(theta))
    }

    /// Left and right limits of value and slope at knot `i`.
    pub fn one_sided_limits(&self, i: usize) -> ((f64, f64), (f64, f64)) {
        let knot = self.knots[i];
        let left = if i == 0 {
            (self.first_value, self.first_slope)
        } else {
            let [a, b, c, d] = self.coeffs[i - 1];
            let t = knot - self.knots[i - 1];
            (a + t * (b + t * (c + t * d)), b + t * (2.0 * c + t * 3.0 * d))
        };
        let right = if i == self.coeffs.len() {
            (self.last_value, self.last_slope)
        } else {
            let [a, b, ..] = self.coeffs[i];
            (a, b)
        };
        (left, right)
    }
}

fn check_finite(theta: f64) -> Result<()> {
    if theta.is_nan() {
        return Err(Error::InvalidInput("temperature is NaN".into()));
    }
    Ok(())
}

/// Ordinary least-squares line through `(θ, value)` samples.
pub fn fit_linear_segment(samples: &[(f64, f64)]) -> Result<(f64, f64)> {
    if samples.len() < 2 {
        return Err(Error::InvalidData(format!(
            "linear fit needs at least 2 samples, got {}",
            samples.len()
        )));
    }
    let n = samples.len() as f64;
    let mean_x = samples.iter().map(|s| s.0).sum::<f64>() / n;
    let mean_y = samples.iter().map(|s| s.1).sum::<f64>() / n;
    let (sxx, sxy) = samples.iter().fold((0.0, 0.0), |(sxx, sxy), &(x, y)| {
        let dx = x - mean_x;
        (sxx + dx * dx, sxy + dx * (y - mean_y))
    });
    if !(sxx > 0.0) {
        return Err(Error::InvalidData(
            "linear fit needs at least two distinct temperatures".into(),
        ));
    }
    let slope = sxy / sxx;
    Ok((slope, mean_y - slope * mean_x))
}

fn check_side(samples: &[(f64, f64)], ok: impl Fn(f64) -> bool, what: &str) -> Result<()> {
    if let Some(&(theta, _)) = samples.iter().find(|s| !ok(s.0)) {
        return Err(Error::InvalidData(format!(
            "{what} sample at {theta} K lies on the wrong side of the melting corridor"
        )));
    }
    Ok(())
}

/// Heat capacity without latent heat: solid fit, cubic fill, liquid fit.
///
/// Carries a knot at the corridor midpoint so it shares the knot vector of
/// the final curve.
pub fn latent_free_heat_capacity(
    solid: &[(f64, f64)],
    liquid: &[(f64, f64)],
    phase: &PhaseConstants,
) -> Result<CubicSpline> {
    phase.validate()?;
    check_side(solid, |t| t <= phase.solidus, "solid")?;
    check_side(liquid, |t| t >= phase.liquidus, "liquid")?;
    let (ks, bs) = fit_linear_segment(solid)?;
    let (kl, bl) = fit_linear_segment(liquid)?;
    let fill = CubicSpline::hermite(
        &[phase.solidus, phase.liquidus],
        &[ks * phase.solidus + bs, kl * phase.liquidus + bl],
        &[ks, kl],
    )?;
    let mid = phase.midpoint();
    let (vm, dm) = fill.value_and_derivative(mid);
    CubicSpline::hermite(
        &[phase.solidus, mid, phase.liquidus],
        &[ks * phase.solidus + bs, vm, kl * phase.liquidus + bl],
        &[ks, dm, kl],
    )
}

/// Effective volumetric heat capacity with the latent heat bump.
///
/// The bump is two mirrored cubics meeting at the corridor midpoint with
/// zero slope, vanishing with zero slope at solidus and liquidus. Each half
/// integrates to `peak * width / 4`, which fixes the peak.
pub fn build_heat_capacity(
    solid: &[(f64, f64)],
    liquid: &[(f64, f64)],
    phase: &PhaseConstants,
) -> Result<CubicSpline> {
    let base = latent_free_heat_capacity(solid, liquid, phase)?;
    let width = phase.liquidus - phase.solidus;
    let peak = 2.0 * phase.volumetric_latent_heat() / width;
    let knots = base.knots().to_vec();
    let values: Vec<f64> = knots
        .iter()
        .enumerate()
        .map(|(i, &t)| base.value(t) + if i == 1 { peak } else { 0.0 })
        .collect();
    let slopes: Vec<f64> = knots.iter().map(|&t| base.derivative(t)).collect();
    CubicSpline::hermite(&knots, &values, &slopes)
}

/// Radial and axial conductivity: solid fit below the solidus, straight
/// lines with the given slopes from the liquidus value upward, cubic fill
/// in between.
pub fn build_conductivity(
    solid: &[(f64, f64)],
    phase: &PhaseConstants,
    liquid_slope_rad: f64,
    liquid_slope_ax: f64,
) -> Result<(CubicSpline, CubicSpline)> {
    phase.validate()?;
    check_side(solid, |t| t <= phase.solidus, "solid")?;
    let (ks, bs) = fit_linear_segment(solid)?;
    let at_solidus = ks * phase.solidus + bs;
    let at_liquidus = ks * phase.liquidus + bs;
    let build = |slope: f64, label: &str| -> Result<CubicSpline> {
        let spline = CubicSpline::hermite(
            &[phase.solidus, phase.liquidus],
            &[at_solidus, at_liquidus],
            &[ks, slope],
        )?;
        ensure_positive(&spline, label)?;
        Ok(spline)
    };
    Ok((build(liquid_slope_rad, "kappa_rad")?, build(liquid_slope_ax, "kappa_ax")?))
}

fn ensure_positive(spline: &CubicSpline, label: &str) -> Result<()> {
    let (lo, hi) = POSITIVITY_RANGE;
    let mut theta = lo;
    while theta <= hi {
        let v = spline.value(theta);
        if !(v > 0.0) {
            return Err(Error::InvalidModel(format!(
                "{label} is non-positive ({v:.4e}) at {theta} K"
            )));
        }
        theta += 1.0;
    }
    Ok(())
}

/// Raw material data as read from a config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialConfig {
    /// Fraction of incident laser power absorbed by the surface.
    pub absorptivity: f64,
    pub phase: PhaseConstants,
    pub heat_capacity: HeatCapacityData,
    pub conductivity: ConductivityData,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeatCapacityData {
    /// `[θ (K), s (J/(m³·K))]` pairs at or below the solidus.
    pub solid: Vec<(f64, f64)>,
    /// `[θ (K), s (J/(m³·K))]` pairs at or above the liquidus.
    pub liquid: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConductivityData {
    /// `[θ (K), κ (W/(m·K))]` pairs at or below the solidus.
    pub solid: Vec<(f64, f64)>,
    /// Slope of the radial conductivity above the liquidus (W/(m·K²)).
    pub liquid_slope_rad: f64,
    /// Slope of the axial conductivity above the liquidus (W/(m·K²)).
    pub liquid_slope_ax: f64,
}

impl Default for MaterialConfig {
    fn default() -> Self {
        toml::from_str(DEFAULT_MATERIAL).expect("bundled material file is valid")
    }
}

impl MaterialConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaterialModel {
    pub heat_capacity: CubicSpline,
    pub kappa_rad: CubicSpline,
    pub kappa_ax: CubicSpline,
    pub phase: PhaseConstants,
    pub absorptivity: f64,
}

impl MaterialModel {
    pub fn from_config(config: &MaterialConfig) -> Result<Self> {
        if !(config.absorptivity > 0.0 && config.absorptivity <= 1.0) {
            return Err(Error::InvalidData(format!(
                "absorptivity {} outside (0, 1]",
                config.absorptivity
            )));
        }
        let heat_capacity = build_heat_capacity(
            &config.heat_capacity.solid,
            &config.heat_capacity.liquid,
            &config.phase,
        )?;
        ensure_positive(&heat_capacity, "heat capacity")?;
        let (kappa_rad, kappa_ax) = build_conductivity(
            &config.conductivity.solid,
            &config.phase,
            config.conductivity.liquid_slope_rad,
            config.conductivity.liquid_slope_ax,
        )?;
        Ok(Self {
            heat_capacity,
            kappa_rad,
            kappa_ax,
            phase: config.phase,
            absorptivity: config.absorptivity,
        })
    }

    /// Rows `(θ, s, κ_rad, κ_ax)` on an inclusive grid with the given step.
    pub fn table(&self, from: f64, to: f64, step: f64) -> Vec<[f64; 4]> {
        let n = ((to - from) / step).round() as usize;
        (0..=n)
            .map(|i| {
                let t = from + i as f64 * step;
                [
                    t,
                    self.heat_capacity.value(t),
                    self.kappa_rad.value(t),
                    self.kappa_ax.value(t),
                ]
            })
            .collect()
    }
}

impl Default for MaterialModel {
    fn default() -> Self {
        Self::from_config(&MaterialConfig::default()).expect("bundled material is valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gauss_cubic(spline: &CubicSpline, a: f64, b: f64) -> f64 {
        // two point Gauss-Legendre per knot interval is exact for cubics
        let mut edges = vec![a];
        edges.extend(spline.knots().iter().copied().filter(|&k| k > a && k < b));
        edges.push(b);
        let g = 1.0 / 3f64.sqrt();
        edges
            .windows(2)
            .map(|w| {
                let (c, h) = (0.5 * (w[0] + w[1]), 0.5 * (w[1] - w[0]));
                h * (spline.value(c - g * h) + spline.value(c + g * h))
            })
            .sum()
    }

    #[test]
    fn linear_fit_examples() {
        let (k, b) = fit_linear_segment(&[(0.0, 1.0), (1.0, 3.0)]).unwrap();
        assert!((k - 2.0).abs() < 1e-15 && (b - 1.0).abs() < 1e-15);
        let (k, b) = fit_linear_segment(&[(0.0, 0.0), (1.0, 1.0), (2.0, 2.0)]).unwrap();
        assert!((k - 1.0).abs() < 1e-15 && b.abs() < 1e-15);
        let (k, b) = fit_linear_segment(&[(0.0, 0.0), (1.0, 1.0), (2.0, 0.0)]).unwrap();
        assert!(k.abs() < 1e-15 && (b - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn linear_fit_rejects_degenerate_data() {
        assert!(matches!(fit_linear_segment(&[(1.0, 2.0)]), Err(Error::InvalidData(_))));
        assert!(matches!(
            fit_linear_segment(&[(1.0, 2.0), (1.0, 3.0), (1.0, 4.0)]),
            Err(Error::InvalidData(_))
        ));
    }

    #[test]
    fn latent_heat_integral_matches() {
        let cfg = MaterialConfig::default();
        let model = MaterialModel::from_config(&cfg).unwrap();
        let base = latent_free_heat_capacity(
            &cfg.heat_capacity.solid,
            &cfg.heat_capacity.liquid,
            &cfg.phase,
        )
        .unwrap();
        let (sol, liq) = (cfg.phase.solidus, cfg.phase.liquidus);
        let bump = gauss_cubic(&model.heat_capacity, sol, liq) - gauss_cubic(&base, sol, liq);
        let expected = 397000.0 * cfg.phase.reference_density;
        assert!(((bump - expected) / expected).abs() < 1e-10, "{bump} vs {expected}");
    }

    #[test]
    fn zero_latent_heat_gives_plain_fill() {
        let mut cfg = MaterialConfig::default();
        cfg.phase.latent_heat = 0.0;
        let s = build_heat_capacity(&cfg.heat_capacity.solid, &cfg.heat_capacity.liquid, &cfg.phase)
            .unwrap();
        let base = latent_free_heat_capacity(
            &cfg.heat_capacity.solid,
            &cfg.heat_capacity.liquid,
            &cfg.phase,
        )
        .unwrap();
        for i in 0..=65 {
            let t = 858.0 + i as f64;
            assert!((s.value(t) - base.value(t)).abs() <= 1e-9 * base.value(t));
        }
    }

    #[test]
    fn heat_capacity_follows_fits_outside_corridor() {
        let cfg = MaterialConfig::default();
        let model = MaterialModel::default();
        let (ks, bs) = fit_linear_segment(&cfg.heat_capacity.solid).unwrap();
        let (kl, bl) = fit_linear_segment(&cfg.heat_capacity.liquid).unwrap();
        for t in [250.0, 500.0, 858.0] {
            let v = model.heat_capacity.value(t);
            assert!((v - (ks * t + bs)).abs() < 1e-9 * v);
        }
        for t in [923.0, 1500.0, 3000.0] {
            let v = model.heat_capacity.value(t);
            assert!((v - (kl * t + bl)).abs() < 1e-9 * v);
        }
    }

    #[test]
    fn splines_are_c1_at_knots() {
        let model = MaterialModel::default();
        for spline in [&model.heat_capacity, &model.kappa_rad, &model.kappa_ax] {
            for i in 0..spline.knots().len() {
                let ((vl, dl), (vr, dr)) = spline.one_sided_limits(i);
                let scale = vl.abs().max(1.0);
                assert!((vl - vr).abs() < 1e-9 * scale, "value jump at knot {i}");
                assert!((dl - dr).abs() < 1e-9 * scale, "slope jump at knot {i}");
            }
        }
    }

    #[test]
    fn c1_near_solidus_by_epsilon() {
        let s = MaterialModel::default().heat_capacity;
        let eps = 1e-7;
        let (vl, dl) = s.value_and_derivative(858.0 - eps);
        let (vr, dr) = s.value_and_derivative(858.0 + eps);
        assert!((vl - vr).abs() < 1e-6 * vl);
        assert!((dl - dr).abs() < 1e-3 * dl.abs().max(1.0));
    }

    #[test]
    fn coefficients_positive_on_range() {
        let model = MaterialModel::default();
        for row in model.table(250.0, 3500.0, 1.0) {
            assert!(row[1] > 0.0 && row[2] > 0.0 && row[3] > 0.0, "{row:?}");
        }
    }

    #[test]
    fn conductivity_anisotropy_in_liquid() {
        let model = MaterialModel::default();
        let sol = model.phase.solidus;
        assert!(model.kappa_rad.value(1200.0) > model.kappa_rad.value(sol));
        assert!(model.kappa_ax.value(1200.0) < model.kappa_ax.value(sol));
    }

    #[test]
    fn conductivity_degenerates_to_line() {
        let cfg = MaterialConfig::default();
        let (ks, bs) = fit_linear_segment(&cfg.conductivity.solid).unwrap();
        let (rad, ax) = build_conductivity(&cfg.conductivity.solid, &cfg.phase, ks, ks).unwrap();
        for t in [300.0, 870.0, 900.0, 2000.0] {
            assert!((rad.value(t) - (ks * t + bs)).abs() < 1e-9 * rad.value(t));
            assert!((ax.value(t) - (ks * t + bs)).abs() < 1e-9 * ax.value(t));
        }
    }

    #[test]
    fn conductivity_rejects_non_positive() {
        let cfg = MaterialConfig::default();
        let err = build_conductivity(&cfg.conductivity.solid, &cfg.phase, 0.1, -1.0).unwrap_err();
        assert!(matches!(err, Error::InvalidModel(_)));
    }

    #[test]
    fn samples_on_wrong_side_are_rejected() {
        let cfg = MaterialConfig::default();
        let mut solid = cfg.heat_capacity.solid.clone();
        solid.push((900.0, 2.9e6));
        let err = build_heat_capacity(&solid, &cfg.heat_capacity.liquid, &cfg.phase).unwrap_err();
        assert!(matches!(err, Error::InvalidData(_)));
    }

    #[test]
    fn derivative_matches_central_difference() {
        let model = MaterialModel::default();
        let h = 1e-3;
        for spline in [&model.heat_capacity, &model.kappa_rad, &model.kappa_ax] {
            for t in [300.0, 861.3, 875.0, 890.0, 912.0, 1500.0] {
                let fd = (spline.value(t + h) - spline.value(t - h)) / (2.0 * h);
                let d = spline.derivative(t);
                let scale = d.abs().max(1e-6 * spline.value(t).abs());
                assert!((fd - d).abs() / scale < 1e-6, "at {t}: {fd} vs {d}");
            }
        }
    }

    #[test]
    fn extrapolation_is_linear() {
        let s = MaterialModel::default().heat_capacity;
        let (a, b, c) = (5000.0, 6000.0, 7000.0);
        let (va, vb, vc) = (s.value(a), s.value(b), s.value(c));
        assert!(((vb - va) - (vc - vb)).abs() < 1e-9 * va);
    }

    #[test]
    fn nan_is_rejected() {
        let s = MaterialModel::default().heat_capacity;
        assert!(matches!(s.eval(f64::NAN), Err(Error::InvalidInput(_))));
        assert!(matches!(s.eval_derivative(f64::NAN), Err(Error::InvalidInput(_))));
        assert!(s.eval(900.0).is_ok());
    }
}
