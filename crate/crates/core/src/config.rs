//! Experiment configuration files.
//!
//! Files use millimetres and milliseconds for lengths and times; everything
//! is converted to SI when the run objects are built. Key names carry their
//! unit where one applies.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::SimulationParams;
use crate::material::{MaterialConfig, MaterialModel};
use crate::mesh::{DomainSpec, Mesh};
use crate::objective::ObjectiveWeights;
use crate::optimizer::OptimizerConfig;

const MM: f64 = 1e-3;
const MS: f64 = 1e-3;

/// Default experiment, shipped with the crate.
pub const DEFAULT_EXPERIMENT: &str = include_str!("../config/experiment.toml");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub domain: DomainSection,
    pub simulation: SimulationSection,
    pub objective: ObjectiveSection,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    pub pulse: PulsePreset,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub continuation: ContinuationSection,
    /// Material data file, resolved relative to the experiment file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub material_file: Option<PathBuf>,
    /// Inline material data; takes precedence over `material_file`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub material: Option<MaterialConfig>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Write the full temperature field every this many steps (0: never).
    #[serde(default)]
    pub snapshot_every: usize,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSection {
    pub radius_mm: f64,
    pub height_mm: f64,
    pub beam_radius_mm: f64,
    pub nr: usize,
    pub nz: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    pub ambient_k: f64,
    /// `h` in W/(m²·K).
    pub convection: f64,
    /// `k` in W/(m²·K⁴).
    pub radiation: f64,
    pub max_power_w: f64,
    pub final_time_ms: f64,
    pub time_step_ms: f64,
    pub implicitness: f64,
    pub cooling_on_bottom: bool,
    pub newton_tolerance_k: f64,
    pub newton_max_iterations: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveSection {
    pub beta_penetration: f64,
    pub beta_velocity: f64,
    pub beta_completeness: f64,
    pub beta_control: f64,
    pub p: f64,
    pub z_target_mm: f64,
    pub target_temperature_k: f64,
    /// mm/ms, which is the same number in m/s.
    pub v_max_mm_per_ms: f64,
    pub grad_eps_k_per_mm: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PulseKind {
    Conventional,
    Rampdown,
    Zero,
    File,
}

/// Initial or simulated laser pulse.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulsePreset {
    pub kind: PulseKind,
    #[serde(default)]
    pub hold_power_fraction: f64,
    #[serde(default)]
    pub hold_ms: f64,
    #[serde(default)]
    pub ramp_ms: f64,
    /// Control CSV for `kind = "file"`, resolved relative to the
    /// experiment file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub max_power_w: Vec<f64>,
    pub final_time_ms: Vec<f64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            max_power_w: vec![1500.0, 1800.0, 2100.0],
            final_time_ms: vec![10.0, 15.0, 20.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContinuationSection {
    pub p: Vec<f64>,
}

impl Default for ContinuationSection {
    fn default() -> Self {
        Self {
            p: vec![20.0, 30.0, 40.0, 50.0, 60.0, 70.0, 80.0],
        }
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::from_toml(DEFAULT_EXPERIMENT).expect("bundled experiment file is valid")
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config file; relative data paths inside it are resolved
    /// against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config: Self = toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = config.material_file.as_mut() {
            resolve(p);
        }
        if let Some(p) = config.pulse.file.as_mut() {
            resolve(p);
        }
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Copy with the material data inlined, so that the file alone
    /// reproduces the run.
    pub fn effective(&self) -> Result<Self> {
        let mut out = self.clone();
        out.material = Some(self.material_config()?);
        out.material_file = None;
        Ok(out)
    }

    pub fn material_config(&self) -> Result<MaterialConfig> {
        match (&self.material, &self.material_file) {
            (Some(m), _) => Ok(m.clone()),
            (None, Some(path)) => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                MaterialConfig::from_toml(&text)
            }
            (None, None) => Ok(MaterialConfig::default()),
        }
    }

    pub fn material_model(&self) -> Result<MaterialModel> {
        MaterialModel::from_config(&self.material_config()?)
    }

    pub fn domain_spec(&self) -> DomainSpec {
        let d = &self.domain;
        DomainSpec {
            radius: d.radius_mm * MM,
            height: d.height_mm * MM,
            beam_radius: d.beam_radius_mm * MM,
            nr: d.nr,
            nz: d.nz,
        }
    }

    pub fn mesh(&self) -> Result<Mesh> {
        Mesh::build(self.domain_spec(), self.objective.z_target_mm * MM)
    }

    /// Number of time steps; the final time must be a multiple of the step.
    pub fn num_steps(&self) -> Result<usize> {
        let s = &self.simulation;
        if !(s.time_step_ms > 0.0 && s.final_time_ms > 0.0) {
            return Err(Error::Config("final time and time step must be positive".into()));
        }
        let ratio = s.final_time_ms / s.time_step_ms;
        let n = ratio.round();
        if (ratio - n).abs() > 1e-9 * ratio || n < 1.0 {
            return Err(Error::Config(format!(
                "final time {} ms is not a multiple of the time step {} ms",
                s.final_time_ms, s.time_step_ms
            )));
        }
        Ok(n as usize)
    }

    pub fn simulation_params(&self) -> Result<SimulationParams> {
        let s = &self.simulation;
        let params = SimulationParams {
            ambient: s.ambient_k,
            convection: s.convection,
            radiation: s.radiation,
            max_power: s.max_power_w,
            final_time: s.final_time_ms * MS,
            num_steps: self.num_steps()?,
            implicitness: s.implicitness,
            cooling_on_bottom: s.cooling_on_bottom,
            newton_tolerance: s.newton_tolerance_k,
            newton_max_iterations: s.newton_max_iterations,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn weights(&self) -> Result<ObjectiveWeights> {
        let o = &self.objective;
        let weights = ObjectiveWeights {
            penetration: o.beta_penetration,
            velocity: o.beta_velocity,
            completeness: o.beta_completeness,
            control: o.beta_control,
            p: o.p,
            z_target: o.z_target_mm * MM,
            target_temperature: o.target_temperature_k,
            v_max: o.v_max_mm_per_ms * MM / MS,
            grad_eps: o.grad_eps_k_per_mm / MM,
        };
        weights.validate()?;
        Ok(weights)
    }

    /// Checks every section by building the SI objects.
    pub fn validate(&self) -> Result<()> {
        self.domain_spec().validate()?;
        self.simulation_params()?;
        self.weights()?;
        self.optimizer.validate()?;
        self.pulse.validate(self.simulation.final_time_ms)?;
        if self.sweep.max_power_w.is_empty() || self.sweep.final_time_ms.is_empty() {
            return Err(Error::Config("sweep lists must be nonempty".into()));
        }
        let p = &self.continuation.p;
        if p.is_empty() || p.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("continuation p list must be nonempty and ascending".into()));
        }
        Ok(())
    }
}

impl PulsePreset {
    pub fn validate(&self, final_time_ms: f64) -> Result<()> {
        match self.kind {
            PulseKind::Conventional | PulseKind::Rampdown => {
                if !(0.0..=1.0).contains(&self.hold_power_fraction) {
                    return Err(Error::Config("hold_power_fraction must lie in [0, 1]".into()));
                }
                if !(self.hold_ms >= 0.0 && self.ramp_ms >= 0.0) {
                    return Err(Error::Config("pulse durations must be nonnegative".into()));
                }
                let used = match self.kind {
                    PulseKind::Rampdown => self.hold_ms + self.ramp_ms,
                    _ => self.hold_ms,
                };
                if used > final_time_ms * (1.0 + 1e-12) {
                    return Err(Error::Config(format!(
                        "pulse lasts {used} ms, longer than the final time {final_time_ms} ms"
                    )));
                }
                Ok(())
            }
            PulseKind::Zero => Ok(()),
            PulseKind::File => match self.file {
                Some(_) => Ok(()),
                None => Err(Error::Config("pulse kind \"file\" needs a file".into())),
            },
        }
    }
}
