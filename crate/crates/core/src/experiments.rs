//! Experiment driver: preset pulses, single runs, the power/time sweep and
//! the p-continuation chain, plus the CSV and manifest files they write.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::{ExperimentConfig, PulseKind, PulsePreset};
use crate::error::{Error, Result};
use crate::fem::{Control, HeatModel, SimulationParams, Trajectory};
use crate::material::MaterialModel;
use crate::mesh::Mesh;
use crate::objective::{self, ObjectiveReport, ObjectiveWeights};
use crate::optimizer::{descend, DescentTrace, OptimizerConfig, WeldProblem};

pub const CONTROL_CSV_HEADER: &str = "time_s,power_fraction";
pub const PROBE_CSV_HEADER: &str = "time_s,theta_target_k";
pub const SWEEP_CSV_HEADER: &str =
    "max_power_w,final_time_ms,welding_depth_m,J_penetration,J_velocity,J_completeness,J_control,J_total,status";
pub const CONTINUATION_CSV_HEADER: &str =
    "p,theta_max_target_k,welding_depth_m,J_penetration,J_velocity,J_completeness,J_control,J_total,iterations";

/// Everything a run needs, in SI units.
#[derive(Clone, Debug)]
pub struct Setup {
    pub mesh: Mesh,
    pub material: MaterialModel,
    pub params: SimulationParams,
    pub weights: ObjectiveWeights,
    pub optimizer: OptimizerConfig,
}

impl Setup {
    pub fn from_config(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            mesh: config.mesh()?,
            material: config.material_model()?,
            params: config.simulation_params()?,
            weights: config.weights()?,
            optimizer: config.optimizer,
        })
    }

    pub fn model(&self) -> Result<HeatModel<'_>> {
        HeatModel::new(&self.mesh, &self.material, self.params)
    }
}

/// Samples a preset at the left endpoints `t = nτ`, `n = 0 … N_t − 1`.
pub fn make_pulse(preset: &PulsePreset, params: &SimulationParams) -> Result<Control> {
    let tau = params.tau();
    let final_ms = params.final_time * 1e3;
    if preset.kind == PulseKind::File {
        let path = preset
            .file
            .as_deref()
            .ok_or_else(|| Error::Config("pulse kind \"file\" needs a file".into()))?;
        return read_control(path, params);
    }
    preset.validate(final_ms)?;
    let hold = preset.hold_ms * 1e-3;
    let ramp = preset.ramp_ms * 1e-3;
    // Guards the comparisons against rounding in n·τ.
    let slack = 1e-9 * tau;
    let f = preset.hold_power_fraction;
    let values = (0..params.num_steps)
        .map(|n| {
            let t = n as f64 * tau;
            match preset.kind {
                PulseKind::Zero | PulseKind::File => 0.0,
                _ if t + slack < hold => f,
                PulseKind::Rampdown if t + slack < hold + ramp => {
                    let s = ((t - hold) / ramp).clamp(0.0, 1.0);
                    f * (1.0 - s)
                }
                _ => 0.0,
            }
        })
        .collect();
    Control::new(values, tau)
}

/// Reads a `time_s,power_fraction` control file with one row per step.
pub fn read_control(path: &Path, params: &SimulationParams) -> Result<Control> {
    let parse_err = |message: String| Error::Parse {
        path: path.to_path_buf(),
        message,
    };
    let mut reader = csv::Reader::from_path(path).map_err(|e| parse_err(e.to_string()))?;
    let headers = reader.headers().map_err(|e| parse_err(e.to_string()))?;
    if headers.iter().collect::<Vec<_>>() != CONTROL_CSV_HEADER.split(',').collect::<Vec<_>>() {
        return Err(parse_err(format!("expected header {CONTROL_CSV_HEADER}")));
    }
    let tau = params.tau();
    let mut values = Vec::with_capacity(params.num_steps);
    for (n, row) in reader.deserialize::<(f64, f64)>().enumerate() {
        let (t, u) = row.map_err(|e| parse_err(e.to_string()))?;
        if (t - n as f64 * tau).abs() > 1e-6 * tau {
            return Err(parse_err(format!("row {n}: time {t} s is not {n}·τ")));
        }
        values.push(u);
    }
    if values.len() != params.num_steps {
        return Err(parse_err(format!(
            "{} rows, expected {}",
            values.len(),
            params.num_steps
        )));
    }
    Control::new(values, tau).map_err(|e| parse_err(e.to_string()))
}

pub fn control_csv(control: &Control) -> String {
    let mut out = format!("{CONTROL_CSV_HEADER}\n");
    for (n, u) in control.values().iter().enumerate() {
        let _ = writeln!(out, "{:e},{u:e}", n as f64 * control.tau());
    }
    out
}

/// Target-node temperature over time, including the initial state.
pub fn probe_csv(traj: &Trajectory, mesh: &Mesh) -> String {
    let mut out = format!("{PROBE_CSV_HEADER}\n");
    for (m, theta) in traj.node_history(mesh.target_node).iter().enumerate() {
        let _ = writeln!(out, "{:e},{theta:e}", m as f64 * traj.tau);
    }
    out
}

/// Final temperature field as `node,r_m,z_m,theta_k`.
pub fn state_csv(state: &[f64], mesh: &Mesh) -> String {
    let mut out = String::from("node,r_m,z_m,theta_k\n");
    for (i, ([r, z], theta)) in mesh.nodes.iter().zip(state).enumerate() {
        let _ = writeln!(out, "{i},{r:e},{z:e},{theta:e}");
    }
    out
}

/// Temperature field at every `every`-th step and at the final step, as
/// `step,time_s,node,r_m,z_m,theta_k`.
pub fn trajectory_csv(traj: &Trajectory, mesh: &Mesh, every: usize) -> String {
    let mut out = String::from("step,time_s,node,r_m,z_m,theta_k\n");
    let last = traj.num_steps();
    for (m, state) in traj.states.iter().enumerate() {
        if m % every != 0 && m != last {
            continue;
        }
        for (i, ([r, z], theta)) in mesh.nodes.iter().zip(state).enumerate() {
            let _ = writeln!(out, "{m},{:e},{i},{r:e},{z:e},{theta:e}", m as f64 * traj.tau);
        }
    }
    out
}

/// Outcome of one forward or optimization run.
#[derive(Clone, Debug)]
pub struct RunResult {
    pub label: String,
    pub report: ObjectiveReport,
    pub control: Control,
    pub trajectory: Trajectory,
    pub trace: Option<DescentTrace>,
}

impl RunResult {
    /// Whether the target-node samples satisfy the p-norm bounds.
    pub fn p_norm_inequality_holds(&self, mesh: &Mesh, p: f64) -> Result<bool> {
        objective::p_norm_inequality_holds(&objective::target_samples(&self.trajectory, mesh), p)
    }
}

/// Forward solve and objective evaluation for `control`.
pub fn simulate(setup: &Setup, control: Control, label: &str) -> Result<RunResult> {
    let model = setup.model()?;
    let trajectory = model.solve_forward(&control)?;
    let report = objective::evaluate(&model, &control, &trajectory, &setup.weights)?;
    Ok(RunResult {
        label: label.to_string(),
        report,
        control,
        trajectory,
        trace: None,
    })
}

/// Projected gradient descent from `initial`.
pub fn optimize(setup: &Setup, initial: &Control, label: &str) -> Result<RunResult> {
    let model = setup.model()?;
    let problem = WeldProblem {
        model: &model,
        weights: setup.weights,
    };
    let descent = descend(&problem, initial.values(), &setup.optimizer)?;
    let control = Control::new(descent.control, setup.params.tau())?;
    let trajectory = model.solve_forward(&control)?;
    Ok(RunResult {
        label: label.to_string(),
        report: descent.report,
        control,
        trajectory,
        trace: Some(descent.trace),
    })
}

/// Writes `report.csv`, `control.csv`, `probe.csv`, `final_state.csv`,
/// for optimizations `trace.csv`, and with `snapshot_every > 0`
/// `trajectory.csv` into `dir`.
pub fn write_run(dir: &Path, run: &RunResult, mesh: &Mesh, snapshot_every: usize) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = vec![
        (
            "report.csv",
            format!("{}\n{}\n", ObjectiveReport::CSV_HEADER, run.report.csv_row(&run.label)),
        ),
        ("control.csv", control_csv(&run.control)),
        ("probe.csv", probe_csv(&run.trajectory, mesh)),
        ("final_state.csv", state_csv(run.trajectory.final_state(), mesh)),
    ];
    if let Some(trace) = &run.trace {
        files.push(("trace.csv", trace.to_csv()));
    }
    if snapshot_every > 0 {
        files.push(("trajectory.csv", trajectory_csv(&run.trajectory, mesh, snapshot_every)));
    }
    files
        .into_iter()
        .map(|(name, text)| write_file(&dir.join(name), &text))
        .collect()
}

fn write_file(path: &Path, text: &str) -> Result<PathBuf> {
    fs::write(path, text).map_err(|e| Error::io(path, e))?;
    Ok(path.to_path_buf())
}

/// One entry of `manifest.toml`.
#[derive(Clone, Debug, Serialize)]
pub struct ManifestEntry {
    pub label: String,
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<ObjectiveReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub termination: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    pub files: Vec<PathBuf>,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct Manifest {
    pub command: String,
    pub effective_config: PathBuf,
    pub run: Vec<ManifestEntry>,
}

impl Manifest {
    /// True when every requested run produced a report.
    pub fn all_succeeded(&self) -> bool {
        self.run.iter().all(|r| r.report.is_some())
    }

    fn push(&mut self, label: &str, outcome: &Result<RunResult>, files: Vec<PathBuf>) {
        let entry = match outcome {
            Ok(run) => ManifestEntry {
                label: label.to_string(),
                status: "ok".into(),
                report: Some(run.report),
                termination: run
                    .trace
                    .as_ref()
                    .and_then(|t| t.termination())
                    .map(|t| t.to_string()),
                iterations: run.trace.as_ref().map(|t| t.iterations()),
                files,
            },
            Err(e) => ManifestEntry {
                label: label.to_string(),
                status: format!("failed: {e}"),
                report: None,
                termination: None,
                iterations: None,
                files,
            },
        };
        self.run.push(entry);
    }

    fn write(&self, dir: &Path) -> Result<PathBuf> {
        let text = toml::to_string(self).map_err(|e| Error::Config(e.to_string()))?;
        write_file(&dir.join("manifest.toml"), &text)
    }
}

/// Creates the output directory and writes the effective config into it.
fn start(config: &ExperimentConfig, command: &str) -> Result<(Setup, Manifest)> {
    let setup = Setup::from_config(config)?;
    let dir = &config.output_dir;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let effective = write_file(&dir.join("effective.toml"), &config.effective()?.to_toml())?;
    let (nodes, elements, boundary) = setup.mesh.to_csv();
    write_file(&dir.join("mesh_nodes.csv"), &nodes)?;
    write_file(&dir.join("mesh_elements.csv"), &elements)?;
    write_file(&dir.join("mesh_boundary.csv"), &boundary)?;
    let manifest = Manifest {
        command: command.to_string(),
        effective_config: effective,
        run: Vec::new(),
    };
    Ok((setup, manifest))
}

fn finish(config: &ExperimentConfig, manifest: &Manifest) -> Result<()> {
    manifest.write(&config.output_dir)?;
    Ok(())
}

fn preset_label(config: &ExperimentConfig) -> String {
    match config.pulse.kind {
        PulseKind::Conventional => "conventional",
        PulseKind::Rampdown => "rampdown",
        PulseKind::Zero => "zero",
        PulseKind::File => "file",
    }
    .to_string()
}

/// Forward run of the configured pulse.
pub fn run_simulate(config: &ExperimentConfig) -> Result<(RunResult, Manifest)> {
    let (setup, mut manifest) = start(config, "simulate")?;
    let label = preset_label(config);
    let outcome = make_pulse(&config.pulse, &setup.params).and_then(|u| simulate(&setup, u, &label));
    let files = match &outcome {
        Ok(run) => write_run(&config.output_dir.join(&label), run, &setup.mesh, config.snapshot_every)?,
        Err(_) => Vec::new(),
    };
    manifest.push(&label, &outcome, files);
    finish(config, &manifest)?;
    outcome.map(|run| (run, manifest))
}

/// Optimization from the configured pulse.
pub fn run_optimize(config: &ExperimentConfig) -> Result<(RunResult, Manifest)> {
    let (setup, mut manifest) = start(config, "optimize")?;
    let label = format!("{}_optimized", preset_label(config));
    let outcome = make_pulse(&config.pulse, &setup.params).and_then(|u| optimize(&setup, &u, &label));
    let files = match &outcome {
        Ok(run) => write_run(&config.output_dir.join(&label), run, &setup.mesh, config.snapshot_every)?,
        Err(_) => Vec::new(),
    };
    manifest.push(&label, &outcome, files);
    finish(config, &manifest)?;
    outcome.map(|run| (run, manifest))
}

/// One cell of the power/time grid.
#[derive(Clone, Debug)]
pub struct SweepCell {
    pub max_power_w: f64,
    pub final_time_ms: f64,
    pub outcome: std::result::Result<RunResult, String>,
}

/// Configuration of a sweep cell: zero initial guess, the given power and
/// horizon, everything else unchanged.
pub fn sweep_cell_config(config: &ExperimentConfig, max_power_w: f64, final_time_ms: f64) -> ExperimentConfig {
    let mut cell = config.clone();
    cell.simulation.max_power_w = max_power_w;
    cell.simulation.final_time_ms = final_time_ms;
    cell.pulse = PulsePreset {
        kind: PulseKind::Zero,
        hold_power_fraction: 0.0,
        hold_ms: 0.0,
        ramp_ms: 0.0,
        file: None,
    };
    cell
}

fn sweep_label(max_power_w: f64, final_time_ms: f64) -> String {
    format!("P{max_power_w}_T{final_time_ms}")
}

/// Independent zero-guess optimizations over `P_max × T`. Cells run one
/// after another; a failing cell is recorded and the sweep goes on.
pub fn run_sweep(config: &ExperimentConfig) -> Result<(Vec<SweepCell>, Manifest)> {
    let (_, mut manifest) = start(config, "sweep")?;
    let mut cells = Vec::new();
    let mut table = format!("{SWEEP_CSV_HEADER}\n");
    for &pmax in &config.sweep.max_power_w {
        for &t_ms in &config.sweep.final_time_ms {
            let label = sweep_label(pmax, t_ms);
            let cell_config = sweep_cell_config(config, pmax, t_ms);
            let outcome = Setup::from_config(&cell_config).and_then(|setup| {
                let initial = Control::zeros(setup.params.num_steps, setup.params.tau());
                let run = optimize(&setup, &initial, &label)?;
                let files = write_run(&config.output_dir.join("sweep").join(&label), &run, &setup.mesh, config.snapshot_every)?;
                Ok((run, files))
            });
            let (outcome, files) = match outcome {
                Ok((run, files)) => (Ok(run), files),
                Err(e) => (Err(e), Vec::new()),
            };
            match &outcome {
                Ok(run) => {
                    let row = run.report.csv_row("");
                    let _ = writeln!(table, "{pmax},{t_ms}{row},ok");
                }
                Err(e) => {
                    let _ = writeln!(table, "{pmax},{t_ms},,,,,,,failed: {}", e.to_string().replace(',', ";"));
                }
            }
            manifest.push(&label, &outcome, files);
            cells.push(SweepCell {
                max_power_w: pmax,
                final_time_ms: t_ms,
                outcome: outcome.map_err(|e| e.to_string()),
            });
        }
    }
    write_file(&config.output_dir.join("sweep.csv"), &table)?;
    finish(config, &manifest)?;
    Ok((cells, manifest))
}

/// One link of the continuation chain.
#[derive(Clone, Debug)]
pub struct ContinuationStep {
    pub p: f64,
    pub run: RunResult,
}

/// Optimizations for ascending `p`, each started from the previous optimum.
/// The first one starts from the configured pulse.
pub fn run_p_continuation(config: &ExperimentConfig) -> Result<(Vec<ContinuationStep>, Manifest)> {
    let (setup, mut manifest) = start(config, "pcontinue")?;
    let mut current = make_pulse(&config.pulse, &setup.params)?;
    let mut steps = Vec::new();
    let mut table = format!("{CONTINUATION_CSV_HEADER}\n");
    for &p in &config.continuation.p {
        let label = format!("p{p}");
        let mut link = setup.clone();
        link.weights.p = p;
        let outcome = optimize(&link, &current, &label);
        let files = match &outcome {
            Ok(run) => write_run(&config.output_dir.join("pcontinuation").join(&label), run, &link.mesh, config.snapshot_every)?,
            Err(_) => Vec::new(),
        };
        manifest.push(&label, &outcome, files);
        let run = match outcome {
            Ok(run) => run,
            Err(e) => {
                finish(config, &manifest)?;
                return Err(e);
            }
        };
        let j = &run.report;
        let _ = writeln!(
            table,
            "{p},{:.6},{:e},{:e},{:e},{:e},{:e},{:e},{}",
            j.max_target_temperature,
            j.welding_depth,
            j.penetration,
            j.velocity,
            j.completeness,
            j.control,
            j.total,
            run.trace.as_ref().map_or(0, |t| t.iterations())
        );
        current = run.control.clone();
        steps.push(ContinuationStep { p, run });
    }
    write_file(&config.output_dir.join("pcontinuation.csv"), &table)?;
    finish(config, &manifest)?;
    Ok((steps, manifest))
}
