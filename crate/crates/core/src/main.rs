use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use weldopt::config::{ExperimentConfig, PulseKind};
use weldopt::experiments::{self, Manifest};
use weldopt::material::{MaterialModel, POSITIVITY_RANGE};
use weldopt::objective::ObjectiveReport;

/// Simulate and optimize laser power profiles for spot welding.
#[derive(Parser)]
#[command(name = "weldopt", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Material model utilities.
    Material {
        #[command(subcommand)]
        action: MaterialAction,
    },
    /// Forward run of the configured pulse.
    Simulate(RunArgs),
    /// Optimize starting from the configured pulse.
    Optimize(RunArgs),
    /// Zero-guess optimizations over the power/time grid.
    Sweep(RunArgs),
    /// Warm-started optimizations for the configured list of p.
    Pcontinue(RunArgs),
}

#[derive(Subcommand)]
enum MaterialAction {
    /// Print s, κ_rad and κ_ax on a temperature grid as CSV.
    Dump {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Temperature step (K).
        #[arg(long, default_value_t = 5.0)]
        step: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Conventional,
    Rampdown,
    Zero,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment file (lengths in mm, times in ms).
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Initial or simulated pulse shape.
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    /// Control CSV (`time_s,power_fraction`) used instead of a preset.
    #[arg(long, conflicts_with = "preset")]
    control: Option<PathBuf>,
    /// Maximal laser power (W).
    #[arg(long)]
    pmax: Option<f64>,
    /// Final time (ms).
    #[arg(long = "T")]
    final_time: Option<f64>,
    /// Exponent of the time norm; a single value for `pcontinue`.
    #[arg(long)]
    p: Option<f64>,
    /// Iteration cap of the optimizer.
    #[arg(long)]
    max_iterations: Option<usize>,
    /// Dump the temperature field every this many steps.
    #[arg(long)]
    snapshot_every: Option<usize>,
}

impl RunArgs {
    fn load(&self) -> weldopt::Result<ExperimentConfig> {
        let mut c = ExperimentConfig::load(&self.config)?;
        if let Some(out) = &self.out {
            c.output_dir = out.clone();
        }
        if let Some(preset) = self.preset {
            c.pulse.kind = match preset {
                Preset::Conventional => PulseKind::Conventional,
                Preset::Rampdown => PulseKind::Rampdown,
                Preset::Zero => PulseKind::Zero,
            };
        }
        if let Some(path) = &self.control {
            c.pulse.kind = PulseKind::File;
            c.pulse.file = Some(path.clone());
        }
        if let Some(pmax) = self.pmax {
            c.simulation.max_power_w = pmax;
        }
        if let Some(t) = self.final_time {
            c.simulation.final_time_ms = t;
        }
        if let Some(p) = self.p {
            c.objective.p = p;
            c.continuation.p = vec![p];
        }
        if let Some(n) = self.max_iterations {
            c.optimizer.max_iterations = n;
        }
        if let Some(n) = self.snapshot_every {
            c.snapshot_every = n;
        }
        c.validate()?;
        Ok(c)
    }
}

/// Writes to stdout; a closed pipe (e.g. `| head`) is not an error.
fn emit(text: &str) {
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn print_report(label: &str, report: &ObjectiveReport) {
    emit(&format!("{}\n{}\n", ObjectiveReport::CSV_HEADER, report.csv_row(label)));
}

fn summarize(manifest: &Manifest, out: &std::path::Path) -> ExitCode {
    let mut text = String::new();
    for run in &manifest.run {
        text.push_str(&format!("{}: {}\n", run.label, run.status));
    }
    text.push_str(&format!("results in {}\n", out.display()));
    emit(&text);
    if manifest.all_succeeded() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn run(cli: Cli) -> weldopt::Result<ExitCode> {
    match cli.command {
        Command::Material {
            action: MaterialAction::Dump { config, step },
        } => {
            let model = match config {
                Some(path) => ExperimentConfig::load(&path)?.material_model()?,
                None => MaterialModel::default(),
            };
            if step.is_nan() || step <= 0.0 {
                return Err(weldopt::Error::InvalidInput("step must be positive".into()));
            }
            let mut text = String::from("theta_k,s_j_per_m3k,kappa_rad_w_per_mk,kappa_ax_w_per_mk\n");
            for [t, s, kr, ka] in model.table(POSITIVITY_RANGE.0, POSITIVITY_RANGE.1, step) {
                text.push_str(&format!("{t},{s:e},{kr:e},{ka:e}\n"));
            }
            emit(&text);
            Ok(ExitCode::SUCCESS)
        }
        Command::Simulate(args) => {
            let c = args.load()?;
            let (run, manifest) = experiments::run_simulate(&c)?;
            print_report(&run.label, &run.report);
            Ok(summarize(&manifest, &c.output_dir))
        }
        Command::Optimize(args) => {
            let c = args.load()?;
            let (run, manifest) = experiments::run_optimize(&c)?;
            print_report(&run.label, &run.report);
            Ok(summarize(&manifest, &c.output_dir))
        }
        Command::Sweep(args) => {
            let c = args.load()?;
            let (_, manifest) = experiments::run_sweep(&c)?;
            Ok(summarize(&manifest, &c.output_dir))
        }
        Command::Pcontinue(args) => {
            let c = args.load()?;
            let (steps, manifest) = experiments::run_p_continuation(&c)?;
            let mut text = String::from("p,theta_max_target_k\n");
            for s in &steps {
                text.push_str(&format!("{},{:.3}\n", s.p, s.run.report.max_target_temperature));
            }
            emit(&text);
            Ok(summarize(&manifest, &c.output_dir))
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
