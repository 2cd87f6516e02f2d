//! Command-line front end for the simulation lab. One experiment
//! configuration drives the whole pipeline: `collect` harvests a
//! PID-labeled dataset, `pretrain` fits the axis networks, `fly` runs a
//! single flight, and `compare` produces the controller-by-trajectory
//! table with improvement ratios.
//!
//! Exit codes separate failure classes so scripts can branch on them:
//! 1 usage or configuration, 2 unstable data collection, 3 training
//! failure, 4 aborted or failed flights (partial artifacts are still
//! written).

use std::env;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use flightlab::{
    collect_offline, flight_metrics, fly, improvement_ratio, pretrain, quartiles, run_neural,
    write_flight_log_csv, write_metrics_csv, write_plot_bundle, CollectError, ControllerModel,
    Dataset, Disturbance, ExperimentConfig, FlightLog, MetricsRow, NeuralMode, PidPilot,
    PretrainReport, RunError, SimConfig, TrajectorySpec,
};

const EXIT_USAGE: u8 = 1;
const EXIT_COLLECT: u8 = 2;
const EXIT_TRAIN: u8 = 3;
const EXIT_FLIGHT: u8 = 4;

/// An error tagged with the exit code it should produce.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    fn new(code: u8, error: impl Into<anyhow::Error>) -> Self {
        Self { code, error: error.into() }
    }

    fn usage(error: impl Into<anyhow::Error>) -> Self {
        Self::new(EXIT_USAGE, error)
    }
}

#[derive(Parser)]
#[command(
    name = "flightlab",
    version,
    about = "Quadrotor tracking experiments: collect, pretrain, fly, compare"
)]
struct Cli {
    /// Experiment configuration file (TOML). When absent, the path in
    /// $FLIGHTLAB_CONFIG is tried, then the built-in defaults.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Configuration helpers.
    Config {
        #[command(subcommand)]
        action: ConfigAction,
    },
    /// Fly the PID teacher and harvest a supervised dataset.
    Collect {
        /// Samples to harvest per axis (overrides the config value).
        #[arg(long)]
        samples: Option<usize>,
        /// Dataset destination (default: <output_dir>/dataset.csv).
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Fit the per-axis networks to a collected dataset.
    Pretrain {
        /// Dataset to train on (default: <output_dir>/dataset.csv).
        #[arg(long, value_name = "FILE")]
        dataset: Option<PathBuf>,
        /// Model destination (default: <output_dir>/model.json).
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
        /// Loss-curve CSV destination (default: <output_dir>/pretrain_losses.csv).
        #[arg(long, value_name = "FILE")]
        report: Option<PathBuf>,
    },
    /// Fly one controller over one trajectory and log the flight.
    Fly {
        /// Outer-loop controller.
        #[arg(long, value_enum)]
        controller: Controller,
        /// Trajectory label from the config, e.g. circle-xy-s1-v1.
        #[arg(long, value_name = "LABEL")]
        trajectory: String,
        /// Pretrained model file; required for dnn0 and dnn.
        #[arg(long, value_name = "FILE")]
        model: Option<PathBuf>,
        /// Flight-log destination (default: <output_dir>/flight_<controller>_<label>.csv).
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
        /// Where dnn leaves its refined weights (default: <output_dir>/model_refined.json).
        #[arg(long, value_name = "FILE")]
        model_out: Option<PathBuf>,
    },
    /// Run every controller over every evaluation trajectory and tabulate.
    Compare {
        /// Output directory (default: the config's output_dir).
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        /// Worker threads for independent runs (default: all cores).
        #[arg(long)]
        jobs: Option<usize>,
        /// Pretrained model file. Without it, <out>/model.json is used when
        /// present and the offline pipeline is run otherwise.
        #[arg(long, value_name = "FILE")]
        model: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum ConfigAction {
    /// Emit the reference configuration, every value at its default.
    Init {
        /// Destination file (default: stdout).
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Controller {
    /// Hand-tuned baseline.
    Pid,
    /// Pretrained networks, weights frozen.
    #[value(name = "dnn0")]
    Dnn0,
    /// Pretrained networks refined in flight.
    Dnn,
}

impl Controller {
    fn label(self) -> &'static str {
        match self {
            Self::Pid => "pid",
            Self::Dnn0 => "dnn0",
            Self::Dnn => "dnn",
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // Help and version requests are not failures.
            use clap::error::ErrorKind;
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => EXIT_USAGE,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {:#}", failure.error);
            ExitCode::from(failure.code)
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Config { action: ConfigAction::Init { out } } => cmd_config_init(out.as_deref()),
        Command::Collect { samples, out } => {
            let config = load_config(cli.config.as_deref())?;
            cmd_collect(&config, samples, out)
        }
        Command::Pretrain { dataset, out, report } => {
            let config = load_config(cli.config.as_deref())?;
            cmd_pretrain(&config, dataset, out, report)
        }
        Command::Fly { controller, trajectory, model, out, model_out } => {
            let config = load_config(cli.config.as_deref())?;
            cmd_fly(&config, controller, &trajectory, model, out, model_out)
        }
        Command::Compare { out, jobs, model } => {
            let config = load_config(cli.config.as_deref())?;
            cmd_compare(&config, out, jobs, model)
        }
    }
}

/// The --config flag beats $FLIGHTLAB_CONFIG, which beats the built-in
/// defaults. Values inside the file already sit on top of the defaults
/// through serde.
fn load_config(flag: Option<&Path>) -> Result<ExperimentConfig, Failure> {
    let path = flag
        .map(Path::to_path_buf)
        .or_else(|| env::var_os("FLIGHTLAB_CONFIG").map(PathBuf::from));
    match path {
        Some(path) => ExperimentConfig::load(&path)
            .with_context(|| format!("loading config {}", path.display()))
            .map_err(Failure::usage),
        None => Ok(ExperimentConfig::default()),
    }
}

/// Creates the parent directory so downstream writers see a valid path.
fn prepare(path: &Path) -> Result<(), Failure> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)
                .with_context(|| format!("creating {}", parent.display()))
                .map_err(Failure::usage)?;
        }
    }
    Ok(())
}

fn cmd_config_init(out: Option<&Path>) -> Result<(), Failure> {
    let text = ExperimentConfig::reference_toml();
    match out {
        Some(path) => {
            prepare(path)?;
            fs::write(path, text)
                .with_context(|| format!("writing {}", path.display()))
                .map_err(Failure::usage)?;
            println!("reference config written to {}", path.display());
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn collect_dataset(config: &ExperimentConfig, samples: usize) -> Result<Dataset, Failure> {
    collect_offline(
        &config.sim(),
        &config.pid,
        &config.limits,
        &config.collection.trajectories,
        samples,
        &config.disturbance,
        config.collection.seed,
    )
    .map_err(|err| match err {
        CollectError::NoTrajectories => Failure::usage(err),
        _ => Failure::new(EXIT_COLLECT, err),
    })
}

fn cmd_collect(
    config: &ExperimentConfig,
    samples: Option<usize>,
    out: Option<PathBuf>,
) -> Result<(), Failure> {
    let samples = samples.unwrap_or(config.collection.samples_per_axis);
    let out = out.unwrap_or_else(|| config.output_dir.join("dataset.csv"));
    let dataset = collect_dataset(config, samples)?;
    prepare(&out)?;
    dataset.write_csv(&out).map_err(Failure::usage)?;
    for (axis, count) in ["x", "y", "z"].iter().zip(dataset.counts()) {
        println!("axis {axis}: {count} samples");
    }
    println!("dataset written to {}", out.display());
    Ok(())
}

/// One row per quasi-Newton iteration per axis, ready for plotting.
fn write_loss_curves(report: &PretrainReport, path: &Path) -> Result<(), Failure> {
    prepare(path)?;
    let mut text = String::from("axis,iteration,loss\n");
    for axis in &report.axes {
        for (iteration, loss) in axis.loss_history.iter().enumerate() {
            text.push_str(&format!("{},{},{}\n", axis.axis.label(), iteration, loss));
        }
    }
    fs::write(path, text)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(Failure::usage)
}

fn cmd_pretrain(
    config: &ExperimentConfig,
    dataset: Option<PathBuf>,
    out: Option<PathBuf>,
    report: Option<PathBuf>,
) -> Result<(), Failure> {
    let dataset_path = dataset.unwrap_or_else(|| config.output_dir.join("dataset.csv"));
    let out = out.unwrap_or_else(|| config.output_dir.join("model.json"));
    let report_path = report.unwrap_or_else(|| config.output_dir.join("pretrain_losses.csv"));

    let dataset = Dataset::read_csv(&dataset_path)
        .with_context(|| format!("reading dataset {}", dataset_path.display()))
        .map_err(Failure::usage)?;
    let (model, report) = pretrain(
        &dataset,
        config.network.architecture,
        &config.trainer,
        config.network.scaled_clamp,
    )
    .map_err(|err| Failure::new(EXIT_TRAIN, err))?;

    prepare(&out)?;
    model.save(&out).map_err(Failure::usage)?;
    write_loss_curves(&report, &report_path)?;

    for axis in &report.axes {
        println!(
            "axis {}: {} train / {} held out, nse {:.3e}, {} iterations, {:?}{}",
            axis.axis.label(),
            axis.train_samples,
            axis.held_out_samples,
            axis.held_out_nse,
            axis.iterations,
            axis.status,
            if axis.mse_fallback { ", constant-target fallback" } else { "" },
        );
    }
    println!("model written to {}", out.display());
    println!("loss curves written to {}", report_path.display());
    Ok(())
}

fn load_model(path: &Path) -> Result<ControllerModel, Failure> {
    ControllerModel::load(path)
        .with_context(|| format!("loading model {}", path.display()))
        .map_err(Failure::usage)
}

fn cmd_fly(
    config: &ExperimentConfig,
    controller: Controller,
    trajectory: &str,
    model: Option<PathBuf>,
    out: Option<PathBuf>,
    model_out: Option<PathBuf>,
) -> Result<(), Failure> {
    let traj = config.find_trajectory(trajectory).ok_or_else(|| {
        let mut known: Vec<String> = config
            .evaluation
            .trajectories
            .iter()
            .chain(&config.collection.trajectories)
            .map(|t| t.label())
            .collect();
        known.dedup();
        Failure::usage(anyhow!(
            "unknown trajectory {trajectory:?}; configured labels: {}",
            known.join(", ")
        ))
    })?;
    let out = out.unwrap_or_else(|| {
        config.output_dir.join(format!("flight_{}_{}.csv", controller.label(), traj.label()))
    });
    let sim = config.sim();

    let flown = match controller {
        Controller::Pid => {
            let mut pilot = PidPilot::new(config.pid, config.limits);
            fly(&sim, traj, &config.disturbance, &mut pilot)
        }
        Controller::Dnn0 | Controller::Dnn => {
            let model_path = model.ok_or_else(|| {
                Failure::usage(anyhow!("--model is required for controller {}", controller.label()))
            })?;
            let loaded = load_model(&model_path)?;
            let mode = if controller == Controller::Dnn {
                NeuralMode::Online
            } else {
                NeuralMode::Frozen
            };
            match run_neural(
                &sim,
                &loaded,
                mode,
                traj,
                &config.disturbance,
                &config.limits,
                &config.fuzzy,
                &config.online,
                &config.trainer,
            ) {
                Ok(run) => {
                    if controller == Controller::Dnn {
                        let model_out = model_out
                            .unwrap_or_else(|| config.output_dir.join("model_refined.json"));
                        prepare(&model_out)?;
                        run.model.save(&model_out).map_err(Failure::usage)?;
                        println!(
                            "refined model written to {} ({} weight updates, {} deadline hits)",
                            model_out.display(),
                            run.diagnostics.updates,
                            run.diagnostics.deadline_hits,
                        );
                    }
                    Ok(run.log)
                }
                Err(RunError::Model(err)) => return Err(Failure::usage(err)),
                Err(RunError::Flight(failure)) => Err(failure),
            }
        }
    };

    match flown {
        Ok(log) => {
            prepare(&out)?;
            write_flight_log_csv(&log, &out).map_err(Failure::usage)?;
            let metrics = flight_metrics(&log).map_err(Failure::usage)?;
            println!(
                "{} on {}: mae {:.4} m, mean step {:.1} us",
                controller.label(),
                traj.label(),
                metrics.mae,
                metrics.mean_step_us,
            );
            println!("flight log written to {}", out.display());
            Ok(())
        }
        Err(failure) => {
            prepare(&out)?;
            write_flight_log_csv(&failure.log, &out).map_err(Failure::usage)?;
            eprintln!("partial flight log written to {}", out.display());
            Err(Failure::new(EXIT_FLIGHT, anyhow!(failure.to_string())))
        }
    }
}

const CONTROLLERS: [&str; 3] = ["pid", "dnn0", "dnn"];

fn run_cell(
    sim: &SimConfig,
    config: &ExperimentConfig,
    model: &ControllerModel,
    controller: &str,
    traj: &TrajectorySpec,
    dist: &Disturbance,
) -> Result<FlightLog, String> {
    match controller {
        "pid" => {
            let mut pilot = PidPilot::new(config.pid, config.limits);
            fly(sim, traj, dist, &mut pilot).map_err(|failure| failure.to_string())
        }
        name => {
            let mode = if name == "dnn" { NeuralMode::Online } else { NeuralMode::Frozen };
            run_neural(
                sim,
                model,
                mode,
                traj,
                dist,
                &config.limits,
                &config.fuzzy,
                &config.online,
                &config.trainer,
            )
            .map(|run| run.log)
            .map_err(|err| err.to_string())
        }
    }
}

/// Loads a model from disk when one is available, otherwise runs the
/// offline pipeline and leaves dataset and model next to the metrics.
fn resolve_model(
    config: &ExperimentConfig,
    out_dir: &Path,
    flag: Option<PathBuf>,
) -> Result<ControllerModel, Failure> {
    if let Some(path) = flag {
        return load_model(&path);
    }
    let default = out_dir.join("model.json");
    if default.exists() {
        println!("using model {}", default.display());
        return load_model(&default);
    }
    println!("no model found, running collect and pretrain first");
    let dataset = collect_dataset(config, config.collection.samples_per_axis)?;
    dataset.write_csv(&out_dir.join("dataset.csv")).map_err(Failure::usage)?;
    let (model, report) = pretrain(
        &dataset,
        config.network.architecture,
        &config.trainer,
        config.network.scaled_clamp,
    )
    .map_err(|err| Failure::new(EXIT_TRAIN, err))?;
    model.save(&default).map_err(Failure::usage)?;
    let nse: Vec<String> =
        report.axes.iter().map(|a| format!("{:.2e}", a.held_out_nse)).collect();
    println!("model written to {} (held-out nse {})", default.display(), nse.join(" / "));
    Ok(model)
}

fn cmd_compare(
    config: &ExperimentConfig,
    out: Option<PathBuf>,
    jobs: Option<usize>,
    model: Option<PathBuf>,
) -> Result<(), Failure> {
    let out_dir = out.unwrap_or_else(|| config.output_dir.clone());
    fs::create_dir_all(&out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))
        .map_err(Failure::usage)?;
    let model = resolve_model(config, &out_dir, model)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|err| Failure::usage(anyhow!("building worker pool: {err}")))?;

    let trajectories = &config.evaluation.trajectories;
    let reps = config.evaluation.repetitions;
    let mut matrix: Vec<(usize, usize, u64)> = Vec::new();
    for t in 0..trajectories.len() {
        for c in 0..CONTROLLERS.len() {
            for r in 0..reps as u64 {
                matrix.push((t, c, r));
            }
        }
    }
    println!(
        "running {} flights ({} trajectories x {} controllers x {} repetitions)",
        matrix.len(),
        trajectories.len(),
        CONTROLLERS.len(),
        reps,
    );

    // Each run owns its pilot and noise stream; seeds vary only the noise.
    let sim = config.sim();
    let results: Vec<((usize, usize, u64), Result<FlightLog, String>)> = pool.install(|| {
        matrix
            .par_iter()
            .map(|&(t, c, r)| {
                let dist = Disturbance {
                    seed: config.evaluation.base_seed + r,
                    ..config.disturbance.clone()
                };
                let outcome = run_cell(&sim, config, &model, CONTROLLERS[c], &trajectories[t], &dist);
                ((t, c, r), outcome)
            })
            .collect()
    });

    let mut rows: Vec<MetricsRow> = Vec::with_capacity(results.len());
    let mut failures: Vec<(usize, usize, u64, String)> = Vec::new();
    let mut maes: Vec<[Vec<f64>; 3]> = (0..trajectories.len()).map(|_| Default::default()).collect();
    // First successful run per cell feeds the plot bundle.
    let mut plot_logs: Vec<[Option<FlightLog>; 3]> =
        (0..trajectories.len()).map(|_| [None, None, None]).collect();
    for ((t, c, r), outcome) in results {
        match outcome.and_then(|log| {
            flight_metrics(&log).map(|m| (log, m)).map_err(|err| err.to_string())
        }) {
            Ok((log, metrics)) => {
                maes[t][c].push(metrics.mae);
                rows.push(MetricsRow {
                    trajectory: trajectories[t].label(),
                    controller: CONTROLLERS[c].to_string(),
                    run: r,
                    metrics,
                });
                if plot_logs[t][c].is_none() {
                    plot_logs[t][c] = Some(log);
                }
            }
            Err(message) => failures.push((t, c, r, message)),
        }
    }

    println!();
    println!("median mae over {} runs (m):", reps);
    for (t, traj) in trajectories.iter().enumerate() {
        println!("{}:", traj.label());
        let mut medians = [None, None, None];
        for (c, name) in CONTROLLERS.iter().enumerate() {
            let cell = &maes[t][c];
            if cell.is_empty() {
                println!("  {name:<5} all runs failed");
                continue;
            }
            let q = quartiles(cell).map_err(Failure::usage)?;
            medians[c] = Some(q.median);
            println!(
                "  {name:<5} {:.4}  [{:.4} .. {:.4}]  {}/{} runs",
                q.median,
                q.q1,
                q.q3,
                cell.len(),
                reps,
            );
        }
        if let [Some(pid), Some(dnn0), Some(dnn)] = medians {
            let vs_pid = improvement_ratio(dnn, pid).map_err(Failure::usage)?;
            let vs_dnn0 = improvement_ratio(dnn, dnn0).map_err(Failure::usage)?;
            println!("  dnn vs pid  {:+.1} %", vs_pid * 100.0);
            println!("  dnn vs dnn0 {:+.1} %", vs_dnn0 * 100.0);
        }
    }

    let metrics_path = out_dir.join("metrics.csv");
    write_metrics_csv(&rows, &metrics_path).map_err(Failure::usage)?;
    println!();
    println!("metrics written to {}", metrics_path.display());
    for (t, traj) in trajectories.iter().enumerate() {
        let entries: Vec<(&str, &FlightLog)> = CONTROLLERS
            .iter()
            .enumerate()
            .filter_map(|(c, name)| plot_logs[t][c].as_ref().map(|log| (*name, log)))
            .collect();
        if entries.is_empty() {
            continue;
        }
        let path = out_dir.join(format!("plot_{}.csv", traj.label()));
        write_plot_bundle(&entries, &path).map_err(Failure::usage)?;
        println!("plot bundle written to {}", path.display());
    }

    if !failures.is_empty() {
        for (t, c, r, message) in &failures {
            eprintln!("failed: {} {} run {r}: {message}", trajectories[*t].label(), CONTROLLERS[*c]);
        }
        return Err(Failure::new(
            EXIT_FLIGHT,
            anyhow!("{} of {} runs failed; partial results were written", failures.len(), matrix.len()),
        ));
    }
    Ok(())
}
