//! The two-phase learning pipeline. Offline: fly the PID controller,
//! harvest per-axis (error window, command) pairs, and fit the axis
//! networks by quasi-Newton descent. Online: fly the networks, push
//! supervisor-corrected targets into short replay buffers, and refine the
//! weights a few iterations per control step under a wall-clock budget.

use std::collections::VecDeque;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Axis, DataError, Dataset, DatasetProvenance, TrainingSample};
use crate::dynamics::{assemble_command, axis_outputs, CommandLimits, Disturbance, HighLevelCommand, SimError};
use crate::flight::{fly, FlightFailure, FlightLog, Pilot, PidPilot, PilotOutput, SimConfig};
use crate::fuzzy::{correction, FuzzyParams};
use crate::model::{ControllerModel, ModelError, ModelProvenance};
use crate::net::{
    batch_loss, init_random_search, train_quasi_newton, Architecture, AxisNetwork,
    FeatureScaling, LossError, TrainOutcome, TrainerConfig,
};
use crate::optim::BfgsStatus;
use crate::pid::PidGains;
use crate::trajectory::{FeatureWindow, TrajectorySpec};

/// Fixed-capacity FIFO of the most recent training samples for one axis.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    items: VecDeque<TrainingSample>,
    capacity: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1, "replay buffer needs room for at least one sample");
        Self { items: VecDeque::with_capacity(capacity), capacity }
    }

    pub fn push(&mut self, sample: TrainingSample) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(sample);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn samples(&self) -> Vec<TrainingSample> {
        self.items.iter().copied().collect()
    }
}

/// In-flight refinement knobs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OnlineConfig {
    /// Replay buffer length per axis.
    pub buffer_capacity: usize,
    /// Control steps between weight updates (1 = every step).
    pub update_cadence: u64,
    /// Position-error norm that latches the weight freeze, m.
    pub divergence_threshold: f64,
    /// Whether the supervisor correction is added to the applied command
    /// as well as to the training target.
    pub apply_correction: bool,
}

impl Default for OnlineConfig {
    fn default() -> Self {
        Self {
            buffer_capacity: 200,
            update_cadence: 2,
            divergence_threshold: 4.0,
            apply_correction: false,
        }
    }
}

impl OnlineConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.buffer_capacity == 0 {
            return Err("replay buffer capacity must be at least 1".into());
        }
        if self.update_cadence == 0 {
            return Err("update cadence must be at least 1".into());
        }
        if !(self.divergence_threshold > 0.0) {
            return Err("divergence threshold must be positive".into());
        }
        Ok(())
    }
}

/// Whether the neural pilot adapts in flight or keeps its weights fixed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NeuralMode {
    Frozen,
    Online,
}

impl NeuralMode {
    pub fn label(&self) -> &'static str {
        match self {
            NeuralMode::Frozen => "dnn0",
            NeuralMode::Online => "dnn",
        }
    }
}

/// Counters describing what in-flight refinement actually did.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OnlineDiagnostics {
    /// Control steps on which weights were retrained.
    pub updates: usize,
    /// Accepted quasi-Newton iterations summed over all axes and updates.
    pub accepted_iterations: usize,
    /// Updates that stopped on the wall-clock deadline.
    pub deadline_hits: usize,
    /// Updates whose line search found no acceptable step.
    pub line_search_failures: usize,
    /// Updates abandoned on a non-finite loss.
    pub nonfinite_aborts: usize,
    /// Times the divergence guard latched (0 or 1).
    pub guard_trips: usize,
}

impl OnlineDiagnostics {
    fn note(&mut self, outcome: &TrainOutcome) {
        self.accepted_iterations += outcome.iterations;
        match outcome.status {
            BfgsStatus::DeadlineReached => self.deadline_hits += 1,
            BfgsStatus::LineSearchFailed => self.line_search_failures += 1,
            BfgsStatus::NonFinite => self.nonfinite_aborts += 1,
            BfgsStatus::Converged | BfgsStatus::IterationCap => {}
        }
    }
}

/// Outer loop built from three axis networks. In `Online` mode every step
/// pushes a supervisor-corrected target into the replay buffers and, on its
/// cadence, refines the weights under a shared wall-clock budget. A
/// position-error norm above the divergence threshold permanently freezes
/// the weights; the pilot keeps flying on the last safe set.
pub struct NeuralPilot {
    nets: [AxisNetwork; 3],
    scalings: [FeatureScaling; 3],
    windows: [FeatureWindow; 3],
    buffers: [ReplayBuffer; 3],
    fuzzy: FuzzyParams,
    online: OnlineConfig,
    trainer: TrainerConfig,
    limits: CommandLimits,
    mode: NeuralMode,
    guard_frozen: bool,
    tick: u64,
    pub diagnostics: OnlineDiagnostics,
}

impl NeuralPilot {
    pub fn from_model(
        model: &ControllerModel,
        mode: NeuralMode,
        limits: CommandLimits,
        fuzzy: FuzzyParams,
        online: OnlineConfig,
        trainer: TrainerConfig,
    ) -> Result<Self, ModelError> {
        let [(nx, sx), (ny, sy), (nz, sz)] = model.networks()?;
        let cap = online.buffer_capacity;
        Ok(Self {
            nets: [nx, ny, nz],
            scalings: [sx, sy, sz],
            windows: Default::default(),
            buffers: [ReplayBuffer::new(cap), ReplayBuffer::new(cap), ReplayBuffer::new(cap)],
            fuzzy,
            online,
            trainer,
            limits,
            mode,
            guard_frozen: false,
            tick: 0,
            diagnostics: OnlineDiagnostics::default(),
        })
    }

    pub fn networks(&self) -> &[AxisNetwork; 3] {
        &self.nets
    }

    pub fn guard_frozen(&self) -> bool {
        self.guard_frozen
    }

    /// Packs the current (possibly refined) weights back into a model file
    /// alongside the original architecture and provenance.
    pub fn into_model(self, source: &ControllerModel) -> ControllerModel {
        ControllerModel::new(
            source.architecture,
            self.nets,
            self.scalings,
            source.provenance.clone(),
        )
    }
}

impl Pilot for NeuralPilot {
    fn name(&self) -> &str {
        self.mode.label()
    }

    fn step(&mut self, e: [f64; 3], de: [f64; 3], _dt: f64) -> PilotOutput {
        let online = self.mode == NeuralMode::Online;

        if online && !self.guard_frozen {
            let norm = (e[0] * e[0] + e[1] * e[1] + e[2] * e[2]).sqrt();
            if norm > self.online.divergence_threshold {
                self.guard_frozen = true;
                self.diagnostics.guard_trips += 1;
            }
        }

        for (w, (ei, dei)) in self.windows.iter_mut().zip(e.iter().zip(&de)) {
            w.push(*ei, *dei);
        }
        let mut outputs = [0.0; 3];
        for i in 0..3 {
            outputs[i] = self.nets[i].forward(&self.scalings[i], &self.windows[i].features());
        }
        let du = if online { correction(e, de, &self.fuzzy) } else { [0.0; 3] };

        // The applied command comes from the forward pass that preceded this
        // step's weight update; refinement pays off from the next step on.
        let applied = if online && self.online.apply_correction {
            [outputs[0] + du[0], outputs[1] + du[1], outputs[2] + du[2]]
        } else {
            outputs
        };
        let command = assemble_command(applied, &self.limits);
        // Targets build on the clamped command actually flown, not the raw
        // network output: corrections never chase values the actuators
        // cannot realize, so saturated transients do not wind the weights up.
        let flown = axis_outputs(&command);

        if online && !self.guard_frozen {
            for i in 0..3 {
                self.buffers[i].push(TrainingSample {
                    features: self.windows[i].features(),
                    target: flown[i] + du[i],
                });
            }
            if self.tick % self.online.update_cadence == 0 {
                // One wall-clock budget per update, shared by all three axes.
                let deadline =
                    Instant::now() + Duration::from_secs_f64(self.trainer.online_budget_ms * 1e-3);
                let bfgs = self.trainer.online_bfgs(deadline);
                for i in 0..3 {
                    let samples = self.buffers[i].samples();
                    let outcome = train_quasi_newton(&self.nets[i], &self.scalings[i], &samples, &bfgs)
                        .expect("replay buffers hold at least the sample pushed this step");
                    self.diagnostics.note(&outcome);
                    self.nets[i] = outcome.network;
                }
                self.diagnostics.updates += 1;
            }
        }
        self.tick += 1;

        PilotOutput { command, correction: du, guard_frozen: self.guard_frozen }
    }
}

#[derive(Debug, Error)]
pub enum CollectError {
    #[error("teacher flight on {trajectory} went unstable: {source}")]
    Unstable {
        trajectory: String,
        #[source]
        source: SimError,
    },
    #[error("no trajectories to collect from")]
    NoTrajectories,
    #[error("collection is not making progress (zero usable rows per flight)")]
    NoProgress,
}

/// Flies the PID teacher over the trajectory list (cycling as needed) and
/// harvests exactly `samples_per_axis` supervised pairs per axis. Physical
/// disturbances are stripped so the teacher demonstrates nominal-plant
/// behavior; measurement noise and its seed are kept, with each flight
/// offset to its own noise stream. Error windows warm up from the first
/// row, but only rows past the settling interval yield samples.
pub fn collect_offline(
    sim: &SimConfig,
    gains: &PidGains,
    limits: &CommandLimits,
    trajectories: &[TrajectorySpec],
    samples_per_axis: usize,
    dist: &Disturbance,
    seed: u64,
) -> Result<Dataset, CollectError> {
    if trajectories.is_empty() {
        return Err(CollectError::NoTrajectories);
    }
    let mut dataset = Dataset::new(DatasetProvenance {
        controller: "pid".to_string(),
        seed,
        trajectories: trajectories.iter().map(|t| t.label()).collect(),
    });

    let mut flight_index: u64 = 0;
    while dataset.counts()[0] < samples_per_axis {
        let traj = &trajectories[(flight_index as usize) % trajectories.len()];
        let flight_dist = dist.without_physical_effects().with_seed(seed.wrapping_add(flight_index));
        let mut pilot = PidPilot::new(gains.clone(), *limits);
        let log = fly(sim, traj, &flight_dist, &mut pilot).map_err(|failure| {
            CollectError::Unstable { trajectory: traj.label(), source: failure.error }
        })?;

        let before = dataset.counts()[0];
        let mut windows = [FeatureWindow::default(); 3];
        let cutoff = log.settle - 1e-9;
        for row in &log.rows {
            for (w, (ei, dei)) in windows.iter_mut().zip(row.error.iter().zip(&row.error_rate)) {
                w.push(*ei, *dei);
            }
            if row.t < cutoff || dataset.counts()[0] >= samples_per_axis {
                continue;
            }
            let cmd = HighLevelCommand {
                pitch: row.command[0],
                roll: row.command[1],
                climb_rate: row.command[2],
                yaw: 0.0,
            };
            let targets = axis_outputs(&cmd);
            for (axis, window) in Axis::ALL.iter().zip(&windows) {
                dataset.push(
                    *axis,
                    TrainingSample { features: window.features(), target: targets[axis.index()] },
                );
            }
        }
        if dataset.counts()[0] == before {
            return Err(CollectError::NoProgress);
        }
        flight_index += 1;
    }
    Ok(dataset)
}

#[derive(Debug, Error)]
pub enum PretrainError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error("invalid training configuration: {0}")]
    Config(String),
}

/// Per-axis account of one pretraining run.
#[derive(Debug, Clone)]
pub struct AxisReport {
    pub axis: Axis,
    pub train_samples: usize,
    pub held_out_samples: usize,
    /// Best subset loss found by the random-search initializer.
    pub random_search_loss: f64,
    /// Normalized squared error on the held-out split after training.
    pub held_out_nse: f64,
    pub loss_history: Vec<f64>,
    pub iterations: usize,
    pub status: BfgsStatus,
    pub mse_fallback: bool,
}

#[derive(Debug, Clone)]
pub struct PretrainReport {
    pub axes: [AxisReport; 3],
}

/// Fits the three axis networks to a collected dataset. Every fifth sample
/// is held out for evaluation; scaling statistics come from the training
/// split only. Initialization is an independently seeded random search per
/// axis, refinement is full-batch quasi-Newton descent.
pub fn pretrain(
    dataset: &Dataset,
    arch: Architecture,
    trainer: &TrainerConfig,
    scaled_clamp: f64,
) -> Result<(ControllerModel, PretrainReport), PretrainError> {
    dataset.validate()?;
    trainer.validate().map_err(PretrainError::Config)?;
    arch.validate().map_err(PretrainError::Config)?;

    let mut nets: Vec<AxisNetwork> = Vec::with_capacity(3);
    let mut scalings: Vec<FeatureScaling> = Vec::with_capacity(3);
    let mut reports: Vec<AxisReport> = Vec::with_capacity(3);

    for axis in Axis::ALL {
        let samples = dataset.axis(axis);
        let mut train_set = Vec::with_capacity(samples.len());
        let mut held_out = Vec::with_capacity(samples.len() / 5 + 1);
        for (i, s) in samples.iter().enumerate() {
            if i % 5 == 4 {
                held_out.push(*s);
            } else {
                train_set.push(*s);
            }
        }

        let scaling = FeatureScaling::fit(&train_set, scaled_clamp)?;
        let mut rng = ChaCha8Rng::seed_from_u64(trainer.seed.wrapping_add(axis.index() as u64));
        let (init, random_search_loss) = init_random_search(
            arch,
            &scaling,
            &train_set,
            trainer.random_search_candidates,
            &mut rng,
        )?;
        let outcome = train_quasi_newton(&init, &scaling, &train_set, &trainer.offline_bfgs())?;
        // Tiny datasets can leave the held-out split empty; fall back to the
        // training split so the report always carries a number.
        let eval_set: &[TrainingSample] = if held_out.is_empty() { &train_set } else { &held_out };
        let held_out_nse = batch_loss(&outcome.network, &scaling, eval_set)?.loss;

        reports.push(AxisReport {
            axis,
            train_samples: train_set.len(),
            held_out_samples: held_out.len(),
            random_search_loss,
            held_out_nse,
            loss_history: outcome.loss_history,
            iterations: outcome.iterations,
            status: outcome.status,
            mse_fallback: outcome.mse_fallback,
        });
        nets.push(outcome.network);
        scalings.push(scaling);
    }

    let provenance = ModelProvenance {
        seed: trainer.seed,
        teacher: dataset.provenance.controller.clone(),
        trajectories: dataset.provenance.trajectories.clone(),
        samples_per_axis: dataset.counts()[0],
        held_out_nse: [reports[0].held_out_nse, reports[1].held_out_nse, reports[2].held_out_nse],
        training_iterations: [reports[0].iterations, reports[1].iterations, reports[2].iterations],
        mse_fallback: [reports[0].mse_fallback, reports[1].mse_fallback, reports[2].mse_fallback],
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
    };
    let nets: [AxisNetwork; 3] = nets.try_into().expect("three axes");
    let scalings: [FeatureScaling; 3] = scalings.try_into().expect("three axes");
    let reports: [AxisReport; 3] = reports.try_into().expect("three axes");
    Ok((
        ControllerModel::new(arch, nets, scalings, provenance),
        PretrainReport { axes: reports },
    ))
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Flight(#[from] Box<FlightFailure>),
}

/// A completed neural flight: the log, the weights as they stood at the
/// end (refined when the mode was `Online`), and the update counters.
pub struct NeuralRun {
    pub log: FlightLog,
    pub model: ControllerModel,
    pub diagnostics: OnlineDiagnostics,
}

/// Flies a neural controller built from a model file over one trajectory.
#[allow(clippy::too_many_arguments)]
pub fn run_neural(
    sim: &SimConfig,
    model: &ControllerModel,
    mode: NeuralMode,
    traj: &TrajectorySpec,
    dist: &Disturbance,
    limits: &CommandLimits,
    fuzzy: &FuzzyParams,
    online: &OnlineConfig,
    trainer: &TrainerConfig,
) -> Result<NeuralRun, RunError> {
    let mut pilot = NeuralPilot::from_model(model, mode, *limits, *fuzzy, *online, *trainer)?;
    let log = fly(sim, traj, dist, &mut pilot)?;
    let diagnostics = pilot.diagnostics;
    Ok(NeuralRun { log, model: pilot.into_model(model), diagnostics })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::{TrajectoryKind, TrajectoryPlane};

    fn sample_with_target(target: f64) -> TrainingSample {
        TrainingSample { features: [target; 6], target }
    }

    #[test]
    fn replay_buffer_evicts_oldest_first() {
        let mut buf = ReplayBuffer::new(3);
        for k in 0..5 {
            buf.push(sample_with_target(k as f64));
        }
        assert_eq!(buf.len(), 3);
        let kept: Vec<f64> = buf.samples().iter().map(|s| s.target).collect();
        assert_eq!(kept, vec![2.0, 3.0, 4.0]);
    }

    #[test]
    fn replay_buffer_below_capacity_keeps_everything() {
        let mut buf = ReplayBuffer::new(10);
        assert!(buf.is_empty());
        buf.push(sample_with_target(1.0));
        buf.push(sample_with_target(2.0));
        assert_eq!(buf.len(), 2);
        let kept: Vec<f64> = buf.samples().iter().map(|s| s.target).collect();
        assert_eq!(kept, vec![1.0, 2.0]);
    }

    #[test]
    fn online_config_validation() {
        OnlineConfig::default().validate().unwrap();
        assert!(OnlineConfig { buffer_capacity: 0, ..Default::default() }.validate().is_err());
        assert!(OnlineConfig { update_cadence: 0, ..Default::default() }.validate().is_err());
        assert!(
            OnlineConfig { divergence_threshold: 0.0, ..Default::default() }.validate().is_err()
        );
    }

    fn short_circle() -> TrajectorySpec {
        TrajectorySpec {
            kind: TrajectoryKind::Circle,
            plane: TrajectoryPlane::Xy,
            size: 1.0,
            speed: 1.0,
            center: [0.0; 3],
            duration: 8.0,
            takeoff_altitude: 1.0,
        }
    }

    fn tiny_collection_sim() -> SimConfig {
        SimConfig::default()
    }

    #[test]
    fn collection_fills_every_axis_exactly() {
        let sim = tiny_collection_sim();
        let ds = collect_offline(
            &sim,
            &PidGains::default(),
            &CommandLimits::default(),
            &[short_circle()],
            1200,
            &Disturbance::none(),
            7,
        )
        .unwrap();
        assert_eq!(ds.counts(), [1200, 1200, 1200]);
        ds.validate().unwrap();
        assert_eq!(ds.provenance.controller, "pid");
        assert_eq!(ds.provenance.trajectories, vec!["circle-xy-s1-v1".to_string()]);
    }

    #[test]
    fn collection_cycles_flights_when_one_is_not_enough() {
        // An 8 s trajectory gives 800 steady rows per flight; asking for
        // 1000 samples forces a second flight.
        let sim = tiny_collection_sim();
        let ds = collect_offline(
            &sim,
            &PidGains::default(),
            &CommandLimits::default(),
            &[short_circle()],
            1000,
            &Disturbance::none(),
            7,
        )
        .unwrap();
        assert_eq!(ds.counts(), [1000, 1000, 1000]);
    }

    #[test]
    fn collection_strips_physical_disturbances_but_keeps_noise() {
        let sim = tiny_collection_sim();
        let dirty = Disturbance {
            force: [5.0, 0.0, 0.0],
            mass_schedule: vec![crate::dynamics::MassDelta { at: 0.0, delta: 10.0 }],
            position_noise_std: 0.01,
            seed: 3,
            ..Disturbance::none()
        };
        let clean = Disturbance { position_noise_std: 0.01, seed: 3, ..Disturbance::none() };
        let run = |d: &Disturbance| {
            collect_offline(
                &sim,
                &PidGains::default(),
                &CommandLimits::default(),
                &[short_circle()],
                300,
                d,
                11,
            )
            .unwrap()
        };
        // A 5 N lateral push or a 10 kg payload would wreck the teacher; the
        // collected data must be identical with and without them.
        assert_eq!(run(&dirty), run(&clean));
        // Noise is kept: a noiseless collection differs.
        let silent = Disturbance::none();
        assert_ne!(run(&clean), run(&silent));
    }

    #[test]
    fn collection_with_no_trajectories_fails() {
        let sim = tiny_collection_sim();
        let err = collect_offline(
            &sim,
            &PidGains::default(),
            &CommandLimits::default(),
            &[],
            10,
            &Disturbance::none(),
            0,
        )
        .unwrap_err();
        assert!(matches!(err, CollectError::NoTrajectories));
    }

    #[test]
    fn targets_match_the_logged_pid_commands() {
        let sim = tiny_collection_sim();
        let traj = short_circle();
        let ds = collect_offline(
            &sim,
            &PidGains::default(),
            &CommandLimits::default(),
            &[traj.clone()],
            100,
            &Disturbance::none(),
            7,
        )
        .unwrap();
        // Reproduce the teacher flight and check the first few harvested
        // targets against the log directly.
        let mut pilot = PidPilot::new(PidGains::default(), CommandLimits::default());
        let log = fly(&sim, &traj, &Disturbance::none().with_seed(7), &mut pilot).unwrap();
        let steady: Vec<_> = log.steady_rows().collect();
        for k in 0..5 {
            let row = steady[k];
            assert_eq!(ds.axis(Axis::X)[k].target, row.command[0]);
            assert_eq!(ds.axis(Axis::Y)[k].target, -row.command[1]);
            assert_eq!(ds.axis(Axis::Z)[k].target, row.command[2]);
            assert_eq!(ds.axis(Axis::X)[k].features[0], row.error[0]);
            assert_eq!(ds.axis(Axis::Y)[k].features[3], row.error_rate[1]);
        }
    }

    #[test]
    fn feature_windows_carry_history_across_the_settle_boundary() {
        let sim = tiny_collection_sim();
        let traj = short_circle();
        let ds = collect_offline(
            &sim,
            &PidGains::default(),
            &CommandLimits::default(),
            &[traj.clone()],
            10,
            &Disturbance { position_noise_std: 0.01, seed: 5, ..Disturbance::none() },
            5,
        )
        .unwrap();
        let mut pilot = PidPilot::new(PidGains::default(), CommandLimits::default());
        let dist = Disturbance { position_noise_std: 0.01, seed: 5, ..Disturbance::none() };
        let log = fly(&sim, &traj, &dist, &mut pilot).unwrap();
        // The first steady row's window must reach back into settle rows.
        let rows = &log.rows;
        let first_steady = rows.iter().position(|r| r.t >= log.settle - 1e-9).unwrap();
        let s = &ds.axis(Axis::X)[0];
        assert_eq!(s.features[0], rows[first_steady].error[0]);
        assert_eq!(s.features[1], rows[first_steady - 1].error[0]);
        assert_eq!(s.features[2], rows[first_steady - 2].error[0]);
    }

    fn tiny_dataset(n: usize) -> Dataset {
        // Linear teacher y = 0.3 e_k + 0.1 de_k with decorrelated features.
        let mut ds = Dataset::new(DatasetProvenance {
            controller: "pid".into(),
            seed: 0,
            trajectories: vec!["synthetic".into()],
        });
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..n {
            let mut features = [0.0; 6];
            for f in features.iter_mut() {
                *f = rng.random_range(-1.0..1.0);
            }
            let target = 0.3 * features[0] + 0.1 * features[3];
            for axis in Axis::ALL {
                ds.push(axis, TrainingSample { features, target });
            }
        }
        ds
    }

    #[test]
    fn pretraining_fits_a_linear_teacher_well() {
        let trainer = TrainerConfig {
            random_search_candidates: 8,
            offline_iterations: 120,
            ..Default::default()
        };
        let (model, report) = pretrain(&tiny_dataset(500), Architecture::default(), &trainer, 5.0).unwrap();
        model.validate().unwrap();
        for axis in &report.axes {
            assert!(
                axis.held_out_nse < 0.05,
                "axis {} held-out NSE {}",
                axis.axis,
                axis.held_out_nse
            );
            assert_eq!(axis.train_samples, 400);
            assert_eq!(axis.held_out_samples, 100);
            assert!(!axis.mse_fallback);
        }
        assert_eq!(model.provenance.samples_per_axis, 500);
        assert_eq!(model.provenance.teacher, "pid");
    }

    #[test]
    fn pretraining_is_deterministic() {
        let trainer = TrainerConfig {
            random_search_candidates: 4,
            offline_iterations: 30,
            ..Default::default()
        };
        let ds = tiny_dataset(200);
        let (a, _) = pretrain(&ds, Architecture::default(), &trainer, 5.0).unwrap();
        let (b, _) = pretrain(&ds, Architecture::default(), &trainer, 5.0).unwrap();
        assert_eq!(a.to_json(), b.to_json());
    }

    #[test]
    fn pretrained_model_flies_frozen_without_diverging() {
        let trainer = TrainerConfig {
            random_search_candidates: 8,
            offline_iterations: 120,
            ..Default::default()
        };
        let sim = tiny_collection_sim();
        let ds = collect_offline(
            &sim,
            &PidGains::default(),
            &CommandLimits::default(),
            &[short_circle()],
            2000,
            &Disturbance::none(),
            7,
        )
        .unwrap();
        let (model, _) = pretrain(&ds, Architecture::default(), &trainer, 5.0).unwrap();
        let run = run_neural(
            &sim,
            &model,
            NeuralMode::Frozen,
            &short_circle(),
            &Disturbance::none(),
            &CommandLimits::default(),
            &FuzzyParams::default(),
            &OnlineConfig::default(),
            &trainer,
        )
        .unwrap();
        assert_eq!(run.log.controller, "dnn0");
        assert_eq!(run.diagnostics.updates, 0);
        // Frozen flight leaves the weights untouched.
        assert_eq!(run.model.axes, model.axes);
        let worst = run
            .log
            .steady_rows()
            .map(|r| {
                r.reference
                    .iter()
                    .zip(&r.position)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max);
        assert!(worst < 1.0, "frozen network wandered {worst:.3} m off the reference");
    }

    #[test]
    fn online_mode_updates_weights_and_reports_them() {
        let trainer = TrainerConfig {
            random_search_candidates: 4,
            offline_iterations: 40,
            ..Default::default()
        };
        let sim = tiny_collection_sim();
        let ds = collect_offline(
            &sim,
            &PidGains::default(),
            &CommandLimits::default(),
            &[short_circle()],
            1500,
            &Disturbance::none(),
            7,
        )
        .unwrap();
        let (model, _) = pretrain(&ds, Architecture::default(), &trainer, 5.0).unwrap();
        let traj = TrajectorySpec { duration: 2.0, ..short_circle() };
        let run = run_neural(
            &sim,
            &model,
            NeuralMode::Online,
            &traj,
            &Disturbance::none(),
            &CommandLimits::default(),
            &FuzzyParams::default(),
            &OnlineConfig { update_cadence: 1, ..Default::default() },
            &trainer,
        )
        .unwrap();
        assert_eq!(run.log.controller, "dnn");
        // 5 s of flight at 100 Hz with cadence 1: one update per step.
        assert_eq!(run.diagnostics.updates, 500);
        assert_ne!(run.model.axes, model.axes);
        assert_eq!(run.diagnostics.guard_trips, 0);
    }

    #[test]
    fn zero_rate_supervisor_never_moves_the_weights() {
        let trainer = TrainerConfig {
            random_search_candidates: 4,
            offline_iterations: 40,
            ..Default::default()
        };
        let sim = tiny_collection_sim();
        let ds = collect_offline(
            &sim,
            &PidGains::default(),
            &CommandLimits::default(),
            &[short_circle()],
            1500,
            &Disturbance::none(),
            7,
        )
        .unwrap();
        let (model, _) = pretrain(&ds, Architecture::default(), &trainer, 5.0).unwrap();
        let traj = TrajectorySpec { duration: 2.0, ..short_circle() };
        let silent = FuzzyParams { rate: [0.0; 3], ..Default::default() };
        let run = run_neural(
            &sim,
            &model,
            NeuralMode::Online,
            &traj,
            &Disturbance::none(),
            &CommandLimits::default(),
            &silent,
            &OnlineConfig::default(),
            &trainer,
        )
        .unwrap();
        // Targets equal the network's own outputs, so every update starts at
        // a zero-gradient point and leaves the weights bit-identical.
        assert_eq!(run.model.axes, model.axes);
        assert!(run.diagnostics.updates > 0);
        assert_eq!(run.diagnostics.accepted_iterations, 0);
    }

    #[test]
    fn divergence_guard_latches_and_freezes_training() {
        let trainer = TrainerConfig::default();
        // A zero network commands level hover regardless of input; dragging
        // the reference away drives the error norm over any threshold.
        let model = ControllerModel::new(
            Architecture::default(),
            [
                AxisNetwork::zeros(Architecture::default()),
                AxisNetwork::zeros(Architecture::default()),
                AxisNetwork::zeros(Architecture::default()),
            ],
            [FeatureScaling::identity(), FeatureScaling::identity(), FeatureScaling::identity()],
            ModelProvenance::default(),
        );
        let sim = SimConfig { settle: 0.0, ..SimConfig::default() };
        let traj = TrajectorySpec {
            kind: TrajectoryKind::Circle,
            plane: TrajectoryPlane::Xy,
            size: 4.0,
            speed: 4.0,
            center: [0.0; 3],
            duration: 6.0,
            takeoff_altitude: 1.0,
        };
        let online = OnlineConfig { divergence_threshold: 0.5, ..Default::default() };
        let run = run_neural(
            &sim,
            &model,
            NeuralMode::Online,
            &traj,
            &Disturbance::none(),
            &CommandLimits::default(),
            &FuzzyParams::default(),
            &online,
            &trainer,
        )
        .unwrap();
        assert_eq!(run.diagnostics.guard_trips, 1);
        let first_frozen = run.log.rows.iter().position(|r| r.guard_frozen).unwrap();
        // Once latched, it stays latched.
        assert!(run.log.rows[first_frozen..].iter().all(|r| r.guard_frozen));
        // And the weights stop moving from that point: the guard fires
        // before any update on its step, so the final weights equal the
        // weights as of the last unfrozen step.
        assert!(run.diagnostics.updates <= first_frozen);
    }
}
