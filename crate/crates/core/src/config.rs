//! One TOML file describing a whole experiment: plant, loops, trainer,
//! supervisor, disturbances, and the collection and evaluation campaigns.
//! Unknown keys are rejected everywhere, and every field has a default, so
//! a config file only needs the values it overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{CommandLimits, Disturbance, InnerGains, QuadParams};
use crate::flight::SimConfig;
use crate::fuzzy::FuzzyParams;
use crate::learning::OnlineConfig;
use crate::net::{Architecture, TrainerConfig};
use crate::pid::PidGains;
use crate::trajectory::TrajectorySpec;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimingConfig {
    /// Integration step, s.
    pub physics_dt: f64,
    /// Outer-loop period, s.
    pub control_period: f64,
    /// Hover interval before the trajectory starts, s.
    pub settle: f64,
}

impl Default for TimingConfig {
    fn default() -> Self {
        Self { physics_dt: 1e-3, control_period: 0.01, settle: 3.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub architecture: Architecture,
    /// Bound on standardized features.
    pub scaled_clamp: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self { architecture: Architecture::default(), scaled_clamp: 5.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollectionConfig {
    /// Supervised pairs harvested per axis.
    pub samples_per_axis: usize,
    /// Base seed; each teacher flight offsets it by its index.
    pub seed: u64,
    pub trajectories: Vec<TrajectorySpec>,
}

impl Default for CollectionConfig {
    fn default() -> Self {
        use crate::trajectory::{TrajectoryKind::*, TrajectoryPlane::*};
        let base = TrajectorySpec { duration: 16.0, takeoff_altitude: 1.5, ..Default::default() };
        let entry = |kind, plane, size| TrajectorySpec { kind, plane, size, ..base };
        // Gentle curves only, all at 1 m/s: the teacher never flies the
        // faster evaluation shapes. The half-size variants double the
        // curvature at the same speed, widening the error envelope the
        // student sees without leaving the slow regime.
        Self {
            samples_per_axis: 20000,
            seed: 1000,
            trajectories: vec![
                entry(Circle, Xy, 1.0),
                entry(Circle, Xy, 0.5),
                entry(Eight, Xy, 1.0),
                entry(Eight, Xy, 0.5),
                entry(Circle, Xz, 1.0),
                entry(Circle, Xz, 0.5),
                entry(Eight, Xz, 1.0),
                entry(Eight, Xz, 0.5),
                entry(Circle, Yz, 1.0),
                entry(Circle, Yz, 0.5),
                entry(Eight, Yz, 1.0),
                entry(Eight, Yz, 0.5),
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    /// Runs per (trajectory, controller) cell; seeds count up from
    /// `base_seed`.
    pub repetitions: usize,
    pub base_seed: u64,
    pub trajectories: Vec<TrajectorySpec>,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        use crate::trajectory::TrajectoryKind::Square;
        Self {
            repetitions: 5,
            base_seed: 9000,
            trajectories: vec![
                TrajectorySpec { duration: 30.0, ..Default::default() },
                // The fast circle gets extra laps: online refinement keeps
                // paying off lap over lap there, and the longer window shows
                // the settled level rather than the first transient.
                TrajectorySpec { speed: 2.0, duration: 40.0, ..Default::default() },
                TrajectorySpec { kind: Square, size: 2.0, duration: 24.0, ..Default::default() },
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Directory for datasets, models, logs, and metrics.
    pub output_dir: PathBuf,
    pub plant: QuadParams,
    pub inner: InnerGains,
    pub limits: CommandLimits,
    pub timing: TimingConfig,
    pub pid: PidGains,
    pub network: NetworkConfig,
    pub trainer: TrainerConfig,
    pub fuzzy: FuzzyParams,
    pub online: OnlineConfig,
    /// External effects on evaluation flights. Training collection strips
    /// the physical ones and keeps the measurement noise.
    pub disturbance: Disturbance,
    pub collection: CollectionConfig,
    pub evaluation: EvaluationConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            output_dir: PathBuf::from("out"),
            plant: QuadParams::default(),
            inner: InnerGains::default(),
            limits: CommandLimits::default(),
            timing: TimingConfig::default(),
            pid: PidGains::default(),
            network: NetworkConfig::default(),
            trainer: TrainerConfig::default(),
            fuzzy: FuzzyParams::default(),
            online: OnlineConfig::default(),
            disturbance: Disturbance {
                position_noise_std: 0.002,
                velocity_noise_std: 0.002,
                ..Disturbance::none()
            },
            collection: CollectionConfig::default(),
            evaluation: EvaluationConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        let config: Self = toml::from_str(&text)?;
        config.validate()?;
        Ok(config)
    }

    /// Loop timing and plant bundled for the simulator.
    pub fn sim(&self) -> SimConfig {
        SimConfig {
            plant: self.plant,
            inner: self.inner,
            physics_dt: self.timing.physics_dt,
            control_period: self.timing.control_period,
            settle: self.timing.settle,
        }
    }

    /// Looks a trajectory up by its label, evaluation list first.
    pub fn find_trajectory(&self, label: &str) -> Option<&TrajectorySpec> {
        self.evaluation
            .trajectories
            .iter()
            .chain(&self.collection.trajectories)
            .find(|t| t.label() == label)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = ConfigError::Invalid;
        self.plant.validate().map_err(invalid)?;
        self.inner.validate().map_err(invalid)?;
        self.limits.validate().map_err(invalid)?;
        self.sim().validate().map_err(invalid)?;
        self.pid.validate().map_err(invalid)?;
        self.network.architecture.validate().map_err(invalid)?;
        if !(self.network.scaled_clamp > 0.0) {
            return Err(ConfigError::Invalid("network.scaled_clamp must be positive".into()));
        }
        self.trainer.validate().map_err(invalid)?;
        self.fuzzy.validate().map_err(invalid)?;
        self.online.validate().map_err(invalid)?;
        self.disturbance.validate(&self.plant).map_err(invalid)?;
        if self.collection.samples_per_axis == 0 {
            return Err(ConfigError::Invalid("collection.samples_per_axis must be positive".into()));
        }
        if self.collection.trajectories.is_empty() {
            return Err(ConfigError::Invalid("collection needs at least one trajectory".into()));
        }
        for (i, t) in self.collection.trajectories.iter().enumerate() {
            t.validate().map_err(|e| {
                ConfigError::Invalid(format!("collection.trajectories[{i}]: {e}"))
            })?;
        }
        if self.evaluation.repetitions == 0 {
            return Err(ConfigError::Invalid("evaluation.repetitions must be at least 1".into()));
        }
        if self.evaluation.trajectories.is_empty() {
            return Err(ConfigError::Invalid("evaluation needs at least one trajectory".into()));
        }
        for (i, t) in self.evaluation.trajectories.iter().enumerate() {
            t.validate().map_err(|e| {
                ConfigError::Invalid(format!("evaluation.trajectories[{i}]: {e}"))
            })?;
        }
        Ok(())
    }

    /// Fully commented template listing every knob at its default value.
    pub fn reference_toml() -> &'static str {
        REFERENCE_TOML
    }
}

const REFERENCE_TOML: &str = r##"# Experiment configuration. Every value below equals the built-in default;
# keep only the entries you want to override. Unknown keys are rejected.

# Directory for datasets, models, logs, and metrics.
output_dir = "out"

# Rigid-body plant.
[plant]
mass = 0.5                             # kg
gravity = 9.81                         # m/s^2
inertia = [0.00389, 0.00389, 0.00703]  # kg m^2, diagonal (Ix, Iy, Iz)
thrust_max = 9.81                      # N, total (= 2x hover thrust)
torque_max = 0.05                      # N m, per axis

# Attitude / climb-rate inner loop (runs at the physics rate).
[inner]
climb_rate = 4.0                       # 1/s, gain on climb-rate error
attitude = [100.0, 100.0, 40.0]        # 1/s^2, proportional (roll, pitch, yaw)
rate_damping = [16.0, 16.0, 10.0]      # 1/s, body-rate damping (p, q, r)

# Saturation applied when assembling high-level commands.
[limits]
tilt = 0.5                             # rad, bound on |pitch| and |roll|
climb_rate = 2.0                       # m/s, bound on |climb rate|

[timing]
physics_dt = 0.001                     # s, integration step
control_period = 0.01                  # s, outer-loop period (integer multiple of physics_dt)
settle = 3.0                           # s of hover before the trajectory starts (excluded from metrics)

# Baseline and teacher controller, one gain set per position axis.
# x and y produce tilt commands (rad), z a climb rate (m/s).
[pid.x]
kp = 0.35
ki = 0.02
kd = 0.25
integral_clamp = 0.2                   # command units
output_clamp = 0.5                     # command units

[pid.y]
kp = 0.35
ki = 0.02
kd = 0.25
integral_clamp = 0.2
output_clamp = 0.5

[pid.z]
kp = 1.2
ki = 0.1
kd = 0.6
integral_clamp = 1.5
output_clamp = 2.0

[network]
scaled_clamp = 5.0                     # bound on standardized features

[network.architecture]
inputs = 6                             # error window width; must stay 6
hidden_layers = 2
hidden_width = 6

[trainer]
random_search_candidates = 32          # initial weight guesses per axis
offline_iterations = 200               # quasi-Newton cap for pretraining
gradient_tolerance = 1e-7
online_iterations = 2                  # quasi-Newton cap per in-flight update
online_budget_ms = 6.0                 # wall-clock budget per in-flight update
seed = 42

[trainer.line_search]
c1 = 1e-4                              # sufficient-decrease coefficient
shrink = 0.5                           # step shrink per failed trial
max_trials = 25

# In-flight supervisor shaping the training targets.
[fuzzy]
rate = [0.02, 0.02, 0.05]              # per-axis correction gains (x, y, z)
error_scale = 2.5                      # m, error universe half-width
error_rate_scale = 1.0                 # m/s, error-rate universe half-width

[online]
buffer_capacity = 200                  # replay samples per axis
update_cadence = 2                     # control steps between weight updates
divergence_threshold = 4.0             # m; a larger error norm freezes the weights
apply_correction = false               # also add the correction to the applied command

# External effects on evaluation flights. Training collection strips the
# physical ones (force, ramp, payload) and keeps the measurement noise.
[disturbance]
force = [0.0, 0.0, 0.0]                # N, world frame
force_ramp = [0.0, 0.0, 0.0]           # N/s
mass_schedule = []                     # payload steps, e.g. [{ at = 0.0, delta = 0.1 }]
position_noise_std = 0.002             # m
velocity_noise_std = 0.002             # m/s
seed = 0                               # per-flight runs offset this

[collection]
samples_per_axis = 20000
seed = 1000

# Gentle curves only, all at 1 m/s; the teacher never flies the faster
# evaluation shapes. Half-size variants widen the student's error envelope.
[[collection.trajectories]]
kind = "circle"                        # circle | eight | square
plane = "xy"                           # xy | xz | yz
size = 1.0                             # m, radius (circle/eight) or side (square)
speed = 1.0                            # m/s (peak speed for the eight)
center = [0.0, 0.0, 0.0]               # m, before takeoff altitude
duration = 16.0                        # s on the curve
takeoff_altitude = 1.5                 # m, added to the center's z

[[collection.trajectories]]
kind = "circle"
plane = "xy"
size = 0.5
speed = 1.0
center = [0.0, 0.0, 0.0]
duration = 16.0
takeoff_altitude = 1.5

[[collection.trajectories]]
kind = "eight"
plane = "xy"
size = 1.0
speed = 1.0
center = [0.0, 0.0, 0.0]
duration = 16.0
takeoff_altitude = 1.5

[[collection.trajectories]]
kind = "eight"
plane = "xy"
size = 0.5
speed = 1.0
center = [0.0, 0.0, 0.0]
duration = 16.0
takeoff_altitude = 1.5

[[collection.trajectories]]
kind = "circle"
plane = "xz"
size = 1.0
speed = 1.0
center = [0.0, 0.0, 0.0]
duration = 16.0
takeoff_altitude = 1.5

[[collection.trajectories]]
kind = "circle"
plane = "xz"
size = 0.5
speed = 1.0
center = [0.0, 0.0, 0.0]
duration = 16.0
takeoff_altitude = 1.5

[[collection.trajectories]]
kind = "eight"
plane = "xz"
size = 1.0
speed = 1.0
center = [0.0, 0.0, 0.0]
duration = 16.0
takeoff_altitude = 1.5

[[collection.trajectories]]
kind = "eight"
plane = "xz"
size = 0.5
speed = 1.0
center = [0.0, 0.0, 0.0]
duration = 16.0
takeoff_altitude = 1.5

[[collection.trajectories]]
kind = "circle"
plane = "yz"
size = 1.0
speed = 1.0
center = [0.0, 0.0, 0.0]
duration = 16.0
takeoff_altitude = 1.5

[[collection.trajectories]]
kind = "circle"
plane = "yz"
size = 0.5
speed = 1.0
center = [0.0, 0.0, 0.0]
duration = 16.0
takeoff_altitude = 1.5

[[collection.trajectories]]
kind = "eight"
plane = "yz"
size = 1.0
speed = 1.0
center = [0.0, 0.0, 0.0]
duration = 16.0
takeoff_altitude = 1.5

[[collection.trajectories]]
kind = "eight"
plane = "yz"
size = 0.5
speed = 1.0
center = [0.0, 0.0, 0.0]
duration = 16.0
takeoff_altitude = 1.5

[evaluation]
repetitions = 5                        # runs per trajectory and controller
base_seed = 9000

[[evaluation.trajectories]]
kind = "circle"
plane = "xy"
size = 1.0
speed = 1.0
center = [0.0, 0.0, 0.0]
duration = 30.0
takeoff_altitude = 1.0

# Extra laps for the fast circle: refinement keeps paying off lap over lap.
[[evaluation.trajectories]]
kind = "circle"
plane = "xy"
size = 1.0
speed = 2.0
center = [0.0, 0.0, 0.0]
duration = 40.0
takeoff_altitude = 1.0

[[evaluation.trajectories]]
kind = "square"
plane = "xy"
size = 2.0
speed = 1.0
center = [0.0, 0.0, 0.0]
duration = 24.0
takeoff_altitude = 1.0
"##;
