//! Deterministic quadrotor simulation laboratory.
//!
//! The crate simulates a 12-state rigid-body quadrotor under a two-tier
//! control stack: a fast inner loop for attitude and climb rate, and a
//! swappable outer loop for position tracking. Three outer loops are
//! provided: a PID baseline, a frozen neural controller distilled from PID
//! flights, and the same networks refined in flight from replay buffers of
//! supervisor-corrected targets. Flights, training, and evaluation are
//! bit-reproducible for a given configuration and seed.
//!
//! Module map:
//! - [`dynamics`]: plant model, integrator, inner loop, disturbances
//! - [`trajectory`]: reference curves and error signals
//! - [`pid`]: baseline outer loop
//! - [`fuzzy`]: rule-based correction law supervising in-flight updates
//! - [`net`]: per-axis networks, loss, gradients, trainer entry points
//! - [`optim`]: quasi-Newton minimizer with backtracking line search
//! - [`dataset`] / [`model`]: on-disk formats for samples and weights
//! - [`flight`]: closed-loop simulation and logging
//! - [`learning`]: offline collection and pretraining, online refinement
//! - [`metrics`]: tracking statistics and CSV exports
//! - [`config`]: one TOML file describing a whole experiment

pub mod config;
pub mod dataset;
pub mod dynamics;
pub mod flight;
pub mod fuzzy;
pub mod learning;
pub mod metrics;
pub mod model;
pub mod net;
pub mod optim;
pub mod pid;
pub mod trajectory;

pub use config::{ConfigError, ExperimentConfig};
pub use dataset::{Axis, DataError, Dataset, TrainingSample, FEATURE_DIM};
pub use dynamics::{
    assemble_command, axis_outputs, CommandLimits, Disturbance, HighLevelCommand, InnerGains,
    MassDelta, QuadParams, QuadState, SimError,
};
pub use flight::{fly, FlightFailure, FlightLog, LogRow, Pilot, PidPilot, PilotOutput, SimConfig};
pub use fuzzy::FuzzyParams;
pub use learning::{
    collect_offline, pretrain, run_neural, CollectError, NeuralMode, NeuralPilot, NeuralRun,
    OnlineConfig, PretrainError, PretrainReport, ReplayBuffer, RunError,
};
pub use metrics::{
    euclidean_error_series, flight_metrics, improvement_ratio, mae, quartiles, repeat_stats,
    variance, write_flight_log_csv, write_metrics_csv, write_plot_bundle, FlightMetrics,
    MetricsError, MetricsRow, Quartiles, RepeatSummary,
};
pub use model::{ControllerModel, ModelError, ModelProvenance};
pub use net::{Architecture, AxisNetwork, FeatureScaling, TrainerConfig};
pub use optim::{BfgsConfig, BfgsOutcome, BfgsStatus, LineSearchParams};
pub use pid::{AxisPidGains, PidGains};
pub use trajectory::{
    sample, tracking_error, FeatureWindow, ReferencePoint, TrajectoryError, TrajectoryKind,
    TrajectoryPlane, TrajectorySpec,
};
