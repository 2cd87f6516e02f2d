//! Closed-loop flight simulation: samples the reference at the control
//! rate, feeds the outer-loop pilot noisy measurements, runs the inner loop
//! and physics at the finer integration step, and logs every control step.


use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    inner_loop, step_rk4, Disturbance, HighLevelCommand, InnerGains, QuadParams, QuadState,
    SimError,
};
use crate::trajectory::{error_rate, sample, tracking_error, ReferencePoint, TrajectorySpec};

/// Tolerance when deciding whether a row belongs to the steady segment;
/// absorbs accumulated rounding in `k * control_period`.
const TIME_EPS: f64 = 1e-9;

/// Plant plus loop timing. The control period must be an integer multiple
/// of the physics step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub plant: QuadParams,
    pub inner: InnerGains,
    /// Integration step, s.
    pub physics_dt: f64,
    /// Outer-loop period, s.
    pub control_period: f64,
    /// Hover interval at the trajectory start, excluded from metrics, s.
    pub settle: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            plant: QuadParams::default(),
            inner: InnerGains::default(),
            physics_dt: 1e-3,
            control_period: 0.01,
            settle: 3.0,
        }
    }
}

impl SimConfig {
    pub fn substeps(&self) -> usize {
        (self.control_period / self.physics_dt).round() as usize
    }

    pub fn validate(&self) -> Result<(), String> {
        self.plant.validate()?;
        self.inner.validate()?;
        if !(self.physics_dt > 0.0 && self.control_period > 0.0) {
            return Err("physics_dt and control_period must be positive".into());
        }
        let ratio = self.control_period / self.physics_dt;
        if (ratio - ratio.round()).abs() > 1e-9 || ratio.round() < 1.0 {
            return Err(format!(
                "control_period ({}) must be a positive integer multiple of physics_dt ({})",
                self.control_period, self.physics_dt
            ));
        }
        if self.settle < 0.0 {
            return Err("settle must be non-negative".into());
        }
        Ok(())
    }
}

/// One control step of a flight. `position`/`velocity` are the true plant
/// state at the step's start; `error`/`error_rate` are what the controller
/// saw (measurement noise included). `step_us` is the outer loop's thread
/// CPU time, so scheduler stalls don't count against the compute budget; it
/// is excluded from determinism comparisons.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub t: f64,
    pub reference: [f64; 3],
    pub position: [f64; 3],
    pub ref_velocity: [f64; 3],
    pub velocity: [f64; 3],
    /// (pitch, roll, climb-rate) command.
    pub command: [f64; 3],
    /// Per-axis supervisor correction included in the training target.
    pub correction: [f64; 3],
    pub error: [f64; 3],
    pub error_rate: [f64; 3],
    pub step_us: f64,
    pub guard_frozen: bool,
    pub actuators_clamped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlightLog {
    pub controller: String,
    pub trajectory: String,
    pub settle: f64,
    pub control_period: f64,
    pub rows: Vec<LogRow>,
}

impl FlightLog {
    pub fn new(controller: &str, trajectory: &str, sim: &SimConfig) -> Self {
        Self {
            controller: controller.to_string(),
            trajectory: trajectory.to_string(),
            settle: sim.settle,
            control_period: sim.control_period,
            rows: Vec::new(),
        }
    }

    /// Rows past the settling interval; the segment all error metrics use.
    pub fn steady_rows(&self) -> impl Iterator<Item = &LogRow> {
        let cutoff = self.settle - TIME_EPS;
        self.rows.iter().filter(move |r| r.t >= cutoff)
    }
}

/// A flight that aborted mid-run; the log covers everything up to and
/// including the step that failed.
#[derive(Debug)]
pub struct FlightFailure {
    pub error: SimError,
    pub log: FlightLog,
}

impl std::fmt::Display for FlightFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "flight of {} on {} aborted after {} steps: {}",
            self.log.controller,
            self.log.trajectory,
            self.log.rows.len(),
            self.error
        )
    }
}

impl std::error::Error for FlightFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

/// What the outer loop hands back each control step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PilotOutput {
    pub command: HighLevelCommand,
    /// Supervisor correction, zero for non-adaptive pilots.
    pub correction: [f64; 3],
    /// Whether the divergence guard has latched.
    pub guard_frozen: bool,
}

/// Outer-loop controller: position errors in, high-level command out.
pub trait Pilot {
    fn name(&self) -> &str;
    fn step(&mut self, e: [f64; 3], de: [f64; 3], dt: f64) -> PilotOutput;
}

/// PID outer loop.
pub struct PidPilot {
    gains: crate::pid::PidGains,
    limits: crate::dynamics::CommandLimits,
    state: crate::pid::PidState,
}

impl PidPilot {
    pub fn new(gains: crate::pid::PidGains, limits: crate::dynamics::CommandLimits) -> Self {
        Self { gains, limits, state: crate::pid::PidState::default() }
    }
}

impl Pilot for PidPilot {
    fn name(&self) -> &str {
        "pid"
    }

    fn step(&mut self, e: [f64; 3], de: [f64; 3], dt: f64) -> PilotOutput {
        let command = crate::pid::outer_loop(&self.gains, &mut self.state, e, de, dt, &self.limits);
        PilotOutput { command, correction: [0.0; 3], guard_frozen: false }
    }
}

fn measured_state<R: rand::Rng>(state: &QuadState, dist: &Disturbance, rng: &mut R) -> QuadState {
    // Six draws happen unconditionally so the noise stream position depends
    // only on the step index, never on the noise configuration; runs that
    // differ only in noise amplitude stay comparable draw-for-draw.
    let mut z = [0.0; 6];
    for v in z.iter_mut() {
        *v = StandardNormal.sample(rng);
    }
    QuadState {
        pos: [
            state.pos[0] + dist.position_noise_std * z[0],
            state.pos[1] + dist.position_noise_std * z[1],
            state.pos[2] + dist.position_noise_std * z[2],
        ],
        vel: [
            state.vel[0] + dist.velocity_noise_std * z[3],
            state.vel[1] + dist.velocity_noise_std * z[4],
            state.vel[2] + dist.velocity_noise_std * z[5],
        ],
        ..*state
    }
}

/// Simulates one full flight: `settle` seconds of hover at the trajectory
/// start, then the trajectory itself. The pilot runs at the control rate on
/// noisy measurements; the inner loop and integrator run at the physics
/// rate on the true state. Aborts return the partial log.
pub fn fly(
    sim: &SimConfig,
    traj: &TrajectorySpec,
    dist: &Disturbance,
    pilot: &mut dyn Pilot,
) -> Result<FlightLog, Box<FlightFailure>> {
    let start = sample(traj, 0.0).expect("t = 0 is inside every trajectory domain");
    let substeps = sim.substeps();
    let control_steps = ((sim.settle + traj.duration) / sim.control_period).round() as u64;

    let mut state = QuadState { pos: start.position, ..Default::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(dist.seed);
    let mut log = FlightLog::new(pilot.name(), &traj.label(), sim);
    log.rows.reserve(control_steps as usize);

    for k in 0..control_steps {
        let t = k as f64 * sim.control_period;
        let reference = if t < sim.settle {
            ReferencePoint { position: start.position, velocity: [0.0; 3] }
        } else {
            let tau = (t - sim.settle).min(traj.duration);
            sample(traj, tau).expect("clamped time is inside the trajectory domain")
        };

        let measured = measured_state(&state, dist, &mut rng);
        let e = tracking_error(&reference, &measured);
        let de = error_rate(&reference, &measured);

        let began = cpu_time::ThreadTime::now();
        let out = pilot.step(e, de, sim.control_period);
        let step_us = began.elapsed().as_secs_f64() * 1e6;

        let mut clamped = false;
        let mut next = state;
        let mut abort = None;
        for i in 0..substeps {
            let ti = t + i as f64 * sim.physics_dt;
            let (u, cut) = inner_loop(&out.command, &next, &sim.plant, &sim.inner);
            clamped |= cut;
            match step_rk4(&next, &u, &sim.plant, dist, ti, sim.physics_dt) {
                Ok(s) => next = s,
                Err(e) => {
                    abort = Some(e);
                    break;
                }
            }
        }

        log.rows.push(LogRow {
            t,
            reference: reference.position,
            position: state.pos,
            ref_velocity: reference.velocity,
            velocity: state.vel,
            command: [out.command.pitch, out.command.roll, out.command.climb_rate],
            correction: out.correction,
            error: e,
            error_rate: de,
            step_us,
            guard_frozen: out.guard_frozen,
            actuators_clamped: clamped,
        });

        if let Some(error) = abort {
            return Err(Box::new(FlightFailure { error, log }));
        }
        state = next;
    }

    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::CommandLimits;
    use crate::pid::PidGains;
    use crate::trajectory::{TrajectoryKind, TrajectoryPlane};

    fn slow_circle(duration: f64) -> TrajectorySpec {
        TrajectorySpec {
            kind: TrajectoryKind::Circle,
            plane: TrajectoryPlane::Xy,
            size: 1.0,
            speed: 1.0,
            center: [0.0; 3],
            duration,
            takeoff_altitude: 1.0,
        }
    }

    fn pid_pilot() -> PidPilot {
        PidPilot::new(PidGains::default(), CommandLimits::default())
    }

    #[test]
    fn row_timing_is_uniform_and_complete() {
        let sim = SimConfig::default();
        let traj = slow_circle(5.0);
        let log = fly(&sim, &traj, &Disturbance::none(), &mut pid_pilot()).unwrap();
        assert_eq!(log.rows.len(), 800);
        for (k, row) in log.rows.iter().enumerate() {
            approx::assert_abs_diff_eq!(row.t, k as f64 * 0.01, epsilon = 1e-12);
        }
        for w in log.rows.windows(2) {
            approx::assert_abs_diff_eq!(w[1].t - w[0].t, 0.01, epsilon = 1e-12);
        }
        // 3 s settle at 100 Hz.
        assert_eq!(log.rows.len() - log.steady_rows().count(), 300);
    }

    #[test]
    fn pid_tracks_the_slow_circle_stably() {
        let sim = SimConfig::default();
        let traj = slow_circle(20.0);
        let log = fly(&sim, &traj, &Disturbance::none(), &mut pid_pilot()).unwrap();
        let worst = log
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
        assert!(worst < 0.5, "worst-case tracking error {worst:.3} m");
        assert!(worst > 0.0);
    }

    #[test]
    fn flights_are_bit_deterministic_outside_timing_fields() {
        let sim = SimConfig::default();
        let traj = slow_circle(4.0);
        let dist = Disturbance { position_noise_std: 0.01, seed: 77, ..Disturbance::none() };
        let run = || fly(&sim, &traj, &dist, &mut pid_pilot()).unwrap();
        let a = run();
        let b = run();
        assert_eq!(a.rows.len(), b.rows.len());
        for (ra, rb) in a.rows.iter().zip(&b.rows) {
            let mut ra = *ra;
            let mut rb = *rb;
            ra.step_us = 0.0;
            rb.step_us = 0.0;
            assert_eq!(ra, rb);
        }
    }

    #[test]
    fn different_noise_seeds_change_the_flight() {
        let sim = SimConfig::default();
        let traj = slow_circle(4.0);
        let noisy = |seed| Disturbance { position_noise_std: 0.01, seed, ..Disturbance::none() };
        let a = fly(&sim, &traj, &noisy(1), &mut pid_pilot()).unwrap();
        let b = fly(&sim, &traj, &noisy(2), &mut pid_pilot()).unwrap();
        assert_ne!(
            a.rows.last().unwrap().position,
            b.rows.last().unwrap().position
        );
    }

    #[test]
    fn zero_duration_with_zero_settle_yields_an_empty_log() {
        let sim = SimConfig { settle: 0.0, ..Default::default() };
        let traj = TrajectorySpec { duration: 0.0, ..slow_circle(0.0) };
        let log = fly(&sim, &traj, &Disturbance::none(), &mut pid_pilot()).unwrap();
        assert!(log.rows.is_empty());
        assert_eq!(log.steady_rows().count(), 0);
    }

    #[test]
    fn hover_settle_keeps_integrals_small_and_flight_clean() {
        let sim = SimConfig::default();
        let traj = slow_circle(6.0);
        let log = fly(&sim, &traj, &Disturbance::none(), &mut pid_pilot()).unwrap();
        // During settle the plant starts exactly on the reference: errors
        // stay identically zero until the trajectory begins to move.
        let first = &log.rows[0];
        assert_eq!(first.error, [0.0; 3]);
        let settled = &log.rows[299];
        assert_eq!(settled.error, [0.0; 3]);
        assert!(!log.rows.iter().any(|r| r.guard_frozen));
    }

    #[test]
    fn timing_config_validation() {
        let mut sim = SimConfig::default();
        sim.validate().unwrap();
        sim.control_period = 0.0105;
        assert!(sim.validate().is_err());
        sim.control_period = 0.01;
        sim.settle = -1.0;
        assert!(sim.validate().is_err());
    }
}
