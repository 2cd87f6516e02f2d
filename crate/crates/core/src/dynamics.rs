//! Rigid-body quadrotor model with Euler-angle kinematics, an RK4 stepper,
//! and the cascaded inner loop that maps high-level commands to thrust and
//! body torques.
//!
//! Conventions: z is up, thrust acts along the body +z axis, attitude is
//! (roll, pitch, yaw), linear velocity is expressed in the world frame and
//! angular rates in the body frame.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Margin (rad) short of |pitch| = pi/2 at which integration aborts; the
/// Euler-rate kinematics divide by cos(pitch) and are singular there.
pub const GIMBAL_MARGIN: f64 = 1e-3;

pub const STATE_DIM: usize = 12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("pitch {pitch:.4} rad at t = {t:.3} s is within {GIMBAL_MARGIN} rad of the kinematic singularity")]
    GimbalLock { pitch: f64, t: f64 },
    #[error("non-finite state derivative at t = {t:.3} s")]
    NonFinite { t: f64 },
}

/// Physical plant constants. The inner loop reads the same struct, so model
/// mismatch is introduced through [`Disturbance`], never by editing these.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadParams {
    /// Nominal airframe mass, kg.
    pub mass: f64,
    /// Gravitational acceleration, m/s^2.
    pub gravity: f64,
    /// Diagonal inertia (Ix, Iy, Iz), kg m^2.
    pub inertia: [f64; 3],
    /// Total thrust ceiling, N.
    pub thrust_max: f64,
    /// Per-axis torque ceiling, N m.
    pub torque_max: f64,
}

impl Default for QuadParams {
    fn default() -> Self {
        let mass = 0.5;
        let gravity = 9.81;
        Self {
            mass,
            gravity,
            inertia: [0.00389, 0.00389, 0.00703],
            thrust_max: 2.0 * mass * gravity,
            torque_max: 0.05,
        }
    }
}

impl QuadParams {
    pub fn hover_thrust(&self) -> f64 {
        self.mass * self.gravity
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.mass > 0.0) {
            return Err(format!("mass must be positive, got {}", self.mass));
        }
        if !(self.gravity > 0.0) {
            return Err(format!("gravity must be positive, got {}", self.gravity));
        }
        if self.inertia.iter().any(|i| !(*i > 0.0)) {
            return Err(format!("inertia must be positive, got {:?}", self.inertia));
        }
        if !(self.thrust_max > self.hover_thrust()) {
            return Err(format!(
                "thrust_max {} must exceed hover thrust {}",
                self.thrust_max,
                self.hover_thrust()
            ));
        }
        if !(self.torque_max > 0.0) {
            return Err(format!("torque_max must be positive, got {}", self.torque_max));
        }
        Ok(())
    }
}

/// Full 12-dimensional rigid-body state.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct QuadState {
    /// World position (x, y, z), m.
    pub pos: [f64; 3],
    /// Attitude (roll, pitch, yaw), rad.
    pub att: [f64; 3],
    /// World-frame linear velocity, m/s.
    pub vel: [f64; 3],
    /// Body-frame angular rates (p, q, r), rad/s.
    pub rate: [f64; 3],
}

impl QuadState {
    pub fn to_array(&self) -> [f64; STATE_DIM] {
        let mut a = [0.0; STATE_DIM];
        a[0..3].copy_from_slice(&self.pos);
        a[3..6].copy_from_slice(&self.att);
        a[6..9].copy_from_slice(&self.vel);
        a[9..12].copy_from_slice(&self.rate);
        a
    }

    pub fn from_array(a: &[f64; STATE_DIM]) -> Self {
        Self {
            pos: [a[0], a[1], a[2]],
            att: [a[3], a[4], a[5]],
            vel: [a[6], a[7], a[8]],
            rate: [a[9], a[10], a[11]],
        }
    }

    fn add_scaled(&self, rates: &[f64; STATE_DIM], h: f64) -> Self {
        let mut a = self.to_array();
        for (x, r) in a.iter_mut().zip(rates.iter()) {
            *x += h * r;
        }
        Self::from_array(&a)
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|x| x.is_finite())
    }
}

/// Collective thrust plus the three body torques.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ActuatorInputs {
    /// Total thrust, N.
    pub thrust: f64,
    /// Body torques (roll, pitch, yaw), N m.
    pub torque: [f64; 3],
}

impl ActuatorInputs {
    /// Clamps thrust to [0, thrust_max] and each torque to +-torque_max.
    /// The flag reports whether anything was actually cut.
    pub fn clamped(&self, params: &QuadParams) -> (Self, bool) {
        let thrust = self.thrust.clamp(0.0, params.thrust_max);
        let torque = self.torque.map(|t| t.clamp(-params.torque_max, params.torque_max));
        let cut = thrust != self.thrust || torque != self.torque;
        (Self { thrust, torque }, cut)
    }
}

/// Outer-loop output: desired pitch, roll, vertical velocity, and yaw.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct HighLevelCommand {
    /// Desired pitch, rad.
    pub pitch: f64,
    /// Desired roll, rad.
    pub roll: f64,
    /// Desired vertical velocity, m/s.
    pub climb_rate: f64,
    /// Desired yaw, rad. Held at zero by every controller here.
    pub yaw: f64,
}

/// Saturation applied when assembling a [`HighLevelCommand`] from per-axis
/// outer-loop outputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CommandLimits {
    /// Bound on |pitch| and |roll| commands, rad.
    pub tilt: f64,
    /// Bound on |climb rate| commands, m/s.
    pub climb_rate: f64,
}

impl Default for CommandLimits {
    fn default() -> Self {
        Self { tilt: 0.5, climb_rate: 2.0 }
    }
}

impl CommandLimits {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.tilt > 0.0 && self.climb_rate > 0.0) {
            return Err(format!(
                "command limits must be positive, got tilt {} climb_rate {}",
                self.tilt, self.climb_rate
            ));
        }
        Ok(())
    }
}

/// Maps canonical per-axis outer-loop outputs (x, y, z) onto the command
/// frame: a positive x output pitches forward, a positive y output rolls
/// negative (both accelerate toward the positive axis at zero yaw), and the
/// z output is a climb rate.
pub fn assemble_command(axis_outputs: [f64; 3], limits: &CommandLimits) -> HighLevelCommand {
    HighLevelCommand {
        pitch: axis_outputs[0].clamp(-limits.tilt, limits.tilt),
        roll: (-axis_outputs[1]).clamp(-limits.tilt, limits.tilt),
        climb_rate: axis_outputs[2].clamp(-limits.climb_rate, limits.climb_rate),
        yaw: 0.0,
    }
}

/// Recovers the canonical per-axis outputs from an assembled command.
pub fn axis_outputs(cmd: &HighLevelCommand) -> [f64; 3] {
    [cmd.pitch, -cmd.roll, cmd.climb_rate]
}

/// External effects the controllers do not know about: constant and ramped
/// world-frame force, scheduled payload mass steps, and sensor noise applied
/// to the outer loop's state samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Disturbance {
    /// Constant world-frame force, N.
    pub force: [f64; 3],
    /// Force ramp rate, N/s.
    pub force_ramp: [f64; 3],
    /// Payload steps: at each listed time the mass offset becomes `delta`.
    /// Later entries replace earlier ones; they do not accumulate.
    pub mass_schedule: Vec<MassDelta>,
    /// Standard deviation of additive position measurement noise, m.
    pub position_noise_std: f64,
    /// Standard deviation of additive velocity measurement noise, m/s.
    pub velocity_noise_std: f64,
    /// Seed for the measurement-noise stream.
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MassDelta {
    /// Time the offset takes effect, s.
    pub at: f64,
    /// Mass offset from nominal, kg.
    pub delta: f64,
}

impl Default for Disturbance {
    fn default() -> Self {
        Self {
            force: [0.0; 3],
            force_ramp: [0.0; 3],
            mass_schedule: Vec::new(),
            position_noise_std: 0.0,
            velocity_noise_std: 0.0,
            seed: 0,
        }
    }
}

impl Disturbance {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn force_at(&self, t: f64) -> [f64; 3] {
        [
            self.force[0] + self.force_ramp[0] * t,
            self.force[1] + self.force_ramp[1] * t,
            self.force[2] + self.force_ramp[2] * t,
        ]
    }

    /// Mass offset in effect at time t: the last scheduled entry with
    /// `at <= t`, or zero before the first entry.
    pub fn mass_delta_at(&self, t: f64) -> f64 {
        self.mass_schedule
            .iter()
            .filter(|m| m.at <= t)
            .next_back()
            .map_or(0.0, |m| m.delta)
    }

    /// Copy with all physical effects removed; measurement noise and the
    /// seed survive. Used when generating training data on the nominal plant.
    pub fn without_physical_effects(&self) -> Self {
        Self {
            force: [0.0; 3],
            force_ramp: [0.0; 3],
            mass_schedule: Vec::new(),
            ..self.clone()
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn validate(&self, params: &QuadParams) -> Result<(), String> {
        if self.position_noise_std < 0.0 || self.velocity_noise_std < 0.0 {
            return Err("noise standard deviations must be non-negative".into());
        }
        let mut prev = f64::NEG_INFINITY;
        for m in &self.mass_schedule {
            if m.at < prev {
                return Err("mass_schedule must be sorted by time".into());
            }
            prev = m.at;
            if !(params.mass + m.delta > 0.0) {
                return Err(format!(
                    "scheduled mass offset {} at t = {} makes the plant mass non-positive",
                    m.delta, m.at
                ));
            }
        }
        Ok(())
    }
}

/// Time derivative of the 12-dimensional state under the given actuator
/// inputs and disturbance. The effective mass (nominal plus scheduled offset)
/// divides both thrust and disturbance force.
pub fn derivative(
    state: &QuadState,
    u: &ActuatorInputs,
    params: &QuadParams,
    dist: &Disturbance,
    t: f64,
) -> Result<[f64; STATE_DIM], SimError> {
    let [phi, theta, psi] = state.att;
    if theta.abs() >= std::f64::consts::FRAC_PI_2 - GIMBAL_MARGIN {
        return Err(SimError::GimbalLock { pitch: theta, t });
    }

    let (s_phi, c_phi) = phi.sin_cos();
    let (s_theta, c_theta) = theta.sin_cos();
    let (s_psi, c_psi) = psi.sin_cos();
    let t_theta = s_theta / c_theta;

    let [p, q, r] = state.rate;
    let [ix, iy, iz] = params.inertia;
    let mass = params.mass + dist.mass_delta_at(t);
    let force = dist.force_at(t);
    let thrust_acc = u.thrust / mass;

    let mut d = [0.0; STATE_DIM];
    d[0..3].copy_from_slice(&state.vel);
    // Euler-rate kinematics.
    d[3] = p + s_phi * t_theta * q + c_phi * t_theta * r;
    d[4] = c_phi * q - s_phi * r;
    d[5] = (s_phi / c_theta) * q + (c_phi / c_theta) * r;
    // World-frame accelerations: gravity, tilted thrust, disturbance force.
    d[6] = (c_phi * c_psi * s_theta + s_phi * s_psi) * thrust_acc + force[0] / mass;
    d[7] = (c_phi * s_psi * s_theta - s_phi * c_psi) * thrust_acc + force[1] / mass;
    d[8] = -params.gravity + c_phi * c_theta * thrust_acc + force[2] / mass;
    // Euler rotational dynamics about the principal axes.
    d[9] = (iy - iz) / ix * q * r + u.torque[0] / ix;
    d[10] = (iz - ix) / iy * p * r + u.torque[1] / iy;
    d[11] = (ix - iy) / iz * p * q + u.torque[2] / iz;

    if d.iter().any(|x| !x.is_finite()) {
        return Err(SimError::NonFinite { t });
    }
    Ok(d)
}

/// Classical fourth-order Runge-Kutta step of length dt starting at time t.
pub fn step_rk4(
    state: &QuadState,
    u: &ActuatorInputs,
    params: &QuadParams,
    dist: &Disturbance,
    t: f64,
    dt: f64,
) -> Result<QuadState, SimError> {
    debug_assert!(dt > 0.0);
    let half = 0.5 * dt;
    let k1 = derivative(state, u, params, dist, t)?;
    let k2 = derivative(&state.add_scaled(&k1, half), u, params, dist, t + half)?;
    let k3 = derivative(&state.add_scaled(&k2, half), u, params, dist, t + half)?;
    let k4 = derivative(&state.add_scaled(&k3, dt), u, params, dist, t + dt)?;

    let mut combo = [0.0; STATE_DIM];
    for i in 0..STATE_DIM {
        combo[i] = (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) / 6.0;
    }
    Ok(state.add_scaled(&combo, dt))
}

/// Cascaded inner-loop gains: thrust tracks the commanded climb rate, and a
/// proportional attitude term with rate damping produces each torque.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InnerGains {
    /// Climb-rate gain on (w* - vz), 1/s.
    pub climb_rate: f64,
    /// Proportional attitude gains (roll, pitch, yaw), 1/s^2.
    pub attitude: [f64; 3],
    /// Rate-damping gains (p, q, r), 1/s.
    pub rate_damping: [f64; 3],
}

impl Default for InnerGains {
    fn default() -> Self {
        Self {
            climb_rate: 4.0,
            attitude: [100.0, 100.0, 40.0],
            rate_damping: [16.0, 16.0, 10.0],
        }
    }
}

impl InnerGains {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.climb_rate > 0.0)
            || self.attitude.iter().any(|g| !(*g > 0.0))
            || self.rate_damping.iter().any(|g| !(*g >= 0.0))
        {
            return Err("inner-loop gains must be positive (rate damping non-negative)".into());
        }
        Ok(())
    }
}

/// Inner loop: thrust compensates tilt so the climb-rate law keeps working
/// at moderate bank angles (the cos product is floored at 0.5 to avoid
/// commanding unbounded thrust near the tilt limit). Torques are
/// inertia-scaled proportional attitude corrections with rate damping.
/// Returns the clamped inputs and whether any limit was hit.
pub fn inner_loop(
    cmd: &HighLevelCommand,
    state: &QuadState,
    params: &QuadParams,
    gains: &InnerGains,
) -> (ActuatorInputs, bool) {
    let [phi, theta, _] = state.att;
    let tilt_comp = (phi.cos() * theta.cos()).max(0.5);
    let thrust =
        params.mass * (params.gravity + gains.climb_rate * (cmd.climb_rate - state.vel[2])) / tilt_comp;

    let att_err = [cmd.roll - phi, cmd.pitch - theta, cmd.yaw - state.att[2]];
    let torque = [
        params.inertia[0] * (gains.attitude[0] * att_err[0] - gains.rate_damping[0] * state.rate[0]),
        params.inertia[1] * (gains.attitude[1] * att_err[1] - gains.rate_damping[1] * state.rate[1]),
        params.inertia[2] * (gains.attitude[2] * att_err[2] - gains.rate_damping[2] * state.rate[2]),
    ];

    ActuatorInputs { thrust, torque }.clamped(params)
}

/// Kinetic plus potential energy with the inertia-weighted rotational term,
/// using the nominal mass. Meaningful for drift checks only when the
/// disturbance is inactive.
pub fn mechanical_energy(state: &QuadState, params: &QuadParams) -> f64 {
    let v2: f64 = state.vel.iter().map(|v| v * v).sum();
    let rot: f64 = state
        .rate
        .iter()
        .zip(params.inertia.iter())
        .map(|(w, i)| i * w * w)
        .sum();
    0.5 * params.mass * v2 + 0.5 * rot + params.mass * params.gravity * state.pos[2]
}
