//! Per-axis parallel-form PID with clamped integral action. Labels the
//! offline training data and serves as the evaluation baseline.

use serde::{Deserialize, Serialize};

use crate::dynamics::{assemble_command, CommandLimits, HighLevelCommand};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AxisPidGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    /// Bound on the accumulated integral term, command units.
    pub integral_clamp: f64,
    /// Bound on the axis output, command units.
    pub output_clamp: f64,
}

impl Default for AxisPidGains {
    fn default() -> Self {
        Self { kp: 0.35, ki: 0.02, kd: 0.25, integral_clamp: 0.2, output_clamp: 0.5 }
    }
}

/// Gains for the three position axes. The x and y outputs are tilt commands
/// (rad), the z output is a climb rate (m/s).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PidGains {
    pub x: AxisPidGains,
    pub y: AxisPidGains,
    pub z: AxisPidGains,
}

impl Default for PidGains {
    fn default() -> Self {
        Self {
            x: AxisPidGains::default(),
            y: AxisPidGains::default(),
            z: AxisPidGains {
                kp: 1.2,
                ki: 0.1,
                kd: 0.6,
                integral_clamp: 1.5,
                output_clamp: 2.0,
            },
        }
    }
}

impl PidGains {
    pub fn axes(&self) -> [&AxisPidGains; 3] {
        [&self.x, &self.y, &self.z]
    }

    pub fn validate(&self) -> Result<(), String> {
        for (g, name) in self.axes().iter().zip(["x", "y", "z"]) {
            if g.kp < 0.0 || g.ki < 0.0 || g.kd < 0.0 {
                return Err(format!("pid.{name}: gains must be non-negative"));
            }
            if !(g.integral_clamp > 0.0 && g.output_clamp > 0.0) {
                return Err(format!("pid.{name}: clamps must be positive"));
            }
        }
        Ok(())
    }
}

/// Integral accumulators, stored in command units (the ki factor is applied
/// before accumulation so the clamp bounds the actual command contribution).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PidState {
    pub integral: [f64; 3],
}

/// One axis update: accumulate the integral, clamp it, and emit the clamped
/// parallel-form output. The derivative term uses the measured error rate.
pub fn axis_step(gains: &AxisPidGains, integral: &mut f64, e: f64, de: f64, dt: f64) -> f64 {
    debug_assert!(dt > 0.0);
    *integral = (*integral + gains.ki * e * dt).clamp(-gains.integral_clamp, gains.integral_clamp);
    (gains.kp * e + *integral + gains.kd * de).clamp(-gains.output_clamp, gains.output_clamp)
}

/// Full outer-loop update: three axis PIDs assembled into a command.
pub fn outer_loop(
    gains: &PidGains,
    state: &mut PidState,
    e: [f64; 3],
    de: [f64; 3],
    dt: f64,
    limits: &CommandLimits,
) -> HighLevelCommand {
    let mut outputs = [0.0; 3];
    for (i, g) in gains.axes().into_iter().enumerate() {
        outputs[i] = axis_step(g, &mut state.integral[i], e[i], de[i], dt);
    }
    assemble_command(outputs, limits)
}
