//! Reference trajectories (circle, figure-eight, square), the tracking-error
//! signals derived from them, and the sliding feature window the neural
//! controllers consume.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::QuadState;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrajectoryError {
    #[error("t = {t} s outside [0, {duration}] s")]
    OutOfRange { t: f64, duration: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryKind {
    Circle,
    Eight,
    Square,
}

impl std::fmt::Display for TrajectoryKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Circle => "circle",
            Self::Eight => "eight",
            Self::Square => "square",
        })
    }
}

/// Plane the planar curve is embedded in. The first curve coordinate maps to
/// the first named axis, the second to the other.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryPlane {
    Xy,
    Xz,
    Yz,
}

impl std::fmt::Display for TrajectoryPlane {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Xy => "xy",
            Self::Xz => "xz",
            Self::Yz => "yz",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrajectorySpec {
    pub kind: TrajectoryKind,
    pub plane: TrajectoryPlane,
    /// Radius for circle and eight, side length for square, m.
    pub size: f64,
    /// Traversal speed, m/s. For the eight this is the peak speed.
    pub speed: f64,
    /// Geometric center before the takeoff altitude is added, m.
    pub center: [f64; 3],
    /// Time spent on the curve (settling excluded), s.
    pub duration: f64,
    /// Added to the center's z so flights happen above the floor, m.
    pub takeoff_altitude: f64,
}

impl Default for TrajectorySpec {
    fn default() -> Self {
        Self {
            kind: TrajectoryKind::Circle,
            plane: TrajectoryPlane::Xy,
            size: 1.0,
            speed: 1.0,
            center: [0.0; 3],
            duration: 30.0,
            takeoff_altitude: 1.0,
        }
    }
}

impl TrajectorySpec {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.size > 0.0 && self.speed > 0.0 && self.duration > 0.0) {
            return Err(format!(
                "trajectory size, speed, and duration must be positive, got {} / {} / {}",
                self.size, self.speed, self.duration
            ));
        }
        Ok(())
    }

    /// Stable identifier used in file names and metrics tables.
    pub fn label(&self) -> String {
        format!("{}-{}-s{}-v{}", self.kind, self.plane, self.size, self.speed)
    }

    /// Center with the takeoff altitude applied.
    pub fn effective_center(&self) -> [f64; 3] {
        let mut c = self.center;
        c[2] += self.takeoff_altitude;
        c
    }

    /// Time of one full traversal, s.
    pub fn lap_period(&self) -> f64 {
        match self.kind {
            TrajectoryKind::Circle => 2.0 * std::f64::consts::PI * self.size / self.speed,
            // Peak speed occurs where both coordinate rates are maximal, so
            // the angular rate carries a 1/sqrt(2) factor.
            TrajectoryKind::Eight => {
                2.0 * std::f64::consts::PI * self.size * std::f64::consts::SQRT_2 / self.speed
            }
            TrajectoryKind::Square => 4.0 * self.size / self.speed,
        }
    }
}

/// Desired position and velocity at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ReferencePoint {
    pub position: [f64; 3],
    pub velocity: [f64; 3],
}

fn embed(spec: &TrajectorySpec, curve: [f64; 2], rate: [f64; 2]) -> ReferencePoint {
    let c = spec.effective_center();
    let (position, velocity) = match spec.plane {
        TrajectoryPlane::Xy => (
            [c[0] + curve[0], c[1] + curve[1], c[2]],
            [rate[0], rate[1], 0.0],
        ),
        TrajectoryPlane::Xz => (
            [c[0] + curve[0], c[1], c[2] + curve[1]],
            [rate[0], 0.0, rate[1]],
        ),
        TrajectoryPlane::Yz => (
            [c[0], c[1] + curve[0], c[2] + curve[1]],
            [0.0, rate[0], rate[1]],
        ),
    };
    ReferencePoint { position, velocity }
}

/// Reference point at time t. Velocity is the analytic derivative of the
/// position; at square corners it takes the outgoing edge's value.
pub fn sample(spec: &TrajectorySpec, t: f64) -> Result<ReferencePoint, TrajectoryError> {
    if !(0.0..=spec.duration).contains(&t) {
        return Err(TrajectoryError::OutOfRange { t, duration: spec.duration });
    }
    let point = match spec.kind {
        TrajectoryKind::Circle => {
            let omega = spec.speed / spec.size;
            let (s, c) = (omega * t).sin_cos();
            embed(
                spec,
                [spec.size * c, spec.size * s],
                [-spec.speed * s, spec.speed * c],
            )
        }
        TrajectoryKind::Eight => {
            let omega = spec.speed / (spec.size * std::f64::consts::SQRT_2);
            let (s, c) = (omega * t).sin_cos();
            let (s2, c2) = (2.0 * omega * t).sin_cos();
            embed(
                spec,
                [spec.size * s, 0.5 * spec.size * s2],
                [spec.size * omega * c, spec.size * omega * c2],
            )
        }
        TrajectoryKind::Square => {
            let h = 0.5 * spec.size;
            // Counter-clockwise from the (+h, -h) corner; arc length wraps
            // every lap so long flights repeat the loop.
            let s = (spec.speed * t) % (4.0 * spec.size);
            let edge = (s / spec.size).floor().min(3.0) as usize;
            let d = s - edge as f64 * spec.size;
            let (curve, rate) = match edge {
                0 => ([h, -h + d], [0.0, spec.speed]),
                1 => ([h - d, h], [-spec.speed, 0.0]),
                2 => ([-h, h - d], [0.0, -spec.speed]),
                _ => ([-h + d, -h], [spec.speed, 0.0]),
            };
            embed(spec, curve, rate)
        }
    };
    Ok(point)
}

/// Position error e = p* - p.
pub fn tracking_error(reference: &ReferencePoint, state: &QuadState) -> [f64; 3] {
    [
        reference.position[0] - state.pos[0],
        reference.position[1] - state.pos[1],
        reference.position[2] - state.pos[2],
    ]
}

/// Error rate de = v* - v, from measured velocity rather than differenced
/// position.
pub fn error_rate(reference: &ReferencePoint, state: &QuadState) -> [f64; 3] {
    [
        reference.velocity[0] - state.vel[0],
        reference.velocity[1] - state.vel[1],
        reference.velocity[2] - state.vel[2],
    ]
}

/// Sliding window of the current and two previous (error, error-rate) pairs
/// for one axis, newest first. This is the 6-feature input of an axis
/// network.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FeatureWindow {
    errors: [f64; 3],
    error_rates: [f64; 3],
}

impl FeatureWindow {
    pub fn push(&mut self, error: f64, error_rate: f64) {
        self.errors = [error, self.errors[0], self.errors[1]];
        self.error_rates = [error_rate, self.error_rates[0], self.error_rates[1]];
    }

    /// Feature vector ordered (e_k, e_k-1, e_k-2, de_k, de_k-1, de_k-2).
    pub fn features(&self) -> [f64; 6] {
        [
            self.errors[0],
            self.errors[1],
            self.errors[2],
            self.error_rates[0],
            self.error_rates[1],
            self.error_rates[2],
        ]
    }
}
