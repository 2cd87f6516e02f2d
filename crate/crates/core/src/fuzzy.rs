//! Fuzzy correction law: turns a tracking error and its rate into a small
//! command adjustment used as the online training target offset.
//!
//! Two realizations live here. `correction` is the closed-form surface the
//! controller runs in flight. `mamdani_reference` evaluates the underlying
//! nine-rule Mamdani system (triangular memberships, product t-norm,
//! singleton weighted-average defuzzification); tests cross-validate the two
//! against each other on a grid.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FuzzyParams {
    /// Per-axis adaptation rate, command units. Scales the whole surface;
    /// zero disables adaptation exactly.
    pub rate: [f64; 3],
    /// Error magnitude mapped to the edge of the rule universe, m.
    pub error_scale: f64,
    /// Error-rate magnitude mapped to the edge of the rule universe, m/s.
    pub error_rate_scale: f64,
}

impl Default for FuzzyParams {
    fn default() -> Self {
        Self { rate: [0.02, 0.02, 0.05], error_scale: 2.5, error_rate_scale: 1.0 }
    }
}

impl FuzzyParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.rate.iter().any(|a| !(*a >= 0.0)) {
            return Err(format!("fuzzy rates must be non-negative, got {:?}", self.rate));
        }
        if !(self.error_scale > 0.0 && self.error_rate_scale > 0.0) {
            return Err("fuzzy input scales must be positive".into());
        }
        Ok(())
    }

    pub fn with_rate(&self, rate: [f64; 3]) -> Self {
        Self { rate, ..*self }
    }
}

fn unit_clip(x: f64) -> f64 {
    x.clamp(-1.0, 1.0)
}

/// Closed-form correction for one axis. With eh and dh the normalized,
/// clipped error and error rate, the surface is
///
///   rate * (eh/2 + dh - |eh|*dh/2)
///
/// which interpolates the rule table's corner values: a positive error with
/// a positive rate demands the full increase, a positive error whose rate is
/// already negative (error self-correcting) demands none, and a pure rate
/// drives a full-size correction on its own.
pub fn correction_scalar(e: f64, de: f64, rate: f64, params: &FuzzyParams) -> f64 {
    let eh = unit_clip(e / params.error_scale);
    let dh = unit_clip(de / params.error_rate_scale);
    // The trailing + 0.0 turns a -0.0 product into +0.0, so a zero-gain
    // supervisor writes bit-identical logs to no supervisor at all.
    rate * (0.5 * eh + dh - 0.5 * eh.abs() * dh) + 0.0
}

/// Per-axis corrections for the three position axes.
pub fn correction(e: [f64; 3], de: [f64; 3], params: &FuzzyParams) -> [f64; 3] {
    [
        correction_scalar(e[0], de[0], params.rate[0], params),
        correction_scalar(e[1], de[1], params.rate[1], params),
        correction_scalar(e[2], de[2], params.rate[2], params),
    ]
}

/// Triangular membership grades over [-1, 1] for the Negative (peak -1),
/// Zero (peak 0), and Positive (peak +1) sets. The grades of a clipped
/// input always sum to one.
fn memberships(x: f64) -> [f64; 3] {
    [(-x).max(0.0), 1.0 - x.abs(), x.max(0.0)]
}

/// Rule consequents indexed by (error set, error-rate set), each a singleton
/// in units of the adaptation rate.
const RULE_SINGLETONS: [[f64; 3]; 3] = [
    // error Negative: rate Negative / Zero / Positive
    [-1.0, -0.5, 0.0],
    // error Zero
    [-1.0, 0.0, 1.0],
    // error Positive
    [0.0, 0.5, 1.0],
];

/// Full Mamdani evaluation of the nine-rule base. Kept as an independent
/// reference implementation; the flight code uses `correction_scalar`.
pub fn mamdani_reference(e: f64, de: f64, rate: f64, params: &FuzzyParams) -> f64 {
    let me = memberships(unit_clip(e / params.error_scale));
    let md = memberships(unit_clip(de / params.error_rate_scale));
    let mut weighted = 0.0;
    let mut total = 0.0;
    for (i, &ge) in me.iter().enumerate() {
        for (j, &gd) in md.iter().enumerate() {
            let w = ge * gd;
            weighted += w * RULE_SINGLETONS[i][j];
            total += w;
        }
    }
    // Membership grades on each input sum to 1, so total is 1 up to
    // rounding; the division keeps the reference honest anyway.
    rate * weighted / total
}
