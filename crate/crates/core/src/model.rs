//! Versioned, self-describing controller model file: architecture, per-axis
//! scaling statistics and weights, and training provenance, stored as JSON.
//! Floats serialize via the shortest round-trip representation, so save and
//! load are bit-exact.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Axis;
use crate::net::{Architecture, AxisNetwork, FeatureScaling, Layer};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("model file is not readable as JSON: {0}")]
    Corrupt(String),
    #[error("model format version {found} is unsupported (this build reads {expected})")]
    VersionMismatch { found: u64, expected: u32 },
    #[error("malformed model: {0}")]
    Malformed(String),
}

/// How the model came to be: enough to regenerate it and to judge whether
/// it fits a new experiment. Deliberately free of wall-clock timestamps so
/// identical runs produce identical files.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelProvenance {
    /// Seed used for weight initialization.
    pub seed: u64,
    /// Controller that labeled the dataset.
    pub teacher: String,
    /// Trajectories the dataset was collected on.
    pub trajectories: Vec<String>,
    /// Training samples per axis (held-out split included).
    pub samples_per_axis: usize,
    /// Held-out normalized squared error per axis after training.
    pub held_out_nse: [f64; 3],
    /// Accepted quasi-Newton iterations per axis.
    pub training_iterations: [usize; 3],
    /// Whether the loss denominator fell back to plain MSE per axis.
    pub mse_fallback: [bool; 3],
    /// Version of the tool that wrote the file.
    pub tool_version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisModel {
    pub axis: String,
    pub scaling: FeatureScaling,
    pub layers: Vec<Layer>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerModel {
    pub format_version: u32,
    pub architecture: Architecture,
    pub axes: Vec<AxisModel>,
    pub provenance: ModelProvenance,
}

impl ControllerModel {
    pub fn new(
        architecture: Architecture,
        networks: [AxisNetwork; 3],
        scalings: [FeatureScaling; 3],
        provenance: ModelProvenance,
    ) -> Self {
        let axes = Axis::ALL
            .iter()
            .zip(networks.into_iter().zip(scalings))
            .map(|(axis, (net, scaling))| AxisModel {
                axis: axis.label().to_string(),
                scaling,
                layers: net.layers,
            })
            .collect();
        Self { format_version: MODEL_FORMAT_VERSION, architecture, axes, provenance }
    }

    /// Reassembles the runtime networks; validates shape and finiteness.
    pub fn networks(&self) -> Result<[(AxisNetwork, FeatureScaling); 3], ModelError> {
        self.validate()?;
        let build = |i: usize| {
            let net = AxisNetwork { arch: self.architecture, layers: self.axes[i].layers.clone() };
            (net, self.axes[i].scaling.clone())
        };
        Ok([build(0), build(1), build(2)])
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.format_version != MODEL_FORMAT_VERSION {
            return Err(ModelError::VersionMismatch {
                found: self.format_version as u64,
                expected: MODEL_FORMAT_VERSION,
            });
        }
        self.architecture.validate().map_err(ModelError::Malformed)?;
        if self.axes.len() != 3 {
            return Err(ModelError::Malformed(format!(
                "expected 3 axis networks, found {}",
                self.axes.len()
            )));
        }
        for (expected, axis_model) in Axis::ALL.iter().zip(&self.axes) {
            if axis_model.axis != expected.label() {
                return Err(ModelError::Malformed(format!(
                    "axis networks must appear in x, y, z order; found {:?} where {:?} belongs",
                    axis_model.axis,
                    expected.label()
                )));
            }
            axis_model.scaling.validate().map_err(ModelError::Malformed)?;
            let net =
                AxisNetwork { arch: self.architecture, layers: axis_model.layers.clone() };
            net.validate().map_err(ModelError::Malformed)?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        // Read the version before insisting on the current schema, so old
        // or future files fail with the right error.
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| ModelError::Corrupt(e.to_string()))?;
        let found = value
            .get("format_version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| ModelError::Malformed("missing format_version".into()))?;
        if found != MODEL_FORMAT_VERSION as u64 {
            return Err(ModelError::VersionMismatch { found, expected: MODEL_FORMAT_VERSION });
        }
        let model: ControllerModel =
            serde_json::from_value(value).map_err(|e| ModelError::Malformed(e.to_string()))?;
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }
}
