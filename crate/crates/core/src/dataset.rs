//! Training samples and the per-axis dataset, with a delimited-text
//! interchange format (`axis, e_k, e_k1, e_k2, de_k, de_k1, de_k2, target`).

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const FEATURE_DIM: usize = 6;

pub const DATASET_HEADER: [&str; 8] =
    ["axis", "e_k", "e_k1", "e_k2", "de_k", "de_k1", "de_k2", "target"];

#[derive(Debug, Error)]
pub enum DataError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("dataset row {row}: {msg}")]
    Malformed { row: usize, msg: String },
    #[error("dataset is empty for axis {axis}")]
    EmptyAxis { axis: Axis },
    #[error("per-axis sample counts differ: {counts:?}")]
    Unbalanced { counts: [usize; 3] },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        match self {
            Axis::X => "x",
            Axis::Y => "y",
            Axis::Z => "z",
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        match s {
            "x" => Some(Axis::X),
            "y" => Some(Axis::Y),
            "z" => Some(Axis::Z),
            _ => None,
        }
    }
}

impl std::fmt::Display for Axis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// One supervised pair: the six-feature error window and the command the
/// teacher produced for it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingSample {
    pub features: [f64; FEATURE_DIM],
    pub target: f64,
}

impl TrainingSample {
    pub fn is_finite(&self) -> bool {
        self.features.iter().all(|f| f.is_finite()) && self.target.is_finite()
    }
}

/// Where a dataset came from; carried in memory and copied into the model
/// file, not into the sample rows.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetProvenance {
    pub controller: String,
    pub seed: u64,
    pub trajectories: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    axes: [Vec<TrainingSample>; 3],
    pub provenance: DatasetProvenance,
}

impl Dataset {
    pub fn new(provenance: DatasetProvenance) -> Self {
        Self { axes: Default::default(), provenance }
    }

    pub fn push(&mut self, axis: Axis, sample: TrainingSample) {
        self.axes[axis.index()].push(sample);
    }

    pub fn axis(&self, axis: Axis) -> &[TrainingSample] {
        &self.axes[axis.index()]
    }

    pub fn counts(&self) -> [usize; 3] {
        [self.axes[0].len(), self.axes[1].len(), self.axes[2].len()]
    }

    /// Nonempty, balanced, and finite: the preconditions for training.
    pub fn validate(&self) -> Result<(), DataError> {
        let counts = self.counts();
        for axis in Axis::ALL {
            if self.axes[axis.index()].is_empty() {
                return Err(DataError::EmptyAxis { axis });
            }
        }
        if counts[0] != counts[1] || counts[1] != counts[2] {
            return Err(DataError::Unbalanced { counts });
        }
        for axis in Axis::ALL {
            for (i, s) in self.axes[axis.index()].iter().enumerate() {
                if !s.is_finite() {
                    return Err(DataError::Malformed {
                        row: i,
                        msg: format!("non-finite sample on axis {axis}"),
                    });
                }
            }
        }
        Ok(())
    }

    /// Writes all samples, grouped by axis in x, y, z order. Floats use the
    /// shortest representation that parses back to the identical value, so
    /// a write/read cycle is lossless.
    pub fn write_csv(&self, path: &Path) -> Result<(), DataError> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(DATASET_HEADER)?;
        for axis in Axis::ALL {
            for s in self.axis(axis) {
                let mut record = Vec::with_capacity(8);
                record.push(axis.label().to_string());
                record.extend(s.features.iter().map(|v| v.to_string()));
                record.push(s.target.to_string());
                w.write_record(&record)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self, DataError> {
        let mut r = csv::Reader::from_path(path)?;
        {
            let headers = r.headers()?;
            if headers.len() != DATASET_HEADER.len()
                || headers.iter().zip(DATASET_HEADER).any(|(a, b)| a != b)
            {
                return Err(DataError::Malformed {
                    row: 0,
                    msg: format!("unexpected header {headers:?}"),
                });
            }
        }
        let mut ds = Dataset::default();
        for (i, record) in r.records().enumerate() {
            let row = i + 1;
            let record = record?;
            if record.len() != DATASET_HEADER.len() {
                return Err(DataError::Malformed {
                    row,
                    msg: format!("expected 8 fields, got {}", record.len()),
                });
            }
            let axis = Axis::from_label(&record[0]).ok_or_else(|| DataError::Malformed {
                row,
                msg: format!("unknown axis {:?}", &record[0]),
            })?;
            let mut values = [0.0; 7];
            for (k, v) in values.iter_mut().enumerate() {
                *v = record[k + 1].parse::<f64>().map_err(|e| DataError::Malformed {
                    row,
                    msg: format!("field {:?}: {e}", DATASET_HEADER[k + 1]),
                })?;
            }
            let mut features = [0.0; FEATURE_DIM];
            features.copy_from_slice(&values[..FEATURE_DIM]);
            ds.push(axis, TrainingSample { features, target: values[FEATURE_DIM] });
        }
        Ok(ds)
    }
}
