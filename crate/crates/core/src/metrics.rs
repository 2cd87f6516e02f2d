//! Tracking-quality metrics over flight logs, repeated-run aggregation,
//! and the CSV exports (metrics table, per-step log, plot bundle).

use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use crate::flight::{FlightLog, LogRow};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("flight log has no rows")]
    EmptyLog,
    #[error("error series is empty (flight never left the settling interval?)")]
    EmptySeries,
    #[error("improvement ratio needs a positive baseline")]
    ZeroBaseline,
}

#[derive(Debug, Error)]
pub enum ExportError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("log row {row}: {msg}")]
    Malformed { row: usize, msg: String },
}

/// Per-step Euclidean position error over the steady segment, as (t, error)
/// pairs. Uses the true plant position, not the noisy measurement.
pub fn euclidean_error_series(log: &FlightLog) -> Result<Vec<(f64, f64)>, MetricsError> {
    if log.rows.is_empty() {
        return Err(MetricsError::EmptyLog);
    }
    Ok(log
        .steady_rows()
        .map(|r| {
            let e = [
                r.reference[0] - r.position[0],
                r.reference[1] - r.position[1],
                r.reference[2] - r.position[2],
            ];
            (r.t, (e[0] * e[0] + e[1] * e[1] + e[2] * e[2]).sqrt())
        })
        .collect())
}

pub fn mae(series: &[(f64, f64)]) -> Result<f64, MetricsError> {
    if series.is_empty() {
        return Err(MetricsError::EmptySeries);
    }
    Ok(series.iter().map(|(_, e)| e).sum::<f64>() / series.len() as f64)
}

/// Relative reduction of a candidate's error against a baseline:
/// (baseline - candidate) / baseline. Positive means the candidate is
/// better; 0.6 reads as a 60 % improvement.
pub fn improvement_ratio(candidate: f64, baseline: f64) -> Result<f64, MetricsError> {
    if !(baseline > 0.0) {
        return Err(MetricsError::ZeroBaseline);
    }
    Ok((baseline - candidate) / baseline)
}

/// Five-number summary. Quartiles interpolate linearly between order
/// statistics at rank h = (n - 1) p, the convention most statistics
/// packages default to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quartiles {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn quartiles(values: &[f64]) -> Result<Quartiles, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::EmptySeries);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    Ok(Quartiles {
        min: sorted[0],
        q1: percentile(&sorted, 0.25),
        median: percentile(&sorted, 0.5),
        q3: percentile(&sorted, 0.75),
        max: sorted[sorted.len() - 1],
    })
}

/// Population variance.
pub fn variance(values: &[f64]) -> Result<f64, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::EmptySeries);
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    Ok(values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / values.len() as f64)
}

/// Summary of one flight: error statistics over the steady segment, compute
/// timing over every control step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlightMetrics {
    pub mae: f64,
    pub max_error: f64,
    pub variance: f64,
    pub error_quartiles: Quartiles,
    pub mean_step_us: f64,
    pub max_step_us: f64,
}

pub fn flight_metrics(log: &FlightLog) -> Result<FlightMetrics, MetricsError> {
    let series = euclidean_error_series(log)?;
    let errors: Vec<f64> = series.iter().map(|(_, e)| *e).collect();
    let q = quartiles(&errors)?;
    let steps: Vec<f64> = log.rows.iter().map(|r| r.step_us).collect();
    Ok(FlightMetrics {
        mae: mae(&series)?,
        max_error: q.max,
        variance: variance(&errors)?,
        error_quartiles: q,
        mean_step_us: steps.iter().sum::<f64>() / steps.len() as f64,
        max_step_us: steps.iter().copied().fold(0.0, f64::max),
    })
}

/// One run of a repeated experiment.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub seed: u64,
    pub metrics: FlightMetrics,
}

/// Aggregate of a repeated experiment; failed runs are reported, not
/// silently dropped.
#[derive(Debug, Clone)]
pub struct RepeatSummary {
    pub records: Vec<RunRecord>,
    /// Spread of per-run MAE across the successful runs.
    pub mae_quartiles: Quartiles,
    pub failures: Vec<(u64, String)>,
}

impl RepeatSummary {
    pub fn median_mae(&self) -> f64 {
        self.mae_quartiles.median
    }
}

/// Runs `run` once per seed (base_seed, base_seed + 1, ...) in parallel and
/// aggregates the per-run metrics. Results are keyed and ordered by seed,
/// so the aggregation is independent of scheduling. Errors out only when
/// every run fails.
pub fn repeat_stats<F>(
    repetitions: usize,
    base_seed: u64,
    run: F,
) -> Result<RepeatSummary, MetricsError>
where
    F: Fn(u64) -> Result<FlightLog, String> + Sync,
{
    let outcomes: Vec<(u64, Result<FlightLog, String>)> = (0..repetitions as u64)
        .into_par_iter()
        .map(|k| {
            let seed = base_seed.wrapping_add(k);
            (seed, run(seed))
        })
        .collect();

    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (seed, outcome) in outcomes {
        match outcome {
            Ok(log) => match flight_metrics(&log) {
                Ok(metrics) => records.push(RunRecord { seed, metrics }),
                Err(e) => failures.push((seed, e.to_string())),
            },
            Err(msg) => failures.push((seed, msg)),
        }
    }
    let maes: Vec<f64> = records.iter().map(|r| r.metrics.mae).collect();
    let mae_quartiles = quartiles(&maes)?;
    Ok(RepeatSummary { records, mae_quartiles, failures })
}

/// One row of the comparison table.
#[derive(Debug, Clone)]
pub struct MetricsRow {
    pub trajectory: String,
    pub controller: String,
    pub run: u64,
    pub metrics: FlightMetrics,
}

const METRICS_HEADER: [&str; 10] = [
    "trajectory",
    "controller",
    "run",
    "mae",
    "max_err",
    "var",
    "q1",
    "median",
    "q3",
    "mean_step_us",
];

pub fn write_metrics_csv(rows: &[MetricsRow], path: &Path) -> Result<(), ExportError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(METRICS_HEADER)?;
    for row in rows {
        let m = &row.metrics;
        w.write_record([
            row.trajectory.clone(),
            row.controller.clone(),
            row.run.to_string(),
            m.mae.to_string(),
            m.max_error.to_string(),
            m.variance.to_string(),
            m.error_quartiles.q1.to_string(),
            m.error_quartiles.median.to_string(),
            m.error_quartiles.q3.to_string(),
            m.mean_step_us.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

const LOG_HEADER: [&str; 28] = [
    "t",
    "ref_x",
    "ref_y",
    "ref_z",
    "pos_x",
    "pos_y",
    "pos_z",
    "ref_vx",
    "ref_vy",
    "ref_vz",
    "vel_x",
    "vel_y",
    "vel_z",
    "cmd_pitch",
    "cmd_roll",
    "cmd_climb",
    "du_x",
    "du_y",
    "du_z",
    "err_x",
    "err_y",
    "err_z",
    "derr_x",
    "derr_y",
    "derr_z",
    "step_us",
    "guard_frozen",
    "actuators_clamped",
];

/// Writes every control step of a flight. Floats use the shortest
/// round-trip representation, so reading the file back reproduces the rows
/// bit for bit.
pub fn write_flight_log_csv(log: &FlightLog, path: &Path) -> Result<(), ExportError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(LOG_HEADER)?;
    let mut record: Vec<String> = Vec::with_capacity(LOG_HEADER.len());
    for r in &log.rows {
        record.clear();
        record.push(r.t.to_string());
        record.extend(r.reference.iter().map(|v| v.to_string()));
        record.extend(r.position.iter().map(|v| v.to_string()));
        record.extend(r.ref_velocity.iter().map(|v| v.to_string()));
        record.extend(r.velocity.iter().map(|v| v.to_string()));
        record.extend(r.command.iter().map(|v| v.to_string()));
        record.extend(r.correction.iter().map(|v| v.to_string()));
        record.extend(r.error.iter().map(|v| v.to_string()));
        record.extend(r.error_rate.iter().map(|v| v.to_string()));
        record.push(r.step_us.to_string());
        record.push(r.guard_frozen.to_string());
        record.push(r.actuators_clamped.to_string());
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_flight_log_rows(path: &Path) -> Result<Vec<LogRow>, ExportError> {
    let mut reader = csv::Reader::from_path(path)?;
    {
        let header = reader.headers()?;
        if header.len() != LOG_HEADER.len() || header.iter().ne(LOG_HEADER.iter().copied()) {
            return Err(ExportError::Malformed { row: 0, msg: "unexpected header".into() });
        }
    }
    let parse_f64 = |field: &str, row: usize| -> Result<f64, ExportError> {
        field
            .parse::<f64>()
            .map_err(|e| ExportError::Malformed { row, msg: format!("bad float {field:?}: {e}") })
    };
    let parse_bool = |field: &str, row: usize| -> Result<bool, ExportError> {
        field
            .parse::<bool>()
            .map_err(|e| ExportError::Malformed { row, msg: format!("bad flag {field:?}: {e}") })
    };
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let row_no = i + 1;
        if record.len() != LOG_HEADER.len() {
            return Err(ExportError::Malformed {
                row: row_no,
                msg: format!("expected {} fields, found {}", LOG_HEADER.len(), record.len()),
            });
        }
        let f = |j: usize| parse_f64(&record[j], row_no);
        let triple = |j: usize| -> Result<[f64; 3], ExportError> {
            Ok([f(j)?, f(j + 1)?, f(j + 2)?])
        };
        rows.push(LogRow {
            t: f(0)?,
            reference: triple(1)?,
            position: triple(4)?,
            ref_velocity: triple(7)?,
            velocity: triple(10)?,
            command: triple(13)?,
            correction: triple(16)?,
            error: triple(19)?,
            error_rate: triple(22)?,
            step_us: f(25)?,
            guard_frozen: parse_bool(&record[26], row_no)?,
            actuators_clamped: parse_bool(&record[27], row_no)?,
        });
    }
    Ok(rows)
}

/// Long-format CSV for plotting several controllers on one trajectory:
/// controller, t, reference, true position, Euclidean error, one row per
/// steady control step per controller.
pub fn write_plot_bundle(entries: &[(&str, &FlightLog)], path: &Path) -> Result<(), ExportError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "controller", "t", "ref_x", "ref_y", "ref_z", "pos_x", "pos_y", "pos_z", "err",
    ])?;
    for (name, log) in entries {
        for r in log.steady_rows() {
            let e = [
                r.reference[0] - r.position[0],
                r.reference[1] - r.position[1],
                r.reference[2] - r.position[2],
            ];
            let err = (e[0] * e[0] + e[1] * e[1] + e[2] * e[2]).sqrt();
            w.write_record([
                name.to_string(),
                r.t.to_string(),
                r.reference[0].to_string(),
                r.reference[1].to_string(),
                r.reference[2].to_string(),
                r.position[0].to_string(),
                r.position[1].to_string(),
                r.position[2].to_string(),
                err.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
