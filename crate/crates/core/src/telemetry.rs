//! Telemetry: per-tick CSV logs with a fixed, versioned column order, a
//! JSON run header carrying full provenance (seed, configs, model hash),
//! and aggregate statistics over repeated runs (per-tick mean and max
//! envelope of the task error norms).
//!
//! CSV files are the only data interface to plotting; nothing is kept in
//! hidden state. Byte-identical output for identical inputs is part of the
//! contract, so all floats are written with a fixed format.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Bump when the column layout changes.
pub const CSV_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TelemetryError {
    #[error("telemetry io: {0}")]
    Io(#[from] std::io::Error),
    #[error("telemetry json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{path}: {reason}")]
    Schema { path: String, reason: String },
}

/// One control-tick record.
#[derive(Debug, Clone, Default)]
pub struct TelemetryRow {
    pub tick: u64,
    pub time: f64,
    pub position: [f64; 3],
    pub rpy: [f64; 3],
    pub joints: Vec<f64>,
    pub base_linear_velocity: [f64; 3],
    pub base_angular_velocity: [f64; 3],
    pub joint_rates: Vec<f64>,
    pub thrusts: Vec<f64>,
    pub rpm_measured: Vec<f64>,
    pub rpm_reference: Vec<f64>,
    pub detector_states: Vec<u8>,
    pub linear_momentum_error: f64,
    pub angular_momentum_error: f64,
    pub momentum_error: f64,
    pub joint_error: f64,
    pub qp_iterations: u64,
    pub qp_residual: f64,
    /// 1 when the QP failed and the previous command was held.
    pub qp_held: u8,
    pub thrust_rate_commands: Vec<f64>,
    pub joint_rate_commands: Vec<f64>,
}

/// Fixed column order for a model with `n` joints and `n_p` thrusters.
pub fn csv_columns(n: usize, n_p: usize) -> Vec<String> {
    let mut cols: Vec<String> = vec!["tick".into(), "time".into()];
    cols.extend(["px", "py", "pz", "roll", "pitch", "yaw"].map(String::from));
    cols.extend((0..n).map(|j| format!("s{j}")));
    cols.extend(["vx", "vy", "vz", "wx", "wy", "wz"].map(String::from));
    cols.extend((0..n).map(|j| format!("sdot{j}")));
    cols.extend((0..n_p).map(|k| format!("thrust{k}")));
    cols.extend((0..n_p).map(|k| format!("rpm_meas{k}")));
    cols.extend((0..n_p).map(|k| format!("rpm_ref{k}")));
    cols.extend((0..n_p).map(|k| format!("det{k}")));
    cols.extend(
        ["lin_mom_err", "ang_mom_err", "mom_err", "joint_err", "qp_iters", "qp_residual", "qp_held"]
            .map(String::from),
    );
    cols.extend((0..n_p).map(|k| format!("tdot_cmd{k}")));
    cols.extend((0..n).map(|j| format!("sdot_cmd{j}")));
    cols
}

fn fmt(value: f64) -> String {
    format!("{value:.12e}")
}

impl TelemetryRow {
    pub fn to_csv_line(&self) -> String {
        let mut fields: Vec<String> = vec![self.tick.to_string(), fmt(self.time)];
        fields.extend(self.position.iter().map(|&v| fmt(v)));
        fields.extend(self.rpy.iter().map(|&v| fmt(v)));
        fields.extend(self.joints.iter().map(|&v| fmt(v)));
        fields.extend(self.base_linear_velocity.iter().map(|&v| fmt(v)));
        fields.extend(self.base_angular_velocity.iter().map(|&v| fmt(v)));
        fields.extend(self.joint_rates.iter().map(|&v| fmt(v)));
        fields.extend(self.thrusts.iter().map(|&v| fmt(v)));
        fields.extend(self.rpm_measured.iter().map(|&v| fmt(v)));
        fields.extend(self.rpm_reference.iter().map(|&v| fmt(v)));
        fields.extend(self.detector_states.iter().map(|&v| v.to_string()));
        fields.push(fmt(self.linear_momentum_error));
        fields.push(fmt(self.angular_momentum_error));
        fields.push(fmt(self.momentum_error));
        fields.push(fmt(self.joint_error));
        fields.push(self.qp_iterations.to_string());
        fields.push(fmt(self.qp_residual));
        fields.push(self.qp_held.to_string());
        fields.extend(self.thrust_rate_commands.iter().map(|&v| fmt(v)));
        fields.extend(self.joint_rate_commands.iter().map(|&v| fmt(v)));
        fields.join(",")
    }
}

/// Provenance header written as a JSON sidecar next to each CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunHeader {
    pub schema_version: u32,
    pub scenario_name: String,
    pub run_index: usize,
    pub seed: u64,
    pub model_hash: String,
    pub with_reference_generator: bool,
    /// Full scenario config echo for reproducibility.
    pub scenario: serde_json::Value,
    /// Set when the run aborted, with the diagnostic.
    pub aborted: Option<String>,
    pub detection_time: Option<f64>,
}

/// FNV-1a over the model file bytes; stable across platforms and builds.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    format!("{hash:016x}")
}

/// A complete run log.
#[derive(Debug, Clone)]
pub struct TelemetryLog {
    pub header: RunHeader,
    pub columns: Vec<String>,
    pub rows: Vec<TelemetryRow>,
}

impl TelemetryLog {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), TelemetryError> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(file, "{}", self.columns.join(","))?;
        for row in &self.rows {
            writeln!(file, "{}", row.to_csv_line())?;
        }
        Ok(())
    }

    pub fn write_header(&self, path: impl AsRef<Path>) -> Result<(), TelemetryError> {
        let text = serde_json::to_string_pretty(&self.header)?;
        std::fs::write(path, text)?;
        Ok(())
    }
}

/// Parsed CSV: column names plus row-major numeric data.
#[derive(Debug, Clone)]
pub struct CsvTable {
    pub columns: Vec<String>,
    pub data: Vec<Vec<f64>>,
}

impl CsvTable {
    pub fn read(path: impl AsRef<Path>) -> Result<Self, TelemetryError> {
        let display = path.as_ref().display().to_string();
        let text = std::fs::read_to_string(&path)?;
        let mut lines = text.lines();
        let columns: Vec<String> = lines
            .next()
            .ok_or_else(|| TelemetryError::Schema {
                path: display.clone(),
                reason: "empty file".into(),
            })?
            .split(',')
            .map(str::to_string)
            .collect();
        let mut data = Vec::new();
        for (i, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let row: Result<Vec<f64>, _> = line.split(',').map(str::parse::<f64>).collect();
            let row = row.map_err(|e| TelemetryError::Schema {
                path: display.clone(),
                reason: format!("line {}: {e}", i + 2),
            })?;
            if row.len() != columns.len() {
                return Err(TelemetryError::Schema {
                    path: display.clone(),
                    reason: format!("line {}: {} fields, expected {}", i + 2, row.len(), columns.len()),
                });
            }
            data.push(row);
        }
        Ok(Self { columns, data })
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>, TelemetryError> {
        let index = self.columns.iter().position(|c| c == name).ok_or_else(|| {
            TelemetryError::Schema {
                path: String::new(),
                reason: format!("missing column `{name}`"),
            }
        })?;
        Ok(self.data.iter().map(|row| row[index]).collect())
    }
}

/// Per-tick mean and max envelope over a set of runs, plus scalar recovery
/// metrics, mirroring the figure convention of averaged repeats with a
/// max-envelope band.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Summary {
    pub schema_version: u32,
    pub scenario_name: String,
    pub runs: usize,
    pub ticks: usize,
    pub time: Vec<f64>,
    pub momentum_error_mean: Vec<f64>,
    pub momentum_error_max: Vec<f64>,
    pub joint_error_mean: Vec<f64>,
    pub joint_error_max: Vec<f64>,
    /// Trapezoidal ∫‖momentum error‖ dt per run.
    pub integrated_momentum_error: Vec<f64>,
    pub detection_times: Vec<Option<f64>>,
    /// First post-detection time the momentum error norm drops below the
    /// scenario hover threshold, per run.
    pub recovery_times: Vec<Option<f64>>,
    pub all_completed: bool,
    pub hover_threshold: f64,
}

impl Summary {
    pub fn from_logs(
        scenario_name: &str,
        logs: &[TelemetryLog],
        hover_threshold: f64,
    ) -> Self {
        let runs = logs.len();
        let ticks = logs.iter().map(|l| l.rows.len()).min().unwrap_or(0);
        let time: Vec<f64> = (0..ticks).map(|i| logs[0].rows[i].time).collect();
        let mut momentum_error_mean = vec![0.0; ticks];
        let mut momentum_error_max = vec![f64::NEG_INFINITY; ticks];
        let mut joint_error_mean = vec![0.0; ticks];
        let mut joint_error_max = vec![f64::NEG_INFINITY; ticks];
        for log in logs {
            for i in 0..ticks {
                let row = &log.rows[i];
                momentum_error_mean[i] += row.momentum_error / runs as f64;
                momentum_error_max[i] = momentum_error_max[i].max(row.momentum_error);
                joint_error_mean[i] += row.joint_error / runs as f64;
                joint_error_max[i] = joint_error_max[i].max(row.joint_error);
            }
        }
        let integrated_momentum_error = logs
            .iter()
            .map(|log| {
                let mut total = 0.0;
                for pair in log.rows.windows(2) {
                    let dt = pair[1].time - pair[0].time;
                    total += 0.5 * (pair[0].momentum_error + pair[1].momentum_error) * dt;
                }
                total
            })
            .collect();
        let detection_times: Vec<Option<f64>> =
            logs.iter().map(|l| l.header.detection_time).collect();
        let recovery_times = logs
            .iter()
            .map(|log| {
                let detect = log.header.detection_time?;
                log.rows
                    .iter()
                    .find(|row| row.time > detect && row.momentum_error < hover_threshold)
                    .map(|row| row.time)
            })
            .collect();
        Self {
            schema_version: CSV_SCHEMA_VERSION,
            scenario_name: scenario_name.to_string(),
            runs,
            ticks,
            time,
            momentum_error_mean,
            momentum_error_max,
            joint_error_mean,
            joint_error_max,
            integrated_momentum_error,
            detection_times,
            recovery_times,
            all_completed: logs.iter().all(|l| l.header.aborted.is_none()),
            hover_threshold,
        }
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), TelemetryError> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}
