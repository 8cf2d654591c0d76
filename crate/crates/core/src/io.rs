//! File formats: plot-ready CSV, newline-delimited detection trains with
//! JSON sidecars, and generic JSON documents.
//!
//! All numeric columns are written with 17 significant digits
//! (`{:.16e}`), which round-trips every finite `f64` exactly; readers
//! therefore reproduce written data bit for bit. Every writer is atomic:
//! content lands in a temporary file in the destination directory and is
//! renamed into place, so a crash never leaves a half-written artifact.
//!
//! Schemas:
//!
//! * curve CSV — header `gate_time,y_value` or `gate_time,y_value,stderr`
//!   (the third column appears only when every point carries an error);
//! * decay CSV — header `time,rate,stderr`;
//! * trajectory CSV — header `time,mean_n1,mean_n2,mean_z,mu_xx,mu_xy,
//!   mu_yy,mu_xz,mu_yz,mu_zz`;
//! * residual CSV — caller-supplied header, rows of
//!   `(abscissa, observed, model, weighted_residual)`;
//! * detection train — one decimal timestamp per line, no header, with run
//!   metadata in a JSON sidecar next to it.

use crate::analytic::{CurvePoint, FeynmanCurve};
use crate::moments::MomentState;
use crate::simulator::DecayPoint;
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Format {
        path: String,
        line: usize,
        message: String,
    },
    #[error("JSON failure on {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

fn io_err(path: &Path, source: std::io::Error) -> IoError {
    IoError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn format_err(path: &Path, line: usize, message: impl Into<String>) -> IoError {
    IoError::Format {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

/// Write `content` to `path` atomically (temp file + rename in the target
/// directory).
pub fn write_atomic(path: &Path, content: &str) -> Result<(), IoError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let mut tmp = tempfile::NamedTempFile::new_in(dir.unwrap_or_else(|| Path::new(".")))
        .map_err(|e| io_err(path, e))?;
    std::io::Write::write_all(&mut tmp, content.as_bytes()).map_err(|e| io_err(path, e))?;
    tmp.persist(path)
        .map_err(|e| io_err(path, e.error))?;
    Ok(())
}

/// Serialize `value` as pretty-printed JSON, atomically.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut body = serde_json::to_string_pretty(value).map_err(|e| IoError::Json {
        path: path.display().to_string(),
        source: e,
    })?;
    body.push('\n');
    write_atomic(path, &body)
}

/// Read and deserialize a JSON document.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let body = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&body).map_err(|e| IoError::Json {
        path: path.display().to_string(),
        source: e,
    })
}

/// Run metadata stored beside an exported detection train.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainMetadata {
    pub seed: u64,
    pub replica_index: u32,
    pub t_record: f64,
    /// Random-stream contract the producing run honored.
    pub generator_id: String,
    /// Content hash of the system configuration that produced the train.
    pub params_hash: String,
    pub n_detections: u64,
    /// Manifest hash of the producing run, when one exists.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_id: Option<String>,
}

/// Conventional sidecar path of a train file: `<train>.meta.json`.
pub fn sidecar_path(train_path: &Path) -> std::path::PathBuf {
    let mut name = train_path.as_os_str().to_os_string();
    name.push(".meta.json");
    std::path::PathBuf::from(name)
}

/// Write a detection train: one timestamp per line, full precision.
pub fn write_train(path: &Path, times: &[f64]) -> Result<(), IoError> {
    let mut body = String::with_capacity(times.len() * 24);
    for t in times {
        writeln!(body, "{t:.16e}").expect("string write");
    }
    write_atomic(path, &body)
}

/// Read a detection train written by [`write_train`].
pub fn read_train(path: &Path) -> Result<Vec<f64>, IoError> {
    let body = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    body.lines()
        .enumerate()
        .filter(|(_, line)| !line.trim().is_empty())
        .map(|(i, line)| {
            line.trim()
                .parse::<f64>()
                .map_err(|e| format_err(path, i + 1, format!("bad timestamp {line:?}: {e}")))
        })
        .collect()
}

/// Write a variance-to-mean curve as CSV. The `stderr` column is included
/// only when every point carries one; a curve mixing present and absent
/// errors is rejected.
pub fn write_curve_csv(path: &Path, curve: &FeynmanCurve) -> Result<(), IoError> {
    let with_stderr = curve.points.iter().all(|p| p.stderr.is_some());
    if !with_stderr && curve.points.iter().any(|p| p.stderr.is_some()) {
        return Err(format_err(
            path,
            0,
            "curve mixes points with and without stderr; cannot pick a schema",
        ));
    }
    let mut body = String::new();
    if with_stderr {
        body.push_str("gate_time,y_value,stderr\n");
        for p in &curve.points {
            writeln!(
                body,
                "{:.16e},{:.16e},{:.16e}",
                p.gate_time,
                p.y_value,
                p.stderr.unwrap()
            )
            .expect("string write");
        }
    } else {
        body.push_str("gate_time,y_value\n");
        for p in &curve.points {
            writeln!(body, "{:.16e},{:.16e}", p.gate_time, p.y_value).expect("string write");
        }
    }
    write_atomic(path, &body)
}

fn split_columns<'a>(
    path: &Path,
    line_no: usize,
    line: &'a str,
    expected: usize,
) -> Result<Vec<&'a str>, IoError> {
    let cols: Vec<&str> = line.split(',').map(str::trim).collect();
    if cols.len() != expected {
        return Err(format_err(
            path,
            line_no,
            format!("expected {expected} columns, found {}", cols.len()),
        ));
    }
    Ok(cols)
}

fn parse_field(path: &Path, line_no: usize, field: &str) -> Result<f64, IoError> {
    field
        .parse::<f64>()
        .map_err(|e| format_err(path, line_no, format!("bad number {field:?}: {e}")))
}

/// Read a curve CSV written by [`write_curve_csv`] (either schema).
pub fn read_curve_csv(path: &Path) -> Result<FeynmanCurve, IoError> {
    let body = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut lines = body.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| format_err(path, 1, "empty file"))?;
    let with_stderr = match header.trim() {
        "gate_time,y_value" => false,
        "gate_time,y_value,stderr" => true,
        other => {
            return Err(format_err(
                path,
                1,
                format!("unrecognized curve header {other:?}"),
            ));
        }
    };
    let mut points = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let line_no = i + 1;
        let cols = split_columns(path, line_no, line, if with_stderr { 3 } else { 2 })?;
        points.push(CurvePoint {
            gate_time: parse_field(path, line_no, cols[0])?,
            y_value: parse_field(path, line_no, cols[1])?,
            stderr: if with_stderr {
                Some(parse_field(path, line_no, cols[2])?)
            } else {
                None
            },
        });
    }
    Ok(FeynmanCurve { points })
}

/// Write a die-away histogram as CSV (`time,rate,stderr`).
pub fn write_decay_csv(path: &Path, points: &[DecayPoint]) -> Result<(), IoError> {
    let mut body = String::from("time,rate,stderr\n");
    for p in points {
        writeln!(body, "{:.16e},{:.16e},{:.16e}", p.time, p.rate, p.stderr)
            .expect("string write");
    }
    write_atomic(path, &body)
}

/// Read a die-away histogram CSV written by [`write_decay_csv`].
pub fn read_decay_csv(path: &Path) -> Result<Vec<DecayPoint>, IoError> {
    let body = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut lines = body.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| format_err(path, 1, "empty file"))?;
    if header.trim() != "time,rate,stderr" {
        return Err(format_err(
            path,
            1,
            format!("unrecognized decay header {header:?}"),
        ));
    }
    let mut points = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let line_no = i + 1;
        let cols = split_columns(path, line_no, line, 3)?;
        points.push(DecayPoint {
            time: parse_field(path, line_no, cols[0])?,
            rate: parse_field(path, line_no, cols[1])?,
            stderr: parse_field(path, line_no, cols[2])?,
        });
    }
    Ok(points)
}

/// Dump a moment trajectory as CSV, one row per sampled time.
pub fn write_trajectory_csv(path: &Path, states: &[MomentState]) -> Result<(), IoError> {
    let mut body = String::from(
        "time,mean_n1,mean_n2,mean_z,mu_xx,mu_xy,mu_yy,mu_xz,mu_yz,mu_zz\n",
    );
    for s in states {
        writeln!(
            body,
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            s.time, s.mean_n1, s.mean_n2, s.mean_z, s.mu_xx, s.mu_xy, s.mu_yy, s.mu_xz, s.mu_yz,
            s.mu_zz
        )
        .expect("string write");
    }
    write_atomic(path, &body)
}

/// Write a residual table: caller-supplied header naming the four columns
/// `(abscissa, observed, model, weighted_residual)`.
pub fn write_residuals_csv(
    path: &Path,
    header: &str,
    rows: &[(f64, f64, f64, f64)],
) -> Result<(), IoError> {
    let mut body = String::from(header);
    body.push('\n');
    for (x, obs, model, resid) in rows {
        writeln!(body, "{x:.16e},{obs:.16e},{model:.16e},{resid:.16e}").expect("string write");
    }
    write_atomic(path, &body)
}
