//! CSV trace format, version 1 (documented in `docs/trace_format.md`).
//!
//! Fixed columns come first, then six per target (`<id>_true_x` …
//! `<id>_meas_z`) in scenario order. Reals are written with 17 significant
//! digits so that reading a trace back reproduces it bit for bit; an absent
//! desired limit is an empty field and an unbounded far limit is `inf`.

use std::io::{Read, Write};

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

use super::runner::{TargetSample, Trace, TraceRecord};
use crate::costs::CostBreakdown;
use crate::geometry::Rotation;
use crate::optics::{CameraIntrinsics, DofInterval, FarLimit};
use crate::world::{ClampFlags, DroneInput, DroneState, IntrinsicsInput};

const FIXED_COLUMNS: [&str; 43] = [
    "time",
    "sequence",
    "drone_x",
    "drone_y",
    "drone_z",
    "drone_vx",
    "drone_vy",
    "drone_vz",
    "r11",
    "r12",
    "r13",
    "r21",
    "r22",
    "r23",
    "r31",
    "r32",
    "r33",
    "focal_length",
    "focus_distance",
    "aperture",
    "dof_near",
    "dof_far",
    "desired_near",
    "desired_far",
    "j_dof",
    "j_im",
    "j_p",
    "j_total",
    "accel_x",
    "accel_y",
    "accel_z",
    "omega_x",
    "omega_y",
    "omega_z",
    "v_focal",
    "v_focus",
    "v_aperture",
    "iterations",
    "converged",
    "clamp_flags",
    "penalty",
    "behind_camera",
    "target_count",
];

const TARGET_SUFFIXES: [&str; 6] = ["true_x", "true_y", "true_z", "meas_x", "meas_y", "meas_z"];

#[derive(Debug, Error)]
pub enum TraceError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("trace header: {0}")]
    Header(String),
    #[error("trace row {row}, column `{column}`: cannot parse `{value}`")]
    Field { row: usize, column: String, value: String },
}

/// Header row for a trace over `target_ids`.
pub fn trace_columns(target_ids: &[String]) -> Vec<String> {
    let mut cols: Vec<String> = FIXED_COLUMNS.iter().map(|c| c.to_string()).collect();
    for id in target_ids {
        cols.extend(TARGET_SUFFIXES.iter().map(|s| format!("{id}_{s}")));
    }
    cols
}

fn real(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "nan".to_string()
    } else if x > 0.0 {
        "inf".to_string()
    } else {
        "-inf".to_string()
    }
}

fn optional(x: Option<f64>) -> String {
    x.map(real).unwrap_or_default()
}

fn flag(b: bool) -> String {
    u8::from(b).to_string()
}

fn row(r: &TraceRecord) -> Vec<String> {
    let mut out = Vec::with_capacity(FIXED_COLUMNS.len() + 6 * r.targets.len());
    out.push(real(r.time));
    out.push(r.sequence.to_string());
    out.extend(r.drone.position.iter().map(|&x| real(x)));
    out.extend(r.drone.velocity.iter().map(|&x| real(x)));
    let m = r.drone.rotation.matrix();
    for i in 0..3 {
        for j in 0..3 {
            out.push(real(m[(i, j)]));
        }
    }
    out.extend(r.camera.as_array().map(real));
    out.push(real(r.dof.near));
    out.push(real(r.dof.far.value()));
    out.push(optional(r.desired_near));
    out.push(optional(r.desired_far));
    out.extend([r.cost.j_dof, r.cost.j_im, r.cost.j_p, r.cost.total].map(real));
    out.extend(r.drone_input.acceleration.iter().map(|&x| real(x)));
    out.extend(r.drone_input.gimbal_rate.iter().map(|&x| real(x)));
    out.extend(r.camera_input.as_array().map(real));
    out.push(r.iterations.to_string());
    out.push(flag(r.converged));
    out.push(r.clamped.bits().to_string());
    out.push(real(r.penalty));
    out.push(flag(r.behind_camera));
    out.push(r.targets.len().to_string());
    for t in &r.targets {
        out.extend(t.true_position.iter().map(|&x| real(x)));
        out.extend(t.measured_position.iter().map(|&x| real(x)));
    }
    out
}

/// Writes `trace` as CSV: a header row, then one row per record.
pub fn write_trace(trace: &Trace, out: impl Write) -> Result<(), TraceError> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(trace_columns(&trace.target_ids))?;
    for r in &trace.records {
        w.write_record(row(r))?;
    }
    w.flush()?;
    Ok(())
}

struct Fields<'a> {
    record: &'a csv::StringRecord,
    header: &'a csv::StringRecord,
    row: usize,
    next: usize,
}

impl Fields<'_> {
    fn raw(&mut self) -> (String, String) {
        let i = self.next;
        self.next += 1;
        (self.header[i].to_string(), self.record[i].to_string())
    }

    fn fail(&self, column: String, value: &str) -> TraceError {
        TraceError::Field {
            row: self.row,
            column,
            value: value.to_string(),
        }
    }

    fn parse<T: std::str::FromStr>(&mut self) -> Result<T, TraceError> {
        let (column, value) = self.raw();
        value.parse().map_err(|_| self.fail(column, &value))
    }

    fn real(&mut self) -> Result<f64, TraceError> {
        let (column, value) = self.raw();
        match value.as_str() {
            "inf" => Ok(f64::INFINITY),
            "-inf" => Ok(f64::NEG_INFINITY),
            "nan" => Ok(f64::NAN),
            v => v.parse().map_err(|_| self.fail(column, v)),
        }
    }

    fn optional(&mut self) -> Result<Option<f64>, TraceError> {
        if self.record[self.next].is_empty() {
            self.next += 1;
            Ok(None)
        } else {
            self.real().map(Some)
        }
    }

    fn flag(&mut self) -> Result<bool, TraceError> {
        let (column, value) = self.raw();
        match value.as_str() {
            "0" => Ok(false),
            "1" => Ok(true),
            v => Err(self.fail(column, v)),
        }
    }

    fn vector(&mut self) -> Result<Vector3<f64>, TraceError> {
        Ok(Vector3::new(self.real()?, self.real()?, self.real()?))
    }
}

fn parse_header(header: &csv::StringRecord) -> Result<Vec<String>, TraceError> {
    let n = FIXED_COLUMNS.len();
    if header.len() < n || header.iter().take(n).ne(FIXED_COLUMNS.iter().copied()) {
        return Err(TraceError::Header("fixed columns missing or out of order".into()));
    }
    let rest: Vec<&str> = header.iter().skip(n).collect();
    if !rest.len().is_multiple_of(TARGET_SUFFIXES.len()) {
        return Err(TraceError::Header("incomplete per-target column group".into()));
    }
    let mut ids = Vec::new();
    for group in rest.chunks(TARGET_SUFFIXES.len()) {
        let id = group[0]
            .strip_suffix(&format!("_{}", TARGET_SUFFIXES[0]))
            .ok_or_else(|| TraceError::Header(format!("unexpected column `{}`", group[0])))?;
        for (col, suffix) in group.iter().zip(TARGET_SUFFIXES) {
            if *col != format!("{id}_{suffix}") {
                return Err(TraceError::Header(format!("unexpected column `{col}`")));
            }
        }
        ids.push(id.to_string());
    }
    Ok(ids)
}

/// Reads a trace written by [`write_trace`].
pub fn read_trace(input: impl Read) -> Result<Trace, TraceError> {
    let mut rd = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header = rd.headers()?.clone();
    let target_ids = parse_header(&header)?;
    let mut records = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let record = rec?;
        let mut f = Fields {
            record: &record,
            header: &header,
            row: i + 1,
            next: 0,
        };
        let time = f.real()?;
        let sequence = f.parse()?;
        let position = f.vector()?;
        let velocity = f.vector()?;
        let mut m = Matrix3::zeros();
        for r in 0..3 {
            for c in 0..3 {
                m[(r, c)] = f.real()?;
            }
        }
        let camera = CameraIntrinsics::new(f.real()?, f.real()?, f.real()?);
        let near = f.real()?;
        let far = f.real()?;
        let desired_near = f.optional()?;
        let desired_far = f.optional()?;
        let cost = CostBreakdown {
            j_dof: f.real()?,
            j_im: f.real()?,
            j_p: f.real()?,
            total: f.real()?,
        };
        let drone_input = DroneInput {
            acceleration: f.vector()?,
            gimbal_rate: f.vector()?,
        };
        let camera_input = IntrinsicsInput::from_array([f.real()?, f.real()?, f.real()?]);
        let iterations = f.parse()?;
        let converged = f.flag()?;
        let clamped = ClampFlags::from_bits(f.parse()?);
        let penalty = f.real()?;
        let behind_camera = f.flag()?;
        let count: usize = f.parse()?;
        if count != target_ids.len() {
            return Err(f.fail("target_count".into(), &count.to_string()));
        }
        let mut targets = Vec::with_capacity(count);
        for _ in 0..count {
            targets.push(TargetSample {
                true_position: f.vector()?,
                measured_position: f.vector()?,
            });
        }
        records.push(TraceRecord {
            time,
            sequence,
            drone: DroneState {
                position,
                velocity,
                rotation: Rotation::from_matrix_unchecked(m),
            },
            camera,
            dof: DofInterval {
                near,
                far: if far.is_finite() {
                    FarLimit::Finite(far)
                } else {
                    FarLimit::Unbounded
                },
            },
            desired_near,
            desired_far,
            cost,
            drone_input,
            camera_input,
            iterations,
            converged,
            clamped,
            penalty,
            behind_camera,
            targets,
        });
    }
    Ok(Trace { target_ids, records })
}
