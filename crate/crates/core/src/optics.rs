//! Thin-lens depth of field.
//!
//! All quantities are SI: focal length, focus distance and circle of
//! confusion in meters, aperture as a dimensionless f-number.
//!
//! The hyperfocal distance is `H = f²/(A·c) + f`; the near and far limits of
//! acceptable sharpness for a lens focused at `F` are
//!
//! ```text
//! D_n = F (H - f) / (H + F - 2f)
//! D_f = F (H - f) / (H - F)        (unbounded for F >= H)
//! ```
//!
//! Internally everything is written in terms of `K = H - f = f²/(A·c)`,
//! which is carried as a double-double so that the far-limit denominator
//! `K + f - F` keeps full relative precision close to the hyperfocal
//! singularity.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OpticsError {
    #[error("{name} must be positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("focus distance {focus} m must exceed focal length {focal} m")]
    FocusInsideFocalLength { focus: f64, focal: f64 },
    #[error("far limit is unbounded (focus {focus} m at or beyond hyperfocal {hyperfocal} m)")]
    BeyondHyperfocal { focus: f64, hyperfocal: f64 },
    #[error("image/sensor aspect mismatch: {height_ratio} px/m vertically vs {width_ratio} px/m horizontally")]
    AspectMismatch { height_ratio: f64, width_ratio: f64 },
}

/// Fixed lens and sensor constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LensConstants {
    pub circle_of_confusion: f64,
    pub sensor_width: f64,
    pub sensor_height: f64,
    pub image_width: u32,
    pub image_height: u32,
    pub skew: f64,
    pub principal_point: [f64; 2],
}

impl Default for LensConstants {
    /// 1920×1080 image on a 42.67 × 24 mm sensor (45 000 px/m) with a
    /// 0.03 mm circle of confusion.
    fn default() -> Self {
        Self {
            circle_of_confusion: DEFAULT_CIRCLE_OF_CONFUSION,
            sensor_width: 1920.0 / 45_000.0,
            sensor_height: 0.024,
            image_width: 1920,
            image_height: 1080,
            skew: 0.0,
            principal_point: [960.0, 540.0],
        }
    }
}

/// Conventional full-frame circle of confusion, meters.
pub const DEFAULT_CIRCLE_OF_CONFUSION: f64 = 3.0e-5;

impl LensConstants {
    pub fn validate(&self) -> Result<(), OpticsError> {
        positive("circle_of_confusion", self.circle_of_confusion)?;
        positive("sensor_width", self.sensor_width)?;
        positive("sensor_height", self.sensor_height)?;
        positive("image_width", self.image_width as f64)?;
        positive("image_height", self.image_height as f64)?;
        let height_ratio = self.image_height as f64 / self.sensor_height;
        let width_ratio = self.image_width as f64 / self.sensor_width;
        if ((height_ratio - width_ratio) / height_ratio).abs() > 1e-9 {
            return Err(OpticsError::AspectMismatch {
                height_ratio,
                width_ratio,
            });
        }
        Ok(())
    }

    /// Pixels per meter on the sensor.
    pub fn beta(&self) -> f64 {
        self.image_height as f64 / self.sensor_height
    }
}

/// The controllable lens state: focal length and focus distance in meters,
/// aperture as an f-number.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub focal_length: f64,
    pub focus_distance: f64,
    pub aperture: f64,
}

impl CameraIntrinsics {
    pub fn new(focal_length: f64, focus_distance: f64, aperture: f64) -> Self {
        Self {
            focal_length,
            focus_distance,
            aperture,
        }
    }

    pub fn validate(&self) -> Result<(), OpticsError> {
        positive("focal_length", self.focal_length)?;
        positive("aperture", self.aperture)?;
        if !(self.focus_distance > self.focal_length) {
            return Err(OpticsError::FocusInsideFocalLength {
                focus: self.focus_distance,
                focal: self.focal_length,
            });
        }
        Ok(())
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.focal_length, self.focus_distance, self.aperture]
    }

    pub fn from_array(v: [f64; 3]) -> Self {
        Self::new(v[0], v[1], v[2])
    }
}

/// Far limit of the depth of field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum FarLimit {
    Finite(f64),
    Unbounded,
}

impl FarLimit {
    pub fn is_unbounded(&self) -> bool {
        matches!(self, FarLimit::Unbounded)
    }

    /// `f64::INFINITY` for the unbounded case.
    pub fn value(&self) -> f64 {
        match *self {
            FarLimit::Finite(d) => d,
            FarLimit::Unbounded => f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DofInterval {
    pub near: f64,
    pub far: FarLimit,
}

impl DofInterval {
    pub fn width(&self) -> f64 {
        self.far.value() - self.near
    }
}

/// Partial derivatives of the near and far limits with respect to
/// `(focal_length, focus_distance, aperture)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DofPartials {
    pub near: [f64; 3],
    pub far: [f64; 3],
}

fn positive(name: &'static str, value: f64) -> Result<(), OpticsError> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(OpticsError::NonPositive { name, value })
    }
}

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

/// `K = f²/(A·c)` as an unevaluated sum `hi + lo`.
fn excess_dd(f: f64, aperture: f64, coc: f64) -> (f64, f64) {
    let (p_hi, p_lo) = two_prod(f, f);
    let (q_hi, q_lo) = two_prod(aperture, coc);
    let k_hi = p_hi / q_hi;
    // remainder p - k_hi * q, evaluated with one rounding
    let (t_hi, t_lo) = two_prod(k_hi, q_hi);
    let r = ((p_hi - t_hi) - t_lo) + p_lo - k_hi * q_lo;
    let k_lo = r / q_hi;
    let (hi, lo) = two_sum(k_hi, k_lo);
    (hi, lo)
}

/// `a + b + c` with the cancellation between the first terms handled exactly.
fn sum3(k: (f64, f64), a: f64, b: f64) -> f64 {
    let (s, e) = two_sum(k.0, a);
    let (t, e2) = two_sum(s, b);
    t + (e2 + (e + k.1))
}

fn checked(intr: &CameraIntrinsics, lens: &LensConstants) -> Result<(), OpticsError> {
    positive("focal_length", intr.focal_length)?;
    positive("aperture", intr.aperture)?;
    positive("circle_of_confusion", lens.circle_of_confusion)?;
    Ok(())
}

fn checked_focus(intr: &CameraIntrinsics, lens: &LensConstants) -> Result<(), OpticsError> {
    checked(intr, lens)?;
    if !(intr.focus_distance > intr.focal_length) {
        return Err(OpticsError::FocusInsideFocalLength {
            focus: intr.focus_distance,
            focal: intr.focal_length,
        });
    }
    Ok(())
}

pub fn hyperfocal(intr: &CameraIntrinsics, lens: &LensConstants) -> Result<f64, OpticsError> {
    checked(intr, lens)?;
    let k = excess_dd(intr.focal_length, intr.aperture, lens.circle_of_confusion);
    Ok(sum3(k, intr.focal_length, 0.0))
}

pub fn near_distance(intr: &CameraIntrinsics, lens: &LensConstants) -> Result<f64, OpticsError> {
    checked_focus(intr, lens)?;
    let (f, focus) = (intr.focal_length, intr.focus_distance);
    let k = excess_dd(f, intr.aperture, lens.circle_of_confusion);
    let num = focus * (k.0 + k.1);
    let den = sum3(k, focus, -f);
    Ok(num / den)
}

pub fn far_distance(intr: &CameraIntrinsics, lens: &LensConstants) -> Result<FarLimit, OpticsError> {
    checked_focus(intr, lens)?;
    let (f, focus) = (intr.focal_length, intr.focus_distance);
    let k = excess_dd(f, intr.aperture, lens.circle_of_confusion);
    let den = sum3(k, f, -focus);
    // compare against the rounded hyperfocal distance so that F = H(f, A)
    // as computed by `hyperfocal` is unbounded
    if den <= 0.0 || focus >= sum3(k, f, 0.0) {
        return Ok(FarLimit::Unbounded);
    }
    Ok(FarLimit::Finite(focus * (k.0 + k.1) / den))
}

pub fn dof_interval(intr: &CameraIntrinsics, lens: &LensConstants) -> Result<DofInterval, OpticsError> {
    Ok(DofInterval {
        near: near_distance(intr, lens)?,
        far: far_distance(intr, lens)?,
    })
}

/// Analytic gradient of the near limit; defined for every valid lens state.
pub fn near_partials(intr: &CameraIntrinsics, lens: &LensConstants) -> Result<[f64; 3], OpticsError> {
    checked_focus(intr, lens)?;
    let (f, focus, aperture) = (intr.focal_length, intr.focus_distance, intr.aperture);
    let kk = excess_dd(f, aperture, lens.circle_of_confusion);
    let k = kk.0 + kk.1;
    let den = sum3(kk, focus, -f);
    let den2 = den * den;
    let dn_dk = focus * (focus - f) / den2;
    Ok([
        dn_dk * 2.0 * k / f + focus * k / den2,
        k * (k - f) / den2,
        -dn_dk * k / aperture,
    ])
}

/// Analytic gradient of the far limit. Errors when the far limit is unbounded.
pub fn far_partials(intr: &CameraIntrinsics, lens: &LensConstants) -> Result<[f64; 3], OpticsError> {
    checked_focus(intr, lens)?;
    let (f, focus, aperture) = (intr.focal_length, intr.focus_distance, intr.aperture);
    let kk = excess_dd(f, aperture, lens.circle_of_confusion);
    let k = kk.0 + kk.1;
    let den = sum3(kk, f, -focus);
    let h = sum3(kk, f, 0.0);
    if den <= 0.0 || focus >= h {
        return Err(OpticsError::BeyondHyperfocal { focus, hyperfocal: h });
    }
    let den2 = den * den;
    let df_dk = focus * (f - focus) / den2;
    Ok([
        df_dk * 2.0 * k / f - focus * k / den2,
        k * (k + f) / den2,
        -df_dk * k / aperture,
    ])
}

/// `1 / D_f`, extended smoothly through the hyperfocal distance: positive
/// while the far limit is finite, zero at `F = H` and negative beyond.
pub fn inverse_far_distance(intr: &CameraIntrinsics, lens: &LensConstants) -> Result<f64, OpticsError> {
    checked_focus(intr, lens)?;
    let (f, focus) = (intr.focal_length, intr.focus_distance);
    let kk = excess_dd(f, intr.aperture, lens.circle_of_confusion);
    Ok(sum3(kk, f, -focus) / (focus * (kk.0 + kk.1)))
}

/// Gradient of [`inverse_far_distance`] w.r.t. (f, F, A); defined for every
/// valid lens state.
pub fn inverse_far_partials(intr: &CameraIntrinsics, lens: &LensConstants) -> Result<[f64; 3], OpticsError> {
    checked_focus(intr, lens)?;
    let (f, focus, aperture) = (intr.focal_length, intr.focus_distance, intr.aperture);
    let kk = excess_dd(f, aperture, lens.circle_of_confusion);
    let k = kk.0 + kk.1;
    // x = 1/F + f/(F K) - 1/K
    let dx_dk = (focus - f) / (focus * k * k);
    Ok([
        1.0 / (focus * k) + dx_dk * 2.0 * k / f,
        -1.0 / (focus * focus) - f / (focus * focus * k),
        -dx_dk * k / aperture,
    ])
}

/// Analytic gradients of both limits. Requires a bounded far limit.
pub fn dof_partials(intr: &CameraIntrinsics, lens: &LensConstants) -> Result<DofPartials, OpticsError> {
    Ok(DofPartials {
        near: near_partials(intr, lens)?,
        far: far_partials(intr, lens)?,
    })
}
