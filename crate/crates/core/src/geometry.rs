//! Poses, SO(3) helpers and the pinhole projection used for composition.
//!
//! Frames: world is z-up. The camera frame is x right, y down, z forward, and
//! a pose's rotation maps camera (or target body) coordinates to world.
//! Targets use the same axis convention as the camera, so a camera standing
//! behind a target and looking the same way has identity relative rotation.

use nalgebra::{Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::optics::LensConstants;

pub type Rotation = Rotation3<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point is behind the camera (depth {depth} m)")]
    BehindCamera { depth: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub position: Vector3<f64>,
    pub rotation: Rotation,
}

impl Pose {
    pub fn new(position: Vector3<f64>, rotation: Rotation) -> Self {
        Self { position, rotation }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImagePoint {
    pub u: f64,
    pub v: f64,
}

impl ImagePoint {
    pub fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }
}

pub fn skew(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

const SMALL_ANGLE: f64 = 1e-10;

/// Rodrigues' formula for the rotation vector `phi`.
pub fn so3_exp(phi: &Vector3<f64>) -> Rotation {
    let theta2 = phi.norm_squared();
    let theta = theta2.sqrt();
    let k = skew(phi);
    let (a, b) = if theta < SMALL_ANGLE {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    Rotation::from_matrix_unchecked(Matrix3::identity() + k * a + k * k * b)
}

/// Rotation reached by turning at constant body rate `omega` for `dt` seconds.
pub fn exp_map(omega: &Vector3<f64>, dt: f64) -> Rotation {
    so3_exp(&(omega * dt))
}

/// Right Jacobian of SO(3): `exp(phi + d) ≈ exp(phi) · exp(Jr(phi) d)`.
pub fn right_jacobian(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = phi.norm_squared();
    let theta = theta2.sqrt();
    let k = skew(phi);
    let (a, b) = if theta < 1e-6 {
        (0.5 - theta2 / 24.0, 1.0 / 6.0 - theta2 / 120.0)
    } else {
        ((1.0 - theta.cos()) / theta2, (theta - theta.sin()) / (theta2 * theta))
    };
    Matrix3::identity() - k * a + k * k * b
}

/// Projects a near-rotation back onto SO(3) via the polar decomposition.
pub fn orthonormalize(m: &Matrix3<f64>) -> Rotation {
    let svd = m.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        r = u * v_t;
    }
    Rotation::from_matrix_unchecked(r)
}

/// Camera axes for a level camera looking along world +x: forward → +x,
/// right → -y, down → -z.
pub fn level_camera() -> Rotation {
    Rotation::from_matrix_unchecked(Matrix3::new(
        0.0, 0.0, 1.0, //
        -1.0, 0.0, 0.0, //
        0.0, -1.0, 0.0,
    ))
}

/// Level orientation facing `yaw` radians counter-clockwise from world +x.
pub fn heading(yaw: f64) -> Rotation {
    Rotation::from_axis_angle(&Vector3::z_axis(), yaw) * level_camera()
}

/// Relative rotation between two level frames whose headings differ by `yaw`.
pub fn relative_yaw(yaw: f64) -> Rotation {
    level_camera().inverse() * Rotation::from_axis_angle(&Vector3::z_axis(), yaw) * level_camera()
}

/// Target position expressed in the camera frame.
pub fn relative_position(drone: &Pose, target_pos: &Vector3<f64>) -> Vector3<f64> {
    drone.rotation.matrix().transpose() * (target_pos - drone.position)
}

pub fn calibration_matrix(f: f64, lens: &LensConstants) -> Matrix3<f64> {
    let bf = lens.beta() * f;
    let [cu, cv] = lens.principal_point;
    Matrix3::new(bf, lens.skew, cu, 0.0, bf, cv, 0.0, 0.0, 1.0)
}

pub fn project(p_dt: &Vector3<f64>, f: f64, lens: &LensConstants) -> Result<ImagePoint, GeometryError> {
    if !(p_dt.z > 0.0) {
        return Err(GeometryError::BehindCamera { depth: p_dt.z });
    }
    let h = calibration_matrix(f, lens) * p_dt;
    let lambda = 1.0 / h.z;
    Ok(ImagePoint::new(h.x * lambda, h.y * lambda))
}

pub fn relative_rotation(drone: &Pose, target: &Pose) -> Rotation {
    drone.rotation.inverse() * target.rotation
}

/// Axial depth of a camera-frame point.
pub fn target_depth(p_dt: &Vector3<f64>) -> Result<f64, GeometryError> {
    if p_dt.z > 0.0 {
        Ok(p_dt.z)
    } else {
        Err(GeometryError::BehindCamera { depth: p_dt.z })
    }
}

/// Chordal distance `‖Rᵀ R* − I‖_F`.
pub fn rotation_distance(r: &Rotation, r_star: &Rotation) -> f64 {
    (r.matrix().transpose() * r_star.matrix() - Matrix3::identity()).norm()
}
