//! Joint estimation error metrics.

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::scene::{JointSpec, JointType};

const UNIT_TOL: f64 = 1e-6;

/// Angle in degrees between two axis directions, ignoring sign. Range `[0, 90]`.
pub fn axis_error(u_est: &Vector3<f64>, u_gt: &Vector3<f64>) -> Result<f64> {
    for u in [u_est, u_gt] {
        if (u.norm() - 1.0).abs() > UNIT_TOL {
            return Err(Error::InvalidInput(format!("axis norm {} is not unit", u.norm())));
        }
    }
    Ok(axis_angle_deg(u_est, u_gt))
}

/// Sign-agnostic angle between two non-zero directions, in degrees.
pub(crate) fn axis_angle_deg(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    let a = a.normalize();
    let b = b.normalize();
    // atan2 keeps precision near 0 and 90 degrees where acos does not.
    let c = a.dot(&b).abs();
    let s = a.cross(&b).norm();
    s.atan2(c).to_degrees()
}

/// Closest distance between two lines, each given by a point and a direction.
pub fn line_distance(p1: &Vector3<f64>, u1: &Vector3<f64>, p2: &Vector3<f64>, u2: &Vector3<f64>) -> f64 {
    let a = u1.normalize();
    let b = u2.normalize();
    let d = p2 - p1;
    let n = a.cross(&b);
    let nn = n.norm();
    if nn < 1e-9 {
        (d - a * a.dot(&d)).norm()
    } else {
        (d.dot(&n) / nn).abs()
    }
}

/// Distance in centimeters between the estimated and true joint lines.
/// `None` for prismatic joints, whose origin is not defined.
pub fn origin_error(est: &JointSpec, q_gt: &Vector3<f64>, u_gt: &Vector3<f64>) -> Option<f64> {
    match est.joint_type {
        JointType::Prismatic => None,
        JointType::Revolute => Some(100.0 * line_distance(&est.origin, &est.axis, q_gt, u_gt)),
    }
}

/// Per-joint `(AE degrees, OE centimeters)` of `est` against `gt`.
pub fn joint_errors(est: &[JointSpec], gt: &[JointSpec]) -> Vec<(f64, Option<f64>)> {
    est.iter()
        .zip(gt)
        .map(|(e, g)| (axis_angle_deg(&e.axis, &g.axis), origin_error(e, &g.origin, &g.axis)))
        .collect()
}

/// Median of a non-empty slice (mean of the middle pair for even lengths).
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
