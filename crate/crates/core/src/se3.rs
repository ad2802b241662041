//! Rigid transforms stored as dense homogeneous 4x4 matrices.

use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const ORTHO_TOL: f64 = 1e-9;

/// A rigid transform `[R t; 0 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[[f64; 4]; 4]", into = "[[f64; 4]; 4]")]
pub struct SE3(Matrix4<f64>);

impl SE3 {
    pub fn identity() -> Self {
        SE3(Matrix4::identity())
    }

    /// Validating constructor; rejects matrices whose rotation block is not
    /// orthonormal with det +1 or whose bottom row is not `(0,0,0,1)`.
    pub fn from_matrix(m: Matrix4<f64>) -> Result<Self> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite SE3 entry".into()));
        }
        if m[(3, 0)] != 0.0 || m[(3, 1)] != 0.0 || m[(3, 2)] != 0.0 || m[(3, 3)] != 1.0 {
            return Err(Error::InvalidInput("SE3 bottom row must be (0,0,0,1)".into()));
        }
        let r = m.fixed_view::<3, 3>(0, 0).into_owned();
        let err = (r.transpose() * r - Matrix3::identity()).abs().max();
        if err > ORTHO_TOL {
            return Err(Error::InvalidInput(format!(
                "SE3 rotation block not orthonormal (max deviation {err:e})"
            )));
        }
        if r.determinant() <= 0.0 {
            return Err(Error::InvalidInput("SE3 rotation has det <= 0".into()));
        }
        Ok(SE3(m))
    }

    /// Builds from parts without validation. The caller guarantees `r` is a rotation.
    pub fn from_parts_unchecked(r: &Matrix3<f64>, t: &Vector3<f64>) -> Self {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(r);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(t);
        SE3(m)
    }

    pub fn from_parts(r: &Matrix3<f64>, t: &Vector3<f64>) -> Result<Self> {
        SE3::from_matrix(SE3::from_parts_unchecked(r, t).0)
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        SE3::from_parts_unchecked(&Matrix3::identity(), &t)
    }

    pub fn rot_x(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        SE3::from_parts_unchecked(
            &Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c),
            &Vector3::zeros(),
        )
    }

    pub fn rot_y(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        SE3::from_parts_unchecked(
            &Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c),
            &Vector3::zeros(),
        )
    }

    pub fn rot_z(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        SE3::from_parts_unchecked(
            &Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0),
            &Vector3::zeros(),
        )
    }

    pub fn matrix(&self) -> &Matrix4<f64> {
        &self.0
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        self.0.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.0.fixed_view::<3, 1>(0, 3).into_owned()
    }

    /// Matrix product `self * other`.
    pub fn compose(&self, other: &SE3) -> SE3 {
        SE3(self.0 * other.0)
    }

    /// `R p + t`.
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation() * p + self.translation()
    }

    pub fn inverse(&self) -> SE3 {
        let rt = self.rotation().transpose();
        let t = -(rt * self.translation());
        SE3::from_parts_unchecked(&rt, &t)
    }
}

impl Default for SE3 {
    fn default() -> Self {
        SE3::identity()
    }
}

impl std::ops::Mul for SE3 {
    type Output = SE3;
    fn mul(self, rhs: SE3) -> SE3 {
        self.compose(&rhs)
    }
}

impl TryFrom<[[f64; 4]; 4]> for SE3 {
    type Error = Error;
    fn try_from(rows: [[f64; 4]; 4]) -> Result<Self> {
        let m = Matrix4::from_fn(|i, j| rows[i][j]);
        SE3::from_matrix(m)
    }
}

impl From<SE3> for [[f64; 4]; 4] {
    fn from(t: SE3) -> Self {
        let mut rows = [[0.0; 4]; 4];
        for (i, row) in rows.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = t.0[(i, j)];
            }
        }
        rows
    }
}

/// Free-function form of [`SE3::compose`].
pub fn se3_compose(a: &SE3, b: &SE3) -> SE3 {
    a.compose(b)
}

/// Free-function form of [`SE3::apply`].
pub fn se3_apply(t: &SE3, p: &Vector3<f64>) -> Vector3<f64> {
    t.apply(p)
}

/// Skew-symmetric cross-product matrix `[v]x`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}
