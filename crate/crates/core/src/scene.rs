//! Scene-level value types: Gaussians, joints, cameras and images.

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::se3::SE3;

const UNIT_TOL: f64 = 1e-9;

/// One splat: position, orientation, extent, opacity, flat color and
/// unnormalized per-bone skinning logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GaussianRecord", into = "GaussianRecord")]
pub struct GaussianSphere {
    pub mean: Vector3<f64>,
    pub rotation: UnitQuaternion<f64>,
    pub scale: Vector3<f64>,
    pub opacity: f64,
    pub color: Vector3<f64>,
    pub skin_logits: Vec<f64>,
}

/// JSON layout of a Gaussian; rotation as `[w, x, y, z]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct GaussianRecord {
    mean: [f64; 3],
    rotation: [f64; 4],
    scale: [f64; 3],
    opacity: f64,
    color: [f64; 3],
    skin_logits: Vec<f64>,
}

impl TryFrom<GaussianRecord> for GaussianSphere {
    type Error = Error;
    fn try_from(r: GaussianRecord) -> Result<Self> {
        let [w, x, y, z] = r.rotation;
        let q = Quaternion::new(w, x, y, z);
        let n = q.norm();
        // Decimal round trips may leave the quaternion a few ulps off unit.
        if !n.is_finite() || (n - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidInput(format!("rotation quaternion norm {n} is not unit")));
        }
        GaussianSphere::new(
            Vector3::from(r.mean),
            UnitQuaternion::from_quaternion(q),
            Vector3::from(r.scale),
            r.opacity,
            Vector3::from(r.color),
            r.skin_logits,
        )
    }
}

impl From<GaussianSphere> for GaussianRecord {
    fn from(g: GaussianSphere) -> Self {
        let q = g.rotation.quaternion();
        GaussianRecord {
            mean: g.mean.into(),
            rotation: [q.w, q.i, q.j, q.k],
            scale: g.scale.into(),
            opacity: g.opacity,
            color: g.color.into(),
            skin_logits: g.skin_logits,
        }
    }
}

impl GaussianSphere {
    pub fn new(
        mean: Vector3<f64>,
        rotation: UnitQuaternion<f64>,
        scale: Vector3<f64>,
        opacity: f64,
        color: Vector3<f64>,
        skin_logits: Vec<f64>,
    ) -> Result<Self> {
        let g = GaussianSphere {
            mean,
            rotation,
            scale,
            opacity,
            color,
            skin_logits,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self.mean.iter().all(|v| v.is_finite())
            && self.scale.iter().all(|v| v.is_finite())
            && self.color.iter().all(|v| v.is_finite())
            && self.opacity.is_finite()
            && self.skin_logits.iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidInput("non-finite gaussian attribute".into()));
        }
        if (self.rotation.quaternion().norm() - 1.0).abs() > UNIT_TOL {
            return Err(Error::InvalidInput("gaussian rotation not unit-norm".into()));
        }
        if self.scale.iter().any(|&s| s <= 0.0) {
            return Err(Error::InvalidInput("gaussian scale must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.opacity) {
            return Err(Error::InvalidInput(format!("opacity {} outside [0,1]", self.opacity)));
        }
        if self.skin_logits.is_empty() {
            return Err(Error::InvalidInput("skin_logits must have at least one entry".into()));
        }
        Ok(())
    }

    /// Normalized skinning weights.
    pub fn skin_weights(&self) -> Vec<f64> {
        softmax(&self.skin_logits)
    }

    pub fn covariance(&self) -> Matrix3<f64> {
        covariance_matrix(&self.rotation.to_rotation_matrix().into_inner(), &self.scale)
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `R diag(s) diag(s)^T R^T`.
pub fn covariance_from_rs(rotation: &UnitQuaternion<f64>, scale: &Vector3<f64>) -> Result<Matrix3<f64>> {
    let q = rotation.quaternion();
    if !q.coords.iter().chain(scale.iter()).all(|v| v.is_finite()) {
        return Err(Error::InvalidInput("non-finite rotation or scale".into()));
    }
    if scale.iter().any(|&s| s <= 0.0) {
        return Err(Error::InvalidInput("scale must be positive".into()));
    }
    Ok(covariance_matrix(&rotation.to_rotation_matrix().into_inner(), scale))
}

pub(crate) fn covariance_matrix(r: &Matrix3<f64>, scale: &Vector3<f64>) -> Matrix3<f64> {
    let s2 = Matrix3::from_diagonal(&scale.component_mul(scale));
    r * s2 * r.transpose()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub part_count: usize,
    pub gaussians: Vec<GaussianSphere>,
}

impl Scene {
    pub fn new(part_count: usize, gaussians: Vec<GaussianSphere>) -> Result<Self> {
        let s = Scene {
            part_count,
            gaussians,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, g) in self.gaussians.iter().enumerate() {
            g.validate().map_err(|e| Error::InvalidInput(format!("gaussian {i}: {e}")))?;
            if g.skin_logits.len() != self.part_count + 1 {
                return Err(Error::Dimension(format!(
                    "gaussian {i} has {} skin logits, expected {}",
                    g.skin_logits.len(),
                    self.part_count + 1
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    /// Index of the most probable bone per gaussian.
    pub fn dominant_parts(&self) -> Vec<usize> {
        self.gaussians
            .iter()
            .map(|g| {
                g.skin_logits
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (i, &l)| if l > best.1 { (i, l) } else { best })
                    .0
            })
            .collect()
    }

    /// Axis-aligned bounds of the gaussian means.
    pub fn bounds(&self) -> Option<(Vector3<f64>, Vector3<f64>)> {
        let first = self.gaussians.first()?.mean;
        Some(self.gaussians.iter().fold((first, first), |(lo, hi), g| {
            (lo.inf(&g.mean), hi.sup(&g.mean))
        }))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JointType {
    Revolute,
    Prismatic,
}

/// A one-DOF articulated bone: direction `axis`, a point `origin` on the
/// joint line and the joint type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointSpec {
    pub axis: Vector3<f64>,
    pub origin: Vector3<f64>,
    pub joint_type: JointType,
}

impl JointSpec {
    /// Normalizes `axis`; fails on a zero or non-finite axis.
    pub fn new(axis: Vector3<f64>, origin: Vector3<f64>, joint_type: JointType) -> Result<Self> {
        let n = axis.norm();
        if !n.is_finite() || n < 1e-12 || origin.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("joint axis must be finite and non-zero".into()));
        }
        Ok(JointSpec {
            axis: axis / n,
            origin,
            joint_type,
        })
    }

    pub fn revolute(axis: Vector3<f64>, origin: Vector3<f64>) -> Result<Self> {
        JointSpec::new(axis, origin, JointType::Revolute)
    }

    pub fn prismatic(axis: Vector3<f64>, origin: Vector3<f64>) -> Result<Self> {
        JointSpec::new(axis, origin, JointType::Prismatic)
    }

    pub fn is_unit(&self) -> bool {
        (self.axis.norm() - 1.0).abs() <= UNIT_TOL
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

/// Pinhole camera. `extrinsics` maps world points into the camera frame
/// (x right, y down, z forward). Pixel `(i, j)` samples image position `(i, j)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub intrinsics: Intrinsics,
    pub extrinsics: SE3,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    pub fn new(intrinsics: Intrinsics, extrinsics: SE3, width: usize, height: usize) -> Result<Self> {
        let c = Camera {
            intrinsics,
            extrinsics,
            width,
            height,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let k = &self.intrinsics;
        if !(k.fx > 0.0 && k.fy > 0.0 && k.cx.is_finite() && k.cy.is_finite()) {
            return Err(Error::InvalidInput("camera focal lengths must be positive".into()));
        }
        SE3::from_matrix(*self.extrinsics.matrix())?;
        Ok(())
    }

    /// Camera at `eye` looking at `target` with `up` as the world up hint and
    /// a horizontal field of view `hfov` (radians). Principal point at the image center.
    pub fn look_at(
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
        hfov: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let forward = target - eye;
        if forward.norm() < 1e-12 {
            return Err(Error::InvalidInput("look_at eye and target coincide".into()));
        }
        let z = forward.normalize();
        let x = z.cross(&up);
        if x.norm() < 1e-9 {
            return Err(Error::InvalidInput("look_at up vector parallel to view direction".into()));
        }
        let x = x.normalize();
        let y = z.cross(&x);
        let r = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        let t = -(r * eye);
        let f = (width as f64 / 2.0) / (hfov / 2.0).tan();
        Camera::new(
            Intrinsics {
                fx: f,
                fy: f,
                cx: (width as f64 - 1.0) / 2.0,
                cy: (height as f64 - 1.0) / 2.0,
            },
            SE3::from_parts(&r, &t)?,
            width,
            height,
        )
    }

    pub fn to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.extrinsics.apply(p)
    }

    pub fn center(&self) -> Vector3<f64> {
        self.extrinsics.inverse().translation()
    }

    /// Unit viewing direction in world coordinates.
    pub fn forward(&self) -> Vector3<f64> {
        self.extrinsics.rotation().row(2).transpose()
    }

    /// Pinhole projection of a world point; `None` when not in front of the camera.
    pub fn project(&self, p: &Vector3<f64>) -> Option<(Vector2<f64>, f64)> {
        let pc = self.to_camera(p);
        if pc.z <= 1e-12 {
            return None;
        }
        let k = &self.intrinsics;
        Some((Vector2::new(k.fx * pc.x / pc.z + k.cx, k.fy * pc.y / pc.z + k.cy), pc.z))
    }

    pub fn contains_pixel(&self, px: &Vector2<f64>) -> bool {
        px.x >= 0.0 && px.y >= 0.0 && px.x <= (self.width - 1) as f64 && px.y <= (self.height - 1) as f64
    }
}

/// RGB-D-alpha float image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<[f64; 3]>,
    pub depth: Vec<f64>,
    pub alpha: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, background: [f64; 3]) -> Self {
        let n = width * height;
        Image {
            width,
            height,
            rgb: vec![background; n],
            depth: vec![0.0; n],
            alpha: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Nearest-pixel depth lookup; `None` outside the image.
    pub fn depth_at(&self, px: &Vector2<f64>) -> Option<f64> {
        let x = px.x.round();
        let y = px.y.round();
        if x < 0.0 || y < 0.0 || x >= self.width as f64 || y >= self.height as f64 {
            return None;
        }
        Some(self.depth[self.index(x as usize, y as usize)])
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if self.rgb.len() != n || self.depth.len() != n || self.alpha.len() != n {
            return Err(Error::Dimension("image channel length mismatch".into()));
        }
        let finite = self.rgb.iter().flatten().chain(&self.depth).chain(&self.alpha).all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidInput("non-finite image value".into()));
        }
        if self.alpha.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(Error::InvalidInput("alpha outside [0,1]".into()));
        }
        Ok(())
    }

    /// Peak signal-to-noise ratio of the RGB channels, in dB.
    pub fn psnr(&self, reference: &Image) -> f64 {
        let n = (self.len() * 3) as f64;
        let mse: f64 = self
            .rgb
            .iter()
            .zip(&reference.rgb)
            .flat_map(|(a, b)| (0..3).map(move |c| (a[c] - b[c]).powi(2)))
            .sum::<f64>()
            / n;
        if mse <= 0.0 {
            f64::INFINITY
        } else {
            -10.0 * mse.log10()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn covariance_identity_and_axis_scaling() {
        let id = UnitQuaternion::identity();
        let c = covariance_from_rs(&id, &Vector3::new(1.0, 1.0, 1.0)).unwrap();
        assert_eq!(c, Matrix3::identity());
        let c = covariance_from_rs(&id, &Vector3::new(2.0, 1.0, 1.0)).unwrap();
        assert_eq!(c, Matrix3::from_diagonal(&Vector3::new(4.0, 1.0, 1.0)));
    }

    #[test]
    fn covariance_rotated_quarter_turn() {
        // R = rot_z(pi/2) swaps the x and y variances.
        let q = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), FRAC_PI_2);
        let c = covariance_from_rs(&q, &Vector3::new(2.0, 1.0, 1.0)).unwrap();
        assert_relative_eq!(c, Matrix3::from_diagonal(&Vector3::new(1.0, 4.0, 1.0)), epsilon = 1e-14);
    }

    #[test]
    fn covariance_rejects_non_finite() {
        let q = UnitQuaternion::identity();
        assert!(covariance_from_rs(&q, &Vector3::new(f64::NAN, 1.0, 1.0)).is_err());
        assert!(covariance_from_rs(&q, &Vector3::new(0.0, 1.0, 1.0)).is_err());
    }

    #[test]
    fn gaussian_json_layout() {
        let g = GaussianSphere::new(
            Vector3::new(1.0, 2.0, 3.0),
            UnitQuaternion::identity(),
            Vector3::new(0.1, 0.2, 0.3),
            0.5,
            Vector3::new(0.2, 0.4, 0.6),
            vec![0.0, 1.0],
        )
        .unwrap();
        let v = serde_json::to_value(&g).unwrap();
        assert_eq!(v["rotation"], serde_json::json!([1.0, 0.0, 0.0, 0.0]));
        let back: GaussianSphere = serde_json::from_value(v).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn scene_checks_logit_length() {
        let g = GaussianSphere::new(
            Vector3::zeros(),
            UnitQuaternion::identity(),
            Vector3::repeat(0.1),
            0.5,
            Vector3::zeros(),
            vec![0.0, 1.0],
        )
        .unwrap();
        assert!(Scene::new(1, vec![g.clone()]).is_ok());
        assert!(matches!(Scene::new(2, vec![g]), Err(Error::Dimension(_))));
    }

    #[test]
    fn look_at_projects_target_to_center() {
        let cam = Camera::look_at(
            Vector3::new(0.0, -2.0, 0.5),
            Vector3::new(0.0, 0.0, 0.5),
            Vector3::z(),
            1.0,
            65,
            65,
        )
        .unwrap();
        let (px, z) = cam.project(&Vector3::new(0.0, 0.0, 0.5)).unwrap();
        assert_relative_eq!(px, Vector2::new(32.0, 32.0), epsilon = 1e-12);
        assert_relative_eq!(z, 2.0, epsilon = 1e-12);
        // World up maps to image up (negative pixel y).
        let (up, _) = cam.project(&Vector3::new(0.0, 0.0, 0.7)).unwrap();
        assert!(up.y < 32.0);
        assert_relative_eq!(cam.center(), Vector3::new(0.0, -2.0, 0.5), epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn covariance_eigenvalues_are_squared_scales(
            q in prop::array::uniform4(-1.0f64..1.0),
            s in prop::array::uniform3(0.01f64..3.0),
        ) {
            let quat = Quaternion::new(q[0], q[1], q[2], q[3]);
            prop_assume!(quat.norm() > 1e-3);
            let rot = UnitQuaternion::from_quaternion(quat);
            let scale = Vector3::from(s);
            let c = covariance_from_rs(&rot, &scale).unwrap();
            let mut eig: Vec<f64> = c.symmetric_eigenvalues().iter().cloned().collect();
            eig.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mut sq: Vec<f64> = s.iter().map(|v| v * v).collect();
            sq.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for (a, b) in eig.iter().zip(&sq) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn softmax_shift_invariant(
            logits in prop::collection::vec(-20.0f64..20.0, 1..6),
            shift in -50.0f64..50.0,
        ) {
            let a = softmax(&logits);
            let shifted: Vec<f64> = logits.iter().map(|l| l + shift).collect();
            let b = softmax(&shifted);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-12);
            }
            prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(a.iter().all(|&w| w >= 0.0));
        }
    }
}
