//! Robot-chain forward kinematics (modified DH), articulated skeleton
//! transforms and linear blend skinning of Gaussians.

use nalgebra::{Matrix3, Matrix4, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{softmax, GaussianSphere, JointSpec, JointType, Scene};
use crate::se3::{skew, SE3};

/// Modified DH parameters of one link: twist `beta`, length `a`, offset `d`
/// and joint angle `theta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MdhParams {
    pub beta: f64,
    pub a: f64,
    pub d: f64,
    pub theta: f64,
}

impl MdhParams {
    pub fn new(beta: f64, a: f64, d: f64, theta: f64) -> Self {
        MdhParams { beta, a, d, theta }
    }

    fn is_finite(&self) -> bool {
        self.beta.is_finite() && self.a.is_finite() && self.d.is_finite() && self.theta.is_finite()
    }
}

/// How a pose value enters the link parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkKind {
    /// Pose value adds to `theta`.
    Revolute,
    /// Pose value adds to `d`.
    Prismatic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotLink {
    #[serde(flatten)]
    pub params: MdhParams,
    pub kind: LinkKind,
    pub gaussian_indices: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RobotModel {
    pub links: Vec<RobotLink>,
}

impl RobotModel {
    /// Checks that the link index lists partition `scene`'s gaussians.
    pub fn validate_for(&self, scene: &Scene) -> Result<()> {
        let mut owner = vec![usize::MAX; scene.len()];
        for (l, link) in self.links.iter().enumerate() {
            if !link.params.is_finite() {
                return Err(Error::Model(format!("link {l} has non-finite parameters")));
            }
            for &i in &link.gaussian_indices {
                let slot = owner
                    .get_mut(i)
                    .ok_or_else(|| Error::Model(format!("link {l} references gaussian {i} out of range")))?;
                if *slot != usize::MAX {
                    return Err(Error::Model(format!("gaussian {i} assigned to links {} and {l}", *slot)));
                }
                *slot = l;
            }
        }
        if let Some(i) = owner.iter().position(|&o| o == usize::MAX) {
            return Err(Error::Model(format!("gaussian {i} belongs to no link")));
        }
        Ok(())
    }
}

/// Articulation values, radians for revolute and meters for prismatic joints.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Pose(pub Vec<f64>);

impl Pose {
    pub fn zeros(k: usize) -> Self {
        Pose(vec![0.0; k])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    fn check(&self, expected: usize) -> Result<()> {
        if self.0.len() != expected {
            return Err(Error::Dimension(format!(
                "pose has {} values, expected {expected}",
                self.0.len()
            )));
        }
        if self.0.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite pose value".into()));
        }
        Ok(())
    }
}

/// `[B_0, B_1, .., B_K]`; `B_0` is always the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct BoneTransforms(Vec<SE3>);

impl BoneTransforms {
    pub fn transforms(&self) -> &[SE3] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Builds from per-joint transforms, prepending the identity base bone.
    pub fn from_joint_transforms(joints: impl IntoIterator<Item = SE3>) -> Self {
        BoneTransforms(std::iter::once(SE3::identity()).chain(joints).collect())
    }
}

pub fn mdh_link_transform(p: &MdhParams) -> SE3 {
    let (st, ct) = p.theta.sin_cos();
    let (sb, cb) = p.beta.sin_cos();
    let r = Matrix3::new(ct, -st * cb, st * sb, st, ct * cb, -ct * sb, 0.0, sb, cb);
    let t = Vector3::new(p.a * ct, p.a * st, p.d);
    SE3::from_parts_unchecked(&r, &t)
}

/// Frames `T_0 .. T_n` of an n-link chain, `T_j = A_0 A_1 .. A_{j-1}`.
pub fn forward_kinematics(model: &RobotModel, pose: &Pose) -> Result<Vec<SE3>> {
    pose.check(model.links.len())?;
    let mut frames = Vec::with_capacity(model.links.len() + 1);
    let mut acc = SE3::identity();
    frames.push(acc);
    for (link, &q) in model.links.iter().zip(&pose.0) {
        let mut p = link.params;
        match link.kind {
            LinkKind::Revolute => p.theta += q,
            LinkKind::Prismatic => p.d += q,
        }
        acc = acc * mdh_link_transform(&p);
        frames.push(acc);
    }
    Ok(frames)
}

/// Rigidly moves each link's gaussians by the frame after that link's joint.
pub fn pose_robot(model: &RobotModel, robot_scene: &Scene, pose: &Pose) -> Result<Scene> {
    model.validate_for(robot_scene)?;
    let frames = forward_kinematics(model, pose)?;
    let mut out = robot_scene.clone();
    for (l, link) in model.links.iter().enumerate() {
        let t = &frames[l + 1];
        let rq = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(t.rotation()));
        for &i in &link.gaussian_indices {
            let g = &mut out.gaussians[i];
            g.mean = t.apply(&g.mean);
            g.rotation = UnitQuaternion::new_normalize((rq * g.rotation).into_inner());
        }
    }
    Ok(out)
}

/// Rodrigues rotation matrix for a unit axis.
pub(crate) fn rodrigues(axis: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::identity() * c + skew(axis) * s + axis * axis.transpose() * (1.0 - c)
}

/// Bone transform for a joint whose axis may be off unit length; the axis is
/// normalized first.
pub(crate) fn joint_transform(axis: &Vector3<f64>, origin: &Vector3<f64>, kind: JointType, value: f64) -> SE3 {
    let u = axis.normalize();
    match kind {
        JointType::Revolute => {
            let r = rodrigues(&u, value);
            SE3::from_parts_unchecked(&r, &(origin - r * origin))
        }
        JointType::Prismatic => SE3::from_translation(u * value),
    }
}

fn check_axis(joint: &JointSpec) -> Result<()> {
    if !joint.is_unit() {
        return Err(Error::InvalidInput(format!(
            "joint axis norm {} is not unit",
            joint.axis.norm()
        )));
    }
    Ok(())
}

/// Rotation by `angle` about the line through `joint.origin` along `joint.axis`.
pub fn revolute_transform(joint: &JointSpec, angle: f64) -> Result<SE3> {
    if joint.joint_type != JointType::Revolute {
        return Err(Error::JointType("revolute_transform called on a prismatic joint".into()));
    }
    check_axis(joint)?;
    // translate(+q) * rot * translate(-q), collapsed to [R | q - R q].
    Ok(joint_transform(&joint.axis, &joint.origin, JointType::Revolute, angle))
}

pub fn prismatic_transform(joint: &JointSpec, displacement: f64) -> Result<SE3> {
    if joint.joint_type != JointType::Prismatic {
        return Err(Error::JointType("prismatic_transform called on a revolute joint".into()));
    }
    check_axis(joint)?;
    Ok(SE3::from_translation(joint.axis * displacement))
}

pub fn skeleton_transforms(joints: &[JointSpec], pose: &Pose) -> Result<BoneTransforms> {
    pose.check(joints.len())?;
    let bones = joints
        .iter()
        .zip(&pose.0)
        .map(|(j, &v)| match j.joint_type {
            JointType::Revolute => revolute_transform(j, v),
            JointType::Prismatic => prismatic_transform(j, v),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BoneTransforms::from_joint_transforms(bones))
}

/// Weighted sum `sum_j w_j B_j` of bone matrices.
pub(crate) fn blend(weights: &[f64], bones: &[SE3]) -> Matrix4<f64> {
    weights
        .iter()
        .zip(bones)
        .fold(Matrix4::zeros(), |acc, (w, b)| acc + b.matrix() * *w)
}

const BLEND_DET_MIN: f64 = 1e-12;

/// Rotation factor `P` and symmetric stretch `H` of `a = P H`, for `det(a) > 0`.
pub(crate) fn polar_decompose(a: &Matrix3<f64>) -> Result<(Matrix3<f64>, Matrix3<f64>)> {
    let det = a.determinant();
    if det.is_nan() || det <= BLEND_DET_MIN {
        return Err(Error::DegenerateBlend { det });
    }
    // Newton iteration X <- (X + X^-T) / 2 converges quadratically to P.
    let mut x = *a;
    for _ in 0..60 {
        let inv_t = x
            .try_inverse()
            .ok_or(Error::DegenerateBlend { det })?
            .transpose();
        let next = (x + inv_t) * 0.5;
        let delta = (next - x).abs().max();
        x = next;
        if delta < 1e-15 {
            break;
        }
    }
    let h = x.transpose() * a;
    let h = (h + h.transpose()) * 0.5;
    Ok((x, h))
}

pub fn lbs_deform(g: &GaussianSphere, bones: &BoneTransforms) -> Result<GaussianSphere> {
    if g.skin_logits.len() != bones.len() {
        return Err(Error::Dimension(format!(
            "{} skin weights for {} bones",
            g.skin_logits.len(),
            bones.len()
        )));
    }
    let w = softmax(&g.skin_logits);
    let m = blend(&w, bones.transforms());
    let a = m.fixed_view::<3, 3>(0, 0).into_owned();
    let (p, _) = polar_decompose(&a)?;
    let mean = a * g.mean + m.fixed_view::<3, 1>(0, 3);
    let rq = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(p));
    let mut out = g.clone();
    out.mean = mean;
    out.rotation = UnitQuaternion::new_normalize((rq * g.rotation).into_inner());
    Ok(out)
}

pub fn deform_scene(scene: &Scene, joints: &[JointSpec], pose: &Pose) -> Result<Scene> {
    if scene.part_count != joints.len() {
        return Err(Error::Dimension(format!(
            "scene has {} parts but {} joints were given",
            scene.part_count,
            joints.len()
        )));
    }
    let bones = skeleton_transforms(joints, pose)?;
    let gaussians = scene
        .gaussians
        .iter()
        .map(|g| lbs_deform(g, &bones))
        .collect::<Result<Vec<_>>>()?;
    Ok(Scene {
        part_count: scene.part_count,
        gaussians,
    })
}

/// Same as [`deform_scene`] but tolerates non-unit joint axes by normalizing
/// them. Used by the optimizer, whose axes drift between renormalizations.
pub(crate) fn deform_scene_raw(scene: &Scene, joints: &[JointSpec], pose: &Pose) -> Result<Scene> {
    if scene.part_count != joints.len() {
        return Err(Error::Dimension(format!(
            "scene has {} parts but {} joints were given",
            scene.part_count,
            joints.len()
        )));
    }
    pose.check(joints.len())?;
    let bones = BoneTransforms::from_joint_transforms(
        joints
            .iter()
            .zip(&pose.0)
            .map(|(j, &v)| joint_transform(&j.axis, &j.origin, j.joint_type, v)),
    );
    let gaussians = scene
        .gaussians
        .iter()
        .map(|g| lbs_deform(g, &bones))
        .collect::<Result<Vec<_>>>()?;
    Ok(Scene {
        part_count: scene.part_count,
        gaussians,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2, PI};

    fn gaussian(mean: Vector3<f64>, logits: Vec<f64>) -> GaussianSphere {
        GaussianSphere::new(
            mean,
            UnitQuaternion::from_euler_angles(0.1, 0.2, 0.3),
            Vector3::new(0.01, 0.02, 0.03),
            0.8,
            Vector3::new(0.5, 0.5, 0.5),
            logits,
        )
        .unwrap()
    }

    #[test]
    fn mdh_examples() {
        assert_eq!(*mdh_link_transform(&MdhParams::new(0.0, 0.0, 0.0, 0.0)).matrix(), Matrix4::identity());
        let t = mdh_link_transform(&MdhParams::new(0.0, 0.0, 2.0, 0.0));
        assert_eq!(*t.matrix(), *SE3::from_translation(Vector3::new(0.0, 0.0, 2.0)).matrix());
        let t = mdh_link_transform(&MdhParams::new(0.0, 1.0, 0.0, FRAC_PI_2));
        assert_relative_eq!(t.translation(), Vector3::new(0.0, 1.0, 0.0), epsilon = 1e-15);
        assert_relative_eq!(t.rotation(), SE3::rot_z(FRAC_PI_2).rotation(), epsilon = 1e-15);
    }

    #[test]
    fn fk_simple_chains() {
        let empty = RobotModel::default();
        assert_eq!(forward_kinematics(&empty, &Pose::zeros(0)).unwrap(), vec![SE3::identity()]);

        let one = RobotModel {
            links: vec![RobotLink {
                params: MdhParams::new(0.0, 0.0, 1.0, 0.0),
                kind: LinkKind::Revolute,
                gaussian_indices: vec![],
            }],
        };
        let f = forward_kinematics(&one, &Pose::zeros(1)).unwrap();
        assert_eq!(f[1].translation(), Vector3::new(0.0, 0.0, 1.0));
        assert!(matches!(forward_kinematics(&one, &Pose::zeros(2)), Err(Error::Dimension(_))));
    }

    #[test]
    fn fk_two_links_matches_manual_product() {
        let link = RobotLink {
            params: MdhParams::new(0.0, 1.0, 0.0, 0.0),
            kind: LinkKind::Revolute,
            gaussian_indices: vec![],
        };
        let model = RobotModel {
            links: vec![link.clone(), link],
        };
        let f = forward_kinematics(&model, &Pose(vec![FRAC_PI_2, 0.0])).unwrap();
        // A_0 = rot_z(pi/2) with translation (0,1,0); A_1 = translation (1,0,0).
        let a0 = Matrix4::new(0.0, -1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        let a1 = Matrix4::new(1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert_relative_eq!(*f[2].matrix(), a0 * a1, epsilon = 1e-15);
        assert_relative_eq!(f[2].apply(&Vector3::zeros()), Vector3::new(0.0, 2.0, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn pose_robot_translates_link() {
        let scene = Scene::new(0, vec![gaussian(Vector3::new(0.1, 0.2, 0.3), vec![0.0])]).unwrap();
        let model = RobotModel {
            links: vec![RobotLink {
                params: MdhParams::new(0.0, 0.0, 1.0, 0.0),
                kind: LinkKind::Prismatic,
                gaussian_indices: vec![0],
            }],
        };
        let posed = pose_robot(&model, &scene, &Pose::zeros(1)).unwrap();
        assert_relative_eq!(posed.gaussians[0].mean, Vector3::new(0.1, 0.2, 1.3), epsilon = 1e-15);

        let identity = RobotModel {
            links: vec![RobotLink {
                params: MdhParams::new(0.0, 0.0, 0.0, 0.0),
                kind: LinkKind::Revolute,
                gaussian_indices: vec![0],
            }],
        };
        assert_eq!(pose_robot(&identity, &scene, &Pose::zeros(1)).unwrap(), scene);

        let bad = RobotModel {
            links: vec![RobotLink {
                params: MdhParams::new(0.0, 0.0, 0.0, 0.0),
                kind: LinkKind::Revolute,
                gaussian_indices: vec![3],
            }],
        };
        assert!(matches!(pose_robot(&bad, &scene, &Pose::zeros(1)), Err(Error::Model(_))));
    }

    #[test]
    fn revolute_examples() {
        let j = JointSpec::revolute(Vector3::z(), Vector3::zeros()).unwrap();
        assert_relative_eq!(*revolute_transform(&j, 0.0).unwrap().matrix(), Matrix4::identity());
        let p = revolute_transform(&j, FRAC_PI_2).unwrap().apply(&Vector3::x());
        assert_relative_eq!(p, Vector3::y(), epsilon = 1e-15);

        let j = JointSpec::revolute(Vector3::z(), Vector3::new(1.0, 0.0, 0.0)).unwrap();
        let p = revolute_transform(&j, PI).unwrap().apply(&Vector3::new(2.0, 0.0, 0.0));
        assert_relative_eq!(p, Vector3::zeros(), epsilon = 1e-15);

        let pj = JointSpec::prismatic(Vector3::x(), Vector3::zeros()).unwrap();
        assert!(matches!(revolute_transform(&pj, 0.1), Err(Error::JointType(_))));
    }

    #[test]
    fn prismatic_examples() {
        let j = JointSpec::prismatic(Vector3::x(), Vector3::zeros()).unwrap();
        assert_eq!(*prismatic_transform(&j, 0.0).unwrap().matrix(), Matrix4::identity());
        assert_eq!(prismatic_transform(&j, 0.3).unwrap().translation(), Vector3::new(0.3, 0.0, 0.0));
        let j = JointSpec::prismatic(Vector3::new(0.0, FRAC_1_SQRT_2, FRAC_1_SQRT_2), Vector3::zeros()).unwrap();
        let t = prismatic_transform(&j, 2f64.sqrt()).unwrap();
        assert_relative_eq!(t.translation(), Vector3::new(0.0, 1.0, 1.0), epsilon = 1e-15);
        let rj = JointSpec::revolute(Vector3::x(), Vector3::zeros()).unwrap();
        assert!(matches!(prismatic_transform(&rj, 0.1), Err(Error::JointType(_))));
    }

    #[test]
    fn skeleton_examples() {
        let b = skeleton_transforms(&[], &Pose::zeros(0)).unwrap();
        assert_eq!(b.transforms(), &[SE3::identity()]);
        let r = JointSpec::revolute(Vector3::z(), Vector3::new(0.3, 0.1, 0.0)).unwrap();
        let b = skeleton_transforms(std::slice::from_ref(&r), &Pose::zeros(1)).unwrap();
        assert_eq!(b.len(), 2);
        assert_relative_eq!(*b.transforms()[1].matrix(), Matrix4::identity());
        let p = JointSpec::prismatic(Vector3::x(), Vector3::zeros()).unwrap();
        let b = skeleton_transforms(&[p], &Pose(vec![0.5])).unwrap();
        assert_eq!(b.transforms()[1].translation(), Vector3::new(0.5, 0.0, 0.0));
        assert!(matches!(skeleton_transforms(&[r], &Pose::zeros(2)), Err(Error::Dimension(_))));
    }

    #[test]
    fn lbs_examples() {
        let g = gaussian(Vector3::new(0.2, -0.1, 0.4), vec![0.0, -1e3]);
        let bones = BoneTransforms::from_joint_transforms([SE3::from_translation(Vector3::new(1.0, 0.0, 0.0))]);
        let out = lbs_deform(&g, &bones).unwrap();
        assert_eq!(out.mean, g.mean);
        assert_relative_eq!(out.rotation, g.rotation, epsilon = 1e-15);

        let g1 = gaussian(g.mean, vec![-1e3, 0.0]);
        let out = lbs_deform(&g1, &bones).unwrap();
        assert_relative_eq!(out.mean, g.mean + Vector3::x(), epsilon = 1e-15);
        assert_relative_eq!(out.rotation, g.rotation, epsilon = 1e-15);

        let half = gaussian(g.mean, vec![0.0, 0.0]);
        let out = lbs_deform(&half, &bones).unwrap();
        assert_relative_eq!(out.mean, g.mean + Vector3::new(0.5, 0.0, 0.0), epsilon = 1e-15);
        assert_eq!(out.scale, g.scale);
        assert_eq!(out.opacity, g.opacity);
        assert_eq!(out.color, g.color);
    }

    #[test]
    fn lbs_degenerate_blend() {
        // Half identity, half a half-turn about z collapses the x/y plane.
        let g = gaussian(Vector3::zeros(), vec![0.0, 0.0]);
        let bones = BoneTransforms::from_joint_transforms([SE3::rot_z(PI)]);
        assert!(matches!(lbs_deform(&g, &bones), Err(Error::DegenerateBlend { .. })));
        let short = BoneTransforms::from_joint_transforms([]);
        assert!(matches!(lbs_deform(&g, &short), Err(Error::Dimension(_))));
    }

    #[test]
    fn deform_scene_examples() {
        let joint = JointSpec::revolute(Vector3::z(), Vector3::new(0.5, 0.0, 0.0)).unwrap();
        let base = gaussian(Vector3::new(0.0, 0.0, 0.1), vec![0.0, -1e3]);
        let part = gaussian(Vector3::new(1.0, 0.0, 0.2), vec![-1e3, 0.0]);
        let scene = Scene::new(1, vec![base.clone(), part.clone()]).unwrap();

        let zero = deform_scene(&scene, std::slice::from_ref(&joint), &Pose::zeros(1)).unwrap();
        for (a, b) in zero.gaussians.iter().zip(&scene.gaussians) {
            assert_relative_eq!(a.mean, b.mean, epsilon = 1e-12);
            assert_relative_eq!(a.rotation, b.rotation, epsilon = 1e-12);
        }

        let moved = deform_scene(&scene, std::slice::from_ref(&joint), &Pose(vec![FRAC_PI_2])).unwrap();
        let direct = revolute_transform(&joint, FRAC_PI_2).unwrap();
        assert_eq!(moved.gaussians[0].mean, base.mean);
        assert_relative_eq!(moved.gaussians[1].mean, direct.apply(&part.mean), epsilon = 1e-12);

        let back = deform_scene(&moved, std::slice::from_ref(&joint), &Pose(vec![-FRAC_PI_2])).unwrap();
        assert_relative_eq!(back.gaussians[1].mean, part.mean, epsilon = 1e-9);

        assert!(matches!(deform_scene(&scene, &[], &Pose::zeros(0)), Err(Error::Dimension(_))));
    }

    fn arb_joint() -> impl Strategy<Value = JointSpec> {
        (prop::array::uniform3(-1.0f64..1.0), prop::array::uniform3(-1.0f64..1.0))
            .prop_filter("axis non-zero", |(a, _)| Vector3::from(*a).norm() > 0.1)
            .prop_map(|(a, q)| JointSpec::revolute(Vector3::from(a), Vector3::from(q)).unwrap())
    }

    proptest! {
        #[test]
        fn revolute_angles_add(j in arb_joint(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let lhs = revolute_transform(&j, a).unwrap() * revolute_transform(&j, b).unwrap();
            let rhs = revolute_transform(&j, a + b).unwrap();
            prop_assert!((lhs.matrix() - rhs.matrix()).abs().max() < 1e-9);
        }

        #[test]
        fn revolute_fixes_axis_line(j in arb_joint(), a in -6.0f64..6.0, t in -5.0f64..5.0) {
            let p = j.origin + j.axis * t;
            let q = revolute_transform(&j, a).unwrap().apply(&p);
            prop_assert!((p - q).norm() < 1e-9);
        }

        #[test]
        fn one_hot_lbs_is_rigid(j in arb_joint(), a in -3.0f64..3.0, m in prop::array::uniform3(-1.0f64..1.0)) {
            let g = gaussian(Vector3::from(m), vec![-1e3, 0.0]);
            let bone = revolute_transform(&j, a).unwrap();
            let out = lbs_deform(&g, &BoneTransforms::from_joint_transforms([bone])).unwrap();
            prop_assert!((out.mean - bone.apply(&g.mean)).norm() < 1e-12);
            let expected = bone.rotation() * g.rotation.to_rotation_matrix().into_inner();
            let got = out.rotation.to_rotation_matrix().into_inner();
            prop_assert!((expected - got).abs().max() < 1e-12);
        }

        #[test]
        fn zero_pose_is_identity(
            j in arb_joint(),
            logits in prop::collection::vec(prop::array::uniform2(-4.0f64..4.0), 1..8),
        ) {
            let gs: Vec<_> = logits
                .iter()
                .enumerate()
                .map(|(i, l)| gaussian(Vector3::new(i as f64 * 0.1, 0.2, -0.3), l.to_vec()))
                .collect();
            let scene = Scene::new(1, gs).unwrap();
            let out = deform_scene(&scene, std::slice::from_ref(&j), &Pose::zeros(1)).unwrap();
            for (a, b) in out.gaussians.iter().zip(&scene.gaussians) {
                prop_assert!((a.mean - b.mean).norm() < 1e-12);
                prop_assert!((a.rotation.coords - b.rotation.coords).norm() < 1e-12);
            }
        }
    }
}
