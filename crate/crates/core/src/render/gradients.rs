//! Loss gradients with respect to joint parameters, per-frame articulation
//! values and skinning logits, by hand-written reverse accumulation through
//! rasterization, projection, skinning and the bone transforms.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;

use super::backward::{render_backward_raster, GaussianGrad};
use super::{check_camera, rasterize, Raster};
use crate::error::{Error, Result};
use crate::kinematics::{blend, deform_scene_raw, joint_transform, polar_decompose, rodrigues, Pose};
use crate::loss::{check_observation_shapes, entropy, image_loss, regularizer, LossConfig};
use crate::scene::{softmax, Camera, GaussianSphere, Image, JointSpec, JointType, Scene};
use crate::se3::{skew, SE3};

/// Loss value and its gradients. `theta[t]` holds one entry per joint for
/// frame `t`; `skin_logits[i]` one entry per bone for Gaussian `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGradients {
    pub loss: f64,
    pub axis: Vec<Vector3<f64>>,
    pub origin: Vec<Vector3<f64>>,
    pub theta: Vec<Vec<f64>>,
    pub skin_logits: Vec<Vec<f64>>,
}

/// Gradient of one bone's rotation block and translation.
#[derive(Clone, Copy)]
struct BoneGrad {
    rot: Matrix3<f64>,
    trans: Vector3<f64>,
}

fn vee_asym(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)])
}

/// Pulls the gradient of the deformed mean and covariance back to the
/// blended bone matrix and the skinning logits of one Gaussian.
fn skinning_backward(
    g: &GaussianSphere,
    deformed: &GaussianSphere,
    bones: &[SE3],
    grad: &GaussianGrad,
    bone_grads: &mut [BoneGrad],
) -> Result<Vec<f64>> {
    let w = softmax(&g.skin_logits);
    let m = blend(&w, bones);
    let a = m.fixed_view::<3, 3>(0, 0).into_owned();
    let (p, h) = polar_decompose(&a)?;

    let r_def = deformed.rotation.to_rotation_matrix().into_inner();
    let r0 = g.rotation.to_rotation_matrix().into_inner();
    let s2 = Matrix3::from_diagonal(&g.scale.component_mul(&g.scale));
    let g_cov = (grad.cov + grad.cov.transpose()) * 0.5;
    let g_rdef = g_cov * r_def * s2 * 2.0;
    let g_p = g_rdef * r0.transpose();

    // Polar-factor adjoint: dP = P [omega]x with (tr(H) I - H) omega = vee(P^T dA - dA^T P).
    let k = Matrix3::identity() * h.trace() - h;
    let y = k
        .try_inverse()
        .ok_or(Error::DegenerateBlend { det: a.determinant() })?
        * vee_asym(&(p.transpose() * g_p));
    let mut g_a = p * skew(&y);
    g_a += grad.mean * g.mean.transpose();
    let g_b = grad.mean;

    let mut g_w = vec![0.0; w.len()];
    for (j, bone) in bones.iter().enumerate() {
        g_w[j] = g_a.dot(&bone.rotation()) + g_b.dot(&bone.translation());
        bone_grads[j].rot += g_a * w[j];
        bone_grads[j].trans += g_b * w[j];
    }
    let mean_gw: f64 = w.iter().zip(&g_w).map(|(a, b)| a * b).sum();
    Ok(w.iter().zip(&g_w).map(|(wk, gk)| wk * (gk - mean_gw)).collect())
}

/// Per-joint gradients from one bone: (axis, origin, value).
fn bone_backward(joint: &JointSpec, value: f64, bg: &BoneGrad) -> (Vector3<f64>, Vector3<f64>, f64) {
    let norm = joint.axis.norm();
    let u = joint.axis / norm;
    let (g_u_hat, g_origin, g_value) = match joint.joint_type {
        JointType::Revolute => {
            let q = joint.origin;
            let r = rodrigues(&u, value);
            // t = q - R q
            let g = bg.rot - bg.trans * q.transpose();
            let g_origin = bg.trans - r.transpose() * bg.trans;
            let (s, c) = value.sin_cos();
            let d_theta = Matrix3::identity() * -s + skew(&u) * c + u * u.transpose() * s;
            let mut g_u = Vector3::zeros();
            for kk in 0..3 {
                let e = Vector3::ith(kk, 1.0);
                let d_u = skew(&e) * s + (e * u.transpose() + u * e.transpose()) * (1.0 - c);
                g_u[kk] = g.dot(&d_u);
            }
            (g_u, g_origin, g.dot(&d_theta))
        }
        JointType::Prismatic => (bg.trans * value, Vector3::zeros(), bg.trans.dot(&u)),
    };
    let g_axis = (g_u_hat - u * u.dot(&g_u_hat)) / norm;
    (g_axis, g_origin, g_value)
}

struct FrameResult {
    loss: f64,
    axis: Vec<Vector3<f64>>,
    origin: Vec<Vector3<f64>>,
    theta: Vec<f64>,
    logits: Vec<Vec<f64>>,
}

fn frame_gradients(
    scene: &Scene,
    joints: &[JointSpec],
    pose: &Pose,
    cams: &[Camera],
    observed: &[Image],
    cfg: &LossConfig,
) -> Result<FrameResult> {
    let deformed = deform_scene_raw(scene, joints, pose)?;
    let per_view: Vec<(f64, Vec<GaussianGrad>)> = cams
        .par_iter()
        .zip(observed)
        .map(|(cam, obs)| {
            let raster = Raster::build(&deformed.gaussians, cam, &cfg.render);
            let img = rasterize(&raster, cam, &cfg.render);
            let l = image_loss(&img, obs, cfg, true)?;
            let grads = render_backward_raster(&raster, &deformed.gaussians, cam, &cfg.render, &l.d_rgb, &l.d_depth);
            Ok((l.value, grads))
        })
        .collect::<Result<_>>()?;

    let n = scene.len();
    let mut loss = 0.0;
    let mut grads = vec![GaussianGrad::default(); n];
    for (l, g) in &per_view {
        loss += l;
        for (acc, gi) in grads.iter_mut().zip(g) {
            acc.mean += gi.mean;
            acc.cov += gi.cov;
        }
    }

    let bones: Vec<SE3> = std::iter::once(SE3::identity())
        .chain(
            joints
                .iter()
                .zip(&pose.0)
                .map(|(j, &v)| joint_transform(&j.axis, &j.origin, j.joint_type, v)),
        )
        .collect();
    let zero_bone = BoneGrad {
        rot: Matrix3::zeros(),
        trans: Vector3::zeros(),
    };
    let mut bone_grads = vec![zero_bone; bones.len()];
    let mut logits = Vec::with_capacity(n);
    for ((g, d), gg) in scene.gaussians.iter().zip(&deformed.gaussians).zip(&grads) {
        logits.push(skinning_backward(g, d, &bones, gg, &mut bone_grads)?);
    }

    let mut axis = Vec::with_capacity(joints.len());
    let mut origin = Vec::with_capacity(joints.len());
    let mut theta = Vec::with_capacity(joints.len());
    for (k, j) in joints.iter().enumerate() {
        let (ga, go, gt) = bone_backward(j, pose.0[k], &bone_grads[k + 1]);
        axis.push(ga);
        origin.push(go);
        theta.push(gt);
    }
    Ok(FrameResult {
        loss,
        axis,
        origin,
        theta,
        logits,
    })
}

/// Loss over all frames and views plus the regularizer, with gradients.
/// `observed[t][v]` is the image of camera `v` at frame `t`.
pub fn loss_gradients(
    scene: &Scene,
    joints: &[JointSpec],
    poses: &[Pose],
    cams: &[Camera],
    observed: &[Vec<Image>],
    cfg: &LossConfig,
) -> Result<LossGradients> {
    cfg.validate()?;
    check_observation_shapes(poses, cams, observed)?;
    if scene.part_count != joints.len() {
        return Err(Error::Dimension(format!(
            "scene has {} parts but {} joints were given",
            scene.part_count,
            joints.len()
        )));
    }
    for cam in cams {
        check_camera(cam)?;
    }
    let frames: Vec<FrameResult> = poses
        .par_iter()
        .zip(observed)
        .map(|(pose, obs)| frame_gradients(scene, joints, pose, cams, obs, cfg))
        .collect::<Result<_>>()?;

    let k = joints.len();
    let mut out = LossGradients {
        loss: 0.0,
        axis: vec![Vector3::zeros(); k],
        origin: vec![Vector3::zeros(); k],
        theta: Vec::with_capacity(frames.len()),
        skin_logits: scene.gaussians.iter().map(|g| vec![0.0; g.skin_logits.len()]).collect(),
    };
    for f in frames {
        out.loss += f.loss;
        for j in 0..k {
            out.axis[j] += f.axis[j];
            out.origin[j] += f.origin[j];
        }
        for (acc, gl) in out.skin_logits.iter_mut().zip(&f.logits) {
            for (a, b) in acc.iter_mut().zip(gl) {
                *a += b;
            }
        }
        out.theta.push(f.theta);
    }

    out.loss += regularizer(scene, joints, cfg);
    for (ga, j) in out.axis.iter_mut().zip(joints) {
        let n = j.axis.norm();
        *ga += j.axis * (cfg.lambda_unit * 2.0 * (n - 1.0) / n);
    }
    if cfg.lambda_entropy > 0.0 {
        for (gl, g) in out.skin_logits.iter_mut().zip(&scene.gaussians) {
            let p = softmax(&g.skin_logits);
            let h = entropy(&g.skin_logits);
            for (a, pk) in gl.iter_mut().zip(&p) {
                if *pk > 0.0 {
                    *a -= cfg.lambda_entropy * pk * (pk.ln() + h);
                }
            }
        }
    }
    Ok(out)
}
