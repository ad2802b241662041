//! Simulated manipulation: an impedance-controlled end effector follows a
//! planned trajectory while the grasped part is constrained to its true
//! joint motion. Multi-view RGB-D frames are rendered along the way.

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{joint_transform, Pose};
use crate::render::{render_articulated, RenderConfig};
use crate::scene::{Camera, Image, JointSpec, JointType, Scene};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImpedanceParams {
    /// Per-axis inertia (kg).
    pub mass: f64,
    /// Damping (N s/m).
    pub damping: f64,
    /// Stiffness (N/m).
    pub stiffness: f64,
    /// Integration step (s).
    pub dt: f64,
}

impl Default for ImpedanceParams {
    fn default() -> Self {
        ImpedanceParams {
            mass: 1.0,
            damping: 40.0,
            stiffness: 400.0,
            dt: 1e-3,
        }
    }
}

impl ImpedanceParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.mass > 0.0 && self.mass.is_finite()) {
            return Err(Error::Parameter(format!("inertia {} is not positive definite", self.mass)));
        }
        if !(self.stiffness > 0.0 && self.damping >= 0.0 && self.dt > 0.0) || !self.stiffness.is_finite() {
            return Err(Error::Parameter(format!("invalid impedance parameters {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EEState {
    pub x: Vector3<f64>,
    pub v: Vector3<f64>,
    pub a: Vector3<f64>,
}

impl EEState {
    pub fn at_rest(x: Vector3<f64>) -> Self {
        EEState {
            x,
            v: Vector3::zeros(),
            a: Vector3::zeros(),
        }
    }

    /// `1/2 m |v|^2 + 1/2 k |x - x_d|^2`.
    pub fn energy(&self, x_d: &Vector3<f64>, p: &ImpedanceParams) -> f64 {
        0.5 * p.mass * self.v.norm_squared() + 0.5 * p.stiffness * (self.x - x_d).norm_squared()
    }
}

/// One semi-implicit Euler step of the impedance law solved for the
/// commanded acceleration.
pub fn impedance_step(
    state: &EEState,
    x_d: &Vector3<f64>,
    v_d: &Vector3<f64>,
    a_d: &Vector3<f64>,
    f_ext: &Vector3<f64>,
    p: &ImpedanceParams,
) -> Result<EEState> {
    p.validate()?;
    let a = a_d + (f_ext - (state.v - v_d) * p.damping - (state.x - x_d) * p.stiffness) / p.mass;
    let v = state.v + a * p.dt;
    let x = state.x + v * p.dt;
    Ok(EEState { x, v, a })
}

/// Desired position and its first two derivatives with respect to the path
/// parameter `s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub x: Vector3<f64>,
    pub v: Vector3<f64>,
    pub a: Vector3<f64>,
}

const ON_AXIS_MIN: f64 = 1e-6;

fn distance_to_line(p: &Vector3<f64>, origin: &Vector3<f64>, unit_axis: &Vector3<f64>) -> f64 {
    let d = p - origin;
    (d - unit_axis * unit_axis.dot(&d)).norm()
}

fn finite_difference(values: &[Vector3<f64>], ds: f64) -> Vec<Vector3<f64>> {
    let n = values.len();
    (0..n)
        .map(|i| {
            if n < 2 {
                Vector3::zeros()
            } else if i == 0 {
                (values[1] - values[0]) / ds
            } else if i == n - 1 {
                (values[n - 1] - values[n - 2]) / ds
            } else {
                (values[i + 1] - values[i - 1]) / (2.0 * ds)
            }
        })
        .collect()
}

/// Waypoints for `s` in `[0, 1]` along the motion of `grasp_point` under
/// `joint` from 0 to `target_delta`.
pub fn plan_trajectory(
    joint: &JointSpec,
    grasp_point: &Vector3<f64>,
    target_delta: f64,
    n_waypoints: usize,
) -> Result<Vec<Waypoint>> {
    if n_waypoints < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 waypoints, got {n_waypoints}")));
    }
    let u = joint.axis.normalize();
    if joint.joint_type == JointType::Revolute {
        let dist = distance_to_line(grasp_point, &joint.origin, &u);
        if dist <= ON_AXIS_MIN {
            return Err(Error::DegenerateGrasp { distance: dist });
        }
    }
    let ds = 1.0 / (n_waypoints - 1) as f64;
    let xs: Vec<Vector3<f64>> = (0..n_waypoints)
        .map(|i| {
            let s = i as f64 * ds;
            joint_transform(&u, &joint.origin, joint.joint_type, s * target_delta).apply(grasp_point)
        })
        .collect();
    let vs = finite_difference(&xs, ds);
    let accs = finite_difference(&vs, ds);
    Ok(xs
        .into_iter()
        .zip(vs)
        .zip(accs)
        .map(|((x, v), a)| Waypoint { x, v, a })
        .collect())
}

/// Minimum-jerk time scaling: `s(tau)`, `ds/dtau`, `d2s/dtau2`.
fn min_jerk(tau: f64) -> (f64, f64, f64) {
    let t = tau.clamp(0.0, 1.0);
    let (t2, t3) = (t * t, t * t * t);
    (
        10.0 * t3 - 15.0 * t3 * t + 6.0 * t3 * t2,
        30.0 * t2 - 60.0 * t3 + 30.0 * t3 * t,
        60.0 * t - 180.0 * t2 + 120.0 * t3,
    )
}

fn interpolate(path: &[Waypoint], s: f64) -> Waypoint {
    let n = path.len();
    let f = s.clamp(0.0, 1.0) * (n - 1) as f64;
    let i = (f.floor() as usize).min(n - 2);
    let w = f - i as f64;
    let (a, b) = (&path[i], &path[i + 1]);
    Waypoint {
        x: a.x * (1.0 - w) + b.x * w,
        v: a.v * (1.0 - w) + b.v * w,
        a: a.a * (1.0 - w) + b.a * w,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub impedance: ImpedanceParams,
    pub n_frames: usize,
    /// Duration of the planned motion (s).
    pub duration: f64,
    /// Extra time after the motion for the controller to settle (s).
    pub settle: f64,
    /// Stiffness of the grasp coupling between hand and handle (N/m).
    pub contact_stiffness: f64,
    /// Grasp breaks once hand and handle are this far apart (m).
    pub break_distance: f64,
    pub n_waypoints: usize,
    /// Joint range of the manipulated part; no upper bound when `None`.
    pub lower_limit: f64,
    pub upper_limit: Option<f64>,
    pub render: RenderConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            impedance: ImpedanceParams::default(),
            n_frames: 10,
            duration: 2.0,
            settle: 0.5,
            contact_stiffness: 400.0,
            break_distance: 0.03,
            n_waypoints: 401,
            lower_limit: 0.0,
            upper_limit: None,
            render: RenderConfig::default(),
        }
    }
}

/// One observation: time, the articulation the robot commanded (what the
/// robot knows), the true articulation (evaluation only) and one image per
/// camera.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub time: f64,
    pub commanded: Pose,
    pub truth: Pose,
    pub images: Vec<Image>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSequence {
    pub frames: Vec<Frame>,
    pub cameras: Vec<Camera>,
}

impl ObservationSequence {
    pub fn validate(&self) -> Result<()> {
        for w in self.frames.windows(2) {
            if !(w[1].time > w[0].time) {
                return Err(Error::InvalidInput("frame times must be strictly increasing".into()));
            }
        }
        for (i, f) in self.frames.iter().enumerate() {
            if f.images.len() != self.cameras.len() {
                return Err(Error::Dimension(format!(
                    "frame {i} has {} images for {} cameras",
                    f.images.len(),
                    self.cameras.len()
                )));
            }
        }
        Ok(())
    }

    pub fn observed(&self) -> Vec<Vec<Image>> {
        self.frames.iter().map(|f| f.images.clone()).collect()
    }

    /// Appends `other`, shifting its times to follow this sequence.
    pub fn extend(&mut self, other: ObservationSequence) -> Result<()> {
        if self.frames.is_empty() {
            *self = other;
            return Ok(());
        }
        if other.cameras != self.cameras {
            return Err(Error::InvalidInput("sequences use different cameras".into()));
        }
        let offset = self.frames.last().map_or(0.0, |f| f.time);
        for mut f in other.frames {
            f.time += offset;
            self.frames.push(f);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationOutcome {
    pub sequence: ObservationSequence,
    pub achieved_delta: f64,
    pub grasp_broken: bool,
    /// Time at which the grasp broke, if it did.
    pub break_time: Option<f64>,
}

/// The true constraint manifold of the grasped point.
struct Constraint<'a> {
    joint: &'a JointSpec,
    grasp: Vector3<f64>,
    lower: f64,
    upper: f64,
}

impl Constraint<'_> {
    fn point(&self, value: f64) -> Vector3<f64> {
        joint_transform(&self.joint.axis, &self.joint.origin, self.joint.joint_type, value).apply(&self.grasp)
    }

    /// Articulation value whose grasp point is closest to `x`. Revolute
    /// angles are unwrapped around `previous`.
    fn project(&self, x: &Vector3<f64>, previous: f64) -> f64 {
        let u = self.joint.axis.normalize();
        let value = match self.joint.joint_type {
            JointType::Prismatic => (x - self.grasp).dot(&u),
            JointType::Revolute => {
                let q = self.joint.origin;
                let perp = |p: Vector3<f64>| p - u * u.dot(&p);
                let r0 = perp(self.grasp - q);
                let r = perp(x - q);
                let ang = u.dot(&r0.cross(&r)).atan2(r0.dot(&r));
                let two_pi = std::f64::consts::TAU;
                ang + two_pi * ((previous - ang) / two_pi).round()
            }
        };
        value.clamp(self.lower, self.upper)
    }
}

#[allow(clippy::too_many_arguments)]
pub fn simulate_interaction(
    gt_scene: &Scene,
    gt_joints: &[JointSpec],
    part_index: usize,
    grasp_point: &Vector3<f64>,
    target_delta: f64,
    cameras: &[Camera],
    planned_joint: &JointSpec,
    cfg: &SimConfig,
) -> Result<SimulationOutcome> {
    if cameras.is_empty() {
        return Err(Error::Config("simulation needs at least one camera".into()));
    }
    if cfg.n_frames == 0 || !(cfg.duration > 0.0) || !(cfg.settle >= 0.0) || !(cfg.break_distance > 0.0) {
        return Err(Error::Config(format!("invalid simulation config {cfg:?}")));
    }
    cfg.impedance.validate()?;
    if part_index >= gt_joints.len() || gt_joints.len() != gt_scene.part_count {
        return Err(Error::InvalidInput(format!(
            "part {part_index} out of range for {} joints / {} parts",
            gt_joints.len(),
            gt_scene.part_count
        )));
    }
    let path = plan_trajectory(planned_joint, grasp_point, target_delta, cfg.n_waypoints)?;
    let truth = Constraint {
        joint: &gt_joints[part_index],
        grasp: *grasp_point,
        lower: cfg.lower_limit,
        upper: cfg.upper_limit.unwrap_or(f64::INFINITY),
    };

    let p = &cfg.impedance;
    let end = cfg.duration + cfg.settle;
    let steps = (end / p.dt).round() as usize;
    let frame_steps: Vec<usize> = (1..=cfg.n_frames)
        .map(|k| ((k as f64 / cfg.n_frames as f64) * steps as f64).round() as usize)
        .collect();

    let mut state = EEState::at_rest(*grasp_point);
    let mut theta = 0.0;
    let mut broken_at: Option<usize> = None;
    let mut samples: Vec<(f64, f64, f64)> = Vec::with_capacity(cfg.n_frames);
    let mut next_frame = 0;
    let commanded_at = |step: usize| min_jerk(step as f64 * p.dt / cfg.duration).0 * target_delta;

    for step in 1..=steps {
        if broken_at.is_none() {
            let t = step as f64 * p.dt;
            let (s, sd, sdd) = min_jerk(t / cfg.duration);
            let (sd, sdd) = if t >= cfg.duration {
                (0.0, 0.0)
            } else {
                (sd / cfg.duration, sdd / (cfg.duration * cfg.duration))
            };
            let wp = interpolate(&path, s);
            let v_d = wp.v * sd;
            let a_d = wp.a * sd * sd + wp.v * sdd;
            let residual = state.x - truth.point(theta);
            let f_ext = -residual * cfg.contact_stiffness;
            state = impedance_step(&state, &wp.x, &v_d, &a_d, &f_ext, p)?;
            theta = truth.project(&state.x, theta);
            if (state.x - truth.point(theta)).norm() > cfg.break_distance {
                broken_at = Some(step);
            }
        }
        while next_frame < frame_steps.len() && frame_steps[next_frame] == step {
            let cmd = commanded_at(broken_at.map_or(step, |b| b.min(step)));
            samples.push((step as f64 * p.dt, cmd, theta));
            next_frame += 1;
        }
    }
    while samples.len() < cfg.n_frames {
        let cmd = commanded_at(broken_at.unwrap_or(steps));
        samples.push((end, cmd, theta));
    }

    let k = gt_joints.len();
    let pose_with = |v: f64| {
        let mut pose = Pose::zeros(k);
        pose.0[part_index] = v;
        pose
    };
    let frames = samples
        .par_iter()
        .map(|&(time, cmd, th)| {
            let truth_pose = pose_with(th);
            let images = cameras
                .iter()
                .map(|cam| render_articulated(gt_scene, gt_joints, &truth_pose, cam, &cfg.render))
                .collect::<Result<Vec<_>>>()?;
            Ok(Frame {
                time,
                commanded: pose_with(cmd),
                truth: truth_pose,
                images,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let sequence = ObservationSequence {
        frames,
        cameras: cameras.to_vec(),
    };
    sequence.validate()?;
    Ok(SimulationOutcome {
        sequence,
        achieved_delta: theta,
        grasp_broken: broken_at.is_some(),
        break_time: broken_at.map(|s| s as f64 * p.dt),
    })
}
