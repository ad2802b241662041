//! Gradient-based refinement of joint parameters and per-frame articulation
//! values against observation sequences, and fixed-count static scene fitting.

mod fit_static;

pub use fit_static::{fit_static, FitResult};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::Pose;
use crate::loss::LossConfig;
use crate::metrics::joint_errors;
use crate::render::loss_gradients;
use crate::scene::{JointSpec, JointType, Scene};
use crate::sim::ObservationSequence;

/// Starting values for the per-frame articulation values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThetaInit {
    Zero,
    /// `t / t_last` times the final commanded value.
    LinearRamp,
    /// The values the robot commanded at each frame.
    Commanded,
}

/// Update rule applied to every parameter group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Adam,
    /// Plain steps of `-lr * gradient`.
    GradientDescent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizeConfig {
    pub method: Method,
    pub max_iters: usize,
    pub lr_axis: f64,
    pub lr_origin: f64,
    pub lr_theta: f64,
    pub lr_skin: f64,
    /// Multiplied into every learning rate after each iteration.
    pub decay: f64,
    /// Stop when the relative loss change over `window` iterations drops below this.
    pub epsilon: f64,
    pub window: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub theta_init: ThetaInit,
    pub optimize_skin: bool,
    pub seed: u64,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        OptimizeConfig {
            method: Method::Adam,
            max_iters: 200,
            lr_axis: 0.01,
            lr_origin: 0.005,
            lr_theta: 0.01,
            lr_skin: 0.02,
            decay: 1.0,
            epsilon: 1e-6,
            window: 20,
            beta1: 0.9,
            beta2: 0.999,
            theta_init: ThetaInit::Zero,
            optimize_skin: true,
            seed: 0,
        }
    }
}

impl OptimizeConfig {
    pub fn validate(&self) -> Result<()> {
        let rates = [self.lr_axis, self.lr_origin, self.lr_theta, self.lr_skin];
        let ok = self.max_iters >= 1
            && rates.iter().all(|r| *r > 0.0 && r.is_finite())
            && self.decay > 0.0
            && self.decay <= 1.0
            && self.epsilon >= 0.0
            && self.window >= 1
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid optimizer config {self:?}")))
        }
    }
}

const ADAM_EPS: f64 = 1e-12;

/// Adam moments for a flat parameter block.
#[derive(Debug, Clone)]
pub(crate) struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    beta1: f64,
    beta2: f64,
    step: i32,
    plain: bool,
}

impl Adam {
    pub fn new(n: usize, beta1: f64, beta2: f64) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            beta1,
            beta2,
            step: 0,
            plain: false,
        }
    }

    /// Moments for `cfg.method`; plain gradient descent keeps none.
    pub fn for_config(n: usize, cfg: &OptimizeConfig) -> Self {
        match cfg.method {
            Method::Adam => Adam::new(n, cfg.beta1, cfg.beta2),
            Method::GradientDescent => Adam {
                plain: true,
                ..Adam::new(0, cfg.beta1, cfg.beta2)
            },
        }
    }

    /// Advances the shared step counter; call once per iteration.
    pub fn tick(&mut self) {
        self.step += 1;
    }

    /// Update for parameter `i` with gradient `g` and rate `lr`.
    pub fn delta(&mut self, i: usize, g: f64, lr: f64) -> f64 {
        if self.plain {
            return -lr * g;
        }
        self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
        self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
        let mh = self.m[i] / (1.0 - self.beta1.powi(self.step));
        let vh = self.v[i] / (1.0 - self.beta2.powi(self.step));
        -lr * mh / (vh.sqrt() + ADAM_EPS)
    }
}

/// One row of the loss trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iter: usize,
    pub loss: f64,
    /// Per-joint axis error in degrees, when ground truth was supplied.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub axis_error: Option<Vec<f64>>,
    /// Per-joint origin error in centimeters (`None` for prismatic joints).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin_error: Option<Vec<Option<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementResult {
    pub joints: Vec<JointSpec>,
    pub thetas: Vec<Pose>,
    pub skin_logits: Vec<Vec<f64>>,
    pub loss_trace: Vec<TraceEntry>,
    pub iters: usize,
    pub converged: bool,
}

impl RefinementResult {
    pub fn losses(&self) -> Vec<f64> {
        self.loss_trace.iter().map(|t| t.loss).collect()
    }

    /// Loss trace as CSV with header `iter,loss,ae_<k>,oe_<k>...`.
    pub fn trace_csv(&self) -> String {
        let k = self.joints.len();
        let mut out = String::from("iter,loss");
        let with_gt = self.loss_trace.first().is_some_and(|t| t.axis_error.is_some());
        if with_gt {
            for j in 0..k {
                out.push_str(&format!(",ae_{j},oe_{j}"));
            }
        }
        out.push('\n');
        for t in &self.loss_trace {
            out.push_str(&format!("{},{}", t.iter, t.loss));
            if let (Some(ae), Some(oe)) = (&t.axis_error, &t.origin_error) {
                for j in 0..k {
                    let o = oe[j].map_or(String::new(), |v| v.to_string());
                    out.push_str(&format!(",{},{}", ae[j], o));
                }
            }
            out.push('\n');
        }
        out
    }
}

fn initial_thetas(seq: &ObservationSequence, k: usize, init: ThetaInit) -> Vec<Pose> {
    match init {
        ThetaInit::Zero => vec![Pose::zeros(k); seq.frames.len()],
        ThetaInit::Commanded => seq.frames.iter().map(|f| f.commanded.clone()).collect(),
        ThetaInit::LinearRamp => {
            let last = seq.frames.last().expect("non-empty sequence");
            seq.frames
                .iter()
                .map(|f| Pose(last.commanded.0.iter().map(|v| v * f.time / last.time).collect()))
                .collect()
        }
    }
}

fn converged(trace: &[TraceEntry], cfg: &OptimizeConfig) -> bool {
    let n = trace.len();
    if n <= cfg.window {
        return false;
    }
    let old = trace[n - 1 - cfg.window].loss;
    let new = trace[n - 1].loss;
    (old - new).abs() / old.abs().max(1e-300) < cfg.epsilon
}

/// Jointly descends joint axes and origins, per-frame articulation values
/// and (optionally) skinning logits. Joint types are never changed. When
/// `gt` is given, axis and origin errors are recorded in the trace.
pub fn refine(
    scene: &Scene,
    j_init: &[JointSpec],
    observations: &ObservationSequence,
    loss_cfg: &LossConfig,
    opt_cfg: &OptimizeConfig,
    gt: Option<&[JointSpec]>,
) -> Result<RefinementResult> {
    loss_cfg.validate()?;
    opt_cfg.validate()?;
    observations.validate()?;
    if j_init.len() != scene.part_count {
        return Err(Error::Dimension(format!(
            "{} initial joints for {} parts",
            j_init.len(),
            scene.part_count
        )));
    }
    if let Some(g) = gt {
        if g.len() != j_init.len() {
            return Err(Error::Dimension("ground truth joint count mismatch".into()));
        }
    }
    if observations.frames.len() < 2 {
        return Err(Error::Precondition(format!(
            "refinement needs at least 2 frames, got {}",
            observations.frames.len()
        )));
    }

    let k = j_init.len();
    let observed = observations.observed();
    let cams = &observations.cameras;
    let mut joints: Vec<JointSpec> = j_init.to_vec();
    for j in joints.iter_mut() {
        j.axis = j.axis.normalize();
    }
    let mut thetas = initial_thetas(observations, k, opt_cfg.theta_init);
    let mut work = scene.clone();

    let n_frames = thetas.len();
    let n_logits: usize = work.gaussians.iter().map(|g| g.skin_logits.len()).sum();
    let mut adam_axis = Adam::for_config(3 * k, opt_cfg);
    let mut adam_origin = Adam::for_config(3 * k, opt_cfg);
    let mut adam_theta = Adam::for_config(k * n_frames, opt_cfg);
    let mut adam_skin = Adam::for_config(n_logits, opt_cfg);

    let mut trace = Vec::with_capacity(opt_cfg.max_iters);
    let mut scale = 1.0;
    let mut done = false;
    for iter in 0..opt_cfg.max_iters {
        let g = loss_gradients(&work, &joints, &thetas, cams, &observed, loss_cfg)?;
        let finite = g.loss.is_finite()
            && g.axis.iter().chain(&g.origin).all(|v| v.iter().all(|x| x.is_finite()))
            && g.theta.iter().flatten().all(|x| x.is_finite());
        if !finite {
            return Err(Error::Divergence { iteration: iter });
        }
        let mut entry = TraceEntry {
            iter,
            loss: g.loss,
            axis_error: None,
            origin_error: None,
        };
        if let Some(gt) = gt {
            let errs = joint_errors(&joints, gt);
            entry.axis_error = Some(errs.iter().map(|e| e.0).collect());
            entry.origin_error = Some(errs.iter().map(|e| e.1).collect());
        }
        trace.push(entry);
        if converged(&trace, opt_cfg) {
            done = true;
            break;
        }
        if iter + 1 == opt_cfg.max_iters {
            break;
        }

        adam_axis.tick();
        adam_origin.tick();
        adam_theta.tick();
        adam_skin.tick();
        for (j, joint) in joints.iter_mut().enumerate() {
            let mut step = Vector3::zeros();
            for c in 0..3 {
                step[c] = adam_axis.delta(3 * j + c, g.axis[j][c], opt_cfg.lr_axis * scale);
            }
            joint.axis = (joint.axis + step).normalize();
            if joint.joint_type == JointType::Revolute {
                for c in 0..3 {
                    joint.origin[c] += adam_origin.delta(3 * j + c, g.origin[j][c], opt_cfg.lr_origin * scale);
                }
            }
        }
        for (t, pose) in thetas.iter_mut().enumerate() {
            for j in 0..k {
                pose.0[j] += adam_theta.delta(t * k + j, g.theta[t][j], opt_cfg.lr_theta * scale);
            }
        }
        if opt_cfg.optimize_skin {
            let mut idx = 0;
            for (gauss, gl) in work.gaussians.iter_mut().zip(&g.skin_logits) {
                for (l, d) in gauss.skin_logits.iter_mut().zip(gl) {
                    *l += adam_skin.delta(idx, *d, opt_cfg.lr_skin * scale);
                    idx += 1;
                }
            }
        }
        scale *= opt_cfg.decay;
    }

    Ok(RefinementResult {
        joints,
        thetas,
        skin_logits: work.gaussians.iter().map(|g| g.skin_logits.clone()).collect(),
        iters: trace.len(),
        loss_trace: trace,
        converged: done,
    })
}
