//! End-to-end runs: generate an object, initialize its joints from
//! synthetic annotations, manipulate it, refine the joints from the
//! observations and manipulate it again.

use std::fs;
use std::path::Path;
use std::time::Instant;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{write_depth_pgm, write_json, write_ppm};
use crate::joint_init::{init_joints, synthesize_annotations, NoiseConfig};
use crate::loss::LossConfig;
use crate::metrics::{joint_errors, median};
use crate::optimizer::{refine, OptimizeConfig, ThetaInit};
use crate::render::render;
use crate::scene::{Camera, JointSpec, JointType, Scene};
use crate::sim::{simulate_interaction, ObservationSequence, SimConfig};
use crate::templates::{generate_object, ArticulatedObject, Template};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RigConfig {
    pub count: usize,
    /// Camera distance from the object center, in multiples of the
    /// object's bounding-box diagonal.
    pub radius_scale: f64,
    pub resolution: usize,
    pub hfov_deg: f64,
    pub elevation_deg: f64,
    /// Azimuth span of the rig, centered on the object's front.
    pub arc_deg: f64,
}

impl Default for RigConfig {
    fn default() -> Self {
        RigConfig {
            count: 4,
            radius_scale: 1.5,
            resolution: 128,
            hfov_deg: 40.0,
            elevation_deg: 20.0,
            arc_deg: 90.0,
        }
    }
}

impl RigConfig {
    pub fn validate(&self) -> Result<()> {
        if self.count == 0 || self.resolution < 32 || !(self.radius_scale > 0.0) || !(self.hfov_deg > 0.0 && self.hfov_deg < 180.0) {
            return Err(Error::Config(format!("invalid camera rig {self:?}")));
        }
        Ok(())
    }
}

fn framing(scene: &Scene) -> Result<(Vector3<f64>, f64)> {
    let (lo, hi) = scene
        .bounds()
        .ok_or_else(|| Error::InvalidInput("cannot frame an empty scene".into()))?;
    Ok(((lo + hi) * 0.5, (hi - lo).norm()))
}

fn orbit_camera(center: &Vector3<f64>, distance: f64, azimuth: f64, elevation: f64, rig: &RigConfig) -> Result<Camera> {
    let dir = Vector3::new(azimuth.sin() * elevation.cos(), -azimuth.cos() * elevation.cos(), elevation.sin());
    Camera::look_at(
        center + dir * distance,
        *center,
        Vector3::z(),
        rig.hfov_deg.to_radians(),
        rig.resolution,
        rig.resolution,
    )
}

/// Cameras spread evenly over an arc in front of the object.
pub fn camera_rig(scene: &Scene, rig: &RigConfig) -> Result<Vec<Camera>> {
    rig.validate()?;
    let (center, diag) = framing(scene)?;
    let half = 0.5 * rig.arc_deg.to_radians();
    (0..rig.count)
        .map(|i| {
            let s = if rig.count == 1 { 0.5 } else { i as f64 / (rig.count - 1) as f64 };
            let az = -half + 2.0 * half * s;
            orbit_camera(&center, rig.radius_scale * diag, az, rig.elevation_deg.to_radians(), rig)
        })
        .collect()
}

/// Level camera looking straight at the object's front.
pub fn annotation_camera(scene: &Scene, rig: &RigConfig) -> Result<Camera> {
    rig.validate()?;
    let (center, diag) = framing(scene)?;
    orbit_camera(&center, rig.radius_scale * diag, 0.0, 0.0, rig)
}

/// Flips `joint` if needed so that a positive articulation value moves the
/// grasp point away from `center`.
pub fn orient_joint(joint: &JointSpec, grasp: &Vector3<f64>, center: &Vector3<f64>) -> JointSpec {
    let velocity = match joint.joint_type {
        JointType::Prismatic => joint.axis,
        JointType::Revolute => joint.axis.cross(&(grasp - joint.origin)),
    };
    let mut out = joint.clone();
    if velocity.dot(&(grasp - center)) < 0.0 {
        out.axis = -out.axis;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Seed `i` uses `templates[i % templates.len()]`.
    pub templates: Vec<Template>,
    pub seeds: Vec<u64>,
    pub rig: RigConfig,
    /// Annotation noise; its seed is replaced by each run's seed.
    pub noise: NoiseConfig,
    pub frames: usize,
    /// Overrides every part's default opening amount.
    pub target_delta: Option<f64>,
    /// Fraction of the target that counts as a successful manipulation.
    pub success_fraction: f64,
    pub sim: SimConfig,
    pub loss: LossConfig,
    pub optimize: OptimizeConfig,
    /// Write preview images of the final frames.
    pub debug_frames: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            templates: vec![Template::Door],
            seeds: (0..10).collect(),
            rig: RigConfig::default(),
            noise: NoiseConfig::default(),
            frames: 10,
            target_delta: None,
            success_fraction: 0.9,
            sim: SimConfig::default(),
            loss: LossConfig::default(),
            optimize: OptimizeConfig {
                max_iters: 45,
                lr_axis: 0.02,
                lr_origin: 0.01,
                lr_theta: 0.02,
                decay: 0.97,
                theta_init: ThetaInit::Commanded,
                ..OptimizeConfig::default()
            },
            debug_frames: true,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.templates.is_empty() {
            return Err(Error::Config("no object templates".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.frames < 2 {
            return Err(Error::Config("at least 2 frames per sequence are required".into()));
        }
        if !(self.success_fraction > 0.0 && self.success_fraction <= 1.0) {
            return Err(Error::Config(format!("success fraction {} out of (0, 1]", self.success_fraction)));
        }
        if let Some(t) = self.target_delta {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::Config(format!("target delta {t} must be positive")));
            }
        }
        self.rig.validate()?;
        self.loss.validate()?;
        self.optimize.validate()
    }

    pub fn template_for(&self, index: usize) -> Template {
        self.templates[index % self.templates.len()]
    }
}

/// Outcome of one manipulation attempt per part.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manipulation {
    pub achieved: Vec<f64>,
    pub target: Vec<f64>,
    pub grasp_broken: Vec<bool>,
    pub success: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: u64,
    pub template: Template,
    /// Set when the run failed; the other fields are then empty.
    pub error: Option<String>,
    pub joint_types: Vec<JointType>,
    pub initial_ae: Vec<f64>,
    pub final_ae: Vec<f64>,
    /// Centimeters; `None` for prismatic joints.
    pub initial_oe: Vec<Option<f64>>,
    pub final_oe: Vec<Option<f64>>,
    pub before: Option<Manipulation>,
    pub after: Option<Manipulation>,
    pub iterations: usize,
    pub final_loss: Option<f64>,
    pub refined_joints: Vec<JointSpec>,
}

impl SeedReport {
    fn failed(seed: u64, template: Template, e: &Error) -> Self {
        SeedReport {
            seed,
            template,
            error: Some(e.to_string()),
            joint_types: Vec::new(),
            initial_ae: Vec::new(),
            final_ae: Vec::new(),
            initial_oe: Vec::new(),
            final_oe: Vec::new(),
            before: None,
            after: None,
            iterations: 0,
            final_loss: None,
            refined_joints: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub runs: usize,
    pub failed_runs: usize,
    pub median_initial_ae: Option<f64>,
    pub median_final_ae: Option<f64>,
    pub median_initial_oe: Option<f64>,
    pub median_final_oe: Option<f64>,
    pub success_rate_before: Option<f64>,
    pub success_rate_after: Option<f64>,
    /// Fraction of runs whose final AE is at most the initial AE on every joint.
    pub ae_improved_fraction: Option<f64>,
}

fn opt_median(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| median(v))
}

fn rate(flags: impl Iterator<Item = bool>) -> Option<f64> {
    let (n, k) = flags.fold((0usize, 0usize), |(n, k), f| (n + 1, k + f as usize));
    (n > 0).then(|| k as f64 / n as f64)
}

impl Aggregate {
    /// Summary over the successful runs; AE and OE pool all joints.
    pub fn from_seeds(seeds: &[SeedReport]) -> Self {
        let ok: Vec<&SeedReport> = seeds.iter().filter(|s| s.error.is_none()).collect();
        let pool = |f: fn(&SeedReport) -> &Vec<f64>| ok.iter().flat_map(|s| f(s).iter().copied()).collect::<Vec<_>>();
        let pool_oe =
            |f: fn(&SeedReport) -> &Vec<Option<f64>>| ok.iter().flat_map(|s| f(s).iter().flatten().copied()).collect::<Vec<_>>();
        Aggregate {
            runs: seeds.len(),
            failed_runs: seeds.len() - ok.len(),
            median_initial_ae: opt_median(&pool(|s| &s.initial_ae)),
            median_final_ae: opt_median(&pool(|s| &s.final_ae)),
            median_initial_oe: opt_median(&pool_oe(|s| &s.initial_oe)),
            median_final_oe: opt_median(&pool_oe(|s| &s.final_oe)),
            success_rate_before: rate(ok.iter().filter_map(|s| s.before.as_ref().map(|m| m.success))),
            success_rate_after: rate(ok.iter().filter_map(|s| s.after.as_ref().map(|m| m.success))),
            ae_improved_fraction: rate(
                ok.iter()
                    .map(|s| s.final_ae.iter().zip(&s.initial_ae).all(|(f, i)| f <= i)),
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub config: ExperimentConfig,
    pub seeds: Vec<SeedReport>,
    pub aggregate: Aggregate,
}

impl MetricsReport {
    /// One row per seed and joint.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("seed,template,joint,type,initial_ae,final_ae,initial_oe,final_oe,success_before,success_after,error\n");
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        for r in &self.seeds {
            let sb = r.before.as_ref().map_or(String::new(), |m| m.success.to_string());
            let sa = r.after.as_ref().map_or(String::new(), |m| m.success.to_string());
            let err = r.error.as_deref().unwrap_or("").replace([',', '\n'], ";");
            if r.joint_types.is_empty() {
                s.push_str(&format!("{},{},,,,,,,{sb},{sa},{err}\n", r.seed, r.template));
            }
            for (j, t) in r.joint_types.iter().enumerate() {
                s.push_str(&format!(
                    "{},{},{j},{:?},{},{},{},{},{sb},{sa},{err}\n",
                    r.seed,
                    r.template,
                    t,
                    r.initial_ae[j],
                    r.final_ae[j],
                    opt(r.initial_oe[j]),
                    opt(r.final_oe[j]),
                ));
            }
        }
        s
    }
}

/// Wall-clock seconds per phase of one run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SeedTiming {
    pub seed: u64,
    pub init: f64,
    pub simulate_before: f64,
    pub refine: f64,
    pub simulate_after: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub report: MetricsReport,
    pub timings: Vec<SeedTiming>,
    /// Final observation frame of the refinement sequence, per seed.
    pub debug_frames: Vec<Option<ObservationSequence>>,
}

/// Manipulates every part in turn with its planned joint and concatenates
/// the observations. A part succeeds when it reaches `success_fraction` of
/// its target without the grasp breaking.
pub fn manipulate(
    obj: &ArticulatedObject,
    planned: &[JointSpec],
    targets: &[f64],
    cams: &[Camera],
    sim: &SimConfig,
    success_fraction: f64,
) -> Result<(ObservationSequence, Manipulation)> {
    let k = obj.part_count();
    if planned.len() != k || targets.len() != k {
        return Err(Error::Dimension(format!(
            "{} planned joints and {} targets for {k} parts",
            planned.len(),
            targets.len()
        )));
    }
    let mut seq: Option<ObservationSequence> = None;
    let mut achieved = Vec::with_capacity(k);
    let mut broken = Vec::with_capacity(k);
    for (part, joint) in planned.iter().enumerate() {
        let cfg = SimConfig {
            lower_limit: obj.limits[part].0,
            upper_limit: Some(obj.limits[part].1),
            ..*sim
        };
        let out = simulate_interaction(
            &obj.scene,
            &obj.joints,
            part,
            &obj.grasp_points[part],
            targets[part],
            cams,
            joint,
            &cfg,
        )
        .map_err(|e| Error::part(part, e))?;
        achieved.push(out.achieved_delta);
        broken.push(out.grasp_broken);
        match seq.as_mut() {
            None => seq = Some(out.sequence),
            Some(s) => s.extend(out.sequence)?,
        }
    }
    let seq = seq.ok_or_else(|| Error::InvalidInput("object has no movable parts".into()))?;
    let success = achieved
        .iter()
        .zip(targets)
        .zip(&broken)
        .all(|((a, t), b)| !b && *a >= success_fraction * t);
    Ok((
        seq,
        Manipulation {
            achieved,
            target: targets.to_vec(),
            grasp_broken: broken,
            success,
        },
    ))
}

/// Center of the scene's bounding box.
pub fn object_center(scene: &Scene) -> Result<Vector3<f64>> {
    Ok(framing(scene)?.0)
}

/// Orients every joint with [`orient_joint`] against its part's grasp point.
pub fn orient_joints(joints: &[JointSpec], obj: &ArticulatedObject) -> Result<Vec<JointSpec>> {
    let center = object_center(&obj.scene)?;
    Ok(oriented(joints, obj, &center))
}

fn oriented(joints: &[JointSpec], obj: &ArticulatedObject, center: &Vector3<f64>) -> Vec<JointSpec> {
    joints
        .iter()
        .zip(&obj.grasp_points)
        .map(|(j, g)| orient_joint(j, g, center))
        .collect()
}

struct SeedRun {
    report: SeedReport,
    timing: SeedTiming,
    frames: Option<ObservationSequence>,
}

fn run_seed(cfg: &ExperimentConfig, index: usize) -> Result<SeedRun> {
    let seed = cfg.seeds[index];
    let template = cfg.template_for(index);
    let start = Instant::now();
    let obj = generate_object(template, seed)?;
    let (center, _) = framing(&obj.scene)?;
    let cams = camera_rig(&obj.scene, &cfg.rig)?;
    let ann_cam = annotation_camera(&obj.scene, &cfg.rig)?;
    let view = render(&obj.scene, &ann_cam, &cfg.sim.render)?;
    let ann = synthesize_annotations(&obj.scene, &obj.joints, &ann_cam, &cfg.noise.clone().with_seed(seed))?;
    let j_init = oriented(&init_joints(&ann, &view, &ann_cam)?, &obj, &center);
    let targets: Vec<f64> = obj
        .target_deltas
        .iter()
        .map(|t| cfg.target_delta.unwrap_or(*t))
        .collect();
    let t_init = start.elapsed().as_secs_f64();

    let sim = SimConfig {
        n_frames: cfg.frames,
        ..cfg.sim
    };
    let (seq, before) = manipulate(&obj, &j_init, &targets, &cams, &sim, cfg.success_fraction)?;
    let t_sim = start.elapsed().as_secs_f64();

    let opt = OptimizeConfig {
        seed,
        ..cfg.optimize
    };
    let result = refine(&obj.scene, &j_init, &seq, &cfg.loss, &opt, Some(&obj.joints))?;
    let refined = oriented(&result.joints, &obj, &center);
    let t_refine = start.elapsed().as_secs_f64();

    let (_, after) = manipulate(&obj, &refined, &targets, &cams, &sim, cfg.success_fraction)?;
    let total = start.elapsed().as_secs_f64();

    let init_err = joint_errors(&j_init, &obj.joints);
    let final_err = joint_errors(&refined, &obj.joints);
    let frames = cfg.debug_frames.then(|| ObservationSequence {
        frames: seq.frames.last().cloned().into_iter().collect(),
        cameras: seq.cameras.clone(),
    });
    Ok(SeedRun {
        report: SeedReport {
            seed,
            template,
            error: None,
            joint_types: obj.joints.iter().map(|j| j.joint_type).collect(),
            initial_ae: init_err.iter().map(|e| e.0).collect(),
            final_ae: final_err.iter().map(|e| e.0).collect(),
            initial_oe: init_err.iter().map(|e| e.1).collect(),
            final_oe: final_err.iter().map(|e| e.1).collect(),
            before: Some(before),
            after: Some(after),
            iterations: result.iters,
            final_loss: result.loss_trace.last().map(|e| e.loss),
            refined_joints: refined,
        },
        timing: SeedTiming {
            seed,
            init: t_init,
            simulate_before: t_sim - t_init,
            refine: t_refine - t_sim,
            simulate_after: total - t_refine,
            total,
        },
        frames,
    })
}

/// Runs every seed. Per-seed failures are recorded in the report.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let runs: Vec<(SeedReport, SeedTiming, Option<ObservationSequence>)> = (0..cfg.seeds.len())
        .into_par_iter()
        .map(|i| match run_seed(cfg, i) {
            Ok(r) => (r.report, r.timing, r.frames),
            Err(e) => (
                SeedReport::failed(cfg.seeds[i], cfg.template_for(i), &e),
                SeedTiming {
                    seed: cfg.seeds[i],
                    ..SeedTiming::default()
                },
                None,
            ),
        })
        .collect();
    let mut seeds = Vec::with_capacity(runs.len());
    let mut timings = Vec::with_capacity(runs.len());
    let mut debug_frames = Vec::with_capacity(runs.len());
    for (r, t, f) in runs {
        seeds.push(r);
        timings.push(t);
        debug_frames.push(f);
    }
    let aggregate = Aggregate::from_seeds(&seeds);
    Ok(ExperimentOutput {
        report: MetricsReport {
            config: cfg.clone(),
            seeds,
            aggregate,
        },
        timings,
        debug_frames,
    })
}

/// Writes `metrics.json`, `metrics.csv`, `timings.json` and preview frames
/// under `dir`.
pub fn write_experiment(dir: &Path, out: &ExperimentOutput) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_json(&dir.join("metrics.json"), &out.report)?;
    fs::write(dir.join("metrics.csv"), out.report.to_csv())?;
    write_json(&dir.join("timings.json"), &out.timings)?;
    for (r, frames) in out.report.seeds.iter().zip(&out.debug_frames) {
        let Some(seq) = frames else { continue };
        let fdir = dir.join("frames").join(format!("{}_{}", r.template, r.seed));
        fs::create_dir_all(&fdir)?;
        for f in &seq.frames {
            for (c, img) in f.images.iter().enumerate() {
                write_ppm(&fdir.join(format!("cam{c}.ppm")), img)?;
                write_depth_pgm(&fdir.join(format!("cam{c}_depth.pgm")), img)?;
            }
        }
    }
    Ok(())
}
