use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use splatjoint::experiment::{
    annotation_camera, camera_rig, manipulate, orient_joints, run_experiment, write_experiment, ExperimentConfig,
    RigConfig,
};
use splatjoint::io::{read_gsim, read_joints, read_json, read_sequence, write_depth_pgm, write_gsim, write_json, write_ppm, write_sequence};
use splatjoint::joint_init::{init_joints, synthesize_annotations, AnnotationSet, NoiseConfig};
use splatjoint::metrics::{joint_errors, median};
use splatjoint::optimizer::{refine, OptimizeConfig, ThetaInit};
use splatjoint::sim::SimConfig;
use splatjoint::templates::{generate_object, ArticulatedObject, ObjectTruth, Template};
use splatjoint::{render, render_articulated, Camera, Error, JointSpec, LossConfig, Pose, RenderConfig, Result, Scene};

#[derive(Parser)]
#[command(name = "splatjoint", version, about = "Articulated Gaussian-splat joint estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a procedural object: writes the scene and its ground truth.
    Generate {
        #[arg(long)]
        template: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Ground-truth file (default: joints.json next to the scene).
        #[arg(long)]
        gt: Option<PathBuf>,
    },
    /// Render a scene to a GSIM image, optionally articulated.
    Render {
        #[arg(long)]
        scene: PathBuf,
        /// Camera JSON; defaults to a frontal view of the scene.
        #[arg(long)]
        camera: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Joints used with --pose.
        #[arg(long)]
        joints: Option<PathBuf>,
        /// Comma-separated articulation values, one per joint.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        pose: Vec<f64>,
        #[arg(long, default_value_t = 128)]
        resolution: usize,
        /// Also write PPM color and PGM depth previews.
        #[arg(long)]
        previews: bool,
    },
    /// Synthesize part annotations from ground truth.
    Annotate {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// "default", "none" or a noise config JSON file.
        #[arg(long, default_value = "default")]
        noise: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate initial joints from annotations and a depth image.
    InitJoints {
        #[arg(long)]
        ann: PathBuf,
        /// Depth GSIM; defaults to the image named in the annotation file.
        #[arg(long)]
        depth: Option<PathBuf>,
        /// Camera JSON; defaults to the camera named in the annotation file.
        #[arg(long)]
        camera: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Manipulate every part with planned joints and record observations.
    Simulate {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        plan: PathBuf,
        #[arg(long, default_value_t = 10)]
        frames: usize,
        #[arg(long)]
        out: PathBuf,
        /// Camera rig JSON.
        #[arg(long)]
        rig: Option<PathBuf>,
        /// Also write PPM color and PGM depth previews.
        #[arg(long)]
        previews: bool,
    },
    /// Refine joints against an observation sequence.
    Refine {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        seq: PathBuf,
        #[arg(long)]
        init: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Optimizer config JSON.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Loss config JSON.
        #[arg(long)]
        loss: Option<PathBuf>,
        /// Ground truth, to record errors in the trace.
        #[arg(long)]
        gt: Option<PathBuf>,
    },
    /// Axis and origin errors of a joints or result file.
    Evaluate {
        #[arg(long)]
        result: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full pipeline over many seeds.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

const PLAN_FILE: &str = "plan.json";

fn exit_code(e: &Error) -> u8 {
    match e.root() {
        Error::Divergence { .. } => 3,
        Error::Io(_) | Error::Format(_) => 4,
        Error::Config(_)
        | Error::Json(_)
        | Error::InvalidInput(_)
        | Error::Dimension(_)
        | Error::Parameter(_)
        | Error::Precondition(_)
        | Error::JointType(_)
        | Error::Model(_) => 2,
        _ => 1,
    }
}

fn sibling(path: &Path, name: &str) -> PathBuf {
    path.parent().unwrap_or(Path::new("")).join(name)
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(|| "out".into(), |s| s.to_string_lossy().into_owned())
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(p) = path.parent() {
        if !p.as_os_str().is_empty() {
            std::fs::create_dir_all(p)?;
        }
    }
    Ok(())
}

fn load_scene(path: &Path) -> Result<Scene> {
    let scene: Scene = read_json(path)?;
    scene.validate()?;
    Ok(scene)
}

fn load_object(scene: &Path, gt: &Path) -> Result<ArticulatedObject> {
    let truth: ObjectTruth = read_json(gt)?;
    ArticulatedObject::from_parts(load_scene(scene)?, truth)
}

fn generate(template: &str, seed: u64, out: &Path, gt: Option<&Path>) -> Result<()> {
    let template: Template = template.parse()?;
    let obj = generate_object(template, seed)?;
    ensure_parent(out)?;
    write_json(out, &obj.scene)?;
    let gt = gt.map_or_else(|| sibling(out, "joints.json"), Path::to_path_buf);
    write_json(&gt, &obj.truth())?;
    println!(
        "{template}: {} gaussians, {} joints -> {}, {}",
        obj.scene.len(),
        obj.joints.len(),
        out.display(),
        gt.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn render_cmd(
    scene: &Path,
    camera: Option<&Path>,
    out: &Path,
    joints: Option<&Path>,
    pose: &[f64],
    resolution: usize,
    previews: bool,
) -> Result<()> {
    let scene = load_scene(scene)?;
    let cam: Camera = match camera {
        Some(p) => read_json(p)?,
        None => annotation_camera(
            &scene,
            &RigConfig {
                resolution,
                ..RigConfig::default()
            },
        )?,
    };
    cam.validate()?;
    let cfg = RenderConfig::default();
    let img = match joints {
        Some(j) => {
            let joints = read_joints(j)?;
            let pose = if pose.is_empty() {
                Pose::zeros(joints.len())
            } else {
                Pose(pose.to_vec())
            };
            render_articulated(&scene, &joints, &pose, &cam, &cfg)?
        }
        None if !pose.is_empty() => return Err(Error::Config("--pose needs --joints".into())),
        None => render(&scene, &cam, &cfg)?,
    };
    ensure_parent(out)?;
    write_gsim(out, &img)?;
    if camera.is_none() {
        write_json(&sibling(out, &format!("{}.camera.json", stem(out))), &cam)?;
    }
    if previews {
        write_ppm(&out.with_extension("ppm"), &img)?;
        write_depth_pgm(&sibling(out, &format!("{}_depth.pgm", stem(out))), &img)?;
    }
    Ok(())
}

fn parse_noise(spec: &str, seed: u64) -> Result<NoiseConfig> {
    let base = match spec {
        "default" => NoiseConfig::default(),
        "none" => NoiseConfig::noiseless(),
        path => read_json(Path::new(path))?,
    };
    Ok(base.with_seed(seed))
}

fn annotate(scene: &Path, gt: &Path, noise: &str, seed: u64, out: &Path) -> Result<()> {
    let noise = parse_noise(noise, seed)?;
    let obj = load_object(scene, gt)?;
    let cam = annotation_camera(&obj.scene, &RigConfig::default())?;
    let view = render(&obj.scene, &cam, &RenderConfig::default())?;
    let mut ann = synthesize_annotations(&obj.scene, &obj.joints, &cam, &noise)?;
    let base = stem(out);
    ann.image = format!("{base}_view.gsim");
    ann.depth = ann.image.clone();
    ann.camera = format!("{base}_camera.json");
    ensure_parent(out)?;
    write_gsim(&sibling(out, &ann.image), &view)?;
    write_json(&sibling(out, &ann.camera), &cam)?;
    write_json(out, &ann)
}

fn init_joints_cmd(ann_path: &Path, depth: Option<&Path>, camera: Option<&Path>, out: &Path) -> Result<()> {
    let ann: AnnotationSet = read_json(ann_path)?;
    let named = |given: Option<&Path>, name: &str, what: &str| -> Result<PathBuf> {
        match given {
            Some(p) => Ok(p.to_path_buf()),
            None if !name.is_empty() => Ok(sibling(ann_path, name)),
            None => Err(Error::Config(format!("no {what} given and none named in the annotation file"))),
        }
    };
    let depth = read_gsim(&named(depth, &ann.depth, "depth image")?)?;
    let cam: Camera = read_json(&named(camera, &ann.camera, "camera")?)?;
    cam.validate()?;
    let joints = init_joints(&ann, &depth, &cam)?;
    ensure_parent(out)?;
    write_json(out, &json!({ "joints": joints }))
}

#[allow(clippy::too_many_arguments)]
fn simulate(
    scene: &Path,
    gt: &Path,
    plan: &Path,
    frames: usize,
    out: &Path,
    rig: Option<&Path>,
    previews: bool,
) -> Result<()> {
    let obj = load_object(scene, gt)?;
    let rig: RigConfig = match rig {
        Some(p) => read_json(p)?,
        None => RigConfig::default(),
    };
    let planned = orient_joints(&read_joints(plan)?, &obj)?;
    let cams = camera_rig(&obj.scene, &rig)?;
    let sim = SimConfig {
        n_frames: frames,
        ..SimConfig::default()
    };
    let (seq, outcome) = manipulate(&obj, &planned, &obj.target_deltas, &cams, &sim, 0.9)?;
    write_sequence(out, &seq, previews)?;
    write_json(&out.join(PLAN_FILE), &json!({ "joints": planned }))?;
    write_json(&out.join("outcome.json"), &outcome)?;
    println!(
        "{} frames x {} cameras -> {}; achieved {:?}, grasp broken {:?}",
        seq.frames.len(),
        seq.cameras.len(),
        out.display(),
        outcome.achieved,
        outcome.grasp_broken
    );
    Ok(())
}

/// Flips initial axes to agree with the joints the sequence was recorded
/// with, so commanded values keep their sign.
fn align_with_plan(init: &mut [JointSpec], seq_dir: &Path) -> Result<()> {
    let plan_path = seq_dir.join(PLAN_FILE);
    if !plan_path.exists() {
        return Ok(());
    }
    let plan = read_joints(&plan_path)?;
    for (j, p) in init.iter_mut().zip(&plan) {
        if j.axis.dot(&p.axis) < 0.0 {
            j.axis = -j.axis;
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn refine_cmd(
    scene: &Path,
    seq: &Path,
    init: &Path,
    out: &Path,
    config: Option<&Path>,
    loss: Option<&Path>,
    gt: Option<&Path>,
) -> Result<()> {
    let scene = load_scene(scene)?;
    let observations = read_sequence(seq, false)?;
    let mut j_init = read_joints(init)?;
    align_with_plan(&mut j_init, seq)?;
    let opt: OptimizeConfig = match config {
        Some(p) => read_json(p)?,
        None => OptimizeConfig {
            theta_init: ThetaInit::Commanded,
            ..ExperimentConfig::default().optimize
        },
    };
    let loss_cfg: LossConfig = match loss {
        Some(p) => read_json(p)?,
        None => LossConfig::default(),
    };
    let gt = gt.map(read_joints).transpose()?;
    let result = refine(&scene, &j_init, &observations, &loss_cfg, &opt, gt.as_deref())?;
    let metrics = gt.as_ref().map(|g| {
        let before = joint_errors(&j_init, g);
        let after = joint_errors(&result.joints, g);
        json!({
            "initial_ae": before.iter().map(|e| e.0).collect::<Vec<_>>(),
            "final_ae": after.iter().map(|e| e.0).collect::<Vec<_>>(),
            "initial_oe": before.iter().map(|e| e.1).collect::<Vec<_>>(),
            "final_oe": after.iter().map(|e| e.1).collect::<Vec<_>>(),
        })
    });
    ensure_parent(out)?;
    write_json(
        out,
        &json!({
            "joints": result.joints,
            "thetas": result.thetas.iter().map(|p| &p.0).collect::<Vec<_>>(),
            "loss_trace": result.losses(),
            "iters": result.iters,
            "converged": result.converged,
            "metrics": metrics,
        }),
    )?;
    std::fs::write(out.with_extension("csv"), result.trace_csv())?;
    println!("{} iterations, final loss {:?}", result.iters, result.losses().last());
    Ok(())
}

fn evaluate(result: &Path, gt: &Path, out: &Path) -> Result<()> {
    let est = read_joints(result)?;
    let gt = read_joints(gt)?;
    if est.len() != gt.len() {
        return Err(Error::Dimension(format!("{} estimated joints for {} ground-truth joints", est.len(), gt.len())));
    }
    let errs = joint_errors(&est, &gt);
    let ae: Vec<f64> = errs.iter().map(|e| e.0).collect();
    let oe: Vec<f64> = errs.iter().filter_map(|e| e.1).collect();
    let report = json!({
        "joints": errs.iter().zip(&est).map(|(e, j)| json!({
            "joint_type": j.joint_type,
            "ae_deg": e.0,
            "oe_cm": e.1,
        })).collect::<Vec<_>>(),
        "median_ae_deg": (!ae.is_empty()).then(|| median(&ae)),
        "median_oe_cm": (!oe.is_empty()).then(|| median(&oe)),
    });
    ensure_parent(out)?;
    write_json(out, &report)?;
    println!("{}", serde_json::to_string(&report)?);
    Ok(())
}

fn experiment(config: &Path, out: &Path) -> Result<()> {
    let cfg: ExperimentConfig = read_json(config)?;
    cfg.validate()?;
    let output = run_experiment(&cfg)?;
    write_experiment(out, &output)?;
    println!("{}", serde_json::to_string_pretty(&output.report.aggregate)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { template, seed, out, gt } => generate(&template, seed, &out, gt.as_deref()),
        Command::Render {
            scene,
            camera,
            out,
            joints,
            pose,
            resolution,
            previews,
        } => render_cmd(&scene, camera.as_deref(), &out, joints.as_deref(), &pose, resolution, previews),
        Command::Annotate {
            scene,
            gt,
            noise,
            seed,
            out,
        } => annotate(&scene, &gt, &noise, seed, &out),
        Command::InitJoints { ann, depth, camera, out } => init_joints_cmd(&ann, depth.as_deref(), camera.as_deref(), &out),
        Command::Simulate {
            scene,
            gt,
            plan,
            frames,
            out,
            rig,
            previews,
        } => simulate(&scene, &gt, &plan, frames, &out, rig.as_deref(), previews),
        Command::Refine {
            scene,
            seq,
            init,
            out,
            config,
            loss,
            gt,
        } => refine_cmd(&scene, &seq, &init, &out, config.as_deref(), loss.as_deref(), gt.as_deref()),
        Command::Evaluate { result, gt, out } => evaluate(&result, &gt, &out),
        Command::Experiment { config, out } => experiment(&config, &out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
