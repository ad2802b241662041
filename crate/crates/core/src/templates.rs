//! Procedural articulated objects built directly from Gaussians.
//!
//! Objects stand on the z = 0 plane with z up and their front facing -y.
//! Every part is a set of thin, textured, single-layer panels. Joint axes are
//! oriented so that a positive articulation value opens the part.

use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{GaussianSphere, JointSpec, Scene};

/// Logit magnitude used for one-hot part membership.
pub const MEMBER_LOGIT: f64 = 6.0;

const PANEL_THICKNESS: f64 = 0.004;
const FOOTPRINT: f64 = 0.75;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Template {
    #[serde(rename = "door")]
    Door,
    #[serde(rename = "drawer")]
    Drawer,
    #[serde(rename = "cabinet2part")]
    Cabinet2Part,
    #[serde(rename = "microwave")]
    Microwave,
}

impl Template {
    pub const ALL: [Template; 4] = [Template::Door, Template::Drawer, Template::Cabinet2Part, Template::Microwave];

    pub fn name(self) -> &'static str {
        match self {
            Template::Door => "door",
            Template::Drawer => "drawer",
            Template::Cabinet2Part => "cabinet2part",
            Template::Microwave => "microwave",
        }
    }
}

impl fmt::Display for Template {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Template {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "door" => Ok(Template::Door),
            "drawer" => Ok(Template::Drawer),
            "cabinet2part" | "cabinet" => Ok(Template::Cabinet2Part),
            "microwave" => Ok(Template::Microwave),
            other => Err(Error::Config(format!("unknown object template '{other}'"))),
        }
    }
}

/// A generated object with its ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArticulatedObject {
    pub template: Template,
    pub scene: Scene,
    pub joints: Vec<JointSpec>,
    /// Handle position per part, in the rest configuration.
    pub grasp_points: Vec<Vector3<f64>>,
    /// Articulation range per part.
    pub limits: Vec<(f64, f64)>,
    /// Default opening amount per part.
    pub target_deltas: Vec<f64>,
}

/// Everything about an object except its Gaussians: the ground-truth
/// file written next to a scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectTruth {
    pub template: Template,
    pub joints: Vec<JointSpec>,
    pub grasp_points: Vec<Vector3<f64>>,
    pub limits: Vec<(f64, f64)>,
    pub target_deltas: Vec<f64>,
}

impl ArticulatedObject {
    pub fn part_count(&self) -> usize {
        self.joints.len()
    }

    pub fn truth(&self) -> ObjectTruth {
        ObjectTruth {
            template: self.template,
            joints: self.joints.clone(),
            grasp_points: self.grasp_points.clone(),
            limits: self.limits.clone(),
            target_deltas: self.target_deltas.clone(),
        }
    }

    pub fn from_parts(scene: Scene, truth: ObjectTruth) -> Result<Self> {
        let k = truth.joints.len();
        if scene.part_count != k
            || truth.grasp_points.len() != k
            || truth.limits.len() != k
            || truth.target_deltas.len() != k
        {
            return Err(Error::Dimension(format!(
                "scene has {} parts but the ground truth describes {k} joints",
                scene.part_count
            )));
        }
        scene.validate()?;
        Ok(ArticulatedObject {
            template: truth.template,
            scene,
            joints: truth.joints,
            grasp_points: truth.grasp_points,
            limits: truth.limits,
            target_deltas: truth.target_deltas,
        })
    }
}

/// Surface texture: a base color modulated by two sinusoids and jitter.
#[derive(Debug, Clone, Copy)]
struct Texture {
    color: Vector3<f64>,
    period: (f64, f64),
    phase: f64,
    jitter: f64,
}

impl Texture {
    fn random(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Self {
        let color = Vector3::from_fn(|_, _| rng.random_range(lo..hi));
        Texture {
            color,
            period: (rng.random_range(0.06..0.14), rng.random_range(0.1..0.25)),
            phase: rng.random_range(0.0..TAU),
            jitter: 0.03,
        }
    }

    fn sample(&self, a: f64, b: f64, rng: &mut ChaCha8Rng) -> Vector3<f64> {
        let m = 0.8 + 0.12 * (TAU * a / self.period.0 + self.phase).sin() + 0.08 * (TAU * b / self.period.1).cos();
        (self.color * m).map(|c| (c + rng.random_range(-self.jitter..self.jitter)).clamp(0.0, 1.0))
    }
}

struct Builder {
    rng: ChaCha8Rng,
    bones: usize,
    gaussians: Vec<GaussianSphere>,
}

impl Builder {
    fn new(seed: u64, parts: usize) -> Self {
        Builder {
            rng: ChaCha8Rng::seed_from_u64(seed),
            bones: parts + 1,
            gaussians: Vec::new(),
        }
    }

    fn logits(&self, bone: usize) -> Vec<f64> {
        (0..self.bones)
            .map(|j| if j == bone { MEMBER_LOGIT } else { -MEMBER_LOGIT })
            .collect()
    }

    /// Rectangular grid of flat splats centered at `center`, spanning
    /// `±half_a` and `±half_b`.
    fn panel(
        &mut self,
        center: Vector3<f64>,
        half_a: Vector3<f64>,
        half_b: Vector3<f64>,
        spacing: f64,
        texture: &Texture,
        opacity: f64,
        bone: usize,
    ) {
        let na = ((2.0 * half_a.norm() / spacing).round() as usize).max(1);
        let nb = ((2.0 * half_b.norm() / spacing).round() as usize).max(1);
        let ea = half_a.normalize();
        let eb = half_b.normalize();
        let n = ea.cross(&eb).normalize();
        let rot = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[
            ea, eb, n,
        ])));
        let sa = FOOTPRINT * 2.0 * half_a.norm() / na as f64;
        let sb = FOOTPRINT * 2.0 * half_b.norm() / nb as f64;
        let logits = self.logits(bone);
        for i in 0..na {
            for k in 0..nb {
                let ta = 2.0 * (i as f64 + 0.5) / na as f64 - 1.0;
                let tb = 2.0 * (k as f64 + 0.5) / nb as f64 - 1.0;
                let p = center + half_a * ta + half_b * tb;
                let color = texture.sample(p.dot(&ea), p.dot(&eb), &mut self.rng);
                self.gaussians.push(GaussianSphere {
                    mean: p,
                    rotation: rot,
                    scale: Vector3::new(sa, sb, PANEL_THICKNESS),
                    opacity,
                    color,
                    skin_logits: logits.clone(),
                });
            }
        }
    }

    /// Axis-aligned box surface without its -y face. `open_top` also omits
    /// the top.
    #[allow(clippy::too_many_arguments)]
    fn open_box(
        &mut self,
        lo: Vector3<f64>,
        hi: Vector3<f64>,
        spacing: f64,
        outside: &Texture,
        inside: &Texture,
        bone: usize,
        open_top: bool,
    ) {
        let c = (lo + hi) * 0.5;
        let h = (hi - lo) * 0.5;
        let (x, y, z) = (Vector3::x() * h.x, Vector3::y() * h.y, Vector3::z() * h.z);
        self.panel(Vector3::new(c.x, hi.y, c.z), x, z, spacing, inside, 0.97, bone);
        self.panel(Vector3::new(lo.x, c.y, c.z), y, z, spacing, outside, 0.97, bone);
        self.panel(Vector3::new(hi.x, c.y, c.z), y, z, spacing, outside, 0.97, bone);
        self.panel(Vector3::new(c.x, c.y, lo.z), x, y, spacing, inside, 0.97, bone);
        if !open_top {
            self.panel(Vector3::new(c.x, c.y, hi.z), x, y, spacing, outside, 0.97, bone);
        }
    }

    /// Small protruding block at `at`, facing -y.
    fn handle(&mut self, at: Vector3<f64>, half_width: f64, half_height: f64, texture: &Texture, bone: usize) {
        let spacing = (half_width.min(half_height) * 2.0 / 3.0).max(0.004);
        self.panel(
            at,
            Vector3::x() * half_width,
            Vector3::z() * half_height,
            spacing,
            texture,
            0.99,
            bone,
        );
    }

    fn finish(self) -> Scene {
        Scene {
            part_count: self.bones - 1,
            gaussians: self.gaussians,
        }
    }
}

fn body_textures(rng: &mut ChaCha8Rng) -> (Texture, Texture, Texture, Texture) {
    let outside = Texture::random(rng, 0.25, 0.55);
    let inside = Texture::random(rng, 0.6, 0.9);
    let front = Texture::random(rng, 0.35, 0.85);
    let handle = Texture {
        color: Vector3::from_fn(|_, _| rng.random_range(0.02..0.12)),
        period: (1.0, 1.0),
        phase: 0.0,
        jitter: 0.01,
    };
    (outside, inside, front, handle)
}

/// Hinged panel covering `[x0, x1] × [z0, z1]` on the front plane, hinge on
/// the left edge, handle near the right edge. Returns joint, grasp point.
#[allow(clippy::too_many_arguments)]
fn hinged_panel(
    b: &mut Builder,
    x0: f64,
    x1: f64,
    z0: f64,
    z1: f64,
    front_y: f64,
    spacing: f64,
    texture: &Texture,
    handle: &Texture,
    bone: usize,
) -> Result<(JointSpec, Vector3<f64>)> {
    let center = Vector3::new(0.5 * (x0 + x1), front_y, 0.5 * (z0 + z1));
    b.panel(
        center,
        Vector3::x() * (0.5 * (x1 - x0)),
        Vector3::z() * (0.5 * (z1 - z0)),
        spacing,
        texture,
        0.99,
        bone,
    );
    // The hinge line runs inside the panel so it stays covered in every view.
    let hinge_x = x0 + 2.0 * spacing;
    let grasp = Vector3::new(x1 - 0.06, front_y - 0.015, center.z);
    b.handle(grasp, 0.012, (0.12 * (z1 - z0)).min(0.06), handle, bone);
    // Rotating about -z swings the free edge toward -y.
    let joint = JointSpec::revolute(-Vector3::z(), Vector3::new(hinge_x, front_y, center.z))?;
    Ok((joint, grasp))
}

/// Drawer with its front on the front plane covering `[x0, x1] × [z0, z1]`,
/// sliding along -y. Returns joint, grasp point and travel.
#[allow(clippy::too_many_arguments)]
fn drawer(
    b: &mut Builder,
    x0: f64,
    x1: f64,
    z0: f64,
    z1: f64,
    front_y: f64,
    depth: f64,
    spacing: f64,
    front: &Texture,
    inside: &Texture,
    handle: &Texture,
    bone: usize,
) -> Result<(JointSpec, Vector3<f64>, f64)> {
    let center = Vector3::new(0.5 * (x0 + x1), front_y, 0.5 * (z0 + z1));
    b.panel(
        center,
        Vector3::x() * (0.5 * (x1 - x0)),
        Vector3::z() * (0.5 * (z1 - z0)),
        spacing,
        front,
        0.99,
        bone,
    );
    let inset = 0.02;
    let lo = Vector3::new(x0 + inset, front_y + 0.01, z0 + inset);
    let hi = Vector3::new(x1 - inset, front_y + depth, z1 - 0.3 * (z1 - z0));
    b.open_box(lo, hi, 1.5 * spacing, inside, inside, bone, true);
    let grasp = Vector3::new(center.x, front_y - 0.015, center.z);
    b.handle(grasp, (0.15 * (x1 - x0)).min(0.07), 0.012, handle, bone);
    let joint = JointSpec::prismatic(-Vector3::y(), center)?;
    Ok((joint, grasp, depth - 0.03))
}

fn door(seed: u64) -> Result<ArticulatedObject> {
    let mut b = Builder::new(seed, 1);
    let w = b.rng.random_range(0.6..0.8);
    let h = b.rng.random_range(0.8..1.0);
    let d = b.rng.random_range(0.4..0.5);
    let (outside, inside, front, handle) = body_textures(&mut b.rng);
    b.open_box(Vector3::new(-0.5 * w, -0.5 * d, 0.0), Vector3::new(0.5 * w, 0.5 * d, h), 0.045, &outside, &inside, 0, false);
    let (joint, grasp) = hinged_panel(&mut b, -0.5 * w, 0.5 * w, 0.0, h, -0.5 * d - 0.01, 0.03, &front, &handle, 1)?;
    Ok(ArticulatedObject {
        template: Template::Door,
        scene: b.finish(),
        joints: vec![joint],
        grasp_points: vec![grasp],
        limits: vec![(0.0, 1.9)],
        target_deltas: vec![1.0],
    })
}

fn drawer_object(seed: u64) -> Result<ArticulatedObject> {
    let mut b = Builder::new(seed, 1);
    let w = b.rng.random_range(0.5..0.7);
    let h = b.rng.random_range(0.3..0.45);
    let d = b.rng.random_range(0.4..0.5);
    let (outside, inside, front, handle) = body_textures(&mut b.rng);
    b.open_box(Vector3::new(-0.5 * w, -0.5 * d, 0.0), Vector3::new(0.5 * w, 0.5 * d, h), 0.03, &outside, &inside, 0, false);
    let (joint, grasp, travel) = drawer(
        &mut b,
        -0.5 * w,
        0.5 * w,
        0.0,
        h,
        -0.5 * d - 0.01,
        d - 0.06,
        0.025,
        &front,
        &inside,
        &handle,
        1,
    )?;
    Ok(ArticulatedObject {
        template: Template::Drawer,
        scene: b.finish(),
        joints: vec![joint],
        grasp_points: vec![grasp],
        limits: vec![(0.0, travel)],
        target_deltas: vec![0.2],
    })
}

fn cabinet(seed: u64) -> Result<ArticulatedObject> {
    let mut b = Builder::new(seed, 2);
    let w = b.rng.random_range(0.6..0.8);
    let h = b.rng.random_range(0.9..1.1);
    let d = b.rng.random_range(0.4..0.5);
    let split = b.rng.random_range(0.28..0.35) * h;
    let (outside, inside, front, handle) = body_textures(&mut b.rng);
    let front2 = Texture::random(&mut b.rng, 0.35, 0.85);
    b.open_box(Vector3::new(-0.5 * w, -0.5 * d, 0.0), Vector3::new(0.5 * w, 0.5 * d, h), 0.05, &outside, &inside, 0, false);
    let fy = -0.5 * d - 0.01;
    let (door_joint, door_grasp) = hinged_panel(&mut b, -0.5 * w, 0.5 * w, split, h, fy, 0.03, &front, &handle, 1)?;
    let (drawer_joint, drawer_grasp, travel) = drawer(
        &mut b,
        -0.5 * w,
        0.5 * w,
        0.0,
        split - 0.005,
        fy,
        d - 0.06,
        0.03,
        &front2,
        &inside,
        &handle,
        2,
    )?;
    Ok(ArticulatedObject {
        template: Template::Cabinet2Part,
        scene: b.finish(),
        joints: vec![door_joint, drawer_joint],
        grasp_points: vec![door_grasp, drawer_grasp],
        limits: vec![(0.0, 1.9), (0.0, travel)],
        target_deltas: vec![1.0, 0.2],
    })
}

fn microwave(seed: u64) -> Result<ArticulatedObject> {
    let mut b = Builder::new(seed, 1);
    let w = b.rng.random_range(0.45..0.6);
    let h = b.rng.random_range(0.28..0.36);
    let d = b.rng.random_range(0.32..0.4);
    let (outside, inside, front, handle) = body_textures(&mut b.rng);
    b.open_box(Vector3::new(-0.5 * w, -0.5 * d, 0.0), Vector3::new(0.5 * w, 0.5 * d, h), 0.03, &outside, &inside, 0, false);
    let fy = -0.5 * d - 0.01;
    let split = 0.5 * w - 0.25 * w;
    // Fixed control panel on the right of the door.
    b.panel(
        Vector3::new(0.5 * (split + 0.5 * w), fy, 0.5 * h),
        Vector3::x() * (0.5 * (0.5 * w - split)),
        Vector3::z() * (0.5 * h),
        0.02,
        &outside,
        0.99,
        0,
    );
    let (joint, grasp) = hinged_panel(&mut b, -0.5 * w, split, 0.0, h, fy - 0.002, 0.02, &front, &handle, 1)?;
    Ok(ArticulatedObject {
        template: Template::Microwave,
        scene: b.finish(),
        joints: vec![joint],
        grasp_points: vec![grasp],
        limits: vec![(0.0, 1.9)],
        target_deltas: vec![1.2],
    })
}

/// Builds `template` with dimensions and colors drawn from `seed`.
pub fn generate_object(template: Template, seed: u64) -> Result<ArticulatedObject> {
    let obj = match template {
        Template::Door => door(seed),
        Template::Drawer => drawer_object(seed),
        Template::Cabinet2Part => cabinet(seed),
        Template::Microwave => microwave(seed),
    }?;
    obj.scene.validate()?;
    Ok(obj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::JointType;

    #[test]
    fn template_structure() {
        let d = generate_object(Template::Door, 1).unwrap();
        assert_eq!(d.joints.len(), 1);
        assert_eq!(d.joints[0].joint_type, JointType::Revolute);
        assert!(d.joints[0].axis.cross(&Vector3::z()).norm() < 1e-12);

        let c = generate_object(Template::Cabinet2Part, 1).unwrap();
        let types: Vec<_> = c.joints.iter().map(|j| j.joint_type).collect();
        assert_eq!(types, vec![JointType::Revolute, JointType::Prismatic]);
    }

    #[test]
    fn same_seed_is_bit_identical() {
        for t in Template::ALL {
            let a = serde_json::to_string(&generate_object(t, 7).unwrap()).unwrap();
            let b = serde_json::to_string(&generate_object(t, 7).unwrap()).unwrap();
            assert_eq!(a, b);
            let c = serde_json::to_string(&generate_object(t, 8).unwrap()).unwrap();
            assert_ne!(a, c);
        }
    }

    #[test]
    fn part_sizes_and_membership() {
        for t in Template::ALL {
            for seed in 0..5 {
                let obj = generate_object(t, seed).unwrap();
                let owners = obj.scene.dominant_parts();
                for part in 0..=obj.part_count() {
                    let n = owners.iter().filter(|&&o| o == part).count();
                    assert!((200..=2000).contains(&n), "{t} seed {seed} part {part}: {n} gaussians");
                }
                for g in &obj.scene.gaussians {
                    let hot = g.skin_logits.iter().filter(|&&l| l == MEMBER_LOGIT).count();
                    assert_eq!(hot, 1);
                }
            }
        }
    }

    #[test]
    fn hinge_sits_at_panel_edge() {
        let obj = generate_object(Template::Door, 3).unwrap();
        let owners = obj.scene.dominant_parts();
        let min_x = obj
            .scene
            .gaussians
            .iter()
            .zip(&owners)
            .filter(|(_, &o)| o == 1)
            .map(|(g, _)| g.mean.x)
            .fold(f64::INFINITY, f64::min);
        let hinge = obj.joints[0].origin.x;
        assert!(hinge > min_x && hinge - min_x < 0.1);
    }

    #[test]
    fn names_parse() {
        for t in Template::ALL {
            assert_eq!(t.name().parse::<Template>().unwrap(), t);
        }
        assert!(matches!("sofa".parse::<Template>(), Err(Error::Config(_))));
    }
}
