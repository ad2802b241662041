//! Joint initialization from 2D part annotations and a depth map: PCA line
//! fits on unprojected samples give revolute axes, and the cross product of
//! two in-face directions gives prismatic axes.

use nalgebra::{Matrix3, SymmetricEigen, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{Camera, Image, JointSpec, JointType, Scene};

pub const DEFAULT_SAMPLES: usize = 32;
/// Components with eigenvalue below this fraction of the largest are discarded.
pub const EIGEN_RATIO_MIN: f64 = 0.01;
const SPREAD_MIN: f64 = 1e-10;
const CROSS_MIN: f64 = 1e-6;
/// Fraction of the bbox width/height skipped at each end of a mid-line.
/// Narrowest bbox side, in pixels, that still spans a plane.
const MIN_BBOX_PX: f64 = 2.0;
const BBOX_INSET: f64 = 0.1;

/// One movable part as a 2D detector would report it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartAnnotation {
    /// `[[x1, y1], [x2, y2]]`, top-left then bottom-right.
    pub bbox: [[f64; 2]; 2],
    pub joint_type: JointType,
    /// Joint line endpoints `[x1, y1, x2, y2]`.
    pub vertices: [f64; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub handle_bbox: Option<[[f64; 2]; 2]>,
}

impl PartAnnotation {
    pub fn endpoints(&self) -> (Vector2<f64>, Vector2<f64>) {
        let v = &self.vertices;
        (Vector2::new(v[0], v[1]), Vector2::new(v[2], v[3]))
    }

    pub fn validate(&self, cam: &Camera) -> Result<()> {
        let [[x1, y1], [x2, y2]] = self.bbox;
        if !(x1 < x2 && y1 < y2) {
            return Err(Error::InvalidInput(format!("bbox {:?} is not ordered", self.bbox)));
        }
        let inside = |x: f64, y: f64| cam.contains_pixel(&Vector2::new(x, y));
        if !inside(x1, y1) || !inside(x2, y2) {
            return Err(Error::Visibility(format!("bbox {:?} leaves the image", self.bbox)));
        }
        if self.joint_type == JointType::Revolute {
            let (a, b) = self.endpoints();
            if !cam.contains_pixel(&a) || !cam.contains_pixel(&b) {
                return Err(Error::Visibility(format!("joint line {:?} leaves the image", self.vertices)));
            }
        }
        Ok(())
    }
}

/// Annotation noise. Revolute lines are rotated in the image about their
/// midpoint by a random angle in `[angle_min_deg, angle_max_deg]` with a
/// random sign; all annotated pixels get Gaussian jitter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    pub pixel_sigma: f64,
    pub angle_min_deg: f64,
    pub angle_max_deg: f64,
    pub bbox_sigma: f64,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            pixel_sigma: 0.5,
            angle_min_deg: 15.0,
            angle_max_deg: 25.0,
            bbox_sigma: 1.0,
            seed: 0,
        }
    }
}

impl NoiseConfig {
    pub fn noiseless() -> Self {
        NoiseConfig {
            pixel_sigma: 0.0,
            angle_min_deg: 0.0,
            angle_max_deg: 0.0,
            bbox_sigma: 0.0,
            seed: 0,
        }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        NoiseConfig { seed, ..self }
    }

    fn validate(&self) -> Result<()> {
        let ok = self.pixel_sigma >= 0.0
            && self.bbox_sigma >= 0.0
            && self.angle_min_deg >= 0.0
            && self.angle_max_deg >= self.angle_min_deg
            && self.angle_max_deg.is_finite()
            && self.pixel_sigma.is_finite()
            && self.bbox_sigma.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid noise config {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationSet {
    #[serde(default)]
    pub image: String,
    #[serde(default)]
    pub depth: String,
    #[serde(default)]
    pub camera: String,
    pub parts: Vec<PartAnnotation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseConfig>,
}

/// World point seen at `pixel` with the depth-map value nearest to it.
pub fn unproject(pixel: &Vector2<f64>, depth_map: &Image, cam: &Camera) -> Result<Vector3<f64>> {
    let z = depth_map.depth_at(pixel).unwrap_or(0.0);
    if !(z > 0.0 && z.is_finite()) {
        return Err(Error::NoDepth { x: pixel.x, y: pixel.y });
    }
    Ok(unproject_with_depth(pixel, z, cam))
}

fn unproject_with_depth(pixel: &Vector2<f64>, z: f64, cam: &Camera) -> Vector3<f64> {
    let k = &cam.intrinsics;
    let pc = Vector3::new(z * (pixel.x - k.cx) / k.fx, z * (pixel.y - k.cy) / k.fy, z);
    cam.extrinsics.inverse().apply(&pc)
}

/// Unprojects `n` evenly spaced samples from `a` to `b` (both included),
/// skipping those without depth.
fn sample_segment(a: &Vector2<f64>, b: &Vector2<f64>, n: usize, depth_map: &Image, cam: &Camera) -> Vec<Vector3<f64>> {
    (0..n)
        .filter_map(|i| {
            let s = if n == 1 { 0.5 } else { i as f64 / (n - 1) as f64 };
            unproject(&(a + (b - a) * s), depth_map, cam).ok()
        })
        .collect()
}

/// Principal direction and centroid of `points`, with the eigenvalue filter
/// applied. The direction's largest-magnitude component is positive.
fn principal_direction(points: &[Vector3<f64>]) -> Result<(Vector3<f64>, Vector3<f64>)> {
    if points.len() < 3 {
        return Err(Error::InsufficientDepth {
            found: points.len(),
            required: 3,
        });
    }
    let n = points.len() as f64;
    let mean = points.iter().sum::<Vector3<f64>>() / n;
    let cov = points
        .iter()
        .map(|p| (p - mean) * (p - mean).transpose())
        .sum::<Matrix3<f64>>()
        / n;
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let top = eig.eigenvalues[order[0]];
    if !(top >= SPREAD_MIN) {
        return Err(Error::DegenerateGeometry(format!("sample spread {top:e} is too small")));
    }
    // Only the leading component survives the filter for a line; the
    // retained set is what defines the axis.
    let retained: Vec<usize> = order
        .iter()
        .copied()
        .filter(|&i| eig.eigenvalues[i] >= EIGEN_RATIO_MIN * top)
        .collect();
    let mut dir = eig.eigenvectors.column(retained[0]).into_owned().normalize();
    let big = dir.iamax();
    if dir[big] < 0.0 {
        dir = -dir;
    }
    Ok((dir, mean))
}

pub fn estimate_revolute(
    p1: &Vector2<f64>,
    p2: &Vector2<f64>,
    depth_map: &Image,
    cam: &Camera,
    n_samples: usize,
) -> Result<(Vector3<f64>, Vector3<f64>)> {
    if n_samples < 3 {
        return Err(Error::InvalidInput(format!("need at least 3 samples, got {n_samples}")));
    }
    let pts = sample_segment(p1, p2, n_samples, depth_map, cam);
    principal_direction(&pts)
}

/// Face normal of the part inside `bbox`, oriented toward the camera.
pub fn estimate_prismatic(bbox: &[[f64; 2]; 2], depth_map: &Image, cam: &Camera) -> Result<Vector3<f64>> {
    let [[x1, y1], [x2, y2]] = *bbox;
    if x2 - x1 < MIN_BBOX_PX || y2 - y1 < MIN_BBOX_PX {
        return Err(Error::DegenerateGeometry(format!("bbox {bbox:?} is too small")));
    }
    let (xm, ym) = (0.5 * (x1 + x2), 0.5 * (y1 + y2));
    let (ix, iy) = (BBOX_INSET * (x2 - x1), BBOX_INSET * (y2 - y1));
    let horiz = sample_segment(
        &Vector2::new(x1 + ix, ym),
        &Vector2::new(x2 - ix, ym),
        DEFAULT_SAMPLES,
        depth_map,
        cam,
    );
    let vert = sample_segment(
        &Vector2::new(xm, y1 + iy),
        &Vector2::new(xm, y2 - iy),
        DEFAULT_SAMPLES,
        depth_map,
        cam,
    );
    let (dh, _) = principal_direction(&horiz)?;
    let (dv, _) = principal_direction(&vert)?;
    let n = dh.cross(&dv);
    if n.norm() < CROSS_MIN {
        return Err(Error::DegenerateGeometry("bbox mid-line directions are parallel".into()));
    }
    let n = n.normalize();
    Ok(if n.dot(&cam.forward()) > 0.0 { -n } else { n })
}

fn init_part(part: &PartAnnotation, depth_map: &Image, cam: &Camera) -> Result<JointSpec> {
    match part.joint_type {
        JointType::Revolute => {
            let (a, b) = part.endpoints();
            let (axis, origin) = estimate_revolute(&a, &b, depth_map, cam, DEFAULT_SAMPLES)?;
            JointSpec::revolute(axis, origin)
        }
        JointType::Prismatic => {
            let axis = estimate_prismatic(&part.bbox, depth_map, cam)?;
            let [[x1, y1], [x2, y2]] = part.bbox;
            let origin = unproject(&Vector2::new(0.5 * (x1 + x2), 0.5 * (y1 + y2)), depth_map, cam)?;
            JointSpec::prismatic(axis, origin)
        }
    }
}

/// One joint per annotated part, in annotation order.
pub fn init_joints(annotations: &AnnotationSet, depth_map: &Image, cam: &Camera) -> Result<Vec<JointSpec>> {
    if depth_map.width != cam.width || depth_map.height != cam.height {
        return Err(Error::Dimension("depth map does not match the camera".into()));
    }
    annotations
        .parts
        .iter()
        .enumerate()
        .map(|(i, p)| init_part(p, depth_map, cam).map_err(|e| Error::part(i, e)))
        .collect()
}

fn project_all(points: impl Iterator<Item = Vector3<f64>>, cam: &Camera) -> Result<Vec<Vector2<f64>>> {
    points
        .map(|p| {
            cam.project(&p)
                .map(|(px, _)| px)
                .ok_or_else(|| Error::Visibility("part lies behind the camera".into()))
        })
        .collect()
}

/// Builds annotations from ground truth: part bboxes from the projected
/// Gaussian means of each part, revolute joint lines from the part's extent
/// along the true axis. Noise per `noise`.
pub fn synthesize_annotations(
    gt_scene: &Scene,
    gt_joints: &[JointSpec],
    cam: &Camera,
    noise: &NoiseConfig,
) -> Result<AnnotationSet> {
    noise.validate()?;
    if gt_joints.len() != gt_scene.part_count {
        return Err(Error::Dimension(format!(
            "{} joints for {} parts",
            gt_joints.len(),
            gt_scene.part_count
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let px_noise = Normal::new(0.0, noise.pixel_sigma.max(f64::MIN_POSITIVE)).expect("finite sigma");
    let bbox_noise = Normal::new(0.0, noise.bbox_sigma.max(f64::MIN_POSITIVE)).expect("finite sigma");
    let owners = gt_scene.dominant_parts();
    let mut parts = Vec::with_capacity(gt_joints.len());
    for (k, joint) in gt_joints.iter().enumerate() {
        let members: Vec<Vector3<f64>> = gt_scene
            .gaussians
            .iter()
            .zip(&owners)
            .filter(|(_, &o)| o == k + 1)
            .map(|(g, _)| g.mean)
            .collect();
        if members.is_empty() {
            return Err(Error::part(k, Error::InvalidInput("part has no Gaussians".into())));
        }
        let px = project_all(members.iter().copied(), cam).map_err(|e| Error::part(k, e))?;
        let lo = px.iter().fold(Vector2::repeat(f64::INFINITY), |a, p| a.inf(p));
        let hi = px.iter().fold(Vector2::repeat(f64::NEG_INFINITY), |a, p| a.sup(p));
        let mut bbox = [[lo.x, lo.y], [hi.x, hi.y]];
        if noise.bbox_sigma > 0.0 {
            for c in bbox.iter_mut().flatten() {
                *c += rng.sample(bbox_noise);
            }
        }

        let mut vertices = [0.0; 4];
        if joint.joint_type == JointType::Revolute {
            let u = joint.axis.normalize();
            let ts: Vec<f64> = members.iter().map(|m| (m - joint.origin).dot(&u)).collect();
            let (t0, t1) = ts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &t| (a.min(t), b.max(t)));
            let pad = 0.05 * (t1 - t0);
            let ends = project_all(
                [joint.origin + u * (t0 + pad), joint.origin + u * (t1 - pad)].into_iter(),
                cam,
            )
            .map_err(|e| Error::part(k, e))?;
            let (mut a, mut b) = (ends[0], ends[1]);
            if noise.angle_max_deg > 0.0 {
                let mag = rng.random_range(noise.angle_min_deg..=noise.angle_max_deg).to_radians();
                let phi = if rng.random::<bool>() { mag } else { -mag };
                let mid = (a + b) * 0.5;
                let (s, c) = phi.sin_cos();
                let rot = |p: Vector2<f64>| {
                    let d = p - mid;
                    mid + Vector2::new(c * d.x - s * d.y, s * d.x + c * d.y)
                };
                a = rot(a);
                b = rot(b);
                // Keep the tilted line on the part so every sample hits it.
                let margin = 0.1 * (hi.x - lo.x);
                let shift = (lo.x + margin - a.x.min(b.x)).max(0.0) + (hi.x - margin - a.x.max(b.x)).min(0.0);
                a.x += shift;
                b.x += shift;
            }
            if noise.pixel_sigma > 0.0 {
                a += Vector2::new(rng.sample(px_noise), rng.sample(px_noise));
                b += Vector2::new(rng.sample(px_noise), rng.sample(px_noise));
            }
            vertices = [a.x, a.y, b.x, b.y];
        }
        let part = PartAnnotation {
            bbox,
            joint_type: joint.joint_type,
            vertices,
            handle_bbox: None,
        };
        part.validate(cam).map_err(|e| Error::part(k, e))?;
        parts.push(part);
    }
    Ok(AnnotationSet {
        image: String::new(),
        depth: String::new(),
        camera: String::new(),
        parts,
        noise: Some(*noise),
    })
}
