//! Gaussian splat rendering: perspective projection of 3D Gaussians,
//! depth-ordered alpha compositing and RGB-D image synthesis.
//!
//! Every pixel gathers the projected Gaussians whose 2D mean lies within a
//! cutoff radius and composites them front to back in global view-depth
//! order. Screen tiles are only used to shortlist candidates; the per-pixel
//! test is exact, so output does not depend on the tile size.

mod backward;
mod gradients;

pub use gradients::{loss_gradients, LossGradients};
pub(crate) use backward::{render_backward_raster, GaussianGrad};

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{deform_scene, Pose};
use crate::scene::{Camera, GaussianSphere, Image, JointSpec, Scene};

/// Low-pass dilation added to every projected covariance, in px^2.
pub const LOW_PASS: f64 = 0.3;

const TILE: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderConfig {
    /// Minimum gather radius in standard deviations of the major axis.
    pub cutoff_sigma: f64,
    /// Per-pixel alphas below this are dropped.
    pub alpha_min: f64,
    /// Per-pixel alphas are clamped to this value.
    pub alpha_max: f64,
    /// Compositing stops once transmittance falls below this.
    pub transmittance_stop: f64,
    /// Camera-frame depth below which a Gaussian is culled.
    pub near: f64,
    pub background: [f64; 3],
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            cutoff_sigma: 3.0,
            alpha_min: 1.0 / 255.0,
            alpha_max: 0.99,
            transmittance_stop: 1e-4,
            near: 0.01,
            background: [0.0; 3],
        }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.cutoff_sigma >= 1.0
            && self.alpha_min > 0.0
            && self.alpha_max > self.alpha_min
            && self.alpha_max < 1.0
            && self.transmittance_stop > 0.0
            && self.near > 0.0
            && self.background.iter().all(|c| c.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid render config {self:?}")))
        }
    }
}

/// A Gaussian after projection onto the image plane.
#[derive(Debug, Clone, PartialEq)]
pub struct Projected2D {
    pub mean2d: Vector2<f64>,
    /// Screen-space covariance including the low-pass term.
    pub cov2d: Matrix2<f64>,
    pub conic: Matrix2<f64>,
    pub view_depth: f64,
    pub color: Vector3<f64>,
    pub opacity: f64,
    /// Index of the source Gaussian in its scene.
    pub source: usize,
}

impl Projected2D {
    fn max_eigenvalue(&self) -> f64 {
        let a = self.cov2d[(0, 0)];
        let b = self.cov2d[(0, 1)];
        let c = self.cov2d[(1, 1)];
        let mid = 0.5 * (a + c);
        mid + (0.25 * (a - c) * (a - c) + b * b).sqrt()
    }

    /// Gather radius: at least `cutoff_sigma` standard deviations and never
    /// less than the distance at which the alpha can still reach `alpha_min`.
    pub fn radius(&self, cfg: &RenderConfig) -> f64 {
        if self.opacity <= cfg.alpha_min {
            return 0.0;
        }
        let sigmas = cfg.cutoff_sigma.max((2.0 * (self.opacity / cfg.alpha_min).ln()).sqrt());
        sigmas * self.max_eigenvalue().sqrt()
    }
}

/// Camera-frame quantities shared by the forward and backward projection.
pub(crate) struct ProjectionFrame {
    pub p_cam: Vector3<f64>,
    pub jacobian: Matrix2x3<f64>,
    pub cov_cam: Matrix3<f64>,
}

pub(crate) fn projection_frame(mean: &Vector3<f64>, cov: &Matrix3<f64>, cam: &Camera) -> ProjectionFrame {
    let w = cam.extrinsics.rotation();
    let p = cam.to_camera(mean);
    let k = &cam.intrinsics;
    let (x, y, z) = (p.x, p.y, p.z);
    let jacobian = Matrix2x3::new(k.fx / z, 0.0, -k.fx * x / (z * z), 0.0, k.fy / z, -k.fy * y / (z * z));
    ProjectionFrame {
        p_cam: p,
        jacobian,
        cov_cam: w * cov * w.transpose(),
    }
}

/// Projects `g`; `None` when the Gaussian is behind the near plane.
pub fn project_gaussian(g: &GaussianSphere, cam: &Camera, cfg: &RenderConfig) -> Option<Projected2D> {
    project_with_index(g, 0, cam, cfg)
}

fn project_with_index(g: &GaussianSphere, source: usize, cam: &Camera, cfg: &RenderConfig) -> Option<Projected2D> {
    let p = cam.to_camera(&g.mean);
    if p.z <= cfg.near {
        return None;
    }
    let f = projection_frame(&g.mean, &g.covariance(), cam);
    let k = &cam.intrinsics;
    let mean2d = Vector2::new(k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy);
    let mut cov2d = f.jacobian * f.cov_cam * f.jacobian.transpose();
    cov2d[(0, 1)] = 0.5 * (cov2d[(0, 1)] + cov2d[(1, 0)]);
    cov2d[(1, 0)] = cov2d[(0, 1)];
    cov2d[(0, 0)] += LOW_PASS;
    cov2d[(1, 1)] += LOW_PASS;
    let conic = cov2d.try_inverse()?;
    Some(Projected2D {
        mean2d,
        cov2d,
        conic,
        view_depth: p.z,
        color: g.color,
        opacity: g.opacity,
        source,
    })
}

/// Front-to-back compositing of an already depth-sorted list of
/// `(color, alpha)` pairs. Returns the color (including background) and the
/// accumulated alpha.
pub fn composite_pixel(contributions: &[(Vector3<f64>, f64)], cfg: &RenderConfig) -> (Vector3<f64>, f64) {
    let mut t = 1.0;
    let mut c = Vector3::zeros();
    for (color, alpha) in contributions {
        c += color * (alpha * t);
        t *= 1.0 - alpha;
        if t < cfg.transmittance_stop {
            break;
        }
    }
    (c + Vector3::from(cfg.background) * t, 1.0 - t)
}

/// Projected Gaussians in compositing order plus per-tile candidate lists.
pub(crate) struct Raster {
    pub splats: Vec<Projected2D>,
    pub radii: Vec<f64>,
    /// Exponent below which a splat's alpha is certainly under `alpha_min`.
    power_floor: Vec<f64>,
    tiles_x: usize,
    tile_lists: Vec<Vec<u32>>,
}

impl Raster {
    pub fn build(gaussians: &[GaussianSphere], cam: &Camera, cfg: &RenderConfig) -> Raster {
        let mut splats: Vec<Projected2D> = gaussians
            .iter()
            .enumerate()
            .filter_map(|(i, g)| project_with_index(g, i, cam, cfg))
            .collect();
        splats.sort_by(|a, b| a.view_depth.total_cmp(&b.view_depth).then(a.source.cmp(&b.source)));
        let radii: Vec<f64> = splats.iter().map(|s| s.radius(cfg)).collect();
        let power_floor = splats
            .iter()
            .map(|s| (cfg.alpha_min / s.opacity).ln() - POWER_MARGIN)
            .collect();

        let tiles_x = cam.width.div_ceil(TILE);
        let tiles_y = cam.height.div_ceil(TILE);
        let mut tile_lists = vec![Vec::new(); tiles_x * tiles_y];
        let (wmax, hmax) = ((cam.width - 1) as f64, (cam.height - 1) as f64);
        for (i, (s, &r)) in splats.iter().zip(&radii).enumerate() {
            if r <= 0.0 {
                continue;
            }
            let (x0, x1) = ((s.mean2d.x - r).ceil(), (s.mean2d.x + r).floor());
            let (y0, y1) = ((s.mean2d.y - r).ceil(), (s.mean2d.y + r).floor());
            if x1 < 0.0 || y1 < 0.0 || x0 > wmax || y0 > hmax || x0 > x1 || y0 > y1 {
                continue;
            }
            let tx0 = x0.max(0.0) as usize / TILE;
            let tx1 = x1.min(wmax) as usize / TILE;
            let ty0 = y0.max(0.0) as usize / TILE;
            let ty1 = y1.min(hmax) as usize / TILE;
            for ty in ty0..=ty1 {
                for tx in tx0..=tx1 {
                    tile_lists[ty * tiles_x + tx].push(i as u32);
                }
            }
        }
        Raster {
            splats,
            radii,
            power_floor,
            tiles_x,
            tile_lists,
        }
    }

    pub fn candidates(&self, x: usize, y: usize) -> &[u32] {
        &self.tile_lists[(y / TILE) * self.tiles_x + x / TILE]
    }

    /// Visits the contributions of pixel `(x, y)` in compositing order as
    /// `(splat index, alpha, falloff, clamped)`, honoring the stop rule.
    #[inline]
    pub fn for_each_contribution(
        &self,
        x: usize,
        y: usize,
        cfg: &RenderConfig,
        mut f: impl FnMut(usize, f64, f64, bool, Vector2<f64>),
    ) {
        let pixel = Vector2::new(x as f64, y as f64);
        let mut t = 1.0;
        for &i in self.candidates(x, y) {
            let i = i as usize;
            let s = &self.splats[i];
            let r = self.radii[i];
            if (pixel - s.mean2d).norm_squared() > r * r {
                continue;
            }
            let d = pixel - s.mean2d;
            let power = -0.5 * (d.x * (s.conic[(0, 0)] * d.x + s.conic[(0, 1)] * d.y) + d.y * (s.conic[(1, 0)] * d.x + s.conic[(1, 1)] * d.y));
            if power < self.power_floor[i] {
                continue;
            }
            let g = power.exp();
            let raw = s.opacity * g;
            if raw < cfg.alpha_min {
                continue;
            }
            let clamped = raw > cfg.alpha_max;
            let alpha = if clamped { cfg.alpha_max } else { raw };
            f(i, alpha, g, clamped, d);
            t *= 1.0 - alpha;
            if t < cfg.transmittance_stop {
                break;
            }
        }
    }

    /// Color, depth and alpha of one pixel.
    pub fn shade(&self, x: usize, y: usize, cfg: &RenderConfig) -> ([f64; 3], f64, f64) {
        let mut t = 1.0;
        let mut c = Vector3::zeros();
        let mut z = 0.0;
        self.for_each_contribution(x, y, cfg, |i, alpha, _, _, _| {
            let s = &self.splats[i];
            let w = alpha * t;
            c += s.color * w;
            z += s.view_depth * w;
            t *= 1.0 - alpha;
        });
        let acc = 1.0 - t;
        let rgb = c + Vector3::from(cfg.background) * t;
        let depth = if acc > DEPTH_ALPHA_MIN { z / acc } else { 0.0 };
        ([rgb.x, rgb.y, rgb.z], depth, acc)
    }
}

/// Slack on the exponent pre-check so it never rejects a splat that the
/// exact alpha test would keep.
const POWER_MARGIN: f64 = 1e-9;

/// Accumulated alpha below which the depth channel reads as "no hit".
pub(crate) const DEPTH_ALPHA_MIN: f64 = 1e-6;

pub(crate) fn check_camera(cam: &Camera) -> Result<()> {
    if cam.width == 0 || cam.height == 0 {
        return Err(Error::Config("camera has zero resolution".into()));
    }
    cam.validate()
}

pub fn render(scene: &Scene, cam: &Camera, cfg: &RenderConfig) -> Result<Image> {
    render_gaussians(&scene.gaussians, cam, cfg)
}

pub(crate) fn render_gaussians(gaussians: &[GaussianSphere], cam: &Camera, cfg: &RenderConfig) -> Result<Image> {
    check_camera(cam)?;
    cfg.validate()?;
    let raster = Raster::build(gaussians, cam, cfg);
    Ok(rasterize(&raster, cam, cfg))
}

pub(crate) fn rasterize(raster: &Raster, cam: &Camera, cfg: &RenderConfig) -> Image {
    let (w, h) = (cam.width, cam.height);
    let rows: Vec<Vec<([f64; 3], f64, f64)>> = (0..h)
        .into_par_iter()
        .map(|y| (0..w).map(|x| raster.shade(x, y, cfg)).collect())
        .collect();
    let mut img = Image::new(w, h, cfg.background);
    for (y, row) in rows.into_iter().enumerate() {
        for (x, (rgb, depth, alpha)) in row.into_iter().enumerate() {
            let i = y * w + x;
            img.rgb[i] = rgb;
            img.depth[i] = depth;
            img.alpha[i] = alpha;
        }
    }
    img
}

pub fn render_articulated(
    scene: &Scene,
    joints: &[JointSpec],
    pose: &Pose,
    cam: &Camera,
    cfg: &RenderConfig,
) -> Result<Image> {
    let deformed = deform_scene(scene, joints, pose)?;
    render(&deformed, cam, cfg)
}
