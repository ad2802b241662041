//! Reverse-mode pass of the rasterizer: per-pixel image gradients back to
//! world-space Gaussian attributes.

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use rayon::prelude::*;

use super::{projection_frame, Raster, RenderConfig, DEPTH_ALPHA_MIN};
use crate::scene::{Camera, GaussianSphere};

/// Gradient of a scalar with respect to one Gaussian's world-space mean,
/// covariance, color and opacity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct GaussianGrad {
    pub mean: Vector3<f64>,
    pub cov: Matrix3<f64>,
    pub color: Vector3<f64>,
    pub opacity: f64,
}

impl Default for GaussianGrad {
    fn default() -> Self {
        GaussianGrad {
            mean: Vector3::zeros(),
            cov: Matrix3::zeros(),
            color: Vector3::zeros(),
            opacity: 0.0,
        }
    }
}

#[derive(Clone, Copy)]
struct ScreenGrad {
    mean2d: Vector2<f64>,
    conic: Matrix2<f64>,
    color: Vector3<f64>,
    opacity: f64,
    depth: f64,
}

impl ScreenGrad {
    fn zero() -> Self {
        ScreenGrad {
            mean2d: Vector2::zeros(),
            conic: Matrix2::zeros(),
            color: Vector3::zeros(),
            opacity: 0.0,
            depth: 0.0,
        }
    }

    fn add(&mut self, o: &ScreenGrad) {
        self.mean2d += o.mean2d;
        self.conic += o.conic;
        self.color += o.color;
        self.opacity += o.opacity;
        self.depth += o.depth;
    }
}

const ROWS_PER_CHUNK: usize = 32;

struct Hit {
    splat: usize,
    alpha: f64,
    falloff: f64,
    clamped: bool,
    offset: Vector2<f64>,
    transmittance: f64,
}

fn pixel_backward(
    raster: &Raster,
    x: usize,
    y: usize,
    d_rgb: &[f64; 3],
    d_depth: f64,
    cfg: &RenderConfig,
    hits: &mut Vec<Hit>,
    acc: &mut [ScreenGrad],
) {
    let d_c = Vector3::from(*d_rgb);
    if d_c == Vector3::zeros() && d_depth == 0.0 {
        return;
    }
    hits.clear();
    let mut t = 1.0;
    let mut z = 0.0;
    raster.for_each_contribution(x, y, cfg, |splat, alpha, falloff, clamped, offset| {
        hits.push(Hit {
            splat,
            alpha,
            falloff,
            clamped,
            offset,
            transmittance: t,
        });
        z += raster.splats[splat].view_depth * alpha * t;
        t *= 1.0 - alpha;
    });
    if hits.is_empty() {
        return;
    }
    let t_final = t;
    let acc_alpha = 1.0 - t_final;
    let (d_z, d_a) = if acc_alpha > DEPTH_ALPHA_MIN {
        (d_depth / acc_alpha, -d_depth * z / (acc_alpha * acc_alpha))
    } else {
        (0.0, 0.0)
    };
    let bg = Vector3::from(cfg.background);
    let d_tfinal = -d_a + d_c.dot(&bg);

    let mut suffix_c = Vector3::zeros();
    let mut suffix_z = 0.0;
    for h in hits.iter().rev() {
        let s = &raster.splats[h.splat];
        let w = h.alpha * h.transmittance;
        let g = &mut acc[h.splat];
        g.color += d_c * w;
        g.depth += d_z * w;
        let inv = 1.0 / (1.0 - h.alpha);
        let d_alpha = h.transmittance * (s.color.dot(&d_c) + s.view_depth * d_z)
            - (suffix_c.dot(&d_c) + suffix_z * d_z) * inv
            - d_tfinal * t_final * inv;
        suffix_c += s.color * w;
        suffix_z += s.view_depth * w;
        if h.clamped {
            continue;
        }
        g.opacity += d_alpha * h.falloff;
        let d_power = d_alpha * h.alpha;
        g.conic -= h.offset * h.offset.transpose() * (0.5 * d_power);
        g.mean2d += s.conic * h.offset * d_power;
    }
}

/// Back-propagates per-pixel gradients `d_rgb`, `d_depth` (row-major, one
/// entry per pixel) through the render of `gaussians`. Output is indexed
/// like `gaussians`; culled Gaussians receive zero gradient.
#[cfg(test)]
pub(crate) fn render_backward(
    gaussians: &[GaussianSphere],
    cam: &Camera,
    cfg: &RenderConfig,
    d_rgb: &[[f64; 3]],
    d_depth: &[f64],
) -> Vec<GaussianGrad> {
    let raster = Raster::build(gaussians, cam, cfg);
    render_backward_raster(&raster, gaussians, cam, cfg, d_rgb, d_depth)
}

pub(crate) fn render_backward_raster(
    raster: &Raster,
    gaussians: &[GaussianSphere],
    cam: &Camera,
    cfg: &RenderConfig,
    d_rgb: &[[f64; 3]],
    d_depth: &[f64],
) -> Vec<GaussianGrad> {
    let (w, h) = (cam.width, cam.height);
    let n = raster.splats.len();
    let chunks: Vec<Vec<ScreenGrad>> = (0..h.div_ceil(ROWS_PER_CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut acc = vec![ScreenGrad::zero(); n];
            let mut hits = Vec::new();
            for y in c * ROWS_PER_CHUNK..((c + 1) * ROWS_PER_CHUNK).min(h) {
                for x in 0..w {
                    let i = y * w + x;
                    pixel_backward(raster, x, y, &d_rgb[i], d_depth[i], cfg, &mut hits, &mut acc);
                }
            }
            acc
        })
        .collect();
    let mut screen = vec![ScreenGrad::zero(); n];
    for chunk in &chunks {
        for (s, c) in screen.iter_mut().zip(chunk) {
            s.add(c);
        }
    }

    let mut out = vec![GaussianGrad::default(); gaussians.len()];
    for (splat, sg) in raster.splats.iter().zip(&screen) {
        let g = &gaussians[splat.source];
        out[splat.source] = project_backward(g, cam, splat.conic, sg);
    }
    out
}

fn project_backward(g: &GaussianSphere, cam: &Camera, conic: Matrix2<f64>, sg: &ScreenGrad) -> GaussianGrad {
    let frame = projection_frame(&g.mean, &g.covariance(), cam);
    let p = frame.p_cam;
    let j = frame.jacobian;
    let v = frame.cov_cam;
    let k = &cam.intrinsics;
    let (x, y, z) = (p.x, p.y, p.z);

    let g_conic = (sg.conic + sg.conic.transpose()) * 0.5;
    let g_cov2d = -(conic * g_conic * conic);
    let g_v = j.transpose() * g_cov2d * j;
    let g_j = g_cov2d * j * v * 2.0;

    let z2 = z * z;
    let z3 = z2 * z;
    let mut g_p = Vector3::new(
        sg.mean2d.x * k.fx / z,
        sg.mean2d.y * k.fy / z,
        -sg.mean2d.x * k.fx * x / z2 - sg.mean2d.y * k.fy * y / z2 + sg.depth,
    );
    g_p.x += g_j[(0, 2)] * (-k.fx / z2);
    g_p.y += g_j[(1, 2)] * (-k.fy / z2);
    g_p.z += g_j[(0, 0)] * (-k.fx / z2)
        + g_j[(0, 2)] * (2.0 * k.fx * x / z3)
        + g_j[(1, 1)] * (-k.fy / z2)
        + g_j[(1, 2)] * (2.0 * k.fy * y / z3);

    let w = cam.extrinsics.rotation();
    GaussianGrad {
        mean: w.transpose() * g_p,
        cov: w.transpose() * g_v * w,
        color: sg.color,
        opacity: sg.opacity,
    }
}
