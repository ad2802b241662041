use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use rayon::prelude::*;

use super::{Adam, OptimizeConfig};
use crate::error::{Error, Result};
use crate::loss::{image_loss, LossConfig};
use crate::render::{rasterize, render, render_backward_raster, GaussianGrad, Raster};
use crate::scene::{Camera, Image, Scene};

const OPACITY_MIN: f64 = 1e-3;
const OPACITY_MAX: f64 = 0.999;
const SCALE_MIN: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub scene: Scene,
    pub psnr_before: Vec<f64>,
    pub psnr_after: Vec<f64>,
    pub loss_trace: Vec<f64>,
}

fn psnr_all(scene: &Scene, views: &[(Camera, Image)], cfg: &LossConfig) -> Result<Vec<f64>> {
    views
        .iter()
        .map(|(cam, obs)| Ok(render(scene, cam, &cfg.render)?.psnr(obs)))
        .collect()
}

fn skew_part(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)])
}

/// Fits means, rotations, scales, opacities and colors of a fixed set of
/// Gaussians to posed views with the photometric loss. The learning rates
/// reuse the optimizer groups: `lr_origin` for means, `lr_axis` for
/// rotations and log-scales, `lr_skin` for opacities and colors.
pub fn fit_static(
    init_scene: &Scene,
    views: &[(Camera, Image)],
    loss_cfg: &LossConfig,
    opt_cfg: &OptimizeConfig,
) -> Result<FitResult> {
    loss_cfg.validate()?;
    opt_cfg.validate()?;
    if views.len() < 3 {
        return Err(Error::Precondition(format!("static fitting needs at least 3 views, got {}", views.len())));
    }
    for (cam, img) in views {
        if cam.width != img.width || cam.height != img.height {
            return Err(Error::Dimension("view image does not match its camera".into()));
        }
    }
    let psnr_before = psnr_all(init_scene, views, loss_cfg)?;
    let mut scene = init_scene.clone();
    let n = scene.len();
    // Per Gaussian: mean 3, rotation 3, log-scale 3, opacity 1, color 3.
    let mut adam = Adam::for_config(13 * n, opt_cfg);
    let mut trace = Vec::with_capacity(opt_cfg.max_iters);
    let mut scale = 1.0;

    for iter in 0..opt_cfg.max_iters {
        let per_view: Vec<(f64, Vec<GaussianGrad>)> = views
            .par_iter()
            .map(|(cam, obs)| {
                let raster = Raster::build(&scene.gaussians, cam, &loss_cfg.render);
                let img = rasterize(&raster, cam, &loss_cfg.render);
                let l = image_loss(&img, obs, loss_cfg, true)?;
                let g = render_backward_raster(&raster, &scene.gaussians, cam, &loss_cfg.render, &l.d_rgb, &l.d_depth);
                Ok((l.value, g))
            })
            .collect::<Result<_>>()?;
        let mut loss = 0.0;
        let mut grads = vec![GaussianGrad::default(); n];
        for (l, gs) in &per_view {
            loss += l;
            for (a, g) in grads.iter_mut().zip(gs) {
                a.mean += g.mean;
                a.cov += g.cov;
                a.color += g.color;
                a.opacity += g.opacity;
            }
        }
        if !loss.is_finite() {
            return Err(Error::Divergence { iteration: iter });
        }
        trace.push(loss);
        if iter + 1 == opt_cfg.max_iters {
            break;
        }

        adam.tick();
        let lr_mean = opt_cfg.lr_origin * scale;
        let lr_shape = opt_cfg.lr_axis * scale;
        let lr_look = opt_cfg.lr_skin * scale;
        for (i, (g, gr)) in scene.gaussians.iter_mut().zip(&grads).enumerate() {
            let base = 13 * i;
            let r = g.rotation.to_rotation_matrix().into_inner();
            let s2 = Matrix3::from_diagonal(&g.scale.component_mul(&g.scale));
            let gc = r.transpose() * ((gr.cov + gr.cov.transpose()) * 0.5) * r;
            let g_rot = skew_part(&(gc * s2 - s2 * gc));
            let g_logs = Vector3::from_fn(|k, _| 2.0 * s2[(k, k)] * gc[(k, k)]);

            for c in 0..3 {
                g.mean[c] += adam.delta(base + c, gr.mean[c], lr_mean);
            }
            let omega = Vector3::from_fn(|c, _| adam.delta(base + 3 + c, g_rot[c], lr_shape));
            g.rotation = UnitQuaternion::new_normalize((g.rotation * UnitQuaternion::from_scaled_axis(omega)).into_inner());
            for c in 0..3 {
                let d = adam.delta(base + 6 + c, g_logs[c], lr_shape);
                g.scale[c] = (g.scale[c] * d.exp()).max(SCALE_MIN);
            }
            g.opacity = (g.opacity + adam.delta(base + 9, gr.opacity, lr_look)).clamp(OPACITY_MIN, OPACITY_MAX);
            for c in 0..3 {
                g.color[c] = (g.color[c] + adam.delta(base + 10 + c, gr.color[c], lr_look)).clamp(0.0, 1.0);
            }
        }
        scale *= opt_cfg.decay;
    }
    let psnr_after = psnr_all(&scene, views, loss_cfg)?;
    Ok(FitResult {
        scene,
        psnr_before,
        psnr_after,
        loss_trace: trace,
    })
}
