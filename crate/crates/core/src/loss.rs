//! Photometric loss between rendered and observed RGB-D images: L1, SSIM
//! and masked depth L1, plus the joint/skinning regularizer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{deform_scene_raw, Pose};
use crate::render::{render, RenderConfig};
use crate::scene::{softmax, Camera, Image, JointSpec, Scene};

pub const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub lambda_l1: f64,
    pub lambda_ssim: f64,
    /// Weight of the `(|u| - 1)^2` axis-norm penalty.
    pub lambda_unit: f64,
    /// Weight of the skinning-weight entropy penalty.
    pub lambda_entropy: f64,
    pub depth_weight: f64,
    pub render: RenderConfig,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda_l1: 0.8,
            lambda_ssim: 0.2,
            lambda_unit: 0.01,
            lambda_entropy: 0.001,
            depth_weight: 0.1,
            render: RenderConfig::default(),
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let w = [self.lambda_l1, self.lambda_ssim, self.lambda_unit, self.lambda_entropy, self.depth_weight];
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) || self.lambda_l1 + self.lambda_ssim <= 0.0 {
            return Err(Error::Config(format!("invalid loss weights {w:?}")));
        }
        self.render.validate()
    }
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable "same" convolution with zero padding. The kernel is symmetric,
/// so this operator is its own adjoint.
fn blur(src: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let r = SSIM_WINDOW / 2;
    // Both passes accumulate whole shifted rows, tap by tap.
    let mut tmp = vec![0.0; w * h];
    for (row, dst) in src.chunks_exact(w).zip(tmp.chunks_exact_mut(w)) {
        for (j, &c) in k.iter().enumerate() {
            let (x0, x1) = (r.saturating_sub(j), (w + r).saturating_sub(j).min(w));
            if x0 >= x1 {
                continue;
            }
            let s0 = x0 + j - r;
            for (d, v) in dst[x0..x1].iter_mut().zip(&row[s0..s0 + (x1 - x0)]) {
                *d += c * v;
            }
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        let lo = y.saturating_sub(r);
        let hi = (y + r).min(h - 1);
        let dst = &mut out[y * w..(y + 1) * w];
        for yy in lo..=hi {
            let c = k[yy + r - y];
            for (d, v) in dst.iter_mut().zip(&tmp[yy * w..(yy + 1) * w]) {
                *d += c * v;
            }
        }
    }
    out
}

fn check_ssim_shape(a: &Image, b: &Image) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::Dimension(format!(
            "image sizes differ: {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    if a.width < SSIM_WINDOW || a.height < SSIM_WINDOW {
        return Err(Error::Dimension(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {}x{}",
            a.width, a.height
        )));
    }
    Ok(())
}

/// Mean SSIM over pixels and RGB channels.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    check_ssim_shape(a, b)?;
    Ok(ssim_impl(a, b, false).0)
}

/// SSIM of `x` against `y` and, if requested, its gradient with respect to
/// the RGB values of `x`.
fn ssim_impl(x: &Image, y: &Image, want_grad: bool) -> (f64, Vec<[f64; 3]>) {
    let (w, h) = (x.width, x.height);
    let n = w * h;
    let k = gaussian_kernel();
    let mut total = 0.0;
    let mut grad = if want_grad { vec![[0.0; 3]; n] } else { Vec::new() };
    let scale = 1.0 / (3 * n) as f64;
    for c in 0..3 {
        let xs: Vec<f64> = x.rgb.iter().map(|p| p[c]).collect();
        let ys: Vec<f64> = y.rgb.iter().map(|p| p[c]).collect();
        let xx: Vec<f64> = xs.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = ys.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = xs.iter().zip(&ys).map(|(a, b)| a * b).collect();
        let mx = blur(&xs, w, h, &k);
        let my = blur(&ys, w, h, &k);
        let exx = blur(&xx, w, h, &k);
        let eyy = blur(&yy, w, h, &k);
        let exy = blur(&xy, w, h, &k);

        let mut g_mu = if want_grad { vec![0.0; n] } else { Vec::new() };
        let mut g_exx = g_mu.clone();
        let mut g_exy = g_mu.clone();
        for i in 0..n {
            let a = 2.0 * mx[i] * my[i] + C1;
            let b = 2.0 * (exy[i] - mx[i] * my[i]) + C2;
            let cc = mx[i] * mx[i] + my[i] * my[i] + C1;
            let d = (exx[i] - mx[i] * mx[i]) + (eyy[i] - my[i] * my[i]) + C2;
            let s = (a * b) / (cc * d);
            total += s;
            if want_grad {
                let cd = cc * d;
                g_mu[i] = (2.0 * my[i] * (b - a) / cd - 2.0 * mx[i] * s * (1.0 / cc - 1.0 / d)) * scale;
                g_exx[i] = -s / d * scale;
                g_exy[i] = 2.0 * a / cd * scale;
            }
        }
        if want_grad {
            let bm = blur(&g_mu, w, h, &k);
            let bxx = blur(&g_exx, w, h, &k);
            let bxy = blur(&g_exy, w, h, &k);
            for i in 0..n {
                grad[i][c] = bm[i] + 2.0 * xs[i] * bxx[i] + ys[i] * bxy[i];
            }
        }
    }
    (total * scale, grad)
}

/// Loss of one rendered image and its gradient with respect to the rendered
/// RGB and depth channels.
pub(crate) struct ImageLoss {
    pub value: f64,
    pub d_rgb: Vec<[f64; 3]>,
    pub d_depth: Vec<f64>,
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub(crate) fn image_loss(rendered: &Image, observed: &Image, cfg: &LossConfig, want_grad: bool) -> Result<ImageLoss> {
    check_ssim_shape(rendered, observed)?;
    let n = rendered.len();
    let mut d_rgb = if want_grad { vec![[0.0; 3]; n] } else { Vec::new() };
    let mut d_depth = if want_grad { vec![0.0; n] } else { Vec::new() };

    let mut l1 = 0.0;
    let l1_scale = cfg.lambda_l1 / (3 * n) as f64;
    for i in 0..n {
        for c in 0..3 {
            let diff = rendered.rgb[i][c] - observed.rgb[i][c];
            l1 += diff.abs();
            if want_grad {
                d_rgb[i][c] = l1_scale * sign(diff);
            }
        }
    }
    let mut value = l1 * l1_scale;

    if cfg.lambda_ssim > 0.0 {
        let (s, g) = ssim_impl(rendered, observed, want_grad);
        value += cfg.lambda_ssim * (1.0 - s);
        if want_grad {
            for (d, gs) in d_rgb.iter_mut().zip(&g) {
                for c in 0..3 {
                    d[c] -= cfg.lambda_ssim * gs[c];
                }
            }
        }
    }

    if cfg.depth_weight > 0.0 {
        let valid = observed.depth.iter().filter(|&&d| d > 0.0).count();
        if valid > 0 {
            let scale = cfg.depth_weight / valid as f64;
            let mut sum = 0.0;
            for i in 0..n {
                if observed.depth[i] > 0.0 {
                    let diff = rendered.depth[i] - observed.depth[i];
                    sum += diff.abs();
                    if want_grad {
                        d_depth[i] = scale * sign(diff);
                    }
                }
            }
            value += sum * scale;
        }
    }
    Ok(ImageLoss { value, d_rgb, d_depth })
}

/// Photometric loss of one rendered image against its observation.
pub fn photometric_loss(rendered: &Image, observed: &Image, cfg: &LossConfig) -> Result<f64> {
    Ok(image_loss(rendered, observed, cfg, false)?.value)
}

/// Shannon entropy (nats) of the softmax of `logits`.
pub fn entropy(logits: &[f64]) -> f64 {
    softmax(logits)
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|p| -p * p.ln())
        .sum()
}

pub fn regularizer(scene: &Scene, joints: &[JointSpec], cfg: &LossConfig) -> f64 {
    let unit: f64 = joints.iter().map(|j| (j.axis.norm() - 1.0).powi(2)).sum();
    let ent: f64 = if cfg.lambda_entropy > 0.0 {
        scene.gaussians.iter().map(|g| entropy(&g.skin_logits)).sum()
    } else {
        0.0
    };
    cfg.lambda_unit * unit + cfg.lambda_entropy * ent
}

/// Checks that `poses`, `cams` and `observed[frame][view]` line up.
pub(crate) fn check_observation_shapes(poses: &[Pose], cams: &[Camera], observed: &[Vec<Image>]) -> Result<()> {
    if poses.len() != observed.len() {
        return Err(Error::Dimension(format!(
            "{} poses for {} observed frames",
            poses.len(),
            observed.len()
        )));
    }
    for (t, frame) in observed.iter().enumerate() {
        if frame.len() != cams.len() {
            return Err(Error::Dimension(format!(
                "frame {t} has {} images for {} cameras",
                frame.len(),
                cams.len()
            )));
        }
        for (img, cam) in frame.iter().zip(cams) {
            if img.width != cam.width || img.height != cam.height {
                return Err(Error::Dimension(format!(
                    "frame {t}: image {}x{} does not match camera {}x{}",
                    img.width, img.height, cam.width, cam.height
                )));
            }
        }
    }
    Ok(())
}

/// Total loss: per frame and view photometric terms summed, plus the
/// regularizer.
pub fn articulation_loss(
    scene: &Scene,
    joints: &[JointSpec],
    thetas: &[Pose],
    cams: &[Camera],
    observed: &[Vec<Image>],
    cfg: &LossConfig,
) -> Result<f64> {
    cfg.validate()?;
    check_observation_shapes(thetas, cams, observed)?;
    let mut total = 0.0;
    for (pose, frame) in thetas.iter().zip(observed) {
        let deformed = deform_scene_raw(scene, joints, pose)?;
        for (cam, obs) in cams.iter().zip(frame) {
            let img = render(&deformed, cam, &cfg.render)?;
            total += photometric_loss(&img, obs, cfg)?;
        }
    }
    Ok(total + regularizer(scene, joints, cfg))
}
