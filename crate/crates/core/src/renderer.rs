//! CPU splatting renderer with an analytical backward pass.
//!
//! Gaussians are projected with the local-affine (EWA) approximation, sorted
//! globally front-to-back by camera depth and alpha-blended per pixel:
//!
//! ```text
//! C(u) = sum_k T_k a_k c_k + T_bg * background,   T_k = prod_{j<k} (1 - a_j)
//! ```
//!
//! with `a_k = opacity_k * importance_k * w_k(u)`. The 2D kernel is truncated
//! at Mahalanobis radius 3 and tapered so it reaches zero continuously there:
//! `w = (exp(-q/2) - exp(-9/2)) / (1 - exp(-9/2))` for `q < 9`, else 0. The
//! taper keeps the rendered image continuous in every parameter, so finite
//! differences are meaningful everywhere.
//!
//! The backward pass accumulates the "color behind fragment k" recursively
//! from the back (`R_k = a_k f_k + (1 - a_k) R_{k+1}`), which avoids dividing
//! by `1 - a_k` and stays exact for fully opaque fragments.

use std::path::Path;

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};

use crate::error::{Error, Result};
use crate::image::{write_pfm, write_png_rgb, Grid, ImageRgb};
use crate::model::{sigmoid, Camera, Gaussian, SplatCloud, SH_C0};
use crate::sh;

/// Mahalanobis cutoff radius of the 2D kernel.
pub const KERNEL_SIGMAS: f64 = 3.0;
/// Depth value reported where nothing was rendered.
pub const DEPTH_SENTINEL: f64 = 0.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderSettings {
    pub near: f64,
    /// Centers outside this multiple of the half field of view are culled.
    pub frustum_margin: f64,
    /// Added to the diagonal of every 2D covariance, in px^2.
    pub lowpass: f64,
    /// Blending stops once transmittance drops below this.
    pub min_transmittance: f64,
    /// Minimum accumulated opacity for a defined blended depth.
    pub depth_eps: f64,
}

impl Default for RenderSettings {
    fn default() -> Self {
        RenderSettings {
            near: 0.2,
            frustum_margin: 1.3,
            lowpass: 0.3,
            min_transmittance: 1e-4,
            depth_eps: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub mean: Vector2<f64>,
    pub cov: Matrix2<f64>,
    /// Camera-frame z of the center.
    pub depth: f64,
    pub valid: bool,
}

/// Intermediate projection quantities reused by the backward pass.
#[derive(Debug, Clone)]
struct ProjectedSplat {
    gaussian: usize,
    t: Vector3<f64>,
    jac: Matrix2x3<f64>,
    /// World covariance rotated into the camera frame.
    cam_cov: Matrix3<f64>,
    mean: Vector2<f64>,
    conic: Matrix2<f64>,
    alpha: f64,
    color: [f64; 3],
    color_clamped: [bool; 3],
}

fn project_inner(g: &Gaussian, cam: &Camera, settings: &RenderSettings) -> Option<(Vector3<f64>, Matrix2x3<f64>, Matrix3<f64>, Vector2<f64>, Matrix2<f64>)> {
    let t = cam.rotation * g.center + cam.translation;
    if !(t.z > settings.near) {
        return None;
    }
    let lim_x = settings.frustum_margin * 0.5 * cam.width as f64 / cam.fx;
    let lim_y = settings.frustum_margin * 0.5 * cam.height as f64 / cam.fy;
    if (t.x / t.z).abs() > lim_x || (t.y / t.z).abs() > lim_y {
        return None;
    }
    let (tx, ty, tz) = (t.x, t.y, t.z);
    let jac = Matrix2x3::new(
        cam.fx / tz,
        0.0,
        -cam.fx * tx / (tz * tz),
        0.0,
        cam.fy / tz,
        -cam.fy * ty / (tz * tz),
    );
    let cam_cov = cam.rotation * g.covariance() * cam.rotation.transpose();
    let cov = jac * cam_cov * jac.transpose() + Matrix2::identity() * settings.lowpass;
    let mean = Vector2::new(cam.fx * tx / tz + cam.cx, cam.fy * ty / tz + cam.cy);
    Some((t, jac, cam_cov, mean, cov))
}

/// Projects one Gaussian into `cam`. Invalid when the center is at or behind
/// the near plane or well outside the field of view.
pub fn project(g: &Gaussian, cam: &Camera) -> Projection {
    project_with(g, cam, &RenderSettings::default())
}

pub fn project_with(g: &Gaussian, cam: &Camera, settings: &RenderSettings) -> Projection {
    match project_inner(g, cam, settings) {
        Some((t, _, _, mean, cov)) => Projection {
            mean,
            cov,
            depth: t.z,
            valid: true,
        },
        None => Projection {
            mean: Vector2::zeros(),
            cov: Matrix2::zeros(),
            depth: (cam.rotation * g.center + cam.translation).z,
            valid: false,
        },
    }
}

#[inline]
fn kernel_floor() -> f64 {
    (-0.5 * KERNEL_SIGMAS * KERNEL_SIGMAS).exp()
}

/// Tapered kernel weight and its derivative with respect to `q`.
#[inline]
fn kernel(q: f64) -> (f64, f64) {
    if q >= KERNEL_SIGMAS * KERNEL_SIGMAS {
        return (0.0, 0.0);
    }
    let floor = kernel_floor();
    let e = (-0.5 * q).exp();
    ((e - floor) / (1.0 - floor), -0.5 * e / (1.0 - floor))
}

#[derive(Debug, Clone, Copy)]
struct Fragment {
    splat: u32,
    alpha: f64,
    /// Transmittance in front of this fragment.
    trans: f64,
}

#[derive(Debug, Clone, Default)]
struct ForwardCache {
    splats: Vec<ProjectedSplat>,
    fragments: Vec<Fragment>,
    /// Per pixel: start offset into `fragments`.
    offsets: Vec<usize>,
    /// Per pixel: number of fragments actually blended.
    used: Vec<usize>,
    background: [f64; 3],
    settings: RenderSettings,
    gaussian_count: usize,
}

#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub color: ImageRgb,
    /// Blended camera-frame depth, normalized by accumulated opacity.
    pub depth: Grid,
    /// Light reaching the background, per pixel.
    pub final_transmittance: Grid,
    /// Per-Gaussian maximum `T_k * a_k` over the frame.
    pub contributions: Vec<f64>,
    cache: ForwardCache,
}

impl RenderOutput {
    pub fn width(&self) -> usize {
        self.color.width
    }

    pub fn height(&self) -> usize {
        self.color.height
    }

    /// Accumulated opacity `1 - T_bg`.
    pub fn coverage(&self) -> Grid {
        Grid {
            width: self.final_transmittance.width,
            height: self.final_transmittance.height,
            data: self.final_transmittance.data.iter().map(|t| 1.0 - t).collect(),
        }
    }

    /// Sum of `T_k a_k` over the blended fragments of pixel `(x, y)`.
    pub fn blended_weight(&self, x: usize, y: usize) -> f64 {
        let p = y * self.width() + x;
        let start = self.cache.offsets[p];
        self.cache.fragments[start..start + self.cache.used[p]]
            .iter()
            .map(|f| f.trans * f.alpha)
            .sum()
    }

    /// Debug dump: `<stem>_color.png`, `<stem>_depth.pfm`, `<stem>_trans.pfm`.
    pub fn dump(&self, dir: &Path, stem: &str) -> Result<()> {
        write_png_rgb(&dir.join(format!("{stem}_color.png")), &self.color)?;
        write_pfm(&dir.join(format!("{stem}_depth.pfm")), &self.depth)?;
        write_pfm(&dir.join(format!("{stem}_trans.pfm")), &self.final_transmittance)
    }
}

pub fn render(cloud: &SplatCloud, cam: &Camera, background: [f64; 3]) -> RenderOutput {
    render_with(cloud, cam, background, &RenderSettings::default())
}

pub fn render_with(
    cloud: &SplatCloud,
    cam: &Camera,
    background: [f64; 3],
    settings: &RenderSettings,
) -> RenderOutput {
    let (w, h) = (cam.width, cam.height);
    let cam_center = cam.center();

    let mut splats = Vec::new();
    for (i, g) in cloud.gaussians.iter().enumerate() {
        let Some((t, jac, cam_cov, mean, cov)) = project_inner(g, cam, settings) else {
            continue;
        };
        let Some(conic) = cov.try_inverse() else {
            continue;
        };
        let dir = g.center - cam_center;
        let dir = dir / dir.norm();
        let raw = sh::eval_color(&g.sh, cloud.sh_degree, &dir);
        splats.push(ProjectedSplat {
            gaussian: i,
            t,
            jac,
            cam_cov,
            mean,
            conic,
            alpha: g.effective_opacity(),
            color: raw.map(|c| c.max(0.0)),
            color_clamped: raw.map(|c| c < 0.0),
        });
    }
    // Front-to-back; ties broken by index so the order is canonical.
    splats.sort_by(|a, b| a.t.z.total_cmp(&b.t.z).then(a.gaussian.cmp(&b.gaussian)));

    // Rasterize footprints into (pixel, splat) pairs in depth order.
    let mut pairs: Vec<(u32, u32, f64)> = Vec::new();
    let cutoff = KERNEL_SIGMAS * KERNEL_SIGMAS;
    for (si, s) in splats.iter().enumerate() {
        if s.alpha <= 0.0 {
            continue;
        }
        let cov = s.conic.try_inverse().unwrap_or_else(Matrix2::zeros);
        let (a, b, c) = (cov[(0, 0)], cov[(0, 1)], cov[(1, 1)]);
        let mid = 0.5 * (a + c);
        let lambda_max = mid + (0.25 * (a - c) * (a - c) + b * b).sqrt();
        let radius = KERNEL_SIGMAS * lambda_max.max(0.0).sqrt();
        let x0 = (s.mean.x - radius).floor().max(0.0);
        let x1 = (s.mean.x + radius).ceil().min(w as f64 - 1.0);
        let y0 = (s.mean.y - radius).floor().max(0.0);
        let y1 = (s.mean.y + radius).ceil().min(h as f64 - 1.0);
        if !(x0 <= x1 && y0 <= y1) {
            continue;
        }
        let q00 = s.conic[(0, 0)];
        let q01 = s.conic[(0, 1)];
        let q11 = s.conic[(1, 1)];
        for py in y0 as usize..=y1 as usize {
            let dy = py as f64 - s.mean.y;
            for px in x0 as usize..=x1 as usize {
                let dx = px as f64 - s.mean.x;
                let q = q00 * dx * dx + 2.0 * q01 * dx * dy + q11 * dy * dy;
                if q < cutoff {
                    let (wk, _) = kernel(q);
                    pairs.push(((py * w + px) as u32, si as u32, s.alpha * wk));
                }
            }
        }
    }

    // Stable counting sort by pixel keeps the depth order inside each pixel.
    let npix = w * h;
    let mut offsets = vec![0usize; npix + 1];
    for &(p, _, _) in &pairs {
        offsets[p as usize + 1] += 1;
    }
    for i in 0..npix {
        offsets[i + 1] += offsets[i];
    }
    let mut cursor = offsets.clone();
    let mut fragments = vec![
        Fragment {
            splat: 0,
            alpha: 0.0,
            trans: 0.0
        };
        pairs.len()
    ];
    for &(p, s, a) in &pairs {
        let slot = &mut cursor[p as usize];
        fragments[*slot] = Fragment {
            splat: s,
            alpha: a,
            trans: 0.0,
        };
        *slot += 1;
    }
    drop(pairs);

    let mut color = ImageRgb::filled(w, h, [0.0; 3]);
    let mut depth = Grid::filled(w, h, DEPTH_SENTINEL);
    let mut final_t = Grid::filled(w, h, 1.0);
    let mut used = vec![0usize; npix];
    let mut contributions = vec![0.0f64; cloud.len()];
    for p in 0..npix {
        let (start, end) = (offsets[p], offsets[p + 1]);
        let mut t = 1.0;
        let mut acc = [0.0; 3];
        let mut zsum = 0.0;
        let mut n = 0;
        for f in &mut fragments[start..end] {
            let s = &splats[f.splat as usize];
            f.trans = t;
            let wgt = t * f.alpha;
            for ch in 0..3 {
                acc[ch] += wgt * s.color[ch];
            }
            zsum += wgt * s.t.z;
            let c = &mut contributions[s.gaussian];
            if wgt > *c {
                *c = wgt;
            }
            t *= 1.0 - f.alpha;
            n += 1;
            if t < settings.min_transmittance {
                break;
            }
        }
        used[p] = n;
        for ch in 0..3 {
            acc[ch] += t * background[ch];
        }
        color.data[p] = acc;
        final_t.data[p] = t;
        let cover = 1.0 - t;
        if cover > settings.depth_eps {
            depth.data[p] = zsum / cover;
        }
    }
    offsets.truncate(npix);

    RenderOutput {
        color,
        depth,
        final_transmittance: final_t,
        contributions,
        cache: ForwardCache {
            splats,
            fragments,
            offsets,
            used,
            background,
            settings: *settings,
            gaussian_count: cloud.len(),
        },
    }
}

/// Gradients of a scalar loss with respect to per-Gaussian parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GradBuffer {
    pub d_center: Vec<Vector3<f64>>,
    pub d_log_scales: Vec<Vector3<f64>>,
    /// With respect to the stored (possibly unnormalized) quaternion.
    pub d_rotation: Vec<[f64; 4]>,
    pub d_opacity_logit: Vec<f64>,
    pub d_importance_logit: Vec<f64>,
    pub d_sh_dc: Vec<[f64; 3]>,
}

impl GradBuffer {
    pub fn zeros(n: usize) -> Self {
        GradBuffer {
            d_center: vec![Vector3::zeros(); n],
            d_log_scales: vec![Vector3::zeros(); n],
            d_rotation: vec![[0.0; 4]; n],
            d_opacity_logit: vec![0.0; n],
            d_importance_logit: vec![0.0; n],
            d_sh_dc: vec![[0.0; 3]; n],
        }
    }

    pub fn len(&self) -> usize {
        self.d_center.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d_center.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.d_center.iter().all(|v| v.iter().all(|x| x.is_finite()))
            && self.d_log_scales.iter().all(|v| v.iter().all(|x| x.is_finite()))
            && self.d_rotation.iter().flatten().all(|x| x.is_finite())
            && self.d_opacity_logit.iter().all(|x| x.is_finite())
            && self.d_importance_logit.iter().all(|x| x.is_finite())
            && self.d_sh_dc.iter().flatten().all(|x| x.is_finite())
    }

    pub fn center_norms(&self) -> Vec<f64> {
        self.d_center.iter().map(|v| v.norm()).collect()
    }
}

/// Per-splat screen-space accumulators.
#[derive(Clone, Copy, Default)]
struct SplatGrad {
    mean: [f64; 2],
    conic: [f64; 3],
    alpha: f64,
    color: [f64; 3],
    z: f64,
}

/// Backpropagates `d_color` (and optionally `d_depth`) through the forward
/// pass recorded in `out`. Gradients with respect to the view-dependent SH
/// terms and through the viewing direction are not produced; the DC color
/// gradient is exact.
pub fn render_backward(
    cloud: &SplatCloud,
    cam: &Camera,
    out: &RenderOutput,
    d_color: &ImageRgb,
    d_depth: Option<&Grid>,
) -> Result<GradBuffer> {
    let (w, h) = (out.width(), out.height());
    if d_color.width != w || d_color.height != h {
        return Err(Error::Shape(format!(
            "d_color {}x{} vs render {}x{}",
            d_color.width, d_color.height, w, h
        )));
    }
    if let Some(dd) = d_depth {
        if dd.width != w || dd.height != h {
            return Err(Error::Shape(format!(
                "d_depth {}x{} vs render {}x{}",
                dd.width, dd.height, w, h
            )));
        }
    }
    if cam.width != w || cam.height != h {
        return Err(Error::Shape("camera does not match render".into()));
    }
    let cache = &out.cache;
    if cache.gaussian_count != cloud.len() {
        return Err(Error::Shape(format!(
            "render was made with {} gaussians, cloud has {}",
            cache.gaussian_count,
            cloud.len()
        )));
    }

    let mut sg = vec![SplatGrad::default(); cache.splats.len()];
    let bg = cache.background;
    for p in 0..w * h {
        let start = cache.offsets[p];
        let frags = &cache.fragments[start..start + cache.used[p]];
        if frags.is_empty() {
            continue;
        }
        let gc = d_color.data[p];
        // Upstream weights on the blended features (r, g, b, z, 1).
        let (gz, gone) = match d_depth {
            Some(dd) if dd.data[p] != 0.0 => {
                let cover = 1.0 - out.final_transmittance.data[p];
                if cover > cache.settings.depth_eps {
                    let gd = dd.data[p];
                    (gd / cover, -gd * out.depth.data[p] / cover)
                } else {
                    (0.0, 0.0)
                }
            }
            _ => (0.0, 0.0),
        };
        if gc == [0.0; 3] && gz == 0.0 && gone == 0.0 {
            continue;
        }
        let px = (p % w) as f64;
        let py = (p / w) as f64;
        // Features of everything behind the current fragment.
        let mut behind = [bg[0], bg[1], bg[2], 0.0, 0.0];
        for f in frags.iter().rev() {
            let s = &cache.splats[f.splat as usize];
            let feat = [s.color[0], s.color[1], s.color[2], s.t.z, 1.0];
            let up = [gc[0], gc[1], gc[2], gz, gone];
            let mut g_a = 0.0;
            for ch in 0..5 {
                g_a += up[ch] * (feat[ch] - behind[ch]);
            }
            g_a *= f.trans;
            let wgt = f.trans * f.alpha;
            let acc = &mut sg[f.splat as usize];
            for ch in 0..3 {
                acc.color[ch] += wgt * gc[ch];
            }
            acc.z += wgt * gz;
            for ch in 0..5 {
                behind[ch] = f.alpha * feat[ch] + (1.0 - f.alpha) * behind[ch];
            }

            let dx = px - s.mean.x;
            let dy = py - s.mean.y;
            let (q00, q01, q11) = (s.conic[(0, 0)], s.conic[(0, 1)], s.conic[(1, 1)]);
            let q = q00 * dx * dx + 2.0 * q01 * dx * dy + q11 * dy * dy;
            let (wk, dwk) = kernel(q);
            acc.alpha += g_a * wk;
            let g_q = g_a * s.alpha * dwk;
            // dq/dmean = -2 Q d
            acc.mean[0] += g_q * -2.0 * (q00 * dx + q01 * dy);
            acc.mean[1] += g_q * -2.0 * (q01 * dx + q11 * dy);
            acc.conic[0] += g_q * dx * dx;
            acc.conic[1] += g_q * dx * dy;
            acc.conic[2] += g_q * dy * dy;
        }
    }

    let mut grads = GradBuffer::zeros(cloud.len());
    for (s, a) in cache.splats.iter().zip(&sg) {
        let g = &cloud.gaussians[s.gaussian];
        let i = s.gaussian;

        let op = sigmoid(g.opacity_logit);
        let imp = sigmoid(g.importance_logit);
        grads.d_opacity_logit[i] += a.alpha * imp * op * (1.0 - op);
        grads.d_importance_logit[i] += a.alpha * op * imp * (1.0 - imp);
        for ch in 0..3 {
            if !s.color_clamped[ch] {
                grads.d_sh_dc[i][ch] += a.color[ch] * SH_C0;
            }
        }

        // conic -> 2D covariance -> camera covariance / Jacobian.
        let g_conic = Matrix2::new(a.conic[0], a.conic[1], a.conic[1], a.conic[2]);
        let g_cov2 = -(s.conic * g_conic * s.conic);
        let g_cam_cov = s.jac.transpose() * g_cov2 * s.jac;
        let g_jac = 2.0 * g_cov2 * s.jac * s.cam_cov;
        let g_world_cov = cam.rotation.transpose() * g_cam_cov * cam.rotation;

        let rot = g.rotation_matrix();
        let scales = g.scales();
        let s2 = scales.map(|v| v * v);
        let local = rot.transpose() * g_world_cov * rot;
        for j in 0..3 {
            grads.d_log_scales[i][j] += local[(j, j)] * 2.0 * s2[j];
        }
        let g_rot = 2.0 * g_world_cov * rot * Matrix3::from_diagonal(&s2);
        let dq = quat_grad(&g.rotation, &g_rot);
        for k in 0..4 {
            grads.d_rotation[i][k] += dq[k];
        }

        // Camera-frame position.
        let (tx, ty, tz) = (s.t.x, s.t.y, s.t.z);
        let (fx, fy) = (cam.fx, cam.fy);
        let tz2 = tz * tz;
        let tz3 = tz2 * tz;
        let mut g_t = Vector3::new(
            a.mean[0] * fx / tz,
            a.mean[1] * fy / tz,
            -a.mean[0] * fx * tx / tz2 - a.mean[1] * fy * ty / tz2,
        );
        g_t.x += g_jac[(0, 2)] * (-fx / tz2);
        g_t.y += g_jac[(1, 2)] * (-fy / tz2);
        g_t.z += g_jac[(0, 0)] * (-fx / tz2)
            + g_jac[(0, 2)] * (2.0 * fx * tx / tz3)
            + g_jac[(1, 1)] * (-fy / tz2)
            + g_jac[(1, 2)] * (2.0 * fy * ty / tz3);
        g_t.z += a.z;
        grads.d_center[i] += cam.rotation.transpose() * g_t;
    }
    Ok(grads)
}

/// Gradient with respect to the stored quaternion given `dL/dR` of the
/// rotation matrix built from its normalized form.
fn quat_grad(q: &[f64; 4], g: &Matrix3<f64>) -> [f64; 4] {
    let n = crate::model::quat_norm(q);
    let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
    let gu = [
        2.0 * (-z * g[(0, 1)] + y * g[(0, 2)] + z * g[(1, 0)] - x * g[(1, 2)] - y * g[(2, 0)]
            + x * g[(2, 1)]),
        2.0 * (y * g[(0, 1)] + z * g[(0, 2)] + y * g[(1, 0)] - 2.0 * x * g[(1, 1)]
            - w * g[(1, 2)]
            + z * g[(2, 0)]
            + w * g[(2, 1)]
            - 2.0 * x * g[(2, 2)]),
        2.0 * (-2.0 * y * g[(0, 0)] + x * g[(0, 1)] + w * g[(0, 2)] + x * g[(1, 0)]
            + z * g[(1, 2)]
            - w * g[(2, 0)]
            + z * g[(2, 1)]
            - 2.0 * y * g[(2, 2)]),
        2.0 * (-2.0 * z * g[(0, 0)] - w * g[(0, 1)] + x * g[(0, 2)] + w * g[(1, 0)]
            - 2.0 * z * g[(1, 1)]
            + y * g[(1, 2)]
            + x * g[(2, 0)]
            + y * g[(2, 1)]),
    ];
    // Project out the radial component: d(q/|q|)/dq = (I - u u^T) / |q|.
    let u = [w, x, y, z];
    let dot: f64 = (0..4).map(|k| u[k] * gu[k]).sum();
    [0, 1, 2, 3].map(|k| (gu[k] - u[k] * dot) / n)
}

/// `true` where a Gaussian's maximum contribution reaches `threshold`.
pub fn visibility_hits(out: &RenderOutput, threshold: f64) -> Vec<bool> {
    out.contributions.iter().map(|&c| c >= threshold).collect()
}
