//! Photometric metrics and cleanliness indicators evaluated under small,
//! seeded camera jitter.

use nalgebra::{Rotation3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{ImageRgb, Mask};
use crate::model::{Camera, SplatCloud};
use crate::renderer::{render, RenderOutput};
use crate::ssim;

/// Reported PSNR for identical images.
pub const PSNR_SENTINEL: f64 = 99.0;
/// A pixel counts as covered when at least this much light is absorbed.
pub const COVERAGE_THRESHOLD: f64 = 0.5;

fn mse_to_psnr(mse: f64) -> f64 {
    if mse <= 0.0 {
        PSNR_SENTINEL
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_SENTINEL)
    }
}

pub fn psnr(a: &ImageRgb, b: &ImageRgb) -> Result<f64> {
    a.same_shape(b)?;
    let mut sum = 0.0;
    for (p, q) in a.data.iter().zip(&b.data) {
        for c in 0..3 {
            sum += (p[c] - q[c]).powi(2);
        }
    }
    Ok(mse_to_psnr(sum / (3 * a.data.len()).max(1) as f64))
}

/// PSNR restricted to pixels where `mask` is true.
pub fn masked_psnr(a: &ImageRgb, b: &ImageRgb, mask: &Mask) -> Result<f64> {
    a.same_shape(b)?;
    if mask.width != a.width || mask.height != a.height {
        return Err(Error::Shape("mask does not match image".into()));
    }
    let n = mask.count();
    if n == 0 {
        return Err(Error::InvalidArgument("static mask is empty".into()));
    }
    let mut sum = 0.0;
    for i in (0..a.data.len()).filter(|&i| mask.data[i]) {
        for c in 0..3 {
            sum += (a.data[i][c] - b.data[i][c]).powi(2);
        }
    }
    Ok(mse_to_psnr(sum / (3 * n) as f64))
}

/// SSIM of the luma channels, 11x11 Gaussian window.
pub fn ssim(a: &ImageRgb, b: &ImageRgb) -> Result<f64> {
    a.same_shape(b)?;
    ssim::ssim_channel(&a.luma().data, &b.luma().data, a.width, a.height)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JitterSpec {
    /// Translation standard deviation as a fraction of the scene extent.
    pub translation_fraction: f64,
    pub rotation_deg: f64,
    pub samples: usize,
    pub seed: u64,
}

impl Default for JitterSpec {
    fn default() -> Self {
        JitterSpec {
            translation_fraction: 0.0025,
            rotation_deg: 0.2,
            samples: 8,
            seed: 0,
        }
    }
}

/// Jitter magnitudes resolved against a scene extent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResolvedJitter {
    pub sigma_translation: f64,
    pub sigma_rotation: f64,
    pub samples: usize,
    pub seed: u64,
}

impl JitterSpec {
    pub fn resolve(&self, extent: f64) -> ResolvedJitter {
        ResolvedJitter {
            sigma_translation: self.translation_fraction * extent,
            sigma_rotation: self.rotation_deg.to_radians(),
            samples: self.samples,
            seed: self.seed,
        }
    }
}

/// Deterministic jittered copies of `cam`; `stream` separates per-view draws.
pub fn jittered_cameras(cam: &Camera, jitter: &ResolvedJitter, stream: u64) -> Vec<Camera> {
    let mut rng = ChaCha8Rng::seed_from_u64(jitter.seed);
    rng.set_stream(stream);
    let std = Normal::new(0.0, 1.0).unwrap();
    (0..jitter.samples)
        .map(|_| {
            let mut draw = || Vector3::new(std.sample(&mut rng), std.sample(&mut rng), std.sample(&mut rng));
            let dt = draw() * jitter.sigma_translation;
            let axis_angle = draw() * jitter.sigma_rotation;
            cam.perturbed(dt, *Rotation3::new(axis_angle).matrix())
        })
        .collect()
}

/// Fraction of pixels outside `fg_mask` whose accumulated opacity exceeds `tau_t`.
pub fn silhouette_leakage(out: &RenderOutput, fg_mask: &Mask, tau_t: f64) -> Result<f64> {
    if fg_mask.width != out.width() || fg_mask.height != out.height() {
        return Err(Error::Shape("foreground mask does not match camera".into()));
    }
    let outside = fg_mask.data.iter().filter(|&&b| !b).count();
    if outside == 0 {
        log::warn!("foreground mask covers the whole frame; leakage defined as 0");
        return Ok(0.0);
    }
    let leaked = (0..fg_mask.data.len())
        .filter(|&i| !fg_mask.data[i] && 1.0 - out.final_transmittance.data[i] > tau_t)
        .count();
    Ok(leaked as f64 / outside as f64)
}

/// Fraction of pixels, covered in the base and all jittered renders, whose
/// depth moves by at most `tol`. `tol = None` uses 1% of the median covered
/// base depth.
pub fn depth_stability(
    cloud: &SplatCloud,
    cam: &Camera,
    background: [f64; 3],
    jitter: &ResolvedJitter,
    stream: u64,
    tol: Option<f64>,
) -> Result<f64> {
    if jitter.samples < 2 {
        return Err(Error::InvalidArgument("depth stability needs at least 2 jitter samples".into()));
    }
    let base = render(cloud, cam, background);
    let covered = |o: &RenderOutput, i: usize| 1.0 - o.final_transmittance.data[i] > COVERAGE_THRESHOLD;
    let n = base.depth.data.len();
    let mut ok: Vec<bool> = (0..n).map(|i| covered(&base, i)).collect();
    let tol = match tol {
        Some(t) => t,
        None => {
            let depths: Vec<f64> = (0..n).filter(|&i| ok[i]).map(|i| base.depth.data[i]).collect();
            if depths.is_empty() {
                return Err(Error::InvalidArgument("no covered pixels; depth stability undefined".into()));
            }
            0.01 * crate::pruning::percentile(&depths, 50.0)
        }
    };
    let mut max_dev = vec![0.0f64; n];
    for jc in jittered_cameras(cam, jitter, stream) {
        let o = render(cloud, &jc, background);
        for i in 0..n {
            ok[i] = ok[i] && covered(&o, i);
            max_dev[i] = max_dev[i].max((o.depth.data[i] - base.depth.data[i]).abs());
        }
    }
    let total = ok.iter().filter(|&&b| b).count();
    if total == 0 {
        return Err(Error::InvalidArgument("no covered pixels; depth stability undefined".into()));
    }
    let stable = (0..n).filter(|&i| ok[i] && max_dev[i] <= tol).count();
    Ok(stable as f64 / total as f64)
}

/// Mean masked PSNR of jittered renders against `reference`.
pub fn background_consistency(
    cloud: &SplatCloud,
    cam: &Camera,
    background: [f64; 3],
    static_mask: &Mask,
    reference: &ImageRgb,
    jitter: &ResolvedJitter,
    stream: u64,
) -> Result<f64> {
    let cams = jittered_cameras(cam, jitter, stream);
    if cams.is_empty() {
        return masked_psnr(&render(cloud, cam, background).color, reference, static_mask);
    }
    let mut sum = 0.0;
    for jc in &cams {
        sum += masked_psnr(&render(cloud, jc, background).color, reference, static_mask)?;
    }
    Ok(sum / cams.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewMetrics {
    pub view: String,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    pub silhouette_leakage: Option<f64>,
    pub depth_stability: Option<f64>,
    pub background_consistency: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub views: Vec<ViewMetrics>,
    pub mean_psnr: Option<f64>,
    pub mean_ssim: Option<f64>,
    pub silhouette_leakage: Option<f64>,
    pub depth_stability: Option<f64>,
    pub background_consistency: Option<f64>,
    pub jitter: ResolvedJitter,
    pub leakage_threshold: f64,
    /// Perceptual metric not computed; kept so tables show the gap.
    pub lpips: Option<f64>,
}

fn mean(v: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let vals: Vec<f64> = v.flatten().collect();
    if vals.is_empty() {
        None
    } else {
        Some(vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

impl MetricsReport {
    pub fn new(views: Vec<ViewMetrics>, jitter: ResolvedJitter, leakage_threshold: f64) -> Self {
        MetricsReport {
            mean_psnr: mean(views.iter().map(|v| v.psnr)),
            mean_ssim: mean(views.iter().map(|v| v.ssim)),
            silhouette_leakage: mean(views.iter().map(|v| v.silhouette_leakage)),
            depth_stability: mean(views.iter().map(|v| v.depth_stability)),
            background_consistency: mean(views.iter().map(|v| v.background_consistency)),
            views,
            jitter,
            leakage_threshold,
            lpips: None,
        }
    }

    pub fn to_text(&self) -> String {
        let f = |v: Option<f64>, prec: usize| v.map_or("-".to_string(), |x| format!("{x:.prec$}"));
        let mut s = format!(
            "{:<16} {:>8} {:>7} {:>9} {:>9} {:>9}\n",
            "view", "psnr", "ssim", "leakage", "depth_st", "bg_cons"
        );
        let mut row = |name: &str, p, q, l, d, b| {
            s.push_str(&format!(
                "{:<16} {:>8} {:>7} {:>9} {:>9} {:>9}\n",
                name,
                f(p, 2),
                f(q, 4),
                f(l, 4),
                f(d, 4),
                f(b, 2)
            ));
        };
        for v in &self.views {
            row(&v.view, v.psnr, v.ssim, v.silhouette_leakage, v.depth_stability, v.background_consistency);
        }
        row(
            "mean",
            self.mean_psnr,
            self.mean_ssim,
            self.silhouette_leakage,
            self.depth_stability,
            self.background_consistency,
        );
        s
    }
}
