//! Core splat types: the anisotropic Gaussian primitive, pinhole cameras and
//! the scene container that ties Gaussians to posed training views.
//!
//! Scales are stored as logs and opacity / importance as logits so that
//! unconstrained optimizer steps always map back into the valid domain.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::image::{Grid, ImageRgb};

/// Zeroth-order real spherical harmonic, `1 / (2 sqrt(pi))`.
pub const SH_C0: f64 = 0.282_094_791_773_878_14;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Number of SH triplets for degree `degree`.
#[inline]
pub fn sh_coeff_count(degree: usize) -> usize {
    (degree + 1) * (degree + 1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    pub center: Vector3<f64>,
    /// Log of the per-axis standard deviation.
    pub log_scales: Vector3<f64>,
    /// Quaternion `(w, x, y, z)`; normalized on use.
    pub rotation: [f64; 4],
    pub opacity_logit: f64,
    /// SH coefficients as RGB triplets; index 0 is the DC term.
    pub sh: Vec<[f64; 3]>,
    /// Learned importance logit; `sigmoid(importance_logit)` is the utility.
    pub importance_logit: f64,
    /// Carried through PLY round-trips, otherwise unused.
    pub normal: [f32; 3],
}

impl Gaussian {
    /// Isotropic Gaussian with a flat base color and no view-dependent terms.
    pub fn isotropic(
        center: Vector3<f64>,
        scale: f64,
        opacity: f64,
        rgb: [f64; 3],
        sh_degree: usize,
    ) -> Self {
        let mut sh = vec![[0.0; 3]; sh_coeff_count(sh_degree)];
        sh[0] = rgb_to_dc(rgb);
        Gaussian {
            center,
            log_scales: Vector3::repeat(scale.ln()),
            rotation: [1.0, 0.0, 0.0, 0.0],
            opacity_logit: logit(opacity),
            sh,
            importance_logit: 0.0,
            normal: [0.0; 3],
        }
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    pub fn importance(&self) -> f64 {
        sigmoid(self.importance_logit)
    }

    /// Opacity used for blending: the learned importance gates the radiometric opacity.
    pub fn effective_opacity(&self) -> f64 {
        self.opacity() * self.importance()
    }

    pub fn scales(&self) -> Vector3<f64> {
        self.log_scales.map(f64::exp)
    }

    /// Base color from the DC coefficient, before clamping.
    pub fn base_color(&self) -> [f64; 3] {
        dc_to_rgb(self.sh[0])
    }

    /// L2 norm of all non-DC SH coefficients.
    pub fn sh_rest_energy(&self) -> f64 {
        self.sh[1..]
            .iter()
            .flat_map(|t| t.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn normalize_rotation(&mut self) {
        let n = quat_norm(&self.rotation);
        if n > 0.0 && n.is_finite() {
            for q in &mut self.rotation {
                *q /= n;
            }
        } else {
            self.rotation = [1.0, 0.0, 0.0, 0.0];
        }
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        quat_to_matrix(&self.rotation)
    }

    /// World-space covariance `R S^2 R^T`.
    pub fn covariance(&self) -> Matrix3<f64> {
        let r = self.rotation_matrix();
        let s2 = Matrix3::from_diagonal(&self.scales().map(|s| s * s));
        r * s2 * r.transpose()
    }
}

pub fn rgb_to_dc(rgb: [f64; 3]) -> [f64; 3] {
    rgb.map(|c| (c - 0.5) / SH_C0)
}

pub fn dc_to_rgb(dc: [f64; 3]) -> [f64; 3] {
    dc.map(|f| SH_C0 * f + 0.5)
}

/// Per-axis standard deviations sorted ascending (`s1 <= s2 <= s3`).
pub fn covariance_scales(g: &Gaussian) -> [f64; 3] {
    let mut s = [
        g.log_scales.x.exp(),
        g.log_scales.y.exp(),
        g.log_scales.z.exp(),
    ];
    s.sort_by(f64::total_cmp);
    s
}

pub fn quat_norm(q: &[f64; 4]) -> f64 {
    q.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Rotation matrix of the normalized quaternion `(w, x, y, z)`.
pub fn quat_to_matrix(q: &[f64; 4]) -> Matrix3<f64> {
    let n = quat_norm(q);
    let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Quaternion `(w, x, y, z)` of a proper rotation matrix.
pub fn matrix_to_quat(m: &Matrix3<f64>) -> [f64; 4] {
    let q = nalgebra::UnitQuaternion::from_matrix(m);
    [q.w, q.i, q.j, q.k]
}

/// Pinhole camera. `rotation`/`translation` map world points into the camera
/// frame (`p_cam = R p_world + t`), with +z forward, +x right, +y down.
/// Pixel centers sit at integer coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Camera {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
    ) -> Result<Self> {
        let cam = Camera {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            rotation,
            translation,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera at `eye` looking at `target`; `up` is a world-space hint.
    pub fn look_at(
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
        fx: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let forward = (target - eye).normalize();
        let right = forward.cross(&up);
        if right.norm() < 1e-9 {
            return Err(Error::InvalidArgument(
                "look_at: up vector parallel to viewing direction".into(),
            ));
        }
        let right = right.normalize();
        // Image +y points down.
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let translation = -(rotation * eye);
        Camera::new(
            fx,
            fx,
            (width as f64 - 1.0) / 2.0,
            (height as f64 - 1.0) / 2.0,
            width,
            height,
            rotation,
            translation,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "camera focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidArgument("camera has zero size".into()));
        }
        let rrt = self.rotation * self.rotation.transpose();
        if (rrt - Matrix3::identity()).abs().max() > 1e-6 {
            return Err(Error::InvalidArgument(
                "camera rotation is not orthonormal".into(),
            ));
        }
        Ok(())
    }

    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Same intrinsics, pose composed with a small world-frame perturbation:
    /// the camera center moves by `dt` and the orientation by `drot`.
    pub fn perturbed(&self, dt: Vector3<f64>, drot: Matrix3<f64>) -> Camera {
        let center = self.center() + dt;
        let rotation = self.rotation * drot;
        let translation = -(rotation * center);
        Camera {
            rotation,
            translation,
            ..self.clone()
        }
    }
}

/// Training or held-out view.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone)]
pub struct View {
    pub name: String,
    pub camera: Camera,
    pub split: Split,
    pub target: Option<ImageRgb>,
    pub depth_prior: Option<Grid>,
    pub uncertainty: Option<Grid>,
}

impl View {
    pub fn new(name: impl Into<String>, camera: Camera) -> Self {
        View {
            name: name.into(),
            camera,
            split: Split::Train,
            target: None,
            depth_prior: None,
            uncertainty: None,
        }
    }

    fn validate(&self) -> Result<()> {
        let (w, h) = (self.camera.width, self.camera.height);
        if let Some(t) = &self.target {
            if t.width != w || t.height != h {
                return Err(Error::Shape(format!(
                    "view {}: target {}x{} vs camera {}x{}",
                    self.name, t.width, t.height, w, h
                )));
            }
        }
        for (label, grid) in [("depth", &self.depth_prior), ("uncertainty", &self.uncertainty)] {
            if let Some(g) = grid {
                if g.width != w || g.height != h {
                    return Err(Error::Shape(format!(
                        "view {}: {label} grid {}x{} vs camera {}x{}",
                        self.name, g.width, g.height, w, h
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Gaussians plus their shared SH degree, i.e. what a splat PLY file holds.
#[derive(Debug, Clone, PartialEq)]
pub struct SplatCloud {
    pub sh_degree: usize,
    pub gaussians: Vec<Gaussian>,
}

impl SplatCloud {
    pub fn new(sh_degree: usize) -> Self {
        SplatCloud {
            sh_degree,
            gaussians: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.sh_degree > 3 {
            return Err(Error::InvalidArgument(format!(
                "SH degree {} outside [0, 3]",
                self.sh_degree
            )));
        }
        let want = sh_coeff_count(self.sh_degree);
        for (i, g) in self.gaussians.iter().enumerate() {
            if g.sh.len() != want {
                return Err(Error::Shape(format!(
                    "gaussian {i} has {} SH triplets, degree {} needs {want}",
                    g.sh.len(),
                    self.sh_degree
                )));
            }
        }
        Ok(())
    }

    /// Diagonal of the axis-aligned bounding box of all centers.
    pub fn extent(&self) -> f64 {
        let centers: Vec<_> = self.gaussians.iter().map(|g| g.center).collect();
        bbox_diagonal(&centers)
    }

    pub fn centers(&self) -> Vec<Vector3<f64>> {
        self.gaussians.iter().map(|g| g.center).collect()
    }
}

pub fn bbox_diagonal(points: &[Vector3<f64>]) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let mut lo = points[0];
    let mut hi = points[0];
    for p in points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    (hi - lo).norm()
}

#[derive(Debug, Clone)]
pub struct Scene {
    pub cloud: SplatCloud,
    pub views: Vec<View>,
    pub background: [f64; 3],
}

impl Scene {
    pub fn new(cloud: SplatCloud, views: Vec<View>, background: [f64; 3]) -> Result<Self> {
        let scene = Scene {
            cloud,
            views,
            background,
        };
        scene.validate()?;
        Ok(scene)
    }

    pub fn validate(&self) -> Result<()> {
        self.cloud.validate()?;
        for v in &self.views {
            v.camera.validate()?;
            v.validate()?;
        }
        Ok(())
    }

    pub fn train_views(&self) -> impl Iterator<Item = (usize, &View)> {
        self.views
            .iter()
            .enumerate()
            .filter(|(_, v)| v.split == Split::Train)
    }

    pub fn test_views(&self) -> impl Iterator<Item = (usize, &View)> {
        self.views
            .iter()
            .enumerate()
            .filter(|(_, v)| v.split == Split::Test)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn with_log_scales(ls: [f64; 3]) -> Gaussian {
        let mut g = Gaussian::isotropic(Vector3::zeros(), 1.0, 0.5, [0.5; 3], 0);
        g.log_scales = Vector3::from(ls);
        g
    }

    #[test]
    fn unit_log_scales_give_unit_scales() {
        assert_eq!(covariance_scales(&with_log_scales([0.0; 3])), [1.0, 1.0, 1.0]);
    }

    #[test]
    fn scales_are_exponentiated_and_sorted() {
        let s = covariance_scales(&with_log_scales([0.0, 0.01f64.ln(), 0.0]));
        assert!((s[0] - 0.01).abs() < 1e-15);
        assert_eq!(&s[1..], &[1.0, 1.0]);
    }

    #[test]
    fn sigmoid_is_stable_and_monotone() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
        let xs = [-30.0, -3.0, -0.1, 0.0, 0.1, 3.0, 30.0];
        for w in xs.windows(2) {
            assert!(sigmoid(w[0]) < sigmoid(w[1]));
        }
        assert!((logit(sigmoid(1.3)) - 1.3).abs() < 1e-12);
    }

    #[test]
    fn quaternion_matrix_round_trip() {
        let q = [0.9, 0.1, -0.3, 0.2];
        let m = quat_to_matrix(&q);
        assert!((m * m.transpose() - Matrix3::identity()).abs().max() < 1e-12);
        let back = quat_to_matrix(&matrix_to_quat(&m));
        assert!((back - m).abs().max() < 1e-12);
    }

    #[test]
    fn look_at_puts_target_on_axis() {
        let cam = Camera::look_at(
            Vector3::new(1.0, 2.0, 3.0),
            Vector3::zeros(),
            Vector3::new(0.0, 0.0, 1.0),
            50.0,
            64,
            48,
        )
        .unwrap();
        let p = cam.rotation * Vector3::zeros() + cam.translation;
        assert!(p.x.abs() < 1e-12 && p.y.abs() < 1e-12 && p.z > 0.0);
        assert!((cam.center() - Vector3::new(1.0, 2.0, 3.0)).norm() < 1e-12);
    }

    #[test]
    fn camera_validation() {
        let bad = Camera::new(0.0, 1.0, 0.0, 0.0, 4, 4, Matrix3::identity(), Vector3::zeros());
        assert!(bad.is_err());
        let skew = Camera::new(1.0, 1.0, 0.0, 0.0, 4, 4, Matrix3::identity() * 1.1, Vector3::zeros());
        assert!(skew.is_err());
    }

    #[test]
    fn dc_color_round_trip() {
        let rgb = [0.1, 0.5, 0.9];
        let back = dc_to_rgb(rgb_to_dc(rgb));
        for c in 0..3 {
            assert!((back[c] - rgb[c]).abs() < 1e-15);
        }
    }
}
