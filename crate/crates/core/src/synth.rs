//! Labeled synthetic scenes: a room of flat surface splats with thin wires,
//! view-dependent glints and planted floaters, seen by an inward ring of
//! cameras. Targets are rendered without the floaters, so the floaters have
//! no photometric support.

use nalgebra::{Matrix3, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::depth_reg::default_uncertainty;
use crate::error::{Error, Result};
use crate::image::Grid;
use crate::metrics::COVERAGE_THRESHOLD;
use crate::model::{
    bbox_diagonal, logit, matrix_to_quat, rgb_to_dc, sh_coeff_count, Camera, Gaussian, Scene, Split, SplatCloud, View,
};
use crate::renderer::render;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Surface,
    Thin,
    Glint,
    Floater,
}

/// A short stack of faint Gaussians along one camera ray, close to that camera.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NearCameraFloater {
    pub camera: usize,
    /// Pixel the stack projects onto.
    pub pixel: [f64; 2],
    pub count: usize,
    pub near: f64,
    pub spacing: f64,
    pub scale: f64,
    pub opacity: f64,
    pub importance: f64,
    pub color: [f64; 3],
}

impl Default for NearCameraFloater {
    fn default() -> Self {
        NearCameraFloater {
            camera: 0,
            pixel: [64.0, 46.0],
            count: 8,
            near: 0.3,
            spacing: 0.15,
            scale: 0.05,
            opacity: 0.03,
            importance: 0.3,
            color: [0.68, 0.68, 0.66],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthRecipe {
    pub seed: u64,
    /// Room size (x, y, z); the floor is at y = 0 and the room is centered in x and z.
    pub room: [f64; 3],
    pub sh_degree: usize,
    pub surface_count: usize,
    pub surface_scale: f64,
    pub surface_thickness: f64,
    pub surface_opacity: f64,
    /// Standard deviation of the surfaces' higher-order SH coefficients.
    pub surface_sh_noise: f64,
    /// Close the room with a plain ceiling.
    pub ceiling: bool,
    /// Checker tile size on the textured floor and back wall.
    pub tile: f64,
    pub wire_count: usize,
    pub wire_length: usize,
    pub wire_spacing: f64,
    pub wire_thickness: f64,
    /// Scale of each wire Gaussian along the wire.
    pub wire_segment: f64,
    pub glint_count: usize,
    pub floater_count: usize,
    pub floater_region_min: [f64; 3],
    pub floater_region_max: [f64; 3],
    /// Minimum floater distance to other Gaussians, on top of the isolation threshold.
    pub floater_clearance: f64,
    pub floater_spacing: f64,
    /// Per-channel color range of floaters.
    pub floater_color_lo: [f64; 3],
    pub floater_color_hi: [f64; 3],
    pub floater_scale: [f64; 2],
    pub floater_opacity: [f64; 2],
    pub floater_importance: [f64; 2],
    pub camera_clearance: f64,
    /// Isolation fraction the floaters must clear.
    pub tau_iso: f64,
    pub near_camera_floater: Option<NearCameraFloater>,
    pub camera_count: usize,
    /// Every n-th camera (index % n == n - 1) is held out.
    pub test_every: usize,
    pub ring_radius: f64,
    pub camera_heights: Vec<f64>,
    pub look_at: [f64; 3],
    pub image_size: usize,
    pub focal: f64,
    pub background: [f64; 3],
    /// Perturb the non-floater Gaussians of the training start.
    pub perturb: bool,
}

impl Default for SynthRecipe {
    fn default() -> Self {
        SynthRecipe {
            seed: 7,
            room: [4.0, 3.0, 4.0],
            sh_degree: 1,
            surface_count: 10_000,
            surface_scale: 0.05,
            surface_thickness: 0.004,
            surface_opacity: 0.9,
            surface_sh_noise: 0.002,
            ceiling: false,
            tile: 0.2,
            wire_count: 4,
            wire_length: 50,
            wire_spacing: 0.05,
            wire_thickness: 0.0003,
            wire_segment: 0.1,
            glint_count: 200,
            floater_count: 100,
            floater_region_min: [-1.6, 1.2, -1.6],
            floater_region_max: [1.6, 2.8, 1.0],
            floater_clearance: 0.3,
            floater_spacing: 0.35,
            floater_color_lo: [0.25, 0.25, 0.25],
            floater_color_hi: [0.4, 0.4, 0.4],
            floater_scale: [0.03, 0.06],
            floater_opacity: [0.003, 0.015],
            floater_importance: [0.1, 0.25],
            camera_clearance: 0.8,
            tau_iso: 0.02,
            near_camera_floater: None,
            camera_count: 16,
            test_every: 4,
            ring_radius: 1.3,
            camera_heights: vec![1.5],
            look_at: [0.0, 1.2, 0.0],
            image_size: 128,
            focal: 80.0,
            background: [0.0, 0.0, 0.0],
            perturb: true,
        }
    }
}

impl SynthRecipe {
    /// The standard benchmark scene without wires, glints or interior floaters.
    pub fn clean_room() -> Self {
        SynthRecipe {
            wire_count: 0,
            glint_count: 0,
            floater_count: 0,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct LabeledScene {
    /// Training start: perturbed ground truth plus floaters, with targets.
    pub scene: Scene,
    /// One label per Gaussian of `scene.cloud`.
    pub labels: Vec<Label>,
    /// Ground truth without floaters; the targets are rendered from it.
    pub clean: SplatCloud,
    pub recipe: SynthRecipe,
}

impl LabeledScene {
    pub fn indices_of(&self, label: Label) -> Vec<usize> {
        (0..self.labels.len()).filter(|&i| self.labels[i] == label).collect()
    }
}

struct Plane {
    origin: Vector3<f64>,
    u: Vector3<f64>,
    v: Vector3<f64>,
    /// Unit normal pointing into the room.
    normal: Vector3<f64>,
    size: [f64; 2],
    colors: [[f64; 3]; 2],
    textured: bool,
}

impl Plane {
    fn area(&self) -> f64 {
        self.size[0] * self.size[1]
    }

    fn color_at(&self, a: f64, b: f64, tile: f64) -> [f64; 3] {
        if self.textured && ((a / tile).floor() as i64 + (b / tile).floor() as i64).rem_euclid(2) == 1 {
            self.colors[1]
        } else {
            self.colors[0]
        }
    }
}

fn room_planes(room: [f64; 3], ceiling: bool) -> Vec<Plane> {
    let (hx, hy, hz) = (room[0] / 2.0, room[1], room[2] / 2.0);
    let x = Vector3::x();
    let y = Vector3::y();
    let z = Vector3::z();
    let mut planes = vec![
        // Floor, textured.
        Plane {
            origin: Vector3::new(-hx, 0.0, -hz),
            u: x,
            v: z,
            normal: y,
            size: [room[0], room[2]],
            colors: [[0.85, 0.80, 0.70], [0.25, 0.22, 0.20]],
            textured: true,
        },
        // Back wall (z = +hz), textured.
        Plane {
            origin: Vector3::new(-hx, 0.0, hz),
            u: x,
            v: y,
            normal: -z,
            size: [room[0], hy],
            colors: [[0.20, 0.35, 0.60], [0.90, 0.90, 0.85]],
            textured: true,
        },
        Plane {
            origin: Vector3::new(-hx, 0.0, -hz),
            u: x,
            v: y,
            normal: z,
            size: [room[0], hy],
            colors: [[0.72, 0.70, 0.66]; 2],
            textured: false,
        },
        Plane {
            origin: Vector3::new(-hx, 0.0, -hz),
            u: z,
            v: y,
            normal: x,
            size: [room[2], hy],
            colors: [[0.66, 0.70, 0.72]; 2],
            textured: false,
        },
        Plane {
            origin: Vector3::new(hx, 0.0, -hz),
            u: z,
            v: y,
            normal: -x,
            size: [room[2], hy],
            colors: [[0.70, 0.68, 0.70]; 2],
            textured: false,
        },
    ];
    if ceiling {
        planes.push(Plane {
            origin: Vector3::new(-hx, hy, -hz),
            u: x,
            v: z,
            normal: -y,
            size: [room[0], room[2]],
            colors: [[0.78, 0.78, 0.76]; 2],
            textured: false,
        });
    }
    planes
}

/// Quaternion whose rotation maps the local axes to (u, v, n).
fn frame_quat(u: &Vector3<f64>, v: &Vector3<f64>, n: &Vector3<f64>) -> [f64; 4] {
    // Right-handed frame: flip v if needed.
    let v = if u.cross(v).dot(n) < 0.0 { -v } else { *v };
    matrix_to_quat(&Matrix3::from_columns(&[*u, v, *n]))
}

fn small_rest(rng: &mut ChaCha8Rng, degree: usize, sigma: f64) -> Vec<[f64; 3]> {
    let normal = Normal::new(0.0, sigma).unwrap();
    (1..sh_coeff_count(degree))
        .map(|_| [normal.sample(rng), normal.sample(rng), normal.sample(rng)])
        .collect()
}

fn gaussian(
    center: Vector3<f64>,
    log_scales: Vector3<f64>,
    rotation: [f64; 4],
    opacity: f64,
    importance: f64,
    rgb: [f64; 3],
    rest: Vec<[f64; 3]>,
) -> Gaussian {
    let mut sh = vec![rgb_to_dc(rgb)];
    sh.extend(rest);
    Gaussian {
        center,
        log_scales,
        rotation,
        opacity_logit: logit(opacity),
        sh,
        importance_logit: logit(importance),
        normal: [0.0; 3],
    }
}

pub fn ring_cameras(recipe: &SynthRecipe) -> Result<Vec<View>> {
    let target = Vector3::from(recipe.look_at);
    (0..recipe.camera_count)
        .map(|i| {
            let a = std::f64::consts::TAU * i as f64 / recipe.camera_count as f64;
            let h = recipe.camera_heights[i % recipe.camera_heights.len().max(1)];
            let eye = Vector3::new(recipe.ring_radius * a.cos(), h, recipe.ring_radius * a.sin());
            let cam = Camera::look_at(eye, target, Vector3::y(), recipe.focal, recipe.image_size, recipe.image_size)?;
            let mut view = View::new(format!("cam{i:02}"), cam);
            if recipe.test_every > 0 && i % recipe.test_every == recipe.test_every - 1 {
                view.split = Split::Test;
            }
            Ok(view)
        })
        .collect()
}

pub fn make_box_scene(recipe: &SynthRecipe) -> Result<LabeledScene> {
    if recipe.sh_degree > 3 {
        return Err(Error::InvalidArgument(format!("SH degree {} outside [0, 3]", recipe.sh_degree)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(recipe.seed);
    let deg = recipe.sh_degree;
    let mut clean = SplatCloud::new(deg);
    let mut labels = Vec::new();

    // Surfaces: stratified samples per plane, counts proportional to area.
    let planes = room_planes(recipe.room, recipe.ceiling);
    let total_area: f64 = planes.iter().map(Plane::area).sum();
    let mut remaining = recipe.surface_count;
    for (pi, plane) in planes.iter().enumerate() {
        let n = if pi + 1 == planes.len() {
            remaining
        } else {
            ((recipe.surface_count as f64 * plane.area() / total_area).round() as usize).min(remaining)
        };
        remaining -= n;
        if n == 0 {
            continue;
        }
        let nu = ((n as f64 * plane.size[0] / plane.size[1]).sqrt().ceil() as usize).max(1);
        let nv = n.div_ceil(nu);
        let mut cells: Vec<usize> = (0..nu * nv).collect();
        cells.shuffle(&mut rng);
        let rot = frame_quat(&plane.u, &plane.v, &plane.normal);
        for &c in &cells[..n] {
            let a = ((c % nu) as f64 + rng.random::<f64>()) / nu as f64 * plane.size[0];
            let b = ((c / nu) as f64 + rng.random::<f64>()) / nv as f64 * plane.size[1];
            let center = plane.origin + plane.u * a + plane.v * b;
            let s = recipe.surface_scale * rng.random_range(0.8..1.2);
            let t = recipe.surface_thickness * rng.random_range(0.8..1.2);
            let mut g = gaussian(
                center,
                Vector3::new(s.ln(), s.ln(), t.ln()),
                rot,
                recipe.surface_opacity,
                0.88,
                plane.color_at(a, b, recipe.tile),
                small_rest(&mut rng, deg, recipe.surface_sh_noise),
            );
            g.normal = [plane.normal.x as f32, plane.normal.y as f32, plane.normal.z as f32];
            clean.gaussians.push(g);
            labels.push(Label::Surface);
        }
    }
    let surface_count = clean.len();

    // Thin wires: vertical chains of needle-like Gaussians.
    let mut wire_xz: Vec<[f64; 2]> = Vec::new();
    for _ in 0..recipe.wire_count {
        let mut tries = 0;
        let pos = loop {
            let p = [rng.random_range(-0.9..0.9), rng.random_range(-0.9..0.9)];
            if wire_xz.iter().all(|q| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt() > 0.6) {
                break p;
            }
            tries += 1;
            if tries > 10_000 {
                return Err(Error::InvalidArgument("could not place wires".into()));
            }
        };
        wire_xz.push(pos);
        for j in 0..recipe.wire_length {
            let center = Vector3::new(pos[0], 0.3 + j as f64 * recipe.wire_spacing, pos[1]);
            let s1 = recipe.wire_thickness;
            let s3 = recipe.wire_segment;
            clean.gaussians.push(gaussian(
                center,
                Vector3::new(s1.ln(), s3.ln(), s1.ln()),
                [1.0, 0.0, 0.0, 0.0],
                0.035,
                0.2,
                [0.12, 0.10, 0.10],
                vec![[0.0; 3]; sh_coeff_count(deg) - 1],
            ));
            labels.push(Label::Thin);
        }
    }

    // Glints: faint, strongly view-dependent splats just off a surface.
    for _ in 0..recipe.glint_count {
        let host = rng.random_range(0..surface_count);
        let h = &clean.gaussians[host];
        let n = Vector3::new(h.normal[0] as f64, h.normal[1] as f64, h.normal[2] as f64);
        let center = h.center + n * 0.02;
        let s: f64 = 0.02;
        let g = gaussian(
            center,
            Vector3::repeat(s.ln()),
            [1.0, 0.0, 0.0, 0.0],
            0.035,
            0.2,
            [0.95, 0.95, 0.9],
            small_rest(&mut rng, deg, 0.5),
        );
        clean.gaussians.push(g);
        labels.push(Label::Glint);
    }

    let mut views = ring_cameras(recipe)?;
    let cam_centers: Vec<Vector3<f64>> = views.iter().map(|v| v.camera.center()).collect();

    // Floaters in free space, away from everything else and from each other.
    let clean_centers = clean.centers();
    let extent = bbox_diagonal(&clean_centers);
    let min_clear = (recipe.tau_iso * extent).max(recipe.floater_clearance);
    let mut floaters: Vec<Gaussian> = Vec::new();
    let lo = Vector3::from(recipe.floater_region_min);
    let hi = Vector3::from(recipe.floater_region_max);
    let max_attempts = 10_000 * recipe.floater_count.max(1);
    let mut attempts = 0;
    while floaters.len() < recipe.floater_count {
        attempts += 1;
        if attempts > max_attempts {
            return Err(Error::InvalidArgument(format!(
                "placed only {} of {} floaters; enlarge the region or relax the spacing",
                floaters.len(),
                recipe.floater_count
            )));
        }
        let p = Vector3::new(
            rng.random_range(lo.x..=hi.x),
            rng.random_range(lo.y..=hi.y),
            rng.random_range(lo.z..=hi.z),
        );
        if clean_centers.iter().any(|c| (c - p).norm() < min_clear)
            || floaters.iter().any(|f| (f.center - p).norm() < recipe.floater_spacing)
            || cam_centers.iter().any(|c| (c - p).norm() < recipe.camera_clearance)
        {
            continue;
        }
        let lo = recipe.floater_color_lo;
        let hi = recipe.floater_color_hi;
        let rgb = [0, 1, 2].map(|c| rng.random_range(lo[c]..=hi[c]));
        let s: f64 = rng.random_range(recipe.floater_scale[0]..=recipe.floater_scale[1]);
        floaters.push(gaussian(
            p,
            Vector3::repeat(s.ln()),
            [1.0, 0.0, 0.0, 0.0],
            rng.random_range(recipe.floater_opacity[0]..=recipe.floater_opacity[1]),
            rng.random_range(recipe.floater_importance[0]..=recipe.floater_importance[1]),
            rgb,
            vec![[0.0; 3]; sh_coeff_count(deg) - 1],
        ));
    }
    if let Some(nf) = &recipe.near_camera_floater {
        let view = views
            .get(nf.camera)
            .ok_or(Error::Index { index: nf.camera, len: views.len() })?;
        let cam = &view.camera;
        let ray_cam = Vector3::new((nf.pixel[0] - cam.cx) / cam.fx, (nf.pixel[1] - cam.cy) / cam.fy, 1.0).normalize();
        let ray = cam.rotation.transpose() * ray_cam;
        for j in 0..nf.count {
            let p = cam.center() + ray * (nf.near + j as f64 * nf.spacing);
            floaters.push(gaussian(
                p,
                Vector3::repeat(nf.scale.ln()),
                [1.0, 0.0, 0.0, 0.0],
                nf.opacity,
                nf.importance,
                nf.color,
                vec![[0.0; 3]; sh_coeff_count(deg) - 1],
            ));
        }
    }

    // Targets from the clean cloud.
    for v in &mut views {
        v.target = Some(render(&clean, &v.camera, recipe.background).color);
    }

    let mut start = clean.clone();
    if recipe.perturb {
        let jitter = Normal::new(0.0, 1.0).unwrap();
        for g in &mut start.gaussians {
            let mut d = || jitter.sample(&mut rng);
            g.center += Vector3::new(d(), d(), d()) * 0.01;
            g.log_scales += Vector3::new(d(), d(), d()) * 0.1;
            for c in 0..3 {
                g.sh[0][c] += 0.05 * d();
            }
            g.opacity_logit += 0.3 * d();
        }
    }
    for f in floaters {
        start.gaussians.push(f);
        labels.push(Label::Floater);
    }
    let scene = Scene::new(start, views, recipe.background)?;
    Ok(LabeledScene {
        scene,
        labels,
        clean,
        recipe: recipe.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DepthCorruption {
    /// Fixed scale; drawn from `scale_range` when absent.
    pub scale: Option<f64>,
    pub shift: Option<f64>,
    pub scale_range: [f64; 2],
    pub shift_range: [f64; 2],
    /// Standard deviation of noise injected at depth discontinuities.
    pub edge_noise: f64,
    /// Uncertainty weight assigned where noise was injected.
    pub noisy_weight: f64,
    pub seed: u64,
}

impl Default for DepthCorruption {
    fn default() -> Self {
        DepthCorruption {
            scale: None,
            shift: None,
            scale_range: [0.5, 2.0],
            shift_range: [-0.5, 0.5],
            edge_noise: 0.05,
            noisy_weight: 0.0,
            seed: 11,
        }
    }
}

impl DepthCorruption {
    pub fn affine(scale: f64, shift: f64) -> Self {
        DepthCorruption {
            scale: Some(scale),
            shift: Some(shift),
            edge_noise: 0.0,
            ..Default::default()
        }
    }
}

/// Depth prior and uncertainty per view: rendered clean depth under a per-view
/// affine map, with noise at depth edges where the uncertainty is lowered.
/// Pixels without coverage get zero weight.
pub fn make_depth_priors(
    clean: &SplatCloud,
    views: &[View],
    background: [f64; 3],
    corruption: &DepthCorruption,
) -> Vec<(Grid, Grid)> {
    let mut rng = ChaCha8Rng::seed_from_u64(corruption.seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    views
        .iter()
        .map(|v| {
            let out = render(clean, &v.camera, background);
            let s = corruption
                .scale
                .unwrap_or_else(|| rng.random_range(corruption.scale_range[0]..=corruption.scale_range[1]));
            let t = corruption
                .shift
                .unwrap_or_else(|| rng.random_range(corruption.shift_range[0]..=corruption.shift_range[1]));
            let edges = default_uncertainty(&out.depth);
            let mut prior = out.depth.clone();
            let mut weight = Grid::filled(prior.width, prior.height, 1.0);
            for i in 0..prior.data.len() {
                let covered = 1.0 - out.final_transmittance.data[i] > COVERAGE_THRESHOLD;
                prior.data[i] = s * prior.data[i] + t;
                if !covered {
                    weight.data[i] = 0.0;
                } else if corruption.edge_noise > 0.0 && edges.data[i] < 0.5 {
                    prior.data[i] += corruption.edge_noise * normal.sample(&mut rng);
                    weight.data[i] = corruption.noisy_weight;
                }
            }
            (prior, weight)
        })
        .collect()
}
