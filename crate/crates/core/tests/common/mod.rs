#![allow(dead_code)]

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use splatclean::image::{Grid, ImageRgb};
use splatclean::model::{Camera, Gaussian, SplatCloud};
use splatclean::renderer::{render, render_backward, GradBuffer};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Relative error with an absolute floor for components that are ~0.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

pub fn random_rotation(r: &mut ChaCha8Rng) -> [f64; 4] {
    let q: [f64; 4] = [
        r.random_range(-1.0..1.0),
        r.random_range(-1.0..1.0),
        r.random_range(-1.0..1.0),
        r.random_range(-1.0..1.0),
    ];
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    q.map(|v| v / n)
}

/// Small scene in front of a 48x48 camera at the origin looking down +z.
/// World units are chosen so splats span several pixels and the
/// finite-difference step of 1e-3 is small against every footprint.
pub fn random_scene(r: &mut ChaCha8Rng, max_gaussians: usize) -> (SplatCloud, Camera) {
    let cam = Camera::new(40.0, 42.0, 23.5, 24.0, 48, 48, Matrix3::identity(), Vector3::zeros()).unwrap();
    let n = r.random_range(1..=max_gaussians);
    let mut cloud = SplatCloud::new(0);
    for _ in 0..n {
        let z = r.random_range(6.0..16.0);
        let center = Vector3::new(r.random_range(-0.5..0.5) * z, r.random_range(-0.5..0.5) * z, z);
        let mut g = Gaussian::isotropic(
            center,
            0.1,
            0.5,
            [r.random_range(0.05..0.95), r.random_range(0.05..0.95), r.random_range(0.05..0.95)],
            0,
        );
        g.log_scales = Vector3::new(r.random_range(-1.6..-0.2), r.random_range(-1.6..-0.2), r.random_range(-1.6..-0.2));
        g.rotation = random_rotation(r);
        g.opacity_logit = r.random_range(-2.0..3.0);
        g.importance_logit = r.random_range(-1.0..3.0);
        cloud.gaussians.push(g);
    }
    (cloud, cam)
}

pub const BG: [f64; 3] = [0.2, 0.3, 0.4];

/// Scalar probe: weighted color plus weighted depth at one pixel.
pub struct Probe {
    pub pixel: usize,
    pub wc: [f64; 3],
    pub wd: f64,
}

impl Probe {
    pub fn eval(&self, cloud: &SplatCloud, cam: &Camera) -> f64 {
        let out = render(cloud, cam, BG);
        let c = out.color.data[self.pixel];
        self.wc[0] * c[0] + self.wc[1] * c[1] + self.wc[2] * c[2] + self.wd * out.depth.data[self.pixel]
    }

    pub fn central(&self, cloud: &SplatCloud, cam: &Camera, h: f64, set: impl Fn(&mut SplatCloud, f64)) -> f64 {
        let mut plus = cloud.clone();
        set(&mut plus, h);
        let mut minus = cloud.clone();
        set(&mut minus, -h);
        (self.eval(&plus, cam) - self.eval(&minus, cam)) / (2.0 * h)
    }
}

/// Yields `count` random (scene, camera, probe, analytic gradient) cases.
pub fn gradient_cases(seed: u64, count: usize, mut f: impl FnMut(usize, &SplatCloud, &Camera, &Probe, &GradBuffer)) {
    let mut r = rng(seed);
    let mut done = 0;
    while done < count {
        let (cloud, cam) = random_scene(&mut r, 6);
        let out = render(&cloud, &cam, BG);
        let covered: Vec<usize> = (0..cam.pixel_count())
            .filter(|&p| out.final_transmittance.data[p] < 0.9)
            .collect();
        if covered.is_empty() {
            continue;
        }
        let probe = Probe {
            pixel: covered[r.random_range(0..covered.len())],
            wc: [r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)],
            wd: if done % 2 == 0 { r.random_range(-1.0..1.0) } else { 0.0 },
        };
        let mut dc = ImageRgb::filled(cam.width, cam.height, [0.0; 3]);
        dc.data[probe.pixel] = probe.wc;
        let mut dd = Grid::filled(cam.width, cam.height, 0.0);
        dd.data[probe.pixel] = probe.wd;
        let g = render_backward(&cloud, &cam, &out, &dc, Some(&dd)).unwrap();
        f(done, &cloud, &cam, &probe, &g);
        done += 1;
    }
}

