//! Monocular depth regularization: per-view affine alignment of the rendered
//! depth to a prior known only up to scale and shift, a Huber penalty on the
//! aligned residual weighted by per-pixel uncertainty, and a ramped weight.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Grid;
use crate::pruning::percentile;

/// Alignment needs at least this many valid pixels.
pub const MIN_VALID_PIXELS: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct DepthAlignment {
    pub s: f64,
    pub t: f64,
    pub valid_mask: Vec<bool>,
    pub valid_count: usize,
    /// Rendered depth was (numerically) constant; `s = 0`, `t` = weighted mean.
    pub degenerate: bool,
}

fn valid_pixel(zh: f64, zt: f64, w: f64) -> bool {
    w > 0.0 && zh.is_finite() && zt.is_finite()
}

/// Weighted least-squares fit of `s * z_hat + t` to `z_tilde`. Returns
/// `Ok(None)` when fewer than [`MIN_VALID_PIXELS`] pixels carry weight.
pub fn align(z_hat: &Grid, z_tilde: &Grid, w: &Grid) -> Result<Option<DepthAlignment>> {
    z_hat.same_shape(z_tilde)?;
    z_hat.same_shape(w)?;
    let valid_mask: Vec<bool> = (0..z_hat.data.len())
        .map(|i| valid_pixel(z_hat.data[i], z_tilde.data[i], w.data[i]))
        .collect();
    let valid_count = valid_mask.iter().filter(|&&v| v).count();
    if valid_count < MIN_VALID_PIXELS {
        return Ok(None);
    }
    let (mut sw, mut sx, mut sy) = (0.0, 0.0, 0.0);
    for i in (0..valid_mask.len()).filter(|&i| valid_mask[i]) {
        sw += w.data[i];
        sx += w.data[i] * z_hat.data[i];
        sy += w.data[i] * z_tilde.data[i];
    }
    let (mx, my) = (sx / sw, sy / sw);
    let (mut sxx, mut sxy, mut sq) = (0.0, 0.0, 0.0);
    for i in (0..valid_mask.len()).filter(|&i| valid_mask[i]) {
        let dx = z_hat.data[i] - mx;
        sxx += w.data[i] * dx * dx;
        sxy += w.data[i] * dx * (z_tilde.data[i] - my);
        sq += w.data[i] * z_hat.data[i] * z_hat.data[i];
    }
    let degenerate = sxx <= 1e-12 * sq.max(f64::MIN_POSITIVE);
    let (s, t) = if degenerate {
        (0.0, my)
    } else {
        let s = sxy / sxx;
        (s, my - s * mx)
    };
    Ok(Some(DepthAlignment {
        s,
        t,
        valid_mask,
        valid_count,
        degenerate,
    }))
}

pub fn huber(r: f64, delta: f64) -> f64 {
    let a = r.abs();
    if a <= delta {
        0.5 * r * r
    } else {
        delta * (a - 0.5 * delta)
    }
}

pub fn huber_grad(r: f64, delta: f64) -> f64 {
    r.clamp(-delta, delta)
}

/// `1.4826 * MAD` of the aligned residuals over valid pixels, floored at 1e-6.
pub fn robust_delta(z_hat: &Grid, z_tilde: &Grid, align: &DepthAlignment) -> f64 {
    let r: Vec<f64> = (0..z_hat.data.len())
        .filter(|&i| align.valid_mask[i])
        .map(|i| align.s * z_hat.data[i] + align.t - z_tilde.data[i])
        .collect();
    if r.is_empty() {
        return 1e-6;
    }
    let med = percentile(&r, 50.0);
    let dev: Vec<f64> = r.iter().map(|x| (x - med).abs()).collect();
    (1.4826 * percentile(&dev, 50.0)).max(1e-6)
}

/// Uncertainty-weighted Huber loss of the aligned residual and its gradient
/// with respect to the rendered depth, holding `(s, t)` fixed.
pub fn depth_loss(
    z_hat: &Grid,
    z_tilde: &Grid,
    w: &Grid,
    align: &DepthAlignment,
    delta: f64,
) -> Result<(f64, Grid)> {
    z_hat.same_shape(z_tilde)?;
    z_hat.same_shape(w)?;
    if align.valid_mask.len() != z_hat.data.len() {
        return Err(Error::Shape(format!(
            "alignment mask has {} pixels, depth has {}",
            align.valid_mask.len(),
            z_hat.data.len()
        )));
    }
    let mut grad = Grid::filled(z_hat.width, z_hat.height, 0.0);
    let mut loss = 0.0;
    for i in 0..z_hat.data.len() {
        if !align.valid_mask[i] {
            continue;
        }
        let r = align.s * z_hat.data[i] + align.t - z_tilde.data[i];
        loss += w.data[i] * huber(r, delta);
        grad.data[i] = w.data[i] * huber_grad(r, delta) * align.s;
    }
    Ok((loss, grad))
}

/// Gradient-magnitude based weight for priors without an uncertainty map:
/// `clamp(1 - |grad| / q95, 0, 1)`. When fewer than 5% of pixels have a
/// nonzero gradient the 95th percentile vanishes and the maximum is used.
pub fn default_uncertainty(z_tilde: &Grid) -> Grid {
    let (w, h) = (z_tilde.width, z_tilde.height);
    let at = |x: usize, y: usize| z_tilde.get(x, y);
    let diff = |lo: f64, hi: f64, span: usize| if span == 0 { 0.0 } else { (hi - lo) / span as f64 };
    let mut mag = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let (x0, x1) = (x.saturating_sub(1), (x + 1).min(w - 1));
            let (y0, y1) = (y.saturating_sub(1), (y + 1).min(h - 1));
            let gx = diff(at(x0, y), at(x1, y), x1 - x0);
            let gy = diff(at(x, y0), at(x, y1), y1 - y0);
            mag.push((gx * gx + gy * gy).sqrt());
        }
    }
    let mut q = percentile(&mag, 95.0);
    if !(q > 0.0) {
        q = mag.iter().copied().fold(0.0, f64::max);
    }
    let data = if q > 0.0 {
        mag.iter().map(|m| (1.0 - m / q).clamp(0.0, 1.0)).collect()
    } else {
        vec![1.0; w * h]
    };
    Grid { width: w, height: h, data }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurriculumSchedule {
    pub start_step: u64,
    pub full_step: u64,
    pub lambda_max: f64,
}

impl Default for CurriculumSchedule {
    fn default() -> Self {
        CurriculumSchedule {
            start_step: 500,
            full_step: 5000,
            lambda_max: 0.05,
        }
    }
}

impl CurriculumSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.start_step >= self.full_step {
            return Err(Error::Config(format!(
                "depth schedule start {} must precede full {}",
                self.start_step, self.full_step
            )));
        }
        if !(self.lambda_max >= 0.0) {
            return Err(Error::Config("lambda_max must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn weight(&self, step: u64) -> f64 {
        if step <= self.start_step {
            0.0
        } else if step >= self.full_step {
            self.lambda_max
        } else {
            self.lambda_max * (step - self.start_step) as f64 / (self.full_step - self.start_step) as f64
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(w: usize, h: usize, f: impl Fn(usize, usize) -> f64) -> Grid {
        let mut g = Grid::filled(w, h, 0.0);
        for y in 0..h {
            for x in 0..w {
                g.data[y * w + x] = f(x, y);
            }
        }
        g
    }

    #[test]
    fn recovers_affine_pair() {
        let zh = grid(8, 8, |x, y| 1.0 + 0.1 * x as f64 + 0.05 * (y * y) as f64);
        let zt = grid(8, 8, |x, y| 2.0 * zh.get(x, y) + 1.0);
        let a = align(&zh, &zt, &Grid::filled(8, 8, 1.0)).unwrap().unwrap();
        assert!((a.s - 2.0).abs() < 1e-12 && (a.t - 1.0).abs() < 1e-12);
        let (loss, _) = depth_loss(&zh, &zt, &Grid::filled(8, 8, 1.0), &a, 1.0).unwrap();
        assert!(loss < 1e-20);
    }

    #[test]
    fn identity_pair() {
        let zh = grid(5, 5, |x, y| (x + 2 * y) as f64);
        let a = align(&zh, &zh, &Grid::filled(5, 5, 1.0)).unwrap().unwrap();
        assert!((a.s - 1.0).abs() < 1e-12 && a.t.abs() < 1e-12);
    }

    #[test]
    fn constant_render_is_degenerate() {
        let zh = Grid::filled(4, 4, 3.0);
        let zt = grid(4, 4, |x, _| x as f64);
        let a = align(&zh, &zt, &Grid::filled(4, 4, 1.0)).unwrap().unwrap();
        assert!(a.degenerate);
        assert_eq!(a.s, 0.0);
        assert!((a.t - 1.5).abs() < 1e-12);
    }

    #[test]
    fn too_few_pixels_is_unavailable() {
        let zh = Grid::filled(3, 5, 1.0);
        assert!(align(&zh, &zh, &Grid::filled(3, 5, 1.0)).unwrap().is_none());
    }

    #[test]
    fn huber_values() {
        assert_eq!(huber(0.0, 1.0), 0.0);
        assert_eq!(huber(2.0, 1.0), 1.5);
        assert_eq!(huber(1.0, 1.0), 0.5);
        assert_eq!(huber(-1.0, 1.0), 0.5);
        // Quadratic branch at the boundary agrees with the linear branch.
        assert_eq!(1.0 * (1.0 - 0.5 * 1.0), 0.5);
    }

    #[test]
    fn single_pixel_loss_and_gradient() {
        let a = DepthAlignment {
            s: 1.0,
            t: 0.0,
            valid_mask: vec![true],
            valid_count: 1,
            degenerate: false,
        };
        let one = |v| Grid { width: 1, height: 1, data: vec![v] };
        let (l, g) = depth_loss(&one(2.0), &one(1.0), &one(1.0), &a, 10.0).unwrap();
        assert_eq!(l, 0.5);
        assert_eq!(g.data[0], 1.0);
    }

    #[test]
    fn zero_weight_zero_loss() {
        let a = DepthAlignment {
            s: 1.0,
            t: 0.0,
            valid_mask: vec![false; 4],
            valid_count: 0,
            degenerate: false,
        };
        let zh = Grid::filled(2, 2, 5.0);
        let zt = Grid::filled(2, 2, 1.0);
        let (l, g) = depth_loss(&zh, &zt, &Grid::filled(2, 2, 0.0), &a, 1.0).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn default_uncertainty_examples() {
        let flat = default_uncertainty(&Grid::filled(6, 6, 2.0));
        assert!(flat.data.iter().all(|&v| v == 1.0));
        let step = grid(32, 32, |x, _| if x < 16 { 1.0 } else { 5.0 });
        let w = default_uncertainty(&step);
        for y in 0..32 {
            assert!(w.get(15, y) < 1e-12 && w.get(16, y) < 1e-12);
            assert_eq!(w.get(3, y), 1.0);
        }
        assert!(w.data.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn curriculum_ramp() {
        let c = CurriculumSchedule::default();
        assert_eq!(c.weight(0), 0.0);
        assert_eq!(c.weight(500), 0.0);
        assert!((c.weight(2750) - 0.025).abs() < 1e-15);
        assert_eq!(c.weight(5000), 0.05);
        assert_eq!(c.weight(9000), 0.05);
    }
}
