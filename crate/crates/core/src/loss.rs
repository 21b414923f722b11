//! Photometric training loss: `(1 - lambda) * L1 + lambda * (1 - SSIM)`.

use crate::error::Result;
use crate::image::ImageRgb;
use crate::ssim;

/// SSIM window radius used by the loss; shrinks for images smaller than the
/// standard window so tiny test images still get a structural term.
pub fn loss_window_radius(width: usize, height: usize) -> usize {
    (ssim::WINDOW / 2).min((width.min(height).max(1) - 1) / 2)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhotometricLoss {
    pub value: f64,
    pub l1: f64,
    /// Mean per-channel SSIM.
    pub ssim: f64,
    pub grad: ImageRgb,
}

pub fn photometric_loss(render: &ImageRgb, target: &ImageRgb, lambda_ssim: f64) -> Result<PhotometricLoss> {
    render.same_shape(target)?;
    let (w, h) = (render.width, render.height);
    let n = (3 * w * h) as f64;
    let mut l1 = 0.0;
    let mut grad = ImageRgb::filled(w, h, [0.0; 3]);
    for (i, (r, t)) in render.data.iter().zip(&target.data).enumerate() {
        for c in 0..3 {
            let d = r[c] - t[c];
            l1 += d.abs();
            let s = if d > 0.0 {
                1.0
            } else if d < 0.0 {
                -1.0
            } else {
                0.0
            };
            grad.data[i][c] = (1.0 - lambda_ssim) * s / n;
        }
    }
    l1 /= n;

    let mut ssim_mean = 1.0;
    if lambda_ssim != 0.0 {
        let radius = loss_window_radius(w, h);
        ssim_mean = 0.0;
        for c in 0..3 {
            let a = render.channel(c);
            let b = target.channel(c);
            let (v, g) = ssim::ssim_channel_grad(&a.data, &b.data, w, h, radius)?;
            ssim_mean += v / 3.0;
            for (p, gv) in g.iter().enumerate() {
                grad.data[p][c] -= lambda_ssim * gv / 3.0;
            }
        }
    }
    Ok(PhotometricLoss {
        value: (1.0 - lambda_ssim) * l1 + lambda_ssim * (1.0 - ssim_mean),
        l1,
        ssim: ssim_mean,
        grad,
    })
}
