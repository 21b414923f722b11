//! Windowed SSIM on a single channel with its analytic gradient.
//!
//! The Gaussian window is separable; statistics are computed only at window
//! positions that lie fully inside the image and averaged.

use crate::error::{Error, Result};

pub const WINDOW: usize = 11;
pub const SIGMA: f64 = 1.5;
pub const C1: f64 = 0.01 * 0.01;
pub const C2: f64 = 0.03 * 0.03;

/// Normalized 1-D Gaussian taps of the given radius.
pub fn kernel(radius: usize) -> Vec<f64> {
    let taps: Vec<f64> = (0..2 * radius + 1)
        .map(|i| {
            let d = i as f64 - radius as f64;
            (-d * d / (2.0 * SIGMA * SIGMA)).exp()
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.iter().map(|t| t / sum).collect()
}

/// Valid-mode separable filter: output is `(w - 2r) x (h - 2r)`.
fn filter_valid(img: &[f64], w: usize, h: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (ow, oh) = (w + 1 - n, h + 1 - n);
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            let mut s = 0.0;
            for (i, &kv) in k.iter().enumerate() {
                s += kv * img[y * w + x + i];
            }
            tmp[y * ow + x] = s;
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            let mut s = 0.0;
            for (i, &kv) in k.iter().enumerate() {
                s += kv * tmp[(y + i) * ow + x];
            }
            out[y * ow + x] = s;
        }
    }
    out
}

/// Adjoint of [`filter_valid`]: scatters a `(w - 2r) x (h - 2r)` map back to `w x h`.
fn filter_adjoint(map: &[f64], w: usize, h: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (ow, oh) = (w + 1 - n, h + 1 - n);
    let mut tmp = vec![0.0; ow * h];
    for y in 0..oh {
        for x in 0..ow {
            let v = map[y * ow + x];
            for (i, &kv) in k.iter().enumerate() {
                tmp[(y + i) * ow + x] += kv * v;
            }
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..ow {
            let v = tmp[y * ow + x];
            for (i, &kv) in k.iter().enumerate() {
                out[y * w + x + i] += kv * v;
            }
        }
    }
    out
}

struct Stats {
    mu_a: Vec<f64>,
    mu_b: Vec<f64>,
    q_a: Vec<f64>,
    q_b: Vec<f64>,
    q_ab: Vec<f64>,
}

fn stats(a: &[f64], b: &[f64], w: usize, h: usize, k: &[f64]) -> Stats {
    let sq = |v: &[f64]| v.iter().map(|x| x * x).collect::<Vec<_>>();
    let ab: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    Stats {
        mu_a: filter_valid(a, w, h, k),
        mu_b: filter_valid(b, w, h, k),
        q_a: filter_valid(&sq(a), w, h, k),
        q_b: filter_valid(&sq(b), w, h, k),
        q_ab: filter_valid(&ab, w, h, k),
    }
}

fn check(a: &[f64], b: &[f64], w: usize, h: usize, radius: usize) -> Result<()> {
    if a.len() != w * h || b.len() != w * h {
        return Err(Error::Shape(format!(
            "SSIM inputs of {} and {} values for {w}x{h}",
            a.len(),
            b.len()
        )));
    }
    let n = 2 * radius + 1;
    if w < n || h < n {
        return Err(Error::Shape(format!("{w}x{h} image is smaller than the {n}x{n} SSIM window")));
    }
    Ok(())
}

/// Mean SSIM over valid windows with the standard 11x11 window.
pub fn ssim_channel(a: &[f64], b: &[f64], w: usize, h: usize) -> Result<f64> {
    ssim_channel_radius(a, b, w, h, WINDOW / 2)
}

pub fn ssim_channel_radius(a: &[f64], b: &[f64], w: usize, h: usize, radius: usize) -> Result<f64> {
    check(a, b, w, h, radius)?;
    let s = stats(a, b, w, h, &kernel(radius));
    let n = s.mu_a.len();
    let mut total = 0.0;
    for i in 0..n {
        let (ma, mb) = (s.mu_a[i], s.mu_b[i]);
        let va = s.q_a[i] - ma * ma;
        let vb = s.q_b[i] - mb * mb;
        let cov = s.q_ab[i] - ma * mb;
        total += (2.0 * ma * mb + C1) * (2.0 * cov + C2) / ((ma * ma + mb * mb + C1) * (va + vb + C2));
    }
    Ok(total / n as f64)
}

/// Mean SSIM and its gradient with respect to `a`.
pub fn ssim_channel_grad(a: &[f64], b: &[f64], w: usize, h: usize, radius: usize) -> Result<(f64, Vec<f64>)> {
    check(a, b, w, h, radius)?;
    let k = kernel(radius);
    let s = stats(a, b, w, h, &k);
    let n = s.mu_a.len();
    let inv_n = 1.0 / n as f64;
    let mut total = 0.0;
    let mut d_mu = vec![0.0; n];
    let mut d_qa = vec![0.0; n];
    let mut d_qab = vec![0.0; n];
    for i in 0..n {
        let (ma, mb) = (s.mu_a[i], s.mu_b[i]);
        let va = s.q_a[i] - ma * ma;
        let vb = s.q_b[i] - mb * mb;
        let cov = s.q_ab[i] - ma * mb;
        let a1 = 2.0 * ma * mb + C1;
        let a2 = 2.0 * cov + C2;
        let b1 = ma * ma + mb * mb + C1;
        let b2 = va + vb + C2;
        let den = b1 * b2;
        let ssim = a1 * a2 / den;
        total += ssim;
        // Differentiate through raw moments: var_a = q_a - mu_a^2 and
        // cov = q_ab - mu_a mu_b both depend on mu_a.
        d_mu[i] = inv_n * ((2.0 * mb * a2 - 2.0 * mb * a1) / den - ssim * (2.0 * ma / b1 - 2.0 * ma / b2));
        d_qab[i] = inv_n * 2.0 * a1 / den;
        d_qa[i] = -inv_n * ssim / b2;
    }
    let g_mu = filter_adjoint(&d_mu, w, h, &k);
    let g_qa = filter_adjoint(&d_qa, w, h, &k);
    let g_qab = filter_adjoint(&d_qab, w, h, &k);
    let grad = (0..w * h)
        .map(|p| g_mu[p] + g_qab[p] * b[p] + 2.0 * a[p] * g_qa[p])
        .collect();
    Ok((total * inv_n, grad))
}
