//! Real spherical-harmonic color evaluation, degree <= 3, using the basis
//! ordering and sign convention of standard 3DGS exports.

use nalgebra::Vector3;

use crate::model::SH_C0;

const SH_C1: f64 = 0.488_602_511_902_919_9;
const SH_C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
const SH_C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

/// Basis values for a unit direction, length `(degree+1)^2`.
pub fn basis(degree: usize, dir: &Vector3<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity((degree + 1) * (degree + 1));
    out.push(SH_C0);
    if degree == 0 {
        return out;
    }
    let (x, y, z) = (dir.x, dir.y, dir.z);
    out.extend_from_slice(&[-SH_C1 * y, SH_C1 * z, -SH_C1 * x]);
    if degree == 1 {
        return out;
    }
    let (xx, yy, zz) = (x * x, y * y, z * z);
    let (xy, yz, xz) = (x * y, y * z, x * z);
    out.extend_from_slice(&[
        SH_C2[0] * xy,
        SH_C2[1] * yz,
        SH_C2[2] * (2.0 * zz - xx - yy),
        SH_C2[3] * xz,
        SH_C2[4] * (xx - yy),
    ]);
    if degree == 2 {
        return out;
    }
    out.extend_from_slice(&[
        SH_C3[0] * y * (3.0 * xx - yy),
        SH_C3[1] * xy * z,
        SH_C3[2] * y * (4.0 * zz - xx - yy),
        SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy),
        SH_C3[4] * x * (4.0 * zz - xx - yy),
        SH_C3[5] * z * (xx - yy),
        SH_C3[6] * x * (xx - 3.0 * yy),
    ]);
    out
}

/// Unclamped RGB for the given coefficients seen along `dir` (unit vector
/// from camera center to Gaussian center). Includes the +0.5 offset.
pub fn eval_color(coeffs: &[[f64; 3]], degree: usize, dir: &Vector3<f64>) -> [f64; 3] {
    if degree == 0 {
        return coeffs[0].map(|f| SH_C0 * f + 0.5);
    }
    let b = basis(degree, dir);
    let mut c = [0.5; 3];
    for (bj, t) in b.iter().zip(coeffs) {
        for ch in 0..3 {
            c[ch] += bj * t[ch];
        }
    }
    c
}
