//! Real spherical harmonics up to degree 3, with Cartesian gradients.

use crate::math::Vec3;

pub const SH_C0: f64 = 0.282_094_791_773_878_14;
pub const SH_C1: f64 = 0.488_602_511_902_919_9;
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

pub const MAX_DEGREE: u8 = 3;

/// Number of basis functions for a given degree.
pub fn coeff_count(degree: u8) -> usize {
    let d = degree as usize + 1;
    d * d
}

/// Basis values at direction `d` (assumed unit), written into `out`.
pub fn basis(degree: u8, d: &Vec3, out: &mut [f64]) {
    let (x, y, z) = (d.x, d.y, d.z);
    out[0] = SH_C0;
    if degree == 0 {
        return;
    }
    out[1] = -SH_C1 * y;
    out[2] = SH_C1 * z;
    out[3] = -SH_C1 * x;
    if degree == 1 {
        return;
    }
    let (xx, yy, zz) = (x * x, y * y, z * z);
    out[4] = SH_C2[0] * x * y;
    out[5] = SH_C2[1] * y * z;
    out[6] = SH_C2[2] * (2.0 * zz - xx - yy);
    out[7] = SH_C2[3] * x * z;
    out[8] = SH_C2[4] * (xx - yy);
    if degree == 2 {
        return;
    }
    out[9] = SH_C3[0] * y * (3.0 * xx - yy);
    out[10] = SH_C3[1] * x * y * z;
    out[11] = SH_C3[2] * y * (4.0 * zz - xx - yy);
    out[12] = SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
    out[13] = SH_C3[4] * x * (4.0 * zz - xx - yy);
    out[14] = SH_C3[5] * z * (xx - yy);
    out[15] = SH_C3[6] * x * (xx - 3.0 * yy);
}

/// Cartesian gradient of each basis polynomial at `d`.
pub fn basis_grad(degree: u8, d: &Vec3, out: &mut [Vec3]) {
    let (x, y, z) = (d.x, d.y, d.z);
    out[0] = Vec3::zeros();
    if degree == 0 {
        return;
    }
    out[1] = Vec3::new(0.0, -SH_C1, 0.0);
    out[2] = Vec3::new(0.0, 0.0, SH_C1);
    out[3] = Vec3::new(-SH_C1, 0.0, 0.0);
    if degree == 1 {
        return;
    }
    out[4] = SH_C2[0] * Vec3::new(y, x, 0.0);
    out[5] = SH_C2[1] * Vec3::new(0.0, z, y);
    out[6] = SH_C2[2] * Vec3::new(-2.0 * x, -2.0 * y, 4.0 * z);
    out[7] = SH_C2[3] * Vec3::new(z, 0.0, x);
    out[8] = SH_C2[4] * Vec3::new(2.0 * x, -2.0 * y, 0.0);
    if degree == 2 {
        return;
    }
    let (xx, yy, zz) = (x * x, y * y, z * z);
    out[9] = SH_C3[0] * Vec3::new(6.0 * x * y, 3.0 * xx - 3.0 * yy, 0.0);
    out[10] = SH_C3[1] * Vec3::new(y * z, x * z, x * y);
    out[11] = SH_C3[2] * Vec3::new(-2.0 * x * y, 4.0 * zz - xx - 3.0 * yy, 8.0 * y * z);
    out[12] = SH_C3[3] * Vec3::new(-6.0 * x * z, -6.0 * y * z, 6.0 * zz - 3.0 * xx - 3.0 * yy);
    out[13] = SH_C3[4] * Vec3::new(4.0 * zz - 3.0 * xx - yy, -2.0 * x * y, 8.0 * x * z);
    out[14] = SH_C3[5] * Vec3::new(2.0 * x * z, -2.0 * y * z, xx - yy);
    out[15] = SH_C3[6] * Vec3::new(3.0 * xx - 3.0 * yy, -6.0 * x * y, 0.0);
}

/// Raw (unclamped, un-offset) color: sum of coefficient-weighted basis per channel.
/// `coeffs` is laid out coefficient-major, three channels per coefficient.
pub fn eval_raw(degree: u8, coeffs: &[f64], dir: &Vec3) -> Vec3 {
    let mut b = [0.0; 16];
    basis(degree, dir, &mut b);
    let mut c = Vec3::zeros();
    for (k, bk) in b.iter().take(coeff_count(degree)).enumerate() {
        c.x += coeffs[3 * k] * bk;
        c.y += coeffs[3 * k + 1] * bk;
        c.z += coeffs[3 * k + 2] * bk;
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradients_match_finite_differences() {
        let d = Vec3::new(0.3, -0.5, 0.8);
        let mut g = [Vec3::zeros(); 16];
        basis_grad(3, &d, &mut g);
        let h = 1e-6;
        for axis in 0..3 {
            let mut dp = d;
            let mut dm = d;
            dp[axis] += h;
            dm[axis] -= h;
            let mut bp = [0.0; 16];
            let mut bm = [0.0; 16];
            basis(3, &dp, &mut bp);
            basis(3, &dm, &mut bm);
            for k in 0..16 {
                let fd = (bp[k] - bm[k]) / (2.0 * h);
                assert!((fd - g[k][axis]).abs() < 1e-8, "basis {k} axis {axis}");
            }
        }
    }
}
