//! Image fidelity metrics.

use crate::error::{Error, Result};
use crate::image::Image;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// PSNR in dB for images in [0, 1]; identical images give `f64::INFINITY`.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    a.check_same_size(b)?;
    if a.data.is_empty() {
        return Err(Error::arg("psnr of empty images"));
    }
    let mse = a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.data.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Separable Gaussian filter over valid windows only.
fn filter_valid(data: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w + 1 - SSIM_WINDOW;
    let oh = h + 1 - SSIM_WINDOW;
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * data[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Per-window SSIM map of one channel, over windows fully inside the image.
pub fn ssim_map(a: &[f64], b: &[f64], width: usize, height: usize) -> Result<Vec<f64>> {
    if width < SSIM_WINDOW || height < SSIM_WINDOW {
        return Err(Error::arg(format!(
            "ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {width}x{height}"
        )));
    }
    if a.len() != width * height || b.len() != width * height {
        return Err(Error::arg("ssim channel length does not match its size"));
    }
    let k = gaussian_kernel();
    // dynamic range is 1
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let prod = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> { a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect() };
    let mu_a = filter_valid(a, width, height, &k);
    let mu_b = filter_valid(b, width, height, &k);
    let aa = filter_valid(&prod(&|x, _| x * x), width, height, &k);
    let bb = filter_valid(&prod(&|_, y| y * y), width, height, &k);
    let ab = filter_valid(&prod(&|x, y| x * y), width, height, &k);
    Ok((0..mu_a.len())
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .collect())
}

/// Mean SSIM over valid 11×11 Gaussian windows, averaged over channels.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    a.check_same_size(b)?;
    let mut total = 0.0;
    for c in 0..3 {
        let map = ssim_map(&a.channel(c).data, &b.channel(c).data, a.width, a.height)?;
        total += map.iter().sum::<f64>() / map.len() as f64;
    }
    Ok(total / 3.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::Vec3;
    use rand::{Rng, SeedableRng};

    fn random_image(w: usize, h: usize, seed: u64) -> Image {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut img = Image::new(w, h);
        img.data.iter_mut().for_each(|v| *v = rng.gen());
        img
    }

    /// Direct windowed statistics with a 2D kernel, no separable filtering.
    fn reference_ssim(a: &Image, b: &Image) -> f64 {
        let sigma: f64 = 1.5;
        let mut k2 = [[0.0; 11]; 11];
        let mut sum = 0.0;
        for (i, row) in k2.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
                *v = (-(di * di + dj * dj) / (2.0 * sigma * sigma)).exp();
                sum += *v;
            }
        }
        let (c1, c2) = (0.0001, 0.0009);
        let mut acc = 0.0;
        let mut count = 0.0;
        for c in 0..3 {
            for y in 0..=a.height - 11 {
                for x in 0..=a.width - 11 {
                    let (mut ma, mut mb, mut sa, mut sb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for i in 0..11 {
                        for j in 0..11 {
                            let w = k2[i][j] / sum;
                            let u = a.get(x + j, y + i)[c];
                            let v = b.get(x + j, y + i)[c];
                            ma += w * u;
                            mb += w * v;
                            sa += w * u * u;
                            sb += w * v * v;
                            sab += w * u * v;
                        }
                    }
                    let (va, vb, cov) = (sa - ma * ma, sb - mb * mb, sab - ma * mb);
                    acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                    count += 1.0;
                }
            }
        }
        acc / count
    }

    #[test]
    fn psnr_of_uniform_offset_is_twenty() {
        let a = Image::filled(8, 8, Vec3::repeat(0.5));
        let b = Image::filled(8, 8, Vec3::repeat(0.4));
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
    }

    #[test]
    fn ssim_self_is_one() {
        let a = random_image(24, 20, 1);
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn metrics_match_reference_on_random_pairs() {
        for seed in 0..5 {
            let a = random_image(19, 17, seed);
            let mut b = a.clone();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed + 100);
            b.data.iter_mut().for_each(|v| *v = (*v + rng.gen_range(-0.2..0.2)).clamp(0.0, 1.0));
            let mse = a.data.iter().zip(&b.data).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.data.len() as f64;
            assert!((psnr(&a, &b).unwrap() - (-10.0 * mse.log10())).abs() < 1e-6);
            assert!((ssim(&a, &b).unwrap() - reference_ssim(&a, &b)).abs() < 1e-4);
        }
    }

    #[test]
    fn negative_of_balanced_pattern_is_anticorrelated() {
        // a 0/1 checkerboard and its negative share every window mean of about
        // one half; with unit-scale variance each window tends to -1
        let mut a = Image::new(16, 16);
        for y in 0..16 {
            for x in 0..16 {
                a.set(x, y, Vec3::repeat(((x + y) % 2) as f64));
            }
        }
        let mut neg = a.clone();
        neg.data.iter_mut().for_each(|v| *v = 1.0 - *v);
        let map = ssim_map(&a.channel(0).data, &neg.channel(0).data, 16, 16).unwrap();
        for v in map {
            assert!(v < -0.99, "{v}");
        }
    }

    #[test]
    fn rejects_mismatched_or_tiny_images() {
        assert!(psnr(&Image::new(4, 4), &Image::new(4, 5)).is_err());
        assert!(ssim(&Image::new(8, 8), &Image::new(8, 8)).is_err());
    }
}
