//! Photometric training loss and the pluggable perceptual term.

use crate::error::{Error, Result};
use crate::image::Image;
use crate::math::Vec3;

/// A feature-space image distance usable as the perceptual loss term.
pub trait FeatureDistance: Sync {
    /// Distance between `rendered` and `target`, and its gradient with respect
    /// to `rendered`.
    fn evaluate(&self, rendered: &Image, target: &Image) -> Result<(f64, Image)>;
}

/// Stand-in for a learned perceptual metric: the summed mean absolute
/// difference of finite-difference image gradients over dyadic scales. It is
/// not a learned perceptual metric; swap in another [`FeatureDistance`] for that.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientL1Proxy {
    pub scales: usize,
}

impl Default for GradientL1Proxy {
    fn default() -> Self {
        GradientL1Proxy { scales: 3 }
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Value and gradient (w.r.t. `a`) of the mean |∇a − ∇b| at one resolution.
fn gradient_l1(a: &Image, b: &Image) -> (f64, Image) {
    let (w, h) = (a.width, a.height);
    let mut grad = Image::new(w, h);
    let count = 3 * (w.saturating_sub(1) * h + w * h.saturating_sub(1));
    if count == 0 {
        return (0.0, grad);
    }
    let inv = 1.0 / count as f64;
    let mut sum = 0.0;
    let idx = |x: usize, y: usize, c: usize| 3 * (y * w + x) + c;
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let here = idx(x, y, c);
                for next in [(x + 1 < w).then(|| idx(x + 1, y, c)), (y + 1 < h).then(|| idx(x, y + 1, c))]
                    .into_iter()
                    .flatten()
                {
                    let d = (a.data[next] - a.data[here]) - (b.data[next] - b.data[here]);
                    sum += d.abs();
                    let e = sign(d) * inv;
                    grad.data[next] += e;
                    grad.data[here] -= e;
                }
            }
        }
    }
    (sum * inv, grad)
}

impl FeatureDistance for GradientL1Proxy {
    fn evaluate(&self, rendered: &Image, target: &Image) -> Result<(f64, Image)> {
        rendered.check_same_size(target)?;
        let mut total = 0.0;
        let mut grad = Image::new(rendered.width, rendered.height);
        for s in 0..self.scales {
            let f = 1usize << s;
            if rendered.width / f == 0 || rendered.height / f == 0 {
                break;
            }
            let (v, g) = gradient_l1(&rendered.downsample(f), &target.downsample(f));
            total += v;
            // adjoint of the box downsampling
            let norm = 1.0 / (f * f) as f64;
            for y in 0..g.height * f {
                for x in 0..g.width * f {
                    let up = g.get(x / f, y / f) * norm;
                    grad.set(x, y, grad.get(x, y) + up);
                }
            }
        }
        Ok((total, grad))
    }
}

/// Multi-scale gradient-L1 proxy with the default three scales.
pub fn perceptual_proxy(a: &Image, b: &Image) -> Result<f64> {
    Ok(GradientL1Proxy::default().evaluate(a, b)?.0)
}

/// Weights of the photometric loss terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda3: f64,
    pub lambda4: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderLoss {
    pub total: f64,
    pub l1: f64,
    pub perceptual: f64,
    pub residual: f64,
    /// dL/d(rendered color).
    pub d_color: Image,
    /// dL/d(residual offsets).
    pub d_offsets: Vec<Vec3>,
}

/// L = mean|C − I| + λ₃·perceptual(C, I) + λ₄·mean‖r‖₁ with analytic gradients.
pub fn render_loss(
    rendered: &Image,
    target: &Image,
    offsets: &[Vec3],
    weights: LossWeights,
    perceptual: &dyn FeatureDistance,
) -> Result<RenderLoss> {
    rendered.check_same_size(target)?;
    if rendered.data.is_empty() {
        return Err(Error::arg("render loss on an empty image"));
    }
    let n = rendered.data.len() as f64;
    let mut d_color = Image::new(rendered.width, rendered.height);
    let mut l1 = 0.0;
    for ((d, c), t) in d_color.data.iter_mut().zip(&rendered.data).zip(&target.data) {
        l1 += (c - t).abs();
        *d = sign(c - t) / n;
    }
    l1 /= n;
    let mut perc = 0.0;
    if weights.lambda3 != 0.0 {
        let (v, g) = perceptual.evaluate(rendered, target)?;
        perc = v;
        for (d, gv) in d_color.data.iter_mut().zip(&g.data) {
            *d += weights.lambda3 * gv;
        }
    }
    let mut residual = 0.0;
    let mut d_offsets = vec![Vec3::zeros(); offsets.len()];
    if !offsets.is_empty() {
        let m = offsets.len() as f64;
        residual = offsets.iter().map(|r| r.abs().sum()).sum::<f64>() / m;
        for (d, r) in d_offsets.iter_mut().zip(offsets) {
            *d = r.map(sign) * (weights.lambda4 / m);
        }
    }
    Ok(RenderLoss {
        total: l1 + weights.lambda3 * perc + weights.lambda4 * residual,
        l1,
        perceptual: perc,
        residual,
        d_color,
        d_offsets,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random_image(w: usize, h: usize, seed: u64) -> Image {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut img = Image::new(w, h);
        img.data.iter_mut().for_each(|v| *v = rng.gen());
        img
    }

    const DEFAULT: LossWeights = LossWeights {
        lambda3: 0.1,
        lambda4: 0.5,
    };

    #[test]
    fn proxy_is_zero_for_equal_and_shifted_images() {
        let a = random_image(16, 12, 1);
        assert_eq!(perceptual_proxy(&a, &a).unwrap(), 0.0);
        let mut b = a.clone();
        b.data.iter_mut().for_each(|v| *v += 0.25);
        assert!(perceptual_proxy(&a, &b).unwrap() < 1e-12);
    }

    #[test]
    fn proxy_step_edge_closed_form() {
        let (w, h, c) = (10usize, 6usize, 4usize);
        let edge = |col: usize| {
            let mut img = Image::new(w, h);
            for y in 0..h {
                for x in col..w {
                    img.set(x, y, Vec3::repeat(1.0));
                }
            }
            img
        };
        let single = GradientL1Proxy { scales: 1 };
        let (v, _) = single.evaluate(&edge(c), &edge(c + 1)).unwrap();
        // each row and channel has two unit horizontal differences that disagree
        let expected = (2 * h * 3) as f64 / (3 * ((w - 1) * h + w * (h - 1))) as f64;
        assert!((v - expected).abs() < 1e-15);
    }

    #[test]
    fn render_loss_zero_and_offset_cases() {
        let a = random_image(8, 8, 2);
        let zero = render_loss(&a, &a, &[Vec3::zeros(); 3], DEFAULT, &GradientL1Proxy::default()).unwrap();
        assert_eq!(zero.total, 0.0);
        let mut b = a.clone();
        b.data.iter_mut().for_each(|v| *v += 0.1);
        let w = LossWeights {
            lambda3: 0.0,
            lambda4: 0.0,
        };
        let l = render_loss(&b, &a, &[], w, &GradientL1Proxy::default()).unwrap();
        assert!((l.total - 0.1).abs() < 1e-12);
    }

    #[test]
    fn render_loss_gradient_matches_finite_differences() {
        let c = random_image(4, 4, 3);
        let t = random_image(4, 4, 4);
        let offsets = vec![Vec3::new(0.1, -0.2, 0.3), Vec3::new(-0.05, 0.4, -0.6)];
        let proxy = GradientL1Proxy::default();
        let l = render_loss(&c, &t, &offsets, DEFAULT, &proxy).unwrap();
        let h = 1e-7;
        for i in 0..c.data.len() {
            let mut p = c.clone();
            p.data[i] += h;
            let mut m = c.clone();
            m.data[i] -= h;
            let fd = (render_loss(&p, &t, &offsets, DEFAULT, &proxy).unwrap().total
                - render_loss(&m, &t, &offsets, DEFAULT, &proxy).unwrap().total)
                / (2.0 * h);
            let g = l.d_color.data[i];
            assert!((g - fd).abs() <= 1e-6 * g.abs().max(fd.abs()).max(1e-3), "{i}: {g} vs {fd}");
        }
        for (k, r) in offsets.iter().enumerate() {
            for a in 0..3 {
                let mut p = offsets.clone();
                p[k][a] = r[a] + h;
                let mut m = offsets.clone();
                m[k][a] = r[a] - h;
                let fd = (render_loss(&c, &t, &p, DEFAULT, &proxy).unwrap().total
                    - render_loss(&c, &t, &m, DEFAULT, &proxy).unwrap().total)
                    / (2.0 * h);
                assert!((l.d_offsets[k][a] - fd).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let a = Image::new(4, 4);
        let b = Image::new(4, 3);
        assert!(render_loss(&a, &b, &[], DEFAULT, &GradientL1Proxy::default()).is_err());
        assert!(perceptual_proxy(&a, &b).is_err());
    }

    struct Constant;

    impl FeatureDistance for Constant {
        fn evaluate(&self, rendered: &Image, _: &Image) -> Result<(f64, Image)> {
            Ok((2.0, Image::new(rendered.width, rendered.height)))
        }
    }

    #[test]
    fn external_feature_distance_plugs_in() {
        let a = random_image(4, 4, 5);
        let l = render_loss(&a, &a, &[], DEFAULT, &Constant).unwrap();
        assert!((l.total - 0.2).abs() < 1e-15);
    }
}
