//! New Gaussians at surface samples, inheriting appearance from old neighbors.

use nalgebra::Quaternion;
use rand::Rng;

use crate::error::{Error, Result};
use crate::gaussian::{GaussianCloud, GaussianPoint};
use crate::kdtree::KdTree;
use crate::math::{logit, sigmoid, Vec3};

/// Uniformly distributed unit quaternion (Shoemake's method).
pub fn random_unit_quaternion<R: Rng>(rng: &mut R) -> Quaternion<f64> {
    let (u1, u2, u3): (f64, f64, f64) = (rng.gen(), rng.gen(), rng.gen());
    let tau = 2.0 * std::f64::consts::PI;
    let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
    Quaternion::new(b * (tau * u3).cos(), a * (tau * u2).sin(), a * (tau * u2).cos(), b * (tau * u3).sin())
}

/// One Gaussian per sample: opacity and SH by inverse-distance weighting of the
/// `k` nearest old Gaussians, random rotation, isotropic scale from the local
/// sample spacing times a factor in [0.5, 1.5].
pub fn re_gaussian<R: Rng>(samples: &[Vec3], old: &GaussianCloud, k: usize, rng: &mut R) -> Result<GaussianCloud> {
    if old.is_empty() {
        return Err(Error::arg("cannot inherit properties from an empty cloud"));
    }
    if k == 0 {
        return Err(Error::arg("k must be at least 1"));
    }
    let old_tree = KdTree::new(&old.means());
    let new_tree = KdTree::new(samples);
    let coeffs = old.coeffs_per_point();
    let mut out = GaussianCloud::new(old.sh_degree())?;
    for x in samples {
        let near = old_tree.nearest(x, k);
        let (eta, f) = match near.iter().find(|&&(_, d)| d == 0.0) {
            Some(&(i, _)) => (old.points[i].eta, old.points[i].f.clone()),
            None => {
                let mut wsum = 0.0;
                let mut opacity = 0.0;
                let mut f = vec![0.0; coeffs];
                for &(i, d) in &near {
                    let w = 1.0 / d;
                    wsum += w;
                    opacity += w * old.points[i].opacity();
                    for (acc, v) in f.iter_mut().zip(&old.points[i].f) {
                        *acc += w * v;
                    }
                }
                f.iter_mut().for_each(|v| *v /= wsum);
                (logit(opacity / wsum), f)
            }
        };
        let spacing: Vec<f64> = new_tree.nearest(x, 4).into_iter().skip(1).map(|(_, d)| d).collect();
        let mut base = if spacing.is_empty() { 0.0 } else { spacing.iter().sum::<f64>() / spacing.len() as f64 };
        if !(base > 0.0) {
            // lone or stacked sample: fall back to the old neighbors' size
            base = near.iter().map(|&(i, _)| old.points[i].scales().mean()).sum::<f64>() / near.len() as f64;
        }
        let u = rng.gen_range(0.5..=1.5);
        let q = random_unit_quaternion(rng);
        out.points.push(GaussianPoint::new(*x, q, Vec3::repeat((base * u).ln()), eta, f));
        out.grad_accum.push(Default::default());
    }
    Ok(out)
}

/// Sum of per-point opacities.
pub fn opacity_mass(cloud: &GaussianCloud) -> f64 {
    cloud.points.iter().map(|p| sigmoid(p.eta)).sum()
}
