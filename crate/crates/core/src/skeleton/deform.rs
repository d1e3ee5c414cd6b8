//! Skinning Gaussians into a pose, and the adjoint of that map.

use super::{Pose, ResidualNet};
use crate::error::{Error, Result};
use crate::gaussian::GaussianCloud;
use crate::math::{nearest_rotation, rotation_part, translation_part, Mat3, Mat4, Vec3};
use crate::splat::{PosedCloud, RenderGaussian, SplatGradients};

/// What [`deform_backward`] needs from the forward deformation.
#[derive(Debug, Clone)]
pub struct DeformTape {
    a_rot: Vec<Mat3>,
    polar: Vec<Mat3>,
    offsets: Vec<Vec3>,
}

impl DeformTape {
    /// Canonical-space residual offsets produced by the network.
    pub fn offsets(&self) -> &[Vec3] {
        &self.offsets
    }
}

fn is_rotation(m: &Mat3) -> bool {
    (m.transpose() * m - Mat3::identity()).abs().max() < 1e-12 && m.determinant() > 0.0
}

/// μ' = μ + residual(pose, μ), μ_θ = A_rot μ' + A_t, R_θ = polar(A_rot) R.
pub fn deform_gaussians(
    cloud: &GaussianCloud,
    blended: &[Mat4],
    residual: &mut ResidualNet,
    pose: &Pose,
) -> Result<(PosedCloud, DeformTape)> {
    if blended.len() != cloud.len() {
        return Err(Error::arg(format!(
            "{} blended transforms for {} gaussians",
            blended.len(),
            cloud.len()
        )));
    }
    let means = cloud.means();
    let offsets = residual.forward_batch(pose, &means)?;
    let mut a_rot = Vec::with_capacity(cloud.len());
    let mut polar = Vec::with_capacity(cloud.len());
    let mut gaussians = Vec::with_capacity(cloud.len());
    for ((p, a), off) in cloud.points.iter().zip(blended).zip(&offsets) {
        let r = rotation_part(a);
        let pr = if is_rotation(&r) { r } else { nearest_rotation(&r) };
        let shifted = if *off == Vec3::zeros() { p.mu } else { p.mu + off };
        gaussians.push(RenderGaussian {
            mean: r * shifted + translation_part(a),
            rotation: pr * p.rotation(),
            log_scale: p.s,
            eta: p.eta,
            sh: p.f.clone(),
        });
        a_rot.push(r);
        polar.push(pr);
    }
    Ok((
        PosedCloud {
            sh_degree: cloud.sh_degree(),
            gaussians,
        },
        DeformTape { a_rot, polar, offsets },
    ))
}

/// Pulls posed-space gradients back to canonical parameters; residual-network
/// weight gradients accumulate inside `residual`. `offset_grad` adds a direct
/// loss gradient on the residual offsets (e.g. a regularizer).
pub fn deform_backward(
    tape: &DeformTape,
    posed: &SplatGradients,
    offset_grad: Option<&[Vec3]>,
    residual: &mut ResidualNet,
) -> Result<SplatGradients> {
    let n = tape.a_rot.len();
    if posed.d_mu.len() != n {
        return Err(Error::arg(format!("{} gradients for {n} deformed gaussians", posed.d_mu.len())));
    }
    let d_shifted: Vec<Vec3> = tape.a_rot.iter().zip(&posed.d_mu).map(|(r, g)| r.transpose() * g).collect();
    let upstream = match offset_grad {
        Some(extra) if extra.len() != n => {
            return Err(Error::arg(format!("{} offset gradients for {n} gaussians", extra.len())));
        }
        Some(extra) => d_shifted.iter().zip(extra).map(|(a, b)| a + b).collect(),
        None => d_shifted.clone(),
    };
    let through_net = residual.backward(&upstream)?;
    let mut out = posed.clone();
    for i in 0..n {
        out.d_mu[i] = d_shifted[i] + through_net[i];
        out.d_rot[i] = tape.polar[i].transpose() * posed.d_rot[i];
    }
    Ok(out)
}
