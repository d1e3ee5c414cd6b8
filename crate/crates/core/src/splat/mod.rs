//! CPU splatting of posed Gaussians with exact reverse-mode gradients.

mod project;
mod raster;

pub use project::{project_gaussian, Projected};
pub use raster::{depth_sort, rasterize_backward, rasterize_forward, render_silhouette, RenderTarget};

use nalgebra::Quaternion;
use serde::{Deserialize, Serialize};

use crate::gaussian::{GaussianCloud, ParamGroup};
use crate::math::{quat_to_rotmat, rotmat_grad_to_quat, Mat3, Vec3};

/// Rasterizer thresholds; the defaults follow common splatting practice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderConfig {
    pub tile_size: usize,
    /// Added to the diagonal of every screen-space covariance (px²).
    pub dilation: f64,
    pub alpha_max: f64,
    pub alpha_min: f64,
    pub transmittance_min: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            tile_size: 16,
            dilation: 0.3,
            alpha_max: 0.99,
            alpha_min: 1.0 / 255.0,
            transmittance_min: 1e-4,
        }
    }
}

/// One Gaussian as the rasterizer sees it.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderGaussian {
    pub mean: Vec3,
    pub rotation: Mat3,
    pub log_scale: Vec3,
    pub eta: f64,
    pub sh: Vec<f64>,
}

/// A cloud ready for rendering: canonical as-is, or deformed into a pose.
#[derive(Debug, Clone, PartialEq)]
pub struct PosedCloud {
    pub sh_degree: u8,
    pub gaussians: Vec<RenderGaussian>,
}

impl PosedCloud {
    pub fn from_cloud(cloud: &GaussianCloud) -> Self {
        PosedCloud {
            sh_degree: cloud.sh_degree(),
            gaussians: cloud
                .points
                .iter()
                .map(|p| RenderGaussian {
                    mean: p.mu,
                    rotation: quat_to_rotmat(&p.q),
                    log_scale: p.s,
                    eta: p.eta,
                    sh: p.f.clone(),
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }
}

/// Per-Gaussian gradients of a scalar loss.
#[derive(Debug, Clone, PartialEq)]
pub struct SplatGradients {
    pub d_mu: Vec<Vec3>,
    /// Gradient on the rotation matrix handed to the rasterizer.
    pub d_rot: Vec<Mat3>,
    pub d_s: Vec<Vec3>,
    pub d_eta: Vec<f64>,
    /// Flattened like the SH block of each point.
    pub d_f: Vec<Vec<f64>>,
    /// Whether the Gaussian survived culling in the forward pass.
    pub visible: Vec<bool>,
}

impl SplatGradients {
    pub fn zeros(n: usize, coeffs: usize) -> Self {
        SplatGradients {
            d_mu: vec![Vec3::zeros(); n],
            d_rot: vec![Mat3::zeros(); n],
            d_s: vec![Vec3::zeros(); n],
            d_eta: vec![0.0; n],
            d_f: vec![vec![0.0; coeffs]; n],
            visible: vec![false; n],
        }
    }

    /// Rotation gradients pulled back to the raw quaternions of `cloud`.
    pub fn d_q(&self, cloud: &GaussianCloud) -> Vec<Quaternion<f64>> {
        cloud
            .points
            .iter()
            .zip(&self.d_rot)
            .map(|(p, g)| rotmat_grad_to_quat(&p.q, g))
            .collect()
    }

    /// Flattens one block in the layout of [`GaussianCloud::gather`].
    pub fn gather(&self, group: ParamGroup, cloud: &GaussianCloud) -> Vec<f64> {
        let mut out = Vec::with_capacity(group.stride(cloud.sh_degree()) * cloud.len());
        match group {
            ParamGroup::Position => self.d_mu.iter().for_each(|v| out.extend_from_slice(v.as_slice())),
            ParamGroup::Rotation => self
                .d_q(cloud)
                .iter()
                .for_each(|q| out.extend_from_slice(&[q.w, q.i, q.j, q.k])),
            ParamGroup::Scale => self.d_s.iter().for_each(|v| out.extend_from_slice(v.as_slice())),
            ParamGroup::Opacity => out.extend_from_slice(&self.d_eta),
            ParamGroup::Sh => self.d_f.iter().for_each(|f| out.extend_from_slice(f)),
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.d_mu.iter().all(|v| v.iter().all(|x| x.is_finite()))
            && self.d_rot.iter().all(|m| m.iter().all(|x| x.is_finite()))
            && self.d_s.iter().all(|v| v.iter().all(|x| x.is_finite()))
            && self.d_eta.iter().all(|x| x.is_finite())
            && self.d_f.iter().flatten().all(|x| x.is_finite())
    }
}
