use nalgebra::{Matrix2, Matrix2x3, Vector2};

use super::{RenderConfig, RenderGaussian};
use crate::camera::Camera;
use crate::gaussian::sh;
use crate::math::{sigmoid, Mat3, Vec3};

/// Screen-space footprint of one Gaussian plus what the backward pass needs.
#[derive(Debug, Clone)]
pub struct Projected {
    pub mean: Vector2<f64>,
    /// Dilated 2D covariance.
    pub cov: Matrix2<f64>,
    pub conic: Matrix2<f64>,
    pub depth: f64,
    pub opacity: f64,
    pub color: Vec3,
    /// Inclusive pixel rectangle that can receive alpha ≥ `alpha_min`.
    pub rect: [usize; 4],
    cam_mean: Vec3,
    jacobian: Matrix2x3<f64>,
    view_cov: Mat3,
    rs: Mat3,
    view_dir: Vec3,
    view_dist: f64,
    color_clamped: [bool; 3],
}

/// Projects a Gaussian into `camera`; `None` when it is culled.
pub fn project_gaussian(
    g: &RenderGaussian,
    sh_degree: u8,
    camera: &Camera,
    config: &RenderConfig,
    with_color: bool,
) -> Option<Projected> {
    let t = camera.to_camera(&g.mean);
    if !(t.z >= camera.near && t.z <= camera.far) {
        return None;
    }
    let opacity = sigmoid(g.eta);
    if opacity < config.alpha_min {
        return None;
    }
    let scales = g.log_scale.map(f64::exp);
    let rs = g.rotation * Mat3::from_diagonal(&scales);
    let cov3 = rs * rs.transpose();
    let w = &camera.rotation;
    let view_cov = w * cov3 * w.transpose();
    let iz = 1.0 / t.z;
    let jacobian = Matrix2x3::new(
        camera.fx * iz,
        0.0,
        -camera.fx * t.x * iz * iz,
        0.0,
        camera.fy * iz,
        -camera.fy * t.y * iz * iz,
    );
    let mut cov = jacobian * view_cov * jacobian.transpose();
    cov[(0, 0)] += config.dilation;
    cov[(1, 1)] += config.dilation;
    let det = cov[(0, 0)] * cov[(1, 1)] - cov[(0, 1)] * cov[(1, 0)];
    if !(det > 0.0) {
        return None;
    }
    let conic = Matrix2::new(cov[(1, 1)] / det, -cov[(0, 1)] / det, -cov[(1, 0)] / det, cov[(0, 0)] / det);
    let (mx, my) = camera.project(&t);
    let mean = Vector2::new(mx, my);

    // ellipse where opacity·g reaches alpha_min, never narrower than 3σ for culling
    let r_alpha = (2.0 * (opacity / config.alpha_min).ln()).max(0.0).sqrt();
    let ex = r_alpha * cov[(0, 0)].sqrt() * (1.0 + 1e-9);
    let ey = r_alpha * cov[(1, 1)].sqrt() * (1.0 + 1e-9);
    let (cx3, cy3) = (3.0 * cov[(0, 0)].sqrt(), 3.0 * cov[(1, 1)].sqrt());
    let (w_px, h_px) = (camera.width as f64, camera.height as f64);
    if mx + ex.max(cx3) < 0.5 || mx - ex.max(cx3) > w_px - 0.5 || my + ey.max(cy3) < 0.5 || my - ey.max(cy3) > h_px - 0.5 {
        return None;
    }
    let x0 = (mx - ex - 0.5).ceil().max(0.0);
    let x1 = (mx + ex - 0.5).floor().min(w_px - 1.0);
    let y0 = (my - ey - 0.5).ceil().max(0.0);
    let y1 = (my + ey - 0.5).floor().min(h_px - 1.0);
    if x1 < x0 || y1 < y0 {
        return None;
    }
    let rect = [x0 as usize, y0 as usize, x1 as usize, y1 as usize];

    let offset = g.mean - camera.center();
    let view_dist = offset.norm();
    let view_dir = if view_dist > 0.0 { offset / view_dist } else { Vec3::z() };
    let (color, color_clamped) = if with_color {
        let raw = sh::eval_raw(sh_degree, &g.sh, &view_dir) + Vec3::repeat(0.5);
        let clamped = [0, 1, 2].map(|c| !(0.0..=1.0).contains(&raw[c]));
        (raw.map(|c| c.clamp(0.0, 1.0)), clamped)
    } else {
        (Vec3::zeros(), [true; 3])
    };

    Some(Projected {
        mean,
        cov,
        conic,
        depth: t.z,
        opacity,
        color,
        rect,
        cam_mean: t,
        jacobian,
        view_cov,
        rs,
        view_dir,
        view_dist,
        color_clamped,
    })
}

/// Screen-space gradients gathered for one Gaussian.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct ScreenGrad {
    pub mean: Vector2<f64>,
    /// d/d(conic entries a, b, c) with conic = [[a, b], [b, c]].
    pub conic: Vec3,
    pub opacity: f64,
    pub color: Vec3,
}

impl ScreenGrad {
    pub fn add(&mut self, o: &ScreenGrad) {
        self.mean += o.mean;
        self.conic += o.conic;
        self.opacity += o.opacity;
        self.color += o.color;
    }
}

pub(crate) struct ParamGrad {
    pub d_mu: Vec3,
    pub d_rot: Mat3,
    pub d_s: Vec3,
    pub d_eta: f64,
    pub d_f: Vec<f64>,
}

/// Chains screen-space gradients back to the Gaussian's parameters.
pub(crate) fn backward_gaussian(
    g: &RenderGaussian,
    p: &Projected,
    sg: &ScreenGrad,
    sh_degree: u8,
    camera: &Camera,
) -> ParamGrad {
    let a = &p.conic;
    let ga = Matrix2::new(sg.conic.x, 0.5 * sg.conic.y, 0.5 * sg.conic.y, sg.conic.z);
    let g_cov2 = -(a * ga * a);
    let j = &p.jacobian;
    let v = &p.view_cov;
    let g_view = j.transpose() * g_cov2 * j;
    let g_j = 2.0 * g_cov2 * j * v;

    let t = &p.cam_mean;
    let (fx, fy) = (camera.fx, camera.fy);
    let iz = 1.0 / t.z;
    let iz2 = iz * iz;
    let iz3 = iz2 * iz;
    let mut dt = Vec3::new(
        fx * iz * sg.mean.x,
        fy * iz * sg.mean.y,
        -fx * t.x * iz2 * sg.mean.x - fy * t.y * iz2 * sg.mean.y,
    );
    dt.x += g_j[(0, 2)] * (-fx * iz2);
    dt.y += g_j[(1, 2)] * (-fy * iz2);
    dt.z += g_j[(0, 0)] * (-fx * iz2)
        + g_j[(0, 2)] * (2.0 * fx * t.x * iz3)
        + g_j[(1, 1)] * (-fy * iz2)
        + g_j[(1, 2)] * (2.0 * fy * t.y * iz3);

    let w = &camera.rotation;
    let mut d_mu = w.transpose() * dt;

    let g_cov3 = w.transpose() * g_view * w;
    let g_rs = 2.0 * g_cov3 * p.rs;
    let scales = g.log_scale.map(f64::exp);
    let d_rot = g_rs * Mat3::from_diagonal(&scales);
    let rt_grs = g.rotation.transpose() * g_rs;
    let d_s = Vec3::new(
        rt_grs[(0, 0)] * scales.x,
        rt_grs[(1, 1)] * scales.y,
        rt_grs[(2, 2)] * scales.z,
    );

    let d_eta = sg.opacity * p.opacity * (1.0 - p.opacity);

    let n_coeffs = sh::coeff_count(sh_degree);
    let mut d_f = vec![0.0; 3 * n_coeffs];
    let mut dc = sg.color;
    for c in 0..3 {
        if p.color_clamped[c] {
            dc[c] = 0.0;
        }
    }
    if dc != Vec3::zeros() {
        let mut basis = [0.0; 16];
        sh::basis(sh_degree, &p.view_dir, &mut basis);
        for k in 0..n_coeffs {
            for c in 0..3 {
                d_f[3 * k + c] = dc[c] * basis[k];
            }
        }
        if sh_degree > 0 {
            let mut grads = [Vec3::zeros(); 16];
            sh::basis_grad(sh_degree, &p.view_dir, &mut grads);
            let mut d_dir = Vec3::zeros();
            for k in 1..n_coeffs {
                let weight = g.sh[3 * k] * dc.x + g.sh[3 * k + 1] * dc.y + g.sh[3 * k + 2] * dc.z;
                d_dir += grads[k] * weight;
            }
            let d = &p.view_dir;
            d_mu += (d_dir - d * d.dot(&d_dir)) / p.view_dist;
        }
    }

    ParamGrad {
        d_mu,
        d_rot,
        d_s,
        d_eta,
        d_f,
    }
}
