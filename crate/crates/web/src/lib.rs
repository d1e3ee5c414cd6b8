//! WebAssembly bindings for the browser demo.
//!
//! The demo holds one Gaussian avatar of the synthetic capsule figure and
//! offers three operations: render it in a chosen pose and view, compare that
//! render against the textured mesh it was built from, and re-initialize the
//! cloud from its alpha-shape surface.

use std::f64::consts::PI;

use splat_avatar::camera::Camera;
use splat_avatar::error::Result;
use splat_avatar::gaussian::{GaussianCloud, GaussianPoint};
use splat_avatar::image::Image;
use splat_avatar::io::quantize;
use splat_avatar::math::Vec3;
use splat_avatar::metrics::{psnr, ssim};
use splat_avatar::optim::{render_view, TrainConfig};
use splat_avatar::reinit::{reinitialize, ReinitConfig};
use splat_avatar::skeleton::{Pose, ResidualNet, SkeletonAsset};
use splat_avatar::synth::{capsule_figure, figure_texture, render_textured};
use wasm_bindgen::prelude::*;

/// Slider state: camera orbit angle and three pose controls, all in radians.
#[wasm_bindgen]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct View {
    pub azimuth: f64,
    /// Torso turn about the vertical axis.
    pub turn: f64,
    /// Arms raised (positive) or lowered from the T-pose.
    pub arms: f64,
    /// Legs swung apart front to back.
    pub stride: f64,
}

#[wasm_bindgen]
impl View {
    #[wasm_bindgen(constructor)]
    pub fn new(azimuth: f64, turn: f64, arms: f64, stride: f64) -> View {
        View {
            azimuth,
            turn,
            arms,
            stride,
        }
    }
}

impl View {
    fn pose(&self) -> Pose {
        Pose::new(
            vec![
                Vec3::new(0.0, self.turn, 0.0),
                Vec3::new(0.0, 0.0, self.arms),
                Vec3::new(0.0, 0.0, -self.arms),
                Vec3::new(self.stride, 0.0, 0.0),
                Vec3::new(-self.stride, 0.0, 0.0),
            ],
            Vec3::zeros(),
        )
    }

    fn camera(&self, size: usize) -> Camera {
        let eye = Vec3::new(3.6 * self.azimuth.sin(), 0.7, -3.6 * self.azimuth.cos());
        Camera::look_at(eye, Vec3::new(0.0, 0.15, 0.0), Vec3::y(), 1.4 * size as f64, size, size)
    }
}

/// One Gaussian per canonical mesh vertex, colored by the figure texture.
fn textured_vertex_cloud(asset: &SkeletonAsset) -> Result<GaussianCloud> {
    let points = asset
        .vertices
        .iter()
        .map(|v| GaussianPoint::isotropic(*v, 0.025, 0.8, figure_texture(v), 0))
        .collect();
    GaussianCloud::from_points(0, points)
}

fn rgba(img: &Image) -> Vec<u8> {
    img.data
        .chunks_exact(3)
        .flat_map(|c| [quantize(c[0]), quantize(c[1]), quantize(c[2]), 255])
        .collect()
}

fn js_err(e: splat_avatar::error::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub struct Avatar {
    asset: SkeletonAsset,
    cloud: GaussianCloud,
    residual: ResidualNet,
    config: TrainConfig,
    size: usize,
    reinit_runs: u64,
}

impl Avatar {
    pub fn build(size: usize) -> Result<Avatar> {
        if size == 0 {
            return Err(splat_avatar::error::Error::Validation("size must be positive".into()));
        }
        let asset = capsule_figure()?;
        let cloud = textured_vertex_cloud(&asset)?;
        let residual = ResidualNet::new(asset.joint_count(), 0);
        Ok(Avatar {
            asset,
            cloud,
            residual,
            config: TrainConfig::default(),
            size,
            reinit_runs: 0,
        })
    }

    pub fn splat_image(&mut self, view: &View) -> Result<Image> {
        render_view(&self.asset, &self.cloud, &mut self.residual, &view.pose(), &view.camera(self.size), &self.config)
    }

    pub fn mesh_image(&self, view: &View) -> Result<Image> {
        Ok(render_textured(&self.asset, &view.pose(), &view.camera(self.size), 2, &figure_texture)?.image)
    }

    /// PSNR and SSIM of the splat render against the mesh render.
    pub fn scores(&mut self, view: &View) -> Result<(f64, f64)> {
        let a = self.splat_image(view)?;
        let b = self.mesh_image(view)?;
        Ok((psnr(&a, &b)?, ssim(&a, &b)?))
    }

    pub fn reinit(&mut self) -> Result<String> {
        let config = ReinitConfig {
            seed: self.reinit_runs,
            ..ReinitConfig::default()
        };
        let (cloud, r) = reinitialize(&self.cloud, &config)?;
        self.cloud = cloud;
        self.reinit_runs += 1;
        Ok(format!(
            "{} points, alpha {:.3}, surface {} faces, spacing CoV {:.3} -> {:.3}",
            r.new_count, r.alpha, r.surface_faces, r.cov_before, r.cov_after
        ))
    }
}

#[wasm_bindgen]
impl Avatar {
    #[wasm_bindgen(constructor)]
    pub fn new(size: usize) -> std::result::Result<Avatar, JsError> {
        Avatar::build(size).map_err(js_err)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn point_count(&self) -> usize {
        self.cloud.len()
    }

    /// The splatted avatar as RGBA bytes, row-major.
    pub fn render(&mut self, view: &View) -> std::result::Result<Vec<u8>, JsError> {
        self.splat_image(view).map(|i| rgba(&i)).map_err(js_err)
    }

    /// The textured mesh reference as RGBA bytes.
    pub fn render_reference(&self, view: &View) -> std::result::Result<Vec<u8>, JsError> {
        self.mesh_image(view).map(|i| rgba(&i)).map_err(js_err)
    }

    /// `[psnr, ssim]` of the splat render against the mesh reference.
    pub fn compare(&mut self, view: &View) -> std::result::Result<Vec<f64>, JsError> {
        self.scores(view).map(|(p, s)| vec![p, s]).map_err(js_err)
    }

    /// Rebuilds the cloud from its alpha-shape surface; returns a summary line.
    pub fn reinitialize(&mut self) -> std::result::Result<String, JsError> {
        self.reinit().map_err(js_err)
    }

    /// Restores the initial cloud.
    pub fn reset(&mut self) -> std::result::Result<(), JsError> {
        self.cloud = textured_vertex_cloud(&self.asset).map_err(js_err)?;
        Ok(())
    }
}

/// Slider range for the pose controls, exported so the page and the bindings agree.
#[wasm_bindgen]
pub fn max_angle() -> f64 {
    0.5 * PI
}
