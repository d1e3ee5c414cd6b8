//! Pinhole camera with world-to-camera extrinsics.
//!
//! Camera space is x right, y down, z forward. Pixel (i, j) has its center at
//! (i + 0.5, j + 0.5).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{Mat3, Vec3};

#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// Rotation block of the world-to-camera transform.
    pub rotation: Mat3,
    /// Translation block of the world-to-camera transform.
    pub translation: Vec3,
    pub near: f64,
    pub far: f64,
}

impl Camera {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
        rotation: Mat3,
        translation: Vec3,
        near: f64,
        far: f64,
    ) -> Result<Self> {
        let cam = Camera {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            rotation,
            translation,
            near,
            far,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::Validation("focal lengths must be positive".into()));
        }
        if !(self.near > 0.0 && self.near < self.far) {
            return Err(Error::Validation("need 0 < near < far".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Validation("image size must be non-zero".into()));
        }
        let ortho = (self.rotation * self.rotation.transpose() - Mat3::identity()).abs().max();
        if ortho > 1e-6 || self.rotation.determinant() < 0.0 {
            return Err(Error::Validation("extrinsic rotation is not a rotation".into()));
        }
        Ok(())
    }

    /// Camera at `eye` looking at `target`; `up` maps to image-up.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3, focal: f64, width: usize, height: usize) -> Self {
        let z = (target - eye).normalize();
        let y = -(up - z * up.dot(&z)).normalize();
        let x = y.cross(&z);
        let rotation = Mat3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        Camera {
            fx: focal,
            fy: focal,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
            rotation,
            translation: -(rotation * eye),
            near: 0.01,
            far: 100.0,
        }
    }

    pub fn to_camera(&self, world: &Vec3) -> Vec3 {
        self.rotation * world + self.translation
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vec3 {
        -(self.rotation.transpose() * self.translation)
    }

    /// Screen position of a camera-space point.
    pub fn project(&self, t: &Vec3) -> (f64, f64) {
        (self.fx * t.x / t.z + self.cx, self.fy * t.y / t.z + self.cy)
    }

    /// Same camera at an integer supersampling factor.
    pub fn scaled(&self, factor: usize) -> Camera {
        let f = factor as f64;
        Camera {
            fx: self.fx * f,
            fy: self.fy * f,
            cx: self.cx * f,
            cy: self.cy * f,
            width: self.width * factor,
            height: self.height * factor,
            ..self.clone()
        }
    }
}

/// On-disk form of a camera (rows of the rotation matrix).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct CameraSpec {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
    pub near: f64,
    pub far: f64,
}

impl From<&Camera> for CameraSpec {
    fn from(c: &Camera) -> Self {
        let r = &c.rotation;
        CameraSpec {
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            width: c.width,
            height: c.height,
            rotation: [
                [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
                [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
                [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
            ],
            translation: [c.translation.x, c.translation.y, c.translation.z],
            near: c.near,
            far: c.far,
        }
    }
}

impl TryFrom<CameraSpec> for Camera {
    type Error = Error;

    fn try_from(s: CameraSpec) -> Result<Self> {
        let r = s.rotation;
        Camera::new(
            s.fx,
            s.fy,
            s.cx,
            s.cy,
            s.width,
            s.height,
            Mat3::new(
                r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2],
            ),
            Vec3::from(s.translation),
            s.near,
            s.far,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn look_at_centers_target() {
        let cam = Camera::look_at(Vec3::new(3.0, 1.0, -4.0), Vec3::new(0.0, 1.0, 0.0), Vec3::y(), 50.0, 64, 48);
        cam.validate().unwrap();
        let t = cam.to_camera(&Vec3::new(0.0, 1.0, 0.0));
        assert!(t.x.abs() < 1e-12 && t.y.abs() < 1e-12 && t.z > 0.0);
        // world up projects toward smaller image rows
        let above = cam.to_camera(&Vec3::new(0.0, 2.0, 0.0));
        assert!(cam.project(&above).1 < cam.cy);
        assert!((cam.center() - Vec3::new(3.0, 1.0, -4.0)).norm() < 1e-12);
    }

    #[test]
    fn rejects_bad_intrinsics() {
        let cam = Camera::look_at(Vec3::new(0.0, 0.0, -3.0), Vec3::zeros(), Vec3::y(), 10.0, 8, 8);
        let mut bad = cam.clone();
        bad.fx = 0.0;
        assert!(bad.validate().is_err());
        let mut bad = cam;
        bad.near = 5.0;
        bad.far = 1.0;
        assert!(bad.validate().is_err());
    }
}
