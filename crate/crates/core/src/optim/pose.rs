//! Refining joint rotations against observed normals and silhouettes.

use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamState};
use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::image::Plane;
use crate::math::Vec3;
use crate::mesh::{compare_normal_maps, rasterize_mesh, NormalMap};
use crate::par::par_map;
use crate::skeleton::{deform_mesh, Pose, SkeletonAsset};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoseRefineConfig {
    /// Silhouette weight.
    pub lambda1: f64,
    /// Weight of the pull toward the initial pose.
    pub lambda2: f64,
    pub omega_decay: f64,
    /// Central-difference step per rotation coordinate (radians).
    pub fd_step: f64,
    pub adam_lr: f64,
    pub max_iters: usize,
    /// Stop once the best loss improved by less than this fraction over the
    /// last `patience` iterations.
    pub converge_tol: f64,
    pub patience: usize,
}

impl Default for PoseRefineConfig {
    fn default() -> Self {
        PoseRefineConfig {
            lambda1: 5.0,
            lambda2: 0.5,
            omega_decay: 0.9,
            fd_step: 1e-3,
            adam_lr: 0.01,
            max_iters: 100,
            converge_tol: 1e-5,
            patience: 10,
        }
    }
}

impl PoseRefineConfig {
    pub fn validate(&self) -> Result<()> {
        let weights = [self.lambda1, self.lambda2, self.adam_lr, self.converge_tol];
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Validation("pose refinement weights must be finite and non-negative".into()));
        }
        if !(self.fd_step > 0.0 && self.fd_step.is_finite()) {
            return Err(Error::Validation("fd_step must be positive".into()));
        }
        if self.patience == 0 {
            return Err(Error::Validation("patience must be at least 1".into()));
        }
        if !(self.omega_decay > 0.0 && self.omega_decay <= 1.0) {
            return Err(Error::Validation("omega_decay must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

/// ω_i = decay^depth(i), so joints far from the root count less.
pub fn joint_weights(asset: &SkeletonAsset, decay: f64) -> Result<Vec<f64>> {
    if !(decay > 0.0 && decay <= 1.0) {
        return Err(Error::arg(format!("joint weight decay {decay} outside (0, 1]")));
    }
    Ok(asset.depths().iter().map(|&d| decay.powi(d as i32)).collect())
}

/// What one frame shows of the subject.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseObservation {
    pub camera: Camera,
    pub silhouette: Plane,
    /// Camera-space normals; without them the normal term is zero.
    pub normals: Option<NormalMap>,
}

impl PoseObservation {
    fn validate(&self) -> Result<()> {
        let (w, h) = (self.camera.width, self.camera.height);
        if self.silhouette.width != w || self.silhouette.height != h {
            return Err(Error::arg(format!(
                "silhouette is {}x{}, camera renders {w}x{h}",
                self.silhouette.width, self.silhouette.height
            )));
        }
        if let Some(n) = &self.normals {
            if n.width != w || n.height != h {
                return Err(Error::arg(format!("normal map is {}x{}, camera renders {w}x{h}", n.width, n.height)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseLoss {
    pub total: f64,
    pub normal: f64,
    pub silhouette: f64,
    pub regular: f64,
}

/// L = L_normal + λ₁·L_silhouette + λ₂·Σᵢ ωᵢ‖θᵢ − θᵢ⁰‖₁.
pub fn pose_loss(
    asset: &SkeletonAsset,
    pose: &Pose,
    initial: &Pose,
    obs: &PoseObservation,
    config: &PoseRefineConfig,
) -> Result<PoseLoss> {
    obs.validate()?;
    if initial.joint_count() != pose.joint_count() {
        return Err(Error::arg(format!(
            "initial pose has {} joints, pose has {}",
            initial.joint_count(),
            pose.joint_count()
        )));
    }
    let mesh = deform_mesh(asset, pose)?;
    let (normals, sil) = rasterize_mesh(&mesh, &obs.camera);
    let normal = match &obs.normals {
        Some(pred) => compare_normal_maps(&normals, pred)?,
        None => 0.0,
    };
    let silhouette = sil.data.iter().zip(&obs.silhouette.data).map(|(a, b)| (a - b).abs()).sum::<f64>()
        / sil.data.len().max(1) as f64;
    let omega = joint_weights(asset, config.omega_decay)?;
    let regular = omega
        .iter()
        .zip(pose.rotations().iter().zip(initial.rotations()))
        .map(|(w, (a, b))| w * (a - b).abs().sum())
        .sum::<f64>();
    Ok(PoseLoss {
        total: normal + config.lambda1 * silhouette + config.lambda2 * regular,
        normal,
        silhouette,
        regular,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseRefinement {
    /// The lowest-loss pose visited, never worse than the input.
    pub pose: Pose,
    pub initial_loss: PoseLoss,
    pub best_loss: PoseLoss,
    /// Best loss so far after each iteration.
    pub history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

fn with_rotations(template: &Pose, flat: &[f64]) -> Pose {
    let rot = flat.chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect();
    Pose::new(rot, template.root_translation())
}

/// Adam on joint rotations with central finite-difference gradients. The camera
/// and root translation stay fixed.
pub fn refine_pose(
    asset: &SkeletonAsset,
    initial: &Pose,
    obs: &PoseObservation,
    config: &PoseRefineConfig,
) -> Result<PoseRefinement> {
    config.validate()?;
    let eval = |flat: &[f64]| pose_loss(asset, &with_rotations(initial, flat), initial, obs, config);
    let initial_loss = eval(&initial.flat_rotations())?;
    if !initial_loss.total.is_finite() {
        return Err(Error::Validation("loss at the initial pose is not finite".into()));
    }
    let mut params = initial.flat_rotations();
    let mut state = AdamState::new(params.len());
    let mut best = (initial.clone(), initial_loss);
    let mut history = Vec::new();
    let mut converged = false;
    let h = config.fd_step;
    for _ in 0..config.max_iters {
        let grads = par_map(0..params.len(), |k| -> Result<f64> {
            let mut p = params.clone();
            p[k] += h;
            let up = eval(&p)?.total;
            p[k] -= 2.0 * h;
            let down = eval(&p)?.total;
            Ok((up - down) / (2.0 * h))
        })
        .into_iter()
        .collect::<Result<Vec<f64>>>()?;
        adam_step(&mut params, &grads, &mut state, config.adam_lr)?;
        let pose = with_rotations(initial, &params);
        // keep the wrapped form so later steps see what was evaluated
        params = pose.flat_rotations();
        let loss = pose_loss(asset, &pose, initial, obs, config)?;
        if loss.total < best.1.total {
            best = (pose, loss);
        }
        history.push(best.1.total);
        // finite differences of a pixelated loss are noisy, so progress is
        // judged on the best loss over a window rather than step to step
        let k = history.len();
        if k >= config.patience {
            let then = if k == config.patience { initial_loss.total } else { history[k - 1 - config.patience] };
            if then - best.1.total <= config.converge_tol * then.abs() {
                converged = true;
                break;
            }
        }
    }
    Ok(PoseRefinement {
        pose: best.0,
        initial_loss,
        best_loss: best.1,
        iterations: history.len(),
        history,
        converged,
    })
}

/// Intersection over union of two masks thresholded at one half.
pub fn silhouette_iou(a: &Plane, b: &Plane) -> Result<f64> {
    a.check_same_size(b)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (x, y) in a.data.iter().zip(&b.data) {
        let (p, q) = (*x >= 0.5, *y >= 0.5);
        inter += (p && q) as usize;
        union += (p || q) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{arm_camera, two_link_arm};

    fn chain() -> SkeletonAsset {
        two_link_arm().unwrap()
    }

    fn observation(asset: &SkeletonAsset, pose: &Pose) -> PoseObservation {
        let camera = arm_camera(48);
        let (normals, silhouette) = rasterize_mesh(&deform_mesh(asset, pose).unwrap(), &camera);
        PoseObservation {
            camera,
            silhouette,
            normals: Some(normals),
        }
    }

    #[test]
    fn weights_decay_with_depth() {
        let asset = chain();
        assert_eq!(joint_weights(&asset, 1.0).unwrap(), vec![1.0; asset.joint_count()]);
        let w = joint_weights(&asset, 0.9).unwrap();
        let expected: Vec<f64> = asset.depths().iter().map(|&d| 0.9f64.powi(d as i32)).collect();
        assert_eq!(w, expected);
        assert_eq!(w[0], 1.0);
        assert!(joint_weights(&asset, 0.0).is_err());
    }

    #[test]
    fn self_consistent_pose_has_zero_loss() {
        let asset = chain();
        let pose = Pose::new(vec![Vec3::zeros(), Vec3::new(0.0, 0.0, 0.4)], Vec3::zeros());
        let obs = observation(&asset, &pose);
        let l = pose_loss(&asset, &pose, &pose, &obs, &PoseRefineConfig::default()).unwrap();
        assert!(l.total.abs() < 1e-6, "{l:?}");
    }

    #[test]
    fn loss_is_linear_in_the_weights() {
        let asset = chain();
        let truth = Pose::new(vec![Vec3::zeros(), Vec3::new(0.0, 0.0, 0.4)], Vec3::zeros());
        let obs = observation(&asset, &truth);
        let pose = Pose::new(vec![Vec3::new(0.0, 0.0, 0.1), Vec3::new(0.0, 0.0, 0.2)], Vec3::zeros());
        let init = Pose::zero(2);
        let base = pose_loss(&asset, &pose, &init, &obs, &PoseRefineConfig::default()).unwrap();
        for (l1, l2) in [(0.0, 0.0), (1.0, 3.0), (7.5, 0.25)] {
            let cfg = PoseRefineConfig {
                lambda1: l1,
                lambda2: l2,
                ..Default::default()
            };
            let l = pose_loss(&asset, &pose, &init, &obs, &cfg).unwrap();
            let expected = base.normal + l1 * base.silhouette + l2 * base.regular;
            assert!((l.total - expected).abs() < 1e-12);
            if l1 == 0.0 && l2 == 0.0 {
                assert_eq!(l.total, l.normal);
            }
        }
    }

    #[test]
    fn regularizer_weights_deep_joints_less() {
        // root -> a -> b with b at depth two
        let base = chain();
        let asset = SkeletonAsset::new(
            vec!["root".to_string(), "a".into(), "b".into()],
            vec![None, Some(0), Some(1)],
            vec![crate::math::Mat3::identity(); 3],
            vec![Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0), Vec3::new(2.0, 0.0, 0.0)],
            base.vertices.clone(),
            base.faces.clone(),
            base.skin_weights.clone(),
        )
        .unwrap();
        let init = Pose::zero(3);
        let mut pose = init.clone();
        pose.set_rotation(2, Vec3::new(0.0, 0.0, 0.1));
        let obs = observation(&asset, &init);
        let l = pose_loss(&asset, &pose, &init, &obs, &PoseRefineConfig::default()).unwrap();
        assert!((0.5 * l.regular - 0.5 * 0.81 * 0.1).abs() < 1e-12);
    }

    #[test]
    fn optimal_pose_is_returned_unchanged() {
        let asset = chain();
        let pose = Pose::new(vec![Vec3::zeros(), Vec3::new(0.0, 0.0, 0.3)], Vec3::zeros());
        let obs = observation(&asset, &pose);
        let r = refine_pose(&asset, &pose, &obs, &PoseRefineConfig::default()).unwrap();
        assert_eq!(r.pose, pose);
        assert!(r.converged);
    }

    #[test]
    fn best_loss_never_increases() {
        let asset = chain();
        let truth = Pose::new(vec![Vec3::zeros(), Vec3::new(0.0, 0.0, 0.5)], Vec3::zeros());
        let obs = observation(&asset, &truth);
        let start = Pose::new(vec![Vec3::zeros(), Vec3::new(0.0, 0.0, 0.2)], Vec3::zeros());
        let cfg = PoseRefineConfig {
            max_iters: 30,
            ..Default::default()
        };
        let r = refine_pose(&asset, &start, &obs, &cfg).unwrap();
        assert!(r.history.windows(2).all(|w| w[1] <= w[0]));
        assert!(r.best_loss.total <= r.initial_loss.total);
        assert!(r.best_loss.total < r.initial_loss.total);
    }

    #[test]
    fn mismatched_observation_is_rejected() {
        let asset = chain();
        let pose = Pose::zero(2);
        let mut obs = observation(&asset, &pose);
        obs.silhouette = Plane::new(10, 10);
        assert!(pose_loss(&asset, &pose, &pose, &obs, &PoseRefineConfig::default()).is_err());
    }

    #[test]
    fn iou_counts_overlap() {
        let mut a = Plane::new(4, 1);
        let mut b = Plane::new(4, 1);
        a.data = vec![1.0, 1.0, 0.0, 0.0];
        b.data = vec![0.0, 1.0, 1.0, 0.0];
        assert!((silhouette_iou(&a, &b).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }
}
