//! Fitting a canonical Gaussian cloud and residual network to posed images.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamState};
use super::loss::{render_loss, FeatureDistance, GradientL1Proxy, LossWeights};
use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::gaussian::{GaussianCloud, ParamGroup};
use crate::image::Image;
use crate::metrics::psnr;
use crate::reinit::{reinitialize, ReinitConfig, ReinitReport};
use crate::skeleton::{bind_skinning, blend_transform, deform_backward, deform_gaussians, forward_kinematics, Pose, ResidualNet, SkeletonAsset};
use crate::splat::{rasterize_backward, rasterize_forward, RenderConfig};

/// Constant Adam step sizes per parameter group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearningRates {
    pub position: f64,
    pub rotation: f64,
    pub scale: f64,
    pub opacity: f64,
    pub sh: f64,
    pub residual: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        LearningRates {
            position: 1.6e-4,
            rotation: 1e-3,
            scale: 5e-3,
            opacity: 5e-2,
            sh: 2.5e-3,
            residual: 1e-4,
        }
    }
}

impl LearningRates {
    pub fn for_group(&self, group: ParamGroup) -> f64 {
        match group {
            ParamGroup::Position => self.position,
            ParamGroup::Rotation => self.rotation,
            ParamGroup::Scale => self.scale,
            ParamGroup::Opacity => self.opacity,
            ParamGroup::Sh => self.sh,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Perceptual term weight.
    pub lambda3: f64,
    /// Residual offset regularizer weight.
    pub lambda4: f64,
    pub steps: usize,
    pub lr: LearningRates,
    pub densify_interval: usize,
    /// Densification stops after this step.
    pub densify_until: usize,
    /// Mean canonical positional-gradient norm that triggers clone or split.
    pub densify_grad_threshold: f64,
    /// Points whose largest standard deviation exceeds this are split, smaller ones cloned.
    pub densify_size_threshold: f64,
    pub prune_opacity_threshold: f64,
    /// Densification never grows the cloud past this many points.
    pub max_points: usize,
    /// Upper bound on every per-axis standard deviation.
    pub scale_cap: f64,
    pub reinit_steps: Vec<usize>,
    pub reinit: ReinitConfig,
    /// Joints blended per Gaussian when binding skin weights.
    pub skin_influences: usize,
    /// Held-out PSNR is logged every this many steps and after the last one.
    pub eval_interval: usize,
    pub seed: u64,
    /// Adds wall-clock times to the log, which makes it non-reproducible.
    pub log_elapsed: bool,
    pub render: RenderConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda3: 0.1,
            lambda4: 0.5,
            steps: 3000,
            lr: LearningRates::default(),
            densify_interval: 100,
            densify_until: 2500,
            densify_grad_threshold: 2e-4,
            densify_size_threshold: 0.05,
            prune_opacity_threshold: 0.005,
            max_points: 20_000,
            scale_cap: 0.5,
            reinit_steps: vec![1000, 2000],
            reinit: ReinitConfig::default(),
            skin_influences: 4,
            eval_interval: 500,
            seed: 0,
            log_elapsed: false,
            render: RenderConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Validation("steps must be at least 1".into()));
        }
        if let Some(&k) = self.reinit_steps.iter().find(|&&k| k == 0 || k >= self.steps) {
            return Err(Error::Validation(format!(
                "re-initialization step {k} outside [1, {})",
                self.steps
            )));
        }
        let non_negative = [
            self.lambda3,
            self.lambda4,
            self.lr.position,
            self.lr.rotation,
            self.lr.scale,
            self.lr.opacity,
            self.lr.sh,
            self.lr.residual,
            self.densify_grad_threshold,
            self.prune_opacity_threshold,
        ];
        if non_negative.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Validation("weights, learning rates and thresholds must be non-negative".into()));
        }
        if !(self.scale_cap > 0.0 && self.densify_size_threshold > 0.0) {
            return Err(Error::Validation("scale_cap and densify_size_threshold must be positive".into()));
        }
        if self.skin_influences == 0 {
            return Err(Error::Validation("skin_influences must be at least 1".into()));
        }
        Ok(())
    }

    fn weights(&self) -> LossWeights {
        LossWeights {
            lambda3: self.lambda3,
            lambda4: self.lambda4,
        }
    }
}

/// A training or evaluation view.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainView {
    pub image: Image,
    pub camera: Camera,
    pub pose: Pose,
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum LogEntry {
    Step {
        step: usize,
        frame: usize,
        loss: f64,
        l1: f64,
        perceptual: f64,
        residual: f64,
        cloud_size: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        elapsed_ms: Option<u64>,
    },
    Eval {
        step: usize,
        /// Mean PSNR over held-out views.
        psnr: f64,
        views: usize,
    },
    Densify {
        step: usize,
        cloned: usize,
        split: usize,
        pruned: usize,
        cloud_size: usize,
    },
    Reinit {
        step: usize,
        report: ReinitReport,
    },
}

/// What [`densify`] did, and where each surviving point came from.
#[derive(Debug, Clone, PartialEq)]
pub struct DensifyOutcome {
    pub cloned: usize,
    pub split: usize,
    pub pruned: usize,
    /// For each output point, the input point it continues unchanged; `None`
    /// for clones and split children.
    pub origin: Vec<Option<usize>>,
}

/// Clone or split points with a large mean positional gradient, then prune
/// transparent ones and reset the gradient statistics.
pub fn densify<R: Rng>(cloud: &mut GaussianCloud, config: &TrainConfig, rng: &mut R) -> Result<DensifyOutcome> {
    let n = cloud.len();
    let mut hot: Vec<(usize, f64)> = (0..n)
        .map(|i| (i, cloud.grad_accum[i].mean_norm()))
        .filter(|&(_, g)| g >= config.densify_grad_threshold && g > 0.0)
        .collect();
    let budget = config.max_points.saturating_sub(n);
    if hot.len() > budget {
        hot.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        hot.truncate(budget);
        hot.sort_by_key(|&(i, _)| i);
    }
    let mut origin: Vec<Option<usize>> = (0..n).map(Some).collect();
    let (mut cloned, mut split) = (0, 0);
    for &(i, _) in &hot {
        if cloud.points[i].s.max().exp() <= config.densify_size_threshold {
            cloud.clone_point(i)?;
            cloned += 1;
        } else {
            cloud.split_point(i, rng)?;
            origin[i] = None;
            split += 1;
        }
        origin.push(None);
    }
    let before = cloud.len();
    let keep = cloud.prune(config.prune_opacity_threshold);
    let origin = keep.iter().map(|&k| origin[k]).collect();
    cloud.reset_grad_accum();
    Ok(DensifyOutcome {
        cloned,
        split,
        pruned: before - cloud.len(),
        origin,
    })
}

/// Result of [`train_avatar`].
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub cloud: GaussianCloud,
    pub residual: ResidualNet,
    pub log: Vec<LogEntry>,
}

/// Renders `cloud` deformed into a view's pose.
pub fn render_view(
    asset: &SkeletonAsset,
    cloud: &GaussianCloud,
    residual: &mut ResidualNet,
    pose: &Pose,
    camera: &Camera,
    config: &TrainConfig,
) -> Result<Image> {
    if cloud.is_empty() {
        return Ok(Image::new(camera.width, camera.height));
    }
    let skin = bind_skinning(asset, &cloud.means(), config.skin_influences)?;
    let blended = blend_transform(&skin, &forward_kinematics(asset, pose)?);
    let (posed, _) = deform_gaussians(cloud, &blended, residual, pose)?;
    Ok(rasterize_forward(&posed, camera, &config.render).color)
}

/// Mean PSNR of `cloud` over `views`.
pub fn evaluate_views(
    asset: &SkeletonAsset,
    cloud: &GaussianCloud,
    residual: &mut ResidualNet,
    views: &[TrainView],
    config: &TrainConfig,
) -> Result<f64> {
    let mut total = 0.0;
    for v in views {
        let img = render_view(asset, cloud, residual, &v.pose, &v.camera, config)?;
        total += psnr(&img, &v.image)?;
    }
    Ok(total / views.len().max(1) as f64)
}

/// Optimizer state of the cloud groups, one buffer per group.
struct CloudAdam {
    states: Vec<(ParamGroup, AdamState)>,
}

impl CloudAdam {
    fn new(cloud: &GaussianCloud) -> Self {
        CloudAdam {
            states: ParamGroup::ALL
                .iter()
                .map(|&g| (g, AdamState::new(g.stride(cloud.sh_degree()) * cloud.len())))
                .collect(),
        }
    }

    fn remap(&mut self, cloud: &GaussianCloud, origin: &[Option<usize>]) {
        for (g, s) in &mut self.states {
            s.remap(g.stride(cloud.sh_degree()), origin);
        }
    }
}

/// The full loop: per step a seeded-shuffle frame, deformation, rendering,
/// loss, backpropagation and one Adam step per group; densification every
/// `densify_interval` steps and re-initialization at `reinit_steps`. Each log
/// entry is passed to `sink` as it is produced.
pub fn train_avatar(
    train: &[TrainView],
    held_out: &[TrainView],
    asset: &SkeletonAsset,
    initial: &GaussianCloud,
    config: &TrainConfig,
    sink: &mut dyn FnMut(&LogEntry) -> Result<()>,
) -> Result<TrainOutcome> {
    train_avatar_with(train, held_out, asset, initial, config, &GradientL1Proxy::default(), sink)
}

/// [`train_avatar`] with a caller-supplied perceptual term.
pub fn train_avatar_with(
    train: &[TrainView],
    held_out: &[TrainView],
    asset: &SkeletonAsset,
    initial: &GaussianCloud,
    config: &TrainConfig,
    perceptual: &dyn FeatureDistance,
    sink: &mut dyn FnMut(&LogEntry) -> Result<()>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::arg("no training views"));
    }
    if initial.is_empty() {
        return Err(Error::arg("initial cloud is empty"));
    }
    for v in train.iter().chain(held_out) {
        if v.image.width != v.camera.width || v.image.height != v.camera.height {
            return Err(Error::arg("view image size differs from its camera"));
        }
    }
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut cloud = initial.clone();
    let mut net = ResidualNet::new(asset.joint_count(), config.seed);
    let mut net_adam = AdamState::new(net.param_count());
    let mut adam = CloudAdam::new(&cloud);
    let mut log = Vec::new();
    let mut emit = |entry: LogEntry, log: &mut Vec<LogEntry>| -> Result<()> {
        sink(&entry)?;
        log.push(entry);
        Ok(())
    };
    let mut order: Vec<usize> = Vec::new();
    for step in 1..=config.steps {
        if order.is_empty() {
            order = (0..train.len()).collect();
            order.shuffle(&mut rng);
            order.reverse();
        }
        let frame = order.pop().expect("refilled above");
        let view = &train[frame];

        let skin = bind_skinning(asset, &cloud.means(), config.skin_influences)?;
        let blended = blend_transform(&skin, &forward_kinematics(asset, &view.pose)?);
        net.zero_grad();
        let (posed, tape) = deform_gaussians(&cloud, &blended, &mut net, &view.pose)?;
        let target = rasterize_forward(&posed, &view.camera, &config.render);
        let loss = render_loss(&target.color, &view.image, tape.offsets(), config.weights(), perceptual)?;
        if !loss.total.is_finite() {
            return Err(Error::NonFinite { step });
        }
        let posed_grads = rasterize_backward(&target, Some(&loss.d_color), None)?;
        let grads = deform_backward(&tape, &posed_grads, Some(&loss.d_offsets), &mut net)?;
        if !grads.is_finite() {
            return Err(Error::NonFinite { step });
        }
        for (i, acc) in cloud.grad_accum.iter_mut().enumerate() {
            if grads.visible[i] {
                acc.record(&grads.d_mu[i]);
            }
        }
        for (group, state) in &mut adam.states {
            let mut values = cloud.gather(*group);
            adam_step(&mut values, &grads.gather(*group, &cloud), state, config.lr.for_group(*group))?;
            cloud.scatter(*group, &values)?;
        }
        cloud.project_constraints(config.scale_cap);
        let mut weights = net.params();
        adam_step(&mut weights, net.grads(), &mut net_adam, config.lr.residual)?;
        net.set_params(&weights)?;

        emit(
            LogEntry::Step {
                step,
                frame,
                loss: loss.total,
                l1: loss.l1,
                perceptual: loss.perceptual,
                residual: loss.residual,
                cloud_size: cloud.len(),
                elapsed_ms: config.log_elapsed.then(|| started.elapsed().as_millis() as u64),
            },
            &mut log,
        )?;

        if config.densify_interval > 0 && step % config.densify_interval == 0 && step <= config.densify_until {
            let d = densify(&mut cloud, config, &mut rng)?;
            adam.remap(&cloud, &d.origin);
            if cloud.is_empty() {
                return Err(Error::State(format!("pruning emptied the cloud at step {step}")));
            }
            emit(
                LogEntry::Densify {
                    step,
                    cloned: d.cloned,
                    split: d.split,
                    pruned: d.pruned,
                    cloud_size: cloud.len(),
                },
                &mut log,
            )?;
        }
        if config.reinit_steps.contains(&step) {
            let rcfg = ReinitConfig {
                seed: config.seed.wrapping_add(step as u64),
                ..config.reinit.clone()
            };
            let (fresh, report) = reinitialize(&cloud, &rcfg).map_err(|e| Error::Stage {
                stage: "re-initialization",
                source: Box::new(e),
            })?;
            cloud = fresh;
            // point identities changed, so old moments mean nothing
            adam = CloudAdam::new(&cloud);
            emit(LogEntry::Reinit { step, report }, &mut log)?;
        }
        let eval_due = config.eval_interval > 0 && step % config.eval_interval == 0;
        if !held_out.is_empty() && (eval_due || step == config.steps) {
            let p = evaluate_views(asset, &cloud, &mut net, held_out, config)?;
            emit(
                LogEntry::Eval {
                    step,
                    psnr: p,
                    views: held_out.len(),
                },
                &mut log,
            )?;
        }
    }
    Ok(TrainOutcome {
        cloud,
        residual: net,
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::GaussianPoint;
    use crate::math::Vec3;
    use crate::skeleton::tests::chain;

    fn toy_view() -> (TrainView, GaussianCloud) {
        let camera = Camera::look_at(Vec3::new(0.0, 0.0, -3.0), Vec3::zeros(), Vec3::y(), 20.0, 16, 16);
        let truth = GaussianCloud::from_points(
            0,
            vec![
                GaussianPoint::isotropic(Vec3::new(-0.3, 0.1, 0.0), 0.25, 0.9, Vec3::new(0.9, 0.2, 0.1), 0),
                GaussianPoint::isotropic(Vec3::new(0.35, -0.2, 0.2), 0.2, 0.8, Vec3::new(0.1, 0.3, 0.9), 0),
            ],
        )
        .unwrap();
        let image = rasterize_forward(&crate::splat::PosedCloud::from_cloud(&truth), &camera, &RenderConfig::default()).color;
        let start = GaussianCloud::from_points(
            0,
            vec![
                GaussianPoint::isotropic(Vec3::new(-0.2, 0.0, 0.0), 0.3, 0.5, Vec3::repeat(0.5), 0),
                GaussianPoint::isotropic(Vec3::new(0.2, -0.1, 0.1), 0.3, 0.5, Vec3::repeat(0.5), 0),
            ],
        )
        .unwrap();
        (
            TrainView {
                image,
                camera,
                pose: Pose::zero(2),
            },
            start,
        )
    }

    fn toy_config(steps: usize) -> TrainConfig {
        TrainConfig {
            steps,
            reinit_steps: vec![],
            densify_interval: 0,
            lr: LearningRates {
                position: 1e-2,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    fn step_l1(log: &[LogEntry]) -> Vec<f64> {
        log.iter()
            .filter_map(|e| match e {
                LogEntry::Step { l1, .. } => Some(*l1),
                _ => None,
            })
            .collect()
    }

    #[test]
    fn toy_scene_loss_descends() {
        let (view, start) = toy_view();
        let out = train_avatar(&[view], &[], &chain(), &start, &toy_config(50), &mut |_| Ok(())).unwrap();
        let l1 = step_l1(&out.log);
        assert_eq!(l1.len(), 50);
        assert!(l1[49] < l1[0], "{} -> {}", l1[0], l1[49]);
    }

    #[test]
    fn identical_seeds_give_identical_logs() {
        let (view, start) = toy_view();
        let run = || {
            let mut cfg = toy_config(20);
            cfg.densify_interval = 5;
            cfg.densify_grad_threshold = 0.0;
            let out = train_avatar(&[view.clone()], &[view.clone()], &chain(), &start, &cfg, &mut |_| Ok(())).unwrap();
            (out.log, out.cloud)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn sink_sees_every_entry() {
        let (view, start) = toy_view();
        let mut seen = 0;
        let out = train_avatar(&[view.clone()], &[view], &chain(), &start, &toy_config(10), &mut |_| {
            seen += 1;
            Ok(())
        })
        .unwrap();
        assert_eq!(seen, out.log.len());
        assert!(matches!(out.log.last(), Some(LogEntry::Eval { step: 10, .. })));
    }

    #[test]
    fn densify_only_prunes_below_threshold() {
        let (_, mut cloud) = toy_view();
        cloud.points[1].eta = crate::math::logit(0.001);
        let cfg = TrainConfig::default();
        let d = densify(&mut cloud, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!((d.cloned, d.split, d.pruned), (0, 0, 1));
        assert_eq!(d.origin, vec![Some(0)]);
    }

    #[test]
    fn densify_clones_small_and_splits_large() {
        let (_, base) = toy_view();
        let cfg = TrainConfig::default();
        let hot = |cloud: &mut GaussianCloud| {
            cloud.grad_accum[0].record(&Vec3::new(1.0, 0.0, 0.0));
        };
        let mut small = base.clone();
        small.points[0].s = Vec3::repeat(0.01f64.ln());
        hot(&mut small);
        let d = densify(&mut small, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(small.len(), 3);
        assert_eq!((d.cloned, d.split), (1, 0));
        assert_eq!(d.origin, vec![Some(0), Some(1), None]);

        let mut large = base.clone();
        large.points[0].s = Vec3::repeat(0.3f64.ln());
        hot(&mut large);
        let d = densify(&mut large, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(large.len(), 3);
        assert_eq!((d.cloned, d.split), (0, 1));
        assert_eq!(d.origin, vec![None, Some(1), None]);
        assert!(large.grad_accum.iter().all(|a| a.count == 0));
    }

    #[test]
    fn reinit_step_is_logged_and_resets_cloud() {
        let camera = Camera::look_at(Vec3::new(0.0, 0.0, -4.0), Vec3::zeros(), Vec3::y(), 20.0, 16, 16);
        let pts = crate::reinit::tests::fibonacci_sphere(300, 1.0);
        let cloud = GaussianCloud::from_points(
            0,
            pts.iter()
                .map(|p| GaussianPoint::isotropic(*p, 0.08, 0.5, Vec3::new(0.6, 0.4, 0.2), 0))
                .collect(),
        )
        .unwrap();
        let image = rasterize_forward(&crate::splat::PosedCloud::from_cloud(&cloud), &camera, &RenderConfig::default()).color;
        let view = TrainView {
            image,
            camera,
            pose: Pose::zero(2),
        };
        let cfg = TrainConfig {
            steps: 4,
            reinit_steps: vec![2],
            densify_interval: 0,
            ..Default::default()
        };
        let out = train_avatar(&[view], &[], &chain(), &cloud, &cfg, &mut |_| Ok(())).unwrap();
        let report = out.log.iter().find_map(|e| match e {
            LogEntry::Reinit { step: 2, report } => Some(report.clone()),
            _ => None,
        });
        let report = report.expect("reinit logged at step 2");
        assert_eq!(report.old_count, 300);
        assert_eq!(out.cloud.len(), report.new_count);
    }

    #[test]
    fn bad_reinit_schedule_is_rejected() {
        let cfg = TrainConfig {
            steps: 10,
            reinit_steps: vec![10],
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn log_lines_round_trip_as_json() {
        let e = LogEntry::Step {
            step: 3,
            frame: 1,
            loss: 0.25,
            l1: 0.2,
            perceptual: 0.3,
            residual: 0.0,
            cloud_size: 10,
            elapsed_ms: None,
        };
        let line = serde_json::to_string(&e).unwrap();
        assert!(line.starts_with("{\"event\":\"step\""));
        assert!(!line.contains("elapsed"));
        assert_eq!(serde_json::from_str::<LogEntry>(&line).unwrap(), e);
    }
}
