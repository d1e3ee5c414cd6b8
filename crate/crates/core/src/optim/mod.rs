//! Losses, the Adam optimizer, pose refinement and the avatar training loop.

mod adam;
mod loss;
mod pose;
mod train;

pub use adam::{adam_step, AdamState, BETA1, BETA2, EPSILON};
pub use loss::{perceptual_proxy, render_loss, FeatureDistance, GradientL1Proxy, LossWeights, RenderLoss};
pub use pose::{joint_weights, pose_loss, refine_pose, silhouette_iou, PoseLoss, PoseObservation, PoseRefineConfig, PoseRefinement};
pub use train::{
    densify, evaluate_views, render_view, train_avatar, train_avatar_with, DensifyOutcome, LearningRates, LogEntry, TrainConfig,
    TrainOutcome, TrainView,
};
