//! Animatable 3D Gaussian avatars: skeleton-driven splats, a differentiable
//! tile rasterizer, surface-based point re-initialization and the training loop.

pub mod camera;
pub mod cli;
pub mod error;
pub mod gaussian;
pub mod image;
pub mod io;
pub mod kdtree;
pub mod math;
pub mod mesh;
pub mod metrics;
pub mod optim;
mod par;
pub mod reinit;
pub mod skeleton;
pub mod splat;
pub mod synth;

pub use error::{Error, Result};
