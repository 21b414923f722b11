//! Floater suppression for Gaussian splat scenes.
//!
//! The crate bundles a small differentiable CPU splatting renderer, an
//! evidence ledger accumulated during training, the detail-aware pruning pass
//! that consumes it, an uncertainty-weighted monocular depth regularizer,
//! image-quality and cleanliness metrics, a desk-scale trainer and a labeled
//! synthetic scene generator used as the test substrate.

pub mod bundle;
pub mod config;
pub mod depth_reg;
pub mod error;
pub mod evidence;
pub mod image;
pub mod knn;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod pipeline;
pub mod plot;
pub mod ply;
pub mod pruning;
pub mod renderer;
pub mod sh;
pub mod ssim;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
