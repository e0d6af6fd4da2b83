//! Spatio-temporal equivariant self-supervised pre-training for LiDAR point
//! clouds.
//!
//! A sparse voxel encoder is trained jointly with
//! - a point-level contrastive loss between two rigidly augmented views,
//! - an n-way classification of the applied discrete rotation, and
//! - a flow equivariance loss: the online network's features of frame `t`
//!   must predict the EMA target's features of frame `t - 1` warped forward
//!   along the scene flow.
//!
//! See the `examples/` directory of this crate for one runnable program per
//! capability.

pub mod cli;
pub mod data;
pub mod error;
pub mod flow;
pub mod geom;
pub mod loss;
pub mod net;
pub mod rng;
pub mod train;
pub mod voxel;

pub use error::{Error, Result};
