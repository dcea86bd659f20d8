//! Collaborative image + geometry classification of volumetric objects.
//!
//! A 3D CNN reads the masked voxel content of each sample while a point-cloud
//! GNN reads the surface geometry extracted from the same mask. Both branches
//! are trained jointly with a dual binary cross-entropy plus a symmetric KL
//! term that pulls their latent features together.
//!
//! Module map:
//! - [`autograd`]: reverse-mode differentiation over the primitives both branches need.
//! - [`data`]: synthetic cohorts, volume files, splits, rotations, DICE.
//! - [`geometry`]: marching cubes, point sampling, radius graphs, FPS pooling.
//! - [`prep`]: turns a volume sample into the CNN crop and the GNN point cloud.
//! - [`model`]: the two branches, parameters and checkpoints.
//! - [`collab`]: losses, Adam, the training loop, metrics, cross-validation.
//! - [`interpret`]: Grad-CAM, CAM-to-point projection, edge-mask explainer.

pub mod autograd;
pub mod collab;
pub mod data;
pub mod error;
pub mod geometry;
pub mod grid;
pub mod hash;
pub mod interpret;
pub mod model;
pub mod prep;
pub mod rng;

pub use error::{Error, Result};
